use std::io::Write;

use super::HarnessError;
use crate::features::{FeatureTensor, CHANNELS, N_BANDS, SEGMENT_FRAMES};
use crate::model::Model;
use crate::nn::Tensor;

/// Segments per forward pass at evaluation time.
const EVAL_CHUNK: usize = 16;

/// Eval-mode softmax of every segment, in order.
pub fn segment_probabilities(model: &mut Model, segments: &[FeatureTensor]) -> Result<Vec<Vec<f64>>, HarnessError> {
    let mut out = Vec::with_capacity(segments.len());
    let item = N_BANDS * SEGMENT_FRAMES * CHANNELS;
    for chunk in segments.chunks(EVAL_CHUNK) {
        let mut data = Vec::with_capacity(chunk.len() * item);
        for s in chunk {
            data.extend_from_slice(&s.values);
        }
        let batch = Tensor::from_vec(&[chunk.len(), N_BANDS, SEGMENT_FRAMES, CHANNELS], data)?;
        let probs = model.predict_proba(&batch)?;
        out.extend(
            probs
                .data()
                .chunks_exact(model.n_classes)
                .map(|row| row.iter().map(|&p| p as f64).collect()),
        );
    }
    Ok(out)
}

/// Clip posterior: arithmetic mean of the segment softmax vectors.
pub fn predict_clip(model: &mut Model, segments: &[FeatureTensor]) -> Result<Vec<f64>, HarnessError> {
    if segments.is_empty() {
        return Err(HarnessError::NoSegments(String::new()));
    }
    Ok(mean_probabilities(&segment_probabilities(model, segments)?))
}

pub fn mean_probabilities(per_segment: &[Vec<f64>]) -> Vec<f64> {
    let n = per_segment.len() as f64;
    let k = per_segment.first().map_or(0, Vec::len);
    (0..k)
        .map(|c| per_segment.iter().map(|p| p[c]).sum::<f64>() / n)
        .collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipPrediction {
    pub clip_id: String,
    pub true_class: usize,
    pub predicted: usize,
    pub probs: Vec<f64>,
}

/// Clip-level predictions with their confusion matrix (rows are true
/// classes, columns predictions).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_classes: usize,
    pub predictions: Vec<ClipPrediction>,
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
}

impl EvalReport {
    pub fn new(n_classes: usize, predictions: Vec<ClipPrediction>) -> EvalReport {
        let mut confusion = vec![vec![0u64; n_classes]; n_classes];
        for p in &predictions {
            confusion[p.true_class][p.predicted] += 1;
        }
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..n_classes).map(|i| confusion[i][i]).sum();
        let accuracy = if total == 0 { 0.0 } else { trace as f64 / total as f64 };
        EvalReport {
            n_classes,
            predictions,
            confusion,
            accuracy,
        }
    }

    /// Accuracy counted straight from the predictions.
    pub fn prediction_accuracy(&self) -> f64 {
        if self.predictions.is_empty() {
            return 0.0;
        }
        let hits = self.predictions.iter().filter(|p| p.predicted == p.true_class).count();
        hits as f64 / self.predictions.len() as f64
    }

    /// `clip_id,true_label,predicted_label,prob_0..prob_{n-1}`
    pub fn write_predictions_csv<W: Write>(&self, w: W, class_names: &[String]) -> Result<(), HarnessError> {
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["clip_id".to_string(), "true_label".into(), "predicted_label".into()];
        header.extend((0..self.n_classes).map(|k| format!("prob_{k}")));
        csv.write_record(&header)?;
        for p in &self.predictions {
            let mut rec = vec![
                p.clip_id.clone(),
                class_names[p.true_class].clone(),
                class_names[p.predicted].clone(),
            ];
            rec.extend(p.probs.iter().map(f64::to_string));
            csv.write_record(&rec)?;
        }
        csv.flush()?;
        Ok(())
    }

    /// Confusion matrix with a leading `true_label` column.
    pub fn write_confusion_csv<W: Write>(&self, w: W, class_names: &[String]) -> Result<(), HarnessError> {
        write_matrix_csv(
            w,
            class_names,
            &self
                .confusion
                .iter()
                .map(|r| r.iter().map(|&v| v as f64).collect())
                .collect::<Vec<_>>(),
        )
    }
}

pub fn write_matrix_csv<W: Write>(w: W, class_names: &[String], m: &[Vec<f64>]) -> Result<(), HarnessError> {
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["true_label".to_string()];
    header.extend(class_names.iter().cloned());
    csv.write_record(&header)?;
    for (name, row) in class_names.iter().zip(m) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(f64::to_string));
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

/// Row-normalized confusion of `a` minus that of `b`. Negative entries are
/// confusions that `a` makes less often than `b`.
pub fn confusion_diff(a: &EvalReport, b: &EvalReport) -> Result<Vec<Vec<f64>>, HarnessError> {
    if a.n_classes != b.n_classes {
        return Err(HarnessError::ClassMismatch(a.n_classes, b.n_classes));
    }
    let norm = |row: &[u64]| -> Vec<f64> {
        let total: u64 = row.iter().sum();
        row.iter()
            .map(|&v| if total == 0 { 0.0 } else { v as f64 / total as f64 })
            .collect()
    };
    Ok(a.confusion
        .iter()
        .zip(&b.confusion)
        .map(|(ra, rb)| norm(ra).iter().zip(norm(rb)).map(|(x, y)| x - y).collect())
        .collect())
}
