use std::collections::HashSet;

use super::{HarnessError, Manifest};
use crate::audio::AudioClip;
use crate::features::{read_escf_file, ChannelStats, FeatureTensor, Featurizer};

/// Unstandardized segments of one clip plus its bookkeeping.
#[derive(Debug, Clone)]
pub struct ClipFeatures {
    pub clip_id: String,
    /// Original clip this one was derived from (itself when not augmented).
    pub source_id: String,
    pub class: usize,
    pub fold: usize,
    pub segments: Vec<FeatureTensor>,
}

impl ClipFeatures {
    pub fn is_original(&self) -> bool {
        self.clip_id == self.source_id
    }

    /// Segments after applying standardization statistics.
    pub fn standardized(&self, stats: &ChannelStats) -> Vec<FeatureTensor> {
        self.segments
            .iter()
            .map(|s| {
                let mut s = s.clone();
                stats.apply(&mut s);
                s
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub clips: Vec<ClipFeatures>,
    pub class_names: Vec<String>,
    pub folds: usize,
}

/// Training and validation clips for one held-out fold.
#[derive(Debug)]
pub struct FoldSplit<'a> {
    pub train: Vec<&'a ClipFeatures>,
    pub validation: Vec<&'a ClipFeatures>,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Loads the spectrogram files listed in a (featurized) manifest and
    /// segments them.
    pub fn from_escf_manifest(manifest: &Manifest, featurizer: &Featurizer) -> Result<Dataset, HarnessError> {
        let clips = manifest
            .rows
            .iter()
            .map(|row| {
                let path = manifest.resolve(row);
                if !path.is_file() {
                    return Err(HarnessError::MissingFeatures(path));
                }
                let (spec, _) = read_escf_file(&path).map_err(|e| HarnessError::Feature(path.clone(), e))?;
                if spec.band_type != featurizer.config.band_type {
                    return Err(HarnessError::Manifest(format!(
                        "{} holds {} features but {} were requested",
                        path.display(),
                        spec.band_type,
                        featurizer.config.band_type
                    )));
                }
                let clip_id = row.clip_id();
                let segments = featurizer
                    .tensors(&spec, &clip_id)
                    .map_err(|e| HarnessError::Feature(path.clone(), e))?;
                Ok(ClipFeatures {
                    clip_id,
                    source_id: row.source.clone(),
                    class: row.class,
                    fold: row.fold,
                    segments,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dataset {
            clips,
            class_names: manifest.class_names.clone(),
            folds: manifest.folds,
        })
    }

    /// Featurizes in-memory clips given as `(clip, class, fold)`.
    pub fn from_audio(
        clips: &[(AudioClip, usize, usize)],
        class_names: Vec<String>,
        featurizer: &Featurizer,
    ) -> Result<Dataset, HarnessError> {
        let folds = clips.iter().map(|c| c.2).max().unwrap_or(0);
        let clips = clips
            .iter()
            .map(|(clip, class, fold)| {
                let segments = featurizer
                    .featurize(clip)
                    .map_err(|e| HarnessError::Feature(clip.source_id.clone().into(), e))?;
                Ok(ClipFeatures {
                    clip_id: clip.source_id.clone(),
                    source_id: clip.source_id.clone(),
                    class: *class,
                    fold: *fold,
                    segments,
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        Ok(Dataset {
            clips,
            class_names,
            folds,
        })
    }

    /// Validation is the held-out fold's original clips; training is every
    /// clip of the other folds whose source is not a validation clip.
    pub fn split(&self, held_out: usize) -> Result<FoldSplit<'_>, HarnessError> {
        if held_out < 1 || held_out > self.folds {
            return Err(HarnessError::FoldOutOfRange {
                fold: held_out,
                folds: self.folds,
            });
        }
        let validation: Vec<&ClipFeatures> = self
            .clips
            .iter()
            .filter(|c| c.fold == held_out && c.is_original())
            .collect();
        let held: HashSet<&str> = self
            .clips
            .iter()
            .filter(|c| c.fold == held_out)
            .map(|c| c.source_id.as_str())
            .collect();
        let train = self
            .clips
            .iter()
            .filter(|c| c.fold != held_out && !held.contains(c.source_id.as_str()))
            .collect();
        Ok(FoldSplit { train, validation })
    }
}

impl FoldSplit<'_> {
    /// Source ids present on both sides; empty for a leak-free split.
    pub fn leaked_sources(&self) -> Vec<String> {
        let val: HashSet<&str> = self.validation.iter().map(|c| c.source_id.as_str()).collect();
        let mut leaked: Vec<String> = self
            .train
            .iter()
            .filter(|c| val.contains(c.source_id.as_str()))
            .map(|c| c.source_id.clone())
            .collect();
        leaked.sort();
        leaked.dedup();
        leaked
    }
}
