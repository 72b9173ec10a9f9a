//! Mixup: convex combinations of training pairs and their one-hot labels
//! with weights drawn from `Beta(alpha, alpha)`.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use thiserror::Error;

use crate::nn::Tensor;

pub const DEFAULT_ALPHA: f64 = 0.2;

/// Grid evaluated by the alpha sweep.
pub const ALPHA_GRID: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Error, PartialEq)]
pub enum MixupError {
    #[error("cannot sample a batch from an empty dataset")]
    EmptyDataset,
    #[error("mixup alpha must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("item {index} has {found} values, expected {expected}")]
    ItemShape {
        index: usize,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixupConfig {
    pub alpha: f64,
    pub enabled: bool,
}

impl MixupConfig {
    pub fn new(alpha: f64) -> Result<Self, MixupError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(MixupError::InvalidAlpha(alpha));
        }
        Ok(MixupConfig { alpha, enabled: true })
    }

    pub fn disabled() -> Self {
        MixupConfig {
            alpha: DEFAULT_ALPHA,
            enabled: false,
        }
    }
}

impl Default for MixupConfig {
    fn default() -> Self {
        MixupConfig {
            alpha: DEFAULT_ALPHA,
            enabled: true,
        }
    }
}

/// A mixed mini-batch. `pairs[s] = (i, j)` and `lambdas[s]` record how
/// slot `s` was formed: `lambda * x_i + (1 - lambda) * x_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixupBatch {
    pub inputs: Tensor<f32>,
    pub labels: Tensor<f32>,
    pub lambdas: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
}

/// One `Beta(alpha, alpha)` draw as `g1 / (g1 + g2)` with
/// `g1, g2 ~ Gamma(alpha, 1)`.
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    loop {
        let (g1, g2): (f64, f64) = (gamma.sample(rng), gamma.sample(rng));
        // small alpha can underflow both draws to zero
        if g1 + g2 > 0.0 {
            return (g1 / (g1 + g2)).clamp(0.0, 1.0);
        }
    }
}

/// Read-only view of labeled training items that all share one shape.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSet<'a, S> {
    pub items: &'a [S],
    pub labels: &'a [usize],
    pub item_shape: &'a [usize],
    pub n_classes: usize,
}

impl<S: AsRef<[f32]>> LabeledSet<'_, S> {
    fn validate(&self) -> Result<(), MixupError> {
        if self.items.is_empty() {
            return Err(MixupError::EmptyDataset);
        }
        if self.n_classes < 2 {
            return Err(MixupError::TooFewClasses(self.n_classes));
        }
        assert_eq!(self.items.len(), self.labels.len(), "one label per item");
        if let Some(&label) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(MixupError::LabelOutOfRange {
                label,
                n_classes: self.n_classes,
            });
        }
        let expected: usize = self.item_shape.iter().product();
        for (index, item) in self.items.iter().enumerate() {
            let found = item.as_ref().len();
            if found != expected {
                return Err(MixupError::ItemShape { index, expected, found });
            }
        }
        Ok(())
    }
}

/// Builds a batch of `batch_size` slots, each from a pair drawn uniformly
/// with replacement. With mixup disabled every slot is a plain uniform
/// draw with its one-hot label.
pub fn mix_batch<S: AsRef<[f32]>, R: Rng + ?Sized>(
    data: &LabeledSet<'_, S>,
    batch_size: usize,
    cfg: &MixupConfig,
    rng: &mut R,
) -> Result<MixupBatch, MixupError> {
    data.validate()?;
    let n = data.items.len();
    let firsts: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..n)).collect();
    mix_with_firsts(data, &firsts, cfg, rng)
}

/// Like [`mix_batch`] but with the first element of every pair given, so
/// a training epoch can walk a shuffled pass over the data while partners
/// are drawn uniformly.
pub fn mix_with_firsts<S: AsRef<[f32]>, R: Rng + ?Sized>(
    data: &LabeledSet<'_, S>,
    firsts: &[usize],
    cfg: &MixupConfig,
    rng: &mut R,
) -> Result<MixupBatch, MixupError> {
    data.validate()?;
    if cfg.enabled && !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
        return Err(MixupError::InvalidAlpha(cfg.alpha));
    }
    let n = data.items.len();
    let item_len: usize = data.item_shape.iter().product();
    let batch = firsts.len();
    let mut inputs = Vec::with_capacity(batch * item_len);
    let mut labels = vec![0.0f32; batch * data.n_classes];
    let mut lambdas = Vec::with_capacity(batch);
    let mut pairs = Vec::with_capacity(batch);
    for (slot, &i) in firsts.iter().enumerate() {
        let (j, lambda) = if cfg.enabled {
            let j = rng.gen_range(0..n);
            (j, sample_lambda(cfg.alpha, rng))
        } else {
            (i, 1.0)
        };
        let (xi, xj) = (data.items[i].as_ref(), data.items[j].as_ref());
        if lambda == 1.0 || i == j {
            inputs.extend_from_slice(xi);
        } else {
            let (a, b) = (lambda as f32, (1.0 - lambda) as f32);
            inputs.extend(xi.iter().zip(xj).map(|(&p, &q)| a * p + b * q));
        }
        let row = &mut labels[slot * data.n_classes..(slot + 1) * data.n_classes];
        let mut soft = vec![0.0f64; data.n_classes];
        soft[data.labels[i]] += lambda;
        soft[data.labels[j]] += 1.0 - lambda;
        for (r, s) in row.iter_mut().zip(&soft) {
            *r = *s as f32;
        }
        lambdas.push(lambda);
        pairs.push((i, j));
    }
    let mut shape = vec![batch];
    shape.extend_from_slice(data.item_shape);
    Ok(MixupBatch {
        inputs: Tensor::from_vec(&shape, inputs).expect("sizes match"),
        labels: Tensor::from_vec(&[batch, data.n_classes], labels).expect("sizes match"),
        lambdas,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> (Vec<Vec<f32>>, Vec<usize>) {
        let items = (0..6)
            .map(|k| (0..4).map(|v| (k * 10 + v) as f32 - 20.0).collect())
            .collect();
        (items, vec![0, 1, 2, 0, 1, 2])
    }

    #[test]
    fn lambda_draws_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for alpha in [0.05, 0.2, 1.0, 5.0] {
            for _ in 0..2000 {
                let l = sample_lambda(alpha, &mut rng);
                assert!((0.0..=1.0).contains(&l));
            }
        }
    }

    /// Mass of Beta(0.2, 0.2) outside [0.1, 0.9] by midpoint quadrature
    /// after substituting x = u^5, which removes the endpoint singularity.
    fn beta_tail_mass() -> f64 {
        let f = |u: f64| 5.0 * (1.0 - u.powi(5)).powf(-0.8);
        let integral = |a: f64| {
            let (hi, n) = (a.powf(0.2), 100_000);
            let h = hi / n as f64;
            (0..n).map(|i| f((i as f64 + 0.5) * h)).sum::<f64>() * h
        };
        integral(0.1) / integral(0.5)
    }

    #[test]
    fn beta_point_two_is_u_shaped() {
        let oracle = beta_tail_mass();
        assert!(oracle > 0.55, "oracle {oracle}");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws: Vec<f64> = (0..10_000).map(|_| sample_lambda(0.2, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
        let tail = draws.iter().filter(|&&l| !(0.1..=0.9).contains(&l)).count() as f64 / 1e4;
        assert!(tail > 0.55);
        assert!((tail - oracle).abs() < 0.02, "tail {tail} vs {oracle}");
    }

    #[test]
    fn labels_on_simplex_with_two_nonzeros() {
        let (items, labels) = toy();
        let set = LabeledSet {
            items: &items,
            labels: &labels,
            item_shape: &[2, 2],
            n_classes: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = mix_batch(&set, 200, &MixupConfig::default(), &mut rng).unwrap();
        assert_eq!(b.inputs.shape(), &[200, 2, 2]);
        for (s, row) in b.labels.data().chunks_exact(3).enumerate() {
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(row.iter().filter(|&&v| v != 0.0).count() <= 2);
            // inputs stay inside the elementwise envelope of the pair
            let (i, j) = b.pairs[s];
            for (k, &v) in b.inputs.item(s).iter().enumerate() {
                let (lo, hi) = (items[i][k].min(items[j][k]), items[i][k].max(items[j][k]));
                assert!(v >= lo - 1e-5 && v <= hi + 1e-5);
            }
        }
    }

    #[test]
    fn worked_example_soft_label() {
        let items = vec![vec![1.0f32, 0.0], vec![0.0, 0.0], vec![0.0, 1.0]];
        let labels = [0, 1, 2];
        let set = LabeledSet {
            items: &items,
            labels: &labels,
            item_shape: &[2],
            n_classes: 3,
        };
        // find a seed whose first slot pairs 0 with 2, then check the label
        for seed in 0..500 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = mix_with_firsts(&set, &[0], &MixupConfig::default(), &mut rng).unwrap();
            if b.pairs[0] == (0, 2) {
                let l = b.lambdas[0];
                let want = [l as f32, 0.0, (1.0 - l) as f32];
                assert_eq!(b.labels.data(), &want);
                assert_eq!(b.inputs.data(), &[l as f32, (1.0 - l) as f32]);
                return;
            }
        }
        panic!("no seed produced the pair");
    }

    #[test]
    fn disabled_is_plain_sampling() {
        let (items, labels) = toy();
        let set = LabeledSet {
            items: &items,
            labels: &labels,
            item_shape: &[4],
            n_classes: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = mix_batch(&set, 50, &MixupConfig::disabled(), &mut rng).unwrap();
        for s in 0..50 {
            let (i, j) = b.pairs[s];
            assert_eq!(i, j);
            assert_eq!(b.lambdas[s], 1.0);
            assert_eq!(b.inputs.item(s), items[i].as_slice());
            let row = &b.labels.data()[s * 3..s * 3 + 3];
            let mut onehot = [0.0f32; 3];
            onehot[labels[i]] = 1.0;
            assert_eq!(row, &onehot);
        }
    }

    #[test]
    fn self_pair_returns_source() {
        let items = vec![vec![0.3f32, -0.7, 0.1]];
        let labels = [1];
        let set = LabeledSet {
            items: &items,
            labels: &labels,
            item_shape: &[3],
            n_classes: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = mix_batch(&set, 20, &MixupConfig::default(), &mut rng).unwrap();
        for s in 0..20 {
            assert_eq!(b.inputs.item(s), items[0].as_slice());
            assert_eq!(&b.labels.data()[s * 2..s * 2 + 2], &[0.0, 1.0]);
        }
    }

    #[test]
    fn same_seed_same_batch() {
        let (items, labels) = toy();
        let set = LabeledSet {
            items: &items,
            labels: &labels,
            item_shape: &[4],
            n_classes: 3,
        };
        let run = |seed| mix_batch(&set, 16, &MixupConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(run(9), run(9));
        assert_ne!(run(9).pairs, run(10).pairs);
    }

    #[test]
    fn errors() {
        let empty: Vec<Vec<f32>> = vec![];
        let set = LabeledSet {
            items: &empty,
            labels: &[],
            item_shape: &[1],
            n_classes: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            mix_batch(&set, 4, &MixupConfig::default(), &mut rng).unwrap_err(),
            MixupError::EmptyDataset
        );
        assert_eq!(MixupConfig::new(0.0).unwrap_err(), MixupError::InvalidAlpha(0.0));
        let items = vec![vec![0.0f32]];
        let set = LabeledSet {
            items: &items,
            labels: &[0],
            item_shape: &[1],
            n_classes: 1,
        };
        assert_eq!(
            mix_batch(&set, 4, &MixupConfig::default(), &mut rng).unwrap_err(),
            MixupError::TooFewClasses(1)
        );
    }
}
