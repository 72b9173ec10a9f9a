//! The two architectures under comparison: the proposed 8-conv network
//! with asymmetric kernels and pools, and a VGG-style counterpart of the
//! same depth using only 3x3 kernels and 2x2 pools.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;

use crate::nn::{
    read_checkpoint, softmax, write_checkpoint, CheckpointHeader, LayerSpec, Mode, Network, NnError, Scalar, Tensor,
};

/// (frequency bands, frames, channels)
pub const INPUT_SHAPE: [usize; 3] = [128, 128, 2];
pub const INIT_STD: f64 = 0.05;
pub const DROPOUT_RATE: f64 = 0.5;
pub const FC1_UNITS: usize = 512;
pub const CONV_FILTERS: [usize; 8] = [32, 32, 64, 64, 128, 128, 256, 256];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Proposed,
    Vgg10,
}

impl Architecture {
    pub fn tag(self) -> u8 {
        match self {
            Architecture::Proposed => 0,
            Architecture::Vgg10 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Architecture::Proposed),
            1 => Some(Architecture::Vgg10),
            _ => None,
        }
    }

    /// Kernel size of each of the eight convolutions.
    pub fn conv_kernels(self) -> [(usize, usize); 8] {
        match self {
            Architecture::Proposed => [(3, 7), (3, 5), (3, 1), (3, 1), (1, 5), (1, 5), (3, 3), (3, 3)],
            Architecture::Vgg10 => [(3, 3); 8],
        }
    }

    /// Pool size (== stride) after each pair of convolutions.
    pub fn pools(self) -> [(usize, usize); 4] {
        match self {
            Architecture::Proposed => [(4, 3), (4, 1), (1, 3), (2, 2)],
            Architecture::Vgg10 => [(2, 2); 4],
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Proposed => "proposed",
            Architecture::Vgg10 => "vgg10",
        })
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "proposed" => Ok(Architecture::Proposed),
            "vgg10" => Ok(Architecture::Vgg10),
            other => Err(format!("unknown architecture `{other}` (expected proposed|vgg10)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub n_classes: usize,
    pub init_std: f64,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(arch: Architecture, n_classes: usize) -> Self {
        ModelConfig {
            arch,
            n_classes,
            init_std: INIT_STD,
            dropout: DROPOUT_RATE,
        }
    }
}

/// Layer sequence: four blocks of (conv, BN, ReLU) x 2 + max-pool, then
/// FC1 + ReLU + dropout and the FC2 logits layer.
pub fn layer_specs(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let kernels = cfg.arch.conv_kernels();
    let pools = cfg.arch.pools();
    let mut specs = Vec::new();
    for (block, &pool) in pools.iter().enumerate() {
        for i in 0..2 {
            let idx = block * 2 + i;
            specs.push(LayerSpec::Conv2d {
                ksize: kernels[idx],
                filters: CONV_FILTERS[idx],
            });
            specs.push(LayerSpec::BatchNorm);
            specs.push(LayerSpec::Relu);
        }
        specs.push(LayerSpec::MaxPool {
            ksize: pool,
            stride: pool,
        });
    }
    specs.push(LayerSpec::Dense { units: FC1_UNITS });
    specs.push(LayerSpec::Relu);
    specs.push(LayerSpec::Dropout { rate: cfg.dropout });
    specs.push(LayerSpec::Dense { units: cfg.n_classes });
    specs
}

/// Index of the post-ReLU FC1 activation in [`layer_specs`].
pub const FC1_RELU_INDEX: usize = 4 * 7 + 1;

/// Indices of the layers whose outputs correspond to the rows of the
/// architecture table: each conv block's BN+ReLU output, each pool, FC1
/// and FC2.
pub fn table_row_indices() -> Vec<(&'static str, usize)> {
    let names = [
        ["Conv1", "Conv2", "Pool1"],
        ["Conv3", "Conv4", "Pool2"],
        ["Conv5", "Conv6", "Pool3"],
        ["Conv7", "Conv8", "Pool4"],
    ];
    let mut rows = Vec::new();
    for (block, n) in names.iter().enumerate() {
        let base = block * 7;
        rows.push((n[0], base + 2));
        rows.push((n[1], base + 5));
        rows.push((n[2], base + 6));
    }
    rows.push(("FC1", FC1_RELU_INDEX));
    rows.push(("FC2", FC1_RELU_INDEX + 2));
    rows
}

pub fn build_network<T: Scalar, R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Network<T>, NnError> {
    if cfg.n_classes < 2 {
        return Err(NnError::ShapeMismatch {
            expected: vec![2],
            found: vec![cfg.n_classes],
        });
    }
    Network::build(&INPUT_SHAPE, &layer_specs(cfg), cfg.init_std, rng)
}

/// A trained or freshly initialized classifier.
#[derive(Debug, Clone)]
pub struct Model {
    pub arch: Architecture,
    pub n_classes: usize,
    pub net: Network<f32>,
}

pub fn build_proposed<R: Rng>(n_classes: usize, rng: &mut R) -> Result<Model, NnError> {
    build(&ModelConfig::new(Architecture::Proposed, n_classes), rng)
}

pub fn build_vgg10<R: Rng>(n_classes: usize, rng: &mut R) -> Result<Model, NnError> {
    build(&ModelConfig::new(Architecture::Vgg10, n_classes), rng)
}

pub fn build<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Model, NnError> {
    Ok(Model {
        arch: cfg.arch,
        n_classes: cfg.n_classes,
        net: build_network(cfg, rng)?,
    })
}

impl Model {
    /// `(batch, 128, 128, 2)` -> `(batch, n_classes)` logits.
    pub fn forward_logits(&mut self, batch: &Tensor<f32>, mode: Mode) -> Result<Tensor<f32>, NnError> {
        self.net.forward(batch, mode)
    }

    /// Eval-mode class probabilities per batch row.
    pub fn predict_proba(&mut self, batch: &Tensor<f32>) -> Result<Tensor<f32>, NnError> {
        let logits = self.net.forward(batch, Mode::Eval)?;
        softmax(&logits)
    }

    /// Eval-mode post-ReLU FC1 activations, `(batch, 512)`.
    pub fn extract_fc1(&mut self, batch: &Tensor<f32>) -> Result<Tensor<f32>, NnError> {
        self.net.forward_to(batch, Mode::Eval, FC1_RELU_INDEX)
    }

    pub fn save<W: Write>(&self, w: &mut W) -> Result<(), NnError> {
        let header = CheckpointHeader {
            arch_tag: self.arch.tag(),
            n_classes: self.n_classes as u32,
        };
        write_checkpoint(w, header, &self.net)
    }

    pub fn load<R: Read>(r: R) -> Result<Model, NnError> {
        let (header, net) = read_checkpoint::<_, f32>(r)?;
        let arch = Architecture::from_tag(header.arch_tag)
            .ok_or_else(|| NnError::MalformedCheckpoint(format!("unknown arch tag {}", header.arch_tag)))?;
        let model = Model {
            arch,
            n_classes: header.n_classes as usize,
            net,
        };
        let specs: Vec<LayerSpec> = model.net.layers().iter().map(|l| l.spec()).collect();
        let mut want = layer_specs(&ModelConfig::new(arch, model.n_classes));
        // dropout rate is stored, not implied by the architecture
        for (w, s) in want.iter_mut().zip(&specs) {
            if let (LayerSpec::Dropout { rate }, LayerSpec::Dropout { rate: stored }) = (w, s) {
                *rate = *stored;
            }
        }
        if specs != want || model.net.input_shape() != INPUT_SHAPE {
            return Err(NnError::MalformedCheckpoint(format!(
                "layer stack does not match the {arch} architecture"
            )));
        }
        Ok(model)
    }
}

/// Closed-form parameter count: conv `kh*kw*cin*cout + cout`, BN `2*c`,
/// dense `in*out + out`.
pub fn expected_param_count(arch: Architecture, n_classes: usize) -> usize {
    let mut cin = INPUT_SHAPE[2];
    let mut total = 0;
    for (&(kh, kw), &cout) in arch.conv_kernels().iter().zip(&CONV_FILTERS) {
        total += kh * kw * cin * cout + cout + 2 * cout;
        cin = cout;
    }
    let (mut h, mut w) = (INPUT_SHAPE[0], INPUT_SHAPE[1]);
    for (ph, pw) in arch.pools() {
        h = crate::nn::ceil_pool_len(h, ph, ph);
        w = crate::nn::ceil_pool_len(w, pw, pw);
    }
    let flat = h * w * cin;
    total + flat * FC1_UNITS + FC1_UNITS + FC1_UNITS * n_classes + n_classes
}
