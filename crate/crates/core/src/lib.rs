pub mod audio;
pub mod features;
pub mod harness;
pub mod mixup;
pub mod model;
pub mod nn;
pub mod synth;
