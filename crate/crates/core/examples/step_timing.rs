//! Times one forward/backward/update step of each architecture.
//!
//! `cargo run --release -p escnet --example step_timing -- [batch]`

use std::time::Instant;

use escnet::model::{build, Architecture, ModelConfig};
use escnet::nn::{softmax_cross_entropy, Mode, OptimizerState, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let batch: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for arch in [Architecture::Proposed, Architecture::Vgg10] {
        let mut model = build(&ModelConfig::new(arch, 4), &mut rng).unwrap();
        let x = Tensor::from_vec(
            &[batch, 128, 128, 2],
            (0..batch * 128 * 128 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let mut y = Tensor::zeros(&[batch, 4]);
        for i in 0..batch {
            y.data_mut()[i * 4 + i % 4] = 1.0;
        }
        let mut opt = OptimizerState::new(0.1);
        for step in 0..3 {
            let t0 = Instant::now();
            model.net.zero_grad();
            let logits = model.forward_logits(&x, Mode::Train).unwrap();
            let t_fwd = t0.elapsed();
            let (loss, g) = softmax_cross_entropy(&logits, &y).unwrap();
            model.net.backward_params(g).unwrap();
            opt.step(model.net.params_mut());
            model.net.clear_caches();
            println!(
                "{arch} step {step}: batch {batch} forward {:.3}s total {:.3}s ({:.1} ms/segment) loss {loss:.4}",
                t_fwd.as_secs_f64(),
                t0.elapsed().as_secs_f64(),
                1e3 * t0.elapsed().as_secs_f64() / batch as f64
            );
        }
    }
}
