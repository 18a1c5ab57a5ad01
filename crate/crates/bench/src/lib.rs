//! Fixtures shared by the benchmarks.

use panelcast_core::data::{build_batch, synth_generate, Covariates, PanelCube, SynthConfig, WindowBatch};
use panelcast_core::model::{Architecture, HistoryLen, Model, ModelConfig};
use panelcast_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}

pub fn cube(series_per_side: usize, days: usize) -> PanelCube {
    synth_generate(&SynthConfig {
        stores: series_per_side,
        items: series_per_side,
        days,
        seed: 1,
        ..SynthConfig::default()
    })
    .expect("valid synthetic config")
}

/// A model at default width over `history` days, and one batch for it.
pub fn model_and_batch(architecture: Architecture, history: usize, batch: usize) -> (Model, WindowBatch) {
    let side = (batch as f64).sqrt().ceil() as usize;
    let cube = cube(side, history + 40);
    let cfg = ModelConfig {
        architecture,
        history_len: HistoryLen::Days(history),
        covariates: Covariates::default(),
        ..ModelConfig::default()
    }
    .with_inputs(&cube);
    let series: Vec<_> = cube.series().into_iter().take(batch).collect();
    let b = build_batch(&cube, history + 10, &series, history, &cfg.covariates, cfg.horizon).expect("window fits");
    (Model::new(cfg).expect("valid model config"), b)
}
