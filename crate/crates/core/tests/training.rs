use a2c_core::codec::{model_init, CodecConfig};
use a2c_core::training::{pyramids, synth_dataset, train_on_pyramids, TrainConfig, TrainLog};

fn small() -> CodecConfig {
    CodecConfig { channels: 8, latent_channels: 4, attn_dim: 4, ..CodecConfig::desk() }
}

fn mean_loss(log: &TrainLog, from: usize, to: usize) -> f64 {
    log.rows[from..to].iter().map(|r| r.loss).sum::<f64>() / (to - from) as f64
}

#[test]
fn loss_trends_down_over_a_smoke_run() {
    let data = synth_dataset(32, 7).unwrap();
    let mut model = model_init(&small(), 1).unwrap();
    let pyrs = pyramids(&model, &data).unwrap();
    let cfg = TrainConfig { batch: 1, lr: 2e-3, ..TrainConfig::new(3e-4, 2000, 1) };
    let log = train_on_pyramids(&mut model, &data, &pyrs, &cfg, |_| {}).unwrap();

    // 200 steps already improve on the start.
    assert!(mean_loss(&log, 190, 200) < mean_loss(&log, 0, 10));
    // 100-step moving average, compared window to window.
    let windows: Vec<f64> = (0..20).map(|w| mean_loss(&log, 100 * w, 100 * (w + 1))).collect();
    assert!(windows[19] < windows[0], "{windows:?}");
    assert!(windows[19] < windows[4], "{windows:?}");
}

#[test]
fn larger_lambda_gives_lower_rate() {
    let data = synth_dataset(16, 8).unwrap();
    let base = model_init(&small(), 2).unwrap();
    let pyrs = pyramids(&base, &data).unwrap();
    let rate = |lambda: f64| {
        let mut m = base.clone();
        let cfg = TrainConfig { batch: 1, lr: 2e-3, ..TrainConfig::new(lambda, 600, 3) };
        let log = train_on_pyramids(&mut m, &data, &pyrs, &cfg, |_| {}).unwrap();
        log.rows[400..].iter().map(|r| r.est_bpp).sum::<f64>() / 200.0
    };
    let (low, high) = (rate(8e-5), rate(3e-2));
    assert!(high < low, "bpp {high} at large lambda vs {low}");
}
