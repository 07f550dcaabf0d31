mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use stsheaf::autodiff::Tensor;
use stsheaf::data::{gen_cascade_series, gen_heat_series, CascadeParams, HeatParams, SeriesFile};
use stsheaf::model::{ModelConfig, ModelParams, Variant};
use stsheaf::training::{
    adam_step, evaluate, evaluate_dataset, make_windows, train, AdamConfig, AdamState, SplitFractions, TrainConfig,
    MAPE_FLOOR,
};
use stsheaf::Graph;

fn random_series(seed: u64, steps: usize, nodes: usize, missing: f64) -> SeriesFile {
    let mut r = rng(seed);
    let values: Vec<f64> = (0..steps * nodes).map(|_| 3.0 + 2.0 * normal(&mut r)).collect();
    let mask: Vec<bool> = (0..steps * nodes).map(|_| !r.random_bool(missing)).collect();
    let values = values.iter().zip(&mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
    SeriesFile::new(steps, nodes, 1, values, mask).unwrap()
}

#[test]
fn node_stats_come_from_training_inputs_only() {
    let (steps, nodes, window, horizon) = (60, 3, 5, 2);
    let series = random_series(1, steps, nodes, 0.1);
    let split = SplitFractions::default();
    let a = make_windows(&series, window, horizon, split).unwrap();
    let n_train = a.train.len();
    let span = n_train + window - 1;
    for u in 0..nodes {
        let obs: Vec<f64> = (0..span).filter_map(|t| series.get(t, u, 0)).collect();
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        let std = (obs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / obs.len() as f64).sqrt();
        assert!((a.train.node_stats.mean[u] - mean).abs() <= 1e-12);
        assert!((a.train.node_stats.std[u] - std).abs() <= 1e-12);
        assert_eq!(a.val.node_stats, a.train.node_stats);
        assert_eq!(a.test.node_stats, a.train.node_stats);
    }
    // Rewriting everything after the training span leaves the statistics alone.
    let mut values = series.values().to_vec();
    for v in values[span * nodes..].iter_mut() {
        *v += 100.0;
    }
    let shifted = SeriesFile::new(steps, nodes, 1, values, series.mask().to_vec()).unwrap();
    let b = make_windows(&shifted, window, horizon, split).unwrap();
    assert_eq!(a.train.node_stats, b.train.node_stats);
    assert_eq!(a.train.inputs, b.train.inputs);
}

#[test]
fn windows_are_chronological_and_contiguous() {
    let values: Vec<f64> = (0..40).map(f64::from).collect();
    let series = SeriesFile::dense(20, 2, 1, values).unwrap();
    let s = make_windows(&series, 4, 2, SplitFractions::default()).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (10, 1, 4));
    let stats = &s.train.node_stats;
    let raw = |ds: &stsheaf::training::Dataset, i: usize, t: usize, u: usize| {
        let x = ds.inputs.data()[(i * 4 + t) * 2 + u];
        x * stats.std[u] + stats.mean[u]
    };
    assert!((raw(&s.train, 0, 0, 0) - 0.0).abs() < 1e-9);
    assert!((raw(&s.val, 0, 0, 1) - 21.0).abs() < 1e-9);
    assert!((raw(&s.test, 0, 0, 0) - 22.0).abs() < 1e-9);
}

/// Direct recomputation over the flattened observed set.
fn brute_force(preds: &[f64], targets: &[f64], mask: &[bool]) -> (f64, f64, Option<f64>) {
    let obs: Vec<(f64, f64)> = preds
        .iter()
        .zip(targets)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &y), _)| (p, y))
        .collect();
    let n = obs.len() as f64;
    let mae = obs.iter().map(|(p, y)| (p - y).abs()).sum::<f64>() / n;
    let rmse = (obs.iter().map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n).sqrt();
    let pct: Vec<f64> = obs.iter().filter(|(_, y)| y.abs() >= MAPE_FLOOR).map(|(p, y)| ((p - y) / y).abs()).collect();
    let mape = (!pct.is_empty()).then(|| 100.0 * pct.iter().sum::<f64>() / pct.len() as f64);
    (mae, rmse, mape)
}

#[test]
fn metrics_match_brute_force() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let n = r.random_range(1..200);
        let p = normals(&mut r, n);
        let y = normals(&mut r, n);
        let mut m: Vec<bool> = (0..n).map(|_| r.random_bool(0.7)).collect();
        m[0] = true;
        let got = evaluate(&p, &y, &m).unwrap();
        let (mae, rmse, mape) = brute_force(&p, &y, &m);
        assert!((got.mae - mae).abs() <= 1e-12);
        assert!((got.rmse - rmse).abs() <= 1e-12);
        match (got.mape, mape) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-9 * b.max(1.0)),
            (a, b) => assert_eq!(a, b),
        }
    }
}

#[test]
fn single_observed_element_metrics() {
    let m = evaluate(&[2.0, 4.0], &[1.0, 0.0], &[true, false]).unwrap();
    assert_eq!((m.mae, m.rmse, m.mape), (1.0, 1.0, Some(100.0)));
    assert!(evaluate(&[1.0], &[1.0], &[false]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_entries_never_change_metrics(seed in 0u64..1_000_000, junk in -1e6f64..1e6) {
        let mut r = rng(seed);
        let n = r.random_range(1..50);
        let p = normals(&mut r, n);
        let y = normals(&mut r, n);
        let base = evaluate(&p, &y, &vec![true; n]).unwrap();
        let (mut p2, mut y2, mut m2) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            if r.random_bool(0.5) {
                p2.push(junk);
                y2.push(-junk * 0.5);
                m2.push(false);
            }
            p2.push(p[i]);
            y2.push(y[i]);
            m2.push(true);
        }
        let padded = evaluate(&p2, &y2, &m2).unwrap();
        prop_assert_eq!(base, padded);
    }

    #[test]
    fn rmse_dominates_mae(seed in 0u64..1_000_000) {
        let mut r = rng(seed);
        let n = r.random_range(1..100);
        let m = evaluate(&normals(&mut r, n), &normals(&mut r, n), &vec![true; n]).unwrap();
        prop_assert!(m.rmse >= m.mae - 1e-15);
    }

    #[test]
    fn zscore_roundtrip(seed in 0u64..1_000_000) {
        let series = random_series(seed, 30, 4, 0.2);
        let s = make_windows(&series, 3, 1, SplitFractions::default()).unwrap();
        let mut r = rng(seed);
        let orig = normals(&mut r, 4 * 5);
        let mut x = orig.clone();
        s.train.node_stats.zscore(&mut x).unwrap();
        s.train.node_stats.inverse_zscore(&mut x).unwrap();
        prop_assert!(rel_err(&x, &orig) <= 1e-10);
    }
}

/// Scalar Adam written out from the update rule.
fn scalar_adam(grad: impl Fn(f64) -> f64, x0: f64, lr: f64, steps: usize) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
    for t in 1..=steps as i32 {
        let g = grad(x);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
    }
    x
}

#[test]
fn adam_minimizes_scalar_quadratic() {
    // f(x) = ½ (x − 0.3)².
    let grad = |x: f64| x - 0.3;
    let cfg = AdamConfig {
        learning_rate: 0.03,
        ..AdamConfig::default()
    };
    let mut params = vec![Tensor::new(vec![1], vec![0.5]).unwrap()];
    let mut state = AdamState::new(&params);
    for _ in 0..100 {
        let g = vec![Tensor::new(vec![1], vec![grad(params[0].data()[0])]).unwrap()];
        adam_step(&mut params, &g, &mut state, &cfg).unwrap();
    }
    let x = params[0].data()[0];
    assert!(grad(x).abs() <= 1e-3, "gradient {}", grad(x));
    assert!((x - scalar_adam(grad, 0.5, 0.03, 100)).abs() <= 1e-14);
}

fn tiny_setup(series: &SeriesFile, variant: Variant) -> (ModelConfig, stsheaf::training::Splits) {
    let cfg = ModelConfig {
        embed_dim: 4,
        stalk_dim: 2,
        num_heads: 1,
        num_layers: 1,
        window: 4,
        horizon: 2,
        variant,
        ..ModelConfig::default()
    };
    (cfg, make_windows(series, 4, 2, SplitFractions::default()).unwrap())
}

#[test]
fn zero_loss_model_stops_after_patience() {
    // A constant series normalizes to zero and the zeroed decoder predicts zero.
    let g = Graph::cycle(4);
    let series = SeriesFile::dense(40, 4, 1, vec![5.0; 160]).unwrap();
    let (cfg, s) = tiny_setup(&series, Variant::Dynamic);
    let mut params = ModelParams::init(&cfg, 4, 0).unwrap();
    for name in ["dec.w", "dec.b"] {
        params.get_mut(name).unwrap().data_mut().fill(0.0);
    }
    let tc = TrainConfig {
        patience: 3,
        max_epochs: 20,
        ..TrainConfig::default()
    };
    let out = train(params.clone(), &g, &s.train, &s.val, &tc).unwrap();
    assert!(out.history.stopped_early);
    assert_eq!(out.history.records.len(), 1 + 3);
    assert_eq!(out.history.best_epoch, 0);
    assert_eq!(out.params, params);
    assert!(out.history.records.iter().all(|r| r.val_mae == 0.0 && r.train_mae == 0.0));
}

#[test]
fn training_is_reproducible_and_finite() {
    let g = Graph::cycle(5);
    let series = gen_heat_series(
        &g,
        &HeatParams {
            num_steps: 80,
            ..HeatParams::default()
        },
    )
    .unwrap();
    let (cfg, s) = tiny_setup(&series, Variant::Dynamic);
    let tc = TrainConfig {
        max_epochs: 4,
        ..TrainConfig::default()
    };
    let run = || train(ModelParams::init(&cfg, 5, 3).unwrap(), &g, &s.train, &s.val, &tc).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history.to_csv(), b.history.to_csv());
    assert_eq!(a.params, b.params);
    assert_eq!(a.history.records.len(), 5);
    assert!(a.history.records.iter().all(|r| r.train_mae.is_finite() && r.val_mae.is_finite()));
    let m = evaluate_dataset(&a.params, &g, &s.test).unwrap();
    assert!(m.overall.rmse >= m.overall.mae);
    assert_eq!(m.horizon.len(), 2);
}

#[test]
fn training_rejects_empty_and_mismatched_data() {
    let g = Graph::cycle(4);
    let series = random_series(4, 25, 4, 0.0);
    let (cfg, s) = tiny_setup(&series, Variant::NoSheaf);
    let params = ModelParams::init(&cfg, 4, 0).unwrap();
    let empty = make_windows(&series, 4, 2, SplitFractions { train: 0.8, val: 0.2, test: 0.0 }).unwrap();
    assert!(empty.test.is_empty());
    assert!(train(params.clone(), &g, &s.train, &empty.test, &TrainConfig::default()).is_err());
    let other = make_windows(&series, 5, 2, SplitFractions::default()).unwrap();
    assert!(train(params, &g, &other.train, &other.val, &TrainConfig::default()).is_err());
}

#[test]
fn cascade_events_are_detectable() {
    let g = Graph::watts_strogatz(30, 4, 0.2, 0).unwrap();
    let p = CascadeParams::default();
    let c = gen_cascade_series(&g, &p).unwrap();
    let quiet = gen_cascade_series(&g, &CascadeParams { event_rate: 0.0, ..p.clone() }).unwrap();
    let n = g.num_nodes();
    let mut diffs = Vec::new();
    for ev in &c.events {
        for &v in &ev.affected {
            for t in ev.start + p.lag..(ev.start + p.lag + p.duration).min(p.num_steps) {
                diffs.push(quiet.clean.values()[t * n + v] - c.series.values()[t * n + v]);
            }
        }
    }
    assert!(!diffs.is_empty());
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    assert!(mean > 3.0 * p.noise_std, "mean drop {mean}");
}

#[test]
fn cascade_replay_oracle_sits_at_noise_floor() {
    let g = Graph::watts_strogatz(30, 4, 0.2, 0).unwrap();
    let p = CascadeParams::default();
    let c = gen_cascade_series(&g, &p).unwrap();
    let again = gen_cascade_series(&g, &p).unwrap();
    assert_eq!(c.series, again.series);
    let mae = evaluate(c.clean.values(), c.series.values(), c.series.mask()).unwrap().mae;
    let floor = p.noise_std * (2.0 / std::f64::consts::PI).sqrt();
    assert!((mae - floor).abs() <= 0.05 * floor, "{mae} vs {floor}");
}

#[test]
fn heat_series_contracts_toward_the_mean() {
    let g = Graph::watts_strogatz(12, 4, 0.3, 1).unwrap();
    let s = gen_heat_series(
        &g,
        &HeatParams {
            num_steps: 400,
            noise_std: 0.0,
            seed: 5,
        },
    )
    .unwrap();
    let n = g.num_nodes();
    let spread = |t: usize| {
        let row = &s.values()[t * n..(t + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64
    };
    let mean_at = |t: usize| s.values()[t * n..(t + 1) * n].iter().sum::<f64>() / n as f64;
    for t in 1..400 {
        assert!(spread(t) <= spread(t - 1) + 1e-15);
        assert!((mean_at(t) - mean_at(0)).abs() <= 1e-12);
    }
    assert!(spread(399) < 1e-6 * spread(0));
}
