//! Experiment drivers: layer-wise oversmoothing curves, the four-variant
//! ablation and the stalk-dimension sweep.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SeriesFile;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{restriction_maps_dynamic, sheaf_layer, ModelConfig, ModelParams, Variant};
use crate::sheaf::{NodeSignal, Sheaf};
use crate::spectral::{diffuse_flow, gcn_diffuse_step, oversmoothing_metric, spectrum, SpectrumMethod, SpectrumOptions};
use crate::training::{evaluate_dataset, make_windows, train, History, MetricsReport, SplitFractions, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OversmoothConfig {
    pub stalk_dim: usize,
    pub layers: usize,
    pub num_seeds: usize,
    pub seed: u64,
}

impl Default for OversmoothConfig {
    fn default() -> Self {
        Self {
            stalk_dim: 16,
            layers: 10,
            num_seeds: 5,
            seed: 0,
        }
    }
}

/// Seed-averaged mean edge distances after each layer, raw and divided by
/// the layer-0 value. `flow` is the linear sheaf flow `h ← h − L h / λ_max`
/// on the same restriction maps as the gated layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OversmoothRow {
    pub layer: usize,
    pub sheaf_dist: f64,
    pub gcn_dist: f64,
    pub sheaf_ratio: f64,
    pub gcn_ratio: f64,
    pub flow_dist: f64,
    pub flow_ratio: f64,
}

pub fn oversmoothing_csv(rows: &[OversmoothRow]) -> String {
    let mut out = String::from("layer,sheaf_dist,gcn_dist,sheaf_ratio,gcn_ratio,flow_dist,flow_ratio\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.layer, r.sheaf_dist, r.gcn_dist, r.sheaf_ratio, r.gcn_ratio, r.flow_dist, r.flow_ratio
        )
        .unwrap();
    }
    out
}

fn random_signal(n: usize, d: usize, rng: &mut ChaCha8Rng) -> NodeSignal {
    let values = (0..n * d).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    NodeSignal::new(n, d, values).expect("finite samples")
}

/// Runs a stack of randomly initialized gated sheaf layers (restriction maps
/// generated from the input), the same number of GCN propagation steps and
/// of linear flow steps from one shared random input, for `num_seeds`
/// consecutive seeds.
pub fn oversmoothing(g: &Graph, cfg: &OversmoothConfig) -> Result<Vec<OversmoothRow>> {
    if cfg.num_seeds == 0 || cfg.stalk_dim == 0 || cfg.layers == 0 {
        return Err(Error::InvalidArgument("oversmoothing needs seeds, stalk_dim and layers ≥ 1".into()));
    }
    let (n, d, depth) = (g.num_nodes(), cfg.stalk_dim, cfg.layers);
    let w = g.edge_norm_weights();
    let model = ModelConfig {
        embed_dim: d,
        stalk_dim: d,
        num_heads: 1,
        num_layers: depth,
        variant: Variant::Dynamic,
        ..ModelConfig::default()
    };
    let mut sums = vec![[0.0; 6]; depth + 1];
    for s in 0..cfg.num_seeds as u64 {
        let seed = cfg.seed.wrapping_add(s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h0 = random_signal(n, d, &mut rng);
        let params = ModelParams::init(&model, n, seed)?;
        let sheaf: Sheaf<'_> = restriction_maps_dynamic(&params, &h0, g)?;
        let base = oversmoothing_metric(g, &h0)?;
        let opts = SpectrumOptions::default();
        let lmax = spectrum(&sheaf, &w, SpectrumMethod::auto(sheaf.cochain_dim()), &opts)?.lambda_max;
        let step = if lmax > 0.0 { 1.0 / lmax } else { 0.0 };
        let flow = diffuse_flow(&sheaf, &w, &h0, step, depth)?.pair_distances;
        let (mut hs, mut hg) = (h0.clone(), h0);
        for (l, acc) in sums.iter_mut().enumerate() {
            if l > 0 {
                hs = sheaf_layer(&params, l - 1, &hs, &sheaf, &w)?;
                hg = gcn_diffuse_step(g, &hg)?;
            }
            let (ds, dg) = (oversmoothing_metric(g, &hs)?, oversmoothing_metric(g, &hg)?);
            acc[0] += ds;
            acc[1] += dg;
            acc[2] += ds / base;
            acc[3] += dg / base;
            acc[4] += flow[l];
            acc[5] += flow[l] / base;
        }
    }
    let k = cfg.num_seeds as f64;
    Ok(sums
        .iter()
        .enumerate()
        .map(|(layer, a)| OversmoothRow {
            layer,
            sheaf_dist: a[0] / k,
            gcn_dist: a[1] / k,
            sheaf_ratio: a[2] / k,
            gcn_ratio: a[3] / k,
            flow_dist: a[4] / k,
            flow_ratio: a[5] / k,
        })
        .collect())
}

/// One trained model's outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub stalk_dim: usize,
    pub seed: u64,
    pub num_params: usize,
    pub test: MetricsReport,
    pub history: History,
}

/// Builds windows, initializes with `seed`, trains (shuffling also seeded by
/// `seed`) and evaluates on the test split.
pub fn train_and_test(
    g: &Graph,
    series: &SeriesFile,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    split: SplitFractions,
    seed: u64,
) -> Result<RunResult> {
    let splits = make_windows(series, model.window, model.horizon, split)?;
    let params = ModelParams::init(model, g.num_nodes(), seed)?;
    let num_params = params.num_scalars();
    let cfg = TrainConfig {
        seed,
        ..train_cfg.clone()
    };
    let out = train(params, g, &splits.train, &splits.val, &cfg)?;
    let test = evaluate_dataset(&out.params, g, &splits.test)?;
    Ok(RunResult {
        variant: model.variant,
        stalk_dim: model.stalk_dim,
        seed,
        num_params,
        test,
        history: out.history,
    })
}

/// Seed-averaged test metrics of one configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub variant: Variant,
    pub stalk_dim: usize,
    pub num_params: usize,
    pub runs: Vec<RunResult>,
}

impl Summary {
    fn mean(&self, f: impl Fn(&RunResult) -> f64) -> f64 {
        self.runs.iter().map(f).sum::<f64>() / self.runs.len() as f64
    }

    pub fn mean_mae(&self) -> f64 {
        self.mean(|r| r.test.overall.mae)
    }

    pub fn mean_horizon(&self, k: usize, metric: fn(&crate::training::Metrics) -> f64) -> f64 {
        self.mean(|r| metric(&r.test.horizon[k].metrics))
    }

    /// Mean per-epoch optimization time over all epochs of all runs.
    pub fn mean_epoch_seconds(&self) -> f64 {
        let all: Vec<f64> = self.runs.iter().flat_map(|r| r.history.epoch_seconds()).collect();
        all.iter().sum::<f64>() / all.len().max(1) as f64
    }
}

fn summarize(runs: Vec<RunResult>) -> Summary {
    Summary {
        variant: runs[0].variant,
        stalk_dim: runs[0].stalk_dim,
        num_params: runs[0].num_params,
        runs,
    }
}

/// Trains every configuration once per seed. Runs are independent, so they
/// execute on the rayon pool; results come back in input order.
pub fn run_grid(
    g: &Graph,
    series: &SeriesFile,
    models: &[ModelConfig],
    train_cfg: &TrainConfig,
    split: SplitFractions,
    seeds: &[u64],
) -> Result<Vec<Summary>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let jobs: Vec<(&ModelConfig, u64)> = models.iter().flat_map(|m| seeds.iter().map(move |&s| (m, s))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(m, s)| train_and_test(g, series, m, train_cfg, split, s))
        .collect::<Result<Vec<_>>>()?;
    let mut runs = runs.into_iter();
    Ok(models
        .iter()
        .map(|_| summarize(runs.by_ref().take(seeds.len()).collect()))
        .collect())
}

pub fn run_seeds(
    g: &Graph,
    series: &SeriesFile,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    split: SplitFractions,
    seeds: &[u64],
) -> Result<Summary> {
    let mut out = run_grid(g, series, std::slice::from_ref(model), train_cfg, split, seeds)?;
    Ok(out.remove(0))
}

/// All four variants with shared seeds, in [`Variant::ALL`] order.
pub fn ablation(
    g: &Graph,
    series: &SeriesFile,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    split: SplitFractions,
    seeds: &[u64],
) -> Result<Vec<Summary>> {
    let models: Vec<ModelConfig> = Variant::ALL
        .iter()
        .map(|&variant| ModelConfig {
            variant,
            ..model.clone()
        })
        .collect();
    run_grid(g, series, &models, train_cfg, split, seeds)
}

/// One row per variant and forecast step with seed-averaged test metrics.
pub fn ablation_csv(rows: &[Summary]) -> String {
    let mut out = String::from("variant,horizon,mae,rmse,mape,num_params\n");
    for s in rows {
        let horizons = s.runs[0].test.horizon.len();
        for k in 0..horizons {
            let mape = s.mean(|r| r.test.horizon[k].metrics.mape.unwrap_or(f64::NAN));
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.variant.name(),
                k + 1,
                s.mean_horizon(k, |m| m.mae),
                s.mean_horizon(k, |m| m.rmse),
                mape,
                s.num_params
            )
            .unwrap();
        }
    }
    out
}

/// Trains the model once per stalk dimension and seed.
pub fn stalk_sweep(
    g: &Graph,
    series: &SeriesFile,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    split: SplitFractions,
    dims: &[usize],
    seeds: &[u64],
) -> Result<Vec<Summary>> {
    let models: Vec<ModelConfig> = dims
        .iter()
        .map(|&d| ModelConfig {
            stalk_dim: d,
            ..model.clone()
        })
        .collect();
    run_grid(g, series, &models, train_cfg, split, seeds)
}

/// `stalk_dim,num_params,mae,rmse` with seed-averaged test metrics.
pub fn stalk_sweep_csv(rows: &[Summary]) -> String {
    let mut out = String::from("stalk_dim,num_params,mae,rmse\n");
    for s in rows {
        writeln!(
            out,
            "{},{},{},{}",
            s.stalk_dim,
            s.num_params,
            s.mean_mae(),
            s.mean(|r| r.test.overall.rmse)
        )
        .unwrap();
    }
    out
}

/// `stalk_dim,epoch_seconds`; kept apart from the metrics because wall-clock
/// times differ between runs.
pub fn stalk_timing_csv(rows: &[Summary]) -> String {
    let mut out = String::from("stalk_dim,epoch_seconds\n");
    for s in rows {
        writeln!(out, "{},{}", s.stalk_dim, s.mean_epoch_seconds()).unwrap();
    }
    out
}
