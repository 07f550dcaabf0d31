use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use stsheaf::data::{gen_cascade_series, gen_heat_series, load_series_csv, write_sidecar, SeriesFile};
use stsheaf::experiments::{
    ablation_csv, oversmoothing, oversmoothing_csv, run_grid, stalk_sweep_csv, stalk_timing_csv, OversmoothConfig,
    Summary,
};
use stsheaf::graph::load_edge_list;
use stsheaf::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams, Variant};
use stsheaf::spectral::{diffuse_flow, spectrum};
use stsheaf::training::{evaluate_dataset, make_windows, train, MetricsReport};
use stsheaf::{Graph, NodeSignal, Sheaf, SpectrumMethod};

use crate::config::{GraphSource, MethodChoice, RunConfig, SeriesSource, SheafSource};

/// Files written by one command. On failure they are removed again, along
/// with the output directory if this command created it.
pub struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            written: Vec::new(),
        })
    }

    /// Registers `name` as an output and returns its path.
    pub fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn discard(self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

pub fn build_graph(cfg: &RunConfig) -> Result<Graph> {
    let g = match &cfg.graph {
        GraphSource::EdgeList { path, num_nodes } => load_edge_list(path, *num_nodes)?,
        GraphSource::WattsStrogatz { num_nodes, k, p, seed } => Graph::watts_strogatz(*num_nodes, *k, *p, *seed)?,
        GraphSource::Path { num_nodes } => Graph::path(*num_nodes),
        GraphSource::Cycle { num_nodes } => Graph::cycle(*num_nodes),
        GraphSource::Complete { num_nodes } => Graph::complete(*num_nodes),
    };
    Ok(g.with_eps(cfg.eps)?)
}

pub struct Generated {
    pub series: SeriesFile,
    /// Noise-free signal and event list, for the cascade generator.
    pub clean: Option<SeriesFile>,
    pub events: Option<serde_json::Value>,
}

pub fn build_series(cfg: &RunConfig, g: &Graph) -> Result<Generated> {
    let out = match &cfg.series {
        SeriesSource::Csv { paths } => {
            let parts = paths.iter().map(load_series_csv).collect::<Result<Vec<_>, _>>()?;
            Generated {
                series: SeriesFile::stack_features(&parts)?,
                clean: None,
                events: None,
            }
        }
        SeriesSource::Cascade(p) => {
            let c = gen_cascade_series(g, p)?;
            Generated {
                series: c.series,
                clean: Some(c.clean),
                events: Some(serde_json::to_value(&c.events)?),
            }
        }
        SeriesSource::Heat(p) => Generated {
            series: gen_heat_series(g, p)?,
            clean: None,
            events: None,
        },
    };
    if out.series.num_nodes() != g.num_nodes() {
        bail!(
            "series has {} nodes but the graph has {}",
            out.series.num_nodes(),
            g.num_nodes()
        );
    }
    Ok(out)
}

fn check_model_fits(model: &ModelConfig, series: &SeriesFile) -> Result<()> {
    if model.f_in != series.num_features() || model.f_out != series.num_features() {
        bail!(
            "model expects f_in={} and f_out={} but the series has {} features",
            model.f_in,
            model.f_out,
            series.num_features()
        );
    }
    Ok(())
}

fn build_sheaf<'g>(cfg: &RunConfig, g: &'g Graph) -> Result<Sheaf<'g>> {
    let d = cfg.spectrum.stalk_dim;
    Ok(match &cfg.spectrum.sheaf {
        SheafSource::Identity => Sheaf::identity(g, d),
        SheafSource::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let n = g.num_edges() * d;
            let mut draw = || -> Vec<f64> { (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect() };
            let r_src = draw();
            let r_dst = draw();
            Sheaf::new(g, d, r_src, r_dst)?
        }
        SheafSource::File { path } => Sheaf::load_json(g, path)?,
    })
}

fn method(cfg: &RunConfig, s: &Sheaf<'_>) -> SpectrumMethod {
    match cfg.spectrum.method {
        MethodChoice::Auto => SpectrumMethod::auto(s.cochain_dim()),
        MethodChoice::Dense => SpectrumMethod::Dense,
        MethodChoice::Power => SpectrumMethod::Power,
    }
}

pub fn cmd_spectrum(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let g = build_graph(cfg)?;
    let s = build_sheaf(cfg, &g)?;
    let w = g.edge_norm_weights();
    let report = spectrum(&s, &w, method(cfg, &s), &cfg.spectrum.options)?;
    out.write_json("spectrum.json", &report)
}

fn initial_signal(cfg: &RunConfig, n: usize, d: usize) -> Result<NodeSignal> {
    match &cfg.diffusion.initial {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let rows: Vec<Vec<f64>> = serde_json::from_str(&text).context("initial signal must be [[row...], ...]")?;
            let h = NodeSignal::from_rows(&rows)?;
            if h.num_nodes() != n || h.dim() != d {
                bail!("initial signal is {}×{}, expected {n}×{d}", h.num_nodes(), h.dim());
            }
            Ok(h)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x51a1);
            let v = (0..n * d).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            Ok(NodeSignal::new(n, d, v)?)
        }
    }
}

#[derive(Serialize)]
struct DiffuseSummary {
    step: f64,
    lambda_max: Option<f64>,
    steps: usize,
    initial_energy: f64,
    final_energy: f64,
}

pub fn cmd_diffuse(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let g = build_graph(cfg)?;
    let s = build_sheaf(cfg, &g)?;
    let w = g.edge_norm_weights();
    let h0 = initial_signal(cfg, g.num_nodes(), s.stalk_dim())?;
    let (step, lambda_max) = match cfg.diffusion.step {
        Some(step) => (step, None),
        None => {
            let lmax = spectrum(&s, &w, method(cfg, &s), &cfg.spectrum.options)?.lambda_max;
            if lmax <= 0.0 {
                bail!("the sheaf Laplacian is zero; set diffusion.step explicitly");
            }
            (cfg.diffusion.step_fraction * 2.0 / lmax, Some(lmax))
        }
    };
    let trace = diffuse_flow(&s, &w, &h0, step, cfg.diffusion.steps)?;
    trace.write_csv(out.path("trace.csv"))?;
    trace.write_states_json(out.path("states.json"))?;
    out.write_json(
        "diffuse.json",
        &DiffuseSummary {
            step,
            lambda_max,
            steps: cfg.diffusion.steps,
            initial_energy: trace.energies[0],
            final_energy: *trace.energies.last().expect("initial energy is recorded"),
        },
    )
}

pub fn cmd_oversmooth(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let g = build_graph(cfg)?;
    let o = &cfg.oversmooth;
    let rows = oversmoothing(
        &g,
        &OversmoothConfig {
            stalk_dim: o.stalk_dim,
            layers: o.layers,
            num_seeds: o.num_seeds,
            seed: cfg.seed,
        },
    )?;
    out.write("oversmoothing.csv", oversmoothing_csv(&rows))
}

pub fn cmd_train(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let g = build_graph(cfg)?;
    let data = build_series(cfg, &g)?;
    check_model_fits(&cfg.model, &data.series)?;
    let splits = make_windows(&data.series, cfg.model.window, cfg.model.horizon, cfg.split)?;
    let params = ModelParams::init(&cfg.model, g.num_nodes(), cfg.seed)?;
    let tc = stsheaf::training::TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let outcome = train(params, &g, &splits.train, &splits.val, &tc)?;
    save_checkpoint(&outcome.params, out.path("checkpoint.json"))?;
    out.write("history.csv", outcome.history.to_csv())?;
    out.write("timing.csv", outcome.history.timing_csv())
}

pub fn cmd_eval(cfg: &RunConfig, out: &mut Outputs) -> Result<MetricsReport> {
    let g = build_graph(cfg)?;
    let path = cfg.checkpoint_path();
    let params = load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if params.num_nodes() != g.num_nodes() {
        bail!(
            "checkpoint was trained on {} nodes, the graph has {}",
            params.num_nodes(),
            g.num_nodes()
        );
    }
    let data = build_series(cfg, &g)?;
    let model = params.config().clone();
    check_model_fits(&model, &data.series)?;
    let splits = make_windows(&data.series, model.window, model.horizon, cfg.split)?;
    let report = evaluate_dataset(&params, &g, &splits.test)?;
    out.write_json("metrics.json", &report)?;
    Ok(report)
}

/// Deterministic per-run record; wall-clock times stay out of it.
#[derive(Serialize)]
struct RunRecord<'a> {
    variant: Variant,
    stalk_dim: usize,
    seed: u64,
    num_params: usize,
    best_epoch: usize,
    epochs: usize,
    initial_val_mae: Option<f64>,
    best_val_mae: Option<f64>,
    test: &'a MetricsReport,
}

pub fn cmd_ablate(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let g = build_graph(cfg)?;
    let data = build_series(cfg, &g)?;
    check_model_fits(&cfg.model, &data.series)?;
    let seeds = cfg.ablation_seeds();
    let variants: Vec<ModelConfig> = Variant::ALL
        .iter()
        .map(|&variant| ModelConfig {
            variant,
            ..cfg.model.clone()
        })
        .collect();
    let sweep: Vec<ModelConfig> = cfg
        .ablation
        .stalk_dims
        .iter()
        .map(|&d| ModelConfig {
            stalk_dim: d,
            variant: Variant::Dynamic,
            ..cfg.model.clone()
        })
        .collect();
    // The full model usually appears in both lists; train it once.
    let mut unique: Vec<ModelConfig> = Vec::new();
    for m in variants.iter().chain(&sweep) {
        if !unique.contains(m) {
            unique.push(m.clone());
        }
    }
    let summaries = run_grid(&g, &data.series, &unique, &cfg.train, cfg.split, &seeds)?;
    let pick = |wanted: &[ModelConfig]| -> Vec<Summary> {
        wanted
            .iter()
            .map(|m| summaries[unique.iter().position(|u| u == m).expect("config was trained")].clone())
            .collect()
    };
    out.write("ablation.csv", ablation_csv(&pick(&variants)))?;
    if !sweep.is_empty() {
        let rows = pick(&sweep);
        out.write("stalk_sweep.csv", stalk_sweep_csv(&rows))?;
        out.write("stalk_timing.csv", stalk_timing_csv(&rows))?;
    }
    let records: Vec<RunRecord<'_>> = summaries
        .iter()
        .flat_map(|s| &s.runs)
        .map(|r| RunRecord {
            variant: r.variant,
            stalk_dim: r.stalk_dim,
            seed: r.seed,
            num_params: r.num_params,
            best_epoch: r.history.best_epoch,
            epochs: r.history.records.len() - 1,
            initial_val_mae: r.history.initial_val_mae(),
            best_val_mae: r.history.best_val_mae(),
            test: &r.test,
        })
        .collect();
    out.write_json("runs.json", &records)
}

#[derive(Serialize)]
struct GenSidecar<'a> {
    graph: &'a GraphSource,
    series: &'a SeriesSource,
    num_steps: usize,
    num_nodes: usize,
    num_features: usize,
}

pub fn cmd_gen(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let g = build_graph(cfg)?;
    if matches!(cfg.series, SeriesSource::Csv { .. }) {
        bail!("gen needs a cascade or heat generator in the series section");
    }
    let data = build_series(cfg, &g)?;
    stsheaf::graph::write_edge_list(&g, out.path("graph.csv"))?;
    data.series.write_csv(out.path("series.csv"))?;
    if let Some(clean) = &data.clean {
        clean.write_csv(out.path("clean.csv"))?;
    }
    if let Some(events) = &data.events {
        out.write_json("events.json", events)?;
    }
    write_sidecar(
        &GenSidecar {
            graph: &cfg.graph,
            series: &cfg.series,
            num_steps: data.series.num_steps(),
            num_nodes: data.series.num_nodes(),
            num_features: data.series.num_features(),
        },
        out.path("series.json"),
    )?;
    Ok(())
}
