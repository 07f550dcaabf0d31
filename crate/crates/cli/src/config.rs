//! The JSON run configuration. Every section has defaults and unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stsheaf::data::{CascadeParams, HeatParams};
use stsheaf::experiments::OversmoothConfig;
use stsheaf::model::ModelConfig;
use stsheaf::training::{SplitFractions, TrainConfig};
use stsheaf::SpectrumOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Model initialization, batch shuffling and random sheaves/signals.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub graph: GraphSource,
    /// Degree smoothing in the edge weights.
    pub eps: f64,
    pub series: SeriesSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitFractions,
    pub spectrum: SpectrumSection,
    pub diffusion: DiffusionSection,
    pub oversmooth: OversmoothSection,
    pub ablation: AblationSection,
    /// Checkpoint read by `eval`; defaults to `<out_dir>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            graph: GraphSource::default(),
            eps: 0.0,
            series: SeriesSource::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: SplitFractions::default(),
            spectrum: SpectrumSection::default(),
            diffusion: DiffusionSection::default(),
            oversmooth: OversmoothSection::default(),
            ablation: AblationSection::default(),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSource {
    /// `src,dst[,weight]` lines.
    EdgeList { path: PathBuf, num_nodes: usize },
    WattsStrogatz {
        num_nodes: usize,
        k: usize,
        p: f64,
        #[serde(default)]
        seed: u64,
    },
    Path { num_nodes: usize },
    Cycle { num_nodes: usize },
    Complete { num_nodes: usize },
}

impl Default for GraphSource {
    fn default() -> Self {
        GraphSource::WattsStrogatz {
            num_nodes: 30,
            k: 4,
            p: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SeriesSource {
    /// One CSV per feature, rows are time steps and columns nodes.
    Csv { paths: Vec<PathBuf> },
    Cascade(CascadeParams),
    Heat(HeatParams),
}

impl Default for SeriesSource {
    fn default() -> Self {
        SeriesSource::Cascade(CascadeParams::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Auto,
    Dense,
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SheafSource {
    Identity,
    /// Standard normal restriction entries drawn from the run seed.
    Random,
    /// JSON `{stalk_dim, r_src, r_dst}` aligned with the graph's edges.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    pub sheaf: SheafSource,
    /// Stalk dimension for identity and random sheaves.
    pub stalk_dim: usize,
    pub method: MethodChoice,
    pub options: SpectrumOptions,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self {
            sheaf: SheafSource::Identity,
            stalk_dim: 1,
            method: MethodChoice::Auto,
            options: SpectrumOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    pub steps: usize,
    /// Absolute step size. When absent the step is
    /// `step_fraction · 2 / λ_max` of the sheaf in the spectrum section.
    pub step: Option<f64>,
    pub step_fraction: f64,
    /// JSON `[[row...], ...]` initial signal; standard normal from the seed
    /// when absent.
    pub initial: Option<PathBuf>,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        Self {
            steps: 100,
            step: None,
            step_fraction: 0.9,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OversmoothSection {
    pub stalk_dim: usize,
    pub layers: usize,
    pub num_seeds: usize,
}

impl Default for OversmoothSection {
    fn default() -> Self {
        let d = OversmoothConfig::default();
        Self {
            stalk_dim: d.stalk_dim,
            layers: d.layers,
            num_seeds: d.num_seeds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    /// Defaults to `seed, seed + 1, seed + 2`.
    pub seeds: Option<Vec<u64>>,
    /// Stalk dimensions for the dynamic-model sweep; empty skips it.
    pub stalk_dims: Vec<usize>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            seeds: None,
            stalk_dims: vec![1, 4, 8, 16, 32],
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).context("invalid run configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Checks everything that can be checked before any computation.
    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            bail!("eps must be finite and nonnegative");
        }
        self.model.validate()?;
        self.train.validate()?;
        self.split.sizes(1)?;
        if let SeriesSource::Cascade(p) = &self.series {
            p.validate()?;
        }
        if let SeriesSource::Csv { paths } = &self.series {
            if paths.is_empty() {
                bail!("series.csv needs at least one path");
            }
        }
        if self.spectrum.stalk_dim == 0 {
            bail!("spectrum.stalk_dim must be at least 1");
        }
        let d = &self.diffusion;
        if let Some(step) = d.step {
            if !(step >= 0.0 && step.is_finite()) {
                bail!("diffusion.step must be finite and nonnegative");
            }
        }
        if !(d.step_fraction >= 0.0 && d.step_fraction.is_finite()) {
            bail!("diffusion.step_fraction must be finite and nonnegative");
        }
        let o = &self.oversmooth;
        if o.stalk_dim == 0 || o.layers == 0 || o.num_seeds == 0 {
            bail!("oversmooth stalk_dim, layers and num_seeds must be at least 1");
        }
        if self.ablation.seeds.as_ref().is_some_and(Vec::is_empty) {
            bail!("ablation.seeds must not be empty");
        }
        if self.ablation.stalk_dims.contains(&0) {
            bail!("ablation.stalk_dims entries must be at least 1");
        }
        Ok(())
    }

    pub fn ablation_seeds(&self) -> Vec<u64> {
        self.ablation
            .seeds
            .clone()
            .unwrap_or_else(|| (0..3).map(|i| self.seed.wrapping_add(i)).collect())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("checkpoint.json"))
    }
}
