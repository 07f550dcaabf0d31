//! Spatio-temporal forecasting network with input-dependent sheaf diffusion.
//!
//! Per node, a temporal self-attention encoder mixes the input window along
//! the time axis only. Each encoded time step is projected into the stalk
//! space, restriction maps are generated per edge from the endpoint states,
//! and a stack of gated sheaf diffusion layers runs independently for every
//! `(batch, time)` slice. A linear decoder maps the `T` stalk vectors of each
//! node to the `H × F_out` forecast.

mod checkpoint;
mod forward;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use forward::{
    forward, predict, restriction_maps_dynamic, restriction_maps_static, sheaf_layer,
    sheaf_layer_vars, stalk_project, temporal_encode, BoundParams, GraphContext, SheafVars,
};
pub use params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Restriction maps generated from the current node states.
    Dynamic,
    /// Restriction maps generated once from learned per-node embeddings.
    StaticMaps,
    /// Sheaf aggregation replaced by GCN propagation.
    NoSheaf,
    /// Temporal attention and feed-forward blocks skipped.
    NoTemporal,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::StaticMaps,
        Variant::NoSheaf,
        Variant::NoTemporal,
        Variant::Dynamic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dynamic => "dynamic",
            Variant::StaticMaps => "static_maps",
            Variant::NoSheaf => "no_sheaf",
            Variant::NoTemporal => "no_temporal",
        }
    }

    pub fn uses_temporal(self) -> bool {
        self != Variant::NoTemporal
    }

    pub fn uses_sheaf(self) -> bool {
        self != Variant::NoSheaf
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub f_in: usize,
    pub f_out: usize,
    pub embed_dim: usize,
    pub stalk_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub horizon: usize,
    pub window: usize,
    /// Scale of the residual restriction-map correction.
    pub residual_scale: f64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            f_in: 1,
            f_out: 1,
            embed_dim: 16,
            stalk_dim: 16,
            num_heads: 4,
            num_layers: 2,
            horizon: 3,
            window: 12,
            residual_scale: 0.1,
            variant: Variant::Dynamic,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("f_in", self.f_in),
            ("f_out", self.f_out),
            ("embed_dim", self.embed_dim),
            ("stalk_dim", self.stalk_dim),
            ("num_heads", self.num_heads),
            ("num_layers", self.num_layers),
            ("horizon", self.horizon),
            ("window", self.window),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if !(self.residual_scale >= 0.0 && self.residual_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "residual_scale must be finite and nonnegative, got {}",
                self.residual_scale
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }
}
