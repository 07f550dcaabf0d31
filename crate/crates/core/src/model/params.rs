use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, Variant};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Output-layer half-width of the residual restriction-map MLP at init.
const RESIDUAL_INIT_SCALE: f64 = 1e-3;

/// Named learnable arrays of one model, in a fixed registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    num_nodes: usize,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    /// Fan-in scaled uniform weights (ReLU gain where a ReLU follows), zero
    /// biases, unit layer-norm gains.
    /// `num_nodes` only matters for the static-maps variant, which stores
    /// one embedding per node.
    pub fn init(config: &ModelConfig, num_nodes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: ModelParams {
                config: config.clone(),
                num_nodes,
                names: Vec::new(),
                tensors: Vec::new(),
                index: HashMap::new(),
            },
        };
        let (f_in, dm, d) = (config.f_in, config.embed_dim, config.stalk_dim);
        p.weight("temp.w", f_in, dm);
        p.bias("temp.b", dm);
        if config.variant.uses_temporal() {
            for name in ["q", "k", "v", "o"] {
                p.weight(&format!("attn.w{name}"), dm, dm);
                p.bias(&format!("attn.b{name}"), dm);
            }
            p.constant("ln.gain", &[dm], 1.0);
            p.bias("ln.bias", dm);
            p.relu_weight("ffn.w1", dm, 2 * dm);
            p.bias("ffn.b1", 2 * dm);
            p.weight("ffn.w2", 2 * dm, dm);
            p.bias("ffn.b2", dm);
        }
        p.weight("proj.w", dm, d);
        if config.variant.uses_sheaf() {
            p.relu_weight("rmap.w1", 2 * d, 2 * d);
            p.bias("rmap.b1", 2 * d);
            p.weight("rmap.w2", 2 * d, 2 * d);
            p.bias("rmap.b2", 2 * d);
            p.relu_weight("rres.w1", 2 * d, 2 * d);
            p.bias("rres.b1", 2 * d);
            p.uniform("rres.w2", &[2 * d, 2 * d], RESIDUAL_INIT_SCALE);
            p.bias("rres.b2", 2 * d);
        }
        if config.variant == Variant::StaticMaps {
            p.uniform("node_emb", &[num_nodes, d], 1.0);
        }
        for l in 0..config.num_layers {
            p.relu_weight(&format!("layer{l}.w"), d, d);
            p.bias(&format!("layer{l}.b"), d);
            p.relu_weight(&format!("layer{l}.ffn_w1"), d, 2 * d);
            p.bias(&format!("layer{l}.ffn_b1"), 2 * d);
            p.weight(&format!("layer{l}.ffn_w2"), 2 * d, d);
            p.bias(&format!("layer{l}.ffn_b2"), d);
            p.weight(&format!("layer{l}.gate_w"), 2 * d, d);
            p.bias(&format!("layer{l}.gate_b"), d);
        }
        let out = config.horizon * config.f_out;
        p.weight("dec.w", config.window * d, out);
        p.bias("dec.b", out);
        Ok(p.params)
    }

    /// Rebuilds a parameter set from named arrays, checking them against the
    /// layout `config` implies.
    pub fn from_named(
        config: &ModelConfig,
        num_nodes: usize,
        named: Vec<(String, Tensor)>,
    ) -> Result<Self> {
        let template = Self::init(config, num_nodes, 0)?;
        if named.len() != template.names.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter arrays, got {}",
                template.names.len(),
                named.len()
            )));
        }
        let mut out = template;
        for (name, t) in named {
            let i = *out.index.get(&name).ok_or_else(|| {
                Error::InvalidArgument(format!("unexpected parameter {name:?}"))
            })?;
            if out.tensors[i].shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "parameter {name}: expected {:?}, got {:?}",
                    out.tensors[i].shape(),
                    t.shape()
                )));
            }
            out.tensors[i] = t;
        }
        Ok(out)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}

struct Builder {
    rng: ChaCha8Rng,
    params: ModelParams,
}

impl Builder {
    fn push(&mut self, name: &str, t: Tensor) {
        let p = &mut self.params;
        p.index.insert(name.to_string(), p.names.len());
        p.names.push(name.to_string());
        p.tensors.push(t);
    }

    fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        self.push(name, Tensor::new(shape.to_vec(), data).expect("shape"));
    }

    /// `[fan_in, fan_out]` matrix, uniform in `±sqrt(3 / fan_in)` (unit
    /// variance gain).
    fn weight(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        let bound = (3.0 / fan_in as f64).sqrt();
        self.uniform(name, &[fan_in, fan_out], bound);
    }

    /// Weight feeding a ReLU, uniform in `±sqrt(6 / fan_in)`.
    fn relu_weight(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        let bound = (6.0 / fan_in as f64).sqrt();
        self.uniform(name, &[fan_in, fan_out], bound);
    }

    fn bias(&mut self, name: &str, n: usize) {
        self.push(name, Tensor::zeros(&[n]));
    }

    fn constant(&mut self, name: &str, shape: &[usize], value: f64) {
        self.push(name, Tensor::full(shape, value));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_depends_on_variant() {
        let base = ModelConfig::default();
        let full = ModelParams::init(&base, 30, 0).unwrap();
        assert!(full.get("attn.wq").is_some() && full.get("rmap.w1").is_some());
        assert!(full.get("node_emb").is_none());

        let cfg = ModelConfig {
            variant: Variant::NoSheaf,
            ..base.clone()
        };
        let p = ModelParams::init(&cfg, 30, 0).unwrap();
        assert!(p.get("rmap.w1").is_none() && p.get("layer0.gate_w").is_some());

        let cfg = ModelConfig {
            variant: Variant::StaticMaps,
            ..base
        };
        let p = ModelParams::init(&cfg, 30, 0).unwrap();
        assert_eq!(p.get("node_emb").unwrap().shape(), &[30, 16]);
    }

    #[test]
    fn dynamic_param_count_is_independent_of_graph_size() {
        let cfg = ModelConfig::default();
        let a = ModelParams::init(&cfg, 10, 0).unwrap().num_scalars();
        let b = ModelParams::init(&cfg, 500, 0).unwrap().num_scalars();
        assert_eq!(a, b);
        let st = ModelConfig {
            variant: Variant::StaticMaps,
            ..cfg
        };
        assert!(
            ModelParams::init(&st, 500, 0).unwrap().num_scalars()
                > ModelParams::init(&st, 10, 0).unwrap().num_scalars()
        );
    }

    #[test]
    fn residual_mlp_starts_near_zero() {
        let p = ModelParams::init(&ModelConfig::default(), 4, 3).unwrap();
        let w = p.get("rres.w2").unwrap();
        assert!(w.data().iter().all(|x| x.abs() <= 1e-3));
        assert!(p.get("layer1.gate_b").unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::default();
        assert_eq!(
            ModelParams::init(&cfg, 5, 9).unwrap(),
            ModelParams::init(&cfg, 5, 9).unwrap()
        );
        assert_ne!(
            ModelParams::init(&cfg, 5, 9).unwrap(),
            ModelParams::init(&cfg, 5, 10).unwrap()
        );
    }

    #[test]
    fn invalid_config() {
        let cfg = ModelConfig {
            embed_dim: 10,
            num_heads: 4,
            ..Default::default()
        };
        assert!(ModelParams::init(&cfg, 5, 0).is_err());
    }
}
