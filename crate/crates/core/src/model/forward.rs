use std::sync::Arc;

use super::{ModelConfig, ModelParams, Variant};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::graph::Graph;
use crate::sheaf::{NodeSignal, Sheaf};

/// Edge and propagation index arrays of one graph, precomputed for the
/// model's scatter/gather primitives.
#[derive(Debug, Clone)]
pub struct GraphContext {
    num_nodes: usize,
    src: Vec<usize>,
    dst: Vec<usize>,
    weights: Vec<f64>,
    gcn_rows: Vec<usize>,
    gcn_cols: Vec<usize>,
    gcn_coef: Vec<f64>,
}

impl GraphContext {
    /// Uses the graph's own degree-normalized edge weights.
    pub fn new(g: &Graph) -> Self {
        Self::with_weights(g, g.edge_norm_weights())
    }

    pub fn with_weights(g: &Graph, weights: Vec<f64>) -> Self {
        let (src, dst) = g.edges().iter().copied().unzip();
        let inv_sqrt: Vec<f64> = g
            .degrees()
            .iter()
            .map(|&k| 1.0 / ((k + 1) as f64).sqrt())
            .collect();
        let mut gcn_rows = Vec::new();
        let mut gcn_cols = Vec::new();
        let mut gcn_coef = Vec::new();
        for u in 0..g.num_nodes() {
            gcn_rows.push(u);
            gcn_cols.push(u);
            gcn_coef.push(inv_sqrt[u] * inv_sqrt[u]);
        }
        for &(u, v) in g.edges() {
            let c = inv_sqrt[u] * inv_sqrt[v];
            gcn_rows.extend([u, v]);
            gcn_cols.extend([v, u]);
            gcn_coef.extend([c, c]);
        }
        Self {
            num_nodes: g.num_nodes(),
            src,
            dst,
            weights,
            gcn_rows,
            gcn_cols,
            gcn_coef,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    /// Index arrays for `problems` stacked copies of the graph, where copy
    /// `p` owns node rows `p·N .. (p+1)·N` and edge rows `p·E .. (p+1)·E`.
    pub fn tile(&self, problems: usize) -> EdgeIndex {
        let (n, e) = (self.num_nodes, self.num_edges());
        let shift = |idx: &[usize], stride: usize| -> Arc<[usize]> {
            (0..problems)
                .flat_map(|p| idx.iter().map(move |&i| p * stride + i))
                .collect()
        };
        let repeat = |v: &[f64]| -> Arc<[f64]> { (0..problems).flat_map(|_| v.iter().copied()).collect() };
        EdgeIndex {
            rows: problems * n,
            src: shift(&self.src, n),
            dst: shift(&self.dst, n),
            weights: repeat(&self.weights),
            edge_of: (0..problems).flat_map(|_| 0..e).collect(),
            gcn_rows: shift(&self.gcn_rows, n),
            gcn_cols: shift(&self.gcn_cols, n),
            gcn_coef: repeat(&self.gcn_coef),
        }
    }
}

/// Tiled index arrays over `rows / N` independent spatial problems.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    rows: usize,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    weights: Arc<[f64]>,
    edge_of: Arc<[usize]>,
    gcn_rows: Arc<[usize]>,
    gcn_cols: Arc<[usize]>,
    gcn_coef: Arc<[f64]>,
}

/// Parameters registered as leaves on one tape.
pub struct BoundParams<'p> {
    params: &'p ModelParams,
    vars: Vec<Var>,
}

impl<'p> BoundParams<'p> {
    pub fn bind(params: &'p ModelParams, tape: &mut Tape, requires_grad: bool) -> Self {
        let vars = params
            .tensors()
            .iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect();
        Self { params, vars }
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    pub fn config(&self) -> &'p ModelConfig {
        self.params.config()
    }

    /// Vars aligned with [`ModelParams::tensors`].
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.params
            .index_of(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "parameter {name:?} is not part of the {} variant",
                    self.config().variant.name()
                ))
            })
    }
}

/// Restriction vectors for every tiled edge, each `[P·E, d]`.
#[derive(Debug, Clone, Copy)]
pub struct SheafVars {
    pub r_src: Var,
    pub r_dst: Var,
}

fn linear(tape: &mut Tape, bp: &BoundParams<'_>, x: Var, w: &str, b: &str) -> Result<Var> {
    let y = tape.matmul(x, bp.var(w)?)?;
    tape.add_row(y, bp.var(b)?)
}

/// `relu(x W1 + b1) W2 + b2`.
fn mlp(tape: &mut Tape, bp: &BoundParams<'_>, x: Var, prefix: &str, w1: &str, b1: &str, w2: &str, b2: &str) -> Result<Var> {
    let h = linear(tape, bp, x, &format!("{prefix}{w1}"), &format!("{prefix}{b1}"))?;
    let h = tape.relu(h);
    linear(tape, bp, h, &format!("{prefix}{w2}"), &format!("{prefix}{b2}"))
}

/// Input projection, then (unless the variant skips it) multi-head
/// self-attention along time with a residual, layer norm, and a
/// position-wise feed-forward block with a residual.
///
/// `x` is `[S, T, F_in]` with one sequence per (batch, node); returns
/// `[S, T, D]`.
pub(crate) fn encode(tape: &mut Tape, bp: &BoundParams<'_>, x: Var) -> Result<Var> {
    let cfg = bp.config();
    let z = linear(tape, bp, x, "temp.w", "temp.b")?;
    if !cfg.variant.uses_temporal() {
        return Ok(z);
    }
    let q = linear(tape, bp, z, "attn.wq", "attn.bq")?;
    let k = linear(tape, bp, z, "attn.wk", "attn.bk")?;
    let v = linear(tape, bp, z, "attn.wv", "attn.bv")?;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let qh = tape.slice(q, h * dh, dh)?;
        let kh = tape.slice(k, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let vh = tape.slice(v, h * dh, dh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax(scores)?;
        heads.push(tape.matmul(attn, vh)?);
    }
    let cat = tape.concat(&heads)?;
    let attn_out = linear(tape, bp, cat, "attn.wo", "attn.bo")?;
    let z1 = tape.add(attn_out, z)?;
    let z2 = tape.layer_norm(z1, bp.var("ln.gain")?, bp.var("ln.bias")?)?;
    let f = mlp(tape, bp, z2, "ffn.", "w1", "b1", "w2", "b2")?;
    tape.add(f, z2)
}

/// `[S, T, D] → [S, T, d]`.
pub(crate) fn project(tape: &mut Tape, bp: &BoundParams<'_>, z: Var) -> Result<Var> {
    tape.matmul(z, bp.var("proj.w")?)
}

/// Node-major `[B·N, T, c]` to problem-major `[B·T·N, c]` rows.
fn to_problems(tape: &mut Tape, z: Var, batch: usize, nodes: usize) -> Result<Var> {
    let s = tape.shape(z).to_vec();
    let (t, c) = (s[1], s[2]);
    let z = tape.reshape(z, &[batch, nodes, t, c])?;
    let z = tape.permute(z, &[0, 2, 1, 3])?;
    tape.reshape(z, &[batch * t * nodes, c])
}

fn maps_from_features(tape: &mut Tape, bp: &BoundParams<'_>, feat: Var) -> Result<Var> {
    let base = mlp(tape, bp, feat, "rmap.", "w1", "b1", "w2", "b2")?;
    let alpha = bp.config().residual_scale;
    if alpha == 0.0 {
        return Ok(base);
    }
    let res = mlp(tape, bp, feat, "rres.", "w1", "b1", "w2", "b2")?;
    let res = tape.scale(res, alpha);
    tape.add(base, res)
}

fn split_maps(tape: &mut Tape, r: Var, d: usize) -> Result<SheafVars> {
    Ok(SheafVars {
        r_src: tape.slice(r, 0, d)?,
        r_dst: tape.slice(r, d, d)?,
    })
}

/// Per-edge MLP on `h_u ∥ h_v` giving `[r_src, r_dst]`, plus the scaled
/// residual MLP correction.
pub(crate) fn dynamic_maps_vars(tape: &mut Tape, bp: &BoundParams<'_>, h: Var, idx: &EdgeIndex) -> Result<SheafVars> {
    let hs = tape.gather_rows(h, idx.src.clone())?;
    let hd = tape.gather_rows(h, idx.dst.clone())?;
    let feat = tape.concat(&[hs, hd])?;
    let r = maps_from_features(tape, bp, feat)?;
    split_maps(tape, r, bp.config().stalk_dim)
}

/// The same MLPs applied once to the learned node embeddings, then tiled
/// across problems.
pub(crate) fn static_maps_vars(tape: &mut Tape, bp: &BoundParams<'_>, ctx: &GraphContext, idx: &EdgeIndex) -> Result<SheafVars> {
    let emb = bp.var("node_emb")?;
    let es = tape.gather_rows(emb, ctx.src.iter().copied().collect())?;
    let ed = tape.gather_rows(emb, ctx.dst.iter().copied().collect())?;
    let feat = tape.concat(&[es, ed])?;
    let r = maps_from_features(tape, bp, feat)?;
    let r = tape.gather_rows(r, idx.edge_of.clone())?;
    split_maps(tape, r, bp.config().stalk_dim)
}

/// One gated diffusion layer over `h: [P·N, d]`.
///
/// The aggregated message is `m_u = Σ_{src(e)=u} w_e δ_e − Σ_{dst(e)=u} w_e δ_e`
/// with `δ_e = r_src ⊙ h_src − r_dst ⊙ h_dst`; the no-sheaf variant uses GCN
/// propagation instead and ignores `maps`. The candidate is
/// `h̃ = FFN(relu(m W + b) + h)`, the gate `g = σ([h ∥ h̃] W_g + b_g)` and the
/// output `h + g ⊙ (h̃ − h)`.
pub fn sheaf_layer_vars(
    tape: &mut Tape,
    bp: &BoundParams<'_>,
    layer: usize,
    h: Var,
    maps: Option<SheafVars>,
    idx: &EdgeIndex,
) -> Result<Var> {
    let msg = match maps {
        Some(maps) => {
            let hs = tape.gather_rows(h, idx.src.clone())?;
            let hd = tape.gather_rows(h, idx.dst.clone())?;
            let a = tape.mul(maps.r_src, hs)?;
            let b = tape.mul(maps.r_dst, hd)?;
            let delta = tape.sub(a, b)?;
            tape.scatter_add_signed(delta, idx.src.clone(), idx.dst.clone(), Some(idx.weights.clone()), idx.rows)?
        }
        None => {
            let hv = tape.gather_rows(h, idx.gcn_cols.clone())?;
            tape.scatter_add(hv, idx.gcn_rows.clone(), idx.gcn_coef.clone(), idx.rows)?
        }
    };
    let p = format!("layer{layer}.");
    let a = linear(tape, bp, msg, &format!("{p}w"), &format!("{p}b"))?;
    let a = tape.relu(a);
    let u = tape.add(a, h)?;
    let cand = mlp(tape, bp, u, &p, "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2")?;
    let both = tape.concat(&[h, cand])?;
    let gate = linear(tape, bp, both, &format!("{p}gate_w"), &format!("{p}gate_b"))?;
    let gate = tape.sigmoid(gate);
    let diff = tape.sub(cand, h)?;
    let step = tape.mul(gate, diff)?;
    tape.add(h, step)
}

/// `[B·T·N, d] → [B, H, N, F_out]` through one linear map on the flattened
/// `T` stalk vectors of each node.
fn decode(tape: &mut Tape, bp: &BoundParams<'_>, h: Var, batch: usize, nodes: usize) -> Result<Var> {
    let cfg = bp.config();
    let (t, d) = (cfg.window, cfg.stalk_dim);
    let h = tape.reshape(h, &[batch, t, nodes, d])?;
    let h = tape.permute(h, &[0, 2, 1, 3])?;
    let h = tape.reshape(h, &[batch, nodes, t * d])?;
    let y = linear(tape, bp, h, "dec.w", "dec.b")?;
    let y = tape.reshape(y, &[batch, nodes, cfg.horizon, cfg.f_out])?;
    tape.permute(y, &[0, 2, 1, 3])
}

fn check_input(cfg: &ModelConfig, x: &Tensor, nodes: usize) -> Result<usize> {
    let s = x.shape();
    if s.len() != 4 || s[1] != cfg.window || s[2] != nodes || s[3] != cfg.f_in {
        return shape_err(format!(
            "input {:?} does not match (B, T={}, N={nodes}, F_in={})",
            s, cfg.window, cfg.f_in
        ));
    }
    Ok(s[0])
}

/// Records the full forward pass for `x: [B, T, N, F_in]` and returns the
/// `[B, H, N, F_out]` prediction.
pub fn forward(tape: &mut Tape, bp: &BoundParams<'_>, x: &Tensor, ctx: &GraphContext) -> Result<Var> {
    let cfg = bp.config();
    let nodes = ctx.num_nodes();
    let batch = check_input(cfg, x, nodes)?;
    if cfg.variant == Variant::StaticMaps && bp.params().num_nodes() != nodes {
        return shape_err(format!(
            "static node embeddings cover {} nodes, graph has {nodes}",
            bp.params().num_nodes()
        ));
    }
    let xs = x
        .permute(&[0, 2, 1, 3])?
        .reshape(&[batch * nodes, cfg.window, cfg.f_in])?;
    let xv = tape.constant(xs);
    let z = encode(tape, bp, xv)?;
    let h = project(tape, bp, z)?;
    let mut h = to_problems(tape, h, batch, nodes)?;
    let idx = ctx.tile(batch * cfg.window);
    let maps = match cfg.variant {
        Variant::NoSheaf => None,
        Variant::StaticMaps => Some(static_maps_vars(tape, bp, ctx, &idx)?),
        Variant::Dynamic | Variant::NoTemporal => Some(dynamic_maps_vars(tape, bp, h, &idx)?),
    };
    for l in 0..cfg.num_layers {
        h = sheaf_layer_vars(tape, bp, l, h, maps, &idx)?;
    }
    decode(tape, bp, h, batch, nodes)
}

/// Forward pass without gradient tracking.
pub fn predict(params: &ModelParams, x: &Tensor, g: &Graph) -> Result<Tensor> {
    let ctx = GraphContext::new(g);
    let mut tape = Tape::new();
    let bp = BoundParams::bind(params, &mut tape, false);
    let y = forward(&mut tape, &bp, x, &ctx)?;
    Ok(tape.value(y).clone())
}

/// Temporal encoder on `x: [B, T, N, F_in]`, returning `[B, T, N, D]`.
pub fn temporal_encode(params: &ModelParams, x: &Tensor) -> Result<Tensor> {
    let cfg = params.config();
    let s = x.shape();
    if s.len() != 4 || s[3] != cfg.f_in {
        return shape_err(format!("input {s:?} is not (B, T, N, F_in={})", cfg.f_in));
    }
    let (b, t, n) = (s[0], s[1], s[2]);
    let mut tape = Tape::new();
    let bp = BoundParams::bind(params, &mut tape, false);
    let xv = tape.constant(x.permute(&[0, 2, 1, 3])?.reshape(&[b * n, t, cfg.f_in])?);
    let z = encode(&mut tape, &bp, xv)?;
    tape.value(z)
        .clone()
        .reshape(&[b, n, t, cfg.embed_dim])?
        .permute(&[0, 2, 1, 3])
}

/// Stalk projection of encoded features `z: [B, T, N, D]`, one node signal
/// per `(b, t)` in row-major order.
pub fn stalk_project(params: &ModelParams, z: &Tensor) -> Result<Vec<NodeSignal>> {
    let cfg = params.config();
    let s = z.shape();
    if s.len() != 4 || s[3] != cfg.embed_dim {
        return shape_err(format!("encoded input {s:?} is not (B, T, N, D={})", cfg.embed_dim));
    }
    let (b, t, n) = (s[0], s[1], s[2]);
    let mut tape = Tape::new();
    let bp = BoundParams::bind(params, &mut tape, false);
    let zv = tape.constant(z.clone());
    let h = project(&mut tape, &bp, zv)?;
    let d = cfg.stalk_dim;
    tape.value(h)
        .data()
        .chunks(n * d)
        .take(b * t)
        .map(|c| NodeSignal::new(n, d, c.to_vec()))
        .collect()
}

fn check_signal(params: &ModelParams, h: &NodeSignal, g: &Graph) -> Result<()> {
    if h.num_nodes() != g.num_nodes() || h.dim() != params.config().stalk_dim {
        return shape_err(format!(
            "signal ({}, {}) does not match N={} and d={}",
            h.num_nodes(),
            h.dim(),
            g.num_nodes(),
            params.config().stalk_dim
        ));
    }
    Ok(())
}

fn sheaf_from_vars<'g>(tape: &Tape, maps: SheafVars, g: &'g Graph, d: usize) -> Result<Sheaf<'g>> {
    Sheaf::new(
        g,
        d,
        tape.value(maps.r_src).data().to_vec(),
        tape.value(maps.r_dst).data().to_vec(),
    )
}

/// Restriction maps generated from the node states `h`.
pub fn restriction_maps_dynamic<'g>(params: &ModelParams, h: &NodeSignal, g: &'g Graph) -> Result<Sheaf<'g>> {
    check_signal(params, h, g)?;
    let ctx = GraphContext::new(g);
    let idx = ctx.tile(1);
    let mut tape = Tape::new();
    let bp = BoundParams::bind(params, &mut tape, false);
    let d = params.config().stalk_dim;
    let hv = tape.constant(Tensor::new(vec![g.num_nodes(), d], h.values().to_vec())?);
    let maps = dynamic_maps_vars(&mut tape, &bp, hv, &idx)?;
    sheaf_from_vars(&tape, maps, g, d)
}

/// Restriction maps generated from the learned node embeddings; independent
/// of any input signal.
pub fn restriction_maps_static<'g>(params: &ModelParams, g: &'g Graph) -> Result<Sheaf<'g>> {
    if params.config().variant != Variant::StaticMaps {
        return Err(Error::InvalidArgument(format!(
            "static restriction maps need the static_maps variant, model is {}",
            params.config().variant.name()
        )));
    }
    if params.num_nodes() != g.num_nodes() {
        return shape_err("node embeddings do not match the graph");
    }
    let ctx = GraphContext::new(g);
    let idx = ctx.tile(1);
    let mut tape = Tape::new();
    let bp = BoundParams::bind(params, &mut tape, false);
    let maps = static_maps_vars(&mut tape, &bp, &ctx, &idx)?;
    sheaf_from_vars(&tape, maps, g, params.config().stalk_dim)
}

/// One gated diffusion layer on a single spatial problem with explicit
/// sheaf and edge weights. The no-sheaf variant ignores `s`.
pub fn sheaf_layer(params: &ModelParams, layer: usize, h: &NodeSignal, s: &Sheaf<'_>, w: &[f64]) -> Result<NodeSignal> {
    let g = s.graph();
    check_signal(params, h, g)?;
    if layer >= params.config().num_layers {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} out of range for {} layers",
            params.config().num_layers
        )));
    }
    if w.len() != g.num_edges() {
        return shape_err(format!("{} edge weights for {} edges", w.len(), g.num_edges()));
    }
    let d = s.stalk_dim();
    let ctx = GraphContext::with_weights(g, w.to_vec());
    let idx = ctx.tile(1);
    let mut tape = Tape::new();
    let bp = BoundParams::bind(params, &mut tape, false);
    let hv = tape.constant(Tensor::new(vec![g.num_nodes(), d], h.values().to_vec())?);
    let maps = if params.config().variant.uses_sheaf() {
        let e = g.num_edges();
        let rs: Vec<f64> = (0..e).flat_map(|i| s.r_src(i).to_vec()).collect();
        let rd: Vec<f64> = (0..e).flat_map(|i| s.r_dst(i).to_vec()).collect();
        Some(SheafVars {
            r_src: tape.constant(Tensor::new(vec![e, d], rs)?),
            r_dst: tape.constant(Tensor::new(vec![e, d], rd)?),
        })
    } else {
        None
    };
    let out = sheaf_layer_vars(&mut tape, &bp, layer, hv, maps, &idx)?;
    NodeSignal::new(g.num_nodes(), d, tape.value(out).data().to_vec())
}
