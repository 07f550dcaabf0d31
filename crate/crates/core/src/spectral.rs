//! Spectra of sheaf Laplacians, discrete gradient-flow diffusion and the
//! oversmoothing metric, plus the parameter-free GCN propagation baseline.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::Graph;
use crate::sheaf::{NodeSignal, Sheaf, DEFAULT_DENSE_CAP, DEFAULT_RANK_TOL};

/// `N·d` up to which [`SpectrumMethod::auto`] picks the dense solver.
pub const AUTO_DENSE_LIMIT: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumMethod {
    Dense,
    Power,
}

impl SpectrumMethod {
    pub fn auto(cochain_dim: usize) -> Self {
        if cochain_dim <= AUTO_DENSE_LIMIT {
            SpectrumMethod::Dense
        } else {
            SpectrumMethod::Power
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumOptions {
    pub rank_tol: f64,
    pub dense_cap: usize,
    pub power_tol: f64,
    pub max_iter: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            rank_tol: DEFAULT_RANK_TOL,
            dense_cap: DEFAULT_DENSE_CAP,
            power_tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

/// `lambda_min_pos` and `kernel_dim` need the dense spectrum; they are `None`
/// when the power method runs above the dense cap. `stable_step_bound` is
/// `None` when `lambda_max` is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub lambda_max: f64,
    pub lambda_min_pos: Option<f64>,
    pub kernel_dim: Option<usize>,
    pub stable_step_bound: Option<f64>,
}

pub fn spectrum(
    s: &Sheaf<'_>,
    w: &[f64],
    method: SpectrumMethod,
    opts: &SpectrumOptions,
) -> Result<SpectrumReport> {
    let dense_ok = s.cochain_dim() <= opts.dense_cap;
    let (lambda_max, dense) = match method {
        SpectrumMethod::Dense => {
            let eig = dense_eigenvalues(s, w, opts.dense_cap)?;
            (eig.iter().cloned().fold(0.0, f64::max), Some(eig))
        }
        SpectrumMethod::Power => {
            let lmax = power_lambda_max(s, w, opts)?;
            let eig = if dense_ok {
                Some(dense_eigenvalues(s, w, opts.dense_cap)?)
            } else {
                None
            };
            (lmax, eig)
        }
    };
    let (lambda_min_pos, kernel_dim) = match dense {
        Some(eig) => {
            let cut = opts.rank_tol * lambda_max;
            let positive: Vec<f64> = eig.iter().cloned().filter(|&x| x > cut).collect();
            let min_pos = positive.iter().cloned().fold(f64::INFINITY, f64::min);
            let min_pos = if min_pos.is_finite() { min_pos } else { 0.0 };
            (Some(min_pos), Some(eig.len() - positive.len()))
        }
        None => (None, None),
    };
    Ok(SpectrumReport {
        lambda_max,
        lambda_min_pos,
        kernel_dim,
        stable_step_bound: (lambda_max > 0.0).then(|| 2.0 / lambda_max),
    })
}

fn dense_eigenvalues(s: &Sheaf<'_>, w: &[f64], cap: usize) -> Result<Vec<f64>> {
    let l = s.dense_laplacian(w, cap)?;
    Ok(SymmetricEigen::new(l).eigenvalues.iter().cloned().collect())
}

/// Largest eigenvalue by power iteration on the edge-iterated operator.
///
/// Stops when the Rayleigh quotient changes by less than `power_tol`
/// relative between iterations.
pub fn power_lambda_max(s: &Sheaf<'_>, w: &[f64], opts: &SpectrumOptions) -> Result<f64> {
    let n = s.graph().num_nodes();
    let d = s.stalk_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eaf);
    let start: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut x = NodeSignal::new(n, d, start)?;
    normalize(&mut x);
    let mut estimate = 0.0;
    for _ in 0..opts.max_iter {
        let y = s.laplacian_apply(&x, w)?;
        let next = x.dot(&y);
        let ny = y.norm();
        if ny == 0.0 {
            return Ok(0.0);
        }
        let converged = (next - estimate).abs() <= opts.power_tol * next.abs();
        estimate = next;
        x = y;
        normalize(&mut x);
        if converged {
            return Ok(estimate);
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        last_estimate: estimate,
    })
}

fn normalize(x: &mut NodeSignal) {
    let n = x.norm();
    if n > 0.0 {
        for r in 0..x.num_nodes() {
            for v in x.row_mut(r) {
                *v /= n;
            }
        }
    }
}

/// Orthonormal basis of `ker(L)` as columns, from the dense eigendecomposition.
pub fn kernel_basis(s: &Sheaf<'_>, w: &[f64], rank_tol: f64, cap: usize) -> Result<DMatrix<f64>> {
    let l = s.dense_laplacian(w, cap)?;
    let eig = SymmetricEigen::new(l);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cols: Vec<DVector<f64>> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &x)| x <= rank_tol * lmax)
        .map(|(i, _)| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        return Ok(DMatrix::zeros(s.cochain_dim(), 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionTrace {
    pub states: Vec<NodeSignal>,
    pub energies: Vec<f64>,
    pub pair_distances: Vec<f64>,
}

impl DiffusionTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,energy,pair_distance\n");
        for (i, (e, p)) in self.energies.iter().zip(&self.pair_distances).enumerate() {
            out.push_str(&format!("{i},{e},{p}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Writes every state as `[[row...], ...]`, one array per step.
    pub fn write_states_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let states: Vec<Vec<&[f64]>> = self
            .states
            .iter()
            .map(|h| (0..h.num_nodes()).map(|u| h.row(u)).collect())
            .collect();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, &states)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Discrete gradient flow `h ← h − α L h` for `steps` iterations.
pub fn diffuse_flow(
    s: &Sheaf<'_>,
    w: &[f64],
    h0: &NodeSignal,
    step: f64,
    steps: usize,
) -> Result<DiffusionTrace> {
    if !(step >= 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size must be finite and nonnegative, got {step}")));
    }
    let g = s.graph();
    let mut trace = DiffusionTrace {
        states: Vec::with_capacity(steps + 1),
        energies: Vec::with_capacity(steps + 1),
        pair_distances: Vec::with_capacity(steps + 1),
    };
    let mut h = h0.clone();
    trace.energies.push(s.energy(&h, w)?);
    trace.pair_distances.push(oversmoothing_metric(g, &h)?);
    for _ in 0..steps {
        let lh = s.laplacian_apply(&h, w)?;
        let next: Vec<f64> = h
            .values()
            .iter()
            .zip(lh.values())
            .map(|(x, y)| x - step * y)
            .collect();
        let prev = std::mem::replace(&mut h, raw_signal(h0.num_nodes(), h0.dim(), next));
        trace.states.push(prev);
        trace.energies.push(s.energy(&h, w)?);
        trace.pair_distances.push(oversmoothing_metric(g, &h)?);
    }
    trace.states.push(h);
    Ok(trace)
}

// Divergent flows are legitimate output, so no finiteness check here.
fn raw_signal(n: usize, d: usize, values: Vec<f64>) -> NodeSignal {
    let mut s = NodeSignal::zeros(n, d);
    for u in 0..n {
        s.row_mut(u).copy_from_slice(&values[u * d..(u + 1) * d]);
    }
    s
}

/// Mean Euclidean distance between the endpoints of every edge.
pub fn oversmoothing_metric(g: &Graph, h: &NodeSignal) -> Result<f64> {
    if h.num_nodes() != g.num_nodes() {
        return shape_err(format!("signal has {} rows, graph has {} nodes", h.num_nodes(), g.num_nodes()));
    }
    if g.num_edges() == 0 {
        return Err(Error::InvalidArgument("oversmoothing metric needs at least one edge".into()));
    }
    let total: f64 = g
        .edges()
        .iter()
        .map(|&(u, v)| {
            h.row(u)
                .iter()
                .zip(h.row(v))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / g.num_edges() as f64)
}

/// Symmetric-normalized propagation with self-loops,
/// `h' = D̃^{-1/2} (A + I) D̃^{-1/2} h` where `D̃ = D + I`.
pub fn gcn_diffuse_step(g: &Graph, h: &NodeSignal) -> Result<NodeSignal> {
    if h.num_nodes() != g.num_nodes() {
        return shape_err(format!("signal has {} rows, graph has {} nodes", h.num_nodes(), g.num_nodes()));
    }
    let d = h.dim();
    let inv_sqrt: Vec<f64> = g
        .degrees()
        .iter()
        .map(|&k| 1.0 / ((k + 1) as f64).sqrt())
        .collect();
    let mut out = NodeSignal::zeros(g.num_nodes(), d);
    for u in 0..g.num_nodes() {
        let c = inv_sqrt[u] * inv_sqrt[u];
        for k in 0..d {
            out.row_mut(u)[k] += c * h.row(u)[k];
        }
    }
    for &(u, v) in g.edges() {
        let c = inv_sqrt[u] * inv_sqrt[v];
        for k in 0..d {
            let (hu, hv) = (h.row(u)[k], h.row(v)[k]);
            out.row_mut(u)[k] += c * hv;
            out.row_mut(v)[k] += c * hu;
        }
    }
    Ok(out)
}
