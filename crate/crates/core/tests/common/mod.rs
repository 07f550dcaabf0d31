//! Independent oracles shared by the integration tests and the acceptance
//! suite: dense matrices assembled entry by entry from the definitions,
//! central finite differences and random instance generators.

#![allow(dead_code)]

pub mod grad;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stsheaf::autodiff::{Tape, Tensor, Var};
use stsheaf::{Graph, NodeSignal, Sheaf};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// Random graph on `n` nodes: each pair is an edge with probability `p`,
/// orientation chosen at random.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push(if rng.random_bool(0.5) { (u, v) } else { (v, u) });
            }
        }
    }
    Graph::from_edges(n, edges).unwrap()
}

/// Random connected graph: a random spanning tree plus extra edges.
pub fn random_connected_graph(rng: &mut ChaCha8Rng, n: usize, p_extra: f64) -> Graph {
    let mut edges = Vec::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        edges.push((u, v));
    }
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p_extra) {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, edges).unwrap()
}

pub struct Instance {
    pub graph: Graph,
    pub d: usize,
    pub r_src: Vec<f64>,
    pub r_dst: Vec<f64>,
    pub w: Vec<f64>,
    pub h: NodeSignal,
}

impl Instance {
    pub fn sheaf(&self) -> Sheaf<'_> {
        Sheaf::new(&self.graph, self.d, self.r_src.clone(), self.r_dst.clone()).unwrap()
    }
}

/// `2 ≤ N ≤ max_n`, `1 ≤ d ≤ max_d`, normal restriction entries, weights in
/// `(0.1, 2)` and a normal signal.
pub fn random_instance(seed: u64, max_n: usize, max_d: usize) -> Instance {
    let mut r = rng(seed);
    let n = r.random_range(2..=max_n);
    let d = r.random_range(1..=max_d);
    let graph = random_graph(&mut r, n, 0.5);
    let e = graph.num_edges();
    let r_src = normals(&mut r, e * d);
    let r_dst = normals(&mut r, e * d);
    let w = (0..e).map(|_| r.random_range(0.1..2.0)).collect();
    let h = NodeSignal::new(n, d, normals(&mut r, n * d)).unwrap();
    Instance {
        graph,
        d,
        r_src,
        r_dst,
        w,
        h,
    }
}

/// `δ` as an `(E·d) × (N·d)` matrix: block `(e, dst)` is `diag(r_dst)` and
/// block `(e, src)` is `−diag(r_src)`.
pub fn dense_coboundary(g: &Graph, d: usize, r_src: &[f64], r_dst: &[f64]) -> DMatrix<f64> {
    let (n, e) = (g.num_nodes(), g.num_edges());
    let mut m = DMatrix::zeros(e * d, n * d);
    for (i, &(u, v)) in g.edges().iter().enumerate() {
        for k in 0..d {
            m[(i * d + k, v * d + k)] += r_dst[i * d + k];
            m[(i * d + k, u * d + k)] -= r_src[i * d + k];
        }
    }
    m
}

/// `δᵀ · diag(w ⊗ 1_d) · δ`.
pub fn dense_laplacian_oracle(g: &Graph, d: usize, r_src: &[f64], r_dst: &[f64], w: &[f64]) -> DMatrix<f64> {
    let delta = dense_coboundary(g, d, r_src, r_dst);
    let wd = DVector::from_iterator(w.len() * d, w.iter().flat_map(|&x| std::iter::repeat_n(x, d)));
    delta.transpose() * DMatrix::from_diagonal(&wd) * delta
}

pub fn flatten(h: &NodeSignal) -> DVector<f64> {
    DVector::from_column_slice(h.values())
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of a scalar function.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let up = f(&x);
            x[i] = orig - step;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Compares reverse-mode gradients of `build` (which maps leaves to a scalar
/// loss) with central differences for every input. Returns the worst
/// relative error over inputs.
pub fn gradcheck(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var, step: f64) -> f64 {
    let eval = |vals: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).unwrap().data().to_vec();
        let numeric = fd_gradient(
            |x| {
                let mut vals = inputs.to_vec();
                vals[i] = Tensor::new(t.shape().to_vec(), x.to_vec()).unwrap();
                eval(&vals)
            },
            t.data(),
            step,
        );
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Random normal tensor.
pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), normals(rng, n)).unwrap()
}

/// Fixed random projection to a scalar, so every output entry gets a
/// distinct upstream gradient.
pub fn project_to_scalar(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let shape = tape.shape(x).to_vec();
    let mut r = rng(seed);
    let c = tape.constant(rand_tensor(&mut r, &shape));
    let p = tape.mul(x, c).unwrap();
    tape.sum(p)
}

pub fn dense_eigs(inst: &Instance) -> DVector<f64> {
    let l = dense_laplacian_oracle(&inst.graph, inst.d, &inst.r_src, &inst.r_dst, &inst.w);
    SymmetricEigen::new(l).eigenvalues
}

/// Random connected instance whose Laplacian has no eigenvalue at or below
/// `tol · λ_max`.
pub fn trivial_kernel_instance(seed: u64, tol: f64) -> Instance {
    let mut s = seed;
    loop {
        let mut r = rng(s);
        let n = r.random_range(3..=8);
        let d = r.random_range(1..=3);
        let graph = random_connected_graph(&mut r, n, 0.4);
        let e = graph.num_edges();
        let inst = Instance {
            d,
            r_src: normals(&mut r, e * d),
            r_dst: normals(&mut r, e * d),
            w: (0..e).map(|_| r.random_range(0.1..2.0)).collect(),
            h: NodeSignal::new(n, d, normals(&mut r, n * d)).unwrap(),
            graph,
        };
        let eig = dense_eigs(&inst);
        let top = eig.amax();
        if eig.iter().all(|&x| x > tol * top) {
            return inst;
        }
        s += 1_000_000;
    }
}

/// Number of singular values above `1e-8` of the largest.
pub fn rank_oracle(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&x| x > 1e-8 * top).count()
}
