use std::sync::Arc;

use super::tensor::{gemm, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Concat {
        parts: Vec<Var>,
        widths: Vec<usize>,
    },
    Slice {
        x: Var,
        start: usize,
        len: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Sigmoid(Var),
    Relu(Var),
    Abs(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows {
        x: Var,
        index: Arc<[usize]>,
    },
    ScatterAddSigned {
        x: Var,
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
        weights: Option<Arc<[f64]>>,
    },
    ScatterAdd {
        x: Var,
        index: Arc<[usize]>,
        coef: Arc<[f64]>,
    },
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Epsilon inside the layer-norm variance square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Append-only record of primitive applications for reverse-mode
/// differentiation. Inputs always precede outputs, so a reverse sweep over
/// the node list is a valid topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients from one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    /// `a: [..., m, k]` times `b: [k, n]` (shared across leading axes) or
    /// `b: [..., k, n]` with the same leading axes as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return shape_err(format!("matmul needs rank >= 2, got {sa:?} and {sb:?}"));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return shape_err(format!("matmul inner dims differ: {sa:?} x {sb:?}"));
        }
        let lead = &sa[..sa.len() - 2];
        let batch: usize = lead.iter().product();
        let shared_b = sb.len() == 2;
        if !shared_b && &sb[..sb.len() - 2] != lead {
            return shape_err(format!("matmul batch dims differ: {sa:?} x {sb:?}"));
        }
        let mut out_shape = sa.clone();
        *out_shape.last_mut().unwrap() = n;
        let mut out = vec![0.0; batch * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            if shared_b {
                gemm(batch * m, k, n, av, false, bv, false, &mut out, 0.0);
            } else {
                for i in 0..batch {
                    gemm(
                        m,
                        k,
                        n,
                        &av[i * m * k..(i + 1) * m * k],
                        false,
                        &bv[i * k * n..(i + 1) * k * n],
                        false,
                        &mut out[i * m * n..(i + 1) * m * n],
                        0.0,
                    );
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_b,
            },
            &[a, b],
        ))
    }

    fn zip_map(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(a, b, what)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map(a, b, "add", |p, q| p + q)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    /// Adds `bias: [c]` to every last-axis row of `x: [..., c]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.value(x).last_dim();
        if self.shape(bias) != [c] {
            return shape_err(format!(
                "row bias {:?} does not match last axis of {:?}",
                self.shape(bias),
                self.shape(x)
            ));
        }
        let b = self.value(bias).data().to_vec();
        let xv = self.value(x);
        let data = xv
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(&b).map(|(p, q)| p + q))
            .collect();
        let v = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(v, Op::AddRow { x, bias }, &[x, bias]))
    }

    /// Scalar multiple `c·x`.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let v = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|p| c * p).collect())
            .expect("same shape");
        self.push(v, Op::Scale { x, c }, &[x])
    }

    /// Concatenates along the last axis; all leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat of nothing");
        };
        let lead = self.shape(first)[..self.shape(first).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return shape_err(format!("concat leading axes differ: {:?} vs {:?}", s, lead));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let v = Tensor::new(shape, data)?;
        Ok(self.push(
            v,
            Op::Concat {
                parts: parts.to_vec(),
                widths,
            },
            parts,
        ))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if xv.shape().is_empty() || start + len > c || len == 0 {
            return shape_err(format!("slice {start}..{} of {:?}", start + len, xv.shape()));
        }
        let data = xv
            .data()
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let v = Tensor::new(shape, data)?;
        Ok(self.push(v, Op::Slice { x, start, len }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return shape_err(format!("transpose needs rank >= 2, got {:?}", self.shape(x)));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(x, &axes)
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let v = self.value(x).permute(axes)?;
        Ok(self.push(
            v,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            &[x],
        ))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let xv = self.value(x);
        Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&p| f(p)).collect())
            .expect("same shape")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.map(x, sigmoid);
        self.push(v, Op::Sigmoid(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.map(x, |p| p.max(0.0));
        self.push(v, Op::Relu(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v = self.map(x, f64::abs);
        self.push(v, Op::Abs(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if xv.shape().is_empty() || c == 0 {
            return shape_err(format!("softmax over empty axis of {:?}", xv.shape()));
        }
        let mut data = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(c) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|&p| (p - mx).exp()));
            let z: f64 = data[start..].iter().sum();
            data[start..].iter_mut().for_each(|p| *p /= z);
        }
        let v = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(v, Op::Softmax(x), &[x]))
    }

    /// Layer normalization over the last axis with affine `gain` and `bias`
    /// of shape `[c]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if xv.shape().is_empty() || c == 0 {
            return shape_err(format!("layer_norm over empty axis of {:?}", xv.shape()));
        }
        if self.shape(gain) != [c] || self.shape(bias) != [c] {
            return shape_err(format!(
                "layer_norm affine shapes {:?}/{:?} vs last axis {c}",
                self.shape(gain),
                self.shape(bias)
            ));
        }
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (j, &p) in row.iter().enumerate() {
                let xh = (p - mean) * is;
                xhat.push(xh);
                out.push(xh * gv[j] + bv[j]);
            }
        }
        let v = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Picks last-axis rows of `x` by `index`; output `[index.len(), c]`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.last_dim());
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return shape_err(format!("gather index {bad} out of range for {rows} rows"));
        }
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            data.extend_from_slice(&xv.data()[i * c..(i + 1) * c]);
        }
        let v = Tensor::new(vec![index.len(), c], data)?;
        Ok(self.push(v, Op::GatherRows { x, index }, &[x]))
    }

    /// Signed scatter of edge rows onto node rows: row `i` of `x: [m, c]` is
    /// added (scaled by `weights[i]`) to output row `src[i]` and subtracted
    /// from output row `dst[i]`. Output `[out_rows, c]`.
    pub fn scatter_add_signed(
        &mut self,
        x: Var,
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
        weights: Option<Arc<[f64]>>,
        out_rows: usize,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (m, c) = (xv.rows(), xv.last_dim());
        if src.len() != m || dst.len() != m || weights.as_ref().is_some_and(|w| w.len() != m) {
            return shape_err(format!(
                "scatter index lengths {}/{} for {m} rows",
                src.len(),
                dst.len()
            ));
        }
        if src.iter().chain(dst.iter()).any(|&i| i >= out_rows) {
            return shape_err(format!("scatter index out of range for {out_rows} rows"));
        }
        let mut out = vec![0.0; out_rows * c];
        for i in 0..m {
            let w = weights.as_ref().map_or(1.0, |w| w[i]);
            let row = &xv.data()[i * c..(i + 1) * c];
            let (s, d) = (src[i], dst[i]);
            for (j, &p) in row.iter().enumerate() {
                out[s * c + j] += w * p;
            }
            for (j, &p) in row.iter().enumerate() {
                out[d * c + j] -= w * p;
            }
        }
        let v = Tensor::new(vec![out_rows, c], out)?;
        Ok(self.push(
            v,
            Op::ScatterAddSigned {
                x,
                src,
                dst,
                weights,
            },
            &[x],
        ))
    }

    /// Weighted scatter: row `i` of `x: [m, c]` times `coef[i]` is added to
    /// output row `index[i]`.
    pub fn scatter_add(
        &mut self,
        x: Var,
        index: Arc<[usize]>,
        coef: Arc<[f64]>,
        out_rows: usize,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (m, c) = (xv.rows(), xv.last_dim());
        if index.len() != m || coef.len() != m {
            return shape_err(format!("scatter index length {} for {m} rows", index.len()));
        }
        if index.iter().any(|&i| i >= out_rows) {
            return shape_err(format!("scatter index out of range for {out_rows} rows"));
        }
        let mut out = vec![0.0; out_rows * c];
        for i in 0..m {
            let row = &xv.data()[i * c..(i + 1) * c];
            for (j, &p) in row.iter().enumerate() {
                out[index[i] * c + j] += coef[i] * p;
            }
        }
        let v = Tensor::new(vec![out_rows, c], out)?;
        Ok(self.push(v, Op::ScatterAdd { x, index, coef }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(v, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.numel() == 0 {
            return shape_err("mean of an empty tensor");
        }
        let v = Tensor::scalar(xv.data().iter().sum::<f64>() / xv.numel() as f64);
        Ok(self.push(v, Op::Mean(x), &[x]))
    }

    /// Reverse sweep from the scalar `loss`. Every leaf that requires
    /// gradients gets an entry, zero if the loss does not depend on it.
    /// A tape supports a single backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).numel() != 1 {
            return shape_err(format!("loss must be scalar, got shape {:?}", self.shape(loss)));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop(i, &g, &mut grads);
        }
        let out = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                    return None;
                }
                let data = g.unwrap_or_else(|| vec![0.0; node.value.numel()]);
                Some(Tensor::new(node.value.shape().to_vec(), data).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn backprop(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_b,
            } => {
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if let Some(ga) = self.slot(*a, grads) {
                    if *shared_b {
                        gemm(batch * m, n, k, g, false, bv, true, ga, 1.0);
                    } else {
                        for t in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &g[t * m * n..(t + 1) * m * n],
                                false,
                                &bv[t * k * n..(t + 1) * k * n],
                                true,
                                &mut ga[t * m * k..(t + 1) * m * k],
                                1.0,
                            );
                        }
                    }
                }
                if let Some(gb) = self.slot(*b, grads) {
                    if *shared_b {
                        gemm(k, batch * m, n, av, true, g, false, gb, 1.0);
                    } else {
                        for t in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                &av[t * m * k..(t + 1) * m * k],
                                true,
                                &g[t * m * n..(t + 1) * m * n],
                                false,
                                &mut gb[t * k * n..(t + 1) * k * n],
                                1.0,
                            );
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(*a, grads) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = self.slot(*b, grads) {
                    axpy(gb, g, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(*a, grads) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = self.slot(*b, grads) {
                    axpy(gb, g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(*a, grads) {
                    for ((o, &gi), &q) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gi * q;
                    }
                }
                if let Some(gb) = self.slot(*b, grads) {
                    for ((o, &gi), &p) in gb.iter_mut().zip(g).zip(av) {
                        *o += gi * p;
                    }
                }
            }
            Op::AddRow { x, bias } => {
                if let Some(gx) = self.slot(*x, grads) {
                    axpy(gx, g, 1.0);
                }
                if let Some(gb) = self.slot(*bias, grads) {
                    let c = gb.len();
                    for row in g.chunks(c) {
                        axpy(gb, row, 1.0);
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(gx) = self.slot(*x, grads) {
                    axpy(gx, g, *c);
                }
            }
            Op::Concat { parts, widths } => {
                let total: usize = widths.iter().sum();
                let rows = g.len() / total.max(1);
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(widths) {
                    if let Some(gp) = self.slot(p, grads) {
                        for r in 0..rows {
                            axpy(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                                1.0,
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice { x, start, len } => {
                let c = self.value(*x).last_dim();
                if let Some(gx) = self.slot(*x, grads) {
                    for (r, row) in g.chunks(*len).enumerate() {
                        axpy(&mut gx[r * c + start..r * c + start + len], row, 1.0);
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.slot(*x, grads) {
                    axpy(gx, g, 1.0);
                }
            }
            Op::Permute { x, axes } => {
                if let Some(gx) = self.slot(*x, grads) {
                    let mut inverse = vec![0; axes.len()];
                    for (i, &a) in axes.iter().enumerate() {
                        inverse[a] = i;
                    }
                    let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec())
                        .and_then(|t| t.permute(&inverse))
                        .expect("valid permutation");
                    axpy(gx, gt.data(), 1.0);
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = self.slot(*x, grads) {
                    for ((o, &gi), &s) in gx.iter_mut().zip(g).zip(y) {
                        *o += gi * s * (1.0 - s);
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(gx) = self.slot(*x, grads) {
                    for ((o, &gi), &s) in gx.iter_mut().zip(g).zip(y) {
                        if s > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                if let Some(gx) = self.slot(*x, grads) {
                    for ((o, &gi), &p) in gx.iter_mut().zip(g).zip(xv) {
                        if p > 0.0 {
                            *o += gi;
                        } else if p < 0.0 {
                            *o -= gi;
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let c = node.value.last_dim();
                if let Some(gx) = self.slot(*x, grads) {
                    for ((o, gr), yr) in gx.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            o[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = node.value.last_dim();
                let gv = self.value(*gain).data();
                if let Some(gg) = self.slot(*gain, grads) {
                    for (gr, xr) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            gg[j] += gr[j] * xr[j];
                        }
                    }
                }
                if let Some(gb) = self.slot(*bias, grads) {
                    for gr in g.chunks(c) {
                        axpy(gb, gr, 1.0);
                    }
                }
                if let Some(gx) = self.slot(*x, grads) {
                    let cf = c as f64;
                    let mut dxhat = vec![0.0; c];
                    for (r, (gr, xr)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                        for j in 0..c {
                            dxhat[j] = gr[j] * gv[j];
                        }
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(xr).map(|(p, q)| p * q).sum();
                        let o = &mut gx[r * c..(r + 1) * c];
                        for j in 0..c {
                            o[j] += inv_std[r] / cf * (cf * dxhat[j] - s1 - xr[j] * s2);
                        }
                    }
                }
            }
            Op::GatherRows { x, index } => {
                let c = node.value.last_dim();
                if let Some(gx) = self.slot(*x, grads) {
                    for (r, &src) in index.iter().enumerate() {
                        axpy(&mut gx[src * c..(src + 1) * c], &g[r * c..(r + 1) * c], 1.0);
                    }
                }
            }
            Op::ScatterAddSigned {
                x,
                src,
                dst,
                weights,
            } => {
                let c = node.value.last_dim();
                if let Some(gx) = self.slot(*x, grads) {
                    for i in 0..src.len() {
                        let w = weights.as_ref().map_or(1.0, |w| w[i]);
                        let (gs, gd) = (&g[src[i] * c..(src[i] + 1) * c], &g[dst[i] * c..(dst[i] + 1) * c]);
                        for j in 0..c {
                            gx[i * c + j] += w * (gs[j] - gd[j]);
                        }
                    }
                }
            }
            Op::ScatterAdd { x, index, coef } => {
                let c = node.value.last_dim();
                if let Some(gx) = self.slot(*x, grads) {
                    for (i, &t) in index.iter().enumerate() {
                        axpy(&mut gx[i * c..(i + 1) * c], &g[t * c..(t + 1) * c], coef[i]);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(*x, grads) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.slot(*x, grads) {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|o| *o += s);
                }
            }
        }
    }

    /// Gradient accumulator for `v`, allocated on first use; `None` when `v`
    /// does not require gradients.
    fn slot<'a>(&self, v: Var, grads: &'a mut [Option<Vec<f64>>]) -> Option<&'a mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
    }
}

fn axpy(out: &mut [f64], x: &[f64], a: f64) {
    for (o, &p) in out.iter_mut().zip(x) {
        *o += a * p;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
