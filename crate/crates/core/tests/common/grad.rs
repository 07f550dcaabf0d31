//! Finite-difference gradient checks of every tape primitive and of the
//! full model.

use std::sync::Arc;

use stsheaf::autodiff::{Tape, Tensor, Var};
use stsheaf::model::{forward, BoundParams, GraphContext, ModelConfig, ModelParams, Variant};
use stsheaf::Graph;

use super::*;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

fn check(out: &mut Vec<(&'static str, f64)>, name: &'static str, inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) {
    out.push((name, gradcheck(inputs, build, STEP)));
}

/// `(primitive, worst relative error)` for every differentiable operation.
pub fn primitive_errors() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    elementwise(&mut out);
    matmul(&mut out);
    shapes(&mut out);
    normalization(&mut out);
    gather_scatter(&mut out);
    composed(&mut out);
    out
}

fn elementwise(out: &mut Vec<(&'static str, f64)>) {
    let mut r = rng(1);
    let a = rand_tensor(&mut r, &[3, 4]);
    let b = rand_tensor(&mut r, &[3, 4]);
    check(out, "add", &[a.clone(), b.clone()], |t, v| {
        let y = t.add(v[0], v[1]).unwrap();
        project_to_scalar(t, y, 9)
    });
    check(out, "sub", &[a.clone(), b.clone()], |t, v| {
        let y = t.sub(v[0], v[1]).unwrap();
        project_to_scalar(t, y, 9)
    });
    check(out, "mul", &[a.clone(), b.clone()], |t, v| {
        let y = t.mul(v[0], v[1]).unwrap();
        project_to_scalar(t, y, 9)
    });
    check(out, "scale", &[a.clone()], |t, v| {
        let y = t.scale(v[0], -1.7);
        project_to_scalar(t, y, 9)
    });
    check(out, "sigmoid", &[a.clone()], |t, v| {
        let y = t.sigmoid(v[0]);
        project_to_scalar(t, y, 9)
    });
    check(out, "relu", &[a.clone()], |t, v| {
        let y = t.relu(v[0]);
        project_to_scalar(t, y, 9)
    });
    check(out, "abs", &[a.clone()], |t, v| {
        let y = t.abs(v[0]);
        project_to_scalar(t, y, 9)
    });
    let bias = rand_tensor(&mut r, &[4]);
    check(out, "add_row", &[a.clone(), bias], |t, v| {
        let y = t.add_row(v[0], v[1]).unwrap();
        project_to_scalar(t, y, 9)
    });
    check(out, "sum", &[a.clone()], |t, v| {
        let y = t.mul(v[0], v[0]).unwrap();
        t.sum(y)
    });
    check(out, "mean", &[a], |t, v| {
        let y = t.mul(v[0], v[0]).unwrap();
        t.mean(y).unwrap()
    });
}

fn matmul(out: &mut Vec<(&'static str, f64)>) {
    let mut r = rng(2);
    let x = rand_tensor(&mut r, &[2, 3, 4]);
    let w = rand_tensor(&mut r, &[4, 5]);
    check(out, "matmul shared", &[x.clone(), w], |t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        project_to_scalar(t, y, 3)
    });
    let b = rand_tensor(&mut r, &[2, 4, 3]);
    check(out, "matmul batched", &[x, b], |t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        project_to_scalar(t, y, 3)
    });
}

fn shapes(out: &mut Vec<(&'static str, f64)>) {
    let mut r = rng(3);
    let x = rand_tensor(&mut r, &[2, 3, 4]);
    let y = rand_tensor(&mut r, &[2, 3, 2]);
    check(out, "concat", &[x.clone(), y], |t, v| {
        let c = t.concat(&[v[0], v[1]]).unwrap();
        project_to_scalar(t, c, 4)
    });
    check(out, "slice", &[x.clone()], |t, v| {
        let c = t.slice(v[0], 1, 2).unwrap();
        project_to_scalar(t, c, 4)
    });
    check(out, "reshape", &[x.clone()], |t, v| {
        let c = t.reshape(v[0], &[6, 4]).unwrap();
        project_to_scalar(t, c, 4)
    });
    check(out, "permute", &[x.clone()], |t, v| {
        let c = t.permute(v[0], &[2, 0, 1]).unwrap();
        project_to_scalar(t, c, 4)
    });
    check(out, "transpose", &[x], |t, v| {
        let c = t.transpose(v[0]).unwrap();
        project_to_scalar(t, c, 4)
    });
}

fn normalization(out: &mut Vec<(&'static str, f64)>) {
    let mut r = rng(4);
    let x = rand_tensor(&mut r, &[3, 5]);
    check(out, "softmax", &[x.clone()], |t, v| {
        let y = t.softmax(v[0]).unwrap();
        project_to_scalar(t, y, 5)
    });
    let gain = rand_tensor(&mut r, &[5]);
    let bias = rand_tensor(&mut r, &[5]);
    check(out, "layer_norm", &[x, gain, bias], |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2]).unwrap();
        project_to_scalar(t, y, 5)
    });
}

fn gather_scatter(out: &mut Vec<(&'static str, f64)>) {
    let mut r = rng(5);
    let x = rand_tensor(&mut r, &[4, 3]);
    let idx: Arc<[usize]> = Arc::from(vec![2, 0, 2, 3, 1]);
    check(out, "gather_rows", &[x], |t, v| {
        let y = t.gather_rows(v[0], idx.clone()).unwrap();
        project_to_scalar(t, y, 6)
    });
    let e = rand_tensor(&mut r, &[5, 3]);
    let src: Arc<[usize]> = Arc::from(vec![0, 1, 2, 3, 0]);
    let dst: Arc<[usize]> = Arc::from(vec![1, 2, 3, 0, 2]);
    let w: Arc<[f64]> = Arc::from(vec![0.5, 1.5, -0.3, 2.0, 0.7]);
    check(out, "scatter_add_signed", &[e.clone()], |t, v| {
        let y = t.scatter_add_signed(v[0], src.clone(), dst.clone(), Some(w.clone()), 4).unwrap();
        project_to_scalar(t, y, 6)
    });
    check(out, "scatter_add", &[e], |t, v| {
        let y = t.scatter_add(v[0], dst.clone(), w.clone(), 4).unwrap();
        project_to_scalar(t, y, 6)
    });
}

fn composed(out: &mut Vec<(&'static str, f64)>) {
    let mut r = rng(6);
    let x = rand_tensor(&mut r, &[5, 3]);
    let w1 = rand_tensor(&mut r, &[3, 4]);
    let b1 = rand_tensor(&mut r, &[4]);
    let w2 = rand_tensor(&mut r, &[4, 2]);
    check(out, "mlp", &[x, w1, b1, w2], |t, v| {
        let h = t.matmul(v[0], v[1]).unwrap();
        let h = t.add_row(h, v[2]).unwrap();
        let h = t.sigmoid(h);
        let y = t.matmul(h, v[3]).unwrap();
        let y = t.sigmoid(y);
        t.mean(y).unwrap()
    });
}

fn tiny_model(variant: Variant) -> (Graph, ModelParams, Tensor) {
    let g = Graph::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]).unwrap();
    let cfg = ModelConfig {
        f_in: 1,
        f_out: 1,
        embed_dim: 4,
        stalk_dim: 2,
        num_heads: 2,
        num_layers: 2,
        horizon: 2,
        window: 4,
        residual_scale: 0.5,
        variant,
    };
    let mut params = ModelParams::init(&cfg, 4, 17).unwrap();
    // Lift the residual map's output layer off its near-zero start so its
    // gradient path is exercised at full strength.
    let mut r = rng(18);
    if let Some(t) = params.get_mut("rres.w2") {
        *t = rand_tensor(&mut r, &t.shape().to_vec());
    }
    let x = rand_tensor(&mut r, &[2, 4, 4, 1]);
    (g, params, x)
}

/// Worst relative gradient error of the full model over all parameters.
pub fn model_error(variant: Variant) -> f64 {
    let (g, params, x) = tiny_model(variant);
    let ctx = GraphContext::new(&g);
    let upstream = {
        let mut r = rng(99);
        rand_tensor(&mut r, &[2, 2, 4, 1])
    };
    let loss_of = |p: &ModelParams, requires_grad: bool| {
        let mut tape = Tape::new();
        let bp = BoundParams::bind(p, &mut tape, requires_grad);
        let vars = bp.vars().to_vec();
        let y = forward(&mut tape, &bp, &x, &ctx).unwrap();
        let u = tape.constant(upstream.clone());
        let prod = tape.mul(y, u).unwrap();
        let loss = tape.sum(prod);
        (tape, vars, loss)
    };
    let (mut tape, vars, loss) = loss_of(&params, true);
    let mut grads = tape.backward(loss).unwrap();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (i, &v) in vars.iter().enumerate() {
        let g = grads.take(v).unwrap();
        analytic.extend_from_slice(g.data());
        let base = params.tensors()[i].data().to_vec();
        numeric.extend(fd_gradient(
            |vals| {
                let mut p = params.clone();
                p.tensors_mut()[i].data_mut().copy_from_slice(vals);
                let (t, _, l) = loss_of(&p, false);
                t.value(l).item()
            },
            &base,
            STEP,
        ));
    }
    rel_err(&analytic, &numeric)
}

