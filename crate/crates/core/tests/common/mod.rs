//! Independent oracles shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use ersinv::nn::{backward, forward, ops, LayerParams, Mode, NetworkSpec, Parameters, Tensor4};
use ersinv::objective::{batch_loss, LossConfig};
use ersinv::raster::Raster;
use ersinv::rng::rng_from_seed;
use rand::Rng as _;

/// Deterministic probe positions spread over `len` entries.
pub fn probe_indices(len: usize, probes: usize) -> Vec<usize> {
    (0..probes).map(|p| (p * 7919 + 13) % len).collect()
}

/// Worst relative disagreement between `analytic` and a central difference
/// of `f` at the probe positions. The denominator is floored at `1e-6` so
/// vanishing gradients are compared absolutely.
pub fn central_difference_error(
    v: &[f64],
    analytic: &[f64],
    probes: &[usize],
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut a = v.to_vec();
    for &i in probes {
        a[i] = v[i] + h;
        let up = f(&a);
        a[i] = v[i] - h;
        let dn = f(&a);
        a[i] = v[i];
        let num = (up - dn) / (2.0 * h);
        let den = analytic[i].abs().max(num.abs()).max(1e-6);
        worst = worst.max((analytic[i] - num).abs() / den);
    }
    worst
}

pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor4 {
    let mut rng = rng_from_seed(seed);
    let len = shape.iter().product();
    Tensor4::from_vec(
        shape,
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

pub fn random_target(shape: [usize; 4], seed: u64) -> Tensor4 {
    let mut rng = rng_from_seed(seed);
    let len = shape.iter().product();
    Tensor4::from_vec(
        shape,
        (0..len).map(|_| rng.random_range(0.05..0.95)).collect(),
    )
    .unwrap()
}

/// Training-mode loss of a network output against `target`.
pub fn network_loss(
    spec: &NetworkSpec,
    params: &Parameters,
    x: &Tensor4,
    target: &Tensor4,
    cfg: &LossConfig,
) -> f64 {
    let (out, _) = forward(spec, params, x, Mode::Train).unwrap();
    batch_loss(&out, target, cfg).unwrap().0
}

/// Parameters with positive kernels, each output channel's kernel scaled
/// to unit sum, and small positive biases. ReLUs stay open on positive
/// inputs, no path cancels, and activations stay far from sigmoid
/// saturation.
pub fn positive_parameters(spec: &NetworkSpec, seed: u64) -> Parameters {
    let mut params = Parameters::init(spec, seed);
    for layer in &mut params.layers {
        if let LayerParams::Conv { w, b } | LayerParams::TConv { w, b } = layer {
            let per_out = w.len() / b.len();
            for chunk in w.chunks_mut(per_out) {
                chunk.iter_mut().for_each(|v| *v = v.abs() + 1e-3);
                let total: f64 = chunk.iter().sum();
                chunk.iter_mut().for_each(|v| *v /= total);
            }
            b.iter_mut().for_each(|v| *v = 0.01);
        }
    }
    params
}

/// Bounding extent `(rows, cols)` of the input cells that receive nonzero
/// gradient from output cell `(oi, oj)`, united over `draws` random positive
/// inputs. Max-pooling routes gradient to one argmax per window, so a single
/// input only reveals part of the support; the union recovers all of it.
pub fn gradient_footprint(
    spec: &NetworkSpec,
    params: &Parameters,
    shape: [usize; 4],
    oi: usize,
    oj: usize,
    draws: usize,
    seed: u64,
) -> (usize, usize) {
    let mut rng = rng_from_seed(seed);
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for _ in 0..draws {
        let len = shape.iter().product();
        let x = Tensor4::from_vec(
            shape,
            (0..len).map(|_| rng.random_range(0.1..1.0)).collect(),
        )
        .unwrap();
        let (out, cache) = forward(spec, params, &x, Mode::Eval).unwrap();
        let mut g = Tensor4::zeros(out.n, out.c, out.h, out.w);
        g.set(0, 0, oi, oj, 1.0);
        let (_, dx) = backward(spec, params, &cache, &g).unwrap();
        for c in 0..dx.c {
            for i in 0..dx.h {
                for j in 0..dx.w {
                    if dx.get(0, c, i, j) != 0.0 {
                        r0 = r0.min(i);
                        r1 = r1.max(i);
                        c0 = c0.min(j);
                        c1 = c1.max(j);
                    }
                }
            }
        }
    }
    assert!(r0 != usize::MAX, "empty footprint");
    (r1 - r0 + 1, c1 - c0 + 1)
}

pub const LINEAR_TOLERANCE: f64 = 1e-4;
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;
pub const PROBES: usize = 20;
const STEP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: &'static str,
    pub worst: f64,
    pub tolerance: f64,
    pub probes: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

fn check(
    name: &'static str,
    tolerance: f64,
    v: &[f64],
    analytic: &[f64],
    f: impl FnMut(&[f64]) -> f64,
) -> GradCheck {
    let probes = probe_indices(v.len(), PROBES);
    GradCheck {
        name,
        worst: central_difference_error(v, analytic, &probes, STEP, f),
        tolerance,
        probes: probes.len(),
    }
}

fn with(t: &Tensor4, v: &[f64]) -> Tensor4 {
    Tensor4::from_vec(t.shape(), v.to_vec()).unwrap()
}

fn dot(a: &Tensor4, r: &Tensor4) -> f64 {
    a.data.iter().zip(&r.data).map(|(x, y)| x * y).sum()
}

pub fn random_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Central-difference checks of every layer adjoint and of the loss
/// gradient. Each op is contracted with a random cotangent `r`, so the
/// checked scalar is `⟨op(x), r⟩`.
pub fn op_gradient_checks() -> Vec<GradCheck> {
    let (lin, comp) = (LINEAR_TOLERANCE, COMPOSITE_TOLERANCE);
    let mut out = Vec::new();

    let x = random_tensor([2, 3, 6, 5], 1);
    let (w, b) = (random_vec(4 * 3 * 9, 2), random_vec(4, 3));
    let y = ops::conv3x3_forward(&x, &w, &b, 4).unwrap();
    let r = random_tensor(y.shape(), 4);
    let (dx, dw, db) = ops::conv3x3_backward(&r, &x, &w).unwrap();
    let conv =
        |x: &Tensor4, w: &[f64], b: &[f64]| dot(&ops::conv3x3_forward(x, w, b, 4).unwrap(), &r);
    out.push(check("conv3x3 input", lin, &x.data, &dx.data, |v| {
        conv(&with(&x, v), &w, &b)
    }));
    out.push(check("conv3x3 kernel", lin, &w, &dw, |v| conv(&x, v, &b)));
    out.push(check("conv3x3 bias", lin, &b, &db, |v| conv(&x, &w, v)));

    let x = random_tensor([2, 3, 3, 4], 5);
    let (w, b) = (random_vec(2 * 3 * 4, 6), random_vec(2, 7));
    let y = ops::tconv2x2_forward(&x, &w, &b, 2).unwrap();
    let r = random_tensor(y.shape(), 8);
    let (dx, dw, db) = ops::tconv2x2_backward(&r, &x, &w).unwrap();
    let tconv =
        |x: &Tensor4, w: &[f64], b: &[f64]| dot(&ops::tconv2x2_forward(x, w, b, 2).unwrap(), &r);
    out.push(check("tconv2x2 input", lin, &x.data, &dx.data, |v| {
        tconv(&with(&x, v), &w, &b)
    }));
    out.push(check("tconv2x2 kernel", lin, &w, &dw, |v| tconv(&x, v, &b)));
    out.push(check("tconv2x2 bias", lin, &b, &db, |v| tconv(&x, &w, v)));

    let x = random_tensor([2, 3, 4, 6], 9);
    let r = random_tensor(x.shape(), 10);
    let dx = ops::relu_backward(&r, &x);
    out.push(check("relu", lin, &x.data, &dx.data, |v| {
        dot(&ops::relu_forward(&with(&x, v)), &r)
    }));

    let (y, arg) = ops::maxpool2x2_forward(&x).unwrap();
    let r = random_tensor(y.shape(), 11);
    let dx = ops::maxpool2x2_backward(&r, &arg, x.shape()).unwrap();
    out.push(check("maxpool2x2", lin, &x.data, &dx.data, |v| {
        dot(&ops::maxpool2x2_forward(&with(&x, v)).unwrap().0, &r)
    }));

    let (a, c) = (
        random_tensor([2, 2, 3, 4], 12),
        random_tensor([2, 3, 3, 4], 13),
    );
    let r = random_tensor([2, 5, 3, 4], 14);
    let (da, dc) = ops::concat_backward(&r, 2);
    out.push(check("concat first", lin, &a.data, &da.data, |v| {
        dot(&ops::concat_forward(&with(&a, v), &c).unwrap(), &r)
    }));
    out.push(check("concat second", lin, &c.data, &dc.data, |v| {
        dot(&ops::concat_forward(&a, &with(&c, v)).unwrap(), &r)
    }));

    let (a, c) = (
        random_tensor([2, 2, 3, 4], 15),
        random_tensor([2, 2, 3, 4], 16),
    );
    let r = random_tensor(a.shape(), 17);
    out.push(check("residual add", lin, &a.data, &r.data, |v| {
        dot(&ops::residual_add_forward(&with(&a, v), &c).unwrap(), &r)
    }));

    let x = random_tensor([2, 3, 4, 5], 18).map(|v| 3.0 * v);
    let y = ops::sigmoid_forward(&x);
    let r = random_tensor(y.shape(), 19);
    let dx = ops::sigmoid_backward(&r, &y);
    out.push(check("sigmoid", comp, &x.data, &dx.data, |v| {
        dot(&ops::sigmoid_forward(&with(&x, v)), &r)
    }));

    let x = random_tensor([3, 4, 3, 4], 20).map(|v| 2.0 * v + 0.5);
    let (gamma, beta) = (random_vec(4, 21), random_vec(4, 22));
    let (y, batch) = ops::batchnorm_train_forward(&x, &gamma, &beta).unwrap();
    let r = random_tensor(y.shape(), 23);
    let (dx, dg, dbeta) = ops::batchnorm_train_backward(&r, &batch, &gamma);
    let bn = |x: &Tensor4, g: &[f64], b: &[f64]| {
        dot(&ops::batchnorm_train_forward(x, g, b).unwrap().0, &r)
    };
    out.push(check(
        "batchnorm train input",
        comp,
        &x.data,
        &dx.data,
        |v| bn(&with(&x, v), &gamma, &beta),
    ));
    out.push(check("batchnorm train scale", comp, &gamma, &dg, |v| {
        bn(&x, v, &beta)
    }));
    out.push(check("batchnorm train shift", comp, &beta, &dbeta, |v| {
        bn(&x, &gamma, v)
    }));

    let (mean, var) = (
        random_vec(4, 24),
        random_vec(4, 25)
            .iter()
            .map(|v| v.abs() + 0.5)
            .collect::<Vec<_>>(),
    );
    let (dx, dg, dbeta) = ops::batchnorm_eval_backward(&r, &x, &gamma, &mean, &var);
    let bne = |x: &Tensor4, g: &[f64], b: &[f64]| {
        dot(&ops::batchnorm_eval_forward(x, g, b, &mean, &var), &r)
    };
    out.push(check(
        "batchnorm eval input",
        comp,
        &x.data,
        &dx.data,
        |v| bne(&with(&x, v), &gamma, &beta),
    ));
    out.push(check("batchnorm eval scale", comp, &gamma, &dg, |v| {
        bne(&x, v, &beta)
    }));
    out.push(check("batchnorm eval shift", comp, &beta, &dbeta, |v| {
        bne(&x, &gamma, v)
    }));

    let pred = random_target([2, 1, 6, 7], 26);
    let target = random_target(pred.shape(), 27);
    let cfg = LossConfig::default();
    let (_, g) = batch_loss(&pred, &target, &cfg).unwrap();
    out.push(check(
        "depth-weighted TV loss",
        comp,
        &pred.data,
        &g.data,
        |v| batch_loss(&with(&pred, v), &target, &cfg).unwrap().0,
    ));
    out
}

fn with_trainable(params: &Parameters, flat: &[f64]) -> Parameters {
    let mut p = params.clone();
    let mut k = 0;
    for (slice, _) in p.trainable_mut() {
        slice.copy_from_slice(&flat[k..k + slice.len()]);
        k += slice.len();
    }
    p
}

/// Whole-network checks on a two-level encoder-decoder with one residual
/// block, in training mode, against the default loss: `(parameters, input)`.
pub fn network_gradient_checks() -> Vec<GradCheck> {
    let spec = NetworkSpec::ersinvnet(3, &[2, 3], 1).unwrap();
    let params = Parameters::init(&spec, 31);
    let x = random_tensor([2, 3, 8, 8], 32);
    let target = random_target([2, 1, 8, 8], 33);
    let cfg = LossConfig::default();
    let (out, cache) = forward(&spec, &params, &x, Mode::Train).unwrap();
    let (_, g) = batch_loss(&out, &target, &cfg).unwrap();
    let (grads, dx) = backward(&spec, &params, &cache, &g).unwrap();
    let flat: Vec<f64> = params.trainable().concat();
    let analytic: Vec<f64> = grads.slices().concat();
    vec![
        check(
            "network parameters",
            COMPOSITE_TOLERANCE,
            &flat,
            &analytic,
            |v| network_loss(&spec, &with_trainable(&params, v), &x, &target, &cfg),
        ),
        check(
            "network input",
            COMPOSITE_TOLERANCE,
            &x.data,
            &dx.data,
            |v| network_loss(&spec, &params, &with(&x, v), &target, &cfg),
        ),
    ]
}

/// `(i + λ)^(β/2)` evaluated directly.
pub fn oracle_depth_weight(i: usize, beta: f64, lambda: f64) -> f64 {
    (i as f64 + lambda).powf(beta / 2.0)
}

/// Depth-weighted squared misfit, one cell at a time.
pub fn oracle_value(pred: &Raster, target: &Raster, beta: f64, lambda: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..pred.rows() {
        for j in 0..pred.cols() {
            let e = pred.get(i, j) - target.get(i, j);
            s += oracle_depth_weight(i, beta, lambda) * e * e;
        }
    }
    s
}

/// Total variation over every vertical and horizontal neighbour pair.
pub fn oracle_tv(m: &Raster) -> f64 {
    let mut s = 0.0;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if i + 1 < m.rows() {
                s += (m.get(i + 1, j) - m.get(i, j)).abs();
            }
            if j + 1 < m.cols() {
                s += (m.get(i, j + 1) - m.get(i, j)).abs();
            }
        }
    }
    s
}

pub fn oracle_loss(pred: &Raster, target: &Raster, alpha: f64, beta: f64, lambda: f64) -> f64 {
    (oracle_value(pred, target, beta, lambda) + alpha * oracle_tv(pred))
        / (pred.rows() * pred.cols()) as f64
}

/// `1 + D/D_max` with `D` found by scanning every anomalous cell.
pub fn oracle_weights(anomalous: &[Vec<bool>]) -> Vec<Vec<f64>> {
    let (rows, cols) = (anomalous.len(), anomalous[0].len());
    let cells: Vec<(usize, usize)> = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .filter(|&(i, j)| anomalous[i][j])
        .collect();
    if cells.is_empty() {
        return vec![vec![1.0; cols]; rows];
    }
    let d: Vec<Vec<usize>> = (0..rows)
        .map(|i| {
            (0..cols)
                .map(|j| {
                    cells
                        .iter()
                        .map(|&(a, b)| a.abs_diff(i).max(b.abs_diff(j)))
                        .min()
                        .unwrap()
                })
                .collect()
        })
        .collect();
    let dmax = *d.iter().flatten().max().unwrap();
    d.iter()
        .map(|row| {
            row.iter()
                .map(|&v| {
                    if dmax == 0 {
                        1.0
                    } else {
                        1.0 + v as f64 / dmax as f64
                    }
                })
                .collect()
        })
        .collect()
}

pub fn oracle_wmse(preds: &[Raster], targets: &[Raster], weights: &[Vec<Vec<f64>>]) -> f64 {
    let mut total = 0.0;
    for ((p, t), w) in preds.iter().zip(targets).zip(weights) {
        for i in 0..p.rows() {
            for j in 0..p.cols() {
                let e = w[i][j] * (p.get(i, j) - t.get(i, j));
                total += e * e;
            }
        }
    }
    total / preds.len() as f64
}

/// Mean over samples of the cosine between weighted, mean-removed vectors.
pub fn oracle_wr(preds: &[Raster], targets: &[Raster], weights: &[Vec<Vec<f64>>]) -> f64 {
    let mut total = 0.0;
    for ((p, t), w) in preds.iter().zip(targets).zip(weights) {
        let n = (p.rows() * p.cols()) as f64;
        let (mut mp, mut mt) = (0.0, 0.0);
        for i in 0..p.rows() {
            for j in 0..p.cols() {
                mp += p.get(i, j) / n;
                mt += t.get(i, j) / n;
            }
        }
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for i in 0..p.rows() {
            for j in 0..p.cols() {
                let a = w[i][j] * (p.get(i, j) - mp);
                let b = w[i][j] * (t.get(i, j) - mt);
                ab += a * b;
                aa += a * a;
                bb += b * b;
            }
        }
        total += ab / (aa.sqrt() * bb.sqrt());
    }
    total / preds.len() as f64
}
