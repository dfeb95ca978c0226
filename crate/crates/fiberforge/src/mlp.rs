//! Scalar MLP fields with analytic spatial derivatives and parameter adjoints.
//!
//! Each field is a small fully connected network `R^3 -> R` with smooth
//! activations plus a linear skip from the input to the output. Evaluation
//! propagates the value, the spatial gradient, and the spatial Hessian
//! through every layer in closed form (no finite differences). The backward
//! pass computes parameter gradients of any linear functional of
//! `(value, gradient, Hessian)` at a set of points, which is all the rest of
//! the pipeline ever needs.
//!
//! Points are processed in small blocks with channel-fused inner loops so the
//! hot GEMM-like kernels vectorize. Layout per layer state: for each unit,
//! `channels * block` contiguous lanes, channel order
//! `[value, gx, gy, gz, hxx, hyy, hzz, hxy, hyz, hzx]`.

use serde::{Deserialize, Serialize};

/// Number of points processed together in the fused kernels.
const BLOCK: usize = 32;

/// How much of the derivative stack a forward evaluation carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivLevel {
    /// Value only (1 channel).
    Value,
    /// Value and spatial gradient (4 channels).
    Grad,
    /// Value, gradient, and symmetric Hessian (10 channels).
    Hess,
}

impl DerivLevel {
    fn channels(self) -> usize {
        match self {
            DerivLevel::Value => 1,
            DerivLevel::Grad => 4,
            DerivLevel::Hess => 10,
        }
    }
}

/// Network shape: `hidden_layers` fully connected layers of `width` units,
/// smooth sigmoid-weighted-linear activations, linear scalar head plus an
/// input skip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub hidden_layers: usize,
    pub width: usize,
}

impl MlpShape {
    pub fn new(hidden_layers: usize, width: usize) -> Self {
        Self {
            hidden_layers,
            width,
        }
    }

    /// Flat parameter count: per hidden layer `W` and `b`, then the linear
    /// head `w_out, b_out`, then the 3 skip coefficients.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut fan_in = 3;
        for _ in 0..self.hidden_layers {
            n += self.width * fan_in + self.width;
            fan_in = self.width;
        }
        n + self.width + 1 + 3
    }

    fn layer_offsets(&self) -> Vec<(usize, usize, usize)> {
        // (weight offset, bias offset, fan_in) per hidden layer
        let mut offs = Vec::with_capacity(self.hidden_layers);
        let mut at = 0;
        let mut fan_in = 3;
        for _ in 0..self.hidden_layers {
            let w_off = at;
            at += self.width * fan_in;
            let b_off = at;
            at += self.width;
            offs.push((w_off, b_off, fan_in));
            fan_in = self.width;
        }
        offs
    }

    fn head_offsets(&self) -> (usize, usize, usize) {
        // (w_out offset, b_out offset, skip offset)
        let mut at = 0;
        let mut fan_in = 3;
        for _ in 0..self.hidden_layers {
            at += self.width * fan_in + self.width;
            fan_in = self.width;
        }
        (at, at + self.width, at + self.width + 1)
    }
}

/// Sigmoid-weighted linear activation and its first three derivatives.
/// The third derivative shows up when backpropagating through the Hessian.
#[inline]
fn act(z: f64) -> (f64, f64, f64, f64) {
    let u = 1.0 / (1.0 + (-z).exp());
    let up = u * (1.0 - u);
    let upp = up * (1.0 - 2.0 * u);
    let uppp = upp * (1.0 - 2.0 * u) - 2.0 * up * up;
    let phi = z * u;
    let d1 = u + z * up;
    let d2 = 2.0 * up + z * upp;
    let d3 = 3.0 * upp + z * uppp;
    (phi, d1, d2, d3)
}

/// Batched evaluation results, indexed like the input point slice.
#[derive(Debug, Clone, Default)]
pub struct EvalBatch {
    pub value: Vec<f64>,
    /// Gradient in the network's (normalized) input coordinates.
    pub grad: Vec<[f64; 3]>,
    /// Symmetric Hessian uniques `[xx, yy, zz, xy, yz, zx]`, normalized coords.
    pub hess: Vec<[f64; 6]>,
}

impl EvalBatch {
    pub fn clear(&mut self) {
        self.value.clear();
        self.grad.clear();
        self.hess.clear();
    }
}

/// Cotangent of one point's `(value, gradient, Hessian)` in normalized
/// coordinates. Off-diagonal Hessian cotangents must already carry both
/// symmetric slots (see `pack_hess_cotangent`).
#[derive(Debug, Clone, Copy, Default)]
pub struct Cotangent {
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [f64; 6],
}

impl Cotangent {
    pub fn is_zero(&self) -> bool {
        self.value == 0.0
            && self.grad.iter().all(|&g| g == 0.0)
            && self.hess.iter().all(|&h| h == 0.0)
    }
}

/// Pack a full 3x3 matrix cotangent into the symmetric-unique layout used by
/// `EvalBatch::hess`: diagonals map through, off-diagonals sum both slots.
pub fn pack_hess_cotangent(m: &nalgebra::Matrix3<f64>) -> [f64; 6] {
    [
        m[(0, 0)],
        m[(1, 1)],
        m[(2, 2)],
        m[(0, 1)] + m[(1, 0)],
        m[(1, 2)] + m[(2, 1)],
        m[(2, 0)] + m[(0, 2)],
    ]
}

/// Unpack hessian uniques into a symmetric 3x3 matrix.
pub fn unpack_hess(h: &[f64; 6]) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::new(
        h[0], h[3], h[5], //
        h[3], h[1], h[4], //
        h[5], h[4], h[2],
    )
}

/// Scratch buffers reused across evaluation calls.
#[derive(Debug, Default)]
pub struct MlpScratch {
    pre: Vec<Vec<f64>>,  // per hidden layer: pre-activation state
    post: Vec<Vec<f64>>, // per hidden layer: post-activation state
    /// Per layer: activation derivatives (d1, d2, d3) per unit and point,
    /// cached during the backward pass's forward sweep.
    act: Vec<Vec<f64>>,
    input: Vec<f64>,
    adj_a: Vec<f64>, // cotangent of a layer's post-activation state
    adj_z: Vec<f64>, // cotangent of a layer's pre-activation state
}

impl MlpScratch {
    fn prepare(&mut self, shape: &MlpShape, channels: usize) {
        let lanes = channels * BLOCK;
        self.pre.resize(shape.hidden_layers, Vec::new());
        self.post.resize(shape.hidden_layers, Vec::new());
        self.act.resize(shape.hidden_layers, Vec::new());
        for l in 0..shape.hidden_layers {
            self.pre[l].resize(shape.width * lanes, 0.0);
            self.post[l].resize(shape.width * lanes, 0.0);
            self.act[l].resize(shape.width * BLOCK * 3, 0.0);
        }
        self.input.resize(3 * lanes, 0.0);
        self.adj_a.resize(shape.width * lanes, 0.0);
        self.adj_z.resize(shape.width * lanes, 0.0);
    }
}

/// `out[o] (+)= W[o,:] * inp + b[o]`, acting identically on every lane.
#[inline]
fn linear_forward(
    w: &[f64],
    b: &[f64],
    inp: &[f64],
    out: &mut [f64],
    fan_in: usize,
    fan_out: usize,
    lanes: usize,
) {
    for o in 0..fan_out {
        let row = &w[o * fan_in..(o + 1) * fan_in];
        let dst = &mut out[o * lanes..(o + 1) * lanes];
        dst.fill(0.0);
        for (i, &wi) in row.iter().enumerate() {
            let src = &inp[i * lanes..i * lanes + lanes];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wi * s;
            }
        }
        if !b.is_empty() {
            // Bias feeds the value channel only; derivatives of a constant vanish.
            for blk in dst[..BLOCK].iter_mut() {
                *blk += b[o];
            }
        }
    }
}

/// Activation sweep that also records (d1, d2, d3) per unit and point for
/// the reverse sweep.
#[inline]
fn activation_forward_caching(
    pre: &[f64],
    post: &mut [f64],
    cache: &mut [f64],
    width: usize,
    channels: usize,
    n_pts: usize,
) {
    let lanes = channels * BLOCK;
    for k in 0..width {
        let zrow = &pre[k * lanes..(k + 1) * lanes];
        let arow = &mut post[k * lanes..(k + 1) * lanes];
        let crow = &mut cache[k * BLOCK * 3..(k + 1) * BLOCK * 3];
        for bpt in 0..n_pts {
            let z = zrow[bpt];
            let (phi, d1, d2, d3) = act(z);
            crow[3 * bpt] = d1;
            crow[3 * bpt + 1] = d2;
            crow[3 * bpt + 2] = d3;
            arow[bpt] = phi;
            if channels >= 4 {
                let zg = [zrow[BLOCK + bpt], zrow[2 * BLOCK + bpt], zrow[3 * BLOCK + bpt]];
                arow[BLOCK + bpt] = d1 * zg[0];
                arow[2 * BLOCK + bpt] = d1 * zg[1];
                arow[3 * BLOCK + bpt] = d1 * zg[2];
                if channels == 10 {
                    let q = [
                        zg[0] * zg[0],
                        zg[1] * zg[1],
                        zg[2] * zg[2],
                        zg[0] * zg[1],
                        zg[1] * zg[2],
                        zg[2] * zg[0],
                    ];
                    for c in 0..6 {
                        let zh = zrow[(4 + c) * BLOCK + bpt];
                        arow[(4 + c) * BLOCK + bpt] = d2 * q[c] + d1 * zh;
                    }
                }
            }
        }
    }
}

/// Activation sweep over one layer's state for `n_pts` live points.
#[inline]
fn activation_forward(pre: &[f64], post: &mut [f64], width: usize, channels: usize, n_pts: usize) {
    let lanes = channels * BLOCK;
    for k in 0..width {
        let zrow = &pre[k * lanes..(k + 1) * lanes];
        let arow = &mut post[k * lanes..(k + 1) * lanes];
        for bpt in 0..n_pts {
            let z = zrow[bpt];
            let (phi, d1, d2, _) = act(z);
            arow[bpt] = phi;
            if channels >= 4 {
                let zg = [zrow[BLOCK + bpt], zrow[2 * BLOCK + bpt], zrow[3 * BLOCK + bpt]];
                arow[BLOCK + bpt] = d1 * zg[0];
                arow[2 * BLOCK + bpt] = d1 * zg[1];
                arow[3 * BLOCK + bpt] = d1 * zg[2];
                if channels == 10 {
                    let q = [
                        zg[0] * zg[0],
                        zg[1] * zg[1],
                        zg[2] * zg[2],
                        zg[0] * zg[1],
                        zg[1] * zg[2],
                        zg[2] * zg[0],
                    ];
                    for c in 0..6 {
                        let zh = zrow[(4 + c) * BLOCK + bpt];
                        arow[(4 + c) * BLOCK + bpt] = d2 * q[c] + d1 * zh;
                    }
                }
            }
        }
    }
}

/// A scalar MLP field evaluator. Holds only the shape; parameters are passed
/// in flat slices so the optimizer owns them.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub shape: MlpShape,
}

impl Mlp {
    pub fn new(shape: MlpShape) -> Self {
        Self { shape }
    }

    /// Evaluate at `points` (already normalized), appending to `out`.
    pub fn eval(
        &self,
        params: &[f64],
        points: &[[f64; 3]],
        level: DerivLevel,
        out: &mut EvalBatch,
        scratch: &mut MlpScratch,
    ) {
        debug_assert_eq!(params.len(), self.shape.param_count());
        let channels = level.channels();
        scratch.prepare(&self.shape, channels);
        let lanes = channels * BLOCK;
        let offs = self.shape.layer_offsets();
        let (wo_off, bo_off, skip_off) = self.shape.head_offsets();
        let w = self.shape.width;

        for chunk in points.chunks(BLOCK) {
            let n = chunk.len();
            // Stage the input state: value = x_i, grad = identity, hess = 0.
            scratch.input.fill(0.0);
            for (bpt, p) in chunk.iter().enumerate() {
                for i in 0..3 {
                    scratch.input[i * lanes + bpt] = p[i];
                    if channels >= 4 {
                        scratch.input[i * lanes + (1 + i) * BLOCK + bpt] = 1.0;
                    }
                }
            }
            let mut fan_in = 3;
            for (l, &(w_off, b_off, layer_fan_in)) in offs.iter().enumerate() {
                debug_assert_eq!(fan_in, layer_fan_in);
                let (done, todo) = scratch.post.split_at_mut(l);
                let inp: &[f64] = if l == 0 { &scratch.input } else { &done[l - 1] };
                linear_forward(
                    &params[w_off..w_off + w * fan_in],
                    &params[b_off..b_off + w],
                    inp,
                    &mut scratch.pre[l],
                    fan_in,
                    w,
                    lanes,
                );
                activation_forward(&scratch.pre[l], &mut todo[0], w, channels, n);
                fan_in = w;
            }

            // Linear head + skip.
            let w_out = &params[wo_off..wo_off + w];
            let b_out = params[bo_off];
            let skip = &params[skip_off..skip_off + 3];
            let last = &scratch.post[self.shape.hidden_layers - 1];
            for (bpt, p) in chunk.iter().enumerate() {
                let mut acc = [0.0f64; 10];
                for (k, &wk) in w_out.iter().enumerate() {
                    let row = &last[k * lanes..(k + 1) * lanes];
                    for c in 0..channels {
                        acc[c] += wk * row[c * BLOCK + bpt];
                    }
                }
                let value =
                    acc[0] + b_out + skip[0] * p[0] + skip[1] * p[1] + skip[2] * p[2];
                out.value.push(value);
                if channels >= 4 {
                    out.grad
                        .push([acc[1] + skip[0], acc[2] + skip[1], acc[3] + skip[2]]);
                }
                if channels == 10 {
                    out.hess
                        .push([acc[4], acc[5], acc[6], acc[7], acc[8], acc[9]]);
                }
            }
        }
    }

    /// Accumulate `d/dparams sum_p <cotangent_p, (v, g, H)(point_p)>` into
    /// `grad`. `level` bounds which cotangent channels are honored.
    pub fn backward(
        &self,
        params: &[f64],
        points: &[[f64; 3]],
        cots: &[Cotangent],
        level: DerivLevel,
        grad: &mut [f64],
        scratch: &mut MlpScratch,
    ) {
        debug_assert_eq!(points.len(), cots.len());
        debug_assert_eq!(grad.len(), self.shape.param_count());
        let channels = level.channels();
        scratch.prepare(&self.shape, channels);
        let lanes = channels * BLOCK;
        let offs = self.shape.layer_offsets();
        let (wo_off, bo_off, skip_off) = self.shape.head_offsets();
        let w = self.shape.width;

        for (chunk, cchunk) in points.chunks(BLOCK).zip(cots.chunks(BLOCK)) {
            let n = chunk.len();
            // Forward tape for this block.
            scratch.input.fill(0.0);
            for (bpt, p) in chunk.iter().enumerate() {
                for i in 0..3 {
                    scratch.input[i * lanes + bpt] = p[i];
                    if channels >= 4 {
                        scratch.input[i * lanes + (1 + i) * BLOCK + bpt] = 1.0;
                    }
                }
            }
            let mut fan_in = 3;
            for (l, &(w_off, b_off, _)) in offs.iter().enumerate() {
                let (done, todo) = scratch.post.split_at_mut(l);
                let inp: &[f64] = if l == 0 { &scratch.input } else { &done[l - 1] };
                linear_forward(
                    &params[w_off..w_off + w * fan_in],
                    &params[b_off..b_off + w],
                    inp,
                    &mut scratch.pre[l],
                    fan_in,
                    w,
                    lanes,
                );
                activation_forward_caching(
                    &scratch.pre[l],
                    &mut todo[0],
                    &mut scratch.act[l],
                    w,
                    channels,
                    n,
                );
                fan_in = w;
            }

            // Head cotangents -> adjoint of the last post-activation state.
            let w_out = &params[wo_off..wo_off + w];
            scratch.adj_a.fill(0.0);
            {
                let last = &scratch.post[self.shape.hidden_layers - 1];
                for (bpt, (p, cot)) in chunk.iter().zip(cchunk).enumerate() {
                    let mut lane_cot = [0.0f64; 10];
                    lane_cot[0] = cot.value;
                    if channels >= 4 {
                        lane_cot[1..4].copy_from_slice(&cot.grad);
                    }
                    if channels == 10 {
                        lane_cot[4..10].copy_from_slice(&cot.hess);
                    }
                    for (k, &wk) in w_out.iter().enumerate() {
                        let arow = &last[k * lanes..(k + 1) * lanes];
                        let dst = &mut scratch.adj_a[k * lanes..(k + 1) * lanes];
                        let mut wbar = 0.0;
                        for c in 0..channels {
                            dst[c * BLOCK + bpt] += wk * lane_cot[c];
                            wbar += lane_cot[c] * arow[c * BLOCK + bpt];
                        }
                        grad[wo_off + k] += wbar;
                    }
                    grad[bo_off] += cot.value;
                    for i in 0..3 {
                        grad[skip_off + i] += cot.value * p[i];
                        if channels >= 4 {
                            grad[skip_off + i] += cot.grad[i];
                        }
                    }
                }
            }

            // Walk the hidden layers in reverse.
            for l in (0..self.shape.hidden_layers).rev() {
                let (w_off, b_off, layer_fan_in) = offs[l];
                // Activation reverse: adj_a (post) -> adj_z (pre).
                scratch.adj_z.fill(0.0);
                for k in 0..w {
                    let zrow = &scratch.pre[l][k * lanes..(k + 1) * lanes];
                    let abar = &scratch.adj_a[k * lanes..(k + 1) * lanes];
                    let zbar = &mut scratch.adj_z[k * lanes..(k + 1) * lanes];
                    let crow = &scratch.act[l][k * BLOCK * 3..(k + 1) * BLOCK * 3];
                    for bpt in 0..n {
                        let (d1, d2, d3) = (crow[3 * bpt], crow[3 * bpt + 1], crow[3 * bpt + 2]);
                        let mut zb = abar[bpt] * d1;
                        if channels >= 4 {
                            let zg = [
                                zrow[BLOCK + bpt],
                                zrow[2 * BLOCK + bpt],
                                zrow[3 * BLOCK + bpt],
                            ];
                            let ag = [abar[BLOCK + bpt], abar[2 * BLOCK + bpt], abar[3 * BLOCK + bpt]];
                            zb += d2 * (ag[0] * zg[0] + ag[1] * zg[1] + ag[2] * zg[2]);
                            let mut gb = [ag[0] * d1, ag[1] * d1, ag[2] * d1];
                            if channels == 10 {
                                let q = [
                                    zg[0] * zg[0],
                                    zg[1] * zg[1],
                                    zg[2] * zg[2],
                                    zg[0] * zg[1],
                                    zg[1] * zg[2],
                                    zg[2] * zg[0],
                                ];
                                for c in 0..6 {
                                    let ah = abar[(4 + c) * BLOCK + bpt];
                                    let zh = zrow[(4 + c) * BLOCK + bpt];
                                    zb += ah * (d3 * q[c] + d2 * zh);
                                    zbar[(4 + c) * BLOCK + bpt] = ah * d1;
                                }
                                // dq/dzg contributions
                                gb[0] += d2
                                    * (2.0 * abar[4 * BLOCK + bpt] * zg[0]
                                        + abar[7 * BLOCK + bpt] * zg[1]
                                        + abar[9 * BLOCK + bpt] * zg[2]);
                                gb[1] += d2
                                    * (2.0 * abar[5 * BLOCK + bpt] * zg[1]
                                        + abar[7 * BLOCK + bpt] * zg[0]
                                        + abar[8 * BLOCK + bpt] * zg[2]);
                                gb[2] += d2
                                    * (2.0 * abar[6 * BLOCK + bpt] * zg[2]
                                        + abar[8 * BLOCK + bpt] * zg[1]
                                        + abar[9 * BLOCK + bpt] * zg[0]);
                            }
                            zbar[BLOCK + bpt] = gb[0];
                            zbar[2 * BLOCK + bpt] = gb[1];
                            zbar[3 * BLOCK + bpt] = gb[2];
                        }
                        zbar[bpt] = zb;
                    }
                }

                // Linear reverse: parameter grads and previous-layer adjoint.
                let prev: &[f64] = if l == 0 {
                    &scratch.input
                } else {
                    &scratch.post[l - 1]
                };
                for o in 0..w {
                    let zbar = &scratch.adj_z[o * lanes..(o + 1) * lanes];
                    for i in 0..layer_fan_in {
                        let arow = &prev[i * lanes..(i + 1) * lanes];
                        grad[w_off + o * layer_fan_in + i] += crate::simd::dot(zbar, arow);
                    }
                    let mut bacc = 0.0;
                    for bpt in 0..n {
                        bacc += zbar[bpt];
                    }
                    grad[b_off + o] += bacc;
                }
                if l > 0 {
                    // adj_a(prev) = W^T adj_z
                    scratch.adj_a.fill(0.0);
                    let wmat = &params[w_off..w_off + w * layer_fan_in];
                    for o in 0..w {
                        let zbar = &scratch.adj_z[o * lanes..(o + 1) * lanes];
                        for i in 0..layer_fan_in {
                            let wi = wmat[o * layer_fan_in + i];
                            let dst = &mut scratch.adj_a[i * lanes..(i + 1) * lanes];
                            for (d, zb) in dst.iter_mut().zip(zbar) {
                                *d += wi * zb;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_params(shape: &MlpShape, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..shape.param_count())
            .map(|_| rng.gen_range(-0.8..0.8))
            .collect()
    }

    fn eval_one(mlp: &Mlp, params: &[f64], p: [f64; 3], level: DerivLevel) -> EvalBatch {
        let mut out = EvalBatch::default();
        let mut ws = MlpScratch::default();
        mlp.eval(params, &[p], level, &mut out, &mut ws);
        out
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        for &z in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-5;
            let (_, d1, d2, d3) = act(z);
            let f = |x: f64| act(x).0;
            let fd1 = (f(z + h) - f(z - h)) / (2.0 * h);
            let fd2 = (f(z + h) - 2.0 * f(z) + f(z - h)) / (h * h);
            let fd3 = (act(z + h).2 - act(z - h).2) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-8, "d1 at {z}");
            assert!((d2 - fd2).abs() < 1e-5, "d2 at {z}");
            assert!((d3 - fd3).abs() < 1e-6, "d3 at {z}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let shape = MlpShape::new(2, 16);
        let mlp = Mlp::new(shape);
        let params = random_params(&shape, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let p = [
                rng.gen_range(-0.9..0.9),
                rng.gen_range(-0.9..0.9),
                rng.gen_range(-0.9..0.9),
            ];
            let out = eval_one(&mlp, &params, p, DerivLevel::Grad);
            let h = 1e-5;
            for i in 0..3 {
                let mut pp = p;
                pp[i] += h;
                let vp = eval_one(&mlp, &params, pp, DerivLevel::Value).value[0];
                pp[i] -= 2.0 * h;
                let vm = eval_one(&mlp, &params, pp, DerivLevel::Value).value[0];
                let fd = (vp - vm) / (2.0 * h);
                let an = out.grad[0][i];
                assert!(
                    (an - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "grad[{i}] analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let shape = MlpShape::new(2, 16);
        let mlp = Mlp::new(shape);
        let params = random_params(&shape, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let p = [
                rng.gen_range(-0.9..0.9),
                rng.gen_range(-0.9..0.9),
                rng.gen_range(-0.9..0.9),
            ];
            let out = eval_one(&mlp, &params, p, DerivLevel::Hess);
            let hmat = unpack_hess(&out.hess[0]);
            let h = 1e-5;
            for j in 0..3 {
                let mut pp = p;
                pp[j] += h;
                let gp = eval_one(&mlp, &params, pp, DerivLevel::Grad).grad[0];
                pp[j] -= 2.0 * h;
                let gm = eval_one(&mlp, &params, pp, DerivLevel::Grad).grad[0];
                for i in 0..3 {
                    let fd = (gp[i] - gm[i]) / (2.0 * h);
                    let an = hmat[(i, j)];
                    assert!(
                        (an - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                        "hess[{i}{j}] analytic {an} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn parameter_backward_matches_finite_differences() {
        let shape = MlpShape::new(2, 8);
        let mlp = Mlp::new(shape);
        let params = random_params(&shape, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let points: Vec<[f64; 3]> = (0..5)
            .map(|_| {
                [
                    rng.gen_range(-0.9..0.9),
                    rng.gen_range(-0.9..0.9),
                    rng.gen_range(-0.9..0.9),
                ]
            })
            .collect();
        let cots: Vec<Cotangent> = (0..5)
            .map(|_| Cotangent {
                value: rng.gen_range(-1.0..1.0),
                grad: [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ],
                hess: [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ],
            })
            .collect();

        let functional = |params: &[f64]| -> f64 {
            let mut out = EvalBatch::default();
            let mut ws = MlpScratch::default();
            mlp.eval(params, &points, DerivLevel::Hess, &mut out, &mut ws);
            let mut s = 0.0;
            for (i, c) in cots.iter().enumerate() {
                s += c.value * out.value[i];
                for j in 0..3 {
                    s += c.grad[j] * out.grad[i][j];
                }
                for j in 0..6 {
                    s += c.hess[j] * out.hess[i][j];
                }
            }
            s
        };

        let mut grad = vec![0.0; shape.param_count()];
        let mut ws = MlpScratch::default();
        mlp.backward(&params, &points, &cots, DerivLevel::Hess, &mut grad, &mut ws);

        let h = 1e-6;
        let mut check_idx: Vec<usize> = (0..shape.param_count()).collect();
        check_idx.shuffle(&mut rng);
        for &i in check_idx.iter().take(40) {
            let mut pp = params.clone();
            pp[i] += h;
            let fp = functional(&pp);
            pp[i] -= 2.0 * h;
            let fm = functional(&pp);
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() <= 2e-5 * (1.0 + fd.abs()),
                "param {i}: analytic {} vs fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn block_boundaries_do_not_change_results() {
        let shape = MlpShape::new(2, 8);
        let mlp = Mlp::new(shape);
        let params = random_params(&shape, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let points: Vec<[f64; 3]> = (0..BLOCK * 2 + 3)
            .map(|_| {
                [
                    rng.gen_range(-0.9..0.9),
                    rng.gen_range(-0.9..0.9),
                    rng.gen_range(-0.9..0.9),
                ]
            })
            .collect();
        let mut all = EvalBatch::default();
        let mut ws = MlpScratch::default();
        mlp.eval(&params, &points, DerivLevel::Hess, &mut all, &mut ws);
        for (i, p) in points.iter().enumerate() {
            let one = eval_one(&mlp, &params, *p, DerivLevel::Hess);
            assert_eq!(one.value[0], all.value[i]);
            assert_eq!(one.grad[0], all.grad[i]);
            assert_eq!(one.hess[0], all.hess[i]);
        }
    }
}
