//! Layer primitives with their backward passes.
//!
//! Convolutions are 3x3 cross-correlations, stride 1, zero "same" padding.
//! Kernels are stored `[ky][kx][c_in][c_out]`, so a kernel is the
//! `(9 c_in) x c_out` matrix that multiplies im2col rows.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor4;
use crate::CnnError;

/// Upper bound on im2col entries materialized at once.
const IM2COL_BUDGET: usize = 1 << 22;

pub fn conv_param_count(cin: usize, cout: usize) -> (usize, usize) {
    (9 * cin * cout, cout)
}

fn check_conv(x: &Tensor4, weight: &[f64], bias: &[f64], cout: usize) -> Result<(), CnnError> {
    let (wl, bl) = conv_param_count(x.c, cout);
    if weight.len() != wl || bias.len() != bl {
        return Err(CnnError::Shape(format!(
            "conv {}->{cout} needs {wl} weights and {bl} biases, got {} and {}",
            x.c,
            weight.len(),
            bias.len()
        )));
    }
    Ok(())
}

fn samples_per_chunk(x: &Tensor4) -> usize {
    (IM2COL_BUDGET / (x.h * x.w * 9 * x.c).max(1)).clamp(1, x.n.max(1))
}

/// im2col rows for samples `n0..n1`, column order `(ky, kx, c)`.
fn im2col(x: &Tensor4, n0: usize, n1: usize, cols: &mut Vec<f64>) {
    let (h, w, c) = (x.h, x.w, x.c);
    cols.clear();
    cols.resize((n1 - n0) * h * w * 9 * c, 0.0);
    let mut row = 0;
    for n in n0..n1 {
        for y in 0..h {
            for xx in 0..w {
                let base = row * 9 * c;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let src = x.index(n, sy as usize, sx as usize, 0);
                        let dst = base + (ky * 3 + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&x.data[src..src + c]);
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im_add(dcols: &[f64], n0: usize, n1: usize, dx: &mut Tensor4) {
    let (h, w, c) = (dx.h, dx.w, dx.c);
    let mut row = 0;
    for n in n0..n1 {
        for y in 0..h {
            for xx in 0..w {
                let base = row * 9 * c;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let dst = dx.index(n, sy as usize, sx as usize, 0);
                        let src = base + (ky * 3 + kx) * c;
                        for (d, s) in dx.data[dst..dst + c].iter_mut().zip(&dcols[src..src + c]) {
                            *d += s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// 3x3 "same" convolution.
pub fn conv2d_forward(x: &Tensor4, weight: &[f64], bias: &[f64], cout: usize) -> Result<Tensor4, CnnError> {
    check_conv(x, weight, bias, cout)?;
    let mut out = Tensor4::zeros(x.n, x.h, x.w, cout);
    let k = 9 * x.c;
    let wmat = ArrayView2::from_shape((k, cout), weight).expect("checked weight shape");
    let pixels = x.h * x.w;
    let chunk = samples_per_chunk(x);
    let mut cols = Vec::new();
    for n0 in (0..x.n).step_by(chunk) {
        let n1 = (n0 + chunk).min(x.n);
        im2col(x, n0, n1, &mut cols);
        let rows = (n1 - n0) * pixels;
        let a = ArrayView2::from_shape((rows, k), &cols[..]).expect("im2col shape");
        let dst = &mut out.data[n0 * pixels * cout..n1 * pixels * cout];
        for r in dst.chunks_exact_mut(cout) {
            r.copy_from_slice(bias);
        }
        let mut c = ArrayViewMut2::from_shape((rows, cout), dst).expect("output shape");
        general_mat_mul(1.0, &a, &wmat, 1.0, &mut c);
    }
    Ok(out)
}

/// Accumulates kernel and bias gradients into `dw`/`db`; returns the input
/// gradient when `need_dx`.
pub fn conv2d_backward(
    x: &Tensor4,
    weight: &[f64],
    dy: &Tensor4,
    dw: &mut [f64],
    db: &mut [f64],
    need_dx: bool,
) -> Result<Option<Tensor4>, CnnError> {
    let cout = dy.c;
    if dy.shape() != [x.n, x.h, x.w, cout] {
        return Err(CnnError::Shape(format!(
            "conv gradient {:?} does not match input {:?}",
            dy.shape(),
            x.shape()
        )));
    }
    check_conv(x, weight, db, cout)?;
    if dw.len() != weight.len() {
        return Err(CnnError::Shape("kernel gradient length".into()));
    }
    let k = 9 * x.c;
    let wmat = ArrayView2::from_shape((k, cout), weight).expect("checked weight shape");
    let mut dx = need_dx.then(|| Tensor4::zeros(x.n, x.h, x.w, x.c));
    let pixels = x.h * x.w;
    let chunk = samples_per_chunk(x);
    let mut cols = Vec::new();
    let mut dcols = Vec::new();
    for r in dy.data.chunks_exact(cout) {
        for (b, g) in db.iter_mut().zip(r) {
            *b += g;
        }
    }
    for n0 in (0..x.n).step_by(chunk) {
        let n1 = (n0 + chunk).min(x.n);
        let rows = (n1 - n0) * pixels;
        im2col(x, n0, n1, &mut cols);
        let a = ArrayView2::from_shape((rows, k), &cols[..]).expect("im2col shape");
        let g = ArrayView2::from_shape((rows, cout), &dy.data[n0 * pixels * cout..n1 * pixels * cout])
            .expect("gradient shape");
        let mut dwm = ArrayViewMut2::from_shape((k, cout), &mut *dw).expect("checked");
        general_mat_mul(1.0, &a.t(), &g, 1.0, &mut dwm);
        if let Some(dx) = dx.as_mut() {
            dcols.clear();
            dcols.resize(rows * k, 0.0);
            let mut dc = ArrayViewMut2::from_shape((rows, k), &mut dcols[..]).expect("cols shape");
            general_mat_mul(1.0, &g, &wmat.t(), 0.0, &mut dc);
            col2im_add(&dcols, n0, n1, dx);
        }
    }
    Ok(dx)
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `dy` wherever the post-activation output `y` is not positive.
pub fn relu_backward_inplace(y: &[f64], dy: &mut [f64]) {
    for (g, &v) in dy.iter_mut().zip(y) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 max pooling, stride 2. Odd sizes are padded up with `-inf`, which
/// never wins. Returns the pooled tensor and the flat input index of each
/// maximum.
pub fn max_pool2_forward(x: &Tensor4) -> (Tensor4, Vec<usize>) {
    let (oh, ow) = (x.h.div_ceil(2), x.w.div_ceil(2));
    let mut out = Tensor4::zeros(x.n, oh, ow, x.c);
    let mut arg = vec![0usize; out.data.len()];
    for n in 0..x.n {
        for oy in 0..oh {
            for ox in 0..ow {
                for c in 0..x.c {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = usize::MAX;
                    for y in 2 * oy..(2 * oy + 2).min(x.h) {
                        for xx in 2 * ox..(2 * ox + 2).min(x.w) {
                            let i = x.index(n, y, xx, c);
                            if at == usize::MAX || x.data[i] > best {
                                best = x.data[i];
                                at = i;
                            }
                        }
                    }
                    let o = out.index(n, oy, ox, c);
                    out.data[o] = best;
                    arg[o] = at;
                }
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward(input_shape: [usize; 4], arg: &[usize], dy: &Tensor4) -> Tensor4 {
    let [n, h, w, c] = input_shape;
    let mut dx = Tensor4::zeros(n, h, w, c);
    for (g, &i) in dy.data.iter().zip(arg) {
        dx.data[i] += g;
    }
    dx
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlobalPool {
    #[default]
    Max,
    Mean,
}

impl std::str::FromStr for GlobalPool {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(Self::Max),
            "mean" | "avg" | "average" => Ok(Self::Mean),
            other => Err(format!("unknown global pool `{other}`")),
        }
    }
}

/// Spatial pooling to an `N x C` row-major matrix; for max pooling also the
/// flat input index of each maximum.
pub fn global_pool_forward(x: &Tensor4, kind: GlobalPool) -> (Vec<f64>, Vec<usize>) {
    let mut out = vec![0.0; x.n * x.c];
    let mut arg = Vec::new();
    let pixels = x.h * x.w;
    match kind {
        GlobalPool::Max => {
            arg = vec![0; x.n * x.c];
            for n in 0..x.n {
                for c in 0..x.c {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = usize::MAX;
                    for p in 0..pixels {
                        let i = (n * pixels + p) * x.c + c;
                        if at == usize::MAX || x.data[i] > best {
                            best = x.data[i];
                            at = i;
                        }
                    }
                    out[n * x.c + c] = best;
                    arg[n * x.c + c] = at;
                }
            }
        }
        GlobalPool::Mean => {
            for n in 0..x.n {
                for p in 0..pixels {
                    let base = (n * pixels + p) * x.c;
                    for c in 0..x.c {
                        out[n * x.c + c] += x.data[base + c];
                    }
                }
            }
            out.iter_mut().for_each(|v| *v /= pixels as f64);
        }
    }
    (out, arg)
}

pub fn global_pool_backward(input_shape: [usize; 4], kind: GlobalPool, arg: &[usize], dy: &[f64]) -> Tensor4 {
    let [n, h, w, c] = input_shape;
    let mut dx = Tensor4::zeros(n, h, w, c);
    match kind {
        GlobalPool::Max => {
            for (g, &i) in dy.iter().zip(arg) {
                dx.data[i] += g;
            }
        }
        GlobalPool::Mean => {
            let pixels = h * w;
            for s in 0..n {
                for p in 0..pixels {
                    let base = (s * pixels + p) * c;
                    for ch in 0..c {
                        dx.data[base + ch] = dy[s * c + ch] / pixels as f64;
                    }
                }
            }
        }
    }
    dx
}

/// `y = x W + b` for `x: N x fin`, `W: fin x fout`.
pub fn dense_forward(x: &[f64], n: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let fout = bias.len();
    let fin = weight.len() / fout;
    let mut y: Vec<f64> = bias.iter().copied().cycle().take(n * fout).collect();
    let a = ArrayView2::from_shape((n, fin), x).expect("dense input shape");
    let w = ArrayView2::from_shape((fin, fout), weight).expect("dense weight shape");
    let mut out = ArrayViewMut2::from_shape((n, fout), &mut y[..]).expect("dense output shape");
    general_mat_mul(1.0, &a, &w, 1.0, &mut out);
    y
}

/// Accumulates weight and bias gradients; returns the input gradient.
pub fn dense_backward(x: &[f64], n: usize, weight: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let fout = db.len();
    let fin = weight.len() / fout;
    let a = ArrayView2::from_shape((n, fin), x).expect("dense input shape");
    let g = ArrayView2::from_shape((n, fout), dy).expect("dense gradient shape");
    let w = ArrayView2::from_shape((fin, fout), weight).expect("dense weight shape");
    let mut dwm = ArrayViewMut2::from_shape((fin, fout), dw).expect("dense weight shape");
    general_mat_mul(1.0, &a.t(), &g, 1.0, &mut dwm);
    for r in dy.chunks_exact(fout) {
        for (b, v) in db.iter_mut().zip(r) {
            *b += v;
        }
    }
    let mut dx = vec![0.0; n * fin];
    let mut dxm = ArrayViewMut2::from_shape((n, fin), &mut dx[..]).expect("dense input shape");
    general_mat_mul(1.0, &g, &w.t(), 0.0, &mut dxm);
    dx
}

/// Mean softmax cross-entropy over rows of `logits` (`N x C`) and its
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let n = labels.len();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits[i * classes..(i + 1) * classes];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let log_z = m + z.ln();
        loss += log_z - row[label];
        for (c, g) in grad[i * classes..(i + 1) * classes].iter_mut().enumerate() {
            let p = (row[c] - log_z).exp();
            *g = (p - f64::from(u8::from(c == label))) / n as f64;
        }
    }
    (loss / n as f64, grad)
}
