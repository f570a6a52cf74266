//! Stride-1 same-padded convolutions and the height-collapsing convolution.
//!
//! Layouts are channels-last: 3D activations are `[l, w, h, c]`, planar ones
//! `[l, w, c]`. Kernels are `[kx, ky, kz, cin, cout]` (3D) and `[kx, ky, cin, cout]`
//! (2D). Padding is zeros. Every backward pass walks the same loop nest as its
//! forward pass, so accumulation order is fixed.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Gradients of a convolution with respect to its three operands.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy)]
struct Grid {
    l: usize,
    w: usize,
    h: usize,
    cin: usize,
}

#[derive(Clone, Copy)]
struct Kernel {
    k: [usize; 3],
    cout: usize,
}

fn dims4(op: &'static str, t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::shape(op, format!("expected a rank-4 input [l,w,h,c], got {:?}", t.shape()))),
    }
}

fn dims3(op: &'static str, t: &Tensor) -> Result<[usize; 3]> {
    match *t.shape() {
        [a, b, c] => Ok([a, b, c]),
        _ => Err(Error::shape(op, format!("expected a rank-3 input [l,w,c], got {:?}", t.shape()))),
    }
}

fn check_bias(op: &'static str, bias: &Tensor, cout: usize) -> Result<()> {
    if bias.shape() != [cout] {
        return Err(Error::shape(op, format!("bias {:?} does not match cout = {cout}", bias.shape())));
    }
    Ok(())
}

/// Fills `cols` (`[w*h, k0*k1*k2*cin]`) with the receptive fields of the `x`-th slab.
fn im2col_slab(input: &[f64], g: Grid, kern: Kernel, x: usize, cols: &mut [f64]) {
    let Grid { l, w, h, cin } = g;
    let [k0, k1, k2] = kern.k;
    let (p0, p1, p2) = (k0 / 2, k1 / 2, k2 / 2);
    let kk = k0 * k1 * k2 * cin;
    cols.fill(0.0);
    for dx in 0..k0 {
        let Some(sx) = (x + dx).checked_sub(p0).filter(|&s| s < l) else { continue };
        for y in 0..w {
            for dy in 0..k1 {
                let Some(sy) = (y + dy).checked_sub(p1).filter(|&s| s < w) else { continue };
                for z in 0..h {
                    let row = (y * h + z) * kk;
                    for dz in 0..k2 {
                        let Some(sz) = (z + dz).checked_sub(p2).filter(|&s| s < h) else { continue };
                        let i_off = ((sx * w + sy) * h + sz) * cin;
                        let c_off = row + ((dx * k1 + dy) * k2 + dz) * cin;
                        cols[c_off..c_off + cin].copy_from_slice(&input[i_off..i_off + cin]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_slab`]: scatters `cols` back onto `grad_in`.
fn col2im_slab(cols: &[f64], g: Grid, kern: Kernel, x: usize, grad_in: &mut [f64]) {
    let Grid { l, w, h, cin } = g;
    let [k0, k1, k2] = kern.k;
    let (p0, p1, p2) = (k0 / 2, k1 / 2, k2 / 2);
    let kk = k0 * k1 * k2 * cin;
    for dx in 0..k0 {
        let Some(sx) = (x + dx).checked_sub(p0).filter(|&s| s < l) else { continue };
        for y in 0..w {
            for dy in 0..k1 {
                let Some(sy) = (y + dy).checked_sub(p1).filter(|&s| s < w) else { continue };
                for z in 0..h {
                    let row = (y * h + z) * kk;
                    for dz in 0..k2 {
                        let Some(sz) = (z + dz).checked_sub(p2).filter(|&s| s < h) else { continue };
                        let i_off = ((sx * w + sy) * h + sz) * cin;
                        let c_off = row + ((dx * k1 + dy) * k2 + dz) * cin;
                        for (gi, &c) in grad_in[i_off..i_off + cin].iter_mut().zip(&cols[c_off..c_off + cin]) {
                            *gi += c;
                        }
                    }
                }
            }
        }
    }
}

/// `c = a @ b + beta * c` for row-major `a: [m,k]`, `b: [k,n]`, `c: [m,n]`, with
/// optional transposition of the stored operands.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

fn same_conv_forward(input: &[f64], g: Grid, weights: &[f64], kern: Kernel, bias: &[f64]) -> Vec<f64> {
    let Grid { l, w, h, cin } = g;
    let cout = kern.cout;
    let kk = kern.k.iter().product::<usize>() * cin;
    let m = w * h;
    let mut out = vec![0.0; l * m * cout];
    for chunk in out.chunks_exact_mut(cout) {
        chunk.copy_from_slice(bias);
    }
    let mut cols = vec![0.0; m * kk];
    for (x, slab) in out.chunks_exact_mut(m * cout).enumerate() {
        im2col_slab(input, g, kern, x, &mut cols);
        gemm(m, kk, cout, &cols, false, weights, false, 1.0, slab);
    }
    out
}

fn same_conv_backward(
    input: &[f64],
    g: Grid,
    weights: &[f64],
    kern: Kernel,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let Grid { l, w, h, cin } = g;
    let cout = kern.cout;
    let kk = kern.k.iter().product::<usize>() * cin;
    let m = w * h;
    let mut gi = vec![0.0; input.len()];
    let mut gw = vec![0.0; weights.len()];
    let mut gb = vec![0.0; cout];
    for row in grad_out.chunks_exact(cout) {
        for (b, &v) in gb.iter_mut().zip(row) {
            *b += v;
        }
    }
    let mut cols = vec![0.0; m * kk];
    let mut gcols = vec![0.0; m * kk];
    for x in 0..l {
        let go = &grad_out[x * m * cout..(x + 1) * m * cout];
        im2col_slab(input, g, kern, x, &mut cols);
        // dW += cols^T @ go ; dcols = go @ W^T
        gemm(kk, m, cout, &cols, true, go, false, 1.0, &mut gw);
        gemm(m, cout, kk, go, false, weights, true, 0.0, &mut gcols);
        col2im_slab(&gcols, g, kern, x, &mut gi);
    }
    (gi, gw, gb)
}

fn conv3d_geometry(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(Grid, Kernel)> {
    const OP: &str = "conv3d";
    let [l, w, h, cin] = dims4(OP, input)?;
    let [k0, k1, k2, wcin, cout] = match *weights.shape() {
        [a, b, c, d, e] => [a, b, c, d, e],
        _ => {
            return Err(Error::shape(
                OP,
                format!("expected kernel [kx,ky,kz,cin,cout], got {:?}", weights.shape()),
            ))
        }
    };
    if wcin != cin {
        return Err(Error::shape(
            OP,
            format!("input {:?} has {cin} channels but kernel {:?} expects {wcin}", input.shape(), weights.shape()),
        ));
    }
    if k0 % 2 == 0 || k1 % 2 == 0 || k2 % 2 == 0 {
        return Err(Error::shape(OP, format!("kernel extents must be odd, got {:?}", weights.shape())));
    }
    check_bias(OP, bias, cout)?;
    Ok((Grid { l, w, h, cin }, Kernel { k: [k0, k1, k2], cout }))
}

/// Same-padded stride-1 3D convolution: `[l,w,h,cin] -> [l,w,h,cout]`.
pub fn conv3d(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (g, k) = conv3d_geometry(input, weights, bias)?;
    let out = same_conv_forward(input.data(), g, weights.data(), k, bias.data());
    Tensor::from_vec(&[g.l, g.w, g.h, k.cout], out)
}

pub fn conv3d_backward(input: &Tensor, weights: &Tensor, bias: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
    let (g, k) = conv3d_geometry(input, weights, bias)?;
    if grad_out.shape() != [g.l, g.w, g.h, k.cout] {
        return Err(Error::shape("conv3d_backward", format!("upstream gradient {:?}", grad_out.shape())));
    }
    let (gi, gw, gb) = same_conv_backward(input.data(), g, weights.data(), k, grad_out.data());
    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), gi)?,
        weights: Tensor::from_vec(weights.shape(), gw)?,
        bias: Tensor::from_vec(bias.shape(), gb)?,
    })
}

fn conv2d_geometry(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(Grid, Kernel)> {
    const OP: &str = "conv2d";
    let [l, w, cin] = dims3(OP, input)?;
    let [k0, k1, wcin, cout] = match *weights.shape() {
        [a, b, c, d] => [a, b, c, d],
        _ => {
            return Err(Error::shape(OP, format!("expected kernel [kx,ky,cin,cout], got {:?}", weights.shape())))
        }
    };
    if wcin != cin {
        return Err(Error::shape(
            OP,
            format!("input {:?} has {cin} channels but kernel {:?} expects {wcin}", input.shape(), weights.shape()),
        ));
    }
    if k0 % 2 == 0 || k1 % 2 == 0 {
        return Err(Error::shape(OP, format!("kernel extents must be odd, got {:?}", weights.shape())));
    }
    check_bias(OP, bias, cout)?;
    Ok((Grid { l, w, h: 1, cin }, Kernel { k: [k0, k1, 1], cout }))
}

/// Same-padded stride-1 planar convolution: `[l,w,cin] -> [l,w,cout]`.
/// A `1x1` kernel gives the per-pixel classifier.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (g, k) = conv2d_geometry(input, weights, bias)?;
    let out = same_conv_forward(input.data(), g, weights.data(), k, bias.data());
    Tensor::from_vec(&[g.l, g.w, k.cout], out)
}

pub fn conv2d_backward(input: &Tensor, weights: &Tensor, bias: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
    let (g, k) = conv2d_geometry(input, weights, bias)?;
    if grad_out.shape() != [g.l, g.w, k.cout] {
        return Err(Error::shape("conv2d_backward", format!("upstream gradient {:?}", grad_out.shape())));
    }
    let (gi, gw, gb) = same_conv_backward(input.data(), g, weights.data(), k, grad_out.data());
    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), gi)?,
        weights: Tensor::from_vec(weights.shape(), gw)?,
        bias: Tensor::from_vec(bias.shape(), gb)?,
    })
}

fn collapse_geometry(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<([usize; 4], usize)> {
    const OP: &str = "collapse_conv";
    let [l, w, h, cin] = dims4(OP, input)?;
    let [kh, wcin, cout] = match *weights.shape() {
        [1, 1, kh, c, d] => [kh, c, d],
        _ => {
            return Err(Error::shape(OP, format!("expected kernel [1,1,h,cin,cout], got {:?}", weights.shape())))
        }
    };
    if kh != h {
        return Err(Error::shape(
            OP,
            format!("kernel height {kh} must equal input height {h} (input {:?})", input.shape()),
        ));
    }
    if wcin != cin {
        return Err(Error::shape(
            OP,
            format!("input {:?} has {cin} channels but kernel {:?} expects {wcin}", input.shape(), weights.shape()),
        ));
    }
    check_bias(OP, bias, cout)?;
    Ok(([l, w, h, cin], cout))
}

/// `1x1xH` convolution with stride `H`: collapses the height axis, `[l,w,h,cin] -> [l,w,cout]`.
pub fn collapse_conv(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let ([l, w, h, cin], cout) = collapse_geometry(input, weights, bias)?;
    let column = h * cin;
    let wt = weights.data();
    let mut out = Vec::with_capacity(l * w * cout);
    for src in input.data().chunks_exact(column) {
        let start = out.len();
        out.extend_from_slice(bias.data());
        let dst = &mut out[start..];
        for (&a, row) in src.iter().zip(wt.chunks_exact(cout)) {
            for (o, &wv) in dst.iter_mut().zip(row) {
                *o += a * wv;
            }
        }
    }
    Tensor::from_vec(&[l, w, cout], out)
}

pub fn collapse_conv_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let ([l, w, h, cin], cout) = collapse_geometry(input, weights, bias)?;
    if grad_out.shape() != [l, w, cout] {
        return Err(Error::shape("collapse_conv_backward", format!("upstream gradient {:?}", grad_out.shape())));
    }
    let column = h * cin;
    let wt = weights.data();
    let mut gi = vec![0.0; input.len()];
    let mut gw = vec![0.0; weights.len()];
    let mut gb = vec![0.0; cout];
    for ((src, gsrc), go) in input
        .data()
        .chunks_exact(column)
        .zip(gi.chunks_exact_mut(column))
        .zip(grad_out.data().chunks_exact(cout))
    {
        for (b, &v) in gb.iter_mut().zip(go) {
            *b += v;
        }
        for (((&a, ga), row), grow) in src
            .iter()
            .zip(gsrc.iter_mut())
            .zip(wt.chunks_exact(cout))
            .zip(gw.chunks_exact_mut(cout))
        {
            let mut acc = 0.0;
            for ((&wv, gwv), &gv) in row.iter().zip(grow.iter_mut()).zip(go) {
                acc += wv * gv;
                *gwv += a * gv;
            }
            *ga = acc;
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), gi)?,
        weights: Tensor::from_vec(weights.shape(), gw)?,
        bias: Tensor::from_vec(&[cout], gb)?,
    })
}
