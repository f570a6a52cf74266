//! Height-only (unidirectional) pooling, planar 2x2 max pooling and 2x nearest upsampling.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Reducer used by [`uni_pool_h`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PoolMode {
    #[default]
    Max,
    Avg,
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(PoolMode::Max),
            "avg" => Ok(PoolMode::Avg),
            other => Err(Error::InvalidArgument(format!("unknown pool mode `{other}` (expected max|avg)"))),
        }
    }
}

impl fmt::Display for PoolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolMode::Max => "max",
            PoolMode::Avg => "avg",
        })
    }
}

fn pool_h_dims(input: &Tensor, stride: usize) -> Result<[usize; 4]> {
    let [l, w, h, c] = match *input.shape() {
        [a, b, c, d] => [a, b, c, d],
        _ => return Err(Error::shape("uni_pool_h", format!("expected [l,w,h,c], got {:?}", input.shape()))),
    };
    if stride == 0 || h % stride != 0 {
        return Err(Error::shape("uni_pool_h", format!("stride k = {stride} does not divide height h = {h}")));
    }
    Ok([l, w, h, c])
}

/// Pools along the height axis only, with window = stride = `stride`.
/// Max ties resolve to the lowest height index.
pub fn uni_pool_h(input: &Tensor, stride: usize, mode: PoolMode) -> Result<Tensor> {
    let [l, w, h, c] = pool_h_dims(input, stride)?;
    let oh = h / stride;
    let src = input.data();
    let mut out = vec![0.0; l * w * oh * c];
    for col in 0..l * w {
        for j in 0..oh {
            let o_off = (col * oh + j) * c;
            for ch in 0..c {
                let base = (col * h + j * stride) * c + ch;
                let v = match mode {
                    PoolMode::Max => (1..stride).fold(src[base], |m, t| {
                        let v = src[base + t * c];
                        if v > m {
                            v
                        } else {
                            m
                        }
                    }),
                    PoolMode::Avg => (0..stride).map(|t| src[base + t * c]).sum::<f64>() / stride as f64,
                };
                out[o_off + ch] = v;
            }
        }
    }
    Tensor::from_vec(&[l, w, oh, c], out)
}

pub fn uni_pool_h_backward(input: &Tensor, stride: usize, mode: PoolMode, grad_out: &Tensor) -> Result<Tensor> {
    let [l, w, h, c] = pool_h_dims(input, stride)?;
    let oh = h / stride;
    if grad_out.shape() != [l, w, oh, c] {
        return Err(Error::shape("uni_pool_h_backward", format!("upstream gradient {:?}", grad_out.shape())));
    }
    let src = input.data();
    let go = grad_out.data();
    let mut gi = vec![0.0; input.len()];
    for col in 0..l * w {
        for j in 0..oh {
            let o_off = (col * oh + j) * c;
            for ch in 0..c {
                let base = (col * h + j * stride) * c + ch;
                let g = go[o_off + ch];
                match mode {
                    PoolMode::Max => {
                        let mut best = 0;
                        for t in 1..stride {
                            if src[base + t * c] > src[base + best * c] {
                                best = t;
                            }
                        }
                        gi[base + best * c] += g;
                    }
                    PoolMode::Avg => {
                        let share = g / stride as f64;
                        for t in 0..stride {
                            gi[base + t * c] += share;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(input.shape(), gi)
}

fn plane_dims(op: &'static str, t: &Tensor) -> Result<[usize; 3]> {
    match *t.shape() {
        [a, b, c] => Ok([a, b, c]),
        _ => Err(Error::shape(op, format!("expected [l,w,c], got {:?}", t.shape()))),
    }
}

fn pool2d_dims(input: &Tensor) -> Result<[usize; 3]> {
    let [l, w, c] = plane_dims("pool2d", input)?;
    if l % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("pool2d", format!("extents must be even, got {:?}", input.shape())));
    }
    Ok([l, w, c])
}

/// 2x2 max pooling with stride 2 over a planar map.
pub fn pool2d(input: &Tensor) -> Result<Tensor> {
    let [l, w, c] = pool2d_dims(input)?;
    let (ol, ow) = (l / 2, w / 2);
    let src = input.data();
    let mut out = vec![0.0; ol * ow * c];
    for x in 0..ol {
        for y in 0..ow {
            for ch in 0..c {
                let mut m = f64::NEG_INFINITY;
                for (dx, dy) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let v = src[((2 * x + dx) * w + 2 * y + dy) * c + ch];
                    if v > m {
                        m = v;
                    }
                }
                out[(x * ow + y) * c + ch] = m;
            }
        }
    }
    Tensor::from_vec(&[ol, ow, c], out)
}

pub fn pool2d_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let [l, w, c] = pool2d_dims(input)?;
    let (ol, ow) = (l / 2, w / 2);
    if grad_out.shape() != [ol, ow, c] {
        return Err(Error::shape("pool2d_backward", format!("upstream gradient {:?}", grad_out.shape())));
    }
    let src = input.data();
    let mut gi = vec![0.0; input.len()];
    for x in 0..ol {
        for y in 0..ow {
            for ch in 0..c {
                let mut best = ((2 * x) * w + 2 * y) * c + ch;
                for (dx, dy) in [(0, 1), (1, 0), (1, 1)] {
                    let i = ((2 * x + dx) * w + 2 * y + dy) * c + ch;
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                gi[best] += grad_out.data()[(x * ow + y) * c + ch];
            }
        }
    }
    Tensor::from_vec(input.shape(), gi)
}

/// 2x nearest-neighbour upsampling of a planar map.
pub fn upsample2d(input: &Tensor) -> Result<Tensor> {
    let [l, w, c] = plane_dims("upsample2d", input)?;
    let (ol, ow) = (2 * l, 2 * w);
    let src = input.data();
    let mut out = vec![0.0; ol * ow * c];
    for x in 0..ol {
        for y in 0..ow {
            let s = ((x / 2) * w + y / 2) * c;
            out[(x * ow + y) * c..(x * ow + y + 1) * c].copy_from_slice(&src[s..s + c]);
        }
    }
    Tensor::from_vec(&[ol, ow, c], out)
}

pub fn upsample2d_backward(grad_out: &Tensor) -> Result<Tensor> {
    let [ol, ow, c] = plane_dims("upsample2d_backward", grad_out)?;
    if ol % 2 != 0 || ow % 2 != 0 {
        return Err(Error::shape("upsample2d_backward", format!("odd upstream extents {:?}", grad_out.shape())));
    }
    let (l, w) = (ol / 2, ow / 2);
    let go = grad_out.data();
    let mut gi = vec![0.0; l * w * c];
    for x in 0..ol {
        for y in 0..ow {
            let d = ((x / 2) * w + y / 2) * c;
            for ch in 0..c {
                gi[d + ch] += go[(x * ow + y) * c + ch];
            }
        }
    }
    Tensor::from_vec(&[l, w, c], gi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64]) -> Tensor {
        Tensor::from_vec(&[1, 1, values.len(), 1], values.to_vec()).unwrap()
    }

    #[test]
    fn max_over_height_windows() {
        let out = uni_pool_h(&column(&[1.0, 5.0, 2.0, 8.0]), 2, PoolMode::Max).unwrap();
        assert_eq!(out.data(), &[5.0, 8.0]);
        let avg = uni_pool_h(&column(&[1.0, 5.0, 2.0, 8.0]), 2, PoolMode::Avg).unwrap();
        assert_eq!(avg.data(), &[3.0, 5.0]);
    }

    #[test]
    fn pooled_shape() {
        let out = uni_pool_h(&Tensor::zeros(&[4, 4, 8, 3]), 2, PoolMode::Max).unwrap();
        assert_eq!(out.shape(), [4, 4, 4, 3]);
    }

    #[test]
    fn tie_routes_gradient_to_first_index() {
        let x = column(&[7.0, 7.0]);
        let g = uni_pool_h_backward(&x, 2, PoolMode::Max, &column(&[1.0])).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0]);
    }

    #[test]
    fn non_dividing_stride_reports_h_and_k() {
        let err = uni_pool_h(&Tensor::zeros(&[1, 1, 6, 1]), 4, PoolMode::Max).unwrap_err().to_string();
        assert!(err.contains("h = 6") && err.contains("k = 4"), "{err}");
    }

    #[test]
    fn pool2d_constant_map() {
        let out = pool2d(&Tensor::filled(&[4, 6, 2], 3.5)).unwrap();
        assert_eq!(out.shape(), [2, 3, 2]);
        assert!(out.data().iter().all(|&v| v == 3.5));
        assert!(pool2d(&Tensor::zeros(&[3, 4, 1])).is_err());
    }

    #[test]
    fn upsample_then_backward_sums_blocks() {
        let x = Tensor::from_vec(&[1, 2, 1], vec![1.0, 2.0]).unwrap();
        let up = upsample2d(&x).unwrap();
        assert_eq!(up.shape(), [2, 4, 1]);
        assert_eq!(up.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        let g = upsample2d_backward(&Tensor::filled(&[2, 4, 1], 1.0)).unwrap();
        assert_eq!(g.data(), &[4.0, 4.0]);
    }
}
