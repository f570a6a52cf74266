//! Endpoint-aligned linear resampling along the height axis.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Source position of output sample `j`: index of the lower neighbour and the
/// weight of the upper one.
fn source_coord(j: usize, h: usize, new_h: usize) -> (usize, f64) {
    if new_h == 1 || h == 1 {
        return (0, 0.0);
    }
    let pos = j as f64 * (h - 1) as f64 / (new_h - 1) as f64;
    let i0 = (pos.floor() as usize).min(h - 1);
    if i0 == h - 1 {
        (i0, 0.0)
    } else {
        (i0, pos - i0 as f64)
    }
}

fn dims(input: &Tensor, new_h: usize) -> Result<[usize; 4]> {
    if new_h == 0 {
        return Err(Error::InvalidArgument("resize_h_linear: new_h must be >= 1".into()));
    }
    match *input.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::shape("resize_h_linear", format!("expected [l,w,h,c], got {:?}", input.shape()))),
    }
}

/// Resamples `[l,w,h,c]` to `[l,w,new_h,c]`; sample `j` reads source coordinate
/// `j*(h-1)/(new_h-1)` (index 0 when `new_h == 1`).
pub fn resize_h_linear(input: &Tensor, new_h: usize) -> Result<Tensor> {
    let [l, w, h, c] = dims(input, new_h)?;
    if new_h == h {
        return Ok(input.clone());
    }
    let src = input.data();
    let taps: Vec<(usize, f64)> = (0..new_h).map(|j| source_coord(j, h, new_h)).collect();
    let mut out = vec![0.0; l * w * new_h * c];
    for col in 0..l * w {
        for (j, &(i0, t)) in taps.iter().enumerate() {
            let o = (col * new_h + j) * c;
            let a = (col * h + i0) * c;
            for ch in 0..c {
                out[o + ch] = if t == 0.0 { src[a + ch] } else { (1.0 - t) * src[a + ch] + t * src[a + c + ch] };
            }
        }
    }
    Tensor::from_vec(&[l, w, new_h, c], out)
}

pub fn resize_h_linear_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let [l, w, h, c] = match *input_shape {
        [a, b, c, d] => [a, b, c, d],
        _ => return Err(Error::shape("resize_h_linear_backward", format!("bad input shape {input_shape:?}"))),
    };
    let new_h = match *grad_out.shape() {
        [gl, gw, nh, gc] if gl == l && gw == w && gc == c => nh,
        _ => return Err(Error::shape("resize_h_linear_backward", format!("upstream gradient {:?}", grad_out.shape()))),
    };
    if new_h == h {
        return Ok(grad_out.clone());
    }
    let go = grad_out.data();
    let mut gi = vec![0.0; l * w * h * c];
    for col in 0..l * w {
        for j in 0..new_h {
            let (i0, t) = source_coord(j, h, new_h);
            let o = (col * new_h + j) * c;
            let a = (col * h + i0) * c;
            for ch in 0..c {
                if t == 0.0 {
                    gi[a + ch] += go[o + ch];
                } else {
                    gi[a + ch] += (1.0 - t) * go[o + ch];
                    gi[a + c + ch] += t * go[o + ch];
                }
            }
        }
    }
    Tensor::from_vec(input_shape, gi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize) -> Tensor {
        Tensor::from_vec(&[1, 1, h, 1], (0..h).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn same_height_is_identity() {
        let t = ramp(7);
        assert!(resize_h_linear(&t, 7).unwrap().bit_eq(&t));
    }

    #[test]
    fn ramp_resamples_to_closed_form() {
        // ramp value at output j is exactly j*(h-1)/(n-1)
        for (h, n) in [(9, 5), (5, 9), (640, 160), (4, 7)] {
            let out = resize_h_linear(&ramp(h), n).unwrap();
            for (j, &v) in out.data().iter().enumerate() {
                let expect = j as f64 * (h - 1) as f64 / (n - 1) as f64;
                assert!((v - expect).abs() < 1e-12, "h={h} n={n} j={j}: {v} vs {expect}");
            }
        }
    }

    #[test]
    fn axial_640_to_160() {
        let t = Tensor::zeros(&[2, 2, 640, 2]);
        assert_eq!(resize_h_linear(&t, 160).unwrap().shape(), [2, 2, 160, 2]);
    }

    #[test]
    fn single_sample_takes_index_zero() {
        let out = resize_h_linear(&Tensor::from_vec(&[1, 1, 3, 1], vec![4.0, 5.0, 6.0]).unwrap(), 1).unwrap();
        assert_eq!(out.data(), &[4.0]);
    }
}
