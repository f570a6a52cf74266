//! Pointwise ReLU, channel concatenation and planar zero-pad / crop.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Subgradient 0 at 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape("relu_backward", format!("{:?} vs {:?}", input.shape(), grad_out.shape())));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Concatenates along the last (channel) axis; all other extents must agree.
pub fn concat(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs.first().ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    let rank = first.rank();
    let spatial = &first.shape()[..rank - 1];
    if inputs.iter().any(|t| t.rank() != rank || &t.shape()[..rank - 1] != spatial) {
        let shapes: Vec<_> = inputs.iter().map(|t| t.shape().to_vec()).collect();
        return Err(Error::shape("concat", format!("spatial extents differ: {shapes:?}")));
    }
    let channels: Vec<usize> = inputs.iter().map(|t| t.shape()[rank - 1]).collect();
    let total: usize = channels.iter().sum();
    let sites: usize = spatial.iter().product();
    let mut out = Vec::with_capacity(sites * total);
    for s in 0..sites {
        for (t, &c) in inputs.iter().zip(&channels) {
            out.extend_from_slice(&t.data()[s * c..(s + 1) * c]);
        }
    }
    let mut shape = spatial.to_vec();
    shape.push(total);
    Tensor::from_vec(&shape, out)
}

/// Splits a gradient of a concatenation back into per-input gradients.
pub fn concat_backward(grad_out: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>> {
    let rank = grad_out.rank();
    let total = grad_out.shape()[rank - 1];
    if channels.iter().sum::<usize>() != total {
        return Err(Error::shape(
            "concat_backward",
            format!("channel split {channels:?} does not sum to {total}"),
        ));
    }
    let spatial = &grad_out.shape()[..rank - 1];
    let sites: usize = spatial.iter().product();
    let mut parts: Vec<Vec<f64>> = channels.iter().map(|&c| Vec::with_capacity(sites * c)).collect();
    for row in grad_out.data().chunks_exact(total) {
        let mut off = 0;
        for (p, &c) in parts.iter_mut().zip(channels) {
            p.extend_from_slice(&row[off..off + c]);
            off += c;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(data, &c)| {
            let mut shape = spatial.to_vec();
            shape.push(c);
            Tensor::from_vec(&shape, data)
        })
        .collect()
}

/// Zero-pads a planar map `[l,w,c]` at the high end of both axes.
pub fn pad_plane(input: &Tensor, new_l: usize, new_w: usize) -> Result<Tensor> {
    let [l, w, c] = match *input.shape() {
        [a, b, c] => [a, b, c],
        _ => return Err(Error::shape("pad_plane", format!("expected [l,w,c], got {:?}", input.shape()))),
    };
    if new_l < l || new_w < w {
        return Err(Error::shape("pad_plane", format!("cannot pad {:?} to {new_l}x{new_w}", input.shape())));
    }
    let mut out = Tensor::zeros(&[new_l, new_w, c]);
    for x in 0..l {
        out.data_mut()[x * new_w * c..(x * new_w + w) * c].copy_from_slice(&input.data()[x * w * c..(x + 1) * w * c]);
    }
    Ok(out)
}

/// Keeps the low `l x w` corner of a planar map.
pub fn crop_plane(input: &Tensor, l: usize, w: usize) -> Result<Tensor> {
    let [il, iw, c] = match *input.shape() {
        [a, b, c] => [a, b, c],
        _ => return Err(Error::shape("crop_plane", format!("expected [l,w,c], got {:?}", input.shape()))),
    };
    if l > il || w > iw || l == 0 || w == 0 {
        return Err(Error::shape("crop_plane", format!("cannot crop {:?} to {l}x{w}", input.shape())));
    }
    let mut out = Vec::with_capacity(l * w * c);
    for x in 0..l {
        out.extend_from_slice(&input.data()[x * iw * c..(x * iw + w) * c]);
    }
    Tensor::from_vec(&[l, w, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let t = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&t, &Tensor::filled(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn concat_channel_shapes() {
        let a = Tensor::filled(&[8, 8, 3], 1.0);
        let b = Tensor::filled(&[8, 8, 5], 2.0);
        let c = concat(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), [8, 8, 8]);
        assert_eq!(&c.data()[..8], &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0]);
        let parts = concat_backward(&c, &[3, 5]).unwrap();
        assert!(parts[0].bit_eq(&a) && parts[1].bit_eq(&b));
    }

    #[test]
    fn concat_spatial_mismatch_lists_shapes() {
        let err = concat(&[&Tensor::zeros(&[4, 4, 1]), &Tensor::zeros(&[4, 5, 1])]).unwrap_err().to_string();
        assert!(err.contains("[4, 4, 1]") && err.contains("[4, 5, 1]"), "{err}");
    }

    #[test]
    fn pad_crop_round_trip() {
        let t = Tensor::from_vec(&[2, 3, 1], (0..6).map(f64::from).collect()).unwrap();
        let p = pad_plane(&t, 4, 4).unwrap();
        assert_eq!(p.shape(), [4, 4, 1]);
        assert_eq!(p.data()[3], 0.0);
        assert!(crop_plane(&p, 2, 3).unwrap().bit_eq(&t));
    }
}
