//! Parameterized layers that read weights from and accumulate gradients into
//! [`ModelParams`], plus the U-shape block shared by the plane perceptron and
//! the global network.

use crate::error::Result;
use crate::network::params::{ModelParams, ParamId, ParamSpec};
use crate::numerics::{
    collapse_conv, collapse_conv_backward, concat, concat_backward, conv2d, conv2d_backward, conv3d,
    conv3d_backward, crop_plane, pad_plane, pool2d, pool2d_backward, relu, relu_backward, upsample2d,
    upsample2d_backward, ConvGrads, Tensor,
};

/// Collects parameter specs while handing out ids in registration order.
#[derive(Default)]
pub(crate) struct Builder {
    pub specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, fan_in: Option<usize>) -> ParamId {
        self.specs.push(ParamSpec { name, shape, fan_in });
        ParamId(self.specs.len() - 1)
    }

    fn conv(&mut self, prefix: &str, kind: ConvKind, kernel: &[usize], cin: usize, cout: usize) -> ConvLayer {
        let mut shape = kernel.to_vec();
        shape.extend([cin, cout]);
        let fan_in = kernel.iter().product::<usize>() * cin;
        let w = self.add(format!("{prefix}.w"), shape, Some(fan_in));
        let b = self.add(format!("{prefix}.b"), vec![cout], None);
        ConvLayer { kind, w, b, cout }
    }

    pub fn conv3d(&mut self, prefix: &str, cin: usize, cout: usize) -> ConvLayer {
        self.conv(prefix, ConvKind::D3, &[3, 3, 3], cin, cout)
    }

    pub fn conv2d(&mut self, prefix: &str, k: usize, cin: usize, cout: usize) -> ConvLayer {
        self.conv(prefix, ConvKind::D2, &[k, k], cin, cout)
    }

    pub fn collapse(&mut self, prefix: &str, h: usize, cin: usize, cout: usize) -> ConvLayer {
        self.conv(prefix, ConvKind::Collapse, &[1, 1, h], cin, cout)
    }
}

#[derive(Clone, Copy, Debug)]
enum ConvKind {
    D3,
    D2,
    Collapse,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvLayer {
    kind: ConvKind,
    w: ParamId,
    b: ParamId,
    pub cout: usize,
}

impl ConvLayer {
    pub fn forward(&self, p: &ModelParams, x: &Tensor) -> Result<Tensor> {
        let (w, b) = (p.value(self.w), p.value(self.b));
        match self.kind {
            ConvKind::D3 => conv3d(x, w, b),
            ConvKind::D2 => conv2d(x, w, b),
            ConvKind::Collapse => collapse_conv(x, w, b),
        }
    }

    /// Accumulates weight and bias gradients; returns the input gradient.
    pub fn backward(&self, p: &mut ModelParams, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let (w, b) = (p.value(self.w), p.value(self.b));
        let ConvGrads { input, weights, bias } = match self.kind {
            ConvKind::D3 => conv3d_backward(x, w, b, grad_out)?,
            ConvKind::D2 => conv2d_backward(x, w, b, grad_out)?,
            ConvKind::Collapse => collapse_conv_backward(x, w, b, grad_out)?,
        };
        p.accumulate(self.w, &weights)?;
        p.accumulate(self.b, &bias)?;
        Ok(input)
    }
}

/// A run of `conv + relu` pairs.
#[derive(Clone, Debug)]
pub(crate) struct ConvReluChain {
    layers: Vec<ConvLayer>,
}

#[derive(Clone, Debug)]
pub(crate) struct ChainTrace {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
    pub out: Tensor,
}

impl ConvReluChain {
    pub fn new(layers: Vec<ConvLayer>) -> Self {
        ConvReluChain { layers }
    }

    pub fn cout(&self) -> usize {
        self.layers.last().expect("empty chain").cout
    }

    pub fn forward(&self, p: &ModelParams, x: &Tensor) -> Result<ChainTrace> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let z = layer.forward(p, &cur)?;
            inputs.push(cur);
            cur = relu(&z);
            pre.push(z);
        }
        Ok(ChainTrace { inputs, pre, out: cur })
    }

    pub fn backward(&self, p: &mut ModelParams, t: &ChainTrace, grad_out: &Tensor) -> Result<Tensor> {
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = relu_backward(&t.pre[i], &g)?;
            g = layer.backward(p, &t.inputs[i], &g)?;
        }
        Ok(g)
    }
}

/// U-shape network on planar maps: `depth` pooling levels with `base * 2^i`
/// channels, two convolutions per level, nearest upsampling and skip
/// concatenation. Inputs whose extents are not multiples of `2^depth` are
/// zero-padded at the high end and the output is cropped back.
#[derive(Clone, Debug)]
pub(crate) struct UNet {
    enc: Vec<ConvReluChain>,
    bottom: ConvReluChain,
    dec: Vec<ConvReluChain>,
}

#[derive(Clone, Debug)]
pub(crate) struct UNetTrace {
    plane: (usize, usize),
    enc: Vec<ChainTrace>,
    bottom: ChainTrace,
    /// Decoder traces indexed by level.
    dec: Vec<ChainTrace>,
    up_channels: Vec<usize>,
    pub out: Tensor,
}

impl UNet {
    pub fn build(b: &mut Builder, prefix: &str, cin: usize, base: usize, depth: usize) -> Self {
        let ch = |i: usize| base << i;
        let pair = |b: &mut Builder, name: String, cin: usize, cout: usize| {
            ConvReluChain::new(vec![
                b.conv2d(&format!("{name}.conv0"), 3, cin, cout),
                b.conv2d(&format!("{name}.conv1"), 3, cout, cout),
            ])
        };
        let enc = (0..depth)
            .map(|i| pair(b, format!("{prefix}.enc{i}"), if i == 0 { cin } else { ch(i - 1) }, ch(i)))
            .collect();
        let bottom = pair(b, format!("{prefix}.bottom"), ch(depth - 1), ch(depth));
        let mut dec: Vec<ConvReluChain> =
            (0..depth).rev().map(|i| pair(b, format!("{prefix}.dec{i}"), ch(i + 1) + ch(i), ch(i))).collect();
        dec.reverse();
        UNet { enc, bottom, dec }
    }

    pub fn cout(&self) -> usize {
        self.dec[0].cout()
    }

    fn depth(&self) -> usize {
        self.enc.len()
    }

    pub fn forward(&self, p: &ModelParams, x: &Tensor) -> Result<UNetTrace> {
        let (l, w) = (x.shape()[0], x.shape()[1]);
        let m = 1usize << self.depth();
        let (pl, pw) = (l.div_ceil(m) * m, w.div_ceil(m) * m);
        let mut cur = if (pl, pw) == (l, w) { x.clone() } else { pad_plane(x, pl, pw)? };
        let mut enc = Vec::with_capacity(self.depth());
        for block in &self.enc {
            let t = block.forward(p, &cur)?;
            cur = pool2d(&t.out)?;
            enc.push(t);
        }
        let bottom = self.bottom.forward(p, &cur)?;
        cur = bottom.out.clone();
        let mut dec: Vec<Option<ChainTrace>> = vec![None; self.depth()];
        let mut up_channels = vec![0; self.depth()];
        for i in (0..self.depth()).rev() {
            let up = upsample2d(&cur)?;
            up_channels[i] = up.shape()[2];
            let cat = concat(&[&up, &enc[i].out])?;
            let t = self.dec[i].forward(p, &cat)?;
            cur = t.out.clone();
            dec[i] = Some(t);
        }
        let out = if (pl, pw) == (l, w) { cur } else { crop_plane(&cur, l, w)? };
        Ok(UNetTrace { plane: (l, w), enc, bottom, dec: dec.into_iter().map(Option::unwrap).collect(), up_channels, out })
    }

    pub fn backward(&self, p: &mut ModelParams, t: &UNetTrace, grad_out: &Tensor) -> Result<Tensor> {
        let padded = t.enc[0].out.shape();
        let (pl, pw) = (padded[0], padded[1]);
        let mut g = if (pl, pw) == t.plane { grad_out.clone() } else { pad_plane(grad_out, pl, pw)? };
        let mut skip_grads = Vec::with_capacity(self.depth());
        for i in 0..self.depth() {
            let g_cat = self.dec[i].backward(p, &t.dec[i], &g)?;
            let skip_c = t.enc[i].out.shape()[2];
            let mut parts = concat_backward(&g_cat, &[t.up_channels[i], skip_c])?;
            skip_grads.push(parts.pop().unwrap());
            g = upsample2d_backward(&parts.pop().unwrap())?;
        }
        g = self.bottom.backward(p, &t.bottom, &g)?;
        for i in (0..self.depth()).rev() {
            let mut gi = pool2d_backward(&t.enc[i].out, &g)?;
            gi.add_assign(&skip_grads[i])?;
            g = self.enc[i].backward(p, &t.enc[i], &gi)?;
        }
        if (pl, pw) == t.plane {
            Ok(g)
        } else {
            crop_plane(&g, t.plane.0, t.plane.1)
        }
    }
}
