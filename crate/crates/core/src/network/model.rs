//! The three network variants.
//!
//! Parameter names: `f.*` for the projection-learning trunk (and the IPN
//! classifier), `p.*` for the IPN-V2 skip path, plane perceptron and head,
//! `g.*` for the global network.

use crate::error::{Error, Result};
use crate::network::config::{NetworkConfig, Variant};
use crate::network::layers::{Builder, ChainTrace, ConvLayer, ConvReluChain, UNet, UNetTrace};
use crate::network::params::{ModelParams, ParamSpec};
use crate::numerics::{concat, concat_backward, relu, relu_backward, uni_pool_h, uni_pool_h_backward, Tensor};

/// Name prefixes trained in stage 1.
pub const STAGE1_PREFIXES: [&str; 2] = ["f.", "p."];
/// Name prefixes trained in stage 2.
pub const STAGE2_PREFIXES: [&str; 1] = ["g."];

/// Planar feature map `[l,w,c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap2D {
    pub data: Tensor,
}

impl FeatureMap2D {
    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }
}

#[derive(Clone, Debug)]
struct Plm {
    convs: ConvReluChain,
    stride: usize,
}

#[derive(Clone, Debug)]
enum Stage1Head {
    Ipn { classifier: ConvLayer },
    V2 { skip: ConvLayer, unet: UNet, pen: ConvLayer, head: ConvLayer },
}

#[derive(Clone, Debug)]
struct GlobalNet {
    unet: UNet,
    head: ConvLayer,
}

#[derive(Clone, Debug)]
pub struct Network {
    cfg: NetworkConfig,
    plms: Vec<Plm>,
    head: Stage1Head,
    global: Option<GlobalNet>,
    specs: Vec<ParamSpec>,
}

#[derive(Clone, Debug)]
struct PlmTrace {
    chain: ChainTrace,
    pooled: Tensor,
}

#[derive(Clone, Debug)]
enum HeadTrace {
    Ipn {
        features: Tensor,
    },
    V2 {
        features: Tensor,
        skip_in: Tensor,
        skip_pre: Tensor,
        skip_channels: usize,
        unet: UNetTrace,
        pen_pre: Tensor,
        pen: Tensor,
    },
}

/// Everything the stage-1 backward pass needs.
#[derive(Clone, Debug)]
pub struct Stage1Trace {
    input_shape: Vec<usize>,
    plms: Vec<PlmTrace>,
    head: HeadTrace,
    pub logits: Tensor,
}

impl Stage1Trace {
    /// Penultimate features of the plane perceptron; `None` for plain IPN.
    pub fn penultimate(&self) -> Option<FeatureMap2D> {
        match &self.head {
            HeadTrace::V2 { pen, .. } => Some(FeatureMap2D { data: pen.clone() }),
            HeadTrace::Ipn { .. } => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GlobalTrace {
    unet: UNetTrace,
    pub logits: Tensor,
}

impl Network {
    pub fn new(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let ipn = &cfg.ipn;
        let mut b = Builder::default();
        let mut plms = Vec::new();
        let mut cin = ipn.input_channels;
        for (j, (&c, &s)) in ipn.plm_channels.iter().zip(&ipn.plm_strides).enumerate() {
            let convs = (0..ipn.convs_per_plm)
                .map(|m| b.conv3d(&format!("f.plm{j}.conv{m}"), if m == 0 { cin } else { c }, c))
                .collect();
            plms.push(Plm { convs: ConvReluChain::new(convs), stride: s });
            cin = c;
        }
        let trunk_c = cin;
        let k = ipn.num_classes;
        let head = if cfg.variant.has_plane_perceptron() {
            let skip_h = ipn.working_height() / ipn.plm_strides[0];
            let c0 = ipn.plm_channels[0];
            let skip = b.collapse("p.skip", skip_h, c0, c0);
            let unet = UNet::build(&mut b, "p", trunk_c + c0, cfg.plane.base_channels, cfg.plane.unet_depth);
            let pen = b.conv2d("p.pen", 3, unet.cout(), cfg.plane.penultimate_channels);
            let head = b.conv2d("p.head", 1, cfg.plane.penultimate_channels, k);
            Stage1Head::V2 { skip, unet, pen, head }
        } else {
            Stage1Head::Ipn { classifier: b.conv2d("f.classifier", 1, trunk_c, k) }
        };
        let global = cfg.variant.has_global().then(|| {
            let unet =
                UNet::build(&mut b, "g", cfg.plane.penultimate_channels, cfg.global.base_channels, cfg.global.unet_depth);
            let head = b.conv2d("g.head", 1, unet.cout(), k);
            GlobalNet { unet, head }
        });
        Ok(Network { cfg: cfg.clone(), plms, head, global, specs: b.specs })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn variant(&self) -> Variant {
        self.cfg.variant
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn init_params(&self, seed: u64) -> ModelParams {
        ModelParams::init(&self.specs, seed)
    }

    fn check_patch(&self, patch: &Tensor) -> Result<()> {
        let ipn = &self.cfg.ipn;
        let s = patch.shape();
        if s.len() != 4 {
            return Err(Error::shape("network", format!("expected a patch [l,w,h,cin], got {s:?}")));
        }
        let prod = ipn.working_height();
        if s[2] != prod {
            return Err(Error::shape(
                "network",
                format!("patch height h = {} is incompatible with plm stride product {prod}", s[2]),
            ));
        }
        if s[3] != ipn.input_channels {
            return Err(Error::shape(
                "network",
                format!("patch has {} channels, config expects {}", s[3], ipn.input_channels),
            ));
        }
        Ok(())
    }

    fn trunk_forward(&self, p: &ModelParams, patch: &Tensor) -> Result<Vec<PlmTrace>> {
        let mut out: Vec<PlmTrace> = Vec::with_capacity(self.plms.len());
        for plm in &self.plms {
            let x = out.last().map_or(patch, |t| &t.pooled);
            let chain = plm.convs.forward(p, x)?;
            let pooled = uni_pool_h(&chain.out, plm.stride, self.cfg.ipn.pool_mode)?;
            out.push(PlmTrace { chain, pooled });
        }
        Ok(out)
    }

    fn trunk_backward(&self, p: &mut ModelParams, t: &[PlmTrace], mut g: Tensor, skip: Option<Tensor>) -> Result<Tensor> {
        for (j, plm) in self.plms.iter().enumerate().rev() {
            if j == 0 {
                if let Some(s) = &skip {
                    g.add_assign(s)?;
                }
            }
            let gp = uni_pool_h_backward(&t[j].chain.out, plm.stride, self.cfg.ipn.pool_mode, &g)?;
            g = plm.convs.backward(p, &t[j].chain, &gp)?;
        }
        Ok(g)
    }

    fn squeeze(pooled: &Tensor) -> Result<Tensor> {
        let s = pooled.shape();
        pooled.clone().reshape(&[s[0], s[1], s[3]])
    }

    /// Head of IPN-V2 given the first module's output and the trunk's 2D features.
    fn v2_head(&self, p: &ModelParams, plm0: &Tensor, features: &Tensor) -> Result<HeadTrace> {
        let Stage1Head::V2 { skip, unet, pen, .. } = &self.head else {
            return Err(Error::InvalidArgument(format!("variant {} has no plane perceptron", self.variant())));
        };
        let skip_pre = skip.forward(p, plm0)?;
        let skip_act = relu(&skip_pre);
        let cat = concat(&[features, &skip_act])?;
        let u = unet.forward(p, &cat)?;
        let pen_pre = pen.forward(p, &u.out)?;
        let pen_act = relu(&pen_pre);
        Ok(HeadTrace::V2 {
            features: features.clone(),
            skip_in: plm0.clone(),
            skip_pre,
            skip_channels: skip.cout,
            unet: u,
            pen_pre,
            pen: pen_act,
        })
    }

    /// Stage-1 forward pass of the configured variant (IPN or IPN-V2).
    pub fn forward(&self, p: &ModelParams, patch: &Tensor) -> Result<Stage1Trace> {
        self.check_patch(patch)?;
        let plms = self.trunk_forward(p, patch)?;
        let features = Self::squeeze(&plms.last().unwrap().pooled)?;
        let (head, logits) = match &self.head {
            Stage1Head::Ipn { classifier } => {
                let logits = classifier.forward(p, &features)?;
                (HeadTrace::Ipn { features }, logits)
            }
            Stage1Head::V2 { head, .. } => {
                let h = self.v2_head(p, &plms[0].pooled, &features)?;
                let HeadTrace::V2 { pen, .. } = &h else { unreachable!() };
                let logits = head.forward(p, pen)?;
                (h, logits)
            }
        };
        Ok(Stage1Trace { input_shape: patch.shape().to_vec(), plms, head, logits })
    }

    /// Accumulates stage-1 parameter gradients; returns the gradient w.r.t. the patch.
    pub fn backward(&self, p: &mut ModelParams, t: &Stage1Trace, grad_logits: &Tensor) -> Result<Tensor> {
        let last = t.plms.last().unwrap().pooled.shape().to_vec();
        let (g_feat, g_skip) = match (&self.head, &t.head) {
            (Stage1Head::Ipn { classifier }, HeadTrace::Ipn { features }) => {
                (classifier.backward(p, features, grad_logits)?, None)
            }
            (
                Stage1Head::V2 { skip, unet, pen, head },
                HeadTrace::V2 { features, skip_in, skip_pre, skip_channels, unet: ut, pen_pre, pen: pen_act },
            ) => {
                let g = head.backward(p, pen_act, grad_logits)?;
                let g = relu_backward(pen_pre, &g)?;
                let g = pen.backward(p, &ut.out, &g)?;
                let g = unet.backward(p, ut, &g)?;
                let mut parts = concat_backward(&g, &[features.shape()[2], *skip_channels])?;
                let g_skip_act = parts.pop().unwrap();
                let g_feat = parts.pop().unwrap();
                let g_skip_pre = relu_backward(skip_pre, &g_skip_act)?;
                let g_plm0 = skip.backward(p, skip_in, &g_skip_pre)?;
                (g_feat, Some(g_plm0))
            }
            _ => return Err(Error::InvalidArgument("trace does not belong to this network".into())),
        };
        let g = g_feat.reshape(&last)?;
        let gi = self.trunk_backward(p, &t.plms, g, g_skip)?;
        debug_assert_eq!(gi.shape(), t.input_shape.as_slice());
        Ok(gi)
    }

    /// IPN mapping of one patch to logits `[l,w,K]`.
    pub fn ipn_forward(&self, p: &ModelParams, patch: &Tensor) -> Result<Tensor> {
        Ok(self.forward(p, patch)?.logits)
    }

    /// IPN-V2 logits and penultimate features for one patch.
    pub fn ipnv2_forward(&self, p: &ModelParams, patch: &Tensor) -> Result<(Tensor, FeatureMap2D)> {
        let t = self.forward(p, patch)?;
        let pen = t
            .penultimate()
            .ok_or_else(|| Error::InvalidArgument(format!("variant {} has no plane perceptron", self.variant())))?;
        Ok((t.logits, pen))
    }

    /// First-module output and trunk 2D features of a patch.
    pub fn trunk_outputs(&self, p: &ModelParams, patch: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_patch(patch)?;
        let plms = self.trunk_forward(p, patch)?;
        let features = Self::squeeze(&plms.last().unwrap().pooled)?;
        Ok((plms[0].pooled.clone(), features))
    }

    /// IPN-V2 logits from an explicit skip source and trunk features.
    pub fn ipnv2_from_parts(&self, p: &ModelParams, plm0: &Tensor, features: &Tensor) -> Result<Tensor> {
        let h = self.v2_head(p, plm0, features)?;
        let (Stage1Head::V2 { head, .. }, HeadTrace::V2 { pen, .. }) = (&self.head, &h) else { unreachable!() };
        head.forward(p, pen)
    }

    fn global_net(&self) -> Result<&GlobalNet> {
        self.global
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("variant {} has no global network", self.variant())))
    }

    pub fn global_forward(&self, p: &ModelParams, features: &FeatureMap2D) -> Result<GlobalTrace> {
        let g = self.global_net()?;
        let c = self.cfg.plane.penultimate_channels;
        if features.data.rank() != 3 || features.channels() != c {
            return Err(Error::shape(
                "global_forward",
                format!("expected [L,W,{c}] features, got {:?}", features.data.shape()),
            ));
        }
        let unet = g.unet.forward(p, &features.data)?;
        let logits = g.head.forward(p, &unet.out)?;
        Ok(GlobalTrace { unet, logits })
    }

    pub fn global_backward(&self, p: &mut ModelParams, t: &GlobalTrace, grad_logits: &Tensor) -> Result<Tensor> {
        let g = self.global_net()?;
        let gu = g.head.backward(p, &t.unet.out, grad_logits)?;
        g.unet.backward(p, &t.unet, &gu)
    }
}

/// Parameters of a fresh network for `cfg`, seeded.
pub fn init_params(cfg: &NetworkConfig, seed: u64) -> Result<ModelParams> {
    Ok(Network::new(cfg)?.init_params(seed))
}
