//! Self-verification suites: finite-difference gradient checks for every
//! differentiable op and network variant, brute-force oracle comparisons and
//! algebraic/shape invariants.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::metrics::{bacc, confusion, dice, jac, ConfusionCounts};
use crate::network::{
    FeatureMap2D, GlobalNetConfig, IpnConfig, ModelParams, Network, NetworkConfig, ParamId, PlanePerceptronConfig,
    Variant,
};
use crate::numerics::*;
use crate::projection::{project, LayerSurfaces, MapKind, Modality, ProjectionMode, Region, Volume3D};
use crate::tiling::{crop_patch, plan_patches, splice};

/// Per-op relative error bound.
pub const OP_TOLERANCE: f64 = 1e-5;
/// End-to-end network relative error bound.
pub const NETWORK_TOLERANCE: f64 = 1e-4;

/// Names accepted by [`VerifyOptions::corrupt_op`].
pub const GRADIENT_CHECKS: [&str; 17] = [
    "conv3d",
    "conv2d",
    "conv2d_1x1",
    "collapse_conv",
    "uni_pool_h_max",
    "uni_pool_h_avg",
    "pool2d",
    "upsample2d",
    "relu",
    "concat",
    "pad_plane",
    "crop_plane",
    "resize_h_linear",
    "softmax_ce",
    "ipn",
    "ipnv2",
    "global",
];

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Perturbs the analytic gradient of the named check so it must fail.
    pub corrupt_op: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn corrupt(name: &str, opts: &VerifyOptions, grads: &mut [Tensor]) {
    if opts.corrupt_op.as_deref() == Some(name) {
        if let Some(g) = grads.first_mut() {
            *g = g.map(|v| 1.5 * v + 1e-2);
        }
    }
}

fn timed(name: &str, f: impl FnOnce() -> (bool, String)) -> CheckResult {
    let t = Instant::now();
    let (passed, detail) = f();
    CheckResult { name: name.to_string(), passed, detail, seconds: t.elapsed().as_secs_f64() }
}

fn gc_result(rep: &GradCheckReport, tol: f64) -> (bool, String) {
    (
        rep.max_rel_error < tol && rep.probes > 0,
        format!("max rel error {:.3e} over {} probes (bound {tol:.0e})", rep.max_rel_error, rep.probes),
    )
}

/// Checks `backward(inputs, r)` against differences of `<forward(inputs), r>`.
fn op_check<F, B>(name: &str, opts: &VerifyOptions, inputs: Vec<Tensor>, forward: F, backward: B) -> CheckResult
where
    F: Fn(&[Tensor]) -> Tensor,
    B: Fn(&[Tensor], &Tensor) -> Vec<Tensor>,
{
    timed(name, || {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
        let out = forward(&inputs);
        let r = Tensor::randn(out.shape(), 1.0, &mut rng);
        let mut grads = backward(&inputs, &r);
        corrupt(name, opts, &mut grads);
        let cfg = GradCheckConfig { seed: opts.seed, ..GradCheckConfig::default() };
        let rep = grad_check(&inputs, &grads, |v| forward(v).dot(&r), &cfg);
        gc_result(&rep, OP_TOLERANCE)
    })
}

fn rn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// Per-op finite-difference checks.
pub fn op_gradient_suite(opts: &VerifyOptions) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    let conv_grads = |g: ConvGrads| vec![g.input, g.weights, g.bias];

    out.push(op_check(
        "conv3d",
        opts,
        vec![rn(&[4, 4, 4, 2], &mut rng), rn(&[3, 3, 3, 2, 3], &mut rng), rn(&[3], &mut rng)],
        |v| conv3d(&v[0], &v[1], &v[2]).unwrap(),
        |v, r| conv_grads(conv3d_backward(&v[0], &v[1], &v[2], r).unwrap()),
    ));
    out.push(op_check(
        "conv2d",
        opts,
        vec![rn(&[5, 4, 3], &mut rng), rn(&[3, 3, 3, 2], &mut rng), rn(&[2], &mut rng)],
        |v| conv2d(&v[0], &v[1], &v[2]).unwrap(),
        |v, r| conv_grads(conv2d_backward(&v[0], &v[1], &v[2], r).unwrap()),
    ));
    out.push(op_check(
        "conv2d_1x1",
        opts,
        vec![rn(&[4, 4, 3], &mut rng), rn(&[1, 1, 3, 2], &mut rng), rn(&[2], &mut rng)],
        |v| conv2d(&v[0], &v[1], &v[2]).unwrap(),
        |v, r| conv_grads(conv2d_backward(&v[0], &v[1], &v[2], r).unwrap()),
    ));
    out.push(op_check(
        "collapse_conv",
        opts,
        vec![rn(&[3, 3, 6, 2], &mut rng), rn(&[1, 1, 6, 2, 3], &mut rng), rn(&[3], &mut rng)],
        |v| collapse_conv(&v[0], &v[1], &v[2]).unwrap(),
        |v, r| conv_grads(collapse_conv_backward(&v[0], &v[1], &v[2], r).unwrap()),
    ));
    for (name, mode) in [("uni_pool_h_max", PoolMode::Max), ("uni_pool_h_avg", PoolMode::Avg)] {
        out.push(op_check(
            name,
            opts,
            vec![rn(&[3, 3, 8, 2], &mut rng)],
            move |v| uni_pool_h(&v[0], 2, mode).unwrap(),
            move |v, r| vec![uni_pool_h_backward(&v[0], 2, mode, r).unwrap()],
        ));
    }
    out.push(op_check(
        "pool2d",
        opts,
        vec![rn(&[4, 6, 2], &mut rng)],
        |v| pool2d(&v[0]).unwrap(),
        |v, r| vec![pool2d_backward(&v[0], r).unwrap()],
    ));
    out.push(op_check(
        "upsample2d",
        opts,
        vec![rn(&[3, 2, 2], &mut rng)],
        |v| upsample2d(&v[0]).unwrap(),
        |_, r| vec![upsample2d_backward(r).unwrap()],
    ));
    out.push(op_check(
        "relu",
        opts,
        vec![rn(&[4, 4, 3], &mut rng)],
        |v| relu(&v[0]),
        |v, r| vec![relu_backward(&v[0], r).unwrap()],
    ));
    out.push(op_check(
        "concat",
        opts,
        vec![rn(&[3, 3, 2], &mut rng), rn(&[3, 3, 4], &mut rng)],
        |v| concat(&[&v[0], &v[1]]).unwrap(),
        |_, r| concat_backward(r, &[2, 4]).unwrap(),
    ));
    out.push(op_check(
        "pad_plane",
        opts,
        vec![rn(&[3, 5, 2], &mut rng)],
        |v| pad_plane(&v[0], 4, 8).unwrap(),
        |_, r| vec![crop_plane(r, 3, 5).unwrap()],
    ));
    out.push(op_check(
        "crop_plane",
        opts,
        vec![rn(&[6, 5, 2], &mut rng)],
        |v| crop_plane(&v[0], 4, 3).unwrap(),
        |_, r| vec![pad_plane(r, 6, 5).unwrap()],
    ));
    out.push(op_check(
        "resize_h_linear",
        opts,
        vec![rn(&[2, 3, 9, 2], &mut rng)],
        |v| resize_h_linear(&v[0], 4).unwrap(),
        |v, r| vec![resize_h_linear_backward(v[0].shape(), r).unwrap()],
    ));
    {
        let name = "softmax_ce";
        let logits = rn(&[4, 4, 3], &mut rng);
        let labels: Vec<u8> = (0..16).map(|_| rng.gen_range(0..3)).collect();
        out.push(timed(name, || {
            let mut grads = vec![softmax_ce(&logits, &labels).unwrap().1];
            corrupt(name, opts, &mut grads);
            let cfg = GradCheckConfig { seed: opts.seed, ..GradCheckConfig::default() };
            let rep = grad_check(&[logits.clone()], &grads, |v| softmax_ce(&v[0], &labels).unwrap().0, &cfg);
            gc_result(&rep, OP_TOLERANCE)
        }));
    }
    out
}

/// Small network used by the end-to-end checks.
pub fn toy_network_config(variant: Variant) -> NetworkConfig {
    NetworkConfig {
        variant,
        ipn: IpnConfig {
            plm_channels: vec![2, 3, 3],
            plm_strides: vec![2, 4, 5],
            convs_per_plm: 2,
            num_classes: 2,
            input_channels: 2,
            pool_mode: PoolMode::Max,
        },
        plane: PlanePerceptronConfig { unet_depth: 2, base_channels: 2, penultimate_channels: 4 },
        global: GlobalNetConfig { unet_depth: 2, base_channels: 2 },
    }
}

/// Init with nonzero biases so no pre-activation sits exactly on a ReLU kink.
fn generic_params(net: &Network, seed: u64) -> ModelParams {
    let mut p = net.init_params(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for i in 0..p.len() {
        if p.names()[i].ends_with(".b") {
            let q = p.param_mut(ParamId(i));
            q.value = Tensor::randn(q.value.shape(), 0.1, &mut rng);
        }
    }
    p
}

fn params_from(base: &ModelParams, values: &[Tensor]) -> ModelParams {
    let mut p = base.clone();
    for (i, v) in values.iter().enumerate() {
        p.param_mut(ParamId(i)).value = v.clone();
    }
    p
}

const NET_PROBES: usize = 12;

/// End-to-end checks of the IPN, IPN-V2 and global networks, with respect to
/// the input and every parameter tensor (a seeded subset of entries each).
pub fn network_gradient_suite(opts: &VerifyOptions) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for (name, variant) in [("ipn", Variant::Ipn), ("ipnv2", Variant::IpnV2)] {
        out.push(timed(name, || {
            let net = Network::new(&toy_network_config(variant)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(11));
            let mut params = generic_params(&net, opts.seed);
            let x = rn(&[8, 8, 40, 2], &mut rng);
            let labels: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2)).collect();
            params.zero_grads();
            let t = net.forward(&params, &x).unwrap();
            let (_, g) = softmax_ce(&t.logits, &labels).unwrap();
            let gx = net.backward(&mut params, &t, &g).unwrap();
            let mut inputs = vec![x];
            let mut grads = vec![gx];
            for (_, p) in params.iter() {
                inputs.push(p.value.clone());
                grads.push(p.grad.clone());
            }
            corrupt(name, opts, &mut grads);
            let cfg = GradCheckConfig { seed: opts.seed, max_probes: Some(NET_PROBES), ..GradCheckConfig::default() };
            let rep = grad_check(
                &inputs,
                &grads,
                |v| {
                    let p = params_from(&params, &v[1..]);
                    softmax_ce(&net.forward(&p, &v[0]).unwrap().logits, &labels).unwrap().0
                },
                &cfg,
            );
            let (ok, mut detail) = gc_result(&rep, NETWORK_TOLERANCE);
            if let Some((t, e)) = rep.worst {
                let which = if t == 0 { "input" } else { params.names()[t - 1].as_str() };
                detail.push_str(&format!("; worst at {which}[{e}]"));
            }
            (ok, detail)
        }));
    }
    out.push(timed("global", || {
        let net = Network::new(&toy_network_config(Variant::IpnV2Plus)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(12));
        let mut params = generic_params(&net, opts.seed);
        let f = rn(&[16, 16, 4], &mut rng);
        let labels: Vec<u8> = (0..256).map(|_| rng.gen_range(0..2)).collect();
        params.zero_grads();
        let t = net.global_forward(&params, &FeatureMap2D { data: f.clone() }).unwrap();
        let (_, g) = softmax_ce(&t.logits, &labels).unwrap();
        let gf = net.global_backward(&mut params, &t, &g).unwrap();
        let first_g = params.names().iter().position(|n| n.starts_with("g.")).unwrap();
        let mut inputs = vec![f];
        let mut grads = vec![gf];
        for (_, p) in params.iter().skip(first_g) {
            inputs.push(p.value.clone());
            grads.push(p.grad.clone());
        }
        corrupt("global", opts, &mut grads);
        let cfg = GradCheckConfig { seed: opts.seed, max_probes: Some(NET_PROBES), ..GradCheckConfig::default() };
        let rep = grad_check(
            &inputs,
            &grads,
            |v| {
                let mut p = params.clone();
                for (i, t) in v[1..].iter().enumerate() {
                    p.param_mut(ParamId(first_g + i)).value = t.clone();
                }
                let t = net.global_forward(&p, &FeatureMap2D { data: v[0].clone() }).unwrap();
                softmax_ce(&t.logits, &labels).unwrap().0
            },
            &cfg,
        );
        let (ok, mut detail) = gc_result(&rep, NETWORK_TOLERANCE);
        if let Some((t, e)) = rep.worst {
            let which = if t == 0 { "input" } else { params.names()[first_g + t - 1].as_str() };
            detail.push_str(&format!("; worst at {which}[{e}]"));
        }
        (ok, detail)
    }));
    out
}

fn random_mask(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    (0..n).map(|_| rng.gen_bool(p)).collect()
}

/// Random valid integer surfaces for an `l x w x h` volume.
pub fn random_surfaces(l: usize, w: usize, h: usize, rng: &mut ChaCha8Rng) -> LayerSurfaces {
    let mut ilm = Vec::new();
    let mut opl = Vec::new();
    let mut bm = Vec::new();
    for _ in 0..l * w {
        let mut z = [rng.gen_range(0..h as u32), rng.gen_range(0..h as u32), rng.gen_range(0..h as u32)];
        z.sort_unstable();
        ilm.push(z[0]);
        opl.push(z[1]);
        bm.push(z[2]);
    }
    LayerSurfaces::new((l, w), ilm, opl, bm).unwrap()
}

/// Brute-force comparisons: metrics, projections, splicing.
pub fn oracle_suite(opts: &VerifyOptions) -> Vec<CheckResult> {
    let mut out = Vec::new();
    out.push(timed("metrics_vs_brute_force", || {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(21));
        let mut bad = 0;
        for _ in 0..100 {
            let p = rng.gen_range(0.05..0.95);
            let a = random_mask(64 * 64, p, &mut rng);
            let b = random_mask(64 * 64, p, &mut rng);
            let c = confusion(&a, &b).unwrap();
            let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
            for x in 0..64 {
                for y in 0..64 {
                    let (pa, gb) = (a[x * 64 + y], b[x * 64 + y]);
                    if pa && gb {
                        tp += 1;
                    } else if pa {
                        fp += 1;
                    } else if gb {
                        fn_ += 1;
                    } else {
                        tn += 1;
                    }
                }
            }
            let d = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
            let j = tp as f64 / (tp + fp + fn_) as f64;
            let ba = (tp as f64 / (tp + fn_) as f64 + tn as f64 / (tn + fp) as f64) / 2.0;
            if c != (ConfusionCounts { tp, fp, fn_, tn }) || dice(&c) != d || jac(&c) != j || bacc(&c) != ba {
                bad += 1;
            }
        }
        (bad == 0, format!("{bad} of 100 mask pairs disagree"))
    }));
    out.push(timed("projection_vs_brute_force", || {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(22));
        let mut bad = 0;
        for _ in 0..20 {
            let (l, w, h) = (8, 8, 12);
            let data: Vec<f64> = (0..l * w * h).map(|_| rng.gen_range(0.0..10.0)).collect();
            let v = Volume3D::new([l, w, h], data, Modality::Octa).unwrap();
            let s = random_surfaces(l, w, h, &mut rng);
            for region in [Region::Full, Region::IlmOpl, Region::OplBm] {
                for mode in [ProjectionMode::Avg, ProjectionMode::Max] {
                    let m = project(&v, region, mode, Some(&s), MapKind::B1).unwrap();
                    for x in 0..l {
                        for y in 0..w {
                            let i = x * w + y;
                            let (lo, hi) = match region {
                                Region::Full => (0, h - 1),
                                Region::IlmOpl => (s.ilm[i] as usize, s.opl[i] as usize),
                                Region::OplBm => (s.opl[i] as usize, s.bm[i] as usize),
                            };
                            let mut acc = if mode == ProjectionMode::Max { f64::NEG_INFINITY } else { 0.0 };
                            for z in lo..=hi {
                                let val = v.data()[(x * w + y) * h + z];
                                acc = if mode == ProjectionMode::Max { acc.max(val) } else { acc + val };
                            }
                            if mode == ProjectionMode::Avg {
                                acc /= (hi - lo + 1) as f64;
                            }
                            if m.data[i] != acc {
                                bad += 1;
                            }
                        }
                    }
                }
            }
        }
        (bad == 0, format!("{bad} pixels disagree across 20 volumes x 6 region/mode pairs"))
    }));
    out.push(timed("splice_reproduces_map", || {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(23));
        let (pl, pw, l) = (40, 36, 16);
        let map = rn(&[pl, pw, 3], &mut rng);
        let mut worst: f64 = 0.0;
        for d in [l, l / 2, l / 4] {
            let grid = plan_patches(pl, pw, l, l, d).unwrap();
            let parts: Vec<_> = grid.origins().iter().map(|&o| (o, crop_patch(&map, o, l, l).unwrap())).collect();
            let back = splice(&parts, &grid).unwrap();
            worst = worst.max(back.max_abs_diff(&map));
        }
        (worst <= 1e-12, format!("max abs deviation {worst:.3e} for d in {{l, l/2, l/4}}"))
    }));
    out
}

/// Exact check of `dice = 2 jac / (1 + jac)` on counts, plus the float residual.
pub fn dice_jac_identity(c: &ConfusionCounts) -> (bool, f64) {
    let (tp, fp, fn_) = (c.tp as u128, c.fp as u128, c.fn_ as u128);
    let s = tp + fp + fn_;
    // 2 jac / (1 + jac) = 2tp / (s + tp); compare with 2tp / (2tp + fp + fn) by cross-multiplication
    let exact = if s == 0 { dice(c) == 1.0 && jac(c) == 1.0 } else { 2 * tp * (2 * tp + fp + fn_) == 2 * tp * (s + tp) };
    let j = jac(c);
    (exact, (dice(c) - 2.0 * j / (1.0 + j)).abs())
}

/// Algebraic identity and shape-contract invariants.
pub fn invariant_suite(opts: &VerifyOptions) -> Vec<CheckResult> {
    let mut out = Vec::new();
    out.push(timed("dice_jac_identity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(31));
        let mut exact_fail = 0;
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let c = ConfusionCounts {
                tp: rng.gen_range(0..5000),
                fp: rng.gen_range(0..5000),
                fn_: rng.gen_range(0..5000),
                tn: rng.gen_range(0..5000),
            };
            let (ok, resid) = dice_jac_identity(&c);
            exact_fail += usize::from(!ok);
            worst = worst.max(resid);
        }
        (
            exact_fail == 0 && worst <= 4.0 * f64::EPSILON,
            format!("{exact_fail} exact failures in 1000 counts; max float residual {worst:.3e}"),
        )
    }));
    out.push(timed("shape_contract", || {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(32));
        let violations = shape_contract_violations(50, &mut rng);
        (violations.is_empty(), format!("{} violations in 50 configurations {violations:?}", violations.len()))
    }));
    out
}

/// Runs all three variants on `n` random `(l, w, h)` configurations and lists
/// any whose output is not `(l, w, K)`.
pub fn shape_contract_violations(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut bad = Vec::new();
    for _ in 0..n {
        let depth = rng.gen_range(1..=3);
        let strides: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=3)).collect();
        let h: usize = strides.iter().product();
        let (l, w) = (rng.gen_range(1..=12), rng.gen_range(1..=12));
        let k = rng.gen_range(2..=3);
        let cin = rng.gen_range(1..=3);
        let unet_depth = rng.gen_range(1..=2);
        let cfg = |variant| NetworkConfig {
            variant,
            ipn: IpnConfig {
                plm_channels: vec![2; depth],
                plm_strides: strides.clone(),
                convs_per_plm: 1,
                num_classes: k,
                input_channels: cin,
                pool_mode: PoolMode::Max,
            },
            plane: PlanePerceptronConfig { unet_depth, base_channels: 2, penultimate_channels: 3 },
            global: GlobalNetConfig { unet_depth: 1, base_channels: 2 },
        };
        let x = Tensor::randn(&[l, w, h, cin], 1.0, rng);
        for variant in Variant::ALL {
            let net = Network::new(&cfg(variant)).unwrap();
            let p = net.init_params(7);
            let shape = (|| -> crate::Result<Vec<usize>> {
                let t = net.forward(&p, &x)?;
                if variant.has_global() {
                    let pen = t.penultimate().expect("plane perceptron");
                    Ok(net.global_forward(&p, &pen)?.logits.shape().to_vec())
                } else {
                    Ok(t.logits.shape().to_vec())
                }
            })();
            match shape {
                Ok(s) if s == [l, w, k] => {}
                other => bad.push(format!("{variant} ({l},{w},{h},{cin}) -> {other:?}")),
            }
        }
    }
    bad
}

pub fn gradient_suite(opts: &VerifyOptions) -> Vec<CheckResult> {
    let mut v = op_gradient_suite(opts);
    v.extend(network_gradient_suite(opts));
    v
}

pub fn run_all(opts: &VerifyOptions) -> Vec<CheckResult> {
    let mut v = gradient_suite(opts);
    v.extend(oracle_suite(opts));
    v.extend(invariant_suite(opts));
    v
}

/// One `PASS|FAIL name (seconds) detail` line per check.
pub fn report(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        writeln!(s, "{} {:<26} {:>7.2}s  {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.seconds, r.detail)
            .unwrap();
    }
    s
}
