use ipnseg_core::metrics::*;
use ipnseg_core::numerics::*;
use ipnseg_core::projection::*;
use ipnseg_core::tiling::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Per-column `[min, max]` of a `[l,w,h,c]` tensor along `h`.
fn column_envelope(x: &Tensor) -> Vec<(f64, f64)> {
    let [l, w, h, c] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let mut env = Vec::with_capacity(l * w * c);
    for p in 0..l * w {
        for ch in 0..c {
            let col = (0..h).map(|z| x.data()[(p * h + z) * c + ch]);
            env.push(col.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v))));
        }
    }
    env
}

fn within_envelope(out: &Tensor, env: &[(f64, f64)]) -> bool {
    let [l, w, h, c] = [out.shape()[0], out.shape()[1], out.shape()[2], out.shape()[3]];
    (0..l * w).all(|p| {
        (0..h).all(|z| {
            (0..c).all(|ch| {
                let (lo, hi) = env[p * c + ch];
                let v = out.data()[(p * h + z) * c + ch];
                v >= lo - 1e-12 && v <= hi + 1e-12
            })
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pool_and_resize_stay_in_column_envelope(
        l in 1usize..4, w in 1usize..4, k in 1usize..4, m in 1usize..4, c in 1usize..3, out_h in 1usize..9, seed in any::<u64>()
    ) {
        let x = tensor(&[l, w, k * m, c], seed);
        let env = column_envelope(&x);
        for mode in [PoolMode::Max, PoolMode::Avg] {
            let y = uni_pool_h(&x, k, mode).unwrap();
            prop_assert_eq!(y.shape(), &[l, w, m, c]);
            prop_assert!(within_envelope(&y, &env));
        }
        let r = resize_h_linear(&x, out_h).unwrap();
        prop_assert_eq!(r.shape(), &[l, w, out_h, c]);
        prop_assert!(within_envelope(&r, &env));
        prop_assert!(relu(&x).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn conv_shapes_and_determinism(
        l in 1usize..5, w in 1usize..5, h in 1usize..5, cin in 1usize..3, cout in 1usize..3, seed in any::<u64>()
    ) {
        let x = tensor(&[l, w, h, cin], seed);
        let k = tensor(&[3, 3, 3, cin, cout], seed ^ 1);
        let b = tensor(&[cout], seed ^ 2);
        let y = conv3d(&x, &k, &b).unwrap();
        prop_assert_eq!(y.shape(), &[l, w, h, cout]);
        prop_assert!(y.bit_eq(&conv3d(&x, &k, &b).unwrap()));
        let kc = tensor(&[1, 1, h, cin, cout], seed ^ 3);
        prop_assert_eq!(collapse_conv(&x, &kc, &b).unwrap().shape().to_vec(), vec![l, w, cout]);
        let x2 = tensor(&[l, w, cin], seed ^ 4);
        let k2 = tensor(&[3, 3, cin, cout], seed ^ 5);
        prop_assert_eq!(conv2d(&x2, &k2, &b).unwrap().shape().to_vec(), vec![l, w, cout]);
    }

    #[test]
    fn grid_coverage_monotone_cost_and_splice(
        pl in 1usize..40, pw in 1usize..40, lf in 0.0f64..1.0, wf in 0.0f64..1.0, seed in any::<u64>()
    ) {
        let l = 1 + ((pl - 1) as f64 * lf) as usize;
        let w = 1 + ((pw - 1) as f64 * wf) as usize;
        let map = tensor(&[pl, pw, 2], seed);
        let mut last = usize::MAX;
        for d in 1..=l.min(w) {
            let g = plan_patches(pl, pw, l, w, d).unwrap();
            prop_assert!(g.coverage().iter().all(|&c| c >= 1));
            prop_assert!(g.len() <= last);
            last = g.len();
            let parts: Vec<_> = g.origins().iter().map(|&o| (o, crop_patch(&map, o, l, w).unwrap())).collect();
            prop_assert!(splice(&parts, &g).unwrap().max_abs_diff(&map) <= 1e-12);
        }
    }

    #[test]
    fn dice_jaccard_identity(tp in 0u64..1_000_000, fp in 0u64..1_000_000, fn_ in 0u64..1_000_000, tn in 0u64..1000) {
        let c = ConfusionCounts { tp, fp, fn_, tn };
        let (d, j) = (dice(&c), jac(&c));
        prop_assert!((d - 2.0 * j / (1.0 + j)).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn metrics_transpose_invariant_and_bacc_criterion(n in 1usize..8, m in 1usize..8, seed in any::<u64>()) {
        let r = tensor(&[n, m, 2], seed);
        let pred: Vec<bool> = (0..n * m).map(|i| r.data()[2 * i] > 0.0).collect();
        let gt: Vec<bool> = (0..n * m).map(|i| r.data()[2 * i + 1] > 0.0).collect();
        let t = |v: &[bool]| -> Vec<bool> { (0..n * m).map(|i| v[(i % n) * m + i / n]).collect() };
        let a = confusion(&pred, &gt).unwrap();
        let b = confusion(&t(&pred), &t(&gt)).unwrap();
        prop_assert_eq!((dice(&a), jac(&a), bacc(&a)), (dice(&b), jac(&b), bacc(&b)));
        let both = gt.iter().any(|&g| g) && gt.iter().any(|&g| !g);
        if both {
            prop_assert_eq!(bacc(&a) == 1.0, a.fp == 0 && a.fn_ == 0);
        }
    }

    #[test]
    fn best_threshold_ignores_sweep_order(seed in any::<u64>(), shuffle in any::<u64>()) {
        let p = tensor(&[3, 64], seed);
        let probs: Vec<Vec<f64>> = p.data().chunks(64).map(|c| c.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()).collect();
        let gts: Vec<Vec<bool>> = p.data().chunks(64).map(|c| c.iter().map(|&v| v > 0.3).collect()).collect();
        let pr: Vec<&[f64]> = probs.iter().map(Vec::as_slice).collect();
        let gr: Vec<&[bool]> = gts.iter().map(Vec::as_slice).collect();
        let sweep = default_sweep();
        let mut permuted = sweep.clone();
        permuted.reverse();
        permuted.rotate_left((shuffle % 99) as usize);
        prop_assert_eq!(best_threshold(&pr, &gr, &sweep).unwrap(), best_threshold(&pr, &gr, &permuted).unwrap());
    }

    #[test]
    fn projection_dominance_and_scaling(seed in any::<u64>(), alpha in 0.01f64..100.0) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (l, w, h) = (3, 4, 7);
        let data: Vec<f64> = (0..l * w * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v = Volume3D::new([l, w, h], data.clone(), Modality::Octa).unwrap();
        let scaled = Volume3D::new([l, w, h], data.iter().map(|x| alpha * x).collect(), Modality::Octa).unwrap();
        let s = ipnseg_core::verify::random_surfaces(l, w, h, &mut rng);
        for region in [Region::Full, Region::IlmOpl, Region::OplBm] {
            let avg = project(&v, region, ProjectionMode::Avg, Some(&s), MapKind::B1).unwrap();
            let max = project(&v, region, ProjectionMode::Max, Some(&s), MapKind::B1).unwrap();
            prop_assert!(max.data.iter().zip(&avg.data).all(|(m, a)| m >= a));
            for mode in [ProjectionMode::Avg, ProjectionMode::Max] {
                let a = project(&v, region, mode, Some(&s), MapKind::B1).unwrap();
                let b = project(&scaled, region, mode, Some(&s), MapKind::B1).unwrap();
                prop_assert!(a.data.iter().zip(&b.data).all(|(x, y)| (alpha * x - y).abs() <= 1e-12 * (1.0 + y.abs())));
            }
        }
    }
}
