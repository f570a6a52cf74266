//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::Tensor;

/// Settings for [`grad_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference half step.
    pub eps: f64,
    /// Relative errors are taken against `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    /// Probe at most this many entries per tensor (seeded choice); `None` probes all.
    pub max_probes: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-6, floor: 1e-3, max_probes: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor index, flat element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub probes: usize,
}

/// Compares `analytic[i]`, the claimed gradient of `loss` with respect to
/// `inputs[i]`, against central differences.
pub fn grad_check<F>(inputs: &[Tensor], analytic: &[Tensor], loss: F, cfg: &GradCheckConfig) -> GradCheckReport
where
    F: Fn(&[Tensor]) -> f64,
{
    assert_eq!(inputs.len(), analytic.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, probes: 0 };
    for (ti, grad) in analytic.iter().enumerate() {
        assert_eq!(grad.shape(), inputs[ti].shape(), "gradient shape differs from input {ti}");
        let n = inputs[ti].len();
        let mut idx: Vec<usize> = match cfg.max_probes {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        idx.sort_unstable();
        for e in idx {
            let orig = work[ti].data()[e];
            work[ti].data_mut()[e] = orig + cfg.eps;
            let up = loss(&work);
            work[ti].data_mut()[e] = orig - cfg.eps;
            let down = loss(&work);
            work[ti].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * cfg.eps);
            let a = grad.data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            report.probes += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((ti, e));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_passes() {
        let x = Tensor::from_vec(&[3], vec![0.3, -1.2, 2.0]).unwrap();
        let g = x.map(|v| 2.0 * v);
        let r = grad_check(&[x], &[g], |t| t[0].data().iter().map(|v| v * v).sum(), &GradCheckConfig::default());
        assert!(r.max_rel_error < 1e-8);
        assert_eq!(r.probes, 3);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let g = x.map(|v| 2.2 * v);
        let r = grad_check(&[x], &[g], |t| t[0].data().iter().map(|v| v * v).sum(), &GradCheckConfig::default());
        assert!(r.max_rel_error > 0.05);
    }
}
