//! Training loops, validation-driven model selection and patchwise inference.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{best_threshold_with_score, default_sweep};
use crate::network::model::{FeatureMap2D, Network, STAGE1_PREFIXES, STAGE2_PREFIXES};
use crate::network::params::ModelParams;
use crate::numerics::{softmax, softmax_ce, Adam, AdamConfig, Tensor};
use crate::projection::{Modality, Volume3D};
use crate::synthdata::Sample;
use crate::tiling::{crop_patch, extract_patch, plan_patches, PatchGrid, SpliceAccumulator};

/// What the network segments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Task {
    #[default]
    Rv,
    Faz,
    /// One 3-class head: 0 background, 1 RV, 2 FAZ.
    Multitask,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::Multitask => 3,
            _ => 2,
        }
    }

    /// OCT + OCTA, plus the distance map whenever FAZ is a target.
    pub fn input_channels(self) -> usize {
        match self {
            Task::Rv => 2,
            _ => 3,
        }
    }

    pub fn foreground_classes(self) -> &'static [u8] {
        match self {
            Task::Multitask => &[1, 2],
            _ => &[1],
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rv" => Ok(Task::Rv),
            "faz" => Ok(Task::Faz),
            "multitask" => Ok(Task::Multitask),
            other => Err(Error::InvalidArgument(format!("unknown task `{other}` (expected rv|faz|multitask)"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Rv => "rv",
            Task::Faz => "faz",
            Task::Multitask => "multitask",
        })
    }
}

/// Euclidean distance of every en-face pixel to the plane centre, divided by
/// the corner distance. Shape `[L,W]`.
pub fn build_distance_map(l: usize, w: usize) -> Tensor {
    let (cx, cy) = ((l as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let corner = cx.hypot(cy);
    let mut data = Vec::with_capacity(l * w);
    for x in 0..l {
        for y in 0..w {
            let d = (x as f64 - cx).hypot(y as f64 - cy);
            data.push(if corner > 0.0 { d / corner } else { 0.0 });
        }
    }
    Tensor::from_vec(&[l, w], data).expect("positive extents")
}

/// Network-ready subject: input volumes as channels and a per-pixel class map.
#[derive(Clone, Debug)]
pub struct Subject {
    pub id: String,
    pub inputs: Vec<Volume3D>,
    pub labels: Vec<u8>,
    pub plane: (usize, usize),
}

impl Subject {
    pub fn from_sample(sample: &Sample, task: Task) -> Result<Self> {
        let [l, w, h] = sample.oct.dims();
        let mut inputs = vec![sample.oct.clone(), sample.octa.clone()];
        if task.input_channels() == 3 {
            let dm = build_distance_map(l, w);
            inputs.push(Volume3D::broadcast_plane(dm.data(), l, w, h, Modality::Auxiliary)?);
        }
        let rv = sample.rv_gt.to_mask()?;
        let faz = sample.faz_gt.to_mask()?;
        let labels = match task {
            Task::Rv => rv.iter().map(|&b| u8::from(b)).collect(),
            Task::Faz => faz.iter().map(|&b| u8::from(b)).collect(),
            Task::Multitask => rv.iter().zip(&faz).map(|(&r, &f)| if f { 2 } else { u8::from(r) }).collect(),
        };
        Ok(Subject { id: sample.id.clone(), inputs, labels, plane: (l, w) })
    }

    /// All input channels over the whole plane, resampled to `target_h`: `[L,W,target_h,cin]`.
    pub fn stacked(&self, target_h: usize) -> Result<Tensor> {
        let refs: Vec<&Volume3D> = self.inputs.iter().collect();
        extract_patch(&refs, (0, 0), self.plane.0, self.plane.1, target_h)
    }

    pub fn class_mask(&self, class: u8) -> Vec<bool> {
        self.labels.iter().map(|&c| c == class).collect()
    }
}

/// Patch geometry used for training and inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchConfig {
    pub l: usize,
    pub w: usize,
    pub target_h: usize,
    /// Step of the overlapping grid used for validation and feature splicing.
    pub step: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageConfig {
    pub max_iters: usize,
    pub save_every: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub iter: usize,
    pub loss: f64,
    pub val_dice: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    /// One `iter<TAB>loss<TAB>val_dice` line per iteration; `-` where no validation ran.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            match e.val_dice {
                Some(v) => writeln!(s, "{}\t{}\t{}", e.iter, e.loss, v),
                None => writeln!(s, "{}\t{}\t-", e.iter, e.loss),
            }
            .unwrap();
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageResult {
    pub log: TrainLog,
    /// Iteration of the selected checkpoint.
    pub best_iter: usize,
    pub best_val_dice: Option<f64>,
    /// Selected threshold per foreground class.
    pub thresholds: Vec<f64>,
}

/// Foreground probability plane of class `k` from `[L,W,K]` probabilities.
pub fn class_map(probs: &Tensor, k: usize) -> Vec<f64> {
    let kk = probs.shape()[2];
    probs.data().iter().skip(k).step_by(kk).copied().collect()
}

/// Outputs of running the stage-1 network over one patch grid.
#[derive(Clone, Debug)]
pub struct Patchwise {
    pub grid: PatchGrid,
    /// Spliced per-class probabilities `[L,W,K]`.
    pub probs: Tensor,
    /// Spliced penultimate features `[L,W,c]` (IPN-V2 variants only).
    pub features: Option<Tensor>,
}

/// Runs the stage-1 network on every patch of a `d`-step grid over
/// `stacked` (`[L,W,h,cin]`) and splices probabilities and features.
pub fn patchwise(net: &Network, params: &ModelParams, stacked: &Tensor, l: usize, w: usize, d: usize) -> Result<Patchwise> {
    let (pl, pw) = (stacked.shape()[0], stacked.shape()[1]);
    let grid = plan_patches(pl, pw, l, w, d)?;
    let k = net.config().ipn.num_classes;
    let mut probs = SpliceAccumulator::new((pl, pw), k);
    let mut feats: Option<SpliceAccumulator> = None;
    for &o in grid.origins() {
        let patch = crop_patch(stacked, o, l, w)?;
        let t = net.forward(params, &patch)?;
        probs.add(o, &softmax(&t.logits)?)?;
        if let Some(pen) = t.penultimate() {
            feats.get_or_insert_with(|| SpliceAccumulator::new((pl, pw), pen.channels())).add(o, &pen.data)?;
        }
    }
    Ok(Patchwise { grid, probs: probs.finish()?, features: feats.map(|f| f.finish()).transpose()? })
}

/// Softmax of the global network applied to spliced features.
pub fn global_probabilities(net: &Network, params: &ModelParams, features: &Tensor) -> Result<Tensor> {
    let t = net.global_forward(params, &FeatureMap2D { data: features.clone() })?;
    softmax(&t.logits)
}

/// Final class probabilities `[L,W,K]` for one stacked subject: overlap-spliced
/// patch probabilities, or the global network on spliced features for IPN-V2+.
pub fn predict(net: &Network, params: &ModelParams, stacked: &Tensor, patch: &PatchConfig) -> Result<Tensor> {
    let pw = patchwise(net, params, stacked, patch.l, patch.w, patch.step)?;
    if net.variant().has_global() {
        let f = pw.features.expect("IPN-V2 trunk exposes penultimate features");
        global_probabilities(net, params, &f)
    } else {
        Ok(pw.probs)
    }
}

/// Mean over foreground classes of the best-threshold mean Dice, with the thresholds.
fn validation_score(probs: &[Tensor], subjects: &[Subject], num_classes: usize) -> Result<(f64, Vec<f64>)> {
    let classes: Vec<u8> = if num_classes == 3 { vec![1, 2] } else { vec![1] };
    let sweep = default_sweep();
    let mut total = 0.0;
    let mut thresholds = Vec::with_capacity(classes.len());
    for &k in &classes {
        let maps: Vec<Vec<f64>> = probs.iter().map(|p| class_map(p, k as usize)).collect();
        let gts: Vec<Vec<bool>> = subjects.iter().map(|s| s.class_mask(k)).collect();
        let pr: Vec<&[f64]> = maps.iter().map(Vec::as_slice).collect();
        let gr: Vec<&[bool]> = gts.iter().map(Vec::as_slice).collect();
        let (t, score) = best_threshold_with_score(&pr, &gr, &sweep)?;
        total += score;
        thresholds.push(t);
    }
    Ok((total / classes.len() as f64, thresholds))
}

fn check_stage(cfg: &StageConfig, train: &[Subject]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if cfg.max_iters == 0 || cfg.save_every == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("max_iters, save_every and batch_size must be >= 1".into()));
    }
    Ok(())
}

fn is_checkpoint(it: usize, cfg: &StageConfig) -> bool {
    (it + 1) % cfg.save_every == 0 || it + 1 == cfg.max_iters
}

/// Stage 1: Adam over patch cross-entropy with random subjects and origins.
/// Returns the parameters of the checkpoint with the best validation Dice
/// (earliest on ties; the final iterate when `val` is empty).
pub fn train_stage1(
    net: &Network,
    train: &[Subject],
    val: &[Subject],
    patch: &PatchConfig,
    cfg: &StageConfig,
    seed: u64,
) -> Result<(ModelParams, StageResult)> {
    check_stage(cfg, train)?;
    let mut params = net.init_params(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let stacked_train: Vec<Tensor> = train.iter().map(|s| s.stacked(patch.target_h)).collect::<Result<_>>()?;
    let stacked_val: Vec<Tensor> = val.iter().map(|s| s.stacked(patch.target_h)).collect::<Result<_>>()?;
    let mut adam = Adam::new(params.select(&STAGE1_PREFIXES), cfg.adam);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, Vec<f64>, ModelParams)> = None;
    for it in 0..cfg.max_iters {
        params.zero_grads();
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let i = rng.gen_range(0..train.len());
            let s = &train[i];
            let (pl, pw) = s.plane;
            if patch.l > pl || patch.w > pw {
                return Err(Error::InvalidArgument(format!(
                    "patch {}x{} exceeds plane {pl}x{pw} of `{}`",
                    patch.l, patch.w, s.id
                )));
            }
            let o = (rng.gen_range(0..=pl - patch.l), rng.gen_range(0..=pw - patch.w));
            let x = crop_patch(&stacked_train[i], o, patch.l, patch.w)?;
            let labels = crop_labels(&s.labels, s.plane, o, patch.l, patch.w);
            let t = net.forward(&params, &x)?;
            let (l, mut g) = softmax_ce(&t.logits, &labels)?;
            g.scale(1.0 / cfg.batch_size as f64);
            net.backward(&mut params, &t, &g)?;
            loss += l / cfg.batch_size as f64;
        }
        adam.step(params.select_mut(&STAGE1_PREFIXES));
        let mut val_dice = None;
        if is_checkpoint(it, cfg) && !val.is_empty() {
            let probs: Vec<Tensor> = stacked_val
                .iter()
                .map(|x| Ok(patchwise(net, &params, x, patch.l, patch.w, patch.step)?.probs))
                .collect::<Result<_>>()?;
            let (score, th) = validation_score(&probs, val, net.config().ipn.num_classes)?;
            val_dice = Some(score);
            if best.as_ref().map_or(true, |b| score > b.0) {
                best = Some((score, it, th, params.subset(&STAGE1_PREFIXES)));
            }
        }
        log.entries.push(LogEntry { iter: it, loss, val_dice });
    }
    let result = match best {
        Some((score, it, thresholds, snapshot)) => {
            params.copy_values_from(&snapshot)?;
            StageResult { log, best_iter: it, best_val_dice: Some(score), thresholds }
        }
        None => StageResult {
            log,
            best_iter: cfg.max_iters - 1,
            best_val_dice: None,
            thresholds: vec![0.5; net.config().ipn.num_classes - 1],
        },
    };
    params.zero_grads();
    Ok((params, result))
}

fn crop_labels(labels: &[u8], plane: (usize, usize), o: (usize, usize), l: usize, w: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(l * w);
    for x in o.0..o.0 + l {
        out.extend_from_slice(&labels[x * plane.1 + o.1..x * plane.1 + o.1 + w]);
    }
    out
}

/// Stage 2: trains only the global network on spliced penultimate features
/// of the frozen stage-1 model, supervised by complete labels.
pub fn train_stage2(
    net: &Network,
    stage1: &ModelParams,
    train: &[Subject],
    val: &[Subject],
    patch: &PatchConfig,
    cfg: &StageConfig,
    seed: u64,
) -> Result<(ModelParams, StageResult)> {
    check_stage(cfg, train)?;
    if !net.variant().has_global() {
        return Err(Error::InvalidArgument(format!("variant {} has no global network", net.variant())));
    }
    let mut params = net.init_params(seed);
    let frozen = stage1.subset(&STAGE1_PREFIXES);
    let expected: Vec<_> = net.param_specs().iter().filter(|s| !s.name.starts_with("g.")).cloned().collect();
    frozen.check_against(&expected).map_err(|e| Error::InvalidArgument(format!("stage-1 parameters: {e}")))?;
    params.copy_values_from(&frozen)?;
    let features = |subjects: &[Subject]| -> Result<Vec<Tensor>> {
        subjects
            .iter()
            .map(|s| {
                let pw = patchwise(net, &params, &s.stacked(patch.target_h)?, patch.l, patch.w, patch.step)?;
                Ok(pw.features.expect("IPN-V2 trunk exposes penultimate features"))
            })
            .collect()
    };
    let f_train = features(train)?;
    let f_val = features(val)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut adam = Adam::new(params.select(&STAGE2_PREFIXES), cfg.adam);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, Vec<f64>, ModelParams)> = None;
    for it in 0..cfg.max_iters {
        params.zero_grads();
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let i = rng.gen_range(0..train.len());
            let t = net.global_forward(&params, &FeatureMap2D { data: f_train[i].clone() })?;
            let (l, mut g) = softmax_ce(&t.logits, &train[i].labels)?;
            g.scale(1.0 / cfg.batch_size as f64);
            net.global_backward(&mut params, &t, &g)?;
            loss += l / cfg.batch_size as f64;
        }
        adam.step(params.select_mut(&STAGE2_PREFIXES));
        let mut val_dice = None;
        if is_checkpoint(it, cfg) && !val.is_empty() {
            let probs: Vec<Tensor> =
                f_val.iter().map(|f| global_probabilities(net, &params, f)).collect::<Result<_>>()?;
            let (score, th) = validation_score(&probs, val, net.config().ipn.num_classes)?;
            val_dice = Some(score);
            if best.as_ref().map_or(true, |b| score > b.0) {
                best = Some((score, it, th, params.subset(&STAGE2_PREFIXES)));
            }
        }
        log.entries.push(LogEntry { iter: it, loss, val_dice });
    }
    let result = match best {
        Some((score, it, thresholds, snapshot)) => {
            params.copy_values_from(&snapshot)?;
            StageResult { log, best_iter: it, best_val_dice: Some(score), thresholds }
        }
        None => StageResult {
            log,
            best_iter: cfg.max_iters - 1,
            best_val_dice: None,
            thresholds: vec![0.5; net.config().ipn.num_classes - 1],
        },
    };
    params.zero_grads();
    Ok((params, result))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_map_centre_corner_symmetry() {
        let m = build_distance_map(5, 7);
        assert_eq!(m.data()[2 * 7 + 3], 0.0);
        assert_eq!(m.data()[0], 1.0);
        assert_eq!(m.data()[4 * 7 + 6], 1.0);
        for x in 0..5 {
            for y in 0..7 {
                let v = m.data()[x * 7 + y];
                assert_eq!(v, m.data()[(4 - x) * 7 + y]);
                assert_eq!(v, m.data()[x * 7 + 6 - y]);
            }
        }
    }

    #[test]
    fn class_map_strides_over_k() {
        let p = Tensor::from_vec(&[1, 2, 3], vec![0.1, 0.2, 0.7, 0.3, 0.3, 0.4]).unwrap();
        assert_eq!(class_map(&p, 2), vec![0.7, 0.4]);
    }

    #[test]
    fn log_format() {
        let log = TrainLog {
            entries: vec![
                LogEntry { iter: 0, loss: 0.5, val_dice: None },
                LogEntry { iter: 1, loss: 0.25, val_dice: Some(0.75) },
            ],
        };
        assert_eq!(log.to_text(), "0\t0.5\t-\n1\t0.25\t0.75\n");
    }
}
