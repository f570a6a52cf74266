//! Subcommand implementations. Every command writes into its own directory
//! under the run root and echoes the effective configuration there.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ipnseg_core::formats::{mask_to_pgm, read_bytes, read_vmap, write_atomic, write_pgm, write_vmap};
use ipnseg_core::metrics::{binarize, evaluate_split};
use ipnseg_core::network::{
    class_map, patchwise, predict, train_stage1, train_stage2, ModelParams, Network, Subject, Task,
    STAGE1_PREFIXES,
};
use ipnseg_core::numerics::Tensor;
use ipnseg_core::projection::{generate_all, Map2D, MapKind};
use ipnseg_core::synthdata::{gen_dataset, load_octa500_sample, load_sample, Manifest, Octa500Layout, Sample, Split};
use ipnseg_core::tiling::seam_score;
use ipnseg_core::verify::{report, run_all, VerifyOptions};

use crate::config::RunConfig;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Creates `dir`, refusing a non-empty one unless `force`, and writes `config.txt`.
fn prepare_dir(dir: &Path, cfg: &RunConfig, force: bool) -> Result<()> {
    let dirty = fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false);
    if dirty {
        if !force {
            return Err(CliError::Usage(format!("{} is not empty (pass --force to overwrite)", dir.display())));
        }
        fs::remove_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    write_atomic(&dir.join("config.txt"), cfg.to_text().as_bytes())?;
    Ok(())
}

fn split_of(name: &str) -> Split {
    match name {
        "train" => Split::Train,
        "val" => Split::Val,
        _ => Split::Test,
    }
}

/// Dataset access for either the synthetic layout or an OCTA-500 descriptor.
pub struct Dataset {
    root: PathBuf,
    layout: Option<Octa500Layout>,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(cfg: &RunConfig, out: &Path) -> Result<Self> {
        let root = cfg.data_root(out);
        let manifest = Manifest::load(&root)?;
        let layout = if cfg.dataset == "octa500" { Some(Octa500Layout::load(Path::new(&cfg.octa500_layout))?) } else { None };
        Ok(Dataset { root, layout, manifest })
    }

    pub fn sample(&self, id: &str) -> Result<Sample> {
        Ok(match &self.layout {
            Some(l) => load_octa500_sample(l, id)?,
            None => load_sample(&self.root, id)?,
        })
    }

    pub fn subjects(&self, split: Split, task: Task) -> Result<Vec<Subject>> {
        self.manifest.ids(split).iter().map(|id| Ok(Subject::from_sample(&self.sample(id)?, task)?)).collect()
    }

    fn resolve_ids(&self, ids: &[String], cfg: &RunConfig) -> Result<Vec<String>> {
        if ids.is_empty() {
            return Ok(self.manifest.ids(split_of(&cfg.eval_split)));
        }
        for id in ids {
            if !self.manifest.entries.iter().any(|(m, _)| m == id) {
                return Err(CliError::Data(format!("id `{id}` is not in the manifest")));
            }
        }
        Ok(ids.to_vec())
    }
}

fn class_name(task: Task, k: u8) -> &'static str {
    match (task, k) {
        (Task::Faz, _) | (Task::Multitask, 2) => "faz",
        _ => "rv",
    }
}

pub fn cmd_gen(cfg: &RunConfig, out: &Path, force: bool) -> Result<()> {
    if cfg.dataset != "synthetic" {
        return Err(CliError::Usage("gen only generates the synthetic dataset".into()));
    }
    let root = cfg.data_root(out);
    prepare_dir(&root, cfg, force)?;
    let m = gen_dataset(&cfg.phantom(), cfg.n_samples, cfg.split_fractions(), cfg.seed, &root)?;
    println!(
        "generated {} samples in {} (train {}, val {}, test {})",
        m.entries.len(),
        root.display(),
        m.ids(Split::Train).len(),
        m.ids(Split::Val).len(),
        m.ids(Split::Test).len()
    );
    Ok(())
}

fn write_thresholds(path: &Path, task: Task, th: &[f64]) -> Result<()> {
    let mut s = String::new();
    for (&k, t) in task.foreground_classes().iter().zip(th) {
        writeln!(s, "{k}\t{t}").unwrap();
    }
    Ok(write_atomic(path, s.as_bytes())?)
}

fn read_thresholds(path: &Path, task: Task) -> Result<Vec<f64>> {
    let text = String::from_utf8_lossy(&read_bytes(path)?).into_owned();
    let th: Vec<f64> = text
        .lines()
        .map(|l| l.split('\t').nth(1).and_then(|v| v.parse().ok()))
        .collect::<Option<_>>()
        .ok_or_else(|| CliError::Data(format!("{}: malformed threshold file", path.display())))?;
    if th.len() != task.foreground_classes().len() {
        return Err(CliError::Data(format!("{}: {} thresholds for task {task}", path.display(), th.len())));
    }
    Ok(th)
}

pub fn cmd_train(cfg: &RunConfig, out: &Path, force: bool) -> Result<()> {
    let data = Dataset::open(cfg, out)?;
    let train = data.subjects(Split::Train, cfg.task)?;
    let val = data.subjects(Split::Val, cfg.task)?;
    let dir = out.join("train");
    prepare_dir(&dir, cfg, force)?;
    let net = Network::new(&cfg.network())?;
    let patch = cfg.patch();

    let t = Instant::now();
    let (p1, r1) = train_stage1(&net, &train, &val, &patch, &cfg.stage1(), cfg.seed)?;
    println!(
        "stage 1: {} iterations in {:.1}s, best iteration {} (val dice {})",
        cfg.stage1_iters,
        t.elapsed().as_secs_f64(),
        r1.best_iter,
        r1.best_val_dice.map_or("-".into(), |d| format!("{d:.4}"))
    );
    write_atomic(&dir.join("stage1_log.tsv"), r1.log.to_text().as_bytes())?;
    let stage1 = p1.subset(&STAGE1_PREFIXES);
    stage1.save(&dir.join("stage1.ckpt"))?;
    let mut summary = format!("stage1_best_iter = {}\nstage1_best_val_dice = {:?}\n", r1.best_iter, r1.best_val_dice);

    let (model, thresholds) = if net.variant().has_global() {
        let t = Instant::now();
        let (p2, r2) = train_stage2(&net, &stage1, &train, &val, &patch, &cfg.stage2(), cfg.seed)?;
        println!(
            "stage 2: {} iterations in {:.1}s, best iteration {} (val dice {})",
            cfg.stage2_iters,
            t.elapsed().as_secs_f64(),
            r2.best_iter,
            r2.best_val_dice.map_or("-".into(), |d| format!("{d:.4}"))
        );
        write_atomic(&dir.join("stage2_log.tsv"), r2.log.to_text().as_bytes())?;
        write!(summary, "stage2_best_iter = {}\nstage2_best_val_dice = {:?}\n", r2.best_iter, r2.best_val_dice).unwrap();
        (p2, r2.thresholds)
    } else {
        (stage1, r1.thresholds)
    };
    model.save(&dir.join("model.ckpt"))?;
    write_thresholds(&dir.join("thresholds.tsv"), cfg.task, &thresholds)?;
    write_atomic(&dir.join("summary.txt"), summary.as_bytes())?;
    Ok(())
}

fn load_model(cfg: &RunConfig, out: &Path) -> Result<(Network, ModelParams, Vec<f64>)> {
    let net = Network::new(&cfg.network())?;
    let dir = out.join("train");
    let params = ModelParams::load(&dir.join("model.ckpt"))?;
    params.check_against(&net.param_specs()).map_err(|e| {
        CliError::Data(format!("{}: checkpoint does not match the configured network: {e}", dir.display()))
    })?;
    Ok((net, params, read_thresholds(&dir.join("thresholds.tsv"), cfg.task)?))
}

fn plane_map(probs: &Tensor, k: u8) -> Result<Tensor> {
    let s = probs.shape();
    Ok(Tensor::from_vec(&[s[0], s[1]], class_map(probs, k as usize))?)
}

pub fn cmd_infer(cfg: &RunConfig, out: &Path, force: bool, ids: &[String]) -> Result<()> {
    let data = Dataset::open(cfg, out)?;
    let ids = data.resolve_ids(ids, cfg)?;
    let (net, params, thresholds) = load_model(cfg, out)?;
    let dir = out.join("infer");
    prepare_dir(&dir, cfg, force)?;
    let patch = cfg.patch();
    let no_overlap = cfg.patch_l.min(cfg.patch_w);
    let plus = net.variant().has_global();

    let mut seams = format!("id\tclass\tseam_d{no_overlap}\tseam_d{}", cfg.step);
    seams.push_str(if plus { "\tseam_global\n" } else { "\n" });
    for id in &ids {
        let s = Subject::from_sample(&data.sample(id)?, cfg.task)?;
        let stacked = s.stacked(cfg.target_h)?;
        let pw_no = patchwise(&net, &params, &stacked, cfg.patch_l, cfg.patch_w, no_overlap)?;
        let pw_ov = patchwise(&net, &params, &stacked, cfg.patch_l, cfg.patch_w, cfg.step)?;
        let fin = if plus { predict(&net, &params, &stacked, &patch)? } else { pw_ov.probs.clone() };
        let sub = dir.join(id);
        for (ci, &k) in cfg.task.foreground_classes().iter().enumerate() {
            let m = class_map(&fin, k as usize);
            let name = class_name(cfg.task, k);
            write_vmap(&sub.join(format!("prob_{name}.vmap")), &Map2D::new(s.plane, m.clone(), MapKind::Probability)?)?;
            write_pgm(&sub.join(format!("mask_{name}.pgm")), &mask_to_pgm(s.plane, &binarize(&m, thresholds[ci])))?;
            let a = seam_score(&plane_map(&pw_no.probs, k)?, &pw_no.grid)?;
            let b = seam_score(&plane_map(&pw_ov.probs, k)?, &pw_no.grid)?;
            write!(seams, "{id}\t{name}\t{a:.10}\t{b:.10}").unwrap();
            if plus {
                write!(seams, "\t{:.10}", seam_score(&plane_map(&fin, k)?, &pw_no.grid)?).unwrap();
            }
            seams.push('\n');
        }
    }
    write_atomic(&dir.join("seam_report.tsv"), seams.as_bytes())?;
    println!("inferred {} samples into {}", ids.len(), dir.display());
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, force: bool, ids: &[String]) -> Result<()> {
    let data = Dataset::open(cfg, out)?;
    let ids = data.resolve_ids(ids, cfg)?;
    let thresholds = read_thresholds(&out.join("train").join("thresholds.tsv"), cfg.task)?;
    let infer = out.join("infer");
    let dir = out.join("eval");
    prepare_dir(&dir, cfg, force)?;
    let subjects: Vec<Subject> =
        ids.iter().map(|id| Ok(Subject::from_sample(&data.sample(id)?, cfg.task)?)).collect::<Result<_>>()?;
    for (ci, &k) in cfg.task.foreground_classes().iter().enumerate() {
        let name = class_name(cfg.task, k);
        let probs: Vec<Vec<f64>> = ids
            .iter()
            .map(|id| Ok(read_vmap(&infer.join(id).join(format!("prob_{name}.vmap")), MapKind::Probability)?.data))
            .collect::<Result<_>>()?;
        let gts: Vec<Vec<bool>> = subjects.iter().map(|s| s.class_mask(k)).collect();
        let pr: Vec<&[f64]> = probs.iter().map(Vec::as_slice).collect();
        let gr: Vec<&[bool]> = gts.iter().map(Vec::as_slice).collect();
        let rep = evaluate_split(&ids, &pr, &gr, thresholds[ci])?;
        write_atomic(&dir.join(format!("report_{name}.csv")), rep.to_csv().as_bytes())?;
        write_atomic(&dir.join(format!("report_{name}.txt")), rep.to_text().as_bytes())?;
        println!("{name} (threshold {}):\n{}", thresholds[ci], rep.to_text());
    }
    Ok(())
}

pub fn cmd_project(cfg: &RunConfig, out: &Path, force: bool, ids: &[String]) -> Result<()> {
    let data = Dataset::open(cfg, out)?;
    let ids = data.resolve_ids(ids, cfg)?;
    let dir = out.join("project");
    prepare_dir(&dir, cfg, force)?;
    for id in &ids {
        let s = data.sample(id)?;
        for m in generate_all(&s.oct, &s.octa, &s.surfaces)? {
            write_vmap(&dir.join(id).join(format!("{}.vmap", m.kind)), &m)?;
        }
    }
    println!("wrote B1-B6 for {} samples into {}", ids.len(), dir.display());
    Ok(())
}

pub fn cmd_verify(seed: u64, corrupt_op: Option<String>) -> Result<()> {
    let t = Instant::now();
    let results = run_all(&VerifyOptions { seed, corrupt_op });
    print!("{}", report(&results));
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    println!("{} checks, {} failed, {:.1}s", results.len(), failed.len(), t.elapsed().as_secs_f64());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(format!("failed checks: {}", failed.join(", "))))
    }
}
