use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ipnseg_core::formats::{encode_vmap, read_pgm, read_vmap, write_vmap};
use ipnseg_core::network::ModelParams;
use ipnseg_core::projection::{generate_all, Map2D, MapKind};
use ipnseg_core::synthdata::load_sample;

const SMALL: &str = "\
n_samples = 10
phantom_l = 32
phantom_w = 32
faz_radius = 5
plm_channels = 2,4,4
plane_base = 4
penultimate_channels = 4
global_base = 4
patch_l = 16
patch_w = 16
step = 8
stage1_iters = 20
stage1_save_every = 10
stage2_iters = 10
stage2_save_every = 5
";

fn ipnseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipnseg")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> String {
    let o = ipnseg(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn setup(extra: &str) -> (tempfile::TempDir, PathBuf, String) {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, format!("{SMALL}{extra}")).unwrap();
    let out = dir.path().join("run");
    (dir, out, conf.to_string_lossy().into_owned())
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_is_reproducible_and_guards_dirty_dirs() {
    let (_d, out, conf) = setup("");
    let o = out.to_str().unwrap();
    run_ok(&["--config", &conf, "--out", o, "gen"]);
    let first = tree(&out.join("data"));
    let manifest = fs::read_to_string(out.join("data/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 10);
    assert_eq!(manifest.lines().filter(|l| l.ends_with("\ttest")).count(), 2);

    assert_eq!(ipnseg(&["--config", &conf, "--out", o, "gen"]).status.code(), Some(1));
    run_ok(&["--config", &conf, "--out", o, "--force", "gen"]);
    assert_eq!(first, tree(&out.join("data")));
    let echoed = fs::read_to_string(out.join("data/config.txt")).unwrap();
    assert!(echoed.contains("n_samples = 10") && echoed.contains("stage1_lr = 0.001"));
}

#[test]
fn exit_codes() {
    let (d, out, _) = setup("");
    let bad = d.path().join("bad.conf");
    fs::write(&bad, "nonsense_key = 3\n").unwrap();
    let o = ipnseg(&["--config", bad.to_str().unwrap(), "gen"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key `nonsense_key`"));
    assert_eq!(ipnseg(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ipnseg(&["--out", out.to_str().unwrap(), "train"]).status.code(), Some(2));
    assert_eq!(ipnseg(&["--help"]).status.code(), Some(0));
}

#[test]
fn ipn_pipeline_contracts() {
    let (_d, out, conf) = setup("variant = ipn\n");
    let o = out.to_str().unwrap();
    for c in ["gen", "train", "infer", "eval"] {
        run_ok(&["--config", &conf, "--out", o, c]);
    }
    let ck = ModelParams::load(&out.join("train/model.ckpt")).unwrap();
    assert!(ck.names().iter().all(|n| n.starts_with("f.")));
    assert_eq!(fs::read_to_string(out.join("train/stage1_log.tsv")).unwrap().lines().count(), 20);
    assert!(!out.join("train/stage2_log.tsv").exists());

    let seams = fs::read_to_string(out.join("infer/seam_report.tsv")).unwrap();
    assert!(seams.starts_with("id\tclass\tseam_d16\tseam_d8\n"));
    assert_eq!(seams.lines().count(), 3);
    let mask = read_pgm(&out.join("infer/syn0008/mask_rv.pgm")).unwrap();
    assert_eq!((mask.rows, mask.cols), (32, 32));

    // brute-force recomputation of the report
    let th: f64 = fs::read_to_string(out.join("train/thresholds.tsv")).unwrap().trim().split('\t').nth(1).unwrap().parse().unwrap();
    let csv = fs::read_to_string(out.join("eval/report_rv.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        let p = read_vmap(&out.join("infer").join(f[0]).join("prob_rv.vmap"), MapKind::Probability).unwrap();
        let gt = load_sample(&out.join("data"), f[0]).unwrap().rv_gt.data;
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for (pv, g) in p.data.iter().zip(&gt) {
            match (*pv >= th, *g == 1.0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        let dice = if 2 * tp + fp + fn_ == 0 { 1.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        let jac = if tp + fp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fp + fn_) as f64 };
        let sens = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
        let spec = if tn + fp == 0 { 1.0 } else { tn as f64 / (tn + fp) as f64 };
        assert_eq!(&f[1..], &[format!("{dice:.10}"), format!("{jac:.10}"), format!("{:.10}", (sens + spec) / 2.0)]);
    }

    // ground truth evaluated against itself
    for id in ["syn0008", "syn0009"] {
        let gt = load_sample(&out.join("data"), id).unwrap().rv_gt;
        write_vmap(&out.join("infer").join(id).join("prob_rv.vmap"), &Map2D { kind: MapKind::Probability, ..gt }).unwrap();
    }
    run_ok(&["--config", &conf, "--out", o, "--force", "eval"]);
    let csv = fs::read_to_string(out.join("eval/report_rv.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",1.0000000000,1.0000000000,1.0000000000")), "{csv}");
}

#[test]
fn ipnv2plus_writes_both_stages_and_global_seams() {
    let (_d, out, conf) = setup("variant = ipnv2plus\ntask = multitask\n");
    let o = out.to_str().unwrap();
    for c in ["gen", "train", "infer", "eval"] {
        run_ok(&["--config", &conf, "--out", o, c]);
    }
    assert_eq!(fs::read_to_string(out.join("train/stage2_log.tsv")).unwrap().lines().count(), 10);
    assert_eq!(fs::read_to_string(out.join("train/thresholds.tsv")).unwrap().lines().count(), 2);
    let seams = fs::read_to_string(out.join("infer/seam_report.tsv")).unwrap();
    assert!(seams.lines().next().unwrap().ends_with("\tseam_global"));
    assert_eq!(seams.lines().count(), 1 + 2 * 2);
    assert!(out.join("eval/report_faz.csv").exists() && out.join("eval/report_rv.csv").exists());

    // a checkpoint from another variant is refused
    let other = out.parent().unwrap().join("v2.conf");
    fs::write(&other, format!("{SMALL}variant = ipnv2\ntask = multitask\n")).unwrap();
    let r = ipnseg(&["--config", other.to_str().unwrap(), "--out", o, "--force", "infer"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("checkpoint"));
}

#[test]
fn project_matches_library() {
    let (_d, out, conf) = setup("");
    let o = out.to_str().unwrap();
    run_ok(&["--config", &conf, "--out", o, "gen"]);
    run_ok(&["--config", &conf, "--out", o, "project", "--ids", "syn0003"]);
    let dir = out.join("project/syn0003");
    let mut names: Vec<String> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["B1.vmap", "B2.vmap", "B3.vmap", "B4.vmap", "B5.vmap", "B6.vmap"]);
    let s = load_sample(&out.join("data"), "syn0003").unwrap();
    let maps = generate_all(&s.oct, &s.octa, &s.surfaces).unwrap();
    assert_eq!(fs::read(dir.join("B5.vmap")).unwrap(), encode_vmap(&maps[4]));
    assert_eq!(ipnseg(&["--config", &conf, "--out", o, "--force", "project", "--ids", "nope"]).status.code(), Some(2));
}

#[test]
fn octa500_dataset_through_descriptor() {
    let fx = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/octa500");
    let (_d, out, conf) = setup(&format!(
        "dataset = octa500\ndata_dir = {}\nocta500_layout = {}\n",
        fx.display(),
        fx.join("layout.txt").display()
    ));
    run_ok(&["--config", &conf, "--out", out.to_str().unwrap(), "project"]);
    let b1 = read_vmap(&out.join("project/10001/B1.vmap"), MapKind::B1).unwrap();
    assert_eq!(b1.dims, (8, 8));
    assert_eq!(ipnseg(&["--config", &conf, "--out", out.to_str().unwrap(), "gen"]).status.code(), Some(1));
}

#[test]
fn verify_passes_and_names_corrupted_op() {
    let o = ipnseg(&["verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let o = ipnseg(&["verify", "--corrupt-op", "collapse_conv"]);
    assert_eq!(o.status.code(), Some(3));
    let text = String::from_utf8_lossy(&o.stdout);
    let failed: Vec<&str> = text.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert_eq!(failed.len(), 1);
    assert!(failed[0].contains("collapse_conv"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("collapse_conv"));
}
