use std::path::{Path, PathBuf};

use ipnseg_core::formats::*;
use ipnseg_core::network::ModelParams;
use ipnseg_core::projection::Modality;
use ipnseg_core::synthdata::*;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

/// Reads `rel`, re-encodes it through `codec`, and checks the bytes match.
fn assert_round_trip(rel: &str, codec: impl Fn(&[u8], &Path) -> Vec<u8>) {
    let path = fixture(rel);
    let bytes = std::fs::read(&path).unwrap();
    let once = codec(&bytes, &path);
    assert_eq!(once, bytes, "{rel}: first write differs");
    assert_eq!(codec(&once, &path), once, "{rel}: second write differs");
}

#[test]
fn formats_round_trip_byte_identically() {
    for rel in ["formats/vol_u8.vvol", "formats/vol_f64.vvol"] {
        assert_round_trip(rel, |b, p| {
            let (v, dt) = decode_vvol(b, Modality::Octa, p).unwrap();
            encode_vvol(&v, dt).unwrap()
        });
    }
    assert_round_trip("formats/surf.vsurf", |b, p| encode_vsurf(&decode_vsurf(b, p).unwrap()).unwrap());
    assert_round_trip("formats/mask.pgm", |b, p| {
        let img = decode_pgm(b, p).unwrap();
        encode_pgm(&mask_to_pgm((img.rows, img.cols), &pgm_to_mask(&img)))
    });
    assert_round_trip("formats/tiny.ckpt", |b, p| ModelParams::from_bytes(b, p).unwrap().to_bytes());
}

#[test]
fn round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let (v, dt) = read_vvol(&fixture("formats/vol_f64.vvol"), Modality::Oct).unwrap();
    let out = dir.path().join("nested/v.vvol");
    write_vvol(&out, &v, dt).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(fixture("formats/vol_f64.vvol")).unwrap());
    let ck = ModelParams::load(&fixture("formats/tiny.ckpt")).unwrap();
    ck.save(&dir.path().join("c.ckpt")).unwrap();
    assert!(ModelParams::load(&dir.path().join("c.ckpt")).unwrap().values_bit_eq(&ck));
}

#[test]
fn octa500_fixture_loads() {
    let layout = Octa500Layout::load(&fixture("octa500/layout.txt")).unwrap();
    assert!(!layout.check_extents);
    let s = load_octa500_sample(&layout, "10001").unwrap();
    assert_eq!(s.oct.dims(), [8, 8, 16]);
    assert_eq!(s.octa.dims(), [8, 8, 16]);
    assert_eq!(s.oct.fov_mm, Some([6.0, 6.0, 2.0]));
    // B-scan x = 3: image column y, row z
    let img = image::open(fixture("octa500/OCT/10001/3.bmp")).unwrap().to_luma8();
    assert_eq!(s.oct.get(3, 5, 11), f64::from(img.get_pixel(5, 11)[0]));
    let faz = s.faz_gt.to_mask().unwrap();
    assert!(faz[3 * 8 + 3] && !faz[0]);
    assert_eq!(s.rv_gt.dims, (8, 8));

    let written = tempfile::tempdir().unwrap();
    save_sample(written.path(), &s).unwrap();
    let back = load_sample(written.path(), "10001").unwrap();
    assert_eq!(back.oct.data(), s.oct.data());
    assert_eq!(back.surfaces, s.surfaces);
    assert_eq!(back.rv_gt, s.rv_gt);
}

#[test]
fn octa500_extent_check_and_missing_files() {
    let mut layout = Octa500Layout::load(&fixture("octa500/layout.txt")).unwrap();
    layout.check_extents = true;
    let e = load_octa500_sample(&layout, "10001").unwrap_err().to_string();
    assert!(e.contains("[400, 400, 640]"), "{e}");
    let e = load_octa500_sample(&layout, "10002").unwrap_err().to_string();
    assert!(e.contains("10002"), "{e}");
    assert_eq!(Octa500Subset::of_id("10001"), Some(Octa500Subset::Fov6mm));
    assert_eq!(octa500_expected_extents("10400"), Some([304, 304, 640]));
}
