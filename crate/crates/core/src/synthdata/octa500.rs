//! Loader for OCTA-500-style data driven by a layout descriptor.
//!
//! The descriptor is a `key = value` text file; `#` starts a comment. Paths are
//! relative to the descriptor's directory and `{id}` is replaced by the
//! subject id.
//!
//! ```text
//! oct = OCT/{id}            # .vvol file or a directory of B-scan images
//! octa = OCTA/{id}
//! surfaces = Layers/{id}.vsurf
//! rv = GT_LargeVessel/{id}.bmp
//! faz = GT_FAZ/{id}.bmp
//! check_extents = true
//! ```
//!
//! A B-scan directory holds one 8-bit image per en-face row `x`, ordered by
//! the numeric value of the file stem; image columns run along `y` and image
//! rows along the axial direction. Label images have `L` rows and `W`
//! columns; any nonzero pixel is foreground. Images may be BMP, PNG or PGM.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::formats::{read_bytes, read_pgm, read_vsurf, read_vvol, GrayImage};
use crate::projection::{Map2D, MapKind, Modality, Volume3D};
use crate::synthdata::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Octa500Subset {
    /// 6 mm field of view, ids 10001-10300.
    Fov6mm,
    /// 3 mm field of view, ids 10301-10500.
    Fov3mm,
}

impl Octa500Subset {
    pub fn of_id(id: &str) -> Option<Self> {
        match id.parse::<u32>().ok()? {
            10001..=10300 => Some(Octa500Subset::Fov6mm),
            10301..=10500 => Some(Octa500Subset::Fov3mm),
            _ => None,
        }
    }

    pub fn extents(self) -> [usize; 3] {
        match self {
            Octa500Subset::Fov6mm => [400, 400, 640],
            Octa500Subset::Fov3mm => [304, 304, 640],
        }
    }

    pub fn fov_mm(self) -> [f64; 3] {
        match self {
            Octa500Subset::Fov6mm => [6.0, 6.0, 2.0],
            Octa500Subset::Fov3mm => [3.0, 3.0, 2.0],
        }
    }
}

/// Volume extents expected for a subject id, if it belongs to a known subset.
pub fn octa500_expected_extents(id: &str) -> Option<[usize; 3]> {
    Octa500Subset::of_id(id).map(Octa500Subset::extents)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Octa500Layout {
    pub base: PathBuf,
    pub oct: String,
    pub octa: String,
    pub surfaces: String,
    pub rv: String,
    pub faz: String,
    pub check_extents: bool,
}

impl Octa500Layout {
    pub fn parse(text: &str, base: &Path, path: &Path) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if !["oct", "octa", "surfaces", "rv", "faz", "check_extents"].contains(&k) {
                return Err(Error::format(path, format!("line {}: unknown key `{k}`", n + 1)));
            }
            kv.insert(k.to_string(), v.trim().to_string());
        }
        let mut take = |k: &str| kv.remove(k).ok_or_else(|| Error::format(path, format!("missing key `{k}`")));
        let layout = Octa500Layout {
            base: base.to_path_buf(),
            oct: take("oct")?,
            octa: take("octa")?,
            surfaces: take("surfaces")?,
            rv: take("rv")?,
            faz: take("faz")?,
            check_extents: match kv.remove("check_extents").as_deref() {
                None | Some("true") => true,
                Some("false") => false,
                Some(other) => return Err(Error::format(path, format!("check_extents must be true|false, got `{other}`"))),
            },
        };
        Ok(layout)
    }

    pub fn load(descriptor: &Path) -> Result<Self> {
        let text = String::from_utf8_lossy(&read_bytes(descriptor)?).into_owned();
        let base = descriptor.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, descriptor)
    }

    fn resolve(&self, template: &str, id: &str) -> PathBuf {
        self.base.join(template.replace("{id}", id))
    }
}

fn read_gray(path: &Path) -> Result<GrayImage> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        return read_pgm(path);
    }
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?.to_luma8();
    let (cols, rows) = img.dimensions();
    Ok(GrayImage { rows: rows as usize, cols: cols as usize, pixels: img.into_raw() })
}

fn load_volume(path: &Path, modality: Modality) -> Result<Volume3D> {
    if !path.is_dir() {
        return Ok(read_vvol(path, modality)?.0);
    }
    let mut scans: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let p = entry.map_err(|e| Error::io(path, e))?.path();
        let Some(stem) = p.file_stem().and_then(|s| s.to_str()) else { continue };
        if let Ok(n) = stem.parse::<u64>() {
            scans.push((n, p));
        }
    }
    scans.sort();
    if scans.is_empty() {
        return Err(Error::Data(format!("{}: no numbered B-scan images", path.display())));
    }
    let first = read_gray(&scans[0].1)?;
    let (l, w, h) = (scans.len(), first.cols, first.rows);
    let mut data = vec![0.0; l * w * h];
    for (x, (_, p)) in scans.iter().enumerate() {
        let img = if x == 0 { first.clone() } else { read_gray(p)? };
        if (img.rows, img.cols) != (h, w) {
            return Err(Error::Data(format!(
                "{}: B-scan is {}x{}, expected {h}x{w}",
                p.display(),
                img.rows,
                img.cols
            )));
        }
        for z in 0..h {
            for y in 0..w {
                data[(x * w + y) * h + z] = f64::from(img.pixels[z * w + y]);
            }
        }
    }
    Volume3D::new([l, w, h], data, modality)
}

fn load_label(path: &Path) -> Result<Map2D> {
    let img = read_gray(path)?;
    let mask: Vec<bool> = img.pixels.iter().map(|&p| p != 0).collect();
    Map2D::from_mask((img.rows, img.cols), &mask, MapKind::Label)
}

/// Assembles one subject according to `layout`.
pub fn load_octa500_sample(layout: &Octa500Layout, id: &str) -> Result<Sample> {
    let mut oct = load_volume(&layout.resolve(&layout.oct, id), Modality::Oct)?;
    let mut octa = load_volume(&layout.resolve(&layout.octa, id), Modality::Octa)?;
    let subset = Octa500Subset::of_id(id);
    if layout.check_extents {
        if let Some(s) = subset {
            for (name, v) in [("OCT", &oct), ("OCTA", &octa)] {
                if v.dims() != s.extents() {
                    return Err(Error::Data(format!(
                        "subject {id}: {name} volume is {:?}, expected {:?} for the {:?} subset",
                        v.dims(),
                        s.extents(),
                        s
                    )));
                }
            }
        }
    }
    if let Some(s) = subset {
        oct.fov_mm = Some(s.fov_mm());
        octa.fov_mm = Some(s.fov_mm());
    }
    let sample = Sample {
        id: id.to_string(),
        oct,
        octa,
        surfaces: read_vsurf(&layout.resolve(&layout.surfaces, id))?,
        rv_gt: load_label(&layout.resolve(&layout.rv, id))?,
        faz_gt: load_label(&layout.resolve(&layout.faz, id))?,
    };
    sample.validate()?;
    Ok(sample)
}
