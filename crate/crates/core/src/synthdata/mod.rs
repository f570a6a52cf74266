//! Seeded synthetic phantoms (vessel tree, avascular disk, layered slabs and
//! speckle), the on-disk dataset layout, and the OCTA-500 loader.
//!
//! Dataset layout under a root directory:
//!
//! ```text
//! manifest.tsv            id<TAB>split per line
//! <id>/oct.vvol
//! <id>/octa.vvol
//! <id>/surfaces.vsurf
//! <id>/rv_gt.pgm
//! <id>/faz_gt.pgm
//! ```

mod octa500;

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::formats::{
    mask_to_pgm, pgm_to_mask, read_bytes, read_pgm, read_vsurf, read_vvol, write_atomic, write_pgm, write_vsurf,
    write_vvol, VolumeDtype,
};
use crate::projection::{LayerSurfaces, Map2D, MapKind, Modality, Volume3D};

pub use octa500::{load_octa500_sample, octa500_expected_extents, Octa500Layout, Octa500Subset};

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub seed: u64,
    pub l: usize,
    pub w: usize,
    pub h: usize,
    pub vessel_count: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub faz_radius: f64,
    /// Mean depth of the ILM surface (voxels).
    pub ilm_depth: f64,
    /// Mean ILM to OPL distance.
    pub inner_thickness: f64,
    /// Mean OPL to BM distance.
    pub outer_thickness: f64,
    /// Peak undulation of each surface.
    pub surface_amplitude: f64,
    pub noise_sigma: f64,
    pub vessel_intensity: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            seed: 1,
            l: 64,
            w: 64,
            h: 32,
            vessel_count: 8,
            radius_min: 1.0,
            radius_max: 2.0,
            faz_radius: 8.0,
            ilm_depth: 6.0,
            inner_thickness: 10.0,
            outer_thickness: 8.0,
            surface_amplitude: 2.0,
            noise_sigma: 0.1,
            vessel_intensity: 1.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("phantom spec: {m}")));
        if self.l < 16 || self.w < 16 || self.h < 16 {
            return bad(format!("extents must be >= 16, got {}x{}x{}", self.l, self.w, self.h));
        }
        if !(self.faz_radius >= 0.0 && self.faz_radius < self.l.min(self.w) as f64 / 4.0) {
            return bad(format!("faz_radius {} must be in [0, min(L,W)/4)", self.faz_radius));
        }
        if !(self.radius_min >= 1.0 && self.radius_max >= self.radius_min) {
            return bad(format!("vessel radii [{}, {}] must satisfy 1 <= min <= max", self.radius_min, self.radius_max));
        }
        if !(self.noise_sigma >= 0.0 && self.vessel_intensity > 0.0 && self.vessel_intensity.is_finite()) {
            return bad("noise_sigma must be >= 0 and vessel_intensity > 0".into());
        }
        let a = self.surface_amplitude;
        if !(a >= 0.0 && self.inner_thickness >= 1.0 && self.outer_thickness >= 1.0) {
            return bad("surface amplitude must be >= 0 and slab thicknesses >= 1".into());
        }
        if self.ilm_depth - a < 0.0 || self.ilm_depth + a + self.inner_thickness + self.outer_thickness + 2.0 * a + 1.0 > self.h as f64 {
            return bad(format!("surfaces do not fit in height {}", self.h));
        }
        Ok(())
    }

    /// Same spec with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        PhantomSpec { seed, ..self.clone() }
    }
}

/// A registered OCT/OCTA pair with surfaces and ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub oct: Volume3D,
    pub octa: Volume3D,
    pub surfaces: LayerSurfaces,
    pub rv_gt: Map2D,
    pub faz_gt: Map2D,
}

impl Sample {
    fn validate(&self) -> Result<()> {
        let [l, w, h] = self.oct.dims();
        if self.octa.dims() != [l, w, h] {
            return Err(Error::Data(format!(
                "sample `{}`: OCT {:?} and OCTA {:?} extents differ",
                self.id,
                self.oct.dims(),
                self.octa.dims()
            )));
        }
        if self.surfaces.plane != (l, w) || self.rv_gt.dims != (l, w) || self.faz_gt.dims != (l, w) {
            return Err(Error::Data(format!("sample `{}`: surface or label plane differs from volume plane", self.id)));
        }
        self.surfaces.validate(h)
    }
}

/// 64-bit finalizer from SplitMix64.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Per-sample seed derived from the master seed and the sample id.
pub fn sample_seed(master: u64, id: &str) -> u64 {
    splitmix64(master ^ fnv1a(id))
}

/// Smooth random surface `mean + amp * (sin + sin) / 2`.
fn smooth_surface(rng: &mut ChaCha8Rng, l: usize, w: usize, mean: f64, amp: f64) -> Vec<f64> {
    let fx = rng.gen_range(0.5..1.5);
    let fy = rng.gen_range(0.5..1.5);
    let px = rng.gen_range(0.0..2.0 * PI);
    let py = rng.gen_range(0.0..2.0 * PI);
    let mut out = Vec::with_capacity(l * w);
    for x in 0..l {
        for y in 0..w {
            let s = (2.0 * PI * fx * x as f64 / l as f64 + px).sin() + (2.0 * PI * fy * y as f64 / w as f64 + py).sin();
            out.push(mean + amp * s / 2.0);
        }
    }
    out
}

struct Walker {
    pos: (f64, f64),
    heading: f64,
    radius: f64,
    depth: u32,
}

/// Rasterizes branching random walks that start on the border, drift towards
/// the centre and stop before touching the avascular disk. Returns per-pixel
/// vessel radius (0 outside vessels).
fn draw_vessels(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (l, w) = (spec.l, spec.w);
    let (cx, cy) = ((l as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut radius_map = vec![0.0f64; l * w];
    let turn = Normal::new(0.0, 0.12).expect("valid sigma");
    let mut stack: Vec<Walker> = Vec::new();
    for _ in 0..spec.vessel_count {
        let t = rng.gen_range(0.0..1.0);
        let side = rng.gen_range(0..4);
        let pos = match side {
            0 => (0.0, t * (w - 1) as f64),
            1 => ((l - 1) as f64, t * (w - 1) as f64),
            2 => (t * (l - 1) as f64, 0.0),
            _ => (t * (l - 1) as f64, (w - 1) as f64),
        };
        let heading = (cy - pos.1).atan2(cx - pos.0) + rng.gen_range(-0.5..0.5);
        let radius = rng.gen_range(spec.radius_min..=spec.radius_max);
        stack.push(Walker { pos, heading, radius, depth: 0 });
    }
    let max_steps = 4 * (l + w);
    while let Some(mut v) = stack.pop() {
        for _ in 0..max_steps {
            let (x, y) = v.pos;
            if x < -0.5 || y < -0.5 || x > l as f64 - 0.5 || y > w as f64 - 0.5 {
                break;
            }
            if (x - cx).hypot(y - cy) - v.radius <= spec.faz_radius + 1.0 {
                break;
            }
            let r = v.radius;
            let (x0, x1) = ((x - r).floor().max(0.0) as usize, ((x + r).ceil() as usize).min(l - 1));
            let (y0, y1) = ((y - r).floor().max(0.0) as usize, ((y + r).ceil() as usize).min(w - 1));
            for px in x0..=x1 {
                for py in y0..=y1 {
                    if (px as f64 - x).hypot(py as f64 - y) <= r {
                        let cell = &mut radius_map[px * w + py];
                        *cell = cell.max(r);
                    }
                }
            }
            // steer gently towards the centre
            let to_c = (cy - y).atan2(cx - x);
            let mut d = to_c - v.heading;
            d = (d + PI).rem_euclid(2.0 * PI) - PI;
            v.heading += 0.05 * d + turn.sample(rng);
            v.pos = (x + 0.5 * v.heading.cos(), y + 0.5 * v.heading.sin());
            if v.depth < 2 && rng.gen_bool(0.02) {
                let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                stack.push(Walker {
                    pos: v.pos,
                    heading: v.heading + side * rng.gen_range(0.5..1.0),
                    radius: (v.radius * 0.8).max(spec.radius_min),
                    depth: v.depth + 1,
                });
            }
        }
    }
    radius_map
}

/// Generates one phantom; deterministic in `spec` (including its seed).
pub fn gen_phantom(spec: &PhantomSpec, id: &str) -> Result<Sample> {
    spec.validate()?;
    let (l, w, h) = (spec.l, spec.w, spec.h);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a = spec.surface_amplitude;
    let ilm_f = smooth_surface(&mut rng, l, w, spec.ilm_depth, a);
    let inner = smooth_surface(&mut rng, l, w, spec.inner_thickness, a / 2.0);
    let outer = smooth_surface(&mut rng, l, w, spec.outer_thickness, a / 2.0);
    let opl_f: Vec<f64> = ilm_f.iter().zip(&inner).map(|(i, t)| i + t.max(1.0)).collect();
    let bm_f: Vec<f64> = opl_f.iter().zip(&outer).map(|(o, t)| (o + t.max(1.0)).min(h as f64 - 1.0)).collect();
    let surfaces = LayerSurfaces::from_subvoxel((l, w), &ilm_f, &opl_f, &bm_f)?;
    surfaces.validate(h)?;

    let radius = draw_vessels(spec, &mut rng);
    let (cx, cy) = ((l as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let faz: Vec<bool> =
        (0..l * w).map(|i| ((i / w) as f64 - cx).hypot((i % w) as f64 - cy) <= spec.faz_radius).collect();
    let rv: Vec<bool> = radius.iter().zip(&faz).map(|(&r, &f)| r > 0.0 && !f).collect();

    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let draw = |rng: &mut ChaCha8Rng| if spec.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
    let mut octa = vec![0.0; l * w * h];
    let mut oct = vec![0.0; l * w * h];
    for p in 0..l * w {
        let (ilm, opl, bm) = (surfaces.ilm[p] as usize, surfaces.opl[p] as usize, surfaces.bm[p] as usize);
        let band = if rv[p] {
            let mid = (ilm + opl) / 2;
            let half = radius[p].round().max(1.0) as usize;
            Some((mid.saturating_sub(half).max(ilm), (mid + half).min(opl)))
        } else {
            None
        };
        for z in 0..h {
            let signal = match band {
                Some((lo, hi)) if (lo..=hi).contains(&z) => spec.vessel_intensity,
                _ => 0.0,
            };
            octa[p * h + z] = (signal + draw(&mut rng)).max(0.0);
            let refl = if z < ilm {
                0.05
            } else if z < opl {
                0.6
            } else if z < bm {
                0.4
            } else if z <= bm + 1 {
                0.9
            } else {
                0.2
            };
            oct[p * h + z] = (refl + draw(&mut rng)).max(0.0);
        }
    }
    let sample = Sample {
        id: id.to_string(),
        oct: Volume3D::new([l, w, h], oct, Modality::Oct)?,
        octa: Volume3D::new([l, w, h], octa, Modality::Octa)?,
        surfaces,
        rv_gt: Map2D::from_mask((l, w), &rv, MapKind::Label)?,
        faz_gt: Map2D::from_mask((l, w), &faz, MapKind::Label)?,
    };
    sample.validate()?;
    Ok(sample)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Ordered sample ids with their split.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<(String, Split)>,
}

impl Manifest {
    pub fn ids(&self, split: Split) -> Vec<String> {
        self.entries.iter().filter(|(_, s)| *s == split).map(|(id, _)| id.clone()).collect()
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(id, s)| format!("{id}\t{s}\n")).collect()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (id, split) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(path, format!("line {}: expected `id<TAB>split`", n + 1)))?;
            if !seen.insert(id.to_string()) {
                return Err(Error::format(path, format!("line {}: id `{id}` listed twice", n + 1)));
            }
            entries.push((id.to_string(), split.trim().parse().map_err(|e: Error| Error::format(path, e.to_string()))?));
        }
        Ok(Manifest { entries })
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join("manifest.tsv");
        let bytes = read_bytes(&path)?;
        Self::parse(&String::from_utf8_lossy(&bytes), &path)
    }
}

/// Split sizes for `n` samples: train and val are rounded, test takes the rest.
pub fn split_counts(n: usize, fractions: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let tr = (n as f64 * a).round() as usize;
    let va = ((n as f64 * b).round() as usize).min(n - tr);
    Ok((tr, va, n - tr - va))
}

pub fn sample_id(i: usize) -> String {
    format!("syn{i:04}")
}

/// Generates `n` phantoms in memory with per-sample derived seeds. Ids are
/// assigned in order to train, then val, then test.
pub fn gen_samples(
    template: &PhantomSpec,
    n: usize,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<(Sample, Split)>> {
    template.validate()?;
    let (tr, va, _) = split_counts(n, fractions)?;
    (0..n)
        .map(|i| {
            let id = sample_id(i);
            let split = if i < tr {
                Split::Train
            } else if i < tr + va {
                Split::Val
            } else {
                Split::Test
            };
            Ok((gen_phantom(&template.with_seed(sample_seed(seed, &id)), &id)?, split))
        })
        .collect()
}

/// Writes the phantoms of [`gen_samples`] plus the manifest under `root`.
pub fn gen_dataset(
    template: &PhantomSpec,
    n: usize,
    fractions: (f64, f64, f64),
    seed: u64,
    root: &Path,
) -> Result<Manifest> {
    let mut manifest = Manifest::default();
    for (sample, split) in gen_samples(template, n, fractions, seed)? {
        save_sample(root, &sample)?;
        manifest.entries.push((sample.id, split));
    }
    write_atomic(&root.join("manifest.tsv"), manifest.to_text().as_bytes())?;
    Ok(manifest)
}

pub fn save_sample(root: &Path, s: &Sample) -> Result<()> {
    let dir = root.join(&s.id);
    write_vvol(&dir.join("oct.vvol"), &s.oct, VolumeDtype::F64)?;
    write_vvol(&dir.join("octa.vvol"), &s.octa, VolumeDtype::F64)?;
    write_vsurf(&dir.join("surfaces.vsurf"), &s.surfaces)?;
    write_pgm(&dir.join("rv_gt.pgm"), &mask_to_pgm(s.rv_gt.dims, &s.rv_gt.to_mask()?))?;
    write_pgm(&dir.join("faz_gt.pgm"), &mask_to_pgm(s.faz_gt.dims, &s.faz_gt.to_mask()?))?;
    Ok(())
}

fn load_mask(path: &Path) -> Result<Map2D> {
    let img = read_pgm(path)?;
    Map2D::from_mask((img.rows, img.cols), &pgm_to_mask(&img), MapKind::Label)
}

pub fn load_sample(root: &Path, id: &str) -> Result<Sample> {
    let dir = root.join(id);
    let sample = Sample {
        id: id.to_string(),
        oct: read_vvol(&dir.join("oct.vvol"), Modality::Oct)?.0,
        octa: read_vvol(&dir.join("octa.vvol"), Modality::Octa)?.0,
        surfaces: read_vsurf(&dir.join("surfaces.vsurf"))?,
        rv_gt: load_mask(&dir.join("rv_gt.pgm"))?,
        faz_gt: load_mask(&dir.join("faz_gt.pgm"))?,
    };
    sample.validate()?;
    Ok(sample)
}
