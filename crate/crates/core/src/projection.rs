//! Volumes, retinal layer surfaces and en-face projection maps.
//!
//! A projection reduces each `(x, y)` column along the axial axis, either over
//! the whole column or over a slab bounded by two layer surfaces (inclusive on
//! both ends). The six standard maps are:
//!
//! | kind | modality | region  | reducer |
//! |------|----------|---------|---------|
//! | B1   | OCT      | full    | mean    |
//! | B2   | OCT      | ILM-OPL | mean    |
//! | B3   | OCT      | OPL-BM  | mean    |
//! | B4   | OCTA     | full    | mean    |
//! | B5   | OCTA     | ILM-OPL | max     |
//! | B6   | OCTA     | OPL-BM  | max     |

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Oct,
    Octa,
    /// Derived channels such as the distance map.
    Auxiliary,
}

/// Dense `L x W x H` scalar volume, row-major with `H` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    data: Vec<f64>,
    pub modality: Modality,
    /// Physical extent in millimetres, when known.
    pub fov_mm: Option<[f64; 3]>,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], data: Vec<f64>, modality: Modality) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("volume extents must be >= 1, got {dims:?}")));
        }
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::InvalidArgument(format!(
                "volume {dims:?} needs {} values, got {}",
                dims.iter().product::<usize>(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite voxel at flat index {i}")));
        }
        Ok(Volume3D { dims, data, modality, fov_mm: None })
    }

    pub fn filled(dims: [usize; 3], value: f64, modality: Modality) -> Self {
        Self::new(dims, vec![value; dims.iter().product()], modality).expect("valid filled volume")
    }

    /// Repeats a planar `L x W` map along `h` samples.
    pub fn broadcast_plane(plane: &[f64], l: usize, w: usize, h: usize, modality: Modality) -> Result<Self> {
        if plane.len() != l * w {
            return Err(Error::InvalidArgument(format!("plane has {} values, expected {l}x{w}", plane.len())));
        }
        let data = plane.iter().flat_map(|&v| std::iter::repeat(v).take(h)).collect();
        Self::new([l, w, h], data, modality)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        let [_, w, h] = self.dims;
        self.data[(x * w + y) * h + z]
    }

    /// Axial column at `(x, y)`.
    pub fn column(&self, x: usize, y: usize) -> &[f64] {
        let [_, w, h] = self.dims;
        let s = (x * w + y) * h;
        &self.data[s..s + h]
    }
}

/// Per-pixel axial indices of the ILM, OPL and BM surfaces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSurfaces {
    pub plane: (usize, usize),
    pub ilm: Vec<u32>,
    pub opl: Vec<u32>,
    pub bm: Vec<u32>,
}

impl LayerSurfaces {
    pub fn new(plane: (usize, usize), ilm: Vec<u32>, opl: Vec<u32>, bm: Vec<u32>) -> Result<Self> {
        let n = plane.0 * plane.1;
        if ilm.len() != n || opl.len() != n || bm.len() != n {
            return Err(Error::InvalidArgument(format!("surfaces must have {n} entries for plane {plane:?}")));
        }
        Ok(LayerSurfaces { plane, ilm, opl, bm })
    }

    /// Rounds sub-voxel surfaces to indices: nearest, with exact halves going
    /// toward the ILM side (down in index).
    pub fn from_subvoxel(plane: (usize, usize), ilm: &[f64], opl: &[f64], bm: &[f64]) -> Result<Self> {
        let round = |v: &[f64]| -> Result<Vec<u32>> {
            v.iter()
                .map(|&s| {
                    if !s.is_finite() || s < -0.5 {
                        return Err(Error::InvalidArgument(format!("invalid surface position {s}")));
                    }
                    let r = (s - 0.5).ceil().max(0.0);
                    Ok(r as u32)
                })
                .collect()
        };
        Self::new(plane, round(ilm)?, round(opl)?, round(bm)?)
    }

    /// Checks `0 <= ilm <= opl <= bm < height` at every pixel.
    pub fn validate(&self, height: usize) -> Result<()> {
        let w = self.plane.1;
        for i in 0..self.ilm.len() {
            let (a, b, c) = (self.ilm[i], self.opl[i], self.bm[i]);
            if !(a <= b && b <= c && (c as usize) < height) {
                return Err(Error::Data(format!(
                    "layer surfaces out of order at pixel ({}, {}): ilm={a} opl={b} bm={c} height={height}",
                    i / w,
                    i % w
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MapKind {
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
    Probability,
    Label,
}

impl MapKind {
    pub const PROJECTIONS: [MapKind; 6] = [MapKind::B1, MapKind::B2, MapKind::B3, MapKind::B4, MapKind::B5, MapKind::B6];
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MapKind::B1 => "B1",
            MapKind::B2 => "B2",
            MapKind::B3 => "B3",
            MapKind::B4 => "B4",
            MapKind::B5 => "B5",
            MapKind::B6 => "B6",
            MapKind::Probability => "prob",
            MapKind::Label => "label",
        };
        f.write_str(s)
    }
}

/// Planar `L x W` scalar map.
#[derive(Clone, Debug, PartialEq)]
pub struct Map2D {
    pub dims: (usize, usize),
    pub data: Vec<f64>,
    pub kind: MapKind,
}

impl Map2D {
    pub fn new(dims: (usize, usize), data: Vec<f64>, kind: MapKind) -> Result<Self> {
        if dims.0 == 0 || dims.1 == 0 || data.len() != dims.0 * dims.1 {
            return Err(Error::InvalidArgument(format!("map {dims:?} with {} values", data.len())));
        }
        Ok(Map2D { dims, data, kind })
    }

    pub fn from_mask(dims: (usize, usize), mask: &[bool], kind: MapKind) -> Result<Self> {
        Self::new(dims, mask.iter().map(|&b| f64::from(u8::from(b))).collect(), kind)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.dims.1 + y]
    }

    /// Pixels equal to 1, for a binary map.
    pub fn to_mask(&self) -> Result<Vec<bool>> {
        self.data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v == 0.0 {
                    Ok(false)
                } else if v == 1.0 {
                    Ok(true)
                } else {
                    Err(Error::InvalidArgument(format!(
                        "map is not binary: value {v} at ({}, {})",
                        i / self.dims.1,
                        i % self.dims.1
                    )))
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Full,
    IlmOpl,
    OplBm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionMode {
    Avg,
    Max,
}

/// Reduces every axial column of `volume` over `region` with `mode`.
pub fn project(
    volume: &Volume3D,
    region: Region,
    mode: ProjectionMode,
    surfaces: Option<&LayerSurfaces>,
    kind: MapKind,
) -> Result<Map2D> {
    let [l, w, h] = volume.dims();
    if let Some(s) = surfaces {
        if s.plane != (l, w) {
            return Err(Error::shape("project", format!("surfaces {:?} vs volume plane {l}x{w}", s.plane)));
        }
        s.validate(h)?;
    }
    let surf = match (region, surfaces) {
        (Region::Full, _) => None,
        (_, Some(s)) => Some(s),
        (_, None) => {
            return Err(Error::InvalidArgument(format!("project: region {region:?} requires layer surfaces")))
        }
    };
    let mut out = Vec::with_capacity(l * w);
    for x in 0..l {
        for y in 0..w {
            let p = x * w + y;
            let (lo, hi) = match (region, surf) {
                (Region::IlmOpl, Some(s)) => (s.ilm[p] as usize, s.opl[p] as usize),
                (Region::OplBm, Some(s)) => (s.opl[p] as usize, s.bm[p] as usize),
                _ => (0, h - 1),
            };
            let col = &volume.column(x, y)[lo..=hi];
            let v = match mode {
                ProjectionMode::Avg => col.iter().sum::<f64>() / col.len() as f64,
                ProjectionMode::Max => col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            out.push(v);
        }
    }
    Map2D::new((l, w), out, kind)
}

/// The six standard maps B1..B6 in order.
pub fn generate_all(oct: &Volume3D, octa: &Volume3D, surfaces: &LayerSurfaces) -> Result<[Map2D; 6]> {
    if oct.dims() != octa.dims() {
        return Err(Error::shape("generate_all", format!("OCT {:?} vs OCTA {:?}", oct.dims(), octa.dims())));
    }
    use ProjectionMode::{Avg, Max};
    use Region::{Full, IlmOpl, OplBm};
    Ok([
        project(oct, Full, Avg, Some(surfaces), MapKind::B1)?,
        project(oct, IlmOpl, Avg, Some(surfaces), MapKind::B2)?,
        project(oct, OplBm, Avg, Some(surfaces), MapKind::B3)?,
        project(octa, Full, Avg, Some(surfaces), MapKind::B4)?,
        project(octa, IlmOpl, Max, Some(surfaces), MapKind::B5)?,
        project(octa, OplBm, Max, Some(surfaces), MapKind::B6)?,
    ])
}
