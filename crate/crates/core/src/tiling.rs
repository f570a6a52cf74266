//! En-face patch planning, patch extraction, overlap splicing and seam scoring.
//!
//! Patches tile only the `L x W` plane; the height axis is always taken whole and
//! resampled to the network's working height. Border patches are clamped inward
//! so every patch lies entirely inside the plane. Overlapping outputs are
//! combined with an unweighted mean.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::numerics::{resize_h_linear, Tensor};
use crate::projection::Volume3D;

/// Patch layout over an `L x W` plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub plane: (usize, usize),
    pub patch: (usize, usize),
    /// Step used by [`plan_patches`]; `None` for grids built from explicit origins.
    pub step: Option<usize>,
    origins: Vec<(usize, usize)>,
}

fn axis_origins(total: usize, patch: usize, step: usize) -> Vec<usize> {
    let last = total - patch;
    let mut v: Vec<usize> = (0..=last).step_by(step).collect();
    if *v.last().expect("non-empty") != last {
        v.push(last);
    }
    v
}

/// Plans origins at multiples of `d` along each axis, with the last origin per
/// axis clamped to `L - l` (resp. `W - w`).
pub fn plan_patches(plane_l: usize, plane_w: usize, l: usize, w: usize, d: usize) -> Result<PatchGrid> {
    if l == 0 || w == 0 || l > plane_l || w > plane_w {
        return Err(Error::InvalidArgument(format!(
            "patch {l}x{w} does not fit in plane {plane_l}x{plane_w}"
        )));
    }
    if d == 0 || d > l.min(w) {
        return Err(Error::InvalidArgument(format!("step d = {d} must be in 1..={}", l.min(w))));
    }
    let xs = axis_origins(plane_l, l, d);
    let ys = axis_origins(plane_w, w, d);
    let origins = xs.iter().flat_map(|&x| ys.iter().map(move |&y| (x, y))).collect();
    Ok(PatchGrid { plane: (plane_l, plane_w), patch: (l, w), step: Some(d), origins })
}

impl PatchGrid {
    /// Builds a grid from explicit origins; they are sorted row-major and deduplicated.
    pub fn from_origins(plane: (usize, usize), patch: (usize, usize), origins: &[(usize, usize)]) -> Result<Self> {
        if patch.0 == 0 || patch.1 == 0 || patch.0 > plane.0 || patch.1 > plane.1 {
            return Err(Error::InvalidArgument(format!("patch {patch:?} does not fit in plane {plane:?}")));
        }
        if let Some(o) = origins.iter().find(|o| o.0 + patch.0 > plane.0 || o.1 + patch.1 > plane.1) {
            return Err(Error::InvalidArgument(format!("origin {o:?} places patch outside plane {plane:?}")));
        }
        let set: BTreeSet<(usize, usize)> = origins.iter().copied().collect();
        Ok(PatchGrid { plane, patch, step: None, origins: set.into_iter().collect() })
    }

    pub fn origins(&self) -> &[(usize, usize)] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Number of patches covering each plane pixel, row-major.
    pub fn coverage(&self) -> Vec<u32> {
        let (pl, pw) = self.plane;
        let (l, w) = self.patch;
        let mut count = vec![0u32; pl * pw];
        for &(x0, y0) in &self.origins {
            for x in x0..x0 + l {
                for c in &mut count[x * pw + y0..x * pw + y0 + w] {
                    *c += 1;
                }
            }
        }
        count
    }
}

/// Stacks `volumes` as channels, crops the en-face window at `origin` and
/// resamples the height axis to `target_h`.
pub fn extract_patch(
    volumes: &[&Volume3D],
    origin: (usize, usize),
    l: usize,
    w: usize,
    target_h: usize,
) -> Result<Tensor> {
    let first = volumes.first().ok_or_else(|| Error::InvalidArgument("extract_patch: no volumes".into()))?;
    let dims = first.dims();
    if let Some(v) = volumes.iter().find(|v| v.dims() != dims) {
        return Err(Error::shape("extract_patch", format!("volume extents {:?} vs {:?}", v.dims(), dims)));
    }
    let [pl, pw, h] = dims;
    if origin.0 + l > pl || origin.1 + w > pw || l == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "extract_patch: origin {origin:?} with patch {l}x{w} is out of bounds for plane {pl}x{pw}"
        )));
    }
    let cin = volumes.len();
    let mut data = Vec::with_capacity(l * w * h * cin);
    for x in origin.0..origin.0 + l {
        for y in origin.1..origin.1 + w {
            for z in 0..h {
                data.extend(volumes.iter().map(|v| v.get(x, y, z)));
            }
        }
    }
    resize_h_linear(&Tensor::from_vec(&[l, w, h, cin], data)?, target_h)
}

/// Crops `[L,W,...]` to the `l x w` window at `origin`, keeping trailing axes whole.
pub fn crop_patch(input: &Tensor, origin: (usize, usize), l: usize, w: usize) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() < 2 {
        return Err(Error::shape("crop_patch", format!("expected at least [L,W], got {shape:?}")));
    }
    let (pl, pw) = (shape[0], shape[1]);
    if origin.0 + l > pl || origin.1 + w > pw || l == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "crop_patch: origin {origin:?} with patch {l}x{w} is out of bounds for {shape:?}"
        )));
    }
    let inner: usize = shape[2..].iter().product();
    let mut data = Vec::with_capacity(l * w * inner);
    for x in origin.0..origin.0 + l {
        let start = (x * pw + origin.1) * inner;
        data.extend_from_slice(&input.data()[start..start + w * inner]);
    }
    let mut out_shape = vec![l, w];
    out_shape.extend_from_slice(&shape[2..]);
    Tensor::from_vec(&out_shape, data)
}

/// Running sums and counts for overlap-averaged splicing.
#[derive(Clone, Debug)]
pub struct SpliceAccumulator {
    plane: (usize, usize),
    channels: usize,
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl SpliceAccumulator {
    pub fn new(plane: (usize, usize), channels: usize) -> Self {
        let n = plane.0 * plane.1;
        SpliceAccumulator { plane, channels, sum: vec![0.0; n * channels], count: vec![0; n] }
    }

    /// Adds a `[l,w,c]` patch output at `origin`.
    pub fn add(&mut self, origin: (usize, usize), patch: &Tensor) -> Result<()> {
        let (l, w, c) = match *patch.shape() {
            [l, w, c] => (l, w, c),
            _ => return Err(Error::shape("splice", format!("expected [l,w,c] patch, got {:?}", patch.shape()))),
        };
        let (pl, pw) = self.plane;
        if c != self.channels || origin.0 + l > pl || origin.1 + w > pw {
            return Err(Error::shape(
                "splice",
                format!("patch {:?} at {origin:?} does not fit plane {pl}x{pw}x{}", patch.shape(), self.channels),
            ));
        }
        for x in 0..l {
            let row = (origin.0 + x) * pw + origin.1;
            let src = &patch.data()[x * w * c..(x + 1) * w * c];
            for (s, v) in self.sum[row * c..(row + w) * c].iter_mut().zip(src) {
                *s += v;
            }
            for n in &mut self.count[row..row + w] {
                *n += 1;
            }
        }
        Ok(())
    }

    /// Folds another accumulator over the same plane into this one.
    pub fn merge(&mut self, other: &SpliceAccumulator) -> Result<()> {
        if self.plane != other.plane || self.channels != other.channels {
            return Err(Error::shape("splice merge", "accumulators cover different planes"));
        }
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.count.iter_mut().zip(&other.count) {
            *a += b;
        }
        Ok(())
    }

    pub fn counts(&self) -> &[u32] {
        &self.count
    }

    /// Elementwise `sum / count`; fails if any pixel was never covered.
    pub fn finish(&self) -> Result<Tensor> {
        if let Some(p) = self.count.iter().position(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!(
                "splice: pixel ({}, {}) is not covered by any patch",
                p / self.plane.1,
                p % self.plane.1
            )));
        }
        let c = self.channels;
        let mut out = self.sum.clone();
        for (chunk, &n) in out.chunks_exact_mut(c).zip(&self.count) {
            if n > 1 {
                let n = f64::from(n);
                chunk.iter_mut().for_each(|v| *v /= n);
            }
        }
        Tensor::from_vec(&[self.plane.0, self.plane.1, c], out)
    }
}

/// Splices one `[l,w,c]` output per grid origin back into an `[L,W,c]` map.
pub fn splice(outputs: &[((usize, usize), Tensor)], grid: &PatchGrid) -> Result<Tensor> {
    let mut seen = BTreeSet::new();
    for (o, t) in outputs {
        if grid.origins.binary_search(o).is_err() {
            return Err(Error::InvalidArgument(format!("splice: origin {o:?} is not in the grid")));
        }
        if !seen.insert(*o) {
            return Err(Error::InvalidArgument(format!("splice: duplicate output for origin {o:?}")));
        }
        if t.shape().len() != 3 || t.shape()[0] != grid.patch.0 || t.shape()[1] != grid.patch.1 {
            return Err(Error::shape("splice", format!("output {:?} at {o:?} vs patch {:?}", t.shape(), grid.patch)));
        }
    }
    if let Some(o) = grid.origins.iter().find(|o| !seen.contains(o)) {
        return Err(Error::InvalidArgument(format!("splice: missing output for origin {o:?}")));
    }
    let channels = outputs[0].1.shape()[2];
    let mut acc = SpliceAccumulator::new(grid.plane, channels);
    for (o, t) in outputs {
        acc.add(*o, t)?;
    }
    acc.finish()
}

/// Patch edges strictly inside `0..total` along one axis.
fn seam_lines(starts: impl Iterator<Item = usize>, patch: usize, total: usize) -> BTreeSet<usize> {
    let mut seams = BTreeSet::new();
    for s in starts {
        if s > 0 {
            seams.insert(s);
        }
        if s + patch < total {
            seams.insert(s + patch);
        }
    }
    seams
}

/// Reference lines half a patch away from each seam, excluding seams themselves.
fn reference_lines(seams: &BTreeSet<usize>, patch: usize, total: usize) -> BTreeSet<usize> {
    let half = patch / 2;
    let mut lines = BTreeSet::new();
    if half > 0 {
        for &b in seams {
            for cand in [b.checked_sub(half), Some(b + half)].into_iter().flatten() {
                if cand > 0 && cand < total && !seams.contains(&cand) {
                    lines.insert(cand);
                }
            }
        }
    }
    lines
}

/// Excess first-difference magnitude on patch seams over reference lines half
/// a patch away; floored at 0.
///
/// `map` is `[L,W]` (or `[L,W,1]`). A line at position `x` compares rows
/// `x-1` and `x`; only pixel pairs covered by the grid on both sides count,
/// and lines without any such pair are ignored.
pub fn seam_score(map: &Tensor, grid: &PatchGrid) -> Result<f64> {
    let (pl, pw) = grid.plane;
    let ok = match *map.shape() {
        [a, b] | [a, b, 1] => a == pl && b == pw,
        _ => false,
    };
    if !ok {
        return Err(Error::shape("seam_score", format!("map {:?} vs grid plane {:?}", map.shape(), grid.plane)));
    }
    let m = map.data();
    let covered: Vec<bool> = grid.coverage().into_iter().map(|c| c > 0).collect();

    // (sum, count) of |difference| across a line, per axis
    let line_x = |x: usize| -> (f64, usize) {
        (0..pw)
            .filter(|&y| covered[(x - 1) * pw + y] && covered[x * pw + y])
            .fold((0.0, 0), |(s, n), y| (s + (m[x * pw + y] - m[(x - 1) * pw + y]).abs(), n + 1))
    };
    let line_y = |y: usize| -> (f64, usize) {
        (0..pl)
            .filter(|&x| covered[x * pw + y - 1] && covered[x * pw + y])
            .fold((0.0, 0), |(s, n), x| (s + (m[x * pw + y] - m[x * pw + y - 1]).abs(), n + 1))
    };

    let live_x = |set: BTreeSet<usize>| -> BTreeSet<usize> { set.into_iter().filter(|&x| line_x(x).1 > 0).collect() };
    let live_y = |set: BTreeSet<usize>| -> BTreeSet<usize> { set.into_iter().filter(|&y| line_y(y).1 > 0).collect() };

    let sx = live_x(seam_lines(grid.origins.iter().map(|o| o.0), grid.patch.0, pl));
    let sy = live_y(seam_lines(grid.origins.iter().map(|o| o.1), grid.patch.1, pw));
    // reference lines derive only from seams that carry samples
    let ix = reference_lines(&sx, grid.patch.0, pl);
    let iy = reference_lines(&sy, grid.patch.1, pw);

    let total = |xs: &BTreeSet<usize>, ys: &BTreeSet<usize>| -> (f64, usize) {
        let a = xs.iter().map(|&x| line_x(x)).chain(ys.iter().map(|&y| line_y(y)));
        a.fold((0.0, 0), |(s, n), (ls, ln)| (s + ls, n + ln))
    };
    let (seam_sum, seam_n) = total(&sx, &sy);
    if seam_n == 0 {
        return Ok(0.0);
    }
    let (int_sum, int_n) = total(&ix, &iy);
    let baseline = if int_n == 0 { 0.0 } else { int_sum / int_n as f64 };
    Ok((seam_sum / seam_n as f64 - baseline).max(0.0))
}
