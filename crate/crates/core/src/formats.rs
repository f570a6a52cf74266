//! On-disk formats.
//!
//! - `.vvol`: `VVOL1\n`, then `L W H dtype\n` with dtype `u8` or `f64`, then the
//!   little-endian row-major payload (`L` outer, `H` fastest).
//! - `.vsurf`: `VSURF1\n`, then `L W 3\n`, then little-endian `i32` planes for
//!   ILM, OPL and BM in that order.
//! - `.vmap`: `VMAP1\n`, then `L W\n`, then little-endian `f64` values; exact
//!   sidecar for planar maps.
//! - PGM (`P5`): 8-bit greyscale; the image has `L` rows and `W` columns.
//!
//! Writers go through a temporary file and a rename.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::projection::{LayerSurfaces, Map2D, MapKind, Modality, Volume3D};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VolumeDtype {
    U8,
    F64,
}

impl VolumeDtype {
    fn tag(self) -> &'static str {
        match self {
            VolumeDtype::U8 => "u8",
            VolumeDtype::F64 => "f64",
        }
    }
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Splits off `n` newline-terminated ASCII header lines.
fn header_lines<'a>(bytes: &'a [u8], n: usize, path: &Path) -> Result<(Vec<&'a str>, &'a [u8])> {
    let mut rest = bytes;
    let mut lines = Vec::with_capacity(n);
    for _ in 0..n {
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(path, "truncated header"))?;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| Error::format(path, "non-ASCII header"))?;
        lines.push(line);
        rest = &rest[end + 1..];
    }
    Ok((lines, rest))
}

fn parse_usizes(line: &str, n: usize, path: &Path) -> Result<Vec<usize>> {
    let v: Vec<usize> = line
        .split_whitespace()
        .take(n)
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(path, format!("bad extents line `{line}`")))?;
    if v.len() != n || v.iter().any(|&x| x == 0) {
        return Err(Error::format(path, format!("bad extents line `{line}`")));
    }
    Ok(v)
}

pub fn encode_vvol(volume: &Volume3D, dtype: VolumeDtype) -> Result<Vec<u8>> {
    let [l, w, h] = volume.dims();
    let mut out = format!("VVOL1\n{l} {w} {h} {}\n", dtype.tag()).into_bytes();
    match dtype {
        VolumeDtype::F64 => {
            out.reserve(volume.data().len() * 8);
            for v in volume.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        VolumeDtype::U8 => {
            for (i, &v) in volume.data().iter().enumerate() {
                if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "voxel {i} = {v} is not representable as u8"
                    )));
                }
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}

pub fn decode_vvol(bytes: &[u8], modality: Modality, path: &Path) -> Result<(Volume3D, VolumeDtype)> {
    let (lines, payload) = header_lines(bytes, 2, path)?;
    if lines[0] != "VVOL1" {
        return Err(Error::format(path, "missing VVOL1 magic"));
    }
    let fields: Vec<&str> = lines[1].split_whitespace().collect();
    if fields.len() != 4 {
        return Err(Error::format(path, format!("bad dims line `{}`", lines[1])));
    }
    let dims = parse_usizes(&fields[..3].join(" "), 3, path)?;
    let n = dims[0] * dims[1] * dims[2];
    let (dtype, data) = match fields[3] {
        "u8" => {
            if payload.len() != n {
                return Err(Error::format(path, format!("expected {n} bytes of u8 payload, got {}", payload.len())));
            }
            (VolumeDtype::U8, payload.iter().map(|&b| f64::from(b)).collect())
        }
        "f64" => {
            if payload.len() != n * 8 {
                return Err(Error::format(path, format!("expected {} bytes of f64 payload, got {}", n * 8, payload.len())));
            }
            let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            (VolumeDtype::F64, data)
        }
        other => return Err(Error::format(path, format!("unknown dtype `{other}`"))),
    };
    let v = Volume3D::new([dims[0], dims[1], dims[2]], data, modality).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((v, dtype))
}

pub fn write_vvol(path: &Path, volume: &Volume3D, dtype: VolumeDtype) -> Result<()> {
    write_atomic(path, &encode_vvol(volume, dtype)?)
}

pub fn read_vvol(path: &Path, modality: Modality) -> Result<(Volume3D, VolumeDtype)> {
    decode_vvol(&read_bytes(path)?, modality, path)
}

pub fn encode_vsurf(s: &LayerSurfaces) -> Result<Vec<u8>> {
    let (l, w) = s.plane;
    let mut out = format!("VSURF1\n{l} {w} 3\n").into_bytes();
    for plane in [&s.ilm, &s.opl, &s.bm] {
        for &v in plane.iter() {
            let v = i32::try_from(v).map_err(|_| Error::InvalidArgument(format!("surface index {v} exceeds i32")))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_vsurf(bytes: &[u8], path: &Path) -> Result<LayerSurfaces> {
    let (lines, payload) = header_lines(bytes, 2, path)?;
    if lines[0] != "VSURF1" {
        return Err(Error::format(path, "missing VSURF1 magic"));
    }
    let d = parse_usizes(lines[1], 3, path)?;
    if d[2] != 3 || lines[1].split_whitespace().count() != 3 {
        return Err(Error::format(path, format!("expected `L W 3`, got `{}`", lines[1])));
    }
    let n = d[0] * d[1];
    if payload.len() != 3 * n * 4 {
        return Err(Error::format(path, format!("expected {} payload bytes, got {}", 3 * n * 4, payload.len())));
    }
    let mut planes = payload.chunks_exact(n * 4).map(|plane| {
        plane
            .chunks_exact(4)
            .map(|c| {
                let v = i32::from_le_bytes(c.try_into().unwrap());
                u32::try_from(v).map_err(|_| Error::format(path, format!("negative surface index {v}")))
            })
            .collect::<Result<Vec<u32>>>()
    });
    let ilm = planes.next().unwrap()?;
    let opl = planes.next().unwrap()?;
    let bm = planes.next().unwrap()?;
    LayerSurfaces::new((d[0], d[1]), ilm, opl, bm)
}

pub fn write_vsurf(path: &Path, s: &LayerSurfaces) -> Result<()> {
    write_atomic(path, &encode_vsurf(s)?)
}

pub fn read_vsurf(path: &Path) -> Result<LayerSurfaces> {
    decode_vsurf(&read_bytes(path)?, path)
}

pub fn encode_vmap(map: &Map2D) -> Vec<u8> {
    let (l, w) = map.dims;
    let mut out = format!("VMAP1\n{l} {w}\n").into_bytes();
    for v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_vmap(bytes: &[u8], kind: MapKind, path: &Path) -> Result<Map2D> {
    let (lines, payload) = header_lines(bytes, 2, path)?;
    if lines[0] != "VMAP1" {
        return Err(Error::format(path, "missing VMAP1 magic"));
    }
    let d = parse_usizes(lines[1], 2, path)?;
    if payload.len() != d[0] * d[1] * 8 {
        return Err(Error::format(path, "payload length does not match extents"));
    }
    let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Map2D::new((d[0], d[1]), data, kind)
}

pub fn write_vmap(path: &Path, map: &Map2D) -> Result<()> {
    write_atomic(path, &encode_vmap(map))
}

pub fn read_vmap(path: &Path, kind: MapKind) -> Result<Map2D> {
    decode_vmap(&read_bytes(path)?, kind, path)
}

/// 8-bit greyscale image, `rows x cols`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.cols, img.rows).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    // header: magic, width, height, maxval separated by whitespace, '#' comments allowed
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format(path, "truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| Error::format(path, "bad PGM header"))?);
    }
    if fields[0] != "P5" {
        return Err(Error::format(path, "not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format(path, format!("bad PGM field `{s}`")));
    let (cols, rows, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 255 || rows == 0 || cols == 0 {
        return Err(Error::format(path, "unsupported PGM geometry or maxval"));
    }
    // exactly one whitespace byte separates the header from the raster
    let raster = &bytes[(i + 1).min(bytes.len())..];
    if raster.len() != rows * cols {
        return Err(Error::format(path, format!("expected {} raster bytes, got {}", rows * cols, raster.len())));
    }
    Ok(GrayImage { rows, cols, pixels: raster.to_vec() })
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    write_atomic(path, &encode_pgm(img))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode_pgm(&read_bytes(path)?, path)
}

/// Binary mask as a PGM with 255 marking foreground.
pub fn mask_to_pgm(dims: (usize, usize), mask: &[bool]) -> GrayImage {
    GrayImage { rows: dims.0, cols: dims.1, pixels: mask.iter().map(|&b| if b { 255 } else { 0 }).collect() }
}

/// Foreground is any nonzero pixel.
pub fn pgm_to_mask(img: &GrayImage) -> Vec<bool> {
    img.pixels.iter().map(|&p| p != 0).collect()
}

/// Min-max scales a map to `0..=255`; constant maps become all zeros.
pub fn map_to_pgm(map: &Map2D) -> GrayImage {
    let lo = map.data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let pixels = map
        .data
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect();
    GrayImage { rows: map.dims.0, cols: map.dims.1, pixels }
}
