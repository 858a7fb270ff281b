//! File formats.
//!
//! Timestamp container (all little-endian):
//!
//! ```text
//! "SPTC"  u16 version  u32 width  u32 height  f64 T_r
//! per pixel, row-major: u32 count, count × f64 timestamps
//! ```
//!
//! A censored cube appends an estimate plane of width·height f64 values,
//! NaN where the filter produced no anchor.
//!
//! Scene images are read either from CSV (one row of comma-separated
//! decimals per image row) or from binary PGM, where reflectivity maps
//! 0..maxval linearly onto 0..1 and depth onto 0..z_max (the top code is
//! pulled just below z_max).

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::cube::{CensoredCube, TimestampCube};
use crate::error::{Error, Result};
use crate::pml::DepthImage;
use crate::scene::{AcquisitionParams, Scene};

pub const CUBE_MAGIC: &[u8; 4] = b"SPTC";
pub const CUBE_VERSION: u16 = 1;

/// Decoded container before it is bound to acquisition parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RawContainer {
    pub width: usize,
    pub height: usize,
    pub repetition_period: f64,
    pub timestamps: Vec<Vec<f64>>,
    pub estimates: Option<Vec<Option<f64>>>,
}

impl RawContainer {
    /// Binds a plain container to `params`; T_r must agree with the header.
    pub fn into_cube(self, params: AcquisitionParams) -> Result<TimestampCube> {
        if params.repetition_period != self.repetition_period {
            return Err(Error::Format {
                what: "timestamp container",
                detail: format!(
                    "header T_r {} differs from parameters T_r {}",
                    self.repetition_period, params.repetition_period
                ),
            });
        }
        TimestampCube::new(self.width, self.height, self.timestamps, params)
    }

    pub fn into_censored(self) -> Result<CensoredCube> {
        let n = self.width * self.height;
        let estimates = self.estimates.unwrap_or_else(|| vec![None; n]);
        CensoredCube::new(self.width, self.height, self.repetition_period, self.timestamps, estimates)
    }
}

fn write_container(
    out: &mut impl Write,
    width: usize,
    height: usize,
    period: f64,
    sets: &[Vec<f64>],
    plane: Option<&[Option<f64>]>,
) -> Result<()> {
    out.write_all(CUBE_MAGIC)?;
    out.write_all(&CUBE_VERSION.to_le_bytes())?;
    out.write_all(&(width as u32).to_le_bytes())?;
    out.write_all(&(height as u32).to_le_bytes())?;
    out.write_all(&period.to_le_bytes())?;
    for set in sets {
        out.write_all(&(set.len() as u32).to_le_bytes())?;
        for t in set {
            out.write_all(&t.to_le_bytes())?;
        }
    }
    if let Some(plane) = plane {
        for e in plane {
            out.write_all(&e.unwrap_or(f64::NAN).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn encode_cube(cube: &TimestampCube) -> Vec<u8> {
    let mut buf = Vec::new();
    write_container(&mut buf, cube.width(), cube.height(), cube.params().repetition_period, cube.pixels(), None)
        .expect("writing to memory");
    buf
}

pub fn encode_censored(cube: &CensoredCube) -> Vec<u8> {
    let mut buf = Vec::new();
    write_container(
        &mut buf,
        cube.width(),
        cube.height(),
        cube.repetition_period(),
        cube.signal_sets(),
        Some(cube.estimates()),
    )
    .expect("writing to memory");
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format { what: "timestamp container", detail: "truncated".into() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode_container(bytes: &[u8]) -> Result<RawContainer> {
    let bad = |detail: String| Error::Format { what: "timestamp container", detail };
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != CUBE_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = c.u16()?;
    if version != CUBE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let width = c.u32()? as usize;
    let height = c.u32()? as usize;
    let repetition_period = c.f64()?;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    let mut timestamps = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let count = c.u32()? as usize;
        if count > c.remaining() / 8 {
            return Err(bad("truncated".into()));
        }
        timestamps.push((0..count).map(|_| c.f64()).collect::<Result<Vec<_>>>()?);
    }
    let estimates = match c.remaining() {
        0 => None,
        r if r == n * 8 => Some(
            (0..n)
                .map(|_| c.f64().map(|v| (!v.is_nan()).then_some(v)))
                .collect::<Result<Vec<_>>>()?,
        ),
        r => return Err(bad(format!("{r} trailing bytes"))),
    };
    Ok(RawContainer { width, height, repetition_period, timestamps, estimates })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<RawContainer> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_container(&bytes)
}

/// `pixel_i,pixel_j,timestamp` rows, 0-based indices.
pub fn cube_to_csv(width: usize, sets: &[Vec<f64>]) -> String {
    let mut out = String::from("pixel_i,pixel_j,timestamp\n");
    for (k, set) in sets.iter().enumerate() {
        for t in set {
            out.push_str(&format!("{},{},{:e}\n", k / width, k % width, t));
        }
    }
    out
}

fn parse_csv_grid(text: &str, what: &'static str) -> Result<(usize, usize, Vec<f64>)> {
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (row, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format { what, detail: format!("row {row}: {f:?}: {e}") })
            })
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(parsed.len()),
            Some(w) if w != parsed.len() => {
                return Err(Error::Format { what, detail: format!("row {row} has {} columns, expected {w}", parsed.len()) })
            }
            _ => {}
        }
        values.extend(parsed);
        height += 1;
    }
    let width = width.ok_or_else(|| Error::Format { what, detail: "empty file".into() })?;
    Ok((width, height, values))
}

/// Scene from two CSV grids, reflectivity in [0, 1] and depth in metres.
pub fn scene_from_csv(reflectivity: &str, depth: &str) -> Result<Scene> {
    let (wa, ha, alpha) = parse_csv_grid(reflectivity, "reflectivity CSV")?;
    let (wz, hz, z) = parse_csv_grid(depth, "depth CSV")?;
    if (wa, ha) != (wz, hz) {
        return Err(Error::DimensionMismatch { expected: (wa, ha), got: (wz, hz) });
    }
    Scene::new(wa, ha, alpha, z)
}

/// Binary PGM (P5) as values normalised to [0, 1].
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let bad = |detail: &str| Error::Format { what: "PGM", detail: detail.into() };
    if !bytes.starts_with(b"P5") {
        return Err(bad("expected binary P5 header"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval must be in 1..=65535"));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let wide = maxval > 255;
    let n = width * height;
    let raster = &bytes[pos.min(bytes.len())..];
    let need = if wide { 2 * n } else { n };
    if raster.len() < need {
        return Err(bad("truncated raster"));
    }
    let values = (0..n)
        .map(|k| {
            let v = if wide {
                u16::from_be_bytes([raster[2 * k], raster[2 * k + 1]]) as f64
            } else {
                raster[k] as f64
            };
            v / maxval as f64
        })
        .collect();
    Ok((width, height, values))
}

/// 16-bit binary PGM of values in [0, 1].
pub fn encode_pgm16(width: usize, height: usize, unit_values: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for v in unit_values {
        let code = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&code.to_be_bytes());
    }
    out
}

/// Scene from two PGM images.
pub fn scene_from_pgm(reflectivity: &[u8], depth: &[u8], params: &AcquisitionParams) -> Result<Scene> {
    let (wa, ha, alpha) = decode_pgm(reflectivity)?;
    let (wz, hz, z) = decode_pgm(depth)?;
    if (wa, ha) != (wz, hz) {
        return Err(Error::DimensionMismatch { expected: (wa, ha), got: (wz, hz) });
    }
    let z_max = params.z_max();
    let top = z_max * (1.0 - f64::EPSILON);
    let depth = z.into_iter().map(|u| (u * z_max).min(top)).collect();
    Scene::new(wa, ha, alpha, depth)
}

/// Depth as 16-bit PGM, 0..z_max → 0..65535; absent pixels are 0.
pub fn depth_to_pgm(image: &DepthImage, z_max: f64) -> Vec<u8> {
    let unit: Vec<f64> = image.filled().iter().map(|z| z / z_max).collect();
    encode_pgm16(image.width(), image.height(), &unit)
}

/// One CSV row per image row; absent pixels are written as `nan`.
pub fn depth_to_csv(image: &DepthImage) -> String {
    let mut out = String::new();
    for row in image.depth().chunks(image.width()) {
        let fields: Vec<String> = row
            .iter()
            .map(|z| z.map_or_else(|| "nan".to_string(), |z| format!("{z}")))
            .collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Raw little-endian f64 plane, NaN for absent pixels.
pub fn depth_to_f64_plane(image: &DepthImage) -> Vec<u8> {
    image
        .depth()
        .iter()
        .flat_map(|z| z.unwrap_or(f64::NAN).to_le_bytes())
        .collect()
}

/// Plain PBM (P1); 1 marks a valid pixel.
pub fn mask_to_pbm(width: usize, height: usize, mask: &[bool]) -> String {
    let mut out = format!("P1\n{width} {height}\n");
    for row in mask.chunks(width) {
        let bits: Vec<&str> = row.iter().map(|&v| if v { "1" } else { "0" }).collect();
        out.push_str(&bits.join(" "));
        out.push('\n');
    }
    out
}

/// Writes `contents` to `path` through a buffered file.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    f.write_all(contents.as_bytes())?;
    f.flush()?;
    Ok(())
}
