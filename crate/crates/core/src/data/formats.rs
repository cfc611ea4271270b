//! Readers and writers for the on-disk supervision files.

use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Magic tag opening every `.flo` file.
pub const FLO_TAG: f32 = 202021.25;
/// Written for flow vectors that carry no measurement.
pub const FLO_UNKNOWN: f32 = 1e10;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::load(path, e.to_string()))
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn le_f32(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// A two-channel flow map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 2]>,
}

pub fn read_flo(path: &Path) -> Result<FlowMap> {
    let b = read_bytes(path)?;
    if b.len() < 12 {
        return Err(Error::load(path, "truncated flow header"));
    }
    if le_f32(&b, 0) != FLO_TAG {
        return Err(Error::load(path, "bad flow magic tag"));
    }
    let (w, h) = (le_u32(&b, 4) as usize, le_u32(&b, 8) as usize);
    if w == 0 || h == 0 || w > 1 << 16 || h > 1 << 16 {
        return Err(Error::load(path, format!("implausible flow size {w}x{h}")));
    }
    if b.len() != 12 + w * h * 8 {
        return Err(Error::load(path, format!("expected {} bytes for {w}x{h} flow, found {}", 12 + w * h * 8, b.len())));
    }
    let data = (0..w * h)
        .map(|i| [le_f32(&b, 12 + 8 * i), le_f32(&b, 16 + 8 * i)])
        .collect();
    Ok(FlowMap { width: w, height: h, data })
}

pub fn write_flo(path: &Path, flow: &FlowMap) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(&FLO_TAG.to_le_bytes())?;
    out.write_all(&(flow.width as u32).to_le_bytes())?;
    out.write_all(&(flow.height as u32).to_le_bytes())?;
    for v in &flow.data {
        out.write_all(&v[0].to_le_bytes())?;
        out.write_all(&v[1].to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// A single-channel depth map, row-major; zero marks invalid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let b = read_bytes(path)?;
    if b.len() < 8 {
        return Err(Error::load(path, "truncated depth header"));
    }
    let (w, h) = (le_u32(&b, 0) as usize, le_u32(&b, 4) as usize);
    if b.len() != 8 + 4 * w * h {
        return Err(Error::load(path, format!("expected {} bytes for {w}x{h} depth, found {}", 8 + 4 * w * h, b.len())));
    }
    let data: Vec<f32> = (0..w * h).map(|i| le_f32(&b, 8 + 4 * i)).collect();
    if let Some(v) = data.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::load(path, format!("depth must be finite and nonnegative, found {v}")));
    }
    Ok(DepthMap { width: w, height: h, data })
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(&(depth.width as u32).to_le_bytes())?;
    out.write_all(&(depth.height as u32).to_le_bytes())?;
    for v in &depth.data {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// An RGB image with channels in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 3]>,
}

impl RgbImage {
    /// Rounds every channel to the nearest 8-bit level.
    pub fn quantize(&mut self) {
        for p in &mut self.data {
            for c in p.iter_mut() {
                *c = to_u8(*c) as f32 / 255.0;
            }
        }
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| Error::load(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .pixels()
        .map(|p| [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0])
        .collect();
    Ok(RgbImage {
        width: w as usize,
        height: h as usize,
        data,
    })
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for (px, v) in buf.pixels_mut().zip(&img.data) {
        *px = image::Rgb([to_u8(v[0]), to_u8(v[1]), to_u8(v[2])]);
    }
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Parses `fx fy cx cy width height` from a single line.
pub fn read_intrinsics(path: &Path) -> Result<Intrinsics<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    let (line_no, line) = text
        .lines()
        .enumerate()
        .find(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .ok_or_else(|| Error::load(path, "empty intrinsics file"))?;
    let parse_err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line_no + 1,
        msg,
    };
    let tok: Vec<&str> = line.split_whitespace().collect();
    if tok.len() != 6 {
        return Err(parse_err(format!("expected 6 values, found {}", tok.len())));
    }
    let f = |i: usize| tok[i].parse::<f64>().map_err(|e| parse_err(format!("{}: {e}", tok[i])));
    let u = |i: usize| tok[i].parse::<usize>().map_err(|e| parse_err(format!("{}: {e}", tok[i])));
    Intrinsics::new(f(0)?, f(1)?, f(2)?, f(3)?, u(4)?, u(5)?).map_err(|e| parse_err(e.to_string()))
}

pub fn write_intrinsics(path: &Path, intr: &Intrinsics<f64>) -> Result<()> {
    fs::write(
        path,
        format!("{} {} {} {} {} {}\n", intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height),
    )?;
    Ok(())
}
