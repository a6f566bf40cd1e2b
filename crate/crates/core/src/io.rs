//! On-disk formats.
//!
//! - color images: 8-bit PNG, samples mapped to `[0, 1]`
//! - depth maps: raw little-endian `f32` plus a `<file>.json` sidecar `{"w", "h", "unit"}`
//! - distributions: raw little-endian `f32` plus a `<file>.json` header `{"h", "w"}`
//! - datasets: one JSON object per line, paths relative to the manifest

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::camera::{ImageBuffer, RelativePose};
use crate::error::{Error, Result};
use crate::pano::{PairMeta, PosePair};
use crate::so3::Rotation3;
use crate::sphere_grid::{GridSpec, SphericalDistribution, UnitVec3};

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_f32_le(path: &Path, values: impl Iterator<Item = f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_f32_le(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 4 {
        return Err(Error::usage(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Writes a 1- or 3-channel image as 8-bit PNG.
pub fn write_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    if img.channels() == 3 {
        RgbImage::from_fn(w, h, |x, y| Rgb(std::array::from_fn(|c| to_u8(img.pixel(x as usize, y as usize)[c])))).save(path)?;
    } else {
        GrayImage::from_fn(w, h, |x, y| Luma([to_u8(img.pixel(x as usize, y as usize)[0])])).save(path)?;
    }
    Ok(())
}

/// Reads any PNG as RGB.
pub fn read_png(path: &Path) -> Result<ImageBuffer> {
    let rgb = image::open(path)?.to_rgb8();
    let data = rgb.as_raw().iter().map(|v| *v as f32 / 255.0).collect();
    ImageBuffer::from_data(rgb.width() as usize, rgb.height() as usize, 3, data)
}

#[derive(Debug, Serialize, Deserialize)]
struct DepthHeader {
    w: usize,
    h: usize,
    unit: String,
}

pub fn write_depth(path: &Path, depth: &ImageBuffer) -> Result<()> {
    if depth.channels() != 1 {
        return Err(Error::usage("depth maps have one channel"));
    }
    write_f32_le(path, depth.data().iter().copied())?;
    let header = DepthHeader {
        w: depth.width(),
        h: depth.height(),
        unit: "m".into(),
    };
    fs::write(sidecar(path), serde_json::to_string(&header)?)?;
    Ok(())
}

pub fn read_depth(path: &Path) -> Result<ImageBuffer> {
    let header: DepthHeader = serde_json::from_str(&fs::read_to_string(sidecar(path))?)?;
    if header.unit != "m" {
        return Err(Error::usage(format!("unsupported depth unit {:?}", header.unit)));
    }
    let data = read_f32_le(path, header.w * header.h)?;
    ImageBuffer::from_data(header.w, header.h, 1, data)
}

#[derive(Debug, Serialize, Deserialize)]
struct GridHeader {
    h: usize,
    w: usize,
}

/// Stores probabilities as `f32`; reading renormalizes the rounded values.
pub fn write_distribution(path: &Path, dist: &SphericalDistribution) -> Result<()> {
    write_f32_le(path, dist.probs().iter().map(|p| *p as f32))?;
    let spec = dist.spec();
    let header = GridHeader {
        h: spec.height(),
        w: spec.width(),
    };
    fs::write(sidecar(path), serde_json::to_string(&header)?)?;
    Ok(())
}

pub fn read_distribution(path: &Path) -> Result<SphericalDistribution> {
    let header: GridHeader = serde_json::from_str(&fs::read_to_string(sidecar(path))?)?;
    let spec = GridSpec::new(header.h, header.w)?;
    let values = read_f32_le(path, spec.len())?;
    SphericalDistribution::from_weights(spec, values.into_iter().map(f64::from).collect())
}

/// Grayscale heatmap of a distribution, scaled so the largest cell is white.
pub fn write_heatmap(path: &Path, dist: &SphericalDistribution) -> Result<()> {
    let spec = dist.spec();
    let max = dist.probs().iter().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let data = dist.probs().iter().map(|p| (p * scale) as f32).collect();
    write_png(path, &ImageBuffer::from_data(spec.width(), spec.height(), 1, data)?)
}

/// One dataset pair on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub fov_deg: f64,
    pub overlap: f64,
    pub img0: String,
    pub img1: String,
    pub depth0: String,
    pub depth1: String,
    #[serde(flatten)]
    pub meta: PairMeta,
}

impl ManifestRecord {
    pub fn pose(&self) -> Result<RelativePose> {
        Ok(RelativePose::new(Rotation3::from_row_major(&self.r)?, UnitVec3::try_from(self.t)?))
    }
}

/// Writes the images and depths of `pair` into `dir` and returns its manifest record.
pub fn save_pair(dir: &Path, pair: &PosePair) -> Result<ManifestRecord> {
    let rec = ManifestRecord {
        id: pair.id.clone(),
        r: pair.pose.rotation.to_row_major(),
        t: pair.pose.translation.into(),
        fov_deg: pair.fov_deg,
        overlap: pair.overlap,
        img0: format!("{}_img0.png", pair.id),
        img1: format!("{}_img1.png", pair.id),
        depth0: format!("{}_depth0.f32", pair.id),
        depth1: format!("{}_depth1.f32", pair.id),
        meta: pair.meta.clone(),
    };
    write_png(&dir.join(&rec.img0), &pair.img0)?;
    write_png(&dir.join(&rec.img1), &pair.img1)?;
    write_depth(&dir.join(&rec.depth0), &pair.depth0)?;
    write_depth(&dir.join(&rec.depth1), &pair.depth1)?;
    Ok(rec)
}

/// Reads a pair back; images come back quantized to 8 bits.
pub fn load_pair(dir: &Path, rec: &ManifestRecord) -> Result<PosePair> {
    Ok(PosePair {
        id: rec.id.clone(),
        img0: read_png(&dir.join(&rec.img0))?,
        img1: read_png(&dir.join(&rec.img1))?,
        depth0: read_depth(&dir.join(&rec.depth0))?,
        depth1: read_depth(&dir.join(&rec.depth1))?,
        pose: rec.pose()?,
        fov_deg: rec.fov_deg,
        overlap: rec.overlap,
        meta: rec.meta.clone(),
    })
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere_grid::vmf_target;

    #[test]
    fn depth_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let d = ImageBuffer::from_data(3, 2, 1, vec![1.0, 2.5, 0.0, 3.25, 1e-3, 7.0]).unwrap();
        let p = dir.path().join("d.f32");
        write_depth(&p, &d).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 24);
        let header: serde_json::Value = serde_json::from_str(&fs::read_to_string(sidecar(&p)).unwrap()).unwrap();
        assert_eq!(header, serde_json::json!({"w": 3, "h": 2, "unit": "m"}));
        assert_eq!(read_depth(&p).unwrap(), d);
    }

    #[test]
    fn png_round_trip_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..4 * 3 * 3).map(|i| (i as f32 / 35.0).min(1.0)).collect();
        let img = ImageBuffer::from_data(4, 3, 3, data).unwrap();
        let p = dir.path().join("i.png");
        write_png(&p, &img).unwrap();
        let back = read_png(&p).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn distribution_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(8, 16).unwrap();
        let d = vmf_target(spec, &UnitVec3::new(1.0, 1.0, 0.0).unwrap(), 10.0).unwrap();
        let p = dir.path().join("p.f32");
        write_distribution(&p, &d).unwrap();
        write_heatmap(&dir.path().join("p.png"), &d).unwrap();
        let back = read_distribution(&p).unwrap();
        assert_eq!(back.spec(), spec);
        for (a, b) in back.probs().iter().zip(d.probs()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
