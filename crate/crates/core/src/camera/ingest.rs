//! Reading posed image sequences from disk.
//!
//! * trajectory: one pose per line, `index tx ty tz qx qy qz qw`
//! * intrinsics: a single line `fx fy cx cy width height`
//! * images: `<index>.png` files; 16-bit single-channel PNGs hold depth in
//!   millimeters (0 = invalid), 8-bit ones are grayscale.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use nalgebra::Vector3;

use super::{Frame, Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::raster::{depth_feature_image, Raster};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IngestConfig {
    /// Raw 16-bit depth units per meter.
    pub depth_scale: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { depth_scale: 1000.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryEntry {
    pub index: usize,
    pub pose: Pose,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses trajectory text. `path` is only used in error messages.
pub fn parse_trajectory(text: &str, path: &Path) -> Result<Vec<TrajectoryEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(parse_err(path, line_no, format!("expected 8 fields, found {}", fields.len())));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad frame index `{}`", fields[0])))?;
        let mut v = [0f64; 7];
        for (slot, s) in v.iter_mut().zip(&fields[1..]) {
            *slot = s
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| parse_err(path, line_no, format!("bad number `{s}`")))?;
        }
        let q = [v[3], v[4], v[5], v[6]];
        let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(parse_err(path, line_no, format!("quaternion norm {norm:.6} is not 1")));
        }
        out.push(TrajectoryEntry {
            index,
            pose: Pose::from_quaternion(Vector3::new(v[0], v[1], v[2]), q),
        });
    }
    Ok(out)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, path)
}

pub fn write_trajectory(path: &Path, entries: &[TrajectoryEntry]) -> Result<()> {
    let mut s = String::new();
    for e in entries {
        let t = e.pose.translation;
        let q = e.pose.quaternion();
        writeln!(
            s,
            "{} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            e.index, t.x, t.y, t.z, q[0], q[1], q[2], q[3]
        )
        .unwrap();
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn parse_intrinsics(text: &str, path: &Path) -> Result<Intrinsics> {
    let (line_no, line) = text
        .lines()
        .enumerate()
        .find(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .ok_or_else(|| parse_err(path, 1, "no intrinsics line"))?;
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 6 {
        return Err(parse_err(path, line_no + 1, format!("expected 6 fields, found {}", f.len())));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| parse_err(path, line_no + 1, format!("bad number `{s}`"))) };
    let dim = |s: &str| -> Result<u32> { s.parse().map_err(|_| parse_err(path, line_no + 1, format!("bad size `{s}`"))) };
    Intrinsics::new(num(f[0])?, num(f[1])?, num(f[2])?, num(f[3])?, dim(f[4])?, dim(f[5])?)
        .map_err(|e| parse_err(path, line_no + 1, e.to_string()))
}

pub fn read_intrinsics(path: &Path) -> Result<Intrinsics> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_intrinsics(&text, path)
}

pub fn write_intrinsics(path: &Path, k: &Intrinsics) -> Result<()> {
    let s = format!("{} {} {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height);
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Decoded image content.
enum Decoded {
    Depth(Raster),
    Gray(Raster),
}

fn decode_png(path: &Path, index: usize, scale: f64) -> Result<Decoded> {
    let img = image::open(path).map_err(|e| Error::Image {
        index,
        msg: format!("{}: {e}", path.display()),
    })?;
    Ok(match img {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            let data = buf.pixels().map(|p| (f64::from(p.0[0]) / scale) as f32).collect();
            Decoded::Depth(Raster::from_vec(w as usize, h as usize, 1, data))
        }
        other => {
            let buf = other.to_luma8();
            let (w, h) = buf.dimensions();
            let data = buf.pixels().map(|p| f32::from(p.0[0]) / 255.0).collect();
            Decoded::Gray(Raster::from_vec(w as usize, h as usize, 1, data))
        }
    })
}

/// Reads a 16-bit depth PNG as meters.
pub fn load_depth_png(path: &Path, scale: f64) -> Result<Raster> {
    match decode_png(path, 0, scale)? {
        Decoded::Depth(d) => Ok(d),
        Decoded::Gray(_) => Err(Error::Image {
            index: 0,
            msg: format!("{} is not a 16-bit depth image", path.display()),
        }),
    }
}

/// Writes meters as a 16-bit PNG (`round(d · scale)`, saturating).
pub fn save_depth_png(depth: &Raster, path: &Path, scale: f64) -> Result<()> {
    let (w, h) = (depth.width() as u32, depth.height() as u32);
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w, h, |x, y| {
        let d = f64::from(depth.at(x as usize, y as usize, 0));
        Luma([(d * scale).round().clamp(0.0, f64::from(u16::MAX)) as u16])
    });
    buf.save(path).map_err(|e| Error::Image {
        index: 0,
        msg: format!("{}: {e}", path.display()),
    })
}

fn list_images(dir: &Path) -> Result<BTreeMap<usize, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        if let Some(idx) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<usize>().ok()) {
            out.insert(idx, path);
        }
    }
    Ok(out)
}

/// Opens a sequence and streams its frames in index order.
///
/// Every image must have a pose; this is checked before the first frame is
/// produced. Images are decoded lazily as the stream advances.
pub fn ingest_sequence(
    trajectory_path: &Path,
    intrinsics_path: &Path,
    image_dir: &Path,
    config: IngestConfig,
) -> Result<impl Iterator<Item = Result<Frame>>> {
    let poses: BTreeMap<usize, Pose> = read_trajectory(trajectory_path)?
        .into_iter()
        .map(|e| (e.index, e.pose))
        .collect();
    let k = read_intrinsics(intrinsics_path)?;
    let images = list_images(image_dir)?;
    if let Some(idx) = images.keys().find(|i| !poses.contains_key(i)) {
        return Err(Error::MissingPose(*idx));
    }
    Ok(images.into_iter().map(move |(index, path)| {
        let (image, depth) = match decode_png(&path, index, config.depth_scale)? {
            Decoded::Depth(d) => (depth_feature_image(&d), Some(d)),
            Decoded::Gray(g) => (g, None),
        };
        Frame::new(index, poses[&index], k, image, depth)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_parsing() {
        let p = Path::new("traj.txt");
        let t = parse_trajectory("# header\n0 0 0 0 0 0 0 1\n1 1 2 3 0 0 0 1.0005\n", p).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].pose.rotation, nalgebra::Matrix3::identity());
        assert_eq!(t[1].pose.translation, Vector3::new(1.0, 2.0, 3.0));

        let err = parse_trajectory("0 0 0 0 0 0 0 1\n1 0 0 zero 0 0 0 1\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_trajectory("0 0 0 0 0 0 0 2\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn sequence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let k = Intrinsics::from_fov(4, 3, 60.0);
        let entries: Vec<_> = (0..3)
            .map(|i| TrajectoryEntry {
                index: i,
                pose: Pose::from_quaternion(Vector3::new(i as f64, 0.0, 0.0), [0.0, 0.0, 0.0, 1.0]),
            })
            .collect();
        write_trajectory(&dir.path().join("trajectory.txt"), &entries).unwrap();
        write_intrinsics(&dir.path().join("intrinsics.txt"), &k).unwrap();
        let img_dir = dir.path().join("depth");
        std::fs::create_dir(&img_dir).unwrap();
        for i in 0..3 {
            let d = Raster::filled(4, 3, 1, 2.0);
            save_depth_png(&d, &img_dir.join(format!("{i:06}.png")), 1000.0).unwrap();
        }
        let frames: Vec<Frame> = ingest_sequence(
            &dir.path().join("trajectory.txt"),
            &dir.path().join("intrinsics.txt"),
            &img_dir,
            IngestConfig::default(),
        )
        .unwrap()
        .collect::<Result<_>>()
        .unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames.iter().map(|f| f.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(frames[1].depth.as_ref().unwrap().at(0, 0, 0), 2.0);

        // A depth image without a pose is reported by index.
        let d = Raster::filled(4, 3, 1, 1.0);
        save_depth_png(&d, &img_dir.join("000007.png"), 1000.0).unwrap();
        let err = ingest_sequence(
            &dir.path().join("trajectory.txt"),
            &dir.path().join("intrinsics.txt"),
            &img_dir,
            IngestConfig::default(),
        )
        .err()
        .unwrap();
        assert!(matches!(err, Error::MissingPose(7)));
    }

    #[test]
    fn depth_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_pixel(2, 2, Luma([2000]));
        buf.save(&path).unwrap();
        let d = load_depth_png(&path, 1000.0).unwrap();
        assert_eq!(d.at(1, 1, 0), 2.0);
    }
}
