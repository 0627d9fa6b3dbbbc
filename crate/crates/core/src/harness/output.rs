//! Artifact writers: append-only run directories, CSV, JSON and PNG files.
//! Every file carries the run fingerprint.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::volume::{JointVolume, Phase};

/// PNG text keyword holding the run fingerprint.
pub const PNG_FINGERPRINT_KEY: &str = "pfjm-fingerprint";

/// Display window for normalized intensities in image grids.
pub const DISPLAY_WINDOW: (f64, f64) = (-0.25, 0.45);

/// Creates `<out>/<kind>-<fingerprint>-<unix seconds>`, adding a numeric
/// suffix rather than reusing an existing directory.
pub fn create_run_dir(out: &Path, kind: &str, fingerprint: &str) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let base = format!("{kind}-{fingerprint}-{stamp}");
    for k in 0.. {
        let name = if k == 0 { base.clone() } else { format!("{base}-{k}") };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!("suffix search is unbounded")
}

/// Opens a file that must not exist yet.
pub fn create_new(path: &Path) -> Result<BufWriter<File>> {
    OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create_new(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Harness(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Writes serializable rows with a header derived from the row type.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_new(path)?);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Harness(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8], fingerprint: &str, description: &str) -> Result<()> {
    let png_err = |e: png::EncodingError| Error::Harness(format!("{}: {e}", path.display()));
    let mut enc = png::Encoder::new(create_new(path)?, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    enc.add_text_chunk(PNG_FINGERPRINT_KEY.into(), fingerprint.into()).map_err(png_err)?;
    enc.add_text_chunk("Description".into(), description.into()).map_err(png_err)?;
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(data).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Reads the fingerprint text chunk of a PNG written by this module.
pub fn read_png_fingerprint(path: &Path) -> Result<Option<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = png::Decoder::new(file)
        .read_info()
        .map_err(|e| Error::Harness(format!("{}: {e}", path.display())))?;
    Ok(reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|c| c.keyword == PNG_FINGERPRINT_KEY)
        .map(|c| c.text.clone()))
}

fn to_gray(v: f64) -> u8 {
    let (lo, hi) = DISPLAY_WINDOW;
    (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Grayscale grid: one row per entry of `rows`, and within a row every
/// volume contributes its three phases side by side. Tiles are separated by
/// a 2-pixel gap.
pub fn write_volume_grid(path: &Path, rows: &[Vec<&JointVolume>], fingerprint: &str, description: &str) -> Result<()> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::Harness("image grid needs at least one volume".into()))?;
    let [h, w, _] = first.shape();
    let gap = 2;
    let tiles_per_row = rows.iter().map(|r| r.len() * 3).max().unwrap_or(0);
    let width = tiles_per_row * (w + gap) - gap;
    let height = rows.len() * (h + gap) - gap;
    let mut pixels = vec![0u8; width * height];
    for (ri, row) in rows.iter().enumerate() {
        for (vi, v) in row.iter().enumerate() {
            if v.shape() != first.shape() {
                return Err(Error::Harness("image grid volumes differ in shape".into()));
            }
            for p in Phase::ALL {
                let x0 = (vi * 3 + p.index()) * (w + gap);
                let y0 = ri * (h + gap);
                for i in 0..h {
                    for j in 0..w {
                        pixels[(y0 + i) * width + x0 + j] = to_gray(v.get(i, j, p));
                    }
                }
            }
        }
    }
    write_png(path, width, height, png::ColorType::Grayscale, &pixels, fingerprint, description)
}

/// A polyline on a chart.
pub struct Series {
    pub label: String,
    pub color: [u8; 3],
    pub points: Vec<(f64, f64)>,
}

pub const PHASE_COLORS: [[u8; 3]; 3] = [[31, 119, 180], [214, 39, 40], [44, 160, 44]];

struct Canvas {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgb: vec![255; width * height * 3],
        }
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            let o = (y as usize * self.width + x as usize) * 3;
            self.rgb[o..o + 3].copy_from_slice(&color);
        }
    }

    /// Bresenham line.
    fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), color: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.put(x0, y0, color);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    fn marker(&mut self, (x, y): (i64, i64), color: [u8; 3]) {
        for dx in -2..=2 {
            for dy in -2..=2 {
                self.put(x + dx, y + dy, color);
            }
        }
    }
}

/// Line chart with optional log₂ x axis. Axis ranges and series labels go
/// into the PNG description since the raster carries no text.
pub fn write_line_chart(path: &Path, series: &[Series], log2_x: bool, fingerprint: &str, title: &str) -> Result<()> {
    let tx = |x: f64| if log2_x { x.log2() } else { x };
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().map(|&(x, y)| (tx(x), y))).collect();
    if pts.is_empty() || pts.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Harness("chart needs finite points".into()));
    }
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if xmax == xmin {
        xmax = xmin + 1.0;
    }
    let pad = ((ymax - ymin) * 0.1).max(1e-9);
    let (ymin, ymax) = (ymin - pad, ymax + pad);

    let (width, height, margin) = (640usize, 400usize, 40i64);
    let mut c = Canvas::new(width, height);
    let (pw, ph) = (width as i64 - 2 * margin, height as i64 - 2 * margin);
    let map = |x: f64, y: f64| -> (i64, i64) {
        let px = margin + ((x - xmin) / (xmax - xmin) * pw as f64).round() as i64;
        let py = margin + ph - ((y - ymin) / (ymax - ymin) * ph as f64).round() as i64;
        (px, py)
    };
    let axis = [0, 0, 0];
    c.line((margin, margin), (margin, margin + ph), axis);
    c.line((margin, margin + ph), (margin + pw, margin + ph), axis);
    for s in series {
        let mapped: Vec<(i64, i64)> = s.points.iter().map(|&(x, y)| map(tx(x), y)).collect();
        for w in mapped.windows(2) {
            c.line(w[0], w[1], s.color);
        }
        for &p in &mapped {
            c.marker(p, s.color);
        }
    }
    let labels: Vec<String> = series
        .iter()
        .map(|s| format!("{} rgb{:?}", s.label, s.color))
        .collect();
    let description = format!(
        "{title}; x {}[{xmin}, {xmax}]; y [{ymin}, {ymax}]; series: {}",
        if log2_x { "log2 " } else { "" },
        labels.join(", ")
    );
    write_png(path, width, height, png::ColorType::Rgb, &c.rgb, fingerprint, &description)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Role;

    #[test]
    fn run_dirs_never_collide() {
        let tmp = tempfile::tempdir().unwrap();
        let a = create_run_dir(tmp.path(), "train", "abc").unwrap();
        let b = create_run_dir(tmp.path(), "train", "abc").unwrap();
        assert_ne!(a, b);
        assert!(a.is_dir() && b.is_dir());
    }

    #[test]
    fn files_are_never_overwritten() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("x.json");
        write_json(&p, &serde_json::json!({"a": 1})).unwrap();
        assert!(write_json(&p, &serde_json::json!({"a": 2})).is_err());
    }

    #[test]
    fn png_carries_fingerprint() {
        let tmp = tempfile::tempdir().unwrap();
        let v = JointVolume::filled(8, 8, 0.1, Role::Routine);
        let grid = tmp.path().join("grid.png");
        write_volume_grid(&grid, &[vec![&v, &v], vec![&v]], "f00d", "test").unwrap();
        assert_eq!(read_png_fingerprint(&grid).unwrap().as_deref(), Some("f00d"));
        let chart = tmp.path().join("chart.png");
        let s = Series {
            label: "mae".into(),
            color: PHASE_COLORS[0],
            points: vec![(2.0, 1.0), (8.0, 0.5), (128.0, 0.7)],
        };
        write_line_chart(&chart, &[s], true, "beef", "trend").unwrap();
        assert_eq!(read_png_fingerprint(&chart).unwrap().as_deref(), Some("beef"));
    }
}
