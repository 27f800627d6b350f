//! Static-obstacle occupancy field with continuous queries.
//!
//! Cell `(col, row)` covers `[ox + col·res, ox + (col+1)·res) × [oy + row·res, oy + (row+1)·res)`
//! where `(ox, oy)` is the grid origin; row 0 is the bottom of the map. Queries
//! interpolate bilinearly between cell centres, clamp to the edge cells within
//! the outer half cell, and report anything outside the grid as occupied.
//!
//! Raster files store the top row first, as images do, so loading flips rows.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec2;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("PGM parse error at byte {offset}: {message}")]
    Pgm { offset: usize, message: String },
    #[error("CSV grid parse error at line {line}, column {column}: {message}")]
    Csv {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("metadata error in {path}: {message}")]
    Metadata { path: PathBuf, message: String },
    #[error("invalid grid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapFormat {
    Pgm,
    Csv,
}

/// Sidecar metadata stored next to a raster as `<stem>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapMetadata {
    pub resolution: f64,
    pub origin: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Vec2,
    // row-major, row 0 at the bottom
    values: Vec<f64>,
}

impl OccupancyGrid {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Vec2,
        values: Vec<f64>,
    ) -> Result<Self, MapError> {
        if width == 0 || height == 0 {
            return Err(MapError::Invalid("grid must have at least one cell".into()));
        }
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(MapError::Invalid(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if !(origin.x.is_finite() && origin.y.is_finite()) {
            return Err(MapError::Invalid("origin must be finite".into()));
        }
        if values.len() != width * height {
            return Err(MapError::Invalid(format!(
                "expected {} values for a {width}×{height} grid, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(MapError::Invalid(format!("occupancy {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            values,
        })
    }

    pub fn uniform(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Vec2,
        value: f64,
    ) -> Result<Self, MapError> {
        Self::new(
            width,
            height,
            resolution,
            origin,
            vec![value; width * height],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    pub fn value(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, value: f64) {
        assert!((0.0..=1.0).contains(&value), "occupancy must lie in [0, 1]");
        self.values[row * self.width + col] = value;
    }

    /// World coordinate of the centre of cell `(col, row)`.
    pub fn cell_center(&self, col: usize, row: usize) -> Vec2 {
        self.origin
            + Vec2::new(
                (col as f64 + 0.5) * self.resolution,
                (row as f64 + 0.5) * self.resolution,
            )
    }

    /// Largest absolute difference between 4-neighbouring cells.
    pub fn max_neighbor_difference(&self) -> f64 {
        let mut best = 0.0f64;
        for r in 0..self.height {
            for c in 0..self.width {
                let v = self.value(c, r);
                if c + 1 < self.width {
                    best = best.max((v - self.value(c + 1, r)).abs());
                }
                if r + 1 < self.height {
                    best = best.max((v - self.value(c, r + 1)).abs());
                }
            }
        }
        best
    }

    /// Occupancy probability at `x`; 1.0 outside the grid.
    #[inline]
    pub fn query(&self, x: Vec2) -> f64 {
        let gx = (x.x - self.origin.x) / self.resolution;
        let gy = (x.y - self.origin.y) / self.resolution;
        if !(gx >= 0.0 && gy >= 0.0 && gx <= self.width as f64 && gy <= self.height as f64) {
            return 1.0;
        }
        // continuous index relative to cell centres
        let fx = (gx - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (gy - 0.5).clamp(0.0, (self.height - 1) as f64);
        let c0 = (fx.floor() as usize).min(self.width - 1);
        let r0 = (fy.floor() as usize).min(self.height - 1);
        let c1 = (c0 + 1).min(self.width - 1);
        let r1 = (r0 + 1).min(self.height - 1);
        let tx = fx - c0 as f64;
        let ty = fy - r0 as f64;
        let bottom = self.value(c0, r0) * (1.0 - tx) + self.value(c1, r0) * tx;
        let top = self.value(c0, r1) * (1.0 - tx) + self.value(c1, r1) * tx;
        bottom * (1.0 - ty) + top * ty
    }

    /// Marks every cell whose centre lies inside the axis-aligned rectangle as occupied.
    pub fn fill_rect(&mut self, min: Vec2, max: Vec2, value: f64) {
        for r in 0..self.height {
            for c in 0..self.width {
                let p = self.cell_center(c, r);
                if p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y {
                    self.set(c, r, value);
                }
            }
        }
    }

    /// Marks every cell whose centre lies within `radius` of `center`.
    pub fn fill_disk(&mut self, center: Vec2, radius: f64, value: f64) {
        for r in 0..self.height {
            for c in 0..self.width {
                if (self.cell_center(c, r) - center).norm() <= radius {
                    self.set(c, r, value);
                }
            }
        }
    }

    /// Loads a raster and its `<stem>.json` sidecar.
    pub fn load(path: &Path, format: MapFormat) -> Result<Self, MapError> {
        let meta_path = path.with_extension("json");
        let meta_text = fs::read_to_string(&meta_path).map_err(|source| MapError::Io {
            path: meta_path.clone(),
            source,
        })?;
        let meta: MapMetadata =
            serde_json::from_str(&meta_text).map_err(|e| MapError::Metadata {
                path: meta_path.clone(),
                message: e.to_string(),
            })?;
        let bytes = fs::read(path).map_err(|source| MapError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, format, &meta)
    }

    pub fn from_bytes(
        bytes: &[u8],
        format: MapFormat,
        meta: &MapMetadata,
    ) -> Result<Self, MapError> {
        let (width, height, image_rows) = match format {
            MapFormat::Pgm => parse_pgm(bytes)?,
            MapFormat::Csv => parse_csv_grid(bytes)?,
        };
        let mut values = vec![0.0; width * height];
        for (img_row, row) in image_rows.chunks(width).enumerate() {
            let grid_row = height - 1 - img_row;
            values[grid_row * width..(grid_row + 1) * width].copy_from_slice(row);
        }
        Self::new(
            width,
            height,
            meta.resolution,
            Vec2::new(meta.origin[0], meta.origin[1]),
            values,
        )
    }

    /// Writes the grid as a plain (P2) PGM with occupancy mapped to `maxval·(1 − p)`.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.width, self.height);
        for r in (0..self.height).rev() {
            let row: Vec<String> = (0..self.width)
                .map(|c| ((1.0 - self.value(c, r)) * 255.0).round().to_string())
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn err(&self, message: impl Into<String>) -> MapError {
        MapError::Pgm {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8], MapError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("unexpected end of file"));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<u32, MapError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(MapError::Pgm {
                offset: start,
                message: format!(
                    "expected an integer, found {:?}",
                    String::from_utf8_lossy(tok)
                ),
            })
    }
}

/// Returns `(width, height, occupancy values in image order)`.
fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>), MapError> {
    let mut cur = ByteCursor { bytes, pos: 0 };
    let magic = cur.token()?;
    let binary = match magic {
        b"P2" => false,
        b"P5" => true,
        _ => {
            return Err(MapError::Pgm {
                offset: 0,
                message: "expected magic P2 or P5".into(),
            })
        }
    };
    let width = cur.number()? as usize;
    let height = cur.number()? as usize;
    let maxval = cur.number()?;
    if width == 0 || height == 0 {
        return Err(cur.err("image has zero size"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(cur.err(format!("maxval {maxval} outside 1..=65535")));
    }
    let n = width * height;
    let mut pixels = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(cur.err("missing whitespace after header"));
        }
        cur.pos += 1;
        let sample = if maxval < 256 { 1 } else { 2 };
        let need = n * sample;
        if bytes.len() - cur.pos < need {
            return Err(MapError::Pgm {
                offset: bytes.len(),
                message: format!(
                    "truncated raster: expected {need} bytes, found {}",
                    bytes.len() - cur.pos
                ),
            });
        }
        for i in 0..n {
            let at = cur.pos + i * sample;
            let v = if sample == 1 {
                bytes[at] as u32
            } else {
                u16::from_be_bytes([bytes[at], bytes[at + 1]]) as u32
            };
            pixels.push(v);
        }
    } else {
        for _ in 0..n {
            cur.skip_whitespace_and_comments();
            if cur.pos >= bytes.len() {
                return Err(cur.err(format!(
                    "truncated raster: expected {n} samples, found {}",
                    pixels.len()
                )));
            }
            pixels.push(cur.number()?);
        }
    }
    let values = pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if p > maxval {
                Err(MapError::Pgm {
                    offset: i,
                    message: format!("pixel {p} exceeds maxval {maxval}"),
                })
            } else {
                Ok(1.0 - p as f64 / maxval as f64)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((width, height, values))
}

fn parse_csv_grid(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>), MapError> {
    let text = std::str::from_utf8(bytes).map_err(|e| MapError::Csv {
        line: 1 + bytes[..e.valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count(),
        column: 1,
        message: "invalid UTF-8".into(),
    })?;
    let mut width = None;
    let mut values = Vec::new();
    let mut height = 0;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| MapError::Csv {
                line: line_no,
                column: col + 1,
                message: format!("not a number: {:?}", field.trim()),
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(MapError::Csv {
                    line: line_no,
                    column: col + 1,
                    message: format!("occupancy {v} outside [0, 1]"),
                });
            }
            values.push(v);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(MapError::Csv {
                    line: line_no,
                    column: count.min(w) + 1,
                    message: format!("expected {w} columns, found {count}"),
                })
            }
            _ => {}
        }
        height += 1;
    }
    let width = width.ok_or(MapError::Csv {
        line: 1,
        column: 1,
        message: "empty grid".into(),
    })?;
    Ok((width, height, values))
}
