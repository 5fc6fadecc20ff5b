//! Particle frames: normalization, PDS/CSV I/O and time-series directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::kdtree::KdTree;
use crate::io::{write_atomic, Reader};
use crate::{Error, Result};

pub const PDS_MAGIC: &[u8; 4] = b"PDS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameFormat {
    Pds,
    Csv,
}

impl FrameFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pds" => Some(FrameFormat::Pds),
            "csv" => Some(FrameFormat::Csv),
            _ => None,
        }
    }
}

/// Min-max range of one raw quantity. A zero-width range normalizes to 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut r = Range {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        };
        for v in values {
            r.min = r.min.min(v);
            r.max = r.max.max(v);
        }
        r
    }

    pub fn union(self, other: Range) -> Self {
        Range {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn normalize(&self, v: f64) -> f64 {
        if self.width() > 0.0 {
            ((v - self.min) / self.width()).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        if self.width() > 0.0 {
            self.min + v * self.width()
        } else {
            self.min
        }
    }
}

/// Bounds used to normalize a frame.
///
/// Positions share one scale (the widest axis) so aspect ratio is preserved;
/// each axis keeps its own offset. Attributes are normalized independently,
/// usually with ranges pooled over every frame of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBounds {
    pub axes: [Range; 3],
    pub attributes: Vec<Range>,
}

impl RawBounds {
    pub fn position_scale(&self) -> f64 {
        self.axes.iter().map(Range::width).fold(0.0, f64::max)
    }

    pub fn normalize_position(&self, p: &[f64; 3]) -> [f64; 3] {
        let s = self.position_scale();
        std::array::from_fn(|a| {
            if s > 0.0 && self.axes[a].width() > 0.0 {
                ((p[a] - self.axes[a].min) / s).clamp(0.0, 1.0)
            } else {
                0.5
            }
        })
    }

    pub fn denormalize_position(&self, p: &[f64; 3]) -> [f64; 3] {
        let s = self.position_scale();
        std::array::from_fn(|a| {
            if s > 0.0 && self.axes[a].width() > 0.0 {
                self.axes[a].min + p[a] * s
            } else {
                self.axes[a].min
            }
        })
    }

    /// Converts a normalized length back to raw units.
    pub fn denormalize_length(&self, len: f64) -> f64 {
        len * self.position_scale()
    }
}

/// Raw (unnormalized) contents of one frame file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub positions: Vec<[f64; 3]>,
    /// Row-major `N × d`.
    pub attributes: Vec<f64>,
    pub attr_names: Vec<String>,
}

impl RawFrame {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn attr_dim(&self) -> usize {
        self.attr_names.len()
    }

    pub fn attribute_ranges(&self) -> Vec<Range> {
        let d = self.attr_dim();
        (0..d)
            .map(|c| Range::of(self.attributes.iter().skip(c).step_by(d).copied()))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::invalid("frame has no particles"));
        }
        if self.attr_names.is_empty() {
            return Err(Error::invalid("frame has no attributes"));
        }
        if self.attributes.len() != self.positions.len() * self.attr_dim() {
            return Err(Error::invalid(format!(
                "attribute table has {} values, expected {}",
                self.attributes.len(),
                self.positions.len() * self.attr_dim()
            )));
        }
        Ok(())
    }
}

/// One normalized, spatially indexed time step.
#[derive(Debug, Clone)]
pub struct ParticleFrame {
    id: u64,
    positions: Vec<[f64; 3]>,
    attributes: Vec<f64>,
    attr_names: Vec<String>,
    bounds: RawBounds,
    index: KdTree,
}

impl ParticleFrame {
    /// Normalizes `raw`. Attribute ranges default to the frame's own ranges;
    /// pass dataset-wide ranges so frames stay comparable over time.
    pub fn from_raw(id: u64, raw: &RawFrame, attr_ranges: Option<&[Range]>) -> Result<Self> {
        raw.validate()?;
        let d = raw.attr_dim();
        let attributes_r = match attr_ranges {
            Some(r) if r.len() != d => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                })
            }
            Some(r) => r.to_vec(),
            None => raw.attribute_ranges(),
        };
        let axes = std::array::from_fn(|a| Range::of(raw.positions.iter().map(|p| p[a])));
        let bounds = RawBounds {
            axes,
            attributes: attributes_r,
        };
        let positions: Vec<[f64; 3]> = raw
            .positions
            .iter()
            .map(|p| bounds.normalize_position(p))
            .collect();
        let attributes = raw
            .attributes
            .chunks_exact(d)
            .flat_map(|row| {
                row.iter()
                    .zip(&bounds.attributes)
                    .map(|(v, r)| r.normalize(*v))
                    .collect::<Vec<_>>()
            })
            .collect();
        let index = KdTree::build(&positions);
        Ok(ParticleFrame {
            id,
            positions,
            attributes,
            attr_names: raw.attr_names.clone(),
            bounds,
            index,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn attr_dim(&self) -> usize {
        self.attr_names.len()
    }

    pub fn attr_names(&self) -> &[String] {
        &self.attr_names
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> &[f64; 3] {
        &self.positions[i]
    }

    /// Row-major `N × d` normalized attributes.
    pub fn attributes(&self) -> &[f64] {
        &self.attributes
    }

    pub fn attribute_row(&self, i: usize) -> &[f64] {
        let d = self.attr_dim();
        &self.attributes[i * d..(i + 1) * d]
    }

    pub fn bounds(&self) -> &RawBounds {
        &self.bounds
    }

    pub fn index(&self) -> &KdTree {
        &self.index
    }

    /// Maps normalized data back to raw units.
    pub fn to_raw(&self) -> RawFrame {
        let positions = self
            .positions
            .iter()
            .map(|p| self.bounds.denormalize_position(p))
            .collect();
        let d = self.attr_dim();
        let attributes = self
            .attributes
            .chunks_exact(d)
            .flat_map(|row| {
                row.iter()
                    .zip(&self.bounds.attributes)
                    .map(|(v, r)| r.denormalize(*v))
                    .collect::<Vec<_>>()
            })
            .collect();
        RawFrame {
            positions,
            attributes,
            attr_names: self.attr_names.clone(),
        }
    }
}

pub fn encode_pds(raw: &RawFrame) -> Result<Vec<u8>> {
    raw.validate()?;
    let d = raw.attr_dim();
    let mut out = Vec::with_capacity(12 + raw.len() * (3 + d) * 4);
    out.extend_from_slice(PDS_MAGIC);
    out.extend_from_slice(&(raw.len() as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for name in &raw.attr_names {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::invalid(format!("attribute name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for p in &raw.positions {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    for v in &raw.attributes {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_pds(bytes: &[u8], path: &Path) -> Result<RawFrame> {
    let mut r = Reader::new(bytes, path);
    if r.bytes(4)? != PDS_MAGIC {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            location: "byte 0".into(),
            message: "bad magic, expected PDS1".into(),
        });
    }
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    if n == 0 {
        return Err(r.fail("particle count is zero"));
    }
    if d == 0 {
        return Err(r.fail("attribute count is zero"));
    }
    let mut attr_names = Vec::with_capacity(d);
    for _ in 0..d {
        let len = r.u16()? as usize;
        let at = r.offset();
        let s = std::str::from_utf8(r.bytes(len)?).map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            location: format!("byte {at}"),
            message: "attribute name is not valid UTF-8".into(),
        })?;
        attr_names.push(s.to_string());
    }
    let expected = n * (3 + d) * 4;
    if r.remaining() != expected {
        return Err(r.fail(format!(
            "payload is {} bytes, expected {expected} for {n} particles × {} values",
            r.remaining(),
            3 + d
        )));
    }
    let read_finite = |r: &mut Reader| -> Result<f64> {
        let at = r.offset();
        let v = r.f32()?;
        if !v.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                location: format!("byte {at}"),
                message: format!("non-finite value {v}"),
            });
        }
        Ok(v as f64)
    };
    let mut positions = Vec::with_capacity(n);
    for _ in 0..n {
        positions.push([
            read_finite(&mut r)?,
            read_finite(&mut r)?,
            read_finite(&mut r)?,
        ]);
    }
    let mut attributes = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        attributes.push(read_finite(&mut r)?);
    }
    Ok(RawFrame {
        positions,
        attributes,
        attr_names,
    })
}

pub fn parse_csv(text: &str, path: &Path) -> Result<RawFrame> {
    let fail = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        location: format!("line {line}"),
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| fail(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 4 || cols[..3] != ["x", "y", "z"] {
        return Err(fail(
            1,
            format!("header must be x,y,z,<attributes...>, got `{header}`"),
        ));
    }
    let attr_names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
    let width = cols.len();
    let mut positions = Vec::new();
    let mut attributes = Vec::new();
    for (ln, line) in lines {
        let line_no = ln + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(fail(
                line_no,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        let mut vals = Vec::with_capacity(width);
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| fail(line_no, format!("not a number: `{f}`")))?;
            if !v.is_finite() {
                return Err(fail(line_no, format!("non-finite value `{f}`")));
            }
            vals.push(v);
        }
        positions.push([vals[0], vals[1], vals[2]]);
        attributes.extend_from_slice(&vals[3..]);
    }
    if positions.is_empty() {
        return Err(fail(2, "no particle rows".into()));
    }
    Ok(RawFrame {
        positions,
        attributes,
        attr_names,
    })
}

pub fn read_raw(path: &Path, format: FrameFormat) -> Result<RawFrame> {
    match format {
        FrameFormat::Pds => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_pds(&bytes, path)
        }
        FrameFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_csv(&text, path)
        }
    }
}

pub fn write_pds(path: &Path, raw: &RawFrame) -> Result<()> {
    write_atomic(path, &encode_pds(raw)?)
}

/// Loads one file as a self-normalized frame. The frame id is taken from a
/// `frame_<n>` file stem when present.
pub fn load_frame(path: &Path, format: FrameFormat) -> Result<ParticleFrame> {
    let raw = read_raw(path, format)?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(frame_number)
        .unwrap_or(0);
    ParticleFrame::from_raw(id, &raw, None)
}

fn frame_number(stem: &str) -> Option<u64> {
    stem.strip_prefix("frame_")?.parse().ok()
}

/// `frame_<n>.pds` files in `dir`, ordered by `n`.
pub fn list_frames(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("pds") {
            continue;
        }
        if let Some(n) = path.file_stem().and_then(|s| s.to_str()).and_then(frame_number) {
            out.push((n, path));
        }
    }
    out.sort_by_key(|(n, _)| *n);
    Ok(out)
}

pub fn frame_file_name(id: u64) -> String {
    format!("frame_{id:05}.pds")
}

/// Loads a time series directory with attribute ranges pooled over all frames.
pub fn load_dataset(dir: &Path) -> Result<Vec<ParticleFrame>> {
    let files = list_frames(dir)?;
    if files.is_empty() {
        return Err(Error::invalid(format!(
            "no frame_<n>.pds files in {}",
            dir.display()
        )));
    }
    let raws = files
        .iter()
        .map(|(id, p)| read_raw(p, FrameFormat::Pds).map(|r| (*id, r)))
        .collect::<Result<Vec<_>>>()?;
    frames_from_raw(raws)
}

/// Normalizes a time series with attribute ranges pooled over every frame.
pub fn frames_from_raw(raws: Vec<(u64, RawFrame)>) -> Result<Vec<ParticleFrame>> {
    let Some((_, first)) = raws.first() else {
        return Err(Error::invalid("empty dataset"));
    };
    let names = first.attr_names.clone();
    let mut ranges = first.attribute_ranges();
    for (id, r) in &raws[1..] {
        if r.attr_names != names {
            return Err(Error::invalid(format!(
                "frame {id} attributes {:?} differ from {:?}",
                r.attr_names, names
            )));
        }
        for (acc, rr) in ranges.iter_mut().zip(r.attribute_ranges()) {
            *acc = acc.union(rr);
        }
    }
    raws.iter()
        .map(|(id, r)| ParticleFrame::from_raw(*id, r, Some(&ranges)))
        .collect()
}

pub fn write_dataset(dir: &Path, frames: &[(u64, RawFrame)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (id, raw) in frames {
        write_pds(&dir.join(frame_file_name(*id)), raw)?;
    }
    Ok(())
}
