//! Netpbm image I/O, label maps and initial partitions.
//!
//! Images are held as `f64` samples in row-major order, channel-interleaved.
//! Label maps always satisfy two invariants: ids are exactly `0..region_count`
//! (numbered by first occurrence in a row-major scan) and every region is
//! 4-connected.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported format (magic {0:?})")]
    UnsupportedFormat(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated data: expected {expected} samples, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("label map is {map_width}x{map_height} but image is {image_width}x{image_height}")]
    DimensionMismatch {
        map_width: usize,
        map_height: usize,
        image_width: usize,
        image_height: usize,
    },
    #[error("empty label map")]
    EmptyMap,
    #[error("{0} regions do not fit in a 16-bit label map")]
    TooManyRegions(usize),
    #[error("invalid label map: {0}")]
    InvalidLabels(String),
}

fn io_err(path: &Path, source: std::io::Error) -> RasterError {
    RasterError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl RasterImage {
    /// Builds an image, checking the size invariants.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::MalformedHeader(format!("zero dimension {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(RasterError::MalformedHeader(format!(
                "{channels} channels, expected 1 or 3"
            )));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(RasterError::Truncated {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Single-channel image from row-major values.
    pub fn gray(width: usize, height: usize, data: Vec<f64>) -> Result<Self, RasterError> {
        Self::new(width, height, 1, data)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Channel values of pixel `index` (row-major).
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub region_count: usize,
}

impl LabelMap {
    /// Builds a label map from arbitrary per-pixel labels.
    ///
    /// Each 4-connected component of equal raw labels becomes one region, so
    /// disconnected labels are split. Regions are numbered by first
    /// occurrence in row-major order.
    pub fn from_raw_labels(width: usize, height: usize, raw: &[u32]) -> Result<Self, RasterError> {
        if width == 0 || height == 0 || raw.is_empty() {
            return Err(RasterError::EmptyMap);
        }
        if raw.len() != width * height {
            return Err(RasterError::InvalidLabels(format!(
                "{} labels for a {width}x{height} grid",
                raw.len()
            )));
        }
        Ok(connected_components(width, height, |a, b| raw[a] == raw[b]))
    }

    /// Checks contiguity of ids and 4-connectivity of every region.
    pub fn validate(&self) -> Result<(), RasterError> {
        if self.labels.len() != self.width * self.height {
            return Err(RasterError::InvalidLabels(
                "label count does not match dimensions".into(),
            ));
        }
        let mut used = vec![false; self.region_count];
        for &l in &self.labels {
            let l = l as usize;
            if l >= self.region_count {
                return Err(RasterError::InvalidLabels(format!("label {l} out of range")));
            }
            used[l] = true;
        }
        if let Some(missing) = used.iter().position(|u| !u) {
            return Err(RasterError::InvalidLabels(format!("label {missing} unused")));
        }
        let components = connected_components(self.width, self.height, |a, b| self.labels[a] == self.labels[b]);
        if components.region_count != self.region_count {
            return Err(RasterError::InvalidLabels(format!(
                "{} connected components for {} labels",
                components.region_count, self.region_count
            )));
        }
        Ok(())
    }

    fn check_dimensions(&self, img: &RasterImage) -> Result<(), RasterError> {
        if self.width != img.width || self.height != img.height {
            return Err(RasterError::DimensionMismatch {
                map_width: self.width,
                map_height: self.height,
                image_width: img.width,
                image_height: img.height,
            });
        }
        Ok(())
    }
}

/// Labels the 4-connected components of the relation `same(a, b)` over
/// horizontally and vertically adjacent pixel indices.
fn connected_components(width: usize, height: usize, same: impl Fn(usize, usize) -> bool) -> LabelMap {
    const UNSET: u32 = u32::MAX;
    let n = width * height;
    let mut labels = vec![UNSET; n];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for seed in 0..n {
        if labels[seed] != UNSET {
            continue;
        }
        labels[seed] = next;
        stack.push(seed);
        while let Some(p) = stack.pop() {
            let (x, y) = (p % width, p / width);
            let mut visit = |q: usize| {
                if labels[q] == UNSET && same(p, q) {
                    labels[q] = next;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < width {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - width);
            }
            if y + 1 < height {
                visit(p + width);
            }
        }
        next += 1;
    }
    LabelMap {
        width,
        height,
        labels,
        region_count: next as usize,
    }
}

/// One region per pixel, numbered in row-major order.
pub fn pixel_grid_partition(img: &RasterImage) -> LabelMap {
    let n = img.pixel_count();
    LabelMap {
        width: img.width,
        height: img.height,
        labels: (0..n as u32).collect(),
        region_count: n,
    }
}

/// 4-connected components of pixels carrying identical values on every channel.
pub fn flat_zone_partition(img: &RasterImage) -> LabelMap {
    connected_components(img.width, img.height, |a, b| img.pixel(a) == img.pixel(b))
}

/// Paints every pixel with the mean color of its region.
pub fn render_partition(map: &LabelMap, img: &RasterImage) -> Result<RasterImage, RasterError> {
    map.check_dimensions(img)?;
    let ch = img.channels;
    let mut sums = vec![0.0; map.region_count * ch];
    let mut counts = vec![0usize; map.region_count];
    for (p, &l) in map.labels.iter().enumerate() {
        let l = l as usize;
        counts[l] += 1;
        for (c, v) in img.pixel(p).iter().enumerate() {
            sums[l * ch + c] += v;
        }
    }
    let mut data = Vec::with_capacity(img.data.len());
    for &l in &map.labels {
        let l = l as usize;
        for c in 0..ch {
            data.push(sums[l * ch + c] / counts[l] as f64);
        }
    }
    RasterImage::new(img.width, img.height, ch, data)
}

// --- Netpbm decoding -------------------------------------------------------

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() && self.bytes[self.pos] != b'#'
        {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize, RasterError> {
        let tok = self
            .token()
            .ok_or_else(|| RasterError::MalformedHeader(format!("missing {what}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| RasterError::MalformedHeader(format!("bad {what}: {:?}", String::from_utf8_lossy(tok))))
    }
}

/// Raw decoded netpbm grid; samples are not scaled by maxval.
struct Netpbm {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u32>,
}

fn decode_netpbm(bytes: &[u8]) -> Result<Netpbm, RasterError> {
    if bytes.len() < 2 {
        return Err(RasterError::MalformedHeader("file too short for a magic number".into()));
    }
    let magic = String::from_utf8_lossy(&bytes[..2]).into_owned();
    let (channels, binary) = match magic.as_str() {
        "P2" => (1, false),
        "P3" => (3, false),
        "P5" => (1, true),
        "P6" => (3, true),
        _ => return Err(RasterError::UnsupportedFormat(magic)),
    };
    let mut rd = HeaderReader { bytes, pos: 2 };
    let width = rd.number("width")?;
    let height = rd.number("height")?;
    let maxval = rd.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(RasterError::MalformedHeader(format!("zero dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(RasterError::MalformedHeader(format!(
            "maxval {maxval} outside 1..=65535"
        )));
    }
    let expected = width * height * channels;
    let mut samples = Vec::with_capacity(expected);
    if binary {
        // exactly one whitespace byte separates maxval from the raster
        let start = rd.pos + 1;
        let body = bytes.get(start..).unwrap_or(&[]);
        let wide = maxval > 255;
        let per = if wide { 2 } else { 1 };
        let found = body.len() / per;
        if found < expected {
            return Err(RasterError::Truncated { expected, found });
        }
        for i in 0..expected {
            let v = if wide {
                u16::from_be_bytes([body[2 * i], body[2 * i + 1]]) as u32
            } else {
                body[i] as u32
            };
            samples.push(v);
        }
    } else {
        while samples.len() < expected {
            let Some(tok) = rd.token() else {
                return Err(RasterError::Truncated {
                    expected,
                    found: samples.len(),
                });
            };
            let v = std::str::from_utf8(tok)
                .ok()
                .and_then(|s| s.parse::<u32>().ok())
                .ok_or_else(|| RasterError::InvalidSample(String::from_utf8_lossy(tok).into_owned()))?;
            samples.push(v);
        }
    }
    if let Some(bad) = samples.iter().find(|&&v| v as usize > maxval) {
        return Err(RasterError::InvalidSample(format!("{bad} exceeds maxval {maxval}")));
    }
    Ok(Netpbm {
        width,
        height,
        channels,
        samples,
    })
}

/// Decodes a P2/P3/P5/P6 image held in memory. Sample values are kept at
/// their stored scale (no normalization by maxval).
pub fn decode_image(bytes: &[u8]) -> Result<RasterImage, RasterError> {
    let pnm = decode_netpbm(bytes)?;
    let data = pnm.samples.into_iter().map(f64::from).collect();
    RasterImage::new(pnm.width, pnm.height, pnm.channels, data)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage, RasterError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_image(&bytes)
}

/// Encodes as binary P5/P6, rounding and clamping samples. Images whose
/// samples exceed 255 are written with a 16-bit maxval.
pub fn encode_image(img: &RasterImage) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let peak = img.data.iter().cloned().fold(0.0f64, f64::max);
    let maxval: u32 = if peak > 255.5 { 65535 } else { 255 };
    let mut out = format!("{magic}\n{} {}\n{maxval}\n", img.width, img.height).into_bytes();
    for &v in &img.data {
        let q = v.round().clamp(0.0, maxval as f64) as u32;
        if maxval > 255 {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    out
}

pub fn save_image(img: &RasterImage, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let path = path.as_ref();
    fs::write(path, encode_image(img)).map_err(|e| io_err(path, e))
}

// --- Label map files -------------------------------------------------------

/// Decodes a label map file: a P5 PGM (8 or 16-bit) or the raw format made of
/// an 8-byte header (width, height as u32 LE) followed by u32 LE labels.
pub fn decode_label_map(bytes: &[u8]) -> Result<LabelMap, RasterError> {
    if bytes.is_empty() {
        return Err(RasterError::EmptyMap);
    }
    let (width, height, raw) = if bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
        let pnm = decode_netpbm(bytes)?;
        (pnm.width, pnm.height, pnm.samples)
    } else {
        if bytes.len() < 8 {
            return Err(RasterError::MalformedHeader(
                "raw label map shorter than its header".into(),
            ));
        }
        let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyMap);
        }
        let expected = width * height;
        let body = &bytes[8..];
        if body.len() / 4 < expected {
            return Err(RasterError::Truncated {
                expected,
                found: body.len() / 4,
            });
        }
        let raw = body
            .chunks_exact(4)
            .take(expected)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        (width, height, raw)
    };
    LabelMap::from_raw_labels(width, height, &raw)
}

/// Loads an externally computed partition for `img`. Labels are relabeled
/// contiguously and disconnected labels are split into separate regions.
pub fn load_label_map(path: impl AsRef<Path>, img: &RasterImage) -> Result<LabelMap, RasterError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let map = decode_label_map(&bytes)?;
    map.check_dimensions(img)?;
    Ok(map)
}

/// 16-bit big-endian P5 encoding. Fails when ids do not fit in 16 bits.
pub fn encode_label_map_pgm(map: &LabelMap) -> Result<Vec<u8>, RasterError> {
    if map.region_count > 65536 {
        return Err(RasterError::TooManyRegions(map.region_count));
    }
    let mut out = format!("P5\n{} {}\n65535\n", map.width, map.height).into_bytes();
    for &l in &map.labels {
        out.extend_from_slice(&(l as u16).to_be_bytes());
    }
    Ok(out)
}

pub fn encode_label_map_raw(map: &LabelMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * map.labels.len());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    for &l in &map.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

/// Writes a label map; a `.pgm` extension selects the 16-bit PGM encoding,
/// anything else the raw u32 encoding.
pub fn save_label_map(map: &LabelMap, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let path = path.as_ref();
    let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let bytes = if is_pgm {
        encode_label_map_pgm(map)?
    } else {
        encode_label_map_raw(map)
    };
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&bytes).map_err(|e| io_err(path, e))
}
