//! Frame-difference foreground detection.
//!
//! Three consecutive sampled frames are differenced pairwise, the two
//! difference images are AND-ed together, converted to grayscale,
//! thresholded, cleaned up with a dilation followed by an erosion, and the
//! 8-connected components of the result become bounding boxes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("dimension mismatch: {0}x{1}x{2} vs {3}x{4}x{5}")]
    DimensionMismatch(usize, usize, usize, usize, usize, usize),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("invalid detection config: {0}")]
    Config(String),
    #[error("image format error in {path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VisionError>;

/// A raw 8-bit image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
    pub camera_id: u32,
    /// Seconds on the simulation clock.
    pub capture_time: f64,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        let frame = Frame {
            width,
            height,
            channels,
            data,
            camera_id: 0,
            capture_time: 0.0,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Frame {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
            camera_id: 0,
            capture_time: 0.0,
        }
    }

    pub fn with_origin(mut self, camera_id: u32, capture_time_s: f64) -> Self {
        self.camera_id = camera_id;
        self.capture_time = capture_time_s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != 1 && self.channels != 3 {
            return Err(VisionError::Malformed(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        if self.data.len() != self.width * self.height * self.channels {
            return Err(VisionError::Malformed(format!(
                "data length {} != {}x{}x{}",
                self.data.len(),
                self.width,
                self.height,
                self.channels
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    fn same_shape(&self, other: &Frame) -> Result<()> {
        self.validate()?;
        other.validate()?;
        if self.width != other.width
            || self.height != other.height
            || self.channels != other.channels
        {
            return Err(VisionError::DimensionMismatch(
                self.width,
                self.height,
                self.channels,
                other.width,
                other.height,
                other.channels,
            ));
        }
        Ok(())
    }

    fn derived(&self, channels: usize, data: Vec<u8>) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            channels,
            data,
            camera_id: self.camera_id,
            capture_time: self.capture_time,
        }
    }
}

/// Single-channel mask whose samples are either 0 or `maxval`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub maxval: u8,
    pub data: Vec<u8>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            maxval: 255,
            data: vec![0; width * height],
        }
    }

    /// Builds a mask from booleans, `true` mapping to 255.
    pub fn from_bools(width: usize, height: usize, bits: &[bool]) -> Self {
        assert_eq!(bits.len(), width * height);
        BinaryMask {
            width,
            height,
            maxval: 255,
            data: bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }

    #[inline]
    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = if on { self.maxval } else { 0 };
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub threshold: u8,
    pub maxval: u8,
    pub dilation_radius: usize,
    pub erosion_radius: usize,
    pub min_box_area_fraction: f64,
    /// Allowed range of `w / h`, inclusive at both ends.
    pub aspect_ratio_bounds: (f64, f64),
    pub sample_interval_s: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            threshold: 25,
            maxval: 255,
            dilation_radius: 2,
            erosion_radius: 1,
            min_box_area_fraction: 0.001,
            aspect_ratio_bounds: (0.25, 4.0),
            sample_interval_s: 1.0,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=254).contains(&self.threshold) {
            return Err(VisionError::Config(format!(
                "threshold {} outside [1, 254]",
                self.threshold
            )));
        }
        if self.maxval == 0 {
            return Err(VisionError::Config("maxval must be positive".into()));
        }
        if !(self.min_box_area_fraction > 0.0 && self.min_box_area_fraction < 1.0) {
            return Err(VisionError::Config(format!(
                "min_box_area_fraction {} outside (0, 1)",
                self.min_box_area_fraction
            )));
        }
        let (lo, hi) = self.aspect_ratio_bounds;
        if !(lo > 0.0 && hi >= 1.0 && (lo * hi - 1.0).abs() < 1e-9) {
            return Err(VisionError::Config(format!(
                "aspect bounds ({lo}, {hi}) must satisfy low = 1/high"
            )));
        }
        if !(self.sample_interval_s > 0.0) {
            return Err(VisionError::Config("sample_interval_s must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn aspect(&self) -> f64 {
        self.w as f64 / self.h as f64
    }
}

pub fn abs_diff(a: &Frame, b: &Frame) -> Result<Frame> {
    a.same_shape(b)?;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&p, &q)| p.abs_diff(q))
        .collect();
    Ok(a.derived(a.channels, data))
}

pub fn conjunction(d1: &Frame, d2: &Frame) -> Result<Frame> {
    d1.same_shape(d2)?;
    let data = d1.data.iter().zip(&d2.data).map(|(&p, &q)| p & q).collect();
    Ok(d1.derived(d1.channels, data))
}

/// ITU-R 601 luma, rounded half-up in exact integer arithmetic.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

pub fn to_grayscale(f: &Frame) -> Result<Frame> {
    f.validate()?;
    if f.channels == 1 {
        return Ok(f.clone());
    }
    let data = f
        .data
        .chunks_exact(3)
        .map(|px| luma(px[0], px[1], px[2]))
        .collect();
    Ok(f.derived(1, data))
}

/// Fixed-level threshold: strictly greater than `threshold` maps to `maxval`.
pub fn binarize(g: &Frame, cfg: &DetectionConfig) -> Result<BinaryMask> {
    g.validate()?;
    if g.channels != 1 {
        return Err(VisionError::Malformed(
            "binarize expects a single-channel frame".into(),
        ));
    }
    let data = g
        .data
        .iter()
        .map(|&v| if v > cfg.threshold { cfg.maxval } else { 0 })
        .collect();
    Ok(BinaryMask {
        width: g.width,
        height: g.height,
        maxval: cfg.maxval,
        data,
    })
}

/// Square max/min filter with truncated borders. A truncated square window
/// is still a rectangle, so the filter separates into a row pass and a
/// column pass.
fn rank_filter(m: &BinaryMask, radius: usize, take_max: bool) -> BinaryMask {
    if radius == 0 || m.data.is_empty() {
        return m.clone();
    }
    let (w, h) = (m.width, m.height);
    let pick = |a: u8, b: u8| if take_max { a.max(b) } else { a.min(b) };

    let mut rows = vec![0u8; w * h];
    for y in 0..h {
        let row = &m.data[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            rows[y * w + x] = row[lo..=hi].iter().copied().reduce(pick).unwrap();
        }
    }
    let mut out = vec![0u8; w * h];
    for x in 0..w {
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius).min(h - 1);
            out[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).reduce(pick).unwrap();
        }
    }
    BinaryMask {
        width: w,
        height: h,
        maxval: m.maxval,
        data: out,
    }
}

pub fn dilate(m: &BinaryMask, radius: usize) -> BinaryMask {
    rank_filter(m, radius, true)
}

pub fn erode(m: &BinaryMask, radius: usize) -> BinaryMask {
    rank_filter(m, radius, false)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Tight boxes around 8-connected components, ordered by `(y, x)` of the
/// top-left corner. Two-pass union-find labelling.
pub fn extract_boxes(m: &BinaryMask) -> Vec<BoundingBox> {
    let (w, h) = (m.width, m.height);
    let mut parent: Vec<usize> = (0..w * h).collect();
    for y in 0..h {
        for x in 0..w {
            if !m.is_set(x, y) {
                continue;
            }
            let here = y * w + x;
            if x > 0 && m.is_set(x - 1, y) {
                union(&mut parent, here, here - 1);
            }
            if y > 0 {
                let up = here - w;
                if m.is_set(x, y - 1) {
                    union(&mut parent, here, up);
                }
                if x > 0 && m.is_set(x - 1, y - 1) {
                    union(&mut parent, here, up - 1);
                }
                if x + 1 < w && m.is_set(x + 1, y - 1) {
                    union(&mut parent, here, up + 1);
                }
            }
        }
    }

    // root -> (min_x, min_y, max_x, max_y)
    let mut extents: std::collections::BTreeMap<usize, (usize, usize, usize, usize)> =
        Default::default();
    for y in 0..h {
        for x in 0..w {
            if !m.is_set(x, y) {
                continue;
            }
            let root = find(&mut parent, y * w + x);
            let e = extents.entry(root).or_insert((x, y, x, y));
            e.0 = e.0.min(x);
            e.1 = e.1.min(y);
            e.2 = e.2.max(x);
            e.3 = e.3.max(y);
        }
    }
    let mut boxes: Vec<BoundingBox> = extents
        .into_values()
        .map(|(x0, y0, x1, y1)| BoundingBox {
            x: x0,
            y: y0,
            w: x1 - x0 + 1,
            h: y1 - y0 + 1,
        })
        .collect();
    boxes.sort_by_key(|b| (b.y, b.x, b.h, b.w));
    boxes
}

/// Size and aspect filter applied to raw component boxes.
pub fn keep_box(b: &BoundingBox, frame_area: usize, cfg: &DetectionConfig) -> bool {
    let min_area = cfg.min_box_area_fraction * frame_area as f64;
    let aspect = b.aspect();
    let (lo, hi) = cfg.aspect_ratio_bounds;
    b.area() as f64 >= min_area && aspect >= lo && aspect <= hi
}

/// Runs the whole pipeline to determine the moving objects in `f_cur`.
pub fn detect(
    f_prev: &Frame,
    f_cur: &Frame,
    f_next: &Frame,
    cfg: &DetectionConfig,
) -> Result<Vec<BoundingBox>> {
    cfg.validate()?;
    let d1 = abs_diff(f_cur, f_prev)?;
    let d2 = abs_diff(f_next, f_cur)?;
    let da = conjunction(&d1, &d2)?;
    let dg = to_grayscale(&da)?;
    let db = binarize(&dg, cfg)?;
    let dd = dilate(&db, cfg.dilation_radius);
    let de = erode(&dd, cfg.erosion_radius);
    let area = f_cur.width * f_cur.height;
    Ok(extract_boxes(&de)
        .into_iter()
        .filter(|b| keep_box(b, area, cfg))
        .collect())
}

/// Copies the pixels under `b` into a new frame.
pub fn crop(f: &Frame, b: &BoundingBox) -> Frame {
    let mut data = Vec::with_capacity(b.area() * f.channels);
    for y in b.y..b.y + b.h {
        let start = (y * f.width + b.x) * f.channels;
        data.extend_from_slice(&f.data[start..start + b.w * f.channels]);
    }
    Frame {
        width: b.w,
        height: b.h,
        channels: f.channels,
        data,
        camera_id: f.camera_id,
        capture_time: f.capture_time,
    }
}

// ---------------------------------------------------------------------------
// Netpbm I/O (binary P5 / P6, maxval 255)

struct Tokens<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.buf.len() && self.buf[self.pos] == b'#' {
                while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.buf.len() && !self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (start < self.pos).then(|| &self.buf[start..self.pos])
    }
}

/// Parses a binary PGM (`P5`) or PPM (`P6`) image with maxval 255.
pub fn parse_pnm(bytes: &[u8]) -> std::result::Result<Frame, String> {
    let mut tok = Tokens { buf: bytes, pos: 0 };
    let channels = match tok.next() {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        other => return Err(format!("unsupported magic {:?}", other.map(String::from_utf8_lossy))),
    };
    let mut header = [0usize; 3];
    for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
        let t = tok.next().ok_or_else(|| format!("missing {name}"))?;
        *slot = std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad {name}"))?;
    }
    let [width, height, maxval] = header;
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported, expected 255"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = tok.pos + 1;
    let len = width * height * channels;
    if bytes.len() < start + len {
        return Err(format!(
            "raster truncated: need {len} bytes, have {}",
            bytes.len().saturating_sub(start)
        ));
    }
    Ok(Frame {
        width,
        height,
        channels,
        data: bytes[start..start + len].to_vec(),
        camera_id: 0,
        capture_time: 0.0,
    })
}

pub fn read_pnm(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path)?;
    parse_pnm(&bytes).map_err(|reason| VisionError::Format {
        path: path.display().to_string(),
        reason,
    })
}

pub fn encode_pnm(f: &Frame) -> Vec<u8> {
    let magic = if f.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", f.width, f.height).into_bytes();
    out.extend_from_slice(&f.data);
    out
}

pub fn write_pnm(path: &Path, f: &Frame) -> Result<()> {
    f.validate()?;
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_pnm(f))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: usize, h: usize, data: Vec<u8>) -> Frame {
        Frame::new(w, h, 1, data).unwrap()
    }

    #[test]
    fn abs_diff_identity_and_forced_values() {
        let a = Frame::filled(4, 3, 3, 200);
        let b = Frame::filled(4, 3, 3, 55);
        assert!(abs_diff(&a, &a).unwrap().data.iter().all(|&v| v == 0));
        assert!(abs_diff(&a, &b).unwrap().data.iter().all(|&v| v == 145));
        assert!(abs_diff(&b, &a).unwrap().data.iter().all(|&v| v == 145));
    }

    #[test]
    fn abs_diff_rejects_mismatch() {
        let a = Frame::filled(4, 3, 1, 0);
        let b = Frame::filled(3, 4, 1, 0);
        assert!(matches!(
            abs_diff(&a, &b),
            Err(VisionError::DimensionMismatch(..))
        ));
        let c = Frame::filled(4, 3, 3, 0);
        assert!(conjunction(&a, &c).is_err());
    }

    #[test]
    fn conjunction_cases() {
        let ones = Frame::filled(2, 2, 1, 255);
        let d2 = gray(2, 2, vec![1, 2, 3, 250]);
        assert_eq!(conjunction(&ones, &d2).unwrap().data, d2.data);
        let zeros = Frame::filled(2, 2, 1, 0);
        assert_eq!(conjunction(&zeros, &d2).unwrap().data, vec![0; 4]);
        let x = gray(1, 1, vec![0b1011_0010]);
        let y = gray(1, 1, vec![0b0111_0110]);
        assert_eq!(conjunction(&x, &y).unwrap().data, vec![0b0011_0010]);
    }

    #[test]
    fn grayscale_weights() {
        let f = Frame::new(3, 1, 3, vec![255, 255, 255, 0, 0, 0, 100, 150, 50]).unwrap();
        assert_eq!(to_grayscale(&f).unwrap().data, vec![255, 0, 124]);
        let g = gray(2, 1, vec![7, 9]);
        assert_eq!(to_grayscale(&g).unwrap(), g);
    }

    #[test]
    fn binarize_is_strict() {
        let cfg = DetectionConfig::default();
        let g = gray(3, 1, vec![25, 26, 0]);
        assert_eq!(binarize(&g, &cfg).unwrap().data, vec![0, 255, 0]);
        let once = binarize(&g, &cfg).unwrap();
        let again = binarize(&gray(3, 1, once.data.clone()), &cfg).unwrap();
        assert_eq!(once, again);
        assert!(binarize(&Frame::filled(2, 2, 3, 0), &cfg).is_err());
    }

    #[test]
    fn morphology_basics() {
        let mut m = BinaryMask::empty(5, 5);
        m.set(2, 2, true);
        assert_eq!(dilate(&m, 0), m);
        assert_eq!(erode(&m, 0), m);
        let d = dilate(&m, 1);
        assert_eq!(d.count(), 9);
        for y in 1..=3 {
            for x in 1..=3 {
                assert!(d.is_set(x, y));
            }
        }
        let full = BinaryMask::from_bools(5, 5, &[true; 25]);
        assert_eq!(erode(&full, 2), full);
        // corner pixel dilates into the truncated 2x2 window
        let mut c = BinaryMask::empty(4, 4);
        c.set(0, 0, true);
        assert_eq!(dilate(&c, 1).count(), 4);
    }

    #[test]
    fn boxes_from_blobs() {
        assert!(extract_boxes(&BinaryMask::empty(6, 6)).is_empty());
        let mut m = BinaryMask::empty(8, 8);
        for (x, y) in [(1, 1), (2, 1), (1, 2), (2, 2), (5, 4), (6, 4), (5, 5), (6, 5)] {
            m.set(x, y, true);
        }
        assert_eq!(
            extract_boxes(&m),
            vec![
                BoundingBox { x: 1, y: 1, w: 2, h: 2 },
                BoundingBox { x: 5, y: 4, w: 2, h: 2 },
            ]
        );
        // diagonal contact joins components
        let mut d = BinaryMask::empty(3, 3);
        d.set(0, 0, true);
        d.set(1, 1, true);
        d.set(2, 2, true);
        assert_eq!(extract_boxes(&d), vec![BoundingBox { x: 0, y: 0, w: 3, h: 3 }]);
    }

    #[test]
    fn static_scene_detects_nothing() {
        let f = Frame::filled(32, 32, 3, 90);
        assert!(detect(&f, &f, &f, &DetectionConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(DetectionConfig::default().validate().is_ok());
        let mut c = DetectionConfig::default();
        c.aspect_ratio_bounds = (0.5, 4.0);
        assert!(c.validate().is_err());
        let mut c = DetectionConfig::default();
        c.threshold = 0;
        assert!(c.validate().is_err());
        let mut c = DetectionConfig::default();
        c.min_box_area_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut c = DetectionConfig::default();
        c.sample_interval_s = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn pnm_round_trip_and_errors() {
        let f = Frame::new(3, 2, 3, (0..18).collect()).unwrap();
        let parsed = parse_pnm(&encode_pnm(&f)).unwrap();
        assert_eq!(parsed, f);
        let commented = b"P5\n# note\n2 1\n255\n\x01\x02".to_vec();
        assert_eq!(parse_pnm(&commented).unwrap().data, vec![1, 2]);
        assert!(parse_pnm(b"P5\n2 1\n65535\n\x00\x00\x00\x00").is_err());
        assert!(parse_pnm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(parse_pnm(b"P2\n1 1\n255\n0").is_err());
    }

    #[test]
    fn crop_extracts_region() {
        let f = gray(4, 3, (0..12).collect());
        let c = crop(&f, &BoundingBox { x: 1, y: 1, w: 2, h: 2 });
        assert_eq!(c.data, vec![5, 6, 9, 10]);
    }
}
