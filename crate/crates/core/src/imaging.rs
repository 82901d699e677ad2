//! Frame preprocessing: grayscale conversion, area-average downsampling and
//! flattening into the fixed-length vectors the classifiers consume.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Working resolution. `WORK_WIDTH * WORK_HEIGHT == IMAGE_LEN`.
pub const WORK_WIDTH: usize = 64;
pub const WORK_HEIGHT: usize = 32;
pub const IMAGE_LEN: usize = WORK_WIDTH * WORK_HEIGHT;

/// 8-bit frame, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawFrame {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl RawFrame {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("frame size {width}x{height} is empty")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("unsupported channel count {channels}")));
        }
        let expected = width * height * channels;
        if pixels.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "frame pixel count",
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn gray(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, pixels)
    }

    /// Single-channel frame filled with `value`.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::gray(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    /// Gray value at (x, y). Panics on a colour frame.
    pub fn at(&self, x: usize, y: usize) -> u8 {
        assert_eq!(self.channels, 1, "at() requires a single-channel frame");
        self.pixels[y * self.width + x]
    }
}

/// Normalised frame of exactly [`IMAGE_LEN`] values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> ImageVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.len() != IMAGE_LEN {
            return Err(Error::DimensionMismatch {
                what: "image vector length",
                expected: IMAGE_LEN,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(Error::invalid(format!(
                "image value {} at index {i} outside [0, 1]",
                values[i]
            )));
        }
        Ok(Self { values })
    }

    pub fn constant(value: T) -> Result<Self> {
        Self::new(vec![value; IMAGE_LEN])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Luma conversion with weights 0.299/0.587/0.114, rounded half up.
/// Single-channel frames are returned unchanged.
pub fn to_grayscale(frame: &RawFrame) -> RawFrame {
    if frame.channels == 1 {
        return frame.clone();
    }
    let pixels = frame
        .pixels
        .chunks_exact(3)
        .map(|rgb| {
            let weighted = 299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32;
            ((weighted + 500) / 1000) as u8
        })
        .collect();
    RawFrame {
        width: frame.width,
        height: frame.height,
        channels: 1,
        pixels,
    }
}

/// Overlap weights between source cells and output cells along one axis.
///
/// All lengths are scaled by `out_len` so the source interval of output cell
/// `o`, `[o*src/out, (o+1)*src/out)`, becomes the integer range
/// `[o*src, (o+1)*src)`. The weights of each output cell sum to `src_len`.
fn axis_weights(src_len: usize, out_len: usize) -> Vec<Vec<(usize, u64)>> {
    (0..out_len)
        .map(|o| {
            let lo = o * src_len;
            let hi = (o + 1) * src_len;
            let first = lo / out_len;
            let last = (hi - 1) / out_len;
            (first..=last)
                .filter_map(|s| {
                    let s_lo = s * out_len;
                    let s_hi = s_lo + out_len;
                    let w = hi.min(s_hi).saturating_sub(lo.max(s_lo));
                    (w > 0).then_some((s, w as u64))
                })
                .collect()
        })
        .collect()
}

/// Area-average resampling of a grayscale frame with fractional coverage
/// weighting. Means are rounded half up; the arithmetic is exact.
pub fn resize_box(frame: &RawFrame, out_w: usize, out_h: usize) -> Result<RawFrame> {
    if frame.channels != 1 {
        return Err(Error::invalid("resize_box expects a single-channel frame"));
    }
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!("output size {out_w}x{out_h} is empty")));
    }
    let (w, h) = (frame.width, frame.height);
    let wx = axis_weights(w, out_w);
    let wy = axis_weights(h, out_h);

    // Horizontal pass: rows of the source, columns of the output.
    let mut horiz = vec![0u64; h * out_w];
    for y in 0..h {
        let row = &frame.pixels[y * w..(y + 1) * w];
        for (x, taps) in wx.iter().enumerate() {
            horiz[y * out_w + x] = taps.iter().map(|&(s, wt)| wt * row[s] as u64).sum();
        }
    }

    let denom = (w as u64) * (h as u64);
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for taps in &wy {
        for x in 0..out_w {
            let num: u64 = taps.iter().map(|&(s, wt)| wt * horiz[s * out_w + x]).sum();
            pixels.push(((2 * num + denom) / (2 * denom)) as u8);
        }
    }
    RawFrame::gray(out_w, out_h, pixels)
}

/// Row-major flatten of a 64x32 gray frame, scaled into `[0, 1]`.
pub fn flatten_normalize<T: Scalar>(frame: &RawFrame) -> Result<ImageVector<T>> {
    if frame.channels != 1 || frame.width != WORK_WIDTH || frame.height != WORK_HEIGHT {
        return Err(Error::invalid(format!(
            "expected a {WORK_WIDTH}x{WORK_HEIGHT} gray frame, got {}x{}x{}",
            frame.width, frame.height, frame.channels
        )));
    }
    let full = T::from_count(255);
    let values = frame
        .pixels
        .iter()
        .map(|&p| T::from_count(p as usize) / full)
        .collect();
    Ok(ImageVector { values })
}

/// Grayscale, downsample to the working resolution, flatten and normalise.
pub fn preprocess<T: Scalar>(frame: &RawFrame) -> Result<ImageVector<T>> {
    let gray = to_grayscale(frame);
    let small = resize_box(&gray, WORK_WIDTH, WORK_HEIGHT)?;
    flatten_normalize(&small)
}

const FRAME_EXTENSIONS: [&str; 4] = ["pgm", "png", "jpg", "jpeg"];

/// Image files in `dir`, sorted by file name. Position in the list is the frame index.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_frame = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false);
        if is_frame && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(paths)
}

/// Decodes a PGM (binary P5), PNG or JPEG file.
pub fn read_frame(path: &Path) -> Result<RawFrame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        return decode_pgm(&bytes).map_err(|reason| Error::Decode {
            path: path.to_path_buf(),
            reason,
        });
    }
    let img = image::load_from_memory(&bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    RawFrame::new(w as usize, h as usize, 3, rgb.into_raw())
}

/// Reads every frame of a directory, failing with the full list of
/// undecodable files if any.
pub fn read_frame_dir(dir: &Path) -> Result<Vec<RawFrame>> {
    let paths = list_frames(dir)?;
    let mut frames = Vec::with_capacity(paths.len());
    let mut bad = Vec::new();
    for path in &paths {
        match read_frame(path) {
            Ok(f) => frames.push(f),
            Err(e) => bad.push(e.to_string()),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Decode {
            path: dir.to_path_buf(),
            reason: bad.join("; "),
        });
    }
    Ok(frames)
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<RawFrame, String> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated PGM header".into()),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad PGM header field at byte {start}"))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported PGM maxval {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| format!("PGM raster truncated: need {n} bytes after offset {pos}"))?;
    let pixels = if maxval == 255 {
        raster.to_vec()
    } else {
        raster
            .iter()
            .map(|&p| ((p as usize * 255 + maxval / 2) / maxval).min(255) as u8)
            .collect()
    };
    RawFrame::gray(width, height, pixels).map_err(|e| e.to_string())
}

/// Writes a binary PGM. Colour frames are converted to gray first.
pub fn write_pgm(path: &Path, frame: &RawFrame) -> Result<()> {
    let gray = to_grayscale(frame);
    let mut out = Vec::with_capacity(gray.pixels.len() + 20);
    write!(out, "P5\n{} {}\n255\n", gray.width, gray.height).expect("write to Vec");
    out.extend_from_slice(&gray.pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
