//! Frame-level media access.
//!
//! Frames travel through the pipeline as [`FramePack`]s, a raw container with
//! a fixed little-endian header:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FPK1"
//! 4       4     width (u32)
//! 8       4     height (u32)
//! 12      4     frame_count (u32)
//! 16      4     fps_num (u32)
//! 20      4     fps_den (u32)
//! 24      1     pixel_format (0 = RGB8 interleaved, 1 = GRAY8)
//! 25      3     zero
//! 28      ...   frame payloads, row-major from top-left, back to back
//! ```
//!
//! Anything else is decoded by an external tool driven by a command template
//! (see [`decode_external`]). Still images in common formats are decoded in
//! process.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ErrorClass;

pub const MAGIC: &[u8; 4] = b"FPK1";
pub const HEADER_LEN: usize = 28;

/// Default external decoder: re-times to `{fps}` and emits YUV4MPEG2.
pub const DEFAULT_DECODE_TEMPLATE: &str =
    "ffmpeg -v error -nostdin -y -i {input} -vf fps={fps} -pix_fmt yuv444p -f yuv4mpegpipe {output}";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"FPK1\"")]
    BadMagic { found: [u8; 4] },
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("trailing data: expected {expected} payload bytes, found {actual}")]
    TrailingBytes { expected: u64, actual: u64 },
    #[error("unknown pixel format code {0}")]
    UnknownPixelFormat(u8),
    #[error("invalid frame pack: {0}")]
    InvalidPack(String),
    #[error("decode template: {0}")]
    Template(String),
    #[error("failed to launch decoder {program:?}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("decoder exited with {status}: {stderr}")]
    ToolFailed { status: String, stderr: String },
    #[error("unsupported decoder output: {0}")]
    UnsupportedOutput(String),
    #[error("decoder produced {num}/{den} fps, expected {target}")]
    FpsMismatch { num: u32, den: u32, target: u32 },
    #[error("image decode failed for {path}: {message}")]
    Image { path: String, message: String },
}

impl IngestError {
    pub fn class(&self) -> ErrorClass {
        match self {
            IngestError::Io { .. } | IngestError::Spawn { .. } | IngestError::ToolFailed { .. } => ErrorClass::Io,
            _ => ErrorClass::Validation,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.display().to_string(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PixelFormat {
    Rgb8,
    Gray8,
}

impl PixelFormat {
    pub fn channels(self) -> usize {
        match self {
            PixelFormat::Rgb8 => 3,
            PixelFormat::Gray8 => 1,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            PixelFormat::Rgb8 => 0,
            PixelFormat::Gray8 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, IngestError> {
        match code {
            0 => Ok(PixelFormat::Rgb8),
            1 => Ok(PixelFormat::Gray8),
            other => Err(IngestError::UnknownPixelFormat(other)),
        }
    }
}

/// Decoded frames plus their geometry and timing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FramePack {
    pub width: u32,
    pub height: u32,
    pub fps_num: u32,
    pub fps_den: u32,
    pub pixel_format: PixelFormat,
    data: Vec<u8>,
}

impl FramePack {
    /// Wraps a payload; its length must be a positive multiple of the frame size.
    pub fn new(width: u32, height: u32, fps_num: u32, fps_den: u32, pixel_format: PixelFormat, data: Vec<u8>) -> Result<Self, IngestError> {
        if width == 0 || height == 0 {
            return Err(IngestError::InvalidPack("width and height must be >= 1".into()));
        }
        if fps_den == 0 {
            return Err(IngestError::InvalidPack("fps_den must be > 0".into()));
        }
        let frame_len = width as usize * height as usize * pixel_format.channels();
        if data.is_empty() || data.len() % frame_len != 0 {
            return Err(IngestError::InvalidPack(format!(
                "payload of {} bytes is not a positive multiple of the {frame_len}-byte frame",
                data.len()
            )));
        }
        if data.len() / frame_len > u32::MAX as usize {
            return Err(IngestError::InvalidPack("more than u32::MAX frames".into()));
        }
        Ok(FramePack { width, height, fps_num, fps_den, pixel_format, data })
    }

    pub fn from_frames(width: u32, height: u32, fps_num: u32, fps_den: u32, pixel_format: PixelFormat, frames: &[Vec<u8>]) -> Result<Self, IngestError> {
        FramePack::new(width, height, fps_num, fps_den, pixel_format, frames.concat())
    }

    pub fn frame_len(&self) -> usize {
        self.width as usize * self.height as usize * self.pixel_format.channels()
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn frame_count(&self) -> usize {
        self.data.len() / self.frame_len()
    }

    pub fn fps(&self) -> f64 {
        f64::from(self.fps_num) / f64::from(self.fps_den)
    }

    pub fn frame(&self, index: usize) -> &[u8] {
        let n = self.frame_len();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks_exact(self.frame_len())
    }

    pub fn payload(&self) -> &[u8] {
        &self.data
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.data.len()
    }

    /// Frames `[start, end)` as a new pack with the same timing.
    pub fn slice(&self, start: usize, end: usize) -> Result<FramePack, IngestError> {
        if start >= end || end > self.frame_count() {
            return Err(IngestError::InvalidPack(format!(
                "frame range [{start}, {end}) outside 0..{}",
                self.frame_count()
            )));
        }
        let n = self.frame_len();
        FramePack::new(self.width, self.height, self.fps_num, self.fps_den, self.pixel_format, self.data[start * n..end * n].to_vec())
    }

    /// A single-frame pack holding frame `index`.
    pub fn still(&self, index: usize) -> Result<FramePack, IngestError> {
        self.slice(index, index + 1)
    }

    /// Every frame converted to GRAY8; GRAY8 input is returned as is.
    pub fn to_gray(&self) -> FramePack {
        match self.pixel_format {
            PixelFormat::Gray8 => self.clone(),
            PixelFormat::Rgb8 => {
                let data = self.frames().flat_map(to_grayscale).collect();
                FramePack { pixel_format: PixelFormat::Gray8, data, ..*self }
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        for v in [self.width, self.height, self.frame_count() as u32, self.fps_num, self.fps_den] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.pixel_format.code());
        out.extend_from_slice(&[0, 0, 0]);
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<FramePack, IngestError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            let mut found = [0u8; 4];
            let n = bytes.len().min(4);
            found[..n].copy_from_slice(&bytes[..n]);
            return Err(IngestError::BadMagic { found });
        }
        if bytes.len() < HEADER_LEN {
            return Err(IngestError::Truncated { expected: HEADER_LEN as u64, actual: bytes.len() as u64 });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
        let (width, height, frame_count, fps_num, fps_den) = (word(0), word(1), word(2), word(3), word(4));
        let pixel_format = PixelFormat::from_code(bytes[24])?;
        if fps_den == 0 {
            return Err(IngestError::InvalidPack("fps_den must be > 0".into()));
        }
        if width == 0 || height == 0 || frame_count == 0 {
            return Err(IngestError::InvalidPack("width, height and frame_count must be >= 1".into()));
        }
        let expected = u64::from(width) * u64::from(height) * u64::from(frame_count) * pixel_format.channels() as u64;
        let actual = (bytes.len() - HEADER_LEN) as u64;
        if actual < expected {
            return Err(IngestError::Truncated { expected, actual });
        }
        if actual > expected {
            return Err(IngestError::TrailingBytes { expected, actual });
        }
        FramePack::new(width, height, fps_num, fps_den, pixel_format, bytes[HEADER_LEN..].to_vec())
    }
}

pub fn read_framepack(path: &Path) -> Result<FramePack, IngestError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    FramePack::decode(&bytes)
}

/// Writes `pack` to `path`, returning the number of bytes written.
pub fn write_framepack(pack: &FramePack, path: &Path) -> Result<usize, IngestError> {
    let bytes = pack.encode();
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))?;
    Ok(bytes.len())
}

/// Takes every `interval`-th frame starting at 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSpec {
    interval: u32,
}

impl SamplingSpec {
    pub fn new(interval: u32) -> Option<Self> {
        (interval >= 1).then_some(SamplingSpec { interval })
    }

    pub fn interval(&self) -> u32 {
        self.interval
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Keeps frames `0, k, 2k, ...` and divides the frame rate by `k`.
pub fn sample_frames(pack: &FramePack, spec: SamplingSpec) -> FramePack {
    let k = spec.interval as usize;
    if k == 1 {
        return pack.clone();
    }
    let data: Vec<u8> = pack.frames().step_by(k).flatten().copied().collect();
    let num = u64::from(pack.fps_num);
    let den = u64::from(pack.fps_den) * k as u64;
    let g = gcd(num, den).max(1);
    let (num, den) = (num / g, den / g);
    // a denominator that no longer fits u32 only happens for absurd intervals
    let (num, den) = if den > u64::from(u32::MAX) { (0, 1) } else { (num as u32, den as u32) };
    FramePack { fps_num: num, fps_den: den, data, ..*pack }
}

/// BT.601 luma of one RGB8 frame, rounded to the nearest integer.
pub fn to_grayscale(rgb: &[u8]) -> Vec<u8> {
    rgb.chunks_exact(3)
        .map(|p| {
            let y = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect()
}

/// Runs an external decoder and loads its output at `target_fps`.
///
/// The template is split like a shell command line and must contain the
/// `{input}`, `{output}` and `{fps}` placeholders. No shell is involved;
/// placeholders are substituted per argument. The tool may write either a
/// FramePack or a YUV4MPEG2 stream (8-bit 4:4:4, 4:2:0 or mono) to `{output}`.
pub fn decode_external(video_path: &Path, command_template: &str, target_fps: u32) -> Result<FramePack, IngestError> {
    for placeholder in ["{input}", "{output}", "{fps}"] {
        if !command_template.contains(placeholder) {
            return Err(IngestError::Template(format!("missing placeholder {placeholder}")));
        }
    }
    if target_fps == 0 {
        return Err(IngestError::Template("target fps must be > 0".into()));
    }
    let args = shlex::split(command_template).ok_or_else(|| IngestError::Template("unbalanced quotes".into()))?;
    if args.is_empty() {
        return Err(IngestError::Template("empty command".into()));
    }
    let workdir = tempfile::tempdir().map_err(io_err(Path::new("<tempdir>")))?;
    let output = workdir.path().join("decoded.out");
    let fps = target_fps.to_string();
    let input = video_path.to_string_lossy();
    let out_str = output.to_string_lossy();
    let argv: Vec<String> = args
        .iter()
        .map(|a| a.replace("{input}", &input).replace("{output}", &out_str).replace("{fps}", &fps))
        .collect();
    log::debug!("decoding {} with {:?}", video_path.display(), argv);
    let result = Command::new(&argv[0])
        .args(&argv[1..])
        .stdin(std::process::Stdio::null())
        .output()
        .map_err(|source| IngestError::Spawn { program: argv[0].clone(), source })?;
    if !result.status.success() {
        return Err(IngestError::ToolFailed {
            status: result.status.to_string(),
            stderr: String::from_utf8_lossy(&result.stderr).trim().to_string(),
        });
    }
    let bytes = std::fs::read(&output).map_err(io_err(&output))?;
    let pack = if bytes.starts_with(MAGIC) {
        FramePack::decode(&bytes)?
    } else if bytes.starts_with(b"YUV4MPEG2") {
        decode_y4m(&bytes)?
    } else {
        return Err(IngestError::UnsupportedOutput("neither FPK1 nor YUV4MPEG2".into()));
    };
    normalize_fps(pack, target_fps)
}

fn normalize_fps(mut pack: FramePack, target: u32) -> Result<FramePack, IngestError> {
    let (num, den) = (u64::from(pack.fps_num), u64::from(pack.fps_den));
    if num != u64::from(target) * den {
        return Err(IngestError::FpsMismatch { num: pack.fps_num, den: pack.fps_den, target });
    }
    pack.fps_num = target;
    pack.fps_den = 1;
    Ok(pack)
}

/// Limited-range BT.601 YCbCr to RGB.
fn ycbcr_to_rgb(y: u8, cb: u8, cr: u8) -> [u8; 3] {
    let y = 1.164 * (f64::from(y) - 16.0);
    let cb = f64::from(cb) - 128.0;
    let cr = f64::from(cr) - 128.0;
    let c = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    [c(y + 1.596 * cr), c(y - 0.392 * cb - 0.813 * cr), c(y + 2.017 * cb)]
}

fn decode_y4m(bytes: &[u8]) -> Result<FramePack, IngestError> {
    use y4m::Colorspace;
    let bad = |e: y4m::Error| IngestError::UnsupportedOutput(format!("y4m: {e:?}"));
    let mut dec = y4m::Decoder::new(bytes).map_err(bad)?;
    let (w, h) = (dec.get_width(), dec.get_height());
    let rate = dec.get_framerate();
    let cs = dec.get_colorspace();
    let subsampled = match cs {
        Colorspace::C444 => false,
        Colorspace::C420 | Colorspace::C420jpeg | Colorspace::C420paldv | Colorspace::C420mpeg2 => true,
        Colorspace::Cmono => false,
        other => return Err(IngestError::UnsupportedOutput(format!("y4m colorspace {other:?}"))),
    };
    let mut data = Vec::new();
    loop {
        let frame = match dec.read_frame() {
            Ok(f) => f,
            Err(y4m::Error::EOF) => break,
            Err(e) => return Err(bad(e)),
        };
        let yp = frame.get_y_plane();
        let (up, vp) = (frame.get_u_plane(), frame.get_v_plane());
        let cw = if subsampled { w.div_ceil(2) } else { w };
        for row in 0..h {
            for col in 0..w {
                let luma = yp[row * w + col];
                let rgb = if matches!(cs, Colorspace::Cmono) {
                    ycbcr_to_rgb(luma, 128, 128)
                } else if subsampled {
                    let ci = (row / 2) * cw + col / 2;
                    ycbcr_to_rgb(luma, up[ci], vp[ci])
                } else {
                    ycbcr_to_rgb(luma, up[row * w + col], vp[row * w + col])
                };
                data.extend_from_slice(&rgb);
            }
        }
    }
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| IngestError::UnsupportedOutput("y4m dimension overflow".into()));
    FramePack::new(to_u32(w)?, to_u32(h)?, to_u32(rate.num)?, to_u32(rate.den)?, PixelFormat::Rgb8, data)
}

/// Decodes a still image (PNG/JPEG) into a single-frame RGB8 pack.
pub fn decode_image(path: &Path) -> Result<FramePack, IngestError> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader = image::ImageReader::new(BufReader::new(file))
        .with_guessed_format()
        .map_err(io_err(path))?;
    let img = reader.decode().map_err(|e| IngestError::Image { path: path.display().to_string(), message: e.to_string() })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    FramePack::new(w, h, 0, 1, PixelFormat::Rgb8, rgb.into_raw())
}

/// Loads any supported media file: FramePacks directly, still images in
/// process, everything else through the external decoder.
pub fn load_media(path: &Path, decode_template: &str, target_fps: u32) -> Result<FramePack, IngestError> {
    let mut head = [0u8; 4];
    let n = File::open(path).and_then(|mut f| f.read(&mut head)).map_err(io_err(path))?;
    if n == 4 && &head == MAGIC {
        return read_framepack(path);
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
        return decode_image(path);
    }
    decode_external(path, decode_template, target_fps)
}
