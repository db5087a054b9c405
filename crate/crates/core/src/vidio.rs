//! Frames, videos, PPM sequence I/O and the synthetic moving-shapes dataset.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Rec. 601 luma. Written relative to the green channel so that equal-channel
/// pixels map exactly to their channel value.
#[inline]
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    g + 0.299 * (r - g) + 0.114 * (b - g)
}

/// A single image with row-major, channel-interleaved intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T = f32> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Frame<T> {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "frames have 1 or 3 channels, got {channels}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("empty frame".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}x{} frame needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::InvalidArgument(format!(
                "intensity {v} outside [0, 1]"
            )));
        }
        Ok(Frame {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, color: &[T]) -> Result<Self> {
        let data = color
            .iter()
            .copied()
            .cycle()
            .take(width * height * color.len())
            .collect();
        Frame::new(width, height, color.len(), data)
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Pixel values as RGB triples in `f64`; gray frames are replicated.
    pub fn rgb_pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(self.channels).map(|px| {
            if px.len() == 3 {
                [px[0].as_f64(), px[1].as_f64(), px[2].as_f64()]
            } else {
                let v = px[0].as_f64();
                [v, v, v]
            }
        })
    }

    /// One channel as a contiguous plane.
    pub fn plane(&self, channel: usize) -> Vec<T> {
        self.data
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    /// Builds a frame from planar data (`channels × height × width`), clamping to `[0, 1]`.
    pub fn from_planes(width: usize, height: usize, channels: usize, planes: &[T]) -> Result<Self> {
        let n = width * height;
        if planes.len() != n * channels {
            return Err(Error::DimensionMismatch(format!(
                "planar buffer of {} values for {width}x{height}x{channels}",
                planes.len()
            )));
        }
        let mut data = vec![T::zero(); n * channels];
        for c in 0..channels {
            for p in 0..n {
                let v = planes[c * n + p];
                data[p * channels + c] = if v.is_nan() {
                    T::zero()
                } else {
                    v.max(T::zero()).min(T::one())
                };
            }
        }
        Frame::new(width, height, channels, data)
    }

    /// Gray frame replicated into three equal channels.
    pub fn to_rgb(&self) -> Frame<T> {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Frame {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Frame<U> {
        Frame {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    fn same_geometry(&self, other: &Frame<T>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

/// Ordered frame sequence sharing one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Video<T = f32> {
    frames: Vec<Frame<T>>,
    fps: f64,
}

impl<T: Scalar> Video<T> {
    pub fn new(frames: Vec<Frame<T>>, fps: f64) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("a video needs at least one frame".into()))?;
        if let Some((i, f)) = frames
            .iter()
            .enumerate()
            .find(|(_, f)| !f.same_geometry(first))
        {
            return Err(Error::DimensionMismatch(format!(
                "frame {i} is {}x{}x{}, frame 0 is {}x{}x{}",
                f.width, f.height, f.channels, first.width, first.height, first.channels
            )));
        }
        Ok(Video { frames, fps })
    }

    pub fn frames(&self) -> &[Frame<T>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels
    }

    pub fn cast<U: Scalar>(&self) -> Video<U> {
        Video {
            frames: self.frames.iter().map(Frame::cast).collect(),
            fps: self.fps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub fps: f64,
    pub frame_count: usize,
    pub frames: Vec<String>,
}

/// Accepts either a manifest file or a directory containing `manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

pub fn read_video<T: Scalar>(path: impl AsRef<Path>) -> Result<Video<T>> {
    let manifest_path = manifest_path(path.as_ref());
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    if manifest.frame_count != manifest.frames.len() {
        return Err(Error::MalformedFile {
            path: manifest_path,
            reason: format!(
                "frame_count {} but {} frame paths",
                manifest.frame_count,
                manifest.frames.len()
            ),
        });
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for rel in &manifest.frames {
        let frame: Frame<T> = read_frame(base.join(rel), manifest.channels)?;
        if frame.width != manifest.width || frame.height != manifest.height {
            return Err(Error::DimensionMismatch(format!(
                "{rel} is {}x{}, manifest says {}x{}",
                frame.width, frame.height, manifest.width, manifest.height
            )));
        }
        frames.push(frame);
    }
    Video::new(frames, manifest.fps)
}

/// Writes one `frame_%05u.ppm` per frame plus `manifest.json`; returns the manifest path.
pub fn write_video<T: Scalar>(video: &Video<T>, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut names = Vec::with_capacity(video.len());
    for (i, frame) in video.frames.iter().enumerate() {
        let name = format!("frame_{i:05}.ppm");
        write_frame(frame, out_dir.join(&name))?;
        names.push(name);
    }
    let manifest = Manifest {
        width: video.width(),
        height: video.height(),
        channels: video.channels(),
        fps: video.fps,
        frame_count: names.len(),
        frames: names,
    };
    let path = out_dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Round-half-up quantization to a byte.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Writes a frame as binary PPM (P6). Gray frames are replicated into RGB.
pub fn write_frame<T: Scalar>(frame: &Frame<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    buf.reserve(frame.pixel_count() * 3);
    for px in frame.rgb_pixels() {
        buf.extend(px.iter().map(|&v| quantize(v)));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a P6 (or P5) file into a frame with `channels` channels.
///
/// Loading an RGB file as a 1-channel frame requires equal channels.
pub fn read_frame<T: Scalar>(path: impl AsRef<Path>, channels: usize) -> Result<Frame<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: &str| Error::MalformedImage {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let (magic, width, height, maxval, offset) = parse_pnm_header(&bytes).map_err(|r| malformed(&r))?;
    if maxval != 255 {
        return Err(malformed(&format!("maxval {maxval}, expected 255")));
    }
    let file_channels = if magic == b'6' { 3 } else { 1 };
    let body = &bytes[offset..];
    let needed = width * height * file_channels;
    if body.len() < needed {
        return Err(malformed(&format!(
            "truncated pixel data: {} of {needed} bytes",
            body.len()
        )));
    }
    let body = &body[..needed];
    let scale = |b: u8| T::of(b as f64 / 255.0);
    let data: Vec<T> = match (file_channels, channels) {
        (3, 3) | (1, 1) => body.iter().map(|&b| scale(b)).collect(),
        (1, 3) => body.iter().flat_map(|&b| [scale(b); 3]).collect(),
        (3, 1) => {
            let mut out = Vec::with_capacity(width * height);
            for px in body.chunks_exact(3) {
                if px[0] != px[1] || px[1] != px[2] {
                    return Err(malformed("expected a gray image but channels differ"));
                }
                out.push(scale(px[0]));
            }
            out
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unsupported channel count {channels}"
            )))
        }
    };
    Frame::new(width, height, channels, data)
}

fn parse_pnm_header(bytes: &[u8]) -> std::result::Result<(u8, usize, usize, usize, usize), String> {
    if bytes.len() < 2 || bytes[0] != b'P' || !(bytes[1] == b'6' || bytes[1] == b'5') {
        return Err("bad magic, expected P6 or P5".into());
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err("expected a decimal header field".into());
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?;
        *field = text.parse().map_err(|_| format!("header field {text} out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("missing whitespace after maxval".into()),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    Ok((bytes[1], width, height, maxval, pos))
}

/// Converts an RGB video to a 1-channel luma video.
pub fn rgb_to_gray<T: Scalar>(video: &Video<T>) -> Result<Video<T>> {
    if video.channels() != 3 {
        return Err(Error::InvalidArgument(
            "rgb_to_gray needs a 3-channel video".into(),
        ));
    }
    let frames = video.frames.iter().map(frame_to_gray).collect();
    Video::new(frames, video.fps)
}

pub(crate) fn frame_to_gray<T: Scalar>(frame: &Frame<T>) -> Frame<T> {
    let data = frame
        .data
        .chunks_exact(3)
        .map(|px| {
            let y = luma(px[0].as_f64(), px[1].as_f64(), px[2].as_f64());
            T::of(y.clamp(0.0, 1.0))
        })
        .collect();
    Frame {
        width: frame.width,
        height: frame.height,
        channels: 1,
        data,
    }
}

/// Saturated colors the synthetic shapes are drawn from.
pub const SHAPE_COLORS: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [0, 128, 128],
    [170, 110, 40],
    [128, 0, 0],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_clips: usize,
    pub frames_per_clip: usize,
    pub width: usize,
    pub height: usize,
    pub num_shapes: usize,
    /// Distinct shape colors available to each clip (at most 12).
    pub shape_palette_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_clips: 4,
            frames_per_clip: 16,
            width: 32,
            height: 32,
            num_shapes: 3,
            shape_palette_size: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_clip < 1 {
            return Err(Error::InvalidArgument("frames_per_clip must be >= 1".into()));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidArgument(format!(
                "frame size {}x{} is below the 8x8 minimum",
                self.width, self.height
            )));
        }
        if self.num_shapes > 0 && self.shape_palette_size == 0 {
            return Err(Error::InvalidArgument(
                "shape_palette_size must be >= 1 when shapes are drawn".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum ShapeKind {
    Rect { half_w: f64, half_h: f64 },
    Disk { radius: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    kind: ShapeKind,
    color: [u8; 3],
    center: (f64, f64),
    velocity: (f64, f64),
}

impl Shape {
    fn covers(&self, x: f64, y: f64, t: f64) -> bool {
        let dx = x - (self.center.0 + self.velocity.0 * t);
        let dy = y - (self.center.1 + self.velocity.1 * t);
        match self.kind {
            ShapeKind::Rect { half_w, half_h } => dx.abs() <= half_w && dy.abs() <= half_h,
            ShapeKind::Disk { radius } => dx * dx + dy * dy <= radius * radius,
        }
    }
}

/// Generates `(color, gray)` clip pairs of solid shapes moving over a solid background.
pub fn synth_generate<T: Scalar>(config: &SynthConfig) -> Result<Vec<(Video<T>, Video<T>)>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (w, h) = (config.width as f64, config.height as f64);
    let palette_size = config.shape_palette_size.min(SHAPE_COLORS.len());
    let mut clips = Vec::with_capacity(config.num_clips);
    for _ in 0..config.num_clips {
        let background = [
            rng.gen_range(20u8..=90),
            rng.gen_range(20u8..=90),
            rng.gen_range(20u8..=90),
        ];
        let clip_colors: Vec<[u8; 3]> = if palette_size == 0 {
            Vec::new()
        } else {
            sample(&mut rng, SHAPE_COLORS.len(), palette_size)
                .into_iter()
                .map(|i| SHAPE_COLORS[i])
                .collect()
        };
        let shapes: Vec<Shape> = (0..config.num_shapes)
            .map(|_| {
                let color = clip_colors[rng.gen_range(0..clip_colors.len())];
                let kind = if rng.gen_bool(0.5) {
                    ShapeKind::Rect {
                        half_w: rng.gen_range(0.1..0.22) * w,
                        half_h: rng.gen_range(0.1..0.22) * h,
                    }
                } else {
                    ShapeKind::Disk {
                        radius: rng.gen_range(0.1..0.2) * w.min(h),
                    }
                };
                Shape {
                    kind,
                    color,
                    center: (rng.gen_range(0.2..0.8) * w, rng.gen_range(0.2..0.8) * h),
                    velocity: (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)),
                }
            })
            .collect();

        let mut frames = Vec::with_capacity(config.frames_per_clip);
        for f in 0..config.frames_per_clip {
            let mut data = Vec::with_capacity(config.width * config.height * 3);
            for y in 0..config.height {
                for x in 0..config.width {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let color = shapes
                        .iter()
                        .rev()
                        .find(|s| s.covers(px, py, f as f64))
                        .map_or(background, |s| s.color);
                    data.extend(color.iter().map(|&c| T::of(c as f64 / 255.0)));
                }
            }
            frames.push(Frame::new(config.width, config.height, 3, data)?);
        }
        let color = Video::new(frames, 24.0)?;
        let gray = rgb_to_gray(&color)?;
        clips.push((color, gray));
    }
    Ok(clips)
}
