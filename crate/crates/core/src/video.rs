//! Slideshow video assembly: slow pan/zoom over each scene image, captions
//! burned into a band at the bottom, crossfades between segments.
//!
//! The encoder is an external `ffmpeg` process driven by a generated filter
//! script. Without an encoder the renderer can fall back to a zip archive of
//! keyframes (one per second of each segment, motion applied) plus the
//! manifest.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Stdio;

use image::{imageops, Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::gateway::placard;
use crate::storyboard::{Storyboard, SCENE_COUNT};
use crate::store::{BlobRef, Store, StoreError};

pub const MANIFEST_VERSION: u32 = 1;
pub const VIDEO_MEDIA_TYPE: &str = "video/mp4";
pub const ARCHIVE_MEDIA_TYPE: &str = "application/zip";

#[derive(Debug, thiserror::Error)]
pub enum VideoError {
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("t = {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("no encoder found and fallback is disabled")]
    EncoderMissing,
    #[error("encoder exited with {status}: {stderr}")]
    EncoderFailed { status: String, stderr: String },
    #[error("image processing: {0}")]
    Image(String),
    #[error("archive: {0}")]
    Archive(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("video I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Axis-aligned rectangle in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub const FULL: Rect = Rect {
        x: 0.0,
        y: 0.0,
        w: 1.0,
        h: 1.0,
    };

    /// Centered rectangle covering `fraction` of each side.
    pub fn centered(fraction: f64) -> Rect {
        let m = (1.0 - fraction) / 2.0;
        Rect {
            x: m,
            y: m,
            w: fraction,
            h: fraction,
        }
    }

    pub fn is_within_unit_square(&self) -> bool {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        finite
            && self.x >= 0.0
            && self.y >= 0.0
            && self.w > 0.0
            && self.h > 0.0
            && self.x + self.w <= 1.0 + 1e-12
            && self.y + self.h <= 1.0 + 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub start_rect: Rect,
    pub end_rect: Rect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    Cut,
    #[default]
    Crossfade,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSegment {
    pub scene_index: u8,
    pub image: BlobRef,
    pub caption: String,
    pub duration_ms: u32,
    pub motion: Motion,
    pub transition_out: Transition,
    pub transition_ms: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub version: u32,
    pub segments: Vec<VideoSegment>,
    pub fps: u32,
    /// (width, height) in pixels.
    pub resolution: (u32, u32),
    pub total_duration_ms: u64,
}

impl VideoManifest {
    pub fn validate(&self) -> Result<(), VideoError> {
        let bad = |m: String| Err(VideoError::InvalidManifest(m));
        if self.segments.len() != SCENE_COUNT {
            return bad(format!("{} segments, expected {SCENE_COUNT}", self.segments.len()));
        }
        if self.fps == 0 {
            return bad("fps must be positive".into());
        }
        let (w, h) = self.resolution;
        if w < 16 || h < 16 || w % 2 == 1 || h % 2 == 1 {
            return bad(format!("resolution {w}x{h} must be even and at least 16x16"));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.scene_index as usize != i + 1 {
                return bad(format!("segment {} has scene index {}", i + 1, s.scene_index));
            }
            if s.duration_ms == 0 {
                return bad(format!("segment {} has zero duration", s.scene_index));
            }
            if s.transition_ms >= s.duration_ms {
                return bad(format!(
                    "segment {} transition {} ms is not shorter than its duration",
                    s.scene_index, s.transition_ms
                ));
            }
            if !s.motion.start_rect.is_within_unit_square() || !s.motion.end_rect.is_within_unit_square() {
                return bad(format!("segment {} motion leaves the unit square", s.scene_index));
            }
        }
        let sum: u64 = self.segments.iter().map(|s| s.duration_ms as u64).sum();
        if sum != self.total_duration_ms {
            return bad(format!("total {} ms but segments sum to {sum} ms", self.total_duration_ms));
        }
        Ok(())
    }
}

/// Timing and look of the slideshow. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub segment_ms: u32,
    /// Per-scene durations overriding `segment_ms`; must list all four.
    pub scene_ms: Option<Vec<u32>>,
    pub transition: Transition,
    pub transition_ms: u32,
    pub fps: u32,
    pub width: u32,
    pub height: u32,
    pub start_rect: Rect,
    pub end_rect: Rect,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            segment_ms: 5_000,
            scene_ms: None,
            transition: Transition::Crossfade,
            transition_ms: 500,
            fps: 30,
            width: 640,
            height: 360,
            start_rect: Rect::FULL,
            end_rect: Rect::centered(0.85),
        }
    }
}

/// Lays out one segment per scene. The last segment never transitions out.
pub fn build_manifest(board: &Storyboard, timing: &TimingConfig) -> Result<VideoManifest, VideoError> {
    if let Some(ms) = &timing.scene_ms {
        if ms.len() != board.scenes.len() {
            return Err(VideoError::InvalidManifest(format!(
                "{} scene durations for {} scenes",
                ms.len(),
                board.scenes.len()
            )));
        }
    }
    let last = board.scenes.len().saturating_sub(1);
    let mut segments = Vec::with_capacity(board.scenes.len());
    for (i, scene) in board.scenes.iter().enumerate() {
        let image = scene.image.clone().ok_or_else(|| {
            VideoError::Precondition(format!("scene {} has no image", scene.index))
        })?;
        let (transition_out, transition_ms) = match (i == last, timing.transition) {
            (true, _) | (false, Transition::Cut) => (Transition::Cut, 0),
            (false, Transition::Crossfade) => (Transition::Crossfade, timing.transition_ms),
        };
        segments.push(VideoSegment {
            scene_index: scene.index,
            image,
            caption: scene.description.clone(),
            duration_ms: timing
                .scene_ms
                .as_ref()
                .map_or(timing.segment_ms, |ms| ms[i]),
            motion: Motion {
                start_rect: timing.start_rect,
                end_rect: timing.end_rect,
            },
            transition_out,
            transition_ms,
        });
    }
    let manifest = VideoManifest {
        version: MANIFEST_VERSION,
        total_duration_ms: segments.iter().map(|s| s.duration_ms as u64).sum(),
        segments,
        fps: timing.fps,
        resolution: (timing.width, timing.height),
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Crop rectangle at normalized time `t`: `(1 - t) * start + t * end`.
pub fn interpolate_motion(segment: &VideoSegment, t: f64) -> Result<Rect, VideoError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(VideoError::OutOfRange(t));
    }
    let (s, e) = (segment.motion.start_rect, segment.motion.end_rect);
    let lerp = |a: f64, b: f64| (1.0 - t) * a + t * b;
    Ok(Rect {
        x: lerp(s.x, e.x),
        y: lerp(s.y, e.y),
        w: lerp(s.w, e.w),
        h: lerp(s.h, e.h),
    })
}

/// How to find and drive the external encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Explicit encoder path. Otherwise `ANALOGY_FFMPEG`, then `ffmpeg` on PATH.
    pub program: Option<PathBuf>,
    /// Output codec arguments.
    pub args: Vec<String>,
    /// Emit a keyframe archive when no encoder is available.
    pub fallback: bool,
    /// Ignore any installed encoder and always use the fallback.
    pub force_fallback: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            program: None,
            args: [
                "-c:v", "libx264", "-preset", "ultrafast", "-profile:v", "baseline", "-pix_fmt",
                "yuv420p", "-movflags", "+faststart",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            fallback: true,
            force_fallback: false,
        }
    }
}

/// Looks `name` up on the executable search path.
pub fn find_on_path(name: &str) -> Option<PathBuf> {
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|dir| dir.join(name))
        .find(|p| p.is_file())
}

pub fn discover_encoder(cfg: &EncoderConfig) -> Option<PathBuf> {
    if cfg.force_fallback {
        return None;
    }
    cfg.program
        .clone()
        .filter(|p| p.is_file())
        .or_else(|| {
            std::env::var_os("ANALOGY_FFMPEG")
                .map(PathBuf::from)
                .filter(|p| p.is_file())
        })
        .or_else(|| find_on_path("ffmpeg"))
}

fn frames(ms: u64, fps: u32) -> u64 {
    (ms * fps as u64).div_ceil(1000)
}

fn secs(ms: u64) -> String {
    format!("{:.3}", ms as f64 / 1000.0)
}

/// The filtergraph for `manifest`. Inputs come in pairs of single frames:
/// scene image `2i`, caption overlay `2i+1`. Zoompan expands each image to
/// its segment duration plus the outgoing crossfade, so the chained result lasts exactly the sum of
/// segment durations.
pub fn filter_script(manifest: &VideoManifest) -> String {
    let (w, h) = manifest.resolution;
    let fps = manifest.fps;
    let mut lines = Vec::new();
    for (i, s) in manifest.segments.iter().enumerate() {
        let n1 = (frames(s.duration_ms as u64, fps).max(2) - 1) as f64;
        let (a, b) = (s.motion.start_rect, s.motion.end_rect);
        let t = format!("min(on/{n1},1)");
        let lerp = |p: f64, q: f64| format!("((1-{t})*{p}+{t}*{q})");
        lines.push(format!(
            "[{img}:v]scale={w}:{h}:force_original_aspect_ratio=decrease,pad={w}:{h}:(ow-iw)/2:(oh-ih)/2:color=black,setsar=1,\
zoompan=z='1/{zw}':x='iw*{zx}':y='ih*{zy}':d={held}:s={w}x{h}:fps={fps}[z{i}];\
[z{i}][{cap}:v]overlay=0:0:eof_action=repeat,format=yuv420p[v{i}];",
            img = 2 * i,
            cap = 2 * i + 1,
            held = frames(held_ms(s), fps),
            zw = lerp(a.w, b.w),
            zx = lerp(a.x, b.x),
            zy = lerp(a.y, b.y),
        ));
    }
    let mut cur = "v0".to_string();
    let mut len_ms = held_ms(&manifest.segments[0]);
    for (i, s) in manifest.segments.iter().enumerate().skip(1) {
        let prev = &manifest.segments[i - 1];
        let out = format!("x{i}");
        match prev.transition_out {
            Transition::Crossfade if prev.transition_ms > 0 => {
                let offset = len_ms - prev.transition_ms as u64;
                lines.push(format!(
                    "[{cur}][v{i}]xfade=transition=fade:duration={}:offset={}[{out}];",
                    secs(prev.transition_ms as u64),
                    secs(offset)
                ));
                len_ms = offset + held_ms(s);
            }
            _ => {
                lines.push(format!("[{cur}][v{i}]concat=n=2:v=1:a=0[{out}];"));
                len_ms += held_ms(s);
            }
        }
        cur = out;
    }
    lines.push(format!("[{cur}]null[out]"));
    lines.join("\n")
}

/// Milliseconds an input is held: its duration plus any outgoing crossfade.
fn held_ms(s: &VideoSegment) -> u64 {
    match s.transition_out {
        Transition::Crossfade => s.duration_ms as u64 + s.transition_ms as u64,
        Transition::Cut => s.duration_ms as u64,
    }
}

/// Transparent frame with the caption in a dark band at the bottom.
pub fn caption_overlay(caption: &str, width: u32, height: u32) -> RgbaImage {
    let mut img = RgbaImage::from_pixel(width, height, Rgba([0, 0, 0, 0]));
    let scale = (height / 360).max(1) * 2;
    let line_h = 8 * scale + scale * 2;
    let margin = width / 20;
    let per_line = ((width - 2 * margin) / (8 * scale)).max(1) as usize;
    let max_lines = ((height / 3).saturating_sub(2 * scale * 4) / line_h).max(1) as usize;
    let mut lines = placard::wrap(caption, per_line);
    lines.truncate(max_lines);
    if lines.is_empty() {
        return img;
    }
    let band_h = lines.len() as u32 * line_h + 4 * scale * 2;
    let band_top = height - band_h;
    for y in band_top..height {
        for x in 0..width {
            img.put_pixel(x, y, Rgba([0, 0, 0, 190]));
        }
    }
    placard::draw_text(
        &mut img,
        &lines.join(" "),
        margin,
        band_top + 4 * scale,
        width - 2 * margin,
        scale,
        Rgba([255, 255, 255, 255]),
    );
    img
}

/// Scales `img` to fit `width`x`height` without distortion, padding with black.
fn fit_canvas(img: &RgbaImage, width: u32, height: u32) -> RgbaImage {
    let (iw, ih) = img.dimensions();
    let k = (width as f64 / iw as f64).min(height as f64 / ih as f64);
    let (nw, nh) = (((iw as f64 * k).round() as u32).max(1), ((ih as f64 * k).round() as u32).max(1));
    let scaled = imageops::resize(img, nw, nh, imageops::FilterType::Triangle);
    let mut canvas = RgbaImage::from_pixel(width, height, Rgba([0, 0, 0, 255]));
    imageops::overlay(&mut canvas, &scaled, ((width - nw) / 2) as i64, ((height - nh) / 2) as i64);
    canvas
}

fn crop(canvas: &RgbaImage, r: Rect) -> RgbaImage {
    let (w, h) = canvas.dimensions();
    let x = (r.x * w as f64).round() as u32;
    let y = (r.y * h as f64).round() as u32;
    let cw = ((r.w * w as f64).round() as u32).clamp(1, w - x.min(w - 1));
    let ch = ((r.h * h as f64).round() as u32).clamp(1, h - y.min(h - 1));
    let view = imageops::crop_imm(canvas, x, y, cw, ch).to_image();
    imageops::resize(&view, w, h, imageops::FilterType::Triangle)
}

fn decode(bytes: &[u8]) -> Result<RgbaImage, VideoError> {
    image::load_from_memory(bytes)
        .map(|i| i.to_rgba8())
        .map_err(|e| VideoError::Image(e.to_string()))
}

/// Keyframe count for a segment: one per started second.
pub fn keyframe_count(segment: &VideoSegment) -> u32 {
    segment.duration_ms.div_ceil(1000)
}

/// Zip of keyframes with motion and caption applied, plus `manifest.json`.
pub fn render_fallback(manifest: &VideoManifest, store: &dyn Store) -> Result<Vec<u8>, VideoError> {
    let (w, h) = manifest.resolution;
    let mut zip = zip::ZipWriter::new(std::io::Cursor::new(Vec::new()));
    // Fixed timestamps keep the archive a pure function of the manifest.
    let stored = zip::write::SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Stored)
        .last_modified_time(zip::DateTime::default());
    let zerr = |e: zip::result::ZipError| VideoError::Archive(e.to_string());
    for s in &manifest.segments {
        let canvas = fit_canvas(&decode(&store.get_blob(&s.image)?)?, w, h);
        let overlay = caption_overlay(&s.caption, w, h);
        let n = keyframe_count(s);
        for k in 0..n {
            let t = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
            let mut frame = crop(&canvas, interpolate_motion(s, t)?);
            imageops::overlay(&mut frame, &overlay, 0, 0);
            zip.start_file(format!("keyframes/scene{}_{:02}.png", s.scene_index, k), stored)
                .map_err(zerr)?;
            zip.write_all(&placard::encode_png(&frame))?;
        }
    }
    let deflated = stored.compression_method(zip::CompressionMethod::Deflated);
    zip.start_file("manifest.json", deflated).map_err(zerr)?;
    zip.write_all(&serde_json::to_vec_pretty(manifest).expect("manifest serializes"))?;
    Ok(zip.finish().map_err(zerr)?.into_inner())
}

/// Runs the encoder over `manifest` and returns the container bytes.
pub async fn render_with_encoder(
    manifest: &VideoManifest,
    store: &dyn Store,
    encoder: &Path,
    args: &[String],
) -> Result<Vec<u8>, VideoError> {
    let dir = tempfile::tempdir()?;
    let (w, h) = manifest.resolution;
    let mut cmd = tokio::process::Command::new(encoder);
    cmd.arg("-hide_banner").arg("-nostdin").arg("-y").arg("-loglevel").arg("error");
    for s in &manifest.segments {
        let img = dir.path().join(format!("scene{}.png", s.scene_index));
        let cap = dir.path().join(format!("caption{}.png", s.scene_index));
        let canvas = fit_canvas(&decode(&store.get_blob(&s.image)?)?, w, h);
        std::fs::write(&img, placard::encode_png(&canvas))?;
        std::fs::write(&cap, placard::encode_png(&caption_overlay(&s.caption, w, h)))?;
        cmd.arg("-i").arg(&img).arg("-i").arg(&cap);
    }
    let script = dir.path().join("filter.txt");
    std::fs::write(&script, filter_script(manifest))?;
    let out = dir.path().join("out.mp4");
    cmd.arg("-filter_complex_script")
        .arg(&script)
        .args(["-map", "[out]", "-r", &manifest.fps.to_string()])
        .args(args)
        .arg(&out)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped());
    let output = cmd.output().await?;
    if !output.status.success() {
        let stderr = String::from_utf8_lossy(&output.stderr);
        let tail: String = stderr.chars().rev().take(2000).collect::<Vec<_>>().into_iter().rev().collect();
        return Err(VideoError::EncoderFailed {
            status: output.status.to_string(),
            stderr: tail.trim().to_string(),
        });
    }
    Ok(std::fs::read(&out)?)
}

/// Renders `manifest` and stores the result. Nothing is stored unless the
/// whole render succeeds.
pub async fn render(
    manifest: &VideoManifest,
    store: &dyn Store,
    cfg: &EncoderConfig,
) -> Result<BlobRef, VideoError> {
    if manifest.segments.is_empty() {
        return Err(VideoError::Precondition("manifest has no segments".into()));
    }
    manifest.validate()?;
    match discover_encoder(cfg) {
        Some(encoder) => {
            let bytes = render_with_encoder(manifest, store, &encoder, &cfg.args).await?;
            Ok(store.put_blob(&bytes, VIDEO_MEDIA_TYPE)?)
        }
        None if cfg.fallback => {
            let bytes = render_fallback(manifest, store)?;
            Ok(store.put_blob(&bytes, ARCHIVE_MEDIA_TYPE)?)
        }
        None => Err(VideoError::EncoderMissing),
    }
}

/// Container duration via `ffprobe`, or failing that the `Duration:` line of
/// `ffmpeg -i`.
pub async fn probe_duration(path: &Path, encoder: Option<&Path>) -> Result<std::time::Duration, VideoError> {
    let probe = encoder
        .and_then(|e| e.parent().map(|d| d.join("ffprobe")))
        .filter(|p| p.is_file())
        .or_else(|| find_on_path("ffprobe"));
    if let Some(ffprobe) = probe {
        let out = tokio::process::Command::new(ffprobe)
            .args(["-v", "error", "-show_entries", "format=duration", "-of", "default=nw=1:nk=1"])
            .arg(path)
            .output()
            .await?;
        if let Ok(s) = String::from_utf8_lossy(&out.stdout).trim().parse::<f64>() {
            return Ok(std::time::Duration::from_secs_f64(s));
        }
    }
    let ffmpeg = encoder
        .map(Path::to_path_buf)
        .or_else(|| find_on_path("ffmpeg"))
        .ok_or(VideoError::EncoderMissing)?;
    let out = tokio::process::Command::new(ffmpeg)
        .arg("-hide_banner")
        .arg("-i")
        .arg(path)
        .output()
        .await?;
    let text = String::from_utf8_lossy(&out.stderr);
    parse_duration_line(&text).ok_or_else(|| VideoError::EncoderFailed {
        status: out.status.to_string(),
        stderr: "no Duration line in probe output".into(),
    })
}

/// Parses `Duration: HH:MM:SS.ff` from encoder output.
pub fn parse_duration_line(text: &str) -> Option<std::time::Duration> {
    let rest = &text[text.find("Duration: ")? + "Duration: ".len()..];
    let stamp = rest.split(',').next()?.trim();
    let mut parts = stamp.split(':');
    let h: f64 = parts.next()?.parse().ok()?;
    let m: f64 = parts.next()?.parse().ok()?;
    let s: f64 = parts.next()?.parse().ok()?;
    Some(std::time::Duration::from_secs_f64(h * 3600.0 + m * 60.0 + s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn segment(duration_ms: u32) -> VideoSegment {
        VideoSegment {
            scene_index: 1,
            image: BlobRef {
                hash: "0".repeat(64),
                media_type: "image/png".into(),
                byte_length: 0,
            },
            caption: "c".into(),
            duration_ms,
            motion: Motion {
                start_rect: Rect::FULL,
                end_rect: Rect::centered(0.85),
            },
            transition_out: Transition::Crossfade,
            transition_ms: 500,
        }
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let s = segment(5000);
        assert_eq!(interpolate_motion(&s, 0.0).unwrap(), Rect::FULL);
        assert_eq!(interpolate_motion(&s, 1.0).unwrap(), Rect::centered(0.85));
        let mid = interpolate_motion(&s, 0.5).unwrap();
        assert!((mid.w - 0.925).abs() < 1e-15 && (mid.h - 0.925).abs() < 1e-15);
        assert!((mid.x - 0.0375).abs() < 1e-15);
        assert!(matches!(interpolate_motion(&s, 1.01), Err(VideoError::OutOfRange(_))));
        assert!(matches!(interpolate_motion(&s, -0.1), Err(VideoError::OutOfRange(_))));
    }

    #[test]
    fn default_end_rect_is_centered_85_percent() {
        let r = TimingConfig::default().end_rect;
        assert!((r.x - 0.075).abs() < 1e-15 && (r.w - 0.85).abs() < 1e-15);
        assert!(r.is_within_unit_square());
    }

    #[test]
    fn keyframes_per_segment() {
        assert_eq!(keyframe_count(&segment(5000)), 5);
        assert_eq!(keyframe_count(&segment(5001)), 6);
        assert_eq!(keyframe_count(&segment(1)), 1);
    }

    #[test]
    fn duration_line_parses() {
        let text = "Input #0, mov,mp4\n  Duration: 00:00:20.03, start: 0.000000, bitrate: 95 kb/s";
        assert_eq!(parse_duration_line(text), Some(std::time::Duration::from_secs_f64(20.03)));
        assert_eq!(parse_duration_line("nothing"), None);
    }

    #[test]
    fn filter_offsets_sum_to_display_durations() {
        let mut segs: Vec<VideoSegment> = (1..=4)
            .map(|i| VideoSegment {
                scene_index: i,
                ..segment(5000)
            })
            .collect();
        segs[3].transition_out = Transition::Cut;
        segs[3].transition_ms = 0;
        let m = VideoManifest {
            version: 1,
            segments: segs,
            fps: 30,
            resolution: (640, 360),
            total_duration_ms: 20_000,
        };
        m.validate().unwrap();
        let script = filter_script(&m);
        for off in ["offset=5.000", "offset=10.000", "offset=15.000"] {
            assert!(script.contains(off), "{off} missing from\n{script}");
        }
        assert!(script.ends_with("[x3]null[out]"));
    }

    #[test]
    fn caption_band_sits_in_bottom_third() {
        let img = caption_overlay("A skater glides across the ice.", 640, 360);
        assert_eq!(img.get_pixel(10, 10)[3], 0);
        assert!(img.get_pixel(10, 359)[3] > 0);
        let first_opaque = (0..360).find(|&y| img.get_pixel(1, y)[3] > 0).unwrap();
        assert!(first_opaque >= 240, "band starts at {first_opaque}");
    }
}
