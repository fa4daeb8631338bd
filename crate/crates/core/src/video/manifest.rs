//! Render manifest: the aligned timeline in canonical form plus external
//! encoder command lines that render it without re-deciding any timing.
//!
//! # Command templates
//!
//! Command lines contain three placeholders, each written with single braces
//! and substituted verbatim (no quoting or escaping is added):
//!
//! * `{artifact_dir}`: directory holding every referenced artifact as
//!   `<content hash>.<extension>`, where the extension is `ppm` for images,
//!   `wav` for audio, `pgm` for depth maps, `mp4` for video clips and `json`
//!   or `txt` otherwise.
//! * `{work_dir}`: scratch directory for per-clip intermediates, named
//!   `clip_<index, three digits>.mp4` in video-track order.
//! * `{output}`: path of the final video.
//!
//! No other brace pair appears in the templates. Durations are written in
//! seconds with exactly three decimals, taken from the integer milliseconds
//! (`3200` ms becomes `3.200`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Clip, Timeline, Track, VideoError};
use crate::artifact::{ArtifactStore, StoreError};
use crate::canonical;
use crate::config::{ImageConfig, VideoConfig};
use crate::domain::{ArtifactRef, CameraKind, MediaType, TransitionKind};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSettings {
    pub frame_rate: u32,
    pub width: u32,
    pub height: u32,
}

impl ManifestSettings {
    pub fn from_config(video: &VideoConfig, image: &ImageConfig) -> Self {
        Self {
            frame_rate: video.frame_rate,
            width: image.width,
            height: image.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderPlan {
    /// One command per video clip, in video-track order.
    pub clip_commands: Vec<String>,
    /// `-filter_complex` graph joining the clips and mixing the audio.
    pub filter_graph: String,
    pub final_command: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderManifest {
    pub schema_version: u32,
    pub settings: ManifestSettings,
    pub total_duration_ms: u64,
    pub timeline: Timeline,
    /// Content hash of every referenced artifact with its media type.
    pub artifacts: BTreeMap<String, MediaType>,
    pub encoder: EncoderPlan,
}

/// `ms` as seconds with three decimals.
pub fn encoder_seconds(ms: u64) -> String {
    format!("{}.{:03}", ms / 1000, ms % 1000)
}

fn extension(media: MediaType) -> &'static str {
    match media {
        MediaType::ImageRaster => "ppm",
        MediaType::AudioWave => "wav",
        MediaType::DepthMap => "pgm",
        MediaType::VideoClip => "mp4",
        MediaType::Json | MediaType::MaskSet => "json",
        MediaType::Text => "txt",
    }
}

/// File name of an artifact inside `{artifact_dir}`.
pub fn artifact_file_name(r: &ArtifactRef) -> String {
    format!("{}.{}", r.content_hash, extension(r.media_type))
}

fn camera_filter(clip: &Clip, s: &ManifestSettings) -> String {
    let size = format!("{}x{}", s.width, s.height);
    let Some(params) = clip.params else {
        return format!("scale={}:{}", s.width, s.height);
    };
    let cam = params.camera_move;
    let frames = (cam.duration_ms * s.frame_rate as u64 / 1000).max(1);
    let mag = format!("{:.3}", cam.magnitude);
    let fps = s.frame_rate;
    match cam.kind {
        CameraKind::Static => format!("scale={}:{}", s.width, s.height),
        CameraKind::Push | CameraKind::Zoom => {
            format!("zoompan=z='1+{mag}*min(on,{frames})/{frames}':d=1:s={size}:fps={fps}")
        }
        CameraKind::Pull => format!("zoompan=z='1+{mag}-{mag}*min(on,{frames})/{frames}':d=1:s={size}:fps={fps}"),
        CameraKind::Rotate => format!(
            "scale={}:{},rotate='{mag}*PI*min(t*1000,{})/{}'",
            s.width, s.height, cam.duration_ms, cam.duration_ms
        ),
    }
}

fn xfade_name(kind: TransitionKind) -> &'static str {
    match kind {
        TransitionKind::Cut => "cut",
        TransitionKind::Dissolve => "fade",
        TransitionKind::Wipe => "wipeleft",
        TransitionKind::Push => "slideleft",
    }
}

fn encoder_plan(timeline: &Timeline, s: &ManifestSettings) -> EncoderPlan {
    let video: Vec<&Clip> = timeline.track(Track::Video).collect();
    let audio: Vec<&Clip> = timeline
        .clips
        .iter()
        .filter(|c| matches!(c.track, Track::Narration | Track::Music | Track::SoundEffect))
        .collect();

    let clip_commands = video
        .iter()
        .enumerate()
        .map(|(i, c)| {
            format!(
                "ffmpeg -y -loop 1 -framerate {fps} -i {{artifact_dir}}/{file} -t {secs} -vf \"{filter},format=yuv420p\" -r {fps} {{work_dir}}/clip_{i:03}.mp4",
                fps = s.frame_rate,
                file = artifact_file_name(&c.artifact),
                secs = encoder_seconds(c.duration_ms),
                filter = camera_filter(c, s),
            )
        })
        .collect();

    let mut graph = Vec::new();
    let mut prev = "0:v".to_string();
    for i in 1..video.len() {
        let t = video[i - 1].params.map(|p| p.transition_out).unwrap_or_else(crate::domain::Transition::cut);
        let out = format!("v{i}");
        if t.kind == TransitionKind::Cut || t.duration_ms == 0 {
            graph.push(format!("[{prev}][{i}:v]concat=n=2:v=1:a=0[{out}]"));
        } else {
            graph.push(format!(
                "[{prev}][{i}:v]xfade=transition={}:duration={}:offset={}[{out}]",
                xfade_name(t.kind),
                encoder_seconds(t.duration_ms),
                encoder_seconds(video[i].start_ms),
            ));
        }
        prev = out;
    }
    graph.push(format!("[{prev}]null[vout]"));
    let mut mix_inputs = String::new();
    for (k, c) in audio.iter().enumerate() {
        let input = video.len() + k;
        graph.push(format!(
            "[{input}:a]atrim=0:{},adelay={}:all=1[a{k}]",
            encoder_seconds(c.duration_ms),
            c.start_ms
        ));
        mix_inputs.push_str(&format!("[a{k}]"));
    }
    if audio.is_empty() {
        graph.push(format!("anullsrc=d={}[aout]", encoder_seconds(timeline.total_duration_ms)));
    } else {
        graph.push(format!("{mix_inputs}amix=inputs={}:normalize=0[aout]", audio.len()));
    }
    let filter_graph = graph.join(";");

    let mut final_command = String::from("ffmpeg -y");
    for i in 0..video.len() {
        final_command.push_str(&format!(" -i {{work_dir}}/clip_{i:03}.mp4"));
    }
    for c in &audio {
        final_command.push_str(&format!(" -i {{artifact_dir}}/{}", artifact_file_name(&c.artifact)));
    }
    final_command.push_str(&format!(
        " -filter_complex \"{filter_graph}\" -map [vout] -map [aout] -t {} -r {} {{output}}",
        encoder_seconds(timeline.total_duration_ms),
        s.frame_rate
    ));

    EncoderPlan {
        clip_commands,
        filter_graph,
        final_command,
    }
}

/// Build the manifest for `timeline` and store its canonical form.
pub fn emit_manifest(
    timeline: &Timeline,
    store: &dyn ArtifactStore,
    settings: &ManifestSettings,
) -> Result<(RenderManifest, ArtifactRef), VideoError> {
    let problems = timeline.problems();
    if !problems.is_empty() {
        return Err(VideoError::InvalidTimeline(problems));
    }
    let artifacts = timeline
        .clips
        .iter()
        .map(|c| (c.artifact.content_hash.to_string(), c.artifact.media_type))
        .collect();
    let manifest = RenderManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        settings: *settings,
        total_duration_ms: timeline.total_duration_ms,
        timeline: timeline.clone(),
        artifacts,
        encoder: encoder_plan(timeline, settings),
    };
    let bytes = canonical::to_canonical_bytes(&manifest).map_err(|e| StoreError::Index(e.to_string()))?;
    let r = store.put(&bytes, MediaType::Json)?;
    Ok((manifest, r))
}

/// Read a manifest back from its canonical bytes.
pub fn parse_manifest(bytes: &[u8]) -> Result<RenderManifest, VideoError> {
    let m: RenderManifest = serde_json::from_slice(bytes).map_err(|e| VideoError::BadManifest(e.to_string()))?;
    if m.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(VideoError::BadManifest(format!("unsupported schema version {}", m.schema_version)));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seconds_format() {
        assert_eq!(encoder_seconds(3200), "3.200");
        assert_eq!(encoder_seconds(5), "0.005");
        assert_eq!(encoder_seconds(0), "0.000");
    }
}
