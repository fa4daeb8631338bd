//! Material planning and timeline alignment.
//!
//! Every shot becomes one video clip whose length is the longest of its
//! narration, its camera move and the minimum shot length. Adjacent clips
//! overlap by the duration of the transition joining them, so
//! `total = Σ d_i − Σ t_i`. All times are integer milliseconds.

mod manifest;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::StoreError;
use crate::config::VideoConfig;
use crate::domain::{ArtifactRef, CameraMove, Script, Transition, TransitionKind};
use crate::image::ShotImageSet;
use crate::utility::{AdapterError, AdapterSet};

pub use manifest::{
    emit_manifest, encoder_seconds, parse_manifest, EncoderPlan, ManifestSettings, RenderManifest,
    MANIFEST_SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("transition {index} lasts {transition_ms} ms but the shorter neighbouring shot lasts {limit_ms} ms")]
    NegativeOverlap { index: usize, transition_ms: u64, limit_ms: u64 },
    #[error("shot {0} would have zero duration")]
    ZeroDuration(String),
    #[error("shot {0} has no accepted styled image")]
    MissingImage(String),
    #[error("nothing to align: the plan has no shots")]
    EmptyPlan,
    #[error("adapter failed: {0}")]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("timeline is inconsistent: {}", .0.join("; "))]
    InvalidTimeline(Vec<String>),
    #[error("sound effect [{start_ms}, {end_ms}) does not fit the timeline")]
    SoundEffectOutOfRange { start_ms: u64, end_ms: u64 },
    #[error("manifest is unreadable: {0}")]
    BadManifest(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedAudio {
    pub artifact: ArtifactRef,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotMaterial {
    pub shot_id: String,
    /// Final styled image of the shot.
    pub image: ArtifactRef,
    /// Absent exactly when the shot has no narration.
    pub narration: Option<TimedAudio>,
    pub camera_move: CameraMove,
    pub transition_out: Transition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MusicTrack {
    pub artifact: ArtifactRef,
    pub duration_ms: u64,
    pub mood_tag: String,
}

/// A change the planner made to what the script asked for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanAdjustment {
    pub shot_id: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialPlan {
    pub shots: Vec<ShotMaterial>,
    pub music: MusicTrack,
    pub adjustments: Vec<PlanAdjustment>,
}

impl MaterialPlan {
    /// Problems with the plan's own invariants.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(last) = self.shots.last() {
            if last.transition_out.kind != TransitionKind::Cut {
                out.push(format!("last shot {} must end with a cut", last.shot_id));
            }
        }
        for s in &self.shots {
            if !s.transition_out.is_consistent() {
                out.push(format!("shot {} has an inconsistent transition", s.shot_id));
            }
        }
        out
    }
}

const MOODS: &[(&str, &[&str])] = &[
    ("epic", &["dragon", "battle", "war", "storm", "quest", "hero", "king", "castle"]),
    ("mysterious", &["night", "ghost", "shadow", "dark", "secret", "moon", "forest"]),
    ("tender", &["love", "heart", "friend", "mother", "home", "gift"]),
    ("playful", &["fox", "rabbit", "game", "trick", "party", "little"]),
];

/// Mood tag for background music, picked from keywords in the title.
pub fn mood_tag(title: &str) -> &'static str {
    let words: Vec<String> = crate::rag::tokenize(title);
    MOODS
        .iter()
        .find(|(_, keys)| words.iter().any(|w| keys.contains(&w.as_str())))
        .map_or("gentle", |(tag, _)| tag)
}

/// `max(narration, camera move, min_shot_ms)`.
pub fn shot_visual_duration(material: &ShotMaterial, min_shot_ms: u64) -> u64 {
    let narration = material.narration.as_ref().map_or(0, |n| n.duration_ms);
    narration.max(material.camera_move.duration_ms).max(min_shot_ms)
}

/// Synthesize narration, settle camera moves and transitions, and pick
/// music for the whole story.
pub fn plan_materials(
    script: &Script,
    image_sets: &[ShotImageSet],
    adapters: &AdapterSet,
    config: &VideoConfig,
) -> Result<MaterialPlan, VideoError> {
    let shots: Vec<_> = script.shots().collect();
    if shots.is_empty() {
        return Err(VideoError::EmptyPlan);
    }
    let mut adjustments = Vec::new();
    let mut materials = Vec::with_capacity(shots.len());
    for (i, shot) in shots.iter().enumerate() {
        let image = image_sets
            .iter()
            .find(|s| s.shot_id == shot.id)
            .and_then(|s| s.styled.clone())
            .ok_or_else(|| VideoError::MissingImage(shot.id.clone()))?;
        let narration = if shot.narration.trim().is_empty() {
            None
        } else {
            let (artifact, duration_ms) = adapters.speech.tts(&shot.narration, &config.narrator_voice)?;
            if duration_ms == 0 {
                return Err(VideoError::ZeroDuration(shot.id.clone()));
            }
            Some(TimedAudio { artifact, duration_ms })
        };
        let camera_move = shot.camera_move.unwrap_or_else(CameraMove::fixed);
        let mut transition_out = shot
            .transition_out
            .unwrap_or_else(|| Transition::dissolve(config.default_transition_ms));
        if i + 1 == shots.len() && transition_out.kind != TransitionKind::Cut {
            if shot.transition_out.is_some() {
                adjustments.push(PlanAdjustment {
                    shot_id: shot.id.clone(),
                    note: format!(
                        "last transition {:?} {} ms replaced by a cut",
                        transition_out.kind, transition_out.duration_ms
                    ),
                });
            }
            transition_out = Transition::cut();
        }
        materials.push(ShotMaterial {
            shot_id: shot.id.clone(),
            image,
            narration,
            camera_move,
            transition_out,
        });
    }
    let durations: Vec<u64> = materials.iter().map(|m| shot_visual_duration(m, config.min_shot_ms)).collect();
    let overlap: u64 = materials[..materials.len() - 1].iter().map(|m| m.transition_out.duration_ms).sum();
    let estimate = durations.iter().sum::<u64>().saturating_sub(overlap).max(1);
    let mood = mood_tag(&script.title);
    let music = adapters.music.music_select(mood, estimate)?;
    Ok(MaterialPlan {
        shots: materials,
        music: MusicTrack {
            artifact: music,
            duration_ms: estimate,
            mood_tag: mood.to_string(),
        },
        adjustments,
    })
}

/// Start times and total for clip durations `d` joined by transitions `t`
/// (`t.len() == d.len() - 1`).
pub fn align_durations(d: &[u64], t: &[u64]) -> Result<(Vec<u64>, u64), VideoError> {
    if d.is_empty() {
        return Err(VideoError::EmptyPlan);
    }
    assert_eq!(t.len() + 1, d.len(), "one transition between each pair of clips");
    let mut starts = Vec::with_capacity(d.len());
    let mut start = 0u64;
    for (i, &di) in d.iter().enumerate() {
        starts.push(start);
        if let Some(&ti) = t.get(i) {
            let limit = di.min(d[i + 1]);
            if ti >= limit {
                return Err(VideoError::NegativeOverlap {
                    index: i,
                    transition_ms: ti,
                    limit_ms: limit,
                });
            }
            start += di - ti;
        }
    }
    let total = start + d[d.len() - 1];
    Ok((starts, total))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Track {
    Video,
    Narration,
    Music,
    SoundEffect,
}

/// Camera and transition parameters of a video clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VideoParams {
    pub camera_move: CameraMove,
    pub transition_out: Transition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub track: Track,
    pub artifact: ArtifactRef,
    pub start_ms: u64,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shot_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<VideoParams>,
}

impl Clip {
    pub fn end_ms(&self) -> u64 {
        self.start_ms + self.duration_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub clips: Vec<Clip>,
    pub total_duration_ms: u64,
}

impl Timeline {
    pub fn track(&self, track: Track) -> impl Iterator<Item = &Clip> {
        self.clips.iter().filter(move |c| c.track == track)
    }

    /// Video clips with the transition that follows each (the last has none).
    fn video_with_transitions(&self) -> Vec<(&Clip, u64)> {
        let video: Vec<&Clip> = self.track(Track::Video).collect();
        let n = video.len();
        video
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let t = if i + 1 < n {
                    c.params.map_or(0, |p| p.transition_out.duration_ms)
                } else {
                    0
                };
                (c, t)
            })
            .collect()
    }

    /// Every violated timeline invariant.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.clips {
            if c.duration_ms == 0 {
                out.push(format!("{:?} clip at {} has zero duration", c.track, c.start_ms));
            }
        }
        for track in [Track::Video, Track::Narration, Track::Music, Track::SoundEffect] {
            let starts: Vec<u64> = self.track(track).map(|c| c.start_ms).collect();
            if starts.windows(2).any(|w| w[0] >= w[1]) {
                out.push(format!("{track:?} starts are not strictly increasing"));
            }
        }
        let video = self.video_with_transitions();
        match video.first() {
            None => out.push("no video clips".into()),
            Some((first, _)) if first.start_ms != 0 => out.push("video does not start at 0".into()),
            _ => {}
        }
        for w in video.windows(2) {
            let ((a, t), (b, _)) = (w[0], w[1]);
            if b.start_ms + t != a.end_ms() {
                out.push(format!("gap or overlap between video clips at {} and {}", a.start_ms, b.start_ms));
            }
        }
        if let Some((last, _)) = video.last() {
            if last.end_ms() != self.total_duration_ms {
                out.push("video does not end at the total duration".into());
            }
        }
        for n in self.track(Track::Narration) {
            match video.iter().find(|(v, _)| v.shot_id.is_some() && v.shot_id == n.shot_id) {
                None => out.push(format!("narration at {} has no shot", n.start_ms)),
                Some((v, t)) => {
                    if n.start_ms != v.start_ms {
                        out.push(format!("narration of {:?} does not start with its shot", n.shot_id));
                    }
                    if n.end_ms() > v.end_ms() + t || n.end_ms() > self.total_duration_ms {
                        out.push(format!("narration of {:?} runs past its shot", n.shot_id));
                    }
                }
            }
        }
        let music: Vec<&Clip> = self.track(Track::Music).collect();
        if music.len() != 1 || music[0].start_ms != 0 || music[0].duration_ms != self.total_duration_ms {
            out.push("music must span the whole timeline".into());
        }
        for s in self.track(Track::SoundEffect) {
            if s.end_ms() > self.total_duration_ms {
                out.push(format!("sound effect at {} runs past the end", s.start_ms));
            }
        }
        out
    }

    /// Place a sound effect. Sound effects are never planned automatically.
    pub fn add_sound_effect(&mut self, artifact: ArtifactRef, start_ms: u64, duration_ms: u64) -> Result<(), VideoError> {
        let end_ms = start_ms + duration_ms;
        if duration_ms == 0 || end_ms > self.total_duration_ms || self.track(Track::SoundEffect).any(|c| c.start_ms == start_ms) {
            return Err(VideoError::SoundEffectOutOfRange { start_ms, end_ms });
        }
        let pos = self
            .clips
            .iter()
            .position(|c| c.track == Track::SoundEffect && c.start_ms > start_ms)
            .unwrap_or(self.clips.len());
        self.clips.insert(
            pos,
            Clip {
                track: Track::SoundEffect,
                artifact,
                start_ms,
                duration_ms,
                shot_id: None,
                params: None,
            },
        );
        Ok(())
    }
}

/// Lay the plan out on a three-track timeline: video, narration, music.
pub fn align_timeline(plan: &MaterialPlan, min_shot_ms: u64) -> Result<Timeline, VideoError> {
    let n = plan.shots.len();
    let d: Vec<u64> = plan.shots.iter().map(|m| shot_visual_duration(m, min_shot_ms)).collect();
    if let Some(i) = d.iter().position(|&x| x == 0) {
        return Err(VideoError::ZeroDuration(plan.shots[i].shot_id.clone()));
    }
    let t: Vec<u64> = plan.shots.iter().take(n.saturating_sub(1)).map(|m| m.transition_out.duration_ms).collect();
    let (starts, total) = align_durations(&d, &t)?;
    let mut clips = Vec::with_capacity(2 * n + 1);
    for (i, m) in plan.shots.iter().enumerate() {
        clips.push(Clip {
            track: Track::Video,
            artifact: m.image.clone(),
            start_ms: starts[i],
            duration_ms: d[i],
            shot_id: Some(m.shot_id.clone()),
            params: Some(VideoParams {
                camera_move: m.camera_move,
                transition_out: m.transition_out,
            }),
        });
    }
    for (i, m) in plan.shots.iter().enumerate() {
        if let Some(audio) = &m.narration {
            clips.push(Clip {
                track: Track::Narration,
                artifact: audio.artifact.clone(),
                start_ms: starts[i],
                duration_ms: audio.duration_ms,
                shot_id: Some(m.shot_id.clone()),
                params: None,
            });
        }
    }
    clips.push(Clip {
        track: Track::Music,
        artifact: plan.music.artifact.clone(),
        start_ms: 0,
        duration_ms: total,
        shot_id: None,
        params: None,
    });
    Ok(Timeline {
        clips,
        total_duration_ms: total,
    })
}

/// Recompute every start time of `timeline` from its own durations and
/// transitions. A timeline produced by [`align_timeline`] is a fixed point.
pub fn realign(timeline: &Timeline) -> Result<Timeline, VideoError> {
    let video = timeline.video_with_transitions();
    let d: Vec<u64> = video.iter().map(|(c, _)| c.duration_ms).collect();
    let t: Vec<u64> = video.iter().take(video.len().saturating_sub(1)).map(|(_, t)| *t).collect();
    let (starts, total) = align_durations(&d, &t)?;
    let shot_start = |id: &Option<String>| {
        video
            .iter()
            .position(|(c, _)| c.shot_id.is_some() && &c.shot_id == id)
            .map(|i| starts[i])
    };
    let mut next_video = 0;
    let clips = timeline
        .clips
        .iter()
        .map(|c| {
            let mut c = c.clone();
            match c.track {
                Track::Video => {
                    c.start_ms = starts[next_video];
                    next_video += 1;
                }
                Track::Narration => {
                    c.start_ms = shot_start(&c.shot_id)
                        .ok_or_else(|| VideoError::InvalidTimeline(vec![format!("narration of {:?} has no shot", c.shot_id)]))?;
                }
                Track::Music => {
                    c.start_ms = 0;
                    c.duration_ms = total;
                }
                Track::SoundEffect => {}
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>, VideoError>>()?;
    Ok(Timeline {
        clips,
        total_duration_ms: total,
    })
}
