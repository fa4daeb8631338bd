mod common;

use proptest::prelude::*;

use storyreel_core::domain::{ArtifactRef, CameraKind, CameraMove, MediaType, Transition, TransitionKind};
use storyreel_core::image::ShotImageSet;
use storyreel_core::production::shot_seeds;
use storyreel_core::video::*;

fn art(tag: &str) -> ArtifactRef {
    ArtifactRef::for_bytes(tag.as_bytes(), MediaType::AudioWave)
}

fn material(i: usize, narration_ms: Option<u64>, camera_ms: u64, transition_ms: u64) -> ShotMaterial {
    ShotMaterial {
        shot_id: format!("s{i}"),
        image: ArtifactRef::for_bytes(format!("img{i}").as_bytes(), MediaType::ImageRaster),
        narration: narration_ms.map(|ms| TimedAudio {
            artifact: art(&format!("nar{i}")),
            duration_ms: ms,
        }),
        camera_move: CameraMove {
            kind: if camera_ms == 0 { CameraKind::Static } else { CameraKind::Rotate },
            magnitude: 0.1,
            duration_ms: camera_ms,
        },
        transition_out: if transition_ms == 0 {
            Transition::cut()
        } else {
            Transition {
                kind: TransitionKind::Wipe,
                duration_ms: transition_ms,
            }
        },
    }
}

fn plan(shots: Vec<ShotMaterial>) -> MaterialPlan {
    MaterialPlan {
        shots,
        music: MusicTrack {
            artifact: art("music"),
            duration_ms: 1,
            mood_tag: "gentle".into(),
        },
        adjustments: vec![],
    }
}

fn arb_plan() -> impl Strategy<Value = MaterialPlan> {
    proptest::collection::vec((proptest::option::of(1u64..8000), 0u64..5000, 0u64..1999), 1..8).prop_map(|v| {
        let n = v.len();
        plan(
            v.into_iter()
                .enumerate()
                .map(|(i, (nar, cam, t))| material(i, nar, cam, if i + 1 == n { 0 } else { t }))
                .collect(),
        )
    })
}

proptest! {
    #[test]
    fn realign_is_a_fixed_point(p in arb_plan()) {
        // transitions stay below the 2000 ms floor, so alignment always succeeds
        let tl = align_timeline(&p, 2000).unwrap();
        prop_assert!(tl.problems().is_empty(), "{:?}", tl.problems());
        prop_assert_eq!(realign(&tl).unwrap(), tl.clone());
        let narrated = p.shots.iter().filter(|m| m.narration.is_some()).count();
        prop_assert_eq!(tl.track(Track::Narration).count(), narrated);
        prop_assert_eq!(tl.track(Track::Music).count(), 1);
    }

    #[test]
    fn sound_effects_never_leave_the_timeline(p in arb_plan(), start in 0u64..40_000, len in 1u64..5000) {
        let mut tl = align_timeline(&p, 2000).unwrap();
        let fits = start + len <= tl.total_duration_ms;
        let result = tl.add_sound_effect(art("boom"), start, len);
        prop_assert_eq!(result.is_ok(), fits);
        prop_assert!(tl.problems().is_empty());
        prop_assert_eq!(realign(&tl).unwrap(), tl);
    }
}

#[test]
fn editing_a_duration_and_realigning_moves_later_clips() {
    let p = plan(vec![material(0, Some(3200), 0, 500), material(1, Some(2500), 0, 400), material(2, None, 0, 0)]);
    let mut tl = align_timeline(&p, 2000).unwrap();
    assert_eq!(tl.total_duration_ms, 3200 + 2500 + 2000 - 900);
    for c in tl.clips.iter_mut().filter(|c| c.track == Track::Video && c.shot_id.as_deref() == Some("s0")) {
        c.duration_ms = 4000;
    }
    assert!(!tl.problems().is_empty());
    let fixed = realign(&tl).unwrap();
    assert!(fixed.problems().is_empty(), "{:?}", fixed.problems());
    assert_eq!(fixed.total_duration_ms, 4000 + 2500 + 2000 - 900);
    let starts: Vec<u64> = fixed.track(Track::Video).map(|c| c.start_ms).collect();
    assert_eq!(starts, [0, 3500, 5600]);
}

#[test]
fn transition_as_long_as_a_shot_is_refused() {
    let p = plan(vec![material(0, None, 0, 2000), material(1, Some(5000), 0, 0)]);
    let err = align_timeline(&p, 2000).unwrap_err();
    assert!(matches!(
        err,
        VideoError::NegativeOverlap {
            index: 0,
            transition_ms: 2000,
            limit_ms: 2000
        }
    ));
}

#[test]
fn invalid_timeline_yields_no_manifest() {
    let studio = common::studio();
    let mut tl = align_timeline(&plan(vec![material(0, Some(2500), 0, 0)]), 2000).unwrap();
    tl.total_duration_ms += 1;
    let err = emit_manifest(&tl, studio.store.as_ref(), &studio.manifest_settings()).unwrap_err();
    assert!(matches!(err, VideoError::InvalidTimeline(_)));
    assert!(studio.store.is_empty());
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

#[test]
fn story_materials_follow_the_speech_and_music_rules() {
    let studio = common::studio();
    let script = studio.prompt_engine(42).write_script(&common::proposal(3)).unwrap();
    let sets: Vec<ShotImageSet> = studio
        .image_pipeline()
        .render_script(&script, &common::style(0.6), &shot_seeds(42, 3))
        .unwrap();
    let p = plan_materials(&script, &sets, &studio.adapters, &studio.config.video).unwrap();
    assert!(p.problems().is_empty());
    for (shot, m) in script.shots().zip(&p.shots) {
        assert_eq!(m.narration.as_ref().unwrap().duration_ms, 60 * word_count(&shot.narration) + 500);
    }
    assert_eq!(p.shots.last().unwrap().transition_out, Transition::cut());
    let tl = align_timeline(&p, studio.config.video.min_shot_ms).unwrap();
    assert_eq!(p.music.duration_ms, tl.total_duration_ms);
    assert_eq!(p.music.mood_tag, mood_tag(&script.title));

    let (manifest, r) = emit_manifest(&tl, studio.store.as_ref(), &studio.manifest_settings()).unwrap();
    let back = parse_manifest(&studio.store.get(&r).unwrap()).unwrap();
    assert_eq!(back, manifest);
    assert_eq!(manifest.encoder.clip_commands.len(), 3);
    for c in &tl.clips {
        assert!(manifest.artifacts.contains_key(c.artifact.content_hash.as_str()));
    }
    assert!(manifest.encoder.final_command.contains("{output}"));
    let mut bumped = manifest.clone();
    bumped.schema_version = 99;
    assert!(parse_manifest(&serde_json::to_vec(&bumped).unwrap()).is_err());
}

#[test]
fn missing_image_is_reported() {
    let studio = common::studio();
    let script = studio.prompt_engine(42).write_script(&common::proposal(3)).unwrap();
    let err = plan_materials(&script, &[], &studio.adapters, &studio.config.video).unwrap_err();
    assert!(matches!(err, VideoError::MissingImage(_)));
}
