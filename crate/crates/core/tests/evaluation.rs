mod common;

use std::sync::Arc;

use proptest::prelude::*;

use storyreel_core::clock::FixedClock;
use storyreel_core::domain::{ArtifactRef, MediaType};
use storyreel_core::evaluation::*;
use storyreel_core::rag::{ExperienceCategory, ExperienceUpdate, FeedbackAuthor};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn overall_is_the_weighted_sum(c in 0.0..=100.0f64, f in 0.0..=100.0f64, l in 0.0..=100.0f64) {
        let o = script_overall(&ScriptScores::new(c, f, l)).unwrap();
        prop_assert!(close(o.raw, 0.3 * c + 0.3 * f + 0.4 * l));
        let o = image_overall(&ImageScores::new(c, f, l)).unwrap();
        prop_assert!(close(o.raw, 0.5 * c + 0.3 * f + 0.2 * l));
    }

    #[test]
    fn overall_is_linear(
        a in proptest::array::uniform3(0.0..=50.0f64),
        b in proptest::array::uniform3(0.0..=50.0f64),
        w in proptest::array::uniform3(0.0..=1.0f64),
    ) {
        let sum: f64 = w.iter().sum();
        prop_assume!(sum > 1e-3);
        let weights = WeightVector::new([w[0] / sum, w[1] / sum, 1.0 - w[0] / sum - w[1] / sum]).unwrap();
        let s = |v: [f64; 3]| ScriptScores::new(v[0], v[1], v[2]);
        let ab = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
        let lhs = overall(&s(ab), &weights).unwrap().raw;
        let rhs = overall(&s(a), &weights).unwrap().raw + overall(&s(b), &weights).unwrap().raw;
        prop_assert!(close(lhs, rhs));
    }

    #[test]
    fn raising_a_dimension_never_lowers_the_overall(
        v in proptest::array::uniform3(0.0..=100.0f64),
        dim in 0usize..3,
        bump in 0.0..=100.0f64,
    ) {
        let mut up = v;
        up[dim] = (up[dim] + bump).min(100.0);
        let before = image_overall(&ImageScores::new(v[0], v[1], v[2])).unwrap();
        let after = image_overall(&ImageScores::new(up[0], up[1], up[2])).unwrap();
        prop_assert!(after.raw >= before.raw - 1e-12);
        prop_assert!(after.reported >= before.reported);
    }
}

#[test]
fn aggregate_reports_means_and_their_overall() {
    let rows = [ScriptScores::new(85.0, 33.0, 78.0), ScriptScores::new(98.0, 43.0, 87.0)];
    let agg = aggregate(&rows, &WeightVector::new([0.3, 0.3, 0.4]).unwrap()).unwrap();
    assert_eq!(agg.count, 2);
    assert!(close(agg.overall.raw, (66.6 + 77.1) / 2.0));
    assert!(matches!(
        aggregate::<ScriptScores>(&[], &WeightVector::new([0.3, 0.3, 0.4]).unwrap()),
        Err(EvalError::EmptyInput)
    ));
}

#[test]
fn weights_off_simplex_are_refused() {
    assert!(WeightVector::new([0.5, 0.5, 0.1]).is_err());
    assert!(WeightVector::new([1.2, -0.2, 0.0]).is_err());
    assert!(WeightVector::new([1.0, 0.0, 0.0]).is_ok());
}

fn node(id: &str) -> ReviewTarget {
    ReviewTarget::WorkflowNode { node_id: id.into() }
}

#[test]
fn reviews_route_free_text_and_repeat_feedback_merges() {
    let studio = common::studio();
    let synth = studio.synthesizer();
    let book = ScoreBook::in_memory(Arc::new(FixedClock::new(5)));
    let exists = |_: &ReviewTarget| true;
    let text = "plan the number of shots for the whole story before splitting actions";

    let first = book
        .ingest_review(
            node("action_generation"),
            Some(DimensionScores::Script(ScriptScores::new(92.0, 32.0, 85.0))),
            text,
            FeedbackAuthor::HumanExpert,
            &exists,
            &studio.erag,
            &synth,
            0.6,
        )
        .unwrap();
    assert_eq!(first.record.id, "review-1");
    assert_eq!(first.record.overall.unwrap().reported, 71.2);
    let (fb, update) = first.feedback.unwrap();
    assert_eq!(fb.id, "review-1-feedback");
    assert_eq!(fb.category, ExperienceCategory::Workflow);
    assert!(matches!(update, ExperienceUpdate::Inserted(_)));

    let second = book
        .ingest_review(node("action_generation"), None, text, FeedbackAuthor::HumanExpert, &exists, &studio.erag, &synth, 0.6)
        .unwrap();
    let (_, update) = second.feedback.unwrap();
    assert!(matches!(&update, ExperienceUpdate::Updated(e) if e.version == 2));
    assert_eq!(studio.erag.len(), 1);
    assert_eq!(book.for_target(&node("action_generation")).len(), 2);

    let image = ReviewTarget::ImageArtifact {
        artifact: ArtifactRef::for_bytes(b"img", MediaType::ImageRaster),
    };
    let third = book
        .ingest_review(
            image.clone(),
            Some(DimensionScores::Image(ImageScores::new(53.61, 81.95, 93.54))),
            "",
            FeedbackAuthor::HumanExpert,
            &exists,
            &studio.erag,
            &synth,
            0.6,
        )
        .unwrap();
    assert!(third.feedback.is_none());
    assert_eq!(third.record.overall.unwrap().reported, 70.10);
    assert!(book.export_table().contains("\"review-3\""));
}

#[test]
fn failed_reviews_store_nothing() {
    let studio = common::studio();
    let synth = studio.synthesizer();
    let book = ScoreBook::in_memory(Arc::new(FixedClock::new(5)));
    let err = book
        .ingest_review(node("ghost"), None, "text", FeedbackAuthor::HumanExpert, &|_| false, &studio.erag, &synth, 0.6)
        .unwrap_err();
    assert!(matches!(err, EvalError::UnknownTarget(_)));
    let err = book
        .ingest_review(
            node("title"),
            Some(DimensionScores::Script(ScriptScores::new(101.0, 0.0, 0.0))),
            "text",
            FeedbackAuthor::HumanExpert,
            &|_| true,
            &studio.erag,
            &synth,
            0.6,
        )
        .unwrap_err();
    assert!(matches!(err, EvalError::ScoreOutOfRange { .. }));
    assert!(book.records().is_empty());
    assert!(studio.erag.is_empty());
}

#[test]
fn score_book_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.log");
    let studio = common::studio();
    let synth = studio.synthesizer();
    {
        let book = ScoreBook::open(&path, Arc::new(FixedClock::new(1))).unwrap();
        book.ingest_review(node("title"), None, "shorter titles", FeedbackAuthor::HumanExpert, &|_| true, &studio.erag, &synth, 0.6)
            .unwrap();
    }
    let book = ScoreBook::open(&path, Arc::new(FixedClock::new(2))).unwrap();
    assert_eq!(book.records().len(), 1);
    let next = book
        .ingest_review(node("title"), None, "", FeedbackAuthor::HumanExpert, &|_| true, &studio.erag, &synth, 0.6)
        .unwrap();
    assert_eq!(next.record.id, "review-2");
}
