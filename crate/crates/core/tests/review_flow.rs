mod common;

use std::sync::Arc;

use discourse_core::jobs::{JobKind, JobParams};
use discourse_core::prompting::AnnotationTask;
use discourse_core::review::{ReviewDecision, Verdict};
use discourse_core::Error;
use serde_json::json;

use common::*;

fn decision(p: usize, task: AnnotationTask, reviewer: &str, verdict: Verdict, value: Option<serde_json::Value>) -> ReviewDecision {
    ReviewDecision {
        schema_version: 1,
        speech_id: "s001".into(),
        paragraph_index: p,
        task,
        reviewer_id: reviewer.into(),
        verdict,
        submitted_at: "2023-05-02T10:00:00Z".parse().unwrap(),
        corrected_value: value,
    }
}

fn annotated_s001() -> discourse_core::pipeline::Pipeline {
    let p = pipeline();
    p.ingest_dir(&fixtures().join("speeches")).unwrap();
    p.translate("s001", "identity").unwrap();
    p.annotate("s001", &AnnotationTask::ALL, "stub").unwrap();
    p
}

#[test]
fn finalize_with_pending_reviews_lists_them() {
    let p = annotated_s001();
    match p.finalize("s001") {
        Err(Error::FinalizationIncomplete { pending, escalated, .. }) => {
            assert_eq!(pending.len(), 120);
            assert!(escalated.is_empty());
            assert_eq!(pending[0].to_string(), "s001#0/stance");
        }
        other => panic!("expected finalization_incomplete, got {other:?}"),
    }
    let status = p.review_status("s001").unwrap();
    assert!(!status.finalizable);
    assert_eq!(status.annotations, 120);
}

#[test]
fn decisions_are_validated_against_queue_and_annotation() {
    let p = annotated_s001();
    let queue = p.store().queue("s001");
    let assigned: Vec<&str> = queue
        .iter()
        .filter(|q| q.paragraph_index == 0 && q.task == AnnotationTask::Polarization)
        .map(|q| q.reviewer_id.as_str())
        .collect();
    assert_eq!(assigned.len(), 2);

    let missing = decision(0, AnnotationTask::Polarization, assigned[0], Verdict::Correct, None);
    assert_eq!(p.submit_decision(missing).unwrap_err().code(), "validation");

    let not_band = decision(0, AnnotationTask::Polarization, assigned[0], Verdict::Correct, Some(json!(0.6)));
    assert_eq!(p.submit_decision(not_band).unwrap_err().code(), "validation");

    let unassigned = ["j-anna", "j-nikos", "ps-antonis"].into_iter().find(|r| !assigned.contains(r)).unwrap();
    let err = p.submit_decision(decision(0, AnnotationTask::Polarization, unassigned, Verdict::Accept, None)).unwrap_err();
    assert!(err.to_string().contains("not assigned"), "{err}");

    let err = p.submit_decision(decision(99, AnnotationTask::Polarization, assigned[0], Verdict::Accept, None)).unwrap_err();
    assert_eq!(err.code(), "not_found");

    let ok = p.submit_decision(decision(0, AnnotationTask::Polarization, assigned[0], Verdict::Accept, None)).unwrap();
    assert!(!ok.duplicate);
    let again = p.submit_decision(decision(0, AnnotationTask::Polarization, assigned[0], Verdict::Accept, None)).unwrap();
    assert!(again.duplicate);
    assert_eq!(p.store().decisions("s001").len(), 1);
}

#[test]
fn disagreement_escalates_until_admin_rules() {
    let p = annotated_s001();
    let queue = p.store().queue("s001");
    let assigned: Vec<String> = queue
        .iter()
        .filter(|q| q.paragraph_index == 3 && q.task == AnnotationTask::Stance)
        .map(|q| q.reviewer_id.clone())
        .collect();
    let machine = p.store().annotations("s001", Some(AnnotationTask::Stance))[3].value.to_json();
    let flipped = if machine == json!("criticism") { json!("political_agenda") } else { json!("criticism") };
    p.submit_decision(decision(3, AnnotationTask::Stance, &assigned[0], Verdict::Accept, None)).unwrap();
    let out = p
        .submit_decision(decision(3, AnnotationTask::Stance, &assigned[1], Verdict::Correct, Some(flipped.clone())))
        .unwrap();
    assert_eq!(out.status, discourse_core::pipeline::EntryStatus::Escalated);
    let admin_queue = p.review_queue("adm-eleni", Some("s001")).unwrap();
    assert_eq!(admin_queue.len(), 1);
    assert_eq!(admin_queue[0].reason, "escalated");
    let out = p.submit_decision(decision(3, AnnotationTask::Stance, "adm-eleni", Verdict::Correct, Some(flipped))).unwrap();
    assert_eq!(out.status, discourse_core::pipeline::EntryStatus::Resolved);
    assert!(p.review_queue("adm-eleni", Some("s001")).unwrap().is_empty());
}

#[test]
fn concurrent_submissions_keep_every_decision() {
    let p = Arc::new(annotated_s001());
    let queue = p.store().queue("s001");
    std::thread::scope(|scope| {
        for chunk in queue.chunks(queue.len() / 8 + 1) {
            let p = p.clone();
            scope.spawn(move || {
                for q in chunk {
                    p.submit_decision(decision(q.paragraph_index, q.task, &q.reviewer_id, Verdict::Accept, None)).unwrap();
                }
            });
        }
    });
    assert_eq!(p.store().decisions("s001").len(), queue.len());
    let set = p.finalize("s001").unwrap();
    assert_eq!(set.version, 1);
    assert!(set.entries.iter().all(|e| !e.was_corrected));
    // Re-finalizing appends a new version and leaves the first untouched.
    let v2 = p.finalize("s001").unwrap();
    assert_eq!(v2.version, 2);
    assert_eq!(p.store().validated_version("s001", 1).unwrap(), set);
}

#[test]
fn reviewer_queue_shrinks_as_they_decide() {
    let p = annotated_s001();
    let before = p.review_queue("j-anna", None).unwrap();
    assert!(!before.is_empty());
    let first = &before[0];
    assert!(first.translated_text.is_some());
    p.submit_decision(decision(first.paragraph_index, first.task, "j-anna", Verdict::Accept, None)).unwrap();
    assert_eq!(p.review_queue("j-anna", None).unwrap().len(), before.len() - 1);
    assert_eq!(p.review_queue("nobody", None).unwrap_err().code(), "not_found");
}

#[test]
fn one_annotate_job_per_speech() {
    let p = pipeline();
    p.ingest_dir(&fixtures().join("speeches")).unwrap();
    let params = JobParams { provider: Some("stub".into()), tasks: vec![AnnotationTask::Stance] };
    let job = p.create_job(JobKind::Annotate, "s001", params.clone()).unwrap();
    assert_eq!(p.create_job(JobKind::Annotate, "s001", params.clone()).unwrap_err().code(), "conflict");
    assert!(p.create_job(JobKind::Annotate, "s002", params.clone()).is_ok());
    // Untranslated speech: prompts cannot be built, so the job fails.
    let done = p.run_job(&job.job_id).unwrap();
    assert_eq!(done.status.as_str(), "failed");
    assert!(done.error.is_some());
    assert_eq!(p.run_job(&job.job_id).unwrap_err().code(), "conflict");
    assert!(p.create_job(JobKind::Annotate, "s001", params).is_ok());
}

#[test]
fn unknown_ids_are_not_found() {
    let p = pipeline();
    p.ingest_dir(&fixtures().join("speeches")).unwrap();
    assert_eq!(p.translate("nope", "identity").unwrap_err().code(), "not_found");
    assert_eq!(p.annotate("s001", &[AnnotationTask::Stance], "gpt-9").unwrap_err().code(), "not_found");
    assert_eq!(p.finalize("nope").unwrap_err().code(), "not_found");
    assert_eq!(p.ingest_dir(&fixtures().join("speeches")).unwrap_err().code(), "conflict");
}
