//! Checks for each acceptance criterion. Each returns a short detail line on
//! success and a description of the first violation otherwise.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use discourse_core::classify::{BandConfig, IntensityBand, SentimentBand};
use discourse_core::corpus::{ElectionPeriod, Speech, SpeechKind, SpeechManifest};
use discourse_core::metrics::{
    mean_present, paragraphs, stance_shares, summarize, task_accuracy, topic_shares, Dataset, Selector, SpeechRecord,
    StanceWeighting, TopicScope,
};
use discourse_core::prompting::{
    run_annotation_job, AnnotationJob, AnnotationTask, AnnotationValue, FlakyProvider, JobPolicy, LlmProvider,
    RawAnnotation, Stance,
};
use discourse_core::review::{
    enqueue_reviews, AnnotationRef, ReviewDecision, ReviewState, Reviewer, ReviewerRole, ValidatedSet, Verdict,
};
use discourse_core::store::Store;
use discourse_core::vizdata::{ChartKind, ChartOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::*;

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn fixture_end_to_end() -> Check {
    let started = Instant::now();
    let p = pipeline();
    finalized(&p);
    let csv = p.accuracy(&Selector::All).map_err(|e| e.to_string())?.to_csv();
    let want = std::fs::read_to_string(fixtures().join("oracle/accuracy.csv")).map_err(|e| e.to_string())?;
    ensure(csv == want, || format!("accuracy report differs from oracle:\n{csv}"))?;
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{} speeches, report equals oracle, {:.2}s", speech_ids(&p).len(), elapsed.as_secs_f64()))
}

pub fn banding_grid() -> Check {
    let bands = BandConfig::default();
    let sentiment_zones = bands.sentiment_zones();
    let mut last = 0;
    for i in -100..=100 {
        let x = i as f64 / 100.0;
        let band = bands.sentiment_band(x).map_err(|e| format!("{x}: {e}"))?;
        let hits = sentiment_zones.iter().filter(|z| z.range[0] <= x && x <= z.range[1]).count();
        ensure(hits == 1, || format!("sentiment {x} lies in {hits} zones"))?;
        ensure(band.index() >= last, || format!("sentiment band decreases at {x}"))?;
        last = band.index();
    }
    let intensity_zones = bands.intensity_zones();
    let mut last = 0;
    for i in 0..=100 {
        let x = i as f64 / 100.0;
        let band = bands.intensity_band(x).map_err(|e| format!("{x}: {e}"))?;
        let hits = intensity_zones.iter().filter(|z| z.range[0] <= x && x <= z.range[1]).count();
        ensure(hits == 1, || format!("intensity {x} lies in {hits} zones"))?;
        ensure(band.index() >= last, || format!("intensity band decreases at {x}"))?;
        last = band.index();
    }
    for b in IntensityBand::ALL {
        let back = bands.intensity_band(bands.corrective_value(b)).map_err(|e| e.to_string())?;
        ensure(back == b, || format!("corrective value of {b} bands as {back}"))?;
    }
    Ok("201 sentiment and 101 intensity points, 3 corrective round trips".into())
}

/// A synthetic speech with the given paragraph word counts, translated
/// onto itself.
pub fn synthetic_speech(id: &str, date: &str, words: &[usize]) -> Speech {
    let body: Vec<String> = words.iter().map(|&n| vec!["word"; n].join(" ")).collect();
    let manifest = SpeechManifest {
        id: id.into(),
        leader_id: "leader".into(),
        date: date.parse().unwrap(),
        election_period: ElectionPeriod::First,
        venue: "venue".into(),
        source: "synthetic".into(),
        original_language: "en".into(),
        kind: SpeechKind::CampaignSpeech,
        duration_minutes: None,
    };
    let mut s = Speech::from_manifest(manifest, &body.join("\n\n")).unwrap();
    for p in &mut s.paragraphs {
        p.translated_text = Some(p.original_text.clone());
    }
    s
}

fn reviewers() -> Vec<Reviewer> {
    let r = |id: &str, role| Reviewer { id: id.into(), display_name: id.into(), role };
    vec![
        r("adm", ReviewerRole::Admin),
        r("j-a", ReviewerRole::Journalist),
        r("j-b", ReviewerRole::Journalist),
        r("ps", ReviewerRole::PoliticalScientist),
    ]
}

/// A randomized reviewed speech: machine values, the verdict recorded for
/// each entry and the finalized set produced through the review path.
pub struct Case {
    pub speech: Speech,
    pub annotations: Vec<RawAnnotation>,
    /// Per annotation: the band or label a correction moved it to.
    pub corrected_to: Vec<Option<Value>>,
    pub set: ValidatedSet,
}

const TOPICS: [&str; 4] = ["economy", "healthcare", "migration", "energy"];
const STANCES: [Stance; 2] = [Stance::Criticism, Stance::PoliticalAgenda];

fn other<T: Copy + PartialEq>(rng: &mut ChaCha8Rng, all: &[T], not: T) -> T {
    let rest: Vec<T> = all.iter().copied().filter(|x| *x != not).collect();
    rest[rng.random_range(0..rest.len())]
}

pub fn random_case(rng: &mut ChaCha8Rng, id: &str) -> Case {
    let bands = BandConfig::default();
    let n = rng.random_range(1..=8);
    let words: Vec<usize> = (0..n).map(|_| rng.random_range(1..=120)).collect();
    let speech = synthetic_speech(id, "2023-05-01", &words);
    let created_at = "2023-05-01T00:00:00Z".parse().unwrap();
    let mut annotations = Vec::new();
    let mut corrected_to = Vec::new();
    for p in 0..n {
        let sentiment = rng.random_range(-100..=100) as f64 / 100.0;
        let pol = rng.random_range(0..=100) as f64 / 100.0;
        let pop = rng.random_range(0..=100) as f64 / 100.0;
        let topic = TOPICS[rng.random_range(0..TOPICS.len())];
        let stance = STANCES[rng.random_range(0..2)];
        let values = [
            AnnotationValue::Stance(stance),
            AnnotationValue::Topic(topic.into()),
            AnnotationValue::Sentiment(sentiment),
            AnnotationValue::Polarization(pol),
            AnnotationValue::Populism(pop),
        ];
        for value in values {
            let correct = rng.random_bool(0.3);
            let corrected = if !correct {
                None
            } else {
                Some(match &value {
                    AnnotationValue::Stance(s) => json!(other(rng, &STANCES, *s)),
                    AnnotationValue::Topic(t) => json!(other(rng, &TOPICS, t.as_str())),
                    AnnotationValue::Sentiment(x) => {
                        json!(other(rng, &SentimentBand::ALL, bands.sentiment_band(*x).unwrap()).as_str())
                    }
                    AnnotationValue::Polarization(x) | AnnotationValue::Populism(x) => {
                        json!(other(rng, &IntensityBand::ALL, bands.intensity_band(*x).unwrap()).as_str())
                    }
                    AnnotationValue::Ner(_) => unreachable!(),
                })
            };
            corrected_to.push(corrected);
            annotations.push(RawAnnotation {
                speech_id: id.into(),
                paragraph_index: p,
                value,
                provider_name: "stub".into(),
                raw_response: String::new(),
                created_at,
            });
        }
    }

    let reviewers = reviewers();
    let targets: Vec<AnnotationRef> = annotations.iter().map(AnnotationRef::of).collect();
    let queue = enqueue_reviews(&targets, &reviewers, &Default::default()).unwrap();
    let mut decisions = Vec::new();
    for (a, corrected) in annotations.iter().zip(&corrected_to) {
        let target = AnnotationRef::of(a);
        // Either the assigned reviewers agree, or an admin rules alone.
        let deciders: Vec<String> = if rng.random_bool(0.2) {
            vec!["adm".into()]
        } else {
            queue.iter().filter(|q| q.target() == target).map(|q| q.reviewer_id.clone()).collect()
        };
        for reviewer_id in deciders {
            decisions.push(ReviewDecision {
                schema_version: 1,
                speech_id: id.into(),
                paragraph_index: a.paragraph_index,
                task: a.task(),
                reviewer_id,
                verdict: if corrected.is_some() { Verdict::Correct } else { Verdict::Accept },
                submitted_at: created_at,
                corrected_value: corrected.clone(),
            });
        }
    }
    let state = ReviewState {
        annotations: &annotations,
        queue: &queue,
        decisions: &decisions,
        reviewers: &reviewers,
        taxonomy: &discourse_core::prompting::TopicTaxonomy {
            topics: TOPICS
                .iter()
                .map(|t| discourse_core::prompting::Topic { topic_id: t.to_string(), label: t.to_string() })
                .collect(),
        },
        bands: &bands,
    };
    let set = state.finalize(id, 1, created_at).unwrap();
    Case { speech, annotations, corrected_to, set }
}

fn brute_mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for x in xs {
        total += x;
    }
    Some(total / xs.len() as f64)
}

pub fn correction_policy() -> Check {
    let bands = BandConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut corrected_intensity, mut missing) = (0, 0);
    for case_no in 0..1000 {
        let case = random_case(&mut rng, &format!("c{case_no}"));
        let mut kept = Vec::new();
        for ((a, corrected), e) in case.annotations.iter().zip(&case.corrected_to).zip(&case.set.entries) {
            let at = || format!("case {case_no} {}", AnnotationRef::of(a));
            match (a.task(), corrected) {
                (AnnotationTask::Polarization | AnnotationTask::Populism, Some(band)) => {
                    corrected_intensity += 1;
                    let v = e.final_score().ok_or_else(|| format!("{}: corrected intensity is missing", at()))?;
                    ensure([0.0, 0.6, 0.9].contains(&v), || format!("{}: final {v} not a corrective value", at()))?;
                    let got = bands.intensity_band(v).map_err(|e| e.to_string())?;
                    ensure(got.as_str() == band.as_str().unwrap(), || format!("{}: {v} not in band {band}", at()))?;
                }
                (AnnotationTask::Sentiment, Some(_)) => {
                    missing += 1;
                    ensure(e.final_value.is_none(), || format!("{}: corrected sentiment not missing", at()))?;
                }
                (AnnotationTask::Sentiment, None) => kept.push(a.value.score().unwrap()),
                _ => {}
            }
        }
        let want = brute_mean(&kept);
        let via_entries = mean_present(
            case.set.entries.iter().filter(|e| e.task() == AnnotationTask::Sentiment).map(|e| e.final_score()),
        );
        let dataset = Dataset::new(vec![SpeechRecord { speech: case.speech.clone(), validated: Some(case.set.clone()) }]);
        let summary = summarize(&dataset, &Selector::Speech(case.speech.id.clone()), &bands).map_err(|e| e.to_string())?;
        for (what, got) in [("entries", via_entries), ("summary", summary.mean_sentiment)] {
            let ok = match (got, want) {
                (None, None) => true,
                (Some(g), Some(w)) => (g - w).abs() <= 1e-12,
                _ => false,
            };
            ensure(ok, || format!("case {case_no}: {what} mean {got:?} != brute force {want:?}"))?;
        }
    }
    Ok(format!("1000 cases, {corrected_intensity} corrected intensity values, {missing} missing sentiments"))
}

pub fn accuracy_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case_no in 0..1000 {
        let case = random_case(&mut rng, &format!("a{case_no}"));
        for task in [
            AnnotationTask::Sentiment,
            AnnotationTask::Topic,
            AnnotationTask::Polarization,
            AnnotationTask::Populism,
            AnnotationTask::Stance,
        ] {
            let row = task_accuracy(&case.set.entries, task).map_err(|e| e.to_string())?;
            let n = case.annotations.iter().filter(|a| a.task() == task).count();
            let corrections = case
                .annotations
                .iter()
                .zip(&case.corrected_to)
                .filter(|(a, c)| a.task() == task && c.is_some())
                .count();
            ensure(row.n_paragraphs == n && row.unchanged == n - corrections, || {
                format!("case {case_no} {task}: {}/{} unchanged, recount {}/{n}", row.unchanged, row.n_paragraphs, n - corrections)
            })?;
            let exact = (n - corrections) as f64 / n as f64;
            ensure(row.accuracy == exact, || format!("case {case_no} {task}: {} != {exact}", row.accuracy))?;
            ensure((row.accuracy - (1.0 - corrections as f64 / n as f64)).abs() <= f64::EPSILON, || {
                format!("case {case_no} {task}: {} != 1 - {corrections}/{n}", row.accuracy)
            })?;
        }
    }
    Ok("1000 sets, 5 tasks each, recount identical".into())
}

pub fn share_normalization() -> Check {
    let bands = BandConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case_no in 0..500 {
        let cases: Vec<Case> = (0..rng.random_range(1..=3)).map(|i| random_case(&mut rng, &format!("n{case_no}-{i}"))).collect();
        let records: Vec<SpeechRecord> =
            cases.iter().map(|c| SpeechRecord { speech: c.speech.clone(), validated: Some(c.set.clone()) }).collect();
        let dataset = Dataset::new(records);
        let scope = dataset.select(&Selector::All).map_err(|e| e.to_string())?;
        let views = paragraphs(&scope);
        let close = |x: f64| (x - 1.0).abs() <= 1e-9;
        let t: f64 = topic_shares(&views, TopicScope::All).map_err(|e| e.to_string())?.values().sum();
        ensure(close(t), || format!("case {case_no}: topic shares sum to {t}"))?;
        if let Ok(agenda) = topic_shares(&views, TopicScope::AgendaOnly) {
            let a: f64 = agenda.values().sum();
            ensure(close(a), || format!("case {case_no}: agenda topic shares sum to {a}"))?;
        }
        for w in [StanceWeighting::Words, StanceWeighting::Paragraphs] {
            let s = stance_shares(&views, w).map_err(|e| e.to_string())?;
            ensure(close(s.criticism + s.political_agenda), || format!("case {case_no}: stance shares {s:?}"))?;
        }
        let _ = summarize(&dataset, &Selector::All, &bands).map_err(|e| e.to_string())?;
    }
    treemap_example()?;
    Ok("500 random scopes; 100/300-word treemap gives 0.25/0.75".into())
}

/// Two paragraphs of 100 and 300 words on different topics.
pub fn treemap_example() -> Result<(), String> {
    let speech = synthetic_speech("t1", "2023-05-01", &[100, 300]);
    let created_at = "2023-05-01T00:00:00Z".parse().unwrap();
    let entries = [(0, "economy"), (1, "healthcare")]
        .into_iter()
        .map(|(p, topic)| {
            let value = AnnotationValue::Topic(topic.into());
            discourse_core::review::ValidatedAnnotation {
                speech_id: "t1".into(),
                paragraph_index: p,
                machine_value: value.clone(),
                final_value: Some(value),
                was_corrected: false,
                human_category: topic.into(),
                resolved_by_admin: false,
                decisions: vec![],
            }
        })
        .collect();
    let set = ValidatedSet { schema_version: 1, speech_id: "t1".into(), version: 1, finalized_at: created_at, entries };
    let dataset = Dataset::new(vec![SpeechRecord { speech, validated: Some(set) }]);
    let scope = dataset.select(&Selector::All).map_err(|e| e.to_string())?;
    let shares = topic_shares(&paragraphs(&scope), TopicScope::All).map_err(|e| e.to_string())?;
    ensure(shares["economy"] == 0.25 && shares["healthcare"] == 0.75, || format!("shares {shares:?}"))?;

    let taxonomy = prompts().taxonomy;
    let leaders = vec![];
    let ctx = discourse_core::vizdata::VizContext {
        dataset: &dataset,
        leaders: &leaders,
        taxonomy: &taxonomy,
        bands: &BandConfig::default(),
        options: ChartOptions::default(),
    };
    let chart = ctx.chart_data(ChartKind::Treemap, &Selector::All).map_err(|e| e.to_string())?;
    let cells = chart.payload["cells"].as_array().cloned().unwrap_or_default();
    let share = |id: &str| cells.iter().find(|c| c["topic_id"] == id).and_then(|c| c["share"].as_f64());
    ensure(share("economy") == Some(0.25) && share("healthcare") == Some(0.75), || format!("treemap {cells:?}"))?;
    Ok(())
}

pub fn prompt_leakage() -> Check {
    let p = pipeline();
    p.ingest_dir(&fixtures().join("speeches")).unwrap();
    let leaders = p.store().leaders();
    let mut prompts = p.prompts().clone();
    for l in &leaders {
        prompts.blocklist.extend(l.identity_terms());
    }
    let policy = JobPolicy { record_prompts: true, ..p.config().jobs.clone() };
    let (mut free, mut named) = (0, 0);
    for id in speech_ids(&p) {
        p.translate(&id, "identity").unwrap();
        let speech = p.store().get_speech(&id).unwrap();
        let leader = p.store().get_leader(&speech.leader_id).unwrap();
        let job = AnnotationJob {
            speech: &speech,
            leader: &leader,
            tasks: AnnotationTask::ALL.to_vec(),
            config: &prompts,
            existing: Default::default(),
        };
        let provider = stub(&prompts);
        let outcome = run_annotation_job(&job, &provider, &policy, p.clock(), &mut |_| Ok(())).map_err(|e| e.to_string())?;
        ensure(outcome.prompts.len() >= speech.paragraphs.len() * 6, || format!("{id}: only {} prompts recorded", outcome.prompts.len()))?;
        for rec in &outcome.prompts {
            let b = &rec.bundle;
            if b.task.is_identity_free() {
                free += 1;
                let ctx = b.system_context.to_lowercase();
                for l in &leaders {
                    for term in l.identity_terms() {
                        ensure(!ctx.contains(&term.to_lowercase()), || {
                            format!("{id}#{} {}: system context names '{term}'", rec.paragraph_index, b.task)
                        })?;
                    }
                }
            }
            if b.task.requires_identity() {
                named += 1;
                ensure(b.system_context.contains(&leader.role_description), || {
                    format!("{id}#{} {}: role description missing", rec.paragraph_index, b.task)
                })?;
            }
        }
    }
    Ok(format!("{free} identity-free bundles clean, {named} stance/topic bundles carry the role description"))
}

pub fn chart_selectors() -> Vec<(ChartKind, Selector)> {
    let s = |x: &str| x.parse::<Selector>().unwrap();
    vec![
        (ChartKind::Treemap, s("all")),
        (ChartKind::Treemap, s("speech:s001")),
        (ChartKind::Speedometer, s("all")),
        (ChartKind::Speedometer, s("leader:tsipras@second")),
        (ChartKind::SentimentLine, s("speech:s001")),
        (ChartKind::SentimentLine, s("leaders:mitsotakis,tsipras@first")),
        (ChartKind::IntensityStep, s("speech:s004")),
        (ChartKind::IntensityStep, s("period:second")),
        (ChartKind::Heatmap, s("all")),
        (ChartKind::EntityDendrogram, s("leader:mitsotakis")),
        (ChartKind::WillBar, s("all")),
    ]
}

fn run_outputs() -> Result<(Vec<u8>, Vec<Vec<u8>>), String> {
    let p = pipeline();
    finalized(&p);
    let mut raw = Vec::new();
    for id in speech_ids(&p) {
        for a in p.store().annotations(&id, None) {
            serde_json::to_writer(&mut raw, &a).unwrap();
            raw.push(b'\n');
        }
    }
    let charts = chart_selectors()
        .into_iter()
        .map(|(k, s)| p.chart(k, &s, ChartOptions::default()).map(|c| c.to_json_bytes()).map_err(|e| format!("{k:?} {s}: {e}")))
        .collect::<Result<_, _>>()?;
    Ok((raw, charts))
}

pub fn determinism() -> Check {
    let (raw_a, charts_a) = run_outputs()?;
    let (raw_b, charts_b) = run_outputs()?;
    ensure(raw_a == raw_b, || "raw annotation sets differ between runs".into())?;
    for (i, (a, b)) in charts_a.iter().zip(&charts_b).enumerate() {
        ensure(a == b, || format!("chart {:?} differs between runs", chart_selectors()[i]))?;
    }
    Ok(format!("{} raw annotation bytes and {} chart payloads identical", raw_a.len(), charts_a.len()))
}

pub fn resumability() -> Check {
    let prompts = prompts();
    let clean = pipeline();
    clean.ingest_dir(&fixtures().join("speeches")).unwrap();
    clean.translate("s001", "identity").unwrap();
    clean.annotate("s001", &AnnotationTask::ALL, "stub").map_err(|e| e.to_string())?;
    let want = clean.store().annotations("s001", None);

    let flaky = Arc::new(FlakyProvider::new(Arc::new(stub(&prompts)), [17, 58, 93]));
    let p = pipeline_with(Store::in_memory(), Some(flaky.clone() as Arc<dyn LlmProvider>));
    p.ingest_dir(&fixtures().join("speeches")).unwrap();
    p.translate("s001", "identity").unwrap();
    let first = p.annotate("s001", &AnnotationTask::ALL, "stub").map_err(|e| e.to_string())?;
    ensure(first.status.as_str() == "partial" && first.failure_manifest.len() == 3, || {
        format!("first run: {} with {} failures", first.status, first.failure_manifest.len())
    })?;
    let before = flaky.calls();
    let second = p.annotate("s001", &AnnotationTask::ALL, "stub").map_err(|e| e.to_string())?;
    let extra = flaky.calls() - before;
    ensure(second.status.as_str() == "complete", || format!("second run ended {}", second.status))?;
    ensure(extra == 3, || format!("re-run issued {extra} provider calls"))?;
    let got = p.store().annotations("s001", None);
    ensure(got == want, || "resumed annotation set differs from an uninterrupted run".into())?;
    let tasks: BTreeSet<_> = got.iter().map(|a| a.task()).collect();
    Ok(format!("3 failures, re-run made {extra} calls, {} annotations over {} tasks match", got.len(), tasks.len()))
}
