//! Accuracy report and corpus aggregates over finalized validated sets.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::classify::{BandConfig, SentimentBand};
use crate::corpus::{ElectionPeriod, Paragraph, Speech};
use crate::prompting::{AnnotationTask, AnnotationValue, Stance};
use crate::review::{ValidatedAnnotation, ValidatedSet};

/// Tasks of the default accuracy report, in report order.
pub const REPORT_TASKS: [AnnotationTask; 5] = [
    AnnotationTask::Sentiment,
    AnnotationTask::Topic,
    AnnotationTask::Polarization,
    AnnotationTask::Populism,
    AnnotationTask::Stance,
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no validated {0} annotations in scope")]
    EmptySet(AnnotationTask),
    #[error("empty scope: {0}")]
    EmptyScope(String),
    #[error("speech '{0}' has no translation")]
    Untranslated(String),
    #[error("unknown speech '{0}'")]
    UnknownSpeech(String),
    #[error("unknown leader '{0}'")]
    UnknownLeader(String),
    #[error("speech '{0}' has not been finalized")]
    NotFinalized(String),
    #[error("invalid selector '{input}': {message}")]
    InvalidSelector { input: String, message: String },
}

impl MetricsError {
    pub fn is_not_found(&self) -> bool {
        matches!(self, Self::UnknownSpeech(_) | Self::UnknownLeader(_))
    }
}

/// Which speeches a query covers.
///
/// Text form: `all`, `speech:ID`, `leader:ID[@period]`,
/// `leaders:A,B[@period]`, `period:first|second`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Selector {
    All,
    Speech(String),
    Leaders { ids: Vec<String>, period: Option<ElectionPeriod> },
    Period(ElectionPeriod),
}

impl Selector {
    pub fn leader(id: impl Into<String>, period: Option<ElectionPeriod>) -> Self {
        Selector::Leaders { ids: vec![id.into()], period }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::All => f.write_str("all"),
            Selector::Speech(id) => write!(f, "speech:{id}"),
            Selector::Period(p) => write!(f, "period:{p}"),
            Selector::Leaders { ids, period } => {
                let head = if ids.len() == 1 { "leader" } else { "leaders" };
                write!(f, "{head}:{}", ids.join(","))?;
                if let Some(p) = period {
                    write!(f, "@{p}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for Selector {
    type Err = MetricsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |message: &str| MetricsError::InvalidSelector { input: s.to_string(), message: message.to_string() };
        let s_trim = s.trim();
        if s_trim == "all" {
            return Ok(Selector::All);
        }
        let (kind, rest) = s_trim.split_once(':').ok_or_else(|| bad("expected all or <kind>:<value>"))?;
        let period = |p: &str| p.parse::<ElectionPeriod>().map_err(|_| bad("period must be first or second"));
        match kind {
            "speech" if !rest.is_empty() => Ok(Selector::Speech(rest.to_string())),
            "period" => Ok(Selector::Period(period(rest)?)),
            "leader" | "leaders" => {
                let (ids, p) = match rest.split_once('@') {
                    Some((ids, p)) => (ids, Some(period(p)?)),
                    None => (rest, None),
                };
                let ids: Vec<String> = ids.split(',').map(str::trim).filter(|i| !i.is_empty()).map(String::from).collect();
                if ids.is_empty() {
                    return Err(bad("no leader id"));
                }
                if kind == "leader" && ids.len() != 1 {
                    return Err(bad("use leaders: for more than one leader"));
                }
                Ok(Selector::Leaders { ids, period: p })
            }
            _ => Err(bad("unknown selector kind")),
        }
    }
}

impl Serialize for Selector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Selector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A speech and, once finalized, its latest validated set.
#[derive(Debug, Clone)]
pub struct SpeechRecord {
    pub speech: Speech,
    pub validated: Option<ValidatedSet>,
}

/// The analysable corpus: speeches ordered by (date, id).
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    records: Vec<SpeechRecord>,
}

/// A finalized speech in scope.
#[derive(Debug, Clone, Copy)]
pub struct Finalized<'a> {
    pub speech: &'a Speech,
    pub set: &'a ValidatedSet,
}

impl<'a> Finalized<'a> {
    pub fn paragraphs(self) -> impl Iterator<Item = ParagraphView<'a>> {
        self.speech.paragraphs.iter().map(move |paragraph| ParagraphView { speech: self.speech, paragraph, set: self.set })
    }
}

impl Dataset {
    pub fn new(mut records: Vec<SpeechRecord>) -> Self {
        records.sort_by(|a, b| (a.speech.date, &a.speech.id).cmp(&(b.speech.date, &b.speech.id)));
        Self { records }
    }

    pub fn records(&self) -> &[SpeechRecord] {
        &self.records
    }

    /// Finalized speeches matched by `selector`, by date. A speech selector
    /// naming an unfinalized speech is an error; group selectors skip
    /// unfinalized speeches and fail only if nothing is left.
    pub fn select(&self, selector: &Selector) -> Result<Vec<Finalized<'_>>, MetricsError> {
        let matched: Vec<&SpeechRecord> = match selector {
            Selector::All => self.records.iter().collect(),
            Selector::Speech(id) => {
                let r = self
                    .records
                    .iter()
                    .find(|r| &r.speech.id == id)
                    .ok_or_else(|| MetricsError::UnknownSpeech(id.clone()))?;
                if r.validated.is_none() {
                    return Err(MetricsError::NotFinalized(id.clone()));
                }
                vec![r]
            }
            Selector::Period(p) => self.records.iter().filter(|r| r.speech.election_period == *p).collect(),
            Selector::Leaders { ids, period } => {
                for id in ids {
                    if !self.records.iter().any(|r| &r.speech.leader_id == id) {
                        return Err(MetricsError::UnknownLeader(id.clone()));
                    }
                }
                self.records
                    .iter()
                    .filter(|r| ids.contains(&r.speech.leader_id))
                    .filter(|r| period.is_none_or(|p| r.speech.election_period == p))
                    .collect()
            }
        };
        let out: Vec<Finalized<'_>> = matched
            .into_iter()
            .filter_map(|r| r.validated.as_ref().map(|set| Finalized { speech: &r.speech, set }))
            .collect();
        if out.is_empty() {
            return Err(MetricsError::EmptyScope(format!("no finalized speeches match {selector}")));
        }
        Ok(out)
    }
}

/// One paragraph with its validated annotations.
#[derive(Debug, Clone, Copy)]
pub struct ParagraphView<'a> {
    pub speech: &'a Speech,
    pub paragraph: &'a Paragraph,
    pub set: &'a ValidatedSet,
}

impl<'a> ParagraphView<'a> {
    pub fn entry(&self, task: AnnotationTask) -> Option<&'a ValidatedAnnotation> {
        self.set.get(self.paragraph.index, task)
    }

    pub fn final_value(&self, task: AnnotationTask) -> Option<&'a AnnotationValue> {
        self.entry(task).and_then(|e| e.final_value.as_ref())
    }

    pub fn topic(&self) -> Option<&'a str> {
        match self.final_value(AnnotationTask::Topic) {
            Some(AnnotationValue::Topic(t)) => Some(t),
            _ => None,
        }
    }

    pub fn stance(&self) -> Option<Stance> {
        match self.final_value(AnnotationTask::Stance) {
            Some(AnnotationValue::Stance(s)) => Some(*s),
            _ => None,
        }
    }

    pub fn score(&self, task: AnnotationTask) -> Option<f64> {
        self.final_value(task).and_then(AnnotationValue::score)
    }
}

pub fn paragraphs<'a>(scope: &[Finalized<'a>]) -> Vec<ParagraphView<'a>> {
    scope.iter().flat_map(|f| f.paragraphs()).collect()
}

/// Arithmetic mean of the present values, summed in order. `None` when no
/// value is present.
pub fn mean_present(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.into_iter().flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Normalized weights per key. `None` when the total weight is zero.
pub fn weighted_shares<K: Ord>(items: impl IntoIterator<Item = (K, u64)>) -> Option<BTreeMap<K, f64>> {
    let mut num: BTreeMap<K, u64> = BTreeMap::new();
    let mut den = 0u64;
    for (k, w) in items {
        *num.entry(k).or_default() += w;
        den += w;
    }
    (den > 0).then(|| num.into_iter().map(|(k, w)| (k, w as f64 / den as f64)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub task: AnnotationTask,
    pub accuracy: f64,
    pub most_prevalent_category: String,
    pub baseline_frequency: f64,
    pub n_paragraphs: usize,
    pub unchanged: usize,
    pub modal_count: usize,
}

/// Accuracy of the machine annotations for one task: the fraction left
/// unchanged by review. The baseline is the frequency of the most common
/// human-final category (ties go to the alphabetically first label).
pub fn task_accuracy<'a>(
    entries: impl IntoIterator<Item = &'a ValidatedAnnotation>,
    task: AnnotationTask,
) -> Result<AccuracyRow, MetricsError> {
    let mut n = 0;
    let mut unchanged = 0;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in entries.into_iter().filter(|e| e.task() == task) {
        n += 1;
        if !e.was_corrected {
            unchanged += 1;
        }
        *counts.entry(e.human_category.as_str()).or_default() += 1;
    }
    if n == 0 {
        return Err(MetricsError::EmptySet(task));
    }
    let modal_count = counts.values().copied().max().unwrap_or(0);
    let most_prevalent_category =
        counts.iter().find(|(_, c)| **c == modal_count).map(|(k, _)| k.to_string()).unwrap_or_default();
    Ok(AccuracyRow {
        task,
        accuracy: unchanged as f64 / n as f64,
        most_prevalent_category,
        baseline_frequency: modal_count as f64 / n as f64,
        n_paragraphs: n,
        unchanged,
        modal_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub selector: Selector,
    /// Always `human_final`: the baseline counts categories after review.
    pub baseline_source: String,
    pub source_versions: Vec<String>,
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyReport {
    pub const CSV_HEADER: [&'static str; 5] = ["task", "most_prevalent_category", "baseline_pct", "accuracy_pct", "n"];

    pub fn build(scope: &[Finalized<'_>], selector: &Selector, tasks: &[AnnotationTask]) -> Result<Self, MetricsError> {
        let rows = tasks
            .iter()
            .map(|&t| task_accuracy(scope.iter().flat_map(|f| f.set.entries.iter()), t))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            selector: selector.clone(),
            baseline_source: "human_final".into(),
            source_versions: scope.iter().map(|f| f.set.source_version()).collect(),
            rows,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(Self::CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.task.as_str().to_string(),
                r.most_prevalent_category.clone(),
                format!("{:.1}", r.baseline_frequency * 100.0),
                format!("{:.1}", r.accuracy * 100.0),
                r.n_paragraphs.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanceShares {
    pub criticism: f64,
    pub political_agenda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicScope {
    #[default]
    All,
    AgendaOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StanceWeighting {
    #[default]
    Words,
    Paragraphs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityWeighting {
    /// Mean over all in-scope paragraphs.
    #[default]
    Paragraphs,
    /// Mean of per-speech means.
    Speeches,
}

/// Word share per final topic.
pub fn topic_shares(views: &[ParagraphView<'_>], scope: TopicScope) -> Result<BTreeMap<String, f64>, MetricsError> {
    let items = views
        .iter()
        .filter(|v| scope == TopicScope::All || v.stance() == Some(Stance::PoliticalAgenda))
        .filter_map(|v| Some((v.topic()?.to_string(), v.paragraph.word_count as u64)));
    weighted_shares(items).ok_or_else(|| {
        MetricsError::EmptyScope(match scope {
            TopicScope::All => "no words in scope".into(),
            TopicScope::AgendaOnly => "no political_agenda paragraphs in scope".into(),
        })
    })
}

pub fn stance_shares(views: &[ParagraphView<'_>], weighting: StanceWeighting) -> Result<StanceShares, MetricsError> {
    let items = views.iter().filter_map(|v| {
        let w = match weighting {
            StanceWeighting::Words => v.paragraph.word_count as u64,
            StanceWeighting::Paragraphs => 1,
        };
        Some((v.stance()?, w))
    });
    let shares = weighted_shares(items).ok_or_else(|| MetricsError::EmptyScope("no stance data in scope".into()))?;
    let get = |s| shares.get(&s).copied().unwrap_or(0.0);
    Ok(StanceShares { criticism: get(Stance::Criticism), political_agenda: get(Stance::PoliticalAgenda) })
}

/// Mean of non-missing sentiment values and its band.
pub fn sentiment_summary(
    views: &[ParagraphView<'_>],
    bands: &BandConfig,
) -> Result<(Option<f64>, Option<SentimentBand>), MetricsError> {
    let mean = mean_present(views.iter().map(|v| v.score(AnnotationTask::Sentiment)));
    let band = mean.map(|m| bands.sentiment_band(m)).transpose().map_err(|e| MetricsError::EmptyScope(e.to_string()))?;
    Ok((mean, band))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub speech_id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub paragraph_index: Option<usize>,
    pub date: chrono::NaiveDate,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensitySeries {
    pub task: AnnotationTask,
    /// Per paragraph for a single speech, per speech (by date) otherwise.
    pub points: Vec<SeriesPoint>,
    /// Mean over every in-scope paragraph.
    pub paragraph_mean: f64,
    /// Mean of per-speech means.
    pub speech_mean: f64,
    /// The mean selected by the configured weighting.
    pub mean: f64,
}

pub fn intensity_series(
    scope: &[Finalized<'_>],
    task: AnnotationTask,
    weighting: IntensityWeighting,
) -> Result<IntensitySeries, MetricsError> {
    if !task.is_intensity() {
        return Err(MetricsError::EmptyScope(format!("{task} is not an intensity task")));
    }
    let views = paragraphs(scope);
    let paragraph_mean = mean_present(views.iter().map(|v| v.score(task)))
        .ok_or_else(|| MetricsError::EmptyScope(format!("no {task} values in scope")))?;
    let mut speech_means = Vec::new();
    for f in scope {
        if let Some(m) = mean_present(f.paragraphs().map(|v| v.score(task))) {
            speech_means.push((f, m));
        }
    }
    let speech_mean = mean_present(speech_means.iter().map(|(_, m)| Some(*m))).unwrap_or(paragraph_mean);
    let points = if scope.len() == 1 {
        views
            .iter()
            .filter_map(|v| {
                Some(SeriesPoint {
                    speech_id: v.speech.id.clone(),
                    paragraph_index: Some(v.paragraph.index),
                    date: v.speech.date,
                    value: v.score(task)?,
                })
            })
            .collect()
    } else {
        speech_means
            .iter()
            .map(|(f, m)| SeriesPoint { speech_id: f.speech.id.clone(), paragraph_index: None, date: f.speech.date, value: *m })
            .collect()
    };
    let mean = match weighting {
        IntensityWeighting::Paragraphs => paragraph_mean,
        IntensityWeighting::Speeches => speech_mean,
    };
    Ok(IntensitySeries { task, points, paragraph_mean, speech_mean, mean })
}

fn will_regex() -> &'static regex::Regex {
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    RE.get_or_init(|| regex::Regex::new(r"(?i)\bwill\b").expect("valid regex"))
}

/// Case-insensitive whole-word occurrences of "will" in one text.
pub fn count_will(text: &str) -> usize {
    will_regex().find_iter(text).count()
}

/// "will" count over a speech's translation.
pub fn will_count(speech: &Speech) -> Result<usize, MetricsError> {
    speech
        .paragraphs
        .iter()
        .map(|p| p.translated_text.as_deref().map(count_will).ok_or_else(|| MetricsError::Untranslated(speech.id.clone())))
        .sum()
}

/// Normalized surface form used to aggregate entity mentions.
pub fn normalize_surface(surface: &str) -> String {
    surface.trim().to_lowercase()
}

/// Mention counts per entity type, most mentioned first (ties by surface).
pub fn entity_index(views: &[ParagraphView<'_>]) -> BTreeMap<String, Vec<(String, usize)>> {
    let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for v in views {
        if let Some(AnnotationValue::Ner(entities)) = v.final_value(AnnotationTask::Ner) {
            for e in entities {
                *counts.entry(e.entity_type.as_str().to_string()).or_default().entry(normalize_surface(&e.surface)).or_default() += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(t, c)| {
            let mut list: Vec<(String, usize)> = c.into_iter().collect();
            list.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            (t, list)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSentiment {
    pub mean: f64,
    pub band: SentimentBand,
    pub n: usize,
}

/// Mean sentiment per final topic; topics without any non-missing
/// sentiment are omitted.
pub fn sentiment_by_topic(views: &[ParagraphView<'_>], bands: &BandConfig) -> BTreeMap<String, TopicSentiment> {
    let mut per: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for v in views {
        if let (Some(t), Some(s)) = (v.topic(), v.score(AnnotationTask::Sentiment)) {
            per.entry(t).or_default().push(s);
        }
    }
    per.into_iter()
        .filter_map(|(t, xs)| {
            let mean = mean_present(xs.iter().map(|x| Some(*x)))?;
            let band = bands.sentiment_band(mean).ok()?;
            Some((t.to_string(), TopicSentiment { mean, band, n: xs.len() }))
        })
        .collect()
}

/// Aggregates for one speech or a group of speeches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub selector: Selector,
    pub speech_ids: Vec<String>,
    pub source_versions: Vec<String>,
    pub mean_sentiment: Option<f64>,
    pub sentiment_band: Option<SentimentBand>,
    pub topic_shares: BTreeMap<String, f64>,
    pub topic_shares_agenda: Option<BTreeMap<String, f64>>,
    pub stance_shares: StanceShares,
    pub stance_shares_by_paragraph: StanceShares,
    pub mean_polarization: f64,
    pub mean_populism: f64,
    pub speech_mean_polarization: f64,
    pub speech_mean_populism: f64,
    pub will_count: usize,
    pub entity_index: BTreeMap<String, Vec<(String, usize)>>,
    pub sentiment_by_topic: BTreeMap<String, TopicSentiment>,
}

pub fn summarize(dataset: &Dataset, selector: &Selector, bands: &BandConfig) -> Result<Summary, MetricsError> {
    let scope = dataset.select(selector)?;
    let views = paragraphs(&scope);
    let (mean_sentiment, sentiment_band) = sentiment_summary(&views, bands)?;
    let agenda = match topic_shares(&views, TopicScope::AgendaOnly) {
        Ok(s) => Some(s),
        Err(MetricsError::EmptyScope(_)) => None,
        Err(e) => return Err(e),
    };
    let pol = intensity_series(&scope, AnnotationTask::Polarization, IntensityWeighting::Paragraphs)?;
    let pop = intensity_series(&scope, AnnotationTask::Populism, IntensityWeighting::Paragraphs)?;
    let mut will = 0;
    for f in &scope {
        will += will_count(f.speech)?;
    }
    Ok(Summary {
        selector: selector.clone(),
        speech_ids: scope.iter().map(|f| f.speech.id.clone()).collect(),
        source_versions: scope.iter().map(|f| f.set.source_version()).collect(),
        mean_sentiment,
        sentiment_band,
        topic_shares: topic_shares(&views, TopicScope::All)?,
        topic_shares_agenda: agenda,
        stance_shares: stance_shares(&views, StanceWeighting::Words)?,
        stance_shares_by_paragraph: stance_shares(&views, StanceWeighting::Paragraphs)?,
        mean_polarization: pol.paragraph_mean,
        mean_populism: pop.paragraph_mean,
        speech_mean_polarization: pol.speech_mean,
        speech_mean_populism: pop.speech_mean,
        will_count: will,
        entity_index: entity_index(&views),
        sentiment_by_topic: sentiment_by_topic(&views, bands),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selector_roundtrip() {
        for s in ["all", "speech:s001", "leader:tsipras@second", "leaders:tsipras,mitsotakis@first", "period:first", "leader:x"] {
            assert_eq!(s.parse::<Selector>().unwrap().to_string(), s);
        }
        for s in ["", "leader:", "period:third", "leader:a,b", "team:x"] {
            assert!(s.parse::<Selector>().is_err(), "{s}");
        }
    }

    #[test]
    fn will_examples() {
        assert_eq!(count_will("We will build. Will we?"), 2);
        assert_eq!(count_will("willing and willful"), 0);
        assert_eq!(count_will("WILL, will; will's"), 3);
    }

    #[test]
    fn shares_examples() {
        let s = weighted_shares([("A", 100), ("B", 300)]).unwrap();
        assert_eq!(s["A"], 0.25);
        assert_eq!(s["B"], 0.75);
        assert!(weighted_shares::<&str>([]).is_none());
    }

    #[test]
    fn mean_examples() {
        assert_eq!(mean_present([Some(0.5), Some(0.5), Some(0.5)]), Some(0.5));
        assert_eq!(mean_present([Some(0.9), None, Some(-0.9)]), Some(0.0));
        assert_eq!(mean_present([None, None]), None);
        assert_eq!(mean_present([Some(0.0), Some(0.6), Some(0.9)]), Some(0.5));
    }
}
