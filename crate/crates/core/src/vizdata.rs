//! Chart-ready payloads. Band thresholds travel inside every payload as
//! zones, so clients never hard-code them.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::classify::BandConfig;
use crate::corpus::Leader;
use crate::metrics::{self, Dataset, Finalized, IntensityWeighting, MetricsError, Selector, TopicScope};
use crate::prompting::{AnnotationTask, TopicTaxonomy};
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    Treemap,
    Speedometer,
    SentimentLine,
    IntensityStep,
    Heatmap,
    EntityDendrogram,
    WillBar,
}

impl ChartKind {
    pub const ALL: [ChartKind; 7] = [
        Self::Treemap,
        Self::Speedometer,
        Self::SentimentLine,
        Self::IntensityStep,
        Self::Heatmap,
        Self::EntityDendrogram,
        Self::WillBar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Treemap => "treemap",
            Self::Speedometer => "speedometer",
            Self::SentimentLine => "sentiment_line",
            Self::IntensityStep => "intensity_step",
            Self::Heatmap => "heatmap",
            Self::EntityDendrogram => "entity_dendrogram",
            Self::WillBar => "will_bar",
        }
    }
}

impl fmt::Display for ChartKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChartKind {
    type Err = VizError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| VizError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VizError {
    #[error("unknown chart kind '{0}'")]
    UnknownKind(String),
    #[error("{kind} does not support selector '{selector}': {message}")]
    UnsupportedSelector { kind: ChartKind, selector: String, message: String },
    #[error("leaders {0} and {1} share no election period")]
    NoSharedPeriod(String, String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Options that change chart content.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ChartOptions {
    pub topic_scope: TopicScope,
    pub intensity_weighting: IntensityWeighting,
}

/// One chart document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSeries {
    pub schema_version: u32,
    pub chart_kind: ChartKind,
    pub selector: Selector,
    /// The latest `finalized_at` of the sets in scope, so regenerating from
    /// the same data is byte-identical.
    pub generated_at: DateTime<Utc>,
    /// `+`-joined `speech@vN` versions of every set in scope.
    pub source_version: String,
    pub payload: Value,
}

impl ChartSeries {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("chart serializes")
    }
}

/// Shared inputs for chart generation.
pub struct VizContext<'a> {
    pub dataset: &'a Dataset,
    pub leaders: &'a [Leader],
    pub taxonomy: &'a TopicTaxonomy,
    pub bands: &'a BandConfig,
    pub options: ChartOptions,
}

fn zones_pairs(zones: &[crate::classify::Zone]) -> (Value, Value) {
    let pairs: Vec<Value> = zones.iter().map(|z| json!(z.range)).collect();
    let labels: Vec<&str> = zones.iter().map(|z| z.band.as_str()).collect();
    (Value::Array(pairs), json!(labels))
}

impl VizContext<'_> {
    fn leader_name(&self, id: &str) -> String {
        self.leaders.iter().find(|l| l.id == id).map_or_else(|| id.to_string(), |l| l.full_name.clone())
    }

    fn topic_label(&self, id: &str) -> String {
        self.taxonomy.label(id).unwrap_or(id).to_string()
    }

    fn sentiment_zones(&self) -> (Value, Value) {
        zones_pairs(&self.bands.sentiment_zones())
    }

    fn intensity_zones(&self) -> (Value, Value) {
        zones_pairs(&self.bands.intensity_zones())
    }

    pub fn chart_data(&self, kind: ChartKind, selector: &Selector) -> Result<ChartSeries, VizError> {
        let scope = self.dataset.select(selector)?;
        let payload = match kind {
            ChartKind::Treemap => self.treemap(&scope)?,
            ChartKind::Speedometer => self.speedometer(&scope)?,
            ChartKind::SentimentLine => self.sentiment_line(selector, &scope)?,
            ChartKind::IntensityStep => self.intensity_step(&scope)?,
            ChartKind::Heatmap => self.heatmap(&scope),
            ChartKind::EntityDendrogram => self.dendrogram(selector, &scope),
            ChartKind::WillBar => self.will_bar(&scope)?,
        };
        let generated_at = scope.iter().map(|f| f.set.finalized_at).max().expect("scope is non-empty");
        Ok(ChartSeries {
            schema_version: SCHEMA_VERSION,
            chart_kind: kind,
            selector: selector.clone(),
            generated_at,
            source_version: scope.iter().map(|f| f.set.source_version()).collect::<Vec<_>>().join("+"),
            payload,
        })
    }

    fn treemap(&self, scope: &[Finalized<'_>]) -> Result<Value, VizError> {
        let views = metrics::paragraphs(scope);
        let shares = metrics::topic_shares(&views, self.options.topic_scope)?;
        let mut words = std::collections::BTreeMap::<&str, usize>::new();
        for v in &views {
            if self.options.topic_scope == TopicScope::AgendaOnly && v.stance() != Some(crate::prompting::Stance::PoliticalAgenda) {
                continue;
            }
            if let Some(t) = v.topic() {
                *words.entry(t).or_default() += v.paragraph.word_count;
            }
        }
        let mut cells: Vec<(&String, &f64)> = shares.iter().collect();
        cells.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let cells: Vec<Value> = cells
            .into_iter()
            .map(|(t, s)| json!({ "topic_id": t, "label": self.topic_label(t), "share": s, "words": words[t.as_str()] }))
            .collect();
        Ok(json!({
            "scope": self.options.topic_scope,
            "total_words": words.values().sum::<usize>(),
            "cells": cells,
        }))
    }

    fn speedometer(&self, scope: &[Finalized<'_>]) -> Result<Value, VizError> {
        let views = metrics::paragraphs(scope);
        let (mean, band) = metrics::sentiment_summary(&views, self.bands)?;
        let missing = views.iter().filter(|v| v.score(AnnotationTask::Sentiment).is_none()).count();
        let (zones, labels) = self.sentiment_zones();
        Ok(json!({
            "value": mean,
            "band": band,
            "zones": zones,
            "zone_bands": labels,
            "n_paragraphs": views.len(),
            "n_missing": missing,
        }))
    }

    fn sentiment_line(&self, selector: &Selector, scope: &[Finalized<'_>]) -> Result<Value, VizError> {
        let (zones, labels) = self.sentiment_zones();
        let unsupported = |message: &str| VizError::UnsupportedSelector {
            kind: ChartKind::SentimentLine,
            selector: selector.to_string(),
            message: message.to_string(),
        };
        let series: Vec<Value> = match selector {
            Selector::Speech(_) => {
                let f = scope[0];
                let points: Vec<Value> = f
                    .paragraphs()
                    .map(|v| json!({ "x": v.paragraph.index, "speech_id": f.speech.id, "date": f.speech.date, "value": v.score(AnnotationTask::Sentiment) }))
                    .collect();
                vec![json!({ "leader_id": f.speech.leader_id, "leader_name": self.leader_name(&f.speech.leader_id), "axis": "paragraph", "points": points })]
            }
            Selector::Leaders { ids, .. } => {
                if ids.len() > 2 {
                    return Err(unsupported("at most two leaders"));
                }
                if let [a, b] = ids.as_slice() {
                    let periods = |id: &str| -> BTreeSet<_> {
                        scope.iter().filter(|f| f.speech.leader_id == id).map(|f| f.speech.election_period).collect()
                    };
                    if periods(a).is_disjoint(&periods(b)) {
                        return Err(VizError::NoSharedPeriod(a.clone(), b.clone()));
                    }
                }
                let mut out = Vec::new();
                for id in ids {
                    let points: Vec<Value> = scope
                        .iter()
                        .filter(|f| &f.speech.leader_id == id)
                        .map(|f| {
                            let mean = metrics::mean_present(f.paragraphs().map(|v| v.score(AnnotationTask::Sentiment)));
                            json!({ "x": f.speech.date, "speech_id": f.speech.id, "date": f.speech.date, "value": mean })
                        })
                        .collect();
                    if points.is_empty() {
                        return Err(MetricsError::EmptyScope(format!("no finalized speeches for leader {id}")).into());
                    }
                    out.push(json!({ "leader_id": id, "leader_name": self.leader_name(id), "axis": "date", "points": points }));
                }
                out
            }
            _ => return Err(unsupported("expected speech:ID, leader:ID or leaders:A,B")),
        };
        Ok(json!({ "zones": zones, "zone_bands": labels, "series": series }))
    }

    fn intensity_step(&self, scope: &[Finalized<'_>]) -> Result<Value, VizError> {
        let (zones, labels) = self.intensity_zones();
        let mut out = serde_json::Map::new();
        out.insert("zones".into(), zones);
        out.insert("zone_bands".into(), labels);
        out.insert("weighting".into(), json!(self.options.intensity_weighting));
        for task in [AnnotationTask::Polarization, AnnotationTask::Populism] {
            let s = metrics::intensity_series(scope, task, self.options.intensity_weighting)?;
            let points: Vec<Value> = s
                .points
                .iter()
                .map(|p| match p.paragraph_index {
                    Some(i) => json!({ "x": i, "speech_id": p.speech_id, "date": p.date, "value": p.value }),
                    None => json!({ "x": p.date, "speech_id": p.speech_id, "date": p.date, "value": p.value }),
                })
                .collect();
            out.insert(
                task.as_str().into(),
                json!({
                    "axis": if scope.len() == 1 { "paragraph" } else { "date" },
                    "points": points,
                    "mean": s.mean,
                    "paragraph_mean": s.paragraph_mean,
                    "speech_mean": s.speech_mean,
                }),
            );
        }
        Ok(Value::Object(out))
    }

    fn heatmap(&self, scope: &[Finalized<'_>]) -> Value {
        let views = metrics::paragraphs(scope);
        let (zones, labels) = self.sentiment_zones();
        let cells: Vec<Value> = metrics::sentiment_by_topic(&views, self.bands)
            .into_iter()
            .map(|(t, s)| json!({ "topic_id": t, "label": self.topic_label(&t), "mean": s.mean, "band": s.band, "n": s.n }))
            .collect();
        json!({ "zones": zones, "zone_bands": labels, "cells": cells })
    }

    fn dendrogram(&self, selector: &Selector, scope: &[Finalized<'_>]) -> Value {
        let views = metrics::paragraphs(scope);
        let index = metrics::entity_index(&views);
        let mut total = 0;
        let children: Vec<Value> = index
            .into_iter()
            .map(|(t, list)| {
                let count: usize = list.iter().map(|(_, c)| c).sum();
                total += count;
                let leaves: Vec<Value> = list.into_iter().map(|(s, c)| json!({ "name": s, "count": c })).collect();
                json!({ "name": t, "count": count, "children": leaves })
            })
            .collect();
        json!({ "root": { "name": selector.to_string(), "count": total, "children": children } })
    }

    fn will_bar(&self, scope: &[Finalized<'_>]) -> Result<Value, VizError> {
        let mut bars = Vec::new();
        let mut total = 0;
        for f in scope {
            let count = metrics::will_count(f.speech)?;
            total += count;
            bars.push(json!({
                "speech_id": f.speech.id,
                "leader_id": f.speech.leader_id,
                "leader_name": self.leader_name(&f.speech.leader_id),
                "date": f.speech.date,
                "count": count,
            }));
        }
        Ok(json!({ "bars": bars, "total": total }))
    }
}

/// The step points of an intensity chart, for comparisons in tests.
pub fn step_values(series: &ChartSeries, task: AnnotationTask) -> Vec<f64> {
    series.payload[task.as_str()]["points"]
        .as_array()
        .map(|a| a.iter().filter_map(|p| p["value"].as_f64()).collect())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_kind_names() {
        for k in ChartKind::ALL {
            assert_eq!(k.as_str().parse::<ChartKind>().unwrap(), k);
            assert_eq!(serde_json::to_value(k).unwrap(), k.as_str());
        }
        assert!("pie".parse::<ChartKind>().is_err());
    }

    #[test]
    fn zones_match_band_defaults() {
        let (z, l) = zones_pairs(&BandConfig::default().sentiment_zones());
        assert_eq!(z, json!([[-1.0, -0.34], [-0.33, 0.33], [0.34, 1.0]]));
        assert_eq!(l, json!(["negative", "neutral", "positive"]));
        let (z, _) = zones_pairs(&BandConfig::default().intensity_zones());
        assert_eq!(z, json!([[0.0, 0.5], [0.51, 0.8], [0.81, 1.0]]));
    }
}
