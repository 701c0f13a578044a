use serde_json::{Map, Value};

use super::{AnnotationTask, AnnotationValue, Entity, Stance, TopicTaxonomy};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ResponseError {
    #[error("could not parse {task} reply: {message}")]
    Parse { task: AnnotationTask, message: String, raw: String },
    #[error("{task} score {value} is outside [{min}, {max}]")]
    Range { task: AnnotationTask, value: f64, min: f64, max: f64, raw: String },
}

impl ResponseError {
    pub fn raw(&self) -> &str {
        match self {
            ResponseError::Parse { raw, .. } | ResponseError::Range { raw, .. } => raw,
        }
    }
}

/// Finds the JSON object in a reply, tolerating code fences and prose
/// around it.
fn extract_object(raw: &str) -> Option<Map<String, Value>> {
    let trimmed = raw.trim();
    if let Ok(Value::Object(m)) = serde_json::from_str(trimmed) {
        return Some(m);
    }
    let start = trimmed.find('{')?;
    let end = trimmed.rfind('}')?;
    if end < start {
        return None;
    }
    match serde_json::from_str(&trimmed[start..=end]) {
        Ok(Value::Object(m)) => Some(m),
        _ => None,
    }
}

/// Parses and validates a structured model reply for `task`.
pub fn parse_response(
    task: AnnotationTask,
    raw: &str,
    taxonomy: &TopicTaxonomy,
) -> Result<AnnotationValue, ResponseError> {
    let parse_err = |message: String| ResponseError::Parse { task, message, raw: raw.to_string() };
    if raw.trim().is_empty() {
        return Err(parse_err("empty reply".into()));
    }
    let obj = extract_object(raw).ok_or_else(|| parse_err("no JSON object found".into()))?;
    let field = |name: &str| obj.get(name).ok_or_else(|| parse_err(format!("missing field '{name}'")));

    let score = |min: f64, max: f64| -> Result<f64, ResponseError> {
        let v = field("score")?
            .as_f64()
            .ok_or_else(|| parse_err("'score' must be a number".into()))?;
        if !(min..=max).contains(&v) {
            return Err(ResponseError::Range { task, value: v, min, max, raw: raw.to_string() });
        }
        Ok(v)
    };

    Ok(match task {
        AnnotationTask::Stance => {
            let s: Stance = serde_json::from_value(field("stance")?.clone())
                .map_err(|_| parse_err("'stance' must be \"criticism\" or \"political_agenda\"".into()))?;
            AnnotationValue::Stance(s)
        }
        AnnotationTask::Topic => {
            let id = field("topic")?
                .as_str()
                .ok_or_else(|| parse_err("'topic' must be a string".into()))?
                .trim();
            if !taxonomy.contains(id) {
                return Err(parse_err(format!("'{id}' is not a configured topic id")));
            }
            AnnotationValue::Topic(id.to_string())
        }
        AnnotationTask::Sentiment => AnnotationValue::Sentiment(score(-1.0, 1.0)?),
        AnnotationTask::Polarization => AnnotationValue::Polarization(score(0.0, 1.0)?),
        AnnotationTask::Populism => AnnotationValue::Populism(score(0.0, 1.0)?),
        AnnotationTask::Ner => {
            let entities: Vec<Entity> = serde_json::from_value(field("entities")?.clone())
                .map_err(|e| parse_err(format!("'entities': {e}")))?;
            if entities.iter().any(|e| e.surface.trim().is_empty()) {
                return Err(parse_err("entity with empty surface".into()));
            }
            AnnotationValue::Ner(entities)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::{EntityType, PromptConfig};

    fn tax() -> TopicTaxonomy {
        PromptConfig::default().taxonomy
    }

    #[test]
    fn sentiment_direct_parse() {
        let v = parse_response(AnnotationTask::Sentiment, r#"{"score": -0.62}"#, &tax()).unwrap();
        assert_eq!(v, AnnotationValue::Sentiment(-0.62));
    }

    #[test]
    fn sentiment_out_of_range() {
        let e = parse_response(AnnotationTask::Sentiment, r#"{"score": 1.4}"#, &tax()).unwrap_err();
        assert!(matches!(e, ResponseError::Range { value, .. } if value == 1.4));
    }

    #[test]
    fn ner_direct_parse() {
        let v = parse_response(
            AnnotationTask::Ner,
            r#"{"entities":[{"surface":"SYRIZA","type":"political_party"}]}"#,
            &tax(),
        )
        .unwrap();
        assert_eq!(
            v,
            AnnotationValue::Ner(vec![Entity { surface: "SYRIZA".into(), entity_type: EntityType::PoliticalParty }])
        );
    }

    #[test]
    fn fenced_and_chatty_replies() {
        let v = parse_response(AnnotationTask::Stance, "```json\n{\"stance\": \"criticism\"}\n```", &tax()).unwrap();
        assert_eq!(v, AnnotationValue::Stance(Stance::Criticism));
        let v = parse_response(AnnotationTask::Topic, "Sure! {\"topic\": \"economy\"} Hope that helps.", &tax()).unwrap();
        assert_eq!(v, AnnotationValue::Topic("economy".into()));
    }

    #[test]
    fn enum_and_shape_failures_carry_raw_text() {
        for (task, raw) in [
            (AnnotationTask::Stance, r#"{"stance": "praise"}"#),
            (AnnotationTask::Topic, r#"{"topic": "weather"}"#),
            (AnnotationTask::Polarization, r#"{"level": 0.2}"#),
            (AnnotationTask::Populism, r#"{"score": "low"}"#),
            (AnnotationTask::Ner, r#"{"entities":[{"surface":"X","type":"planet"}]}"#),
            (AnnotationTask::Sentiment, "I think it is positive."),
        ] {
            let e = parse_response(task, raw, &tax()).unwrap_err();
            assert!(matches!(e, ResponseError::Parse { .. }), "{task}: {e}");
            assert_eq!(e.raw(), raw);
        }
    }

    #[test]
    fn intensity_range() {
        assert!(matches!(
            parse_response(AnnotationTask::Populism, r#"{"score": -0.1}"#, &tax()),
            Err(ResponseError::Range { .. })
        ));
        assert_eq!(
            parse_response(AnnotationTask::Populism, r#"{"score": 1}"#, &tax()).unwrap(),
            AnnotationValue::Populism(1.0)
        );
    }
}
