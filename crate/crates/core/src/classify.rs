//! Categorical bands for continuous scores and the corrective values used
//! when a reviewer re-bands an intensity annotation.
//!
//! Scores are first rounded to two decimals (half away from zero, applied to
//! the shortest decimal representation of the float), then compared against
//! integer cent thresholds. Without the rounding step the published bands
//! leave gaps such as -0.335 uncovered.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentimentBand {
    Negative,
    Neutral,
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityBand {
    ZeroLow,
    Medium,
    High,
}

impl SentimentBand {
    pub const ALL: [SentimentBand; 3] = [Self::Negative, Self::Neutral, Self::Positive];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Negative => "negative",
            Self::Neutral => "neutral",
            Self::Positive => "positive",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl IntensityBand {
    pub const ALL: [IntensityBand; 3] = [Self::ZeroLow, Self::Medium, Self::High];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ZeroLow => "zero_low",
            Self::Medium => "medium",
            Self::High => "high",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SentimentBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for IntensityBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentimentBand {
    type Err = BandError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| BandError::UnknownBand(s.to_string()))
    }
}

impl FromStr for IntensityBand {
    type Err = BandError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| BandError::UnknownBand(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BandError {
    #[error("score {score} is outside [{min}, {max}]")]
    OutOfRange { score: f64, min: f64, max: f64 },
    #[error("unknown band '{0}'")]
    UnknownBand(String),
    #[error("invalid band configuration: {0}")]
    InvalidConfig(String),
}

/// Rounds to whole hundredths, half away from zero, on the decimal literal
/// the float prints as. `0.145` gives 15 and `-0.335` gives -34.
pub fn round_to_cents(score: f64) -> i64 {
    let text = format!("{}", score.abs());
    let (int_part, frac_part) = text.split_once('.').unwrap_or((&text, ""));
    let mut digits = frac_part.bytes().map(|b| i64::from(b - b'0'));
    let int: i64 = int_part.parse().unwrap_or(0);
    let tenths = digits.next().unwrap_or(0);
    let hundredths = digits.next().unwrap_or(0);
    let round_up = digits.next().is_some_and(|d| d >= 5);
    let cents = int * 100 + tenths * 10 + hundredths + i64::from(round_up);
    if score.is_sign_negative() {
        -cents
    } else {
        cents
    }
}

fn cents_of(value: f64) -> i64 {
    round_to_cents(value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SentimentThresholds {
    /// Highest score (after rounding) that is still negative.
    pub negative_max: f64,
    /// Lowest score (after rounding) that is positive.
    pub positive_min: f64,
}

impl Default for SentimentThresholds {
    fn default() -> Self {
        Self { negative_max: -0.34, positive_min: 0.34 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntensityThresholds {
    pub zero_low_max: f64,
    pub high_min: f64,
}

impl Default for IntensityThresholds {
    fn default() -> Self {
        Self { zero_low_max: 0.50, high_min: 0.81 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectiveValues {
    pub zero_low: f64,
    pub medium: f64,
    pub high: f64,
}

impl Default for CorrectiveValues {
    fn default() -> Self {
        Self { zero_low: 0.0, medium: 0.6, high: 0.9 }
    }
}

/// Thresholds and corrective values. Loaded from the `[bands]` table of the
/// config file; the defaults are the published values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandConfig {
    pub sentiment: SentimentThresholds,
    pub intensity: IntensityThresholds,
    pub corrective: CorrectiveValues,
}

/// A closed score interval drawn on a chart, with the band it represents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub band: String,
    pub range: [f64; 2],
}

impl BandConfig {
    pub fn validate(&self) -> Result<(), BandError> {
        let (neg, pos) = (cents_of(self.sentiment.negative_max), cents_of(self.sentiment.positive_min));
        if !(-100 <= neg && neg + 1 < pos && pos <= 100) {
            return Err(BandError::InvalidConfig(format!(
                "sentiment thresholds must satisfy -1 <= negative_max < positive_min <= 1 with a neutral band between (got {} / {})",
                self.sentiment.negative_max, self.sentiment.positive_min
            )));
        }
        let (low, high) = (cents_of(self.intensity.zero_low_max), cents_of(self.intensity.high_min));
        if !(0 <= low && low + 1 < high && high <= 100) {
            return Err(BandError::InvalidConfig(format!(
                "intensity thresholds must satisfy 0 <= zero_low_max < high_min <= 1 with a medium band between (got {} / {})",
                self.intensity.zero_low_max, self.intensity.high_min
            )));
        }
        for band in IntensityBand::ALL {
            let value = self.corrective_value(band);
            if self.intensity_band(value)? != band {
                return Err(BandError::InvalidConfig(format!(
                    "corrective value {value} for {band} falls outside its band"
                )));
            }
        }
        Ok(())
    }

    pub fn sentiment_band(&self, score: f64) -> Result<SentimentBand, BandError> {
        if !(-1.0..=1.0).contains(&score) {
            return Err(BandError::OutOfRange { score, min: -1.0, max: 1.0 });
        }
        let c = round_to_cents(score);
        Ok(if c <= cents_of(self.sentiment.negative_max) {
            SentimentBand::Negative
        } else if c >= cents_of(self.sentiment.positive_min) {
            SentimentBand::Positive
        } else {
            SentimentBand::Neutral
        })
    }

    pub fn intensity_band(&self, score: f64) -> Result<IntensityBand, BandError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(BandError::OutOfRange { score, min: 0.0, max: 1.0 });
        }
        let c = round_to_cents(score);
        Ok(if c <= cents_of(self.intensity.zero_low_max) {
            IntensityBand::ZeroLow
        } else if c >= cents_of(self.intensity.high_min) {
            IntensityBand::High
        } else {
            IntensityBand::Medium
        })
    }

    pub fn corrective_value(&self, band: IntensityBand) -> f64 {
        match band {
            IntensityBand::ZeroLow => self.corrective.zero_low,
            IntensityBand::Medium => self.corrective.medium,
            IntensityBand::High => self.corrective.high,
        }
    }

    pub fn sentiment_zones(&self) -> Vec<Zone> {
        let neg = cents_of(self.sentiment.negative_max);
        let pos = cents_of(self.sentiment.positive_min);
        vec![
            zone(SentimentBand::Negative.as_str(), -100, neg),
            zone(SentimentBand::Neutral.as_str(), neg + 1, pos - 1),
            zone(SentimentBand::Positive.as_str(), pos, 100),
        ]
    }

    pub fn intensity_zones(&self) -> Vec<Zone> {
        let low = cents_of(self.intensity.zero_low_max);
        let high = cents_of(self.intensity.high_min);
        vec![
            zone(IntensityBand::ZeroLow.as_str(), 0, low),
            zone(IntensityBand::Medium.as_str(), low + 1, high - 1),
            zone(IntensityBand::High.as_str(), high, 100),
        ]
    }
}

fn zone(band: &str, lo: i64, hi: i64) -> Zone {
    Zone { band: band.to_string(), range: [lo as f64 / 100.0, hi as f64 / 100.0] }
}

/// Sentiment band under the default thresholds.
pub fn sentiment_band(score: f64) -> Result<SentimentBand, BandError> {
    BandConfig::default().sentiment_band(score)
}

/// Intensity band (polarization or populism) under the default thresholds.
pub fn intensity_band(score: f64) -> Result<IntensityBand, BandError> {
    BandConfig::default().intensity_band(score)
}

/// Default corrective value for a reviewer-assigned intensity band.
pub fn corrective_value(band: IntensityBand) -> f64 {
    BandConfig::default().corrective_value(band)
}
