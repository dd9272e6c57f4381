//! Retrieval evaluation: precision, recall, R-precision, and improvement
//! over a fixed baseline.
//!
//! Two precision denominators are supported. `AllRetrieved` divides by every
//! returned result, labeled or not: the convention for scoring a plain
//! search engine's output, where unjudged images count against it.
//! `LabeledOnly` divides by judged results only (relevant + not relevant),
//! the convention for filtered subsets where most of the pool was never
//! judged. Undecided judgments never count toward either numerator or the
//! labeled-only denominator.

use std::collections::BTreeSet;

use crate::corpus::{Label, RelevanceLabels};
use crate::error::{Error, Result};
use crate::personalize::RankedEntry;

/// Which results count in the precision denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenominatorRule {
    /// Relevant / all retrieved results.
    AllRetrieved,
    /// Relevant / (relevant + not relevant); undecided and unlabeled excluded.
    LabeledOnly,
}

/// Evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub rule: DenominatorRule,
    /// Plain-search precision to improve on; must lie in (0, 1] when present.
    pub baseline_precision: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            rule: DenominatorRule::LabeledOnly,
            baseline_precision: None,
        }
    }
}

/// Label tallies and derived metrics for one result list.
///
/// Optional fields are `None` when their inputs do not apply (a missing
/// ranking for `r_precision`, no baseline for `improvement_pct`, a result set
/// that covers every labeled image for `recall`), never a placeholder zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub relevant: usize,
    pub not_relevant: usize,
    pub undecided: usize,
    pub precision: f64,
    pub recall: Option<f64>,
    pub r_precision: Option<f64>,
    pub improvement_pct: Option<i32>,
}

/// The result list being evaluated: a bare id list (search or filter output)
/// or a scored ranking.
#[derive(Debug, Clone, Copy)]
pub enum EvalInput<'a> {
    Results(&'a [String]),
    Ranked(&'a [RankedEntry]),
}

impl<'a> EvalInput<'a> {
    fn ids(&self) -> Vec<&'a str> {
        match self {
            EvalInput::Results(ids) => ids.iter().map(String::as_str).collect(),
            EvalInput::Ranked(entries) => entries.iter().map(|e| e.image_id.as_str()).collect(),
        }
    }
}

fn tally<'a>(ids: impl IntoIterator<Item = &'a str>, labels: &RelevanceLabels) -> (usize, usize, usize) {
    let mut relevant = 0;
    let mut not_relevant = 0;
    let mut undecided = 0;
    for id in ids {
        match labels.get(id) {
            Some(Label::Relevant) => relevant += 1,
            Some(Label::NotRelevant) => not_relevant += 1,
            Some(Label::Undecided) => undecided += 1,
            None => {}
        }
    }
    (relevant, not_relevant, undecided)
}

/// Precision of a result list under the given denominator rule.
///
/// Results must be nonempty. Under `LabeledOnly`, a result list with no
/// labeled member has no defined precision and fails rather than guessing.
pub fn precision<S: AsRef<str>>(
    results: &[S],
    labels: &RelevanceLabels,
    rule: DenominatorRule,
) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    let (relevant, not_relevant, _) = tally(results.iter().map(AsRef::as_ref), labels);
    match rule {
        DenominatorRule::AllRetrieved => Ok(relevant as f64 / results.len() as f64),
        DenominatorRule::LabeledOnly => {
            let labeled = relevant + not_relevant;
            if labeled == 0 {
                return Err(Error::UndefinedPrecision);
            }
            Ok(relevant as f64 / labeled as f64)
        }
    }
}

/// Fraction of all relevant images that made it into the results.
/// `total_relevant` is the relevant count across the whole labeled set and
/// must be at least 1; duplicate result ids are counted once.
pub fn recall<S: AsRef<str>>(
    results: &[S],
    labels: &RelevanceLabels,
    total_relevant: usize,
) -> Result<f64> {
    if total_relevant == 0 {
        return Err(Error::InvalidConfig(
            "recall needs at least one relevant image in the label set".into(),
        ));
    }
    let unique: BTreeSet<&str> = results.iter().map(AsRef::as_ref).collect();
    let found = unique
        .iter()
        .filter(|id| labels.get(id) == Some(Label::Relevant))
        .count();
    Ok(found as f64 / total_relevant as f64)
}

/// Precision over the first R entries of a ranking, where R is the total
/// number of relevant images. The ranking must reach at least R entries.
pub fn r_precision(
    ranked: &[RankedEntry],
    labels: &RelevanceLabels,
    total_relevant: usize,
) -> Result<f64> {
    if total_relevant == 0 {
        return Err(Error::InvalidConfig(
            "r-precision needs at least one relevant image in the label set".into(),
        ));
    }
    if ranked.len() < total_relevant {
        return Err(Error::InvalidConfig(format!(
            "r-precision needs a ranking of at least {total_relevant} entries, got {}",
            ranked.len()
        )));
    }
    let head: Vec<&str> = ranked[..total_relevant]
        .iter()
        .map(|e| e.image_id.as_str())
        .collect();
    precision(&head, labels, DenominatorRule::AllRetrieved)
}

/// Integer percentage gain of `personalized` precision over `baseline`,
/// rounded half away from zero. Negative when personalization hurt.
pub fn improvement(personalized: f64, baseline: f64) -> Result<i32> {
    if !(baseline > 0.0 && baseline <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "baseline precision must lie in (0, 1], got {baseline}"
        )));
    }
    if !(personalized >= 0.0 && personalized.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "personalized precision must be a nonnegative real, got {personalized}"
        )));
    }
    Ok(((personalized - baseline) / baseline * 100.0).round() as i32)
}

/// Evaluate one result list against a label set.
///
/// Recall is reported only when the results do not already cover every
/// labeled image (for the full judged pool it is vacuously 1 and says
/// nothing). R-precision needs a ranking at least `total_relevant` deep;
/// improvement needs `baseline_precision`.
pub fn eval_report(
    input: EvalInput,
    labels: &RelevanceLabels,
    config: &EvalConfig,
) -> Result<EvalReport> {
    if labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let ids = input.ids();
    let (relevant, not_relevant, undecided) = tally(ids.iter().copied(), labels);
    let precision = precision(&ids, labels, config.rule)?;
    let total_relevant = labels.total_relevant();

    let recall = if total_relevant >= 1 && !labels.covered_by(ids.iter().copied()) {
        Some(self::recall(&ids, labels, total_relevant)?)
    } else {
        None
    };

    let r_precision = match input {
        EvalInput::Ranked(entries) if total_relevant >= 1 && entries.len() >= total_relevant => {
            Some(self::r_precision(entries, labels, total_relevant)?)
        }
        _ => None,
    };

    let improvement_pct = config
        .baseline_precision
        .map(|baseline| improvement(precision, baseline))
        .transpose()?;

    Ok(EvalReport {
        relevant,
        not_relevant,
        undecided,
        precision,
        recall,
        r_precision,
        improvement_pct,
    })
}

const CSV_HEADER: &str = "relevant,not_relevant,precision,recall,r_precision,improvement_pct";

fn opt_f64(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

impl EvalReport {
    /// Two-line CSV: header plus one row. Absent metrics are empty cells;
    /// floats use the shortest representation that parses back exactly.
    pub fn to_csv(&self) -> String {
        format!(
            "{CSV_HEADER}\n{},{},{},{},{},{}\n",
            self.relevant,
            self.not_relevant,
            self.precision,
            opt_f64(self.recall),
            opt_f64(self.r_precision),
            self.improvement_pct.map(|v| v.to_string()).unwrap_or_default(),
        )
    }

    /// Parse the output of [`EvalReport::to_csv`]. The undecided tally is not
    /// part of the CSV contract and comes back as zero.
    pub fn from_csv(text: &str) -> Result<EvalReport> {
        let origin = std::path::Path::new("eval-report");
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::malformed(origin, 1, "empty report"))?;
        if header.trim() != CSV_HEADER {
            return Err(Error::malformed(origin, 1, format!("bad header {header:?}")));
        }
        let row = lines
            .next()
            .ok_or_else(|| Error::malformed(origin, 2, "missing data row"))?;
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::malformed(origin, 2, "expected six fields"));
        }
        let parse_usize = |s: &str, what: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::malformed(origin, 2, format!("{what}: {e}")))
        };
        let parse_opt = |s: &str, what: &str| -> Result<Option<f64>> {
            let s = s.trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|e| Error::malformed(origin, 2, format!("{what}: {e}")))
        };
        Ok(EvalReport {
            relevant: parse_usize(fields[0], "relevant")?,
            not_relevant: parse_usize(fields[1], "not_relevant")?,
            undecided: 0,
            precision: parse_opt(fields[2], "precision")?
                .ok_or_else(|| Error::malformed(origin, 2, "precision must be present"))?,
            recall: parse_opt(fields[3], "recall")?,
            r_precision: parse_opt(fields[4], "r_precision")?,
            improvement_pct: match fields[5].trim() {
                "" => None,
                s => Some(
                    s.parse::<i32>()
                        .map_err(|e| Error::malformed(origin, 2, format!("improvement_pct: {e}")))?,
                ),
            },
        })
    }

    /// Aligned two-row text table with the same columns as the CSV.
    pub fn to_table(&self) -> String {
        let headers = ["relevant", "not_relevant", "precision", "recall", "r_precision", "improvement_pct"];
        let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let values = [
            self.relevant.to_string(),
            self.not_relevant.to_string(),
            format!("{:.4}", self.precision),
            fmt_opt(self.recall),
            fmt_opt(self.r_precision),
            self.improvement_pct
                .map(|v| format!("{v}%"))
                .unwrap_or_else(|| "-".into()),
        ];
        let mut header_row = String::new();
        let mut value_row = String::new();
        for (i, (header, value)) in headers.iter().zip(&values).enumerate() {
            let width = header.len().max(value.len());
            if i > 0 {
                header_row.push_str("  ");
                value_row.push_str("  ");
            }
            header_row.push_str(&format!("{header:>width$}"));
            value_row.push_str(&format!("{value:>width$}"));
        }
        format!("{header_row}\n{value_row}\n")
    }
}
