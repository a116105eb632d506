//! Dataset ingestion and the strict-accuracy / macro-F1 / micro-F1 metrics.
//!
//! Gold and predicted type paths are both expanded to their ancestor sets
//! before comparison, so a prediction of `/location` against a gold
//! `/location/city` earns partial credit.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ontology::{OntologyError, TypePath};
use crate::resolution::TypingDecision;
use crate::text::CharSpan;
use crate::{Error, Result};

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub sentence: String,
    pub mentions: Vec<MentionRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MentionRecord {
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub gold_types: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledMention {
    pub sentence: String,
    pub span: CharSpan,
    pub gold: Vec<TypePath>,
}

/// Parses a JSONL dataset; blank lines are skipped. Spans must be in bounds.
pub fn load_dataset(source: &str) -> Result<Vec<SentenceRecord>> {
    let mut records = Vec::new();
    for (i, line) in source.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SentenceRecord = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("dataset line {}: {e}", i + 1)))?;
        for m in &record.mentions {
            CharSpan::new(m.start, m.end)
                .byte_range(&record.sentence)
                .map_err(|e| Error::Data(format!("dataset line {}: {e}", i + 1)))?;
        }
        records.push(record);
    }
    Ok(records)
}

/// Flattens sentence records into labeled mentions, in file order.
pub fn labeled_mentions(records: &[SentenceRecord]) -> Result<Vec<LabeledMention>> {
    let mut out = Vec::new();
    for record in records {
        for m in &record.mentions {
            let gold = m
                .gold_types
                .iter()
                .map(|g| TypePath::parse_normalized(g))
                .collect::<std::result::Result<Vec<_>, OntologyError>>()?;
            out.push(LabeledMention {
                sentence: record.sentence.clone(),
                span: CharSpan::new(m.start, m.end),
                gold,
            });
        }
    }
    Ok(out)
}

/// A predicted path for one mention; the subset of a decision record that
/// evaluation needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sentence: String,
    pub span: CharSpan,
    pub path: TypePath,
}

impl From<&TypingDecision> for Prediction {
    fn from(d: &TypingDecision) -> Self {
        Prediction {
            sentence: d.sentence.clone(),
            span: d.span,
            path: d.path.clone(),
        }
    }
}

/// Parses decision JSONL, ignoring fields evaluation does not use.
pub fn load_predictions(source: &str) -> Result<Vec<Prediction>> {
    source
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Data(format!("decisions line {}: {e}", i + 1)))
        })
        .collect()
}

/// All prefixes of the path.
pub fn expand_to_path_set(path: &TypePath) -> BTreeSet<TypePath> {
    path.ancestors_and_self().into_iter().collect()
}

pub fn expand_all<'a, I: IntoIterator<Item = &'a TypePath>>(paths: I) -> BTreeSet<TypePath> {
    paths.into_iter().flat_map(expand_to_path_set).collect()
}

/// Running sums; shards can be merged in any order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Tally {
    pub mentions: usize,
    pub exact: usize,
    pub precision_sum: f64,
    pub recall_sum: f64,
    pub overlap: usize,
    pub predicted: usize,
    pub gold: usize,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl Tally {
    pub fn add(&mut self, gold: &BTreeSet<TypePath>, predicted: &BTreeSet<TypePath>) {
        let overlap = gold.intersection(predicted).count();
        self.mentions += 1;
        self.exact += usize::from(gold == predicted);
        self.precision_sum += ratio(overlap as f64, predicted.len() as f64);
        self.recall_sum += ratio(overlap as f64, gold.len() as f64);
        self.overlap += overlap;
        self.predicted += predicted.len();
        self.gold += gold.len();
    }

    pub fn merge(&mut self, other: &Tally) {
        self.mentions += other.mentions;
        self.exact += other.exact;
        self.precision_sum += other.precision_sum;
        self.recall_sum += other.recall_sum;
        self.overlap += other.overlap;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }

    pub fn report(&self) -> EvalReport {
        let n = self.mentions as f64;
        let macro_precision = ratio(self.precision_sum, n);
        let macro_recall = ratio(self.recall_sum, n);
        let micro_precision = ratio(self.overlap as f64, self.predicted as f64);
        let micro_recall = ratio(self.overlap as f64, self.gold as f64);
        EvalReport {
            mentions: self.mentions,
            strict_accuracy: ratio(self.exact as f64, n),
            macro_precision,
            macro_recall,
            macro_f1: f1(macro_precision, macro_recall),
            micro_precision,
            micro_recall,
            micro_f1: f1(micro_precision, micro_recall),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mentions: usize,
    pub strict_accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>10}", "metric", "value")?;
        writeln!(f, "{:<16} {:>10}", "mentions", self.mentions)?;
        for (name, value) in [
            ("strict_accuracy", self.strict_accuracy),
            ("macro_precision", self.macro_precision),
            ("macro_recall", self.macro_recall),
            ("macro_f1", self.macro_f1),
            ("micro_precision", self.micro_precision),
            ("micro_recall", self.micro_recall),
            ("micro_f1", self.micro_f1),
        ] {
            writeln!(f, "{name:<16} {value:>10.4}")?;
        }
        Ok(())
    }
}

/// Metrics over already-expanded `(gold, predicted)` set pairs.
pub fn evaluate_sets(pairs: &[(BTreeSet<TypePath>, BTreeSet<TypePath>)]) -> EvalReport {
    let mut tally = Tally::default();
    for (gold, predicted) in pairs {
        tally.add(gold, predicted);
    }
    tally.report()
}

/// Pairs every gold mention with exactly one prediction by
/// `(sentence, span)`; repeated keys pair up in file order.
pub fn evaluate(gold: &[LabeledMention], predictions: &[Prediction]) -> Result<EvalReport> {
    let mut by_key: HashMap<(&str, CharSpan), Vec<&Prediction>> = HashMap::new();
    for p in predictions.iter().rev() {
        by_key.entry((p.sentence.as_str(), p.span)).or_default().push(p);
    }
    let mut tally = Tally::default();
    for g in gold {
        let prediction = by_key
            .get_mut(&(g.sentence.as_str(), g.span))
            .and_then(Vec::pop)
            .ok_or_else(|| {
                Error::Data(format!(
                    "no prediction for mention {} in sentence {:?}",
                    g.span, g.sentence
                ))
            })?;
        tally.add(&expand_all(&g.gold), &expand_to_path_set(&prediction.path));
    }
    if let Some(extra) = by_key.values().flatten().next() {
        return Err(Error::Data(format!(
            "prediction for mention {} in sentence {:?} has no gold mention",
            extra.span, extra.sentence
        )));
    }
    Ok(tally.report())
}
