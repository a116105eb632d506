//! High-level alignment of noisy candidate labels onto first-level types.
//!
//! Each first-level type gets a node embedding: the mean vector of its own
//! name and its verbalizer seed terms. A candidate label is assigned to the
//! first-level type whose node embedding has the highest cosine similarity
//! with the label's vector.

use std::collections::{BTreeMap, BTreeSet};

use log::debug;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, WordVectors};
use crate::candidates::CandidateTypeSet;
use crate::ontology::TypeOntology;
use crate::text::words;
use crate::{Error, Result};

pub const MIN_SEEDS: usize = 5;

/// Static word-embedding table in the textual word2vec layout:
/// a `vocab_size dim` header, then `word v1 ... vd` per line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn parse(source: &str) -> Result<Self> {
        let mut lines = source
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Data("embedding table is empty".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [vocab, dim] = fields[..] else {
            return Err(Error::Data(format!(
                "embedding header {header:?} must be \"vocab_size dim\""
            )));
        };
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Data(format!("embedding header field {s:?} is not an integer")))
        };
        let (vocab, dim) = (parse_usize(vocab)?, parse_usize(dim)?);
        if dim == 0 {
            return Err(Error::Data("embedding dimension must be positive".into()));
        }

        let mut vectors = BTreeMap::new();
        for (i, line) in lines {
            let mut fields = line.split_whitespace();
            let word = fields.next().unwrap_or_default().to_string();
            let vector = fields
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Data(format!("embedding line {}: {e}", i + 1)))?;
            if vector.len() != dim {
                return Err(Error::Data(format!(
                    "embedding line {}: {} values for dimension {dim}",
                    i + 1,
                    vector.len()
                )));
            }
            if vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("embedding line {}: non-finite value", i + 1)));
            }
            if vectors.insert(word.clone(), vector).is_some() {
                return Err(Error::Data(format!(
                    "embedding line {}: duplicate word {word:?}",
                    i + 1
                )));
            }
        }
        if vectors.len() != vocab {
            return Err(Error::Data(format!(
                "embedding header declares {vocab} words, found {}",
                vectors.len()
            )));
        }
        Ok(EmbeddingTable { dim, vectors })
    }

    pub fn from_entries<I: IntoIterator<Item = (String, Vec<f64>)>>(dim: usize, entries: I) -> Self {
        EmbeddingTable {
            dim,
            vectors: entries.into_iter().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(w, v)| (w.as_str(), v.as_slice()))
    }
}

/// Seed terms per first-level type, as a JSON object `{type: [seed, ...]}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Verbalizer {
    pub seeds: BTreeMap<String, Vec<String>>,
}

impl Verbalizer {
    pub fn from_json(source: &str) -> Result<Self> {
        serde_json::from_str(source).map_err(|e| Error::Config(format!("verbalizer: {e}")))
    }

    /// Every first-level type needs an entry with at least [`MIN_SEEDS`]
    /// seeds, and every entry must name a first-level type.
    pub fn validate(&self, ontology: &TypeOntology) -> Result<()> {
        let roots: BTreeSet<String> = ontology.roots().iter().map(|r| r.name().to_string()).collect();
        for (name, seeds) in &self.seeds {
            if !roots.contains(name) {
                return Err(Error::Config(format!(
                    "verbalizer entry {name:?} is not a first-level type"
                )));
            }
            if seeds.len() < MIN_SEEDS {
                return Err(Error::Config(format!(
                    "verbalizer entry {name:?} has {} seeds, need at least {MIN_SEEDS}",
                    seeds.len()
                )));
            }
        }
        if let Some(missing) = roots.iter().find(|r| !self.seeds.contains_key(*r)) {
            return Err(Error::Config(format!(
                "first-level type {missing:?} has no verbalizer entry"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeEmbedding {
    pub type_name: String,
    pub vector: Vec<f64>,
    /// The in-vocabulary subset of the type name and its seeds.
    pub contributing_terms: Vec<String>,
}

fn mean(vectors: &[&[f64]]) -> Vec<f64> {
    let dim = vectors[0].len();
    let mut out = vec![0.0; dim];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    let n = vectors.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Vector for a possibly multi-word term: the mean of its in-vocabulary
/// words, or `None` when none are known.
pub fn term_vector(term: &str, vectors: &WordVectors) -> Option<Vec<f64>> {
    let known: Vec<&[f64]> = words(term).iter().filter_map(|w| vectors.get(w)).collect();
    (!known.is_empty()).then(|| mean(&known))
}

/// Mean of the in-vocabulary members of `{type_name} ∪ seeds`.
pub fn node_embedding_from_vectors(
    type_name: &str,
    seeds: &[String],
    vectors: &WordVectors,
) -> Result<NodeEmbedding> {
    let mut contributing_terms = Vec::new();
    let mut term_vectors = Vec::new();
    for term in std::iter::once(type_name).chain(seeds.iter().map(String::as_str)) {
        match term_vector(term, vectors) {
            Some(v) => {
                contributing_terms.push(term.to_string());
                term_vectors.push(v);
            }
            None => debug!("verbalizer term {term:?} for {type_name:?} is out of vocabulary"),
        }
    }
    if term_vectors.is_empty() {
        return Err(Error::Config(format!(
            "every verbalizer term for type {type_name:?} is out of vocabulary"
        )));
    }
    let refs: Vec<&[f64]> = term_vectors.iter().map(Vec::as_slice).collect();
    Ok(NodeEmbedding {
        type_name: type_name.to_string(),
        vector: mean(&refs),
        contributing_terms,
    })
}

pub fn build_node_embedding(type_name: &str, seeds: &[String], backend: &Backend) -> Result<NodeEmbedding> {
    let lookup: Vec<String> = std::iter::once(type_name)
        .chain(seeds.iter().map(String::as_str))
        .flat_map(words)
        .collect();
    let vectors = backend.embed(&lookup)?;
    node_embedding_from_vectors(type_name, seeds, &vectors)
}

/// Node embeddings for every first-level type, ordered by type name.
pub fn build_node_embeddings(
    verbalizer: &Verbalizer,
    ontology: &TypeOntology,
    backend: &Backend,
) -> Result<Vec<NodeEmbedding>> {
    verbalizer.validate(ontology)?;
    ontology
        .roots()
        .iter()
        .map(|root| build_node_embedding(root.name(), &verbalizer.seeds[root.name()], backend))
        .collect()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignmentScore {
    pub label: String,
    /// Cosine against each first-level type's node embedding.
    pub scores: BTreeMap<String, f64>,
    pub winner: String,
}

impl AlignmentScore {
    pub fn winner_score(&self) -> f64 {
        self.scores[&self.winner]
    }
}

/// Ranks first-level types for one label vector. Ties go to the
/// lexicographically smallest type name.
pub fn align_vector(label: &str, vector: &[f64], nodes: &[NodeEmbedding]) -> Option<AlignmentScore> {
    let scores: BTreeMap<String, f64> = nodes
        .iter()
        .map(|n| (n.type_name.clone(), cosine(vector, &n.vector)))
        .collect();
    let mut winner: Option<(&String, f64)> = None;
    for (name, &score) in &scores {
        if winner.is_none_or(|(_, best)| score > best) {
            winner = Some((name, score));
        }
    }
    let winner = winner?.0.clone();
    Some(AlignmentScore {
        label: label.to_string(),
        scores,
        winner,
    })
}

/// `None` when the label is out of vocabulary.
pub fn align_candidate(label: &str, nodes: &[NodeEmbedding], backend: &Backend) -> Result<Option<AlignmentScore>> {
    let vectors = backend.embed(&words(label))?;
    Ok(term_vector(label, &vectors).and_then(|v| align_vector(label, &v, nodes)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Voted,
    HeadWord,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignedLabel {
    pub label: String,
    pub source: LabelSource,
    pub score: f64,
}

/// Candidate labels partitioned by their winning first-level type.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AlignedCandidates {
    pub by_type: BTreeMap<String, Vec<AlignedLabel>>,
    /// Out-of-vocabulary labels that could not be aligned.
    pub dropped: Vec<String>,
}

impl AlignedCandidates {
    pub fn is_empty(&self) -> bool {
        self.by_type.is_empty()
    }

    pub fn has_source(&self, type_name: &str, source: LabelSource) -> bool {
        self.by_type
            .get(type_name)
            .is_some_and(|ls| ls.iter().any(|l| l.source == source))
    }

    pub fn labels_for(&self, type_name: &str) -> Vec<&str> {
        self.by_type
            .get(type_name)
            .map(|ls| ls.iter().map(|l| l.label.as_str()).collect())
            .unwrap_or_default()
    }
}

/// Aligns every voted label and the head word with one embedding lookup.
pub fn align_candidate_set(
    candidates: &CandidateTypeSet,
    nodes: &[NodeEmbedding],
    backend: &Backend,
) -> Result<AlignedCandidates> {
    let mut items: Vec<(&str, LabelSource)> = candidates
        .labels
        .iter()
        .map(|l| (l.as_str(), LabelSource::Voted))
        .collect();
    if let Some(head) = &candidates.head_word {
        items.push((head.as_str(), LabelSource::HeadWord));
    }
    let mut aligned = AlignedCandidates::default();
    if items.is_empty() {
        return Ok(aligned);
    }

    let lookup: Vec<String> = items.iter().flat_map(|(l, _)| words(l)).collect();
    let vectors = backend.embed(&lookup)?;
    for (label, source) in items {
        match term_vector(label, &vectors).and_then(|v| align_vector(label, &v, nodes)) {
            Some(score) => aligned
                .by_type
                .entry(score.winner.clone())
                .or_default()
                .push(AlignedLabel {
                    label: label.to_string(),
                    source,
                    score: score.winner_score(),
                }),
            None => {
                debug!("candidate label {label:?} is out of vocabulary; skipped");
                aligned.dropped.push(label.to_string());
            }
        }
    }
    Ok(aligned)
}
