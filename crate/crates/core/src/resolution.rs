//! Type resolution: pick a first-level type, then walk down the ontology
//! while the best child beats its parent by at least `theta`.
//!
//! Every type is scored as `rank = sigma_entail + sigma_cand`. `sigma_entail`
//! is the entailment probability of "In this sentence, M is a T." given the
//! sentence. `sigma_cand` is a presence bonus: `w_cand` when candidate-label
//! evidence supports the type and `w_head` when the head word does. At the
//! first level the evidence is the embedding alignment; below it, a label
//! supports a type when the label names the type or one of its descendants.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    align_candidate_set, build_node_embeddings, AlignedCandidates, LabelSource, NodeEmbedding,
    Verbalizer,
};
use crate::backend::Backend;
use crate::candidates::{generate_candidates, CandidateTypeSet, GenerationSettings};
use crate::ontology::{TypeOntology, TypePath};
use crate::text::{type_name_key, CharSpan};
use crate::{Error, Result};

pub const DEFAULT_THETA: f64 = 0.3;
pub const DEFAULT_W_CAND: f64 = 0.5;
pub const DEFAULT_W_HEAD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_cand: f64,
    pub w_head: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            w_cand: DEFAULT_W_CAND,
            w_head: DEFAULT_W_HEAD,
        }
    }
}

impl Weights {
    /// The only values `sigma_cand` may take.
    pub fn admissible_bonuses(&self) -> [f64; 4] {
        [0.0, self.w_cand, self.w_head, self.w_cand + self.w_head]
    }

    fn bonus(&self, voted: bool, head: bool) -> f64 {
        match (voted, head) {
            (false, false) => 0.0,
            (true, false) => self.w_cand,
            (false, true) => self.w_head,
            (true, true) => self.w_cand + self.w_head,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolutionSettings {
    pub theta: f64,
    pub weights: Weights,
    /// When false, no entailment calls are made: `sigma_entail` is 0, and
    /// refinement descends into the best label-supported child regardless
    /// of `theta`.
    pub use_nli: bool,
}

impl Default for ResolutionSettings {
    fn default() -> Self {
        ResolutionSettings {
            theta: DEFAULT_THETA,
            weights: Weights::default(),
            use_nli: true,
        }
    }
}

impl ResolutionSettings {
    pub fn validate(&self) -> Result<()> {
        if self.theta.is_nan() || self.theta < 0.0 {
            return Err(Error::Config(format!("theta must be >= 0, got {}", self.theta)));
        }
        for (name, w) in [("w_cand", self.weights.w_cand), ("w_head", self.weights.w_head)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hypothesis {
    pub mention: String,
    pub type_name: String,
    pub rendered: String,
}

/// `sports_team` becomes `sports team`.
pub fn verbalize_type(type_name: &str) -> String {
    type_name.replace('_', " ").to_lowercase()
}

pub fn render_hypothesis(mention: &str, type_name: &str) -> Hypothesis {
    Hypothesis {
        mention: mention.to_string(),
        type_name: type_name.to_string(),
        rendered: format!("In this sentence, {mention} is a {}.", verbalize_type(type_name)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedType {
    #[serde(rename = "type")]
    pub path: TypePath,
    pub sigma_entail: f64,
    pub sigma_cand: f64,
    pub rank: f64,
}

impl RankedType {
    fn new(path: TypePath, sigma_entail: f64, sigma_cand: f64) -> Self {
        RankedType {
            path,
            sigma_entail,
            sigma_cand,
            rank: sigma_entail + sigma_cand,
        }
    }
}

/// Rank descending, then path ascending.
fn sort_ranked(ranked: &mut [RankedType]) {
    ranked.sort_by(|a, b| b.rank.total_cmp(&a.rank).then_with(|| a.path.cmp(&b.path)));
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// The final type has no children.
    Leaf,
    /// The best child did not gain `theta` over its parent.
    Theta,
    /// Children exist but none was eligible (only without entailment).
    EmptyChildren,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Leaf => "leaf",
            StopReason::Theta => "theta",
            StopReason::EmptyChildren => "empty-children",
        })
    }
}

/// One ranking round: the first level has no parent; deeper rounds carry
/// the parent re-scored under the same rule as its children.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRanking {
    pub parent: Option<RankedType>,
    pub ranked: Vec<RankedType>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypingDecision {
    pub sentence: String,
    pub mention: String,
    pub span: CharSpan,
    pub path: TypePath,
    pub stop_reason: StopReason,
    /// The chosen type at each depth of `path`.
    pub levels: Vec<RankedType>,
    pub rankings: Vec<LevelRanking>,
}

impl TypingDecision {
    /// Every scored type in the decision.
    pub fn ranked_types(&self) -> impl Iterator<Item = &RankedType> {
        self.levels.iter().chain(
            self.rankings
                .iter()
                .flat_map(|l| l.parent.iter().chain(l.ranked.iter())),
        )
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("decisions serialize")
    }
}

/// Ontology nodes whose names match candidate labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CandidateMatches {
    pub voted: Vec<TypePath>,
    pub head: Vec<TypePath>,
}

impl CandidateMatches {
    fn supports(paths: &[TypePath], ty: &TypePath) -> bool {
        paths.iter().any(|p| p.is_descendant_or_equal(ty))
    }

    pub fn bonus(&self, ty: &TypePath, weights: &Weights) -> f64 {
        weights.bonus(Self::supports(&self.voted, ty), Self::supports(&self.head, ty))
    }
}

/// Maps normalized labels to the ontology nodes they name.
#[derive(Clone, Debug, Default)]
pub struct LabelMatcher {
    by_key: HashMap<String, Vec<TypePath>>,
}

impl LabelMatcher {
    pub fn new(ontology: &TypeOntology) -> Self {
        let mut by_key: HashMap<String, Vec<TypePath>> = HashMap::new();
        for node in ontology.nodes() {
            by_key
                .entry(type_name_key(&node.name))
                .or_default()
                .push(node.path.clone());
        }
        LabelMatcher { by_key }
    }

    pub fn lookup(&self, label: &str) -> &[TypePath] {
        self.by_key
            .get(&type_name_key(label))
            .map(Vec::as_slice)
            .unwrap_or_default()
    }

    pub fn match_candidates(&self, candidates: &CandidateTypeSet) -> CandidateMatches {
        let voted: BTreeSet<TypePath> = candidates
            .labels
            .iter()
            .flat_map(|l| self.lookup(l).iter().cloned())
            .collect();
        let head: BTreeSet<TypePath> = candidates
            .head_word
            .iter()
            .flat_map(|h| self.lookup(h).iter().cloned())
            .collect();
        CandidateMatches {
            voted: voted.into_iter().collect(),
            head: head.into_iter().collect(),
        }
    }
}

fn entail_score(
    sentence: &str,
    mention: &str,
    ty: &TypePath,
    backend: &Backend,
    settings: &ResolutionSettings,
) -> Result<f64> {
    if !settings.use_nli {
        return Ok(0.0);
    }
    let hypothesis = render_hypothesis(mention, ty.name());
    Ok(backend.entail(sentence, &hypothesis.rendered)?.entail)
}

/// Scores `types` with subtree-or-self label support; sorted by rank
/// descending, ties by path.
pub fn rank_types(
    sentence: &str,
    mention: &str,
    types: &[TypePath],
    matches: &CandidateMatches,
    backend: &Backend,
    settings: &ResolutionSettings,
) -> Result<Vec<RankedType>> {
    let mut ranked = types
        .par_iter()
        .map(|ty| {
            let sigma_entail = entail_score(sentence, mention, ty, backend, settings)?;
            Ok(RankedType::new(ty.clone(), sigma_entail, matches.bonus(ty, &settings.weights)))
        })
        .collect::<Result<Vec<_>>>()?;
    sort_ranked(&mut ranked);
    Ok(ranked)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HighLevelSelection {
    pub winner: RankedType,
    pub ranked: Vec<RankedType>,
    pub aligned: AlignedCandidates,
}

/// Ranks every first-level type, crediting `w_cand` to types that won the
/// alignment of some voted label and `w_head` to the head word's type.
pub fn select_high_level(
    sentence: &str,
    mention: &str,
    candidates: &CandidateTypeSet,
    ontology: &TypeOntology,
    nodes: &[NodeEmbedding],
    backend: &Backend,
    settings: &ResolutionSettings,
) -> Result<HighLevelSelection> {
    let roots = ontology.roots();
    if roots.is_empty() {
        return Err(Error::Config("ontology has no first-level types".into()));
    }
    let aligned = align_candidate_set(candidates, nodes, backend)?;
    let mut ranked = roots
        .par_iter()
        .map(|root| {
            let sigma_entail = entail_score(sentence, mention, root, backend, settings)?;
            let bonus = settings.weights.bonus(
                aligned.has_source(root.name(), LabelSource::Voted),
                aligned.has_source(root.name(), LabelSource::HeadWord),
            );
            Ok(RankedType::new(root.clone(), sigma_entail, bonus))
        })
        .collect::<Result<Vec<_>>>()?;
    sort_ranked(&mut ranked);
    Ok(HighLevelSelection {
        winner: ranked[0].clone(),
        ranked,
        aligned,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Refinement {
    pub path: TypePath,
    pub stop_reason: StopReason,
    /// Chosen types below the high-level type.
    pub chosen: Vec<RankedType>,
    pub rankings: Vec<LevelRanking>,
}

pub fn refine_fine_grained(
    high_level: &TypePath,
    sentence: &str,
    mention: &str,
    matches: &CandidateMatches,
    ontology: &TypeOntology,
    backend: &Backend,
    settings: &ResolutionSettings,
) -> Result<Refinement> {
    let mut current = high_level.clone();
    let mut current_ranked: Option<RankedType> = None;
    let mut chosen = Vec::new();
    let mut rankings = Vec::new();

    let stop_reason = loop {
        let children = ontology.children(&current)?;
        if children.is_empty() {
            break StopReason::Leaf;
        }
        let parent = match current_ranked.take() {
            Some(r) => r,
            None => rank_types(sentence, mention, &[current.clone()], matches, backend, settings)?
                .remove(0),
        };
        let ranked = rank_types(sentence, mention, &children, matches, backend, settings)?;
        let best = if settings.use_nli {
            ranked.first()
        } else {
            ranked.iter().find(|r| r.sigma_cand > 0.0)
        }
        .cloned();
        let parent_rank = parent.rank;
        rankings.push(LevelRanking {
            parent: Some(parent),
            ranked,
        });

        let Some(best) = best else {
            break StopReason::EmptyChildren;
        };
        if settings.use_nli && best.rank - parent_rank < settings.theta {
            break StopReason::Theta;
        }
        current = best.path.clone();
        chosen.push(best.clone());
        current_ranked = Some(best);
    };

    Ok(Refinement {
        path: current,
        stop_reason,
        chosen,
        rankings,
    })
}

/// Everything computed while typing one mention.
#[derive(Clone, Debug, PartialEq)]
pub struct MentionTrace {
    pub candidates: CandidateTypeSet,
    pub matches: CandidateMatches,
    pub high_level: HighLevelSelection,
    pub decision: TypingDecision,
}

#[derive(Clone, Debug, Default)]
pub struct EngineSettings {
    pub generation: GenerationSettings,
    pub resolution: ResolutionSettings,
}

impl EngineSettings {
    pub fn validate(&self) -> Result<()> {
        self.generation.validate()?;
        self.resolution.validate()
    }
}

/// The full typing pipeline over a fixed ontology and backend.
pub struct Engine {
    ontology: TypeOntology,
    nodes: Vec<NodeEmbedding>,
    matcher: LabelMatcher,
    settings: EngineSettings,
    backend: Backend,
}

impl Engine {
    /// Validates settings and builds the first-level node embeddings.
    pub fn new(
        ontology: TypeOntology,
        verbalizer: &Verbalizer,
        settings: EngineSettings,
        backend: Backend,
    ) -> Result<Self> {
        settings.validate()?;
        if ontology.is_empty() {
            return Err(Error::Config("ontology has no types".into()));
        }
        let nodes = build_node_embeddings(verbalizer, &ontology, &backend)?;
        let matcher = LabelMatcher::new(&ontology);
        Ok(Engine {
            ontology,
            nodes,
            matcher,
            settings,
            backend,
        })
    }

    pub fn ontology(&self) -> &TypeOntology {
        &self.ontology
    }

    pub fn node_embeddings(&self) -> &[NodeEmbedding] {
        &self.nodes
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    pub fn trace_mention(&self, sentence: &str, span: CharSpan) -> Result<MentionTrace> {
        let mention = span.slice(sentence)?.to_string();
        let candidates = generate_candidates(sentence, span, &self.settings.generation, &self.backend)?;
        let matches = self.matcher.match_candidates(&candidates);
        let resolution = &self.settings.resolution;
        let high_level = select_high_level(
            sentence,
            &mention,
            &candidates,
            &self.ontology,
            &self.nodes,
            &self.backend,
            resolution,
        )?;
        let refinement = refine_fine_grained(
            &high_level.winner.path,
            sentence,
            &mention,
            &matches,
            &self.ontology,
            &self.backend,
            resolution,
        )?;

        let mut levels = vec![high_level.winner.clone()];
        levels.extend(refinement.chosen);
        let mut rankings = vec![LevelRanking {
            parent: None,
            ranked: high_level.ranked.clone(),
        }];
        rankings.extend(refinement.rankings);
        let decision = TypingDecision {
            sentence: sentence.to_string(),
            mention,
            span,
            path: refinement.path,
            stop_reason: refinement.stop_reason,
            levels,
            rankings,
        };
        Ok(MentionTrace {
            candidates,
            matches,
            high_level,
            decision,
        })
    }

    pub fn type_mention(&self, sentence: &str, span: CharSpan) -> Result<TypingDecision> {
        self.trace_mention(sentence, span).map(|t| t.decision)
    }

    /// Types mentions with up to `parallelism` in flight; results keep the
    /// input order.
    pub fn type_mentions(
        &self,
        mentions: &[(String, CharSpan)],
        parallelism: usize,
    ) -> Result<Vec<Result<TypingDecision>>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(pool.install(|| {
            mentions
                .par_iter()
                .map(|(sentence, span)| self.type_mention(sentence, *span))
                .collect()
        }))
    }
}
