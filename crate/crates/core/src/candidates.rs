//! Candidate type generation: Hearst-pattern prompts, per-pattern fill-mask
//! predictions, and the voting ensemble over them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, MaskPrediction, MASK};
use crate::text::{normalize_label, CharSpan};
use crate::{Error, Result};

pub const MENTION_SLOT: &str = "{mention}";

/// The four patterns that ship as defaults.
pub const DEFAULT_PATTERNS: [&str; 4] = [
    "[MASK] such as {mention}",
    "such [MASK] as {mention}",
    "{mention} and some other [MASK]",
    "{mention} and the other [MASK]",
];

pub const DEFAULT_TOP_K: usize = 10;

/// A prompt template with exactly one `{mention}` and one `[MASK]` slot.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct HearstPattern(String);

impl HearstPattern {
    pub fn new(template: &str) -> Result<Self> {
        let mentions = template.matches(MENTION_SLOT).count();
        let masks = template.matches(MASK).count();
        if mentions != 1 || masks != 1 {
            return Err(Error::Config(format!(
                "pattern {template:?} needs exactly one {MENTION_SLOT} and one {MASK} \
                 (found {mentions} and {masks})"
            )));
        }
        Ok(HearstPattern(template.to_string()))
    }

    pub fn template(&self) -> &str {
        &self.0
    }

    pub fn expand(&self, mention: &str) -> String {
        self.0.replace(MENTION_SLOT, mention)
    }
}

impl fmt::Display for HearstPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for HearstPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HearstPattern::new(s)
    }
}

impl TryFrom<String> for HearstPattern {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        HearstPattern::new(&s)
    }
}

impl From<HearstPattern> for String {
    fn from(p: HearstPattern) -> String {
        p.0
    }
}

pub fn default_patterns() -> Vec<HearstPattern> {
    DEFAULT_PATTERNS
        .iter()
        .map(|t| HearstPattern::new(t).expect("default patterns are well-formed"))
        .collect()
}

/// Parses a pattern file: one template per line, `#` comments.
pub fn load_patterns(source: &str) -> Result<Vec<HearstPattern>> {
    let mut patterns = Vec::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let pattern = HearstPattern::new(line)
            .map_err(|e| Error::Config(format!("pattern file line {}: {e}", i + 1)))?;
        patterns.push(pattern);
    }
    if patterns.is_empty() {
        return Err(Error::Config("pattern file lists no patterns".into()));
    }
    Ok(patterns)
}

/// Replaces the mention in place with the pattern's expansion.
pub fn build_prompt(sentence: &str, span: CharSpan, pattern: &HearstPattern) -> Result<String> {
    let range = span.byte_range(sentence)?;
    let mention = &sentence[range.clone()];
    let mut out = String::with_capacity(sentence.len() + pattern.template().len());
    out.push_str(&sentence[..range.start]);
    out.push_str(&pattern.expand(mention));
    out.push_str(&sentence[range.end..]);
    Ok(out)
}

/// `floor(n / 2) + 1`.
pub fn default_min_votes(n: usize) -> usize {
    n / 2 + 1
}

/// Counts, for every normalized label, how many patterns produced it.
/// A label counts at most once per pattern; junk tokens are dropped.
pub fn count_votes<S: AsRef<str>>(per_pattern: &[Vec<S>]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for tokens in per_pattern {
        let distinct: BTreeSet<String> = tokens
            .iter()
            .filter_map(|t| normalize_label(t.as_ref()))
            .collect();
        for label in distinct {
            *counts.entry(label).or_insert(0) += 1;
        }
    }
    counts
}

/// Labels produced by at least `min_votes` distinct patterns, with counts.
pub fn ensemble_vote<S: AsRef<str>>(
    per_pattern: &[Vec<S>],
    min_votes: usize,
) -> Result<BTreeMap<String, usize>> {
    check_min_votes(min_votes, per_pattern.len())?;
    Ok(count_votes(per_pattern)
        .into_iter()
        .filter(|&(_, c)| c >= min_votes)
        .collect())
}

fn check_min_votes(m: usize, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("at least one pattern is required".into()));
    }
    if m == 0 || m > n {
        return Err(Error::Config(format!(
            "min_votes must be in 1..={n} for {n} patterns, got {m}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternPredictions {
    pub pattern: HearstPattern,
    pub prompt: String,
    pub predictions: Vec<MaskPrediction>,
}

/// Voted hypernym labels plus the mention's head word.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateTypeSet {
    pub labels: BTreeSet<String>,
    pub head_word: Option<String>,
    pub per_pattern: Vec<PatternPredictions>,
    /// Counts for every normalized label seen, voted or not.
    pub vote_counts: BTreeMap<String, usize>,
    pub min_votes: usize,
}

impl CandidateTypeSet {
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty() && self.head_word.is_none()
    }
}

#[derive(Clone, Debug)]
pub struct GenerationSettings {
    pub patterns: Vec<HearstPattern>,
    pub top_k: usize,
    /// `None` means `floor(n / 2) + 1`.
    pub min_votes: Option<usize>,
    pub use_head_word: bool,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings {
            patterns: default_patterns(),
            top_k: DEFAULT_TOP_K,
            min_votes: None,
            use_head_word: true,
        }
    }
}

impl GenerationSettings {
    pub fn effective_min_votes(&self) -> usize {
        self.min_votes
            .unwrap_or_else(|| default_min_votes(self.patterns.len()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        check_min_votes(self.effective_min_votes(), self.patterns.len())
    }
}

pub fn generate_candidates(
    sentence: &str,
    span: CharSpan,
    settings: &GenerationSettings,
    backend: &Backend,
) -> Result<CandidateTypeSet> {
    settings.validate()?;
    let min_votes = settings.effective_min_votes();

    let per_pattern = settings
        .patterns
        .par_iter()
        .map(|pattern| {
            let prompt = build_prompt(sentence, span, pattern)?;
            let predictions = backend.fill_mask(&prompt, settings.top_k)?;
            Ok(PatternPredictions {
                pattern: pattern.clone(),
                prompt,
                predictions,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let token_lists: Vec<Vec<&str>> = per_pattern
        .iter()
        .map(|p| p.predictions.iter().map(|x| x.token.as_str()).collect())
        .collect();
    let vote_counts = count_votes(&token_lists);
    let labels = vote_counts
        .iter()
        .filter(|&(_, &c)| c >= min_votes)
        .map(|(l, _)| l.clone())
        .collect();

    let head_word = if settings.use_head_word {
        backend
            .head_word(sentence, span)?
            .and_then(|h| normalize_label(&h))
    } else {
        None
    };

    Ok(CandidateTypeSet {
        labels,
        head_word,
        per_pattern,
        vote_counts,
        min_votes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const S1: &str = "Sammy Sosa got a standing ovation at Wrigley Field.";

    fn wrigley() -> CharSpan {
        CharSpan::new(37, 50)
    }

    #[test]
    fn pattern_slots_are_checked() {
        assert!(HearstPattern::new("[MASK] such as {mention}").is_ok());
        assert!(HearstPattern::new("[MASK] such as").is_err());
        assert!(HearstPattern::new("{mention} {mention} [MASK]").is_err());
        assert!(HearstPattern::new("{mention} [MASK] [MASK]").is_err());
    }

    #[test]
    fn prompts_substitute_in_place() {
        assert_eq!(wrigley().slice(S1).unwrap(), "Wrigley Field");
        let trailing = HearstPattern::new("{mention} and the other [MASK]").unwrap();
        assert_eq!(
            build_prompt(S1, wrigley(), &trailing).unwrap(),
            "Sammy Sosa got a standing ovation at Wrigley Field and the other [MASK]."
        );
        let leading = HearstPattern::new("[MASK] such as {mention}").unwrap();
        assert_eq!(
            build_prompt(S1, wrigley(), &leading).unwrap(),
            "Sammy Sosa got a standing ovation at [MASK] such as Wrigley Field."
        );
        let appositive = HearstPattern::new("{mention}, a [MASK],").unwrap();
        let prompt = build_prompt(S1, CharSpan::new(0, 10), &appositive).unwrap();
        assert_eq!(prompt, "Sammy Sosa, a [MASK], got a standing ovation at Wrigley Field.");
        assert!(build_prompt(S1, CharSpan::new(40, 100), &leading).is_err());
    }

    #[test]
    fn default_m_is_majority() {
        assert_eq!(default_min_votes(4), 3);
        assert_eq!(default_min_votes(1), 1);
        assert_eq!(default_min_votes(5), 3);
        assert_eq!(GenerationSettings::default().effective_min_votes(), 3);
    }

    #[test]
    fn vote_counting() {
        let lists = vec![
            vec!["a", "b", "c"],
            vec!["a", "b", "d"],
            vec!["a", "e", "f"],
            vec!["a", "b", "g"],
        ];
        let voted = ensemble_vote(&lists, 3).unwrap();
        assert_eq!(voted, BTreeMap::from([("a".into(), 4), ("b".into(), 3)]));
    }

    #[test]
    fn duplicates_within_a_pattern_count_once() {
        let lists = vec![vec!["Teams", "teams", "team"], vec!["x"]];
        assert_eq!(count_votes(&lists)["team"], 1);
    }

    #[test]
    fn junk_is_filtered_before_voting() {
        let lists = vec![vec!["##s", ",", "Venues"], vec!["##s", ".", "venue"]];
        let voted = ensemble_vote(&lists, 2).unwrap();
        assert_eq!(voted, BTreeMap::from([("venue".into(), 2)]));
    }

    #[test]
    fn bad_min_votes() {
        let lists = vec![vec!["a"], vec!["a"]];
        assert!(ensemble_vote(&lists, 3).is_err());
        assert!(ensemble_vote(&lists, 0).is_err());
        assert!(ensemble_vote::<&str>(&[], 1).is_err());
    }

    #[test]
    fn disjoint_lists_vote_nothing() {
        let lists = vec![vec!["a"], vec!["b"], vec!["c"], vec!["d"]];
        assert!(ensemble_vote(&lists, 3).unwrap().is_empty());
    }

    #[test]
    fn pattern_file() {
        let ps = load_patterns("# defaults\n[MASK] such as {mention}\n\nsuch [MASK] as {mention}\n").unwrap();
        assert_eq!(ps.len(), 2);
        assert!(load_patterns("# nothing\n").is_err());
        let err = load_patterns("[MASK] such as {mention}\nbroken\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    fn arb_lists() -> impl Strategy<Value = Vec<Vec<String>>> {
        // Alphabet of 20 labels that are fixed points of normalization.
        let word = (0u8..20).prop_map(|i| format!("w{}x", (b'a' + i) as char));
        proptest::collection::vec(proptest::collection::vec(word, 0..10), 1..=8)
    }

    proptest! {
        #[test]
        fn vote_matches_definition(lists in arb_lists(), m_seed in 0usize..8) {
            let n = lists.len();
            let m = m_seed % n + 1;
            let voted = ensemble_vote(&lists, m).unwrap();
            let universe: BTreeSet<String> = lists.iter().flatten().cloned().collect();
            for label in &universe {
                let c = lists.iter().filter(|l| l.contains(label)).count();
                prop_assert_eq!(voted.get(label).copied(), (c >= m).then_some(c));
            }
            prop_assert!(voted.keys().all(|k| universe.contains(k)));
        }

        #[test]
        fn raising_m_never_adds(lists in arb_lists()) {
            let n = lists.len();
            let sets: Vec<BTreeSet<String>> = (1..=n)
                .map(|m| ensemble_vote(&lists, m).unwrap().into_keys().collect())
                .collect();
            for w in sets.windows(2) {
                prop_assert!(w[1].is_subset(&w[0]));
            }
            let union: BTreeSet<String> = lists.iter().flatten().cloned().collect();
            let intersection: BTreeSet<String> = union
                .iter()
                .filter(|l| lists.iter().all(|x| x.contains(l)))
                .cloned()
                .collect();
            prop_assert_eq!(&sets[0], &union);
            prop_assert_eq!(&sets[n - 1], &intersection);
        }
    }
}
