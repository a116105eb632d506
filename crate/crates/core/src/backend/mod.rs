//! Model services behind a small request/response protocol.
//!
//! Every model call is a [`BackendRequest`]. A [`Transport`] turns a request
//! into raw response bytes; [`Backend`] wraps any transport with request
//! checks and response validation so that replayed fixtures, a remote
//! sidecar, and the scripted stand-in all obey the same contracts.

mod fixture;
mod remote;
mod scripted;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::text::CharSpan;

pub use fixture::{FixtureStore, Recorder};
pub use remote::RemoteTransport;
pub use scripted::{Script, ScriptedTransport};

/// Mask slot as spelled in engine-level text.
pub const MASK: &str = "[MASK]";

/// Tolerance on the entail/neutral/contradict sum.
pub const VERDICT_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("missing fixture {hash}.json for {kind} request")]
    MissingFixture { hash: String, kind: RequestKind },
    #[error("corrupt fixture {hash}.json: {reason}")]
    CorruptFixture { hash: String, reason: String },
    #[error("malformed {kind} response: {reason}")]
    Malformed { kind: RequestKind, reason: String },
    #[error("fixture io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    FillMask,
    Entail,
    Embed,
    HeadWord,
}

impl RequestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestKind::FillMask => "fill_mask",
            RequestKind::Entail => "entail",
            RequestKind::Embed => "embed",
            RequestKind::HeadWord => "head_word",
        }
    }
}

impl fmt::Display for RequestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum BackendRequest {
    FillMask { text: String, top_k: usize },
    Entail { premise: String, hypothesis: String },
    Embed { tokens: Vec<String> },
    HeadWord { sentence: String, span: CharSpan },
}

impl BackendRequest {
    pub fn kind(&self) -> RequestKind {
        match self {
            BackendRequest::FillMask { .. } => RequestKind::FillMask,
            BackendRequest::Entail { .. } => RequestKind::Entail,
            BackendRequest::Embed { .. } => RequestKind::Embed,
            BackendRequest::HeadWord { .. } => RequestKind::HeadWord,
        }
    }

    /// HTTP path of the endpoint serving this request.
    pub fn endpoint(&self) -> String {
        format!("/{}", self.kind())
    }

    /// The request body sent over the wire.
    pub fn payload(&self) -> serde_json::Value {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(mut map)) => {
                map.remove("payload").unwrap_or(serde_json::Value::Null)
            }
            _ => unreachable!("requests always serialize to an object"),
        }
    }

    pub fn from_payload(kind: RequestKind, payload: serde_json::Value) -> serde_json::Result<Self> {
        serde_json::from_value(serde_json::json!({ "kind": kind, "payload": payload }))
    }

    /// Sorted keys, no insignificant whitespace.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        // serde_json::Value keeps object keys in a BTreeMap, so going
        // through it sorts every level.
        let value = serde_json::to_value(self).expect("request serializes");
        serde_json::to_vec(&value).expect("value serializes")
    }

    /// Lowercase hex SHA-256 of the canonical serialization.
    pub fn fixture_key(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_bytes()))
    }
}

/// Something that answers protocol requests with raw JSON response bodies.
pub trait Transport: Send + Sync {
    fn call(&self, request: &BackendRequest) -> Result<Vec<u8>, BackendError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn call(&self, request: &BackendRequest) -> Result<Vec<u8>, BackendError> {
        (**self).call(request)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPrediction {
    pub token: String,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FillMaskResponse {
    pub predictions: Vec<MaskPrediction>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntailmentVerdict {
    pub entail: f64,
    pub neutral: f64,
    pub contradict: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub vectors: BTreeMap<String, Option<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadWordResponse {
    pub head: Option<String>,
}

/// In-vocabulary vectors for one embed call. OOV words are simply absent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WordVectors {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }
}

fn in_unit_interval(x: f64) -> bool {
    x.is_finite() && (0.0..=1.0).contains(&x)
}

/// Checks the fill-mask response contract.
pub fn check_fill_mask(predictions: &[MaskPrediction], top_k: usize) -> Result<(), String> {
    if predictions.len() > top_k {
        return Err(format!(
            "{} predictions for top_k = {top_k}",
            predictions.len()
        ));
    }
    if let Some(p) = predictions.iter().find(|p| !in_unit_interval(p.probability)) {
        return Err(format!(
            "probability {} of {:?} outside [0, 1]",
            p.probability, p.token
        ));
    }
    if predictions
        .windows(2)
        .any(|w| w[0].probability < w[1].probability)
    {
        return Err("predictions not sorted by descending probability".into());
    }
    Ok(())
}

/// Checks the entailment response contract.
pub fn check_verdict(v: &EntailmentVerdict) -> Result<(), String> {
    for (name, x) in [
        ("entail", v.entail),
        ("neutral", v.neutral),
        ("contradict", v.contradict),
    ] {
        if !in_unit_interval(x) {
            return Err(format!("{name} = {x} outside [0, 1]"));
        }
    }
    let sum = v.entail + v.neutral + v.contradict;
    if (sum - 1.0).abs() > VERDICT_SUM_TOLERANCE {
        return Err(format!("probabilities sum to {sum}, not 1"));
    }
    Ok(())
}

/// Validating facade over a [`Transport`]. Cheap to clone.
#[derive(Clone)]
pub struct Backend {
    transport: Arc<dyn Transport>,
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backend").finish_non_exhaustive()
    }
}

impl Backend {
    pub fn new<T: Transport + 'static>(transport: T) -> Self {
        Backend {
            transport: Arc::new(transport),
        }
    }

    pub fn from_arc(transport: Arc<dyn Transport>) -> Self {
        Backend { transport }
    }

    fn call<R: serde::de::DeserializeOwned>(&self, request: &BackendRequest) -> Result<R, BackendError> {
        let bytes = self.transport.call(request)?;
        serde_json::from_slice(&bytes).map_err(|e| BackendError::Malformed {
            kind: request.kind(),
            reason: e.to_string(),
        })
    }

    pub fn fill_mask(&self, text: &str, top_k: usize) -> Result<Vec<MaskPrediction>, BackendError> {
        let slots = text.matches(MASK).count();
        if slots != 1 {
            return Err(BackendError::InvalidRequest(format!(
                "fill_mask text must contain exactly one {MASK} slot, found {slots}"
            )));
        }
        if top_k == 0 {
            return Err(BackendError::InvalidRequest("top_k must be at least 1".into()));
        }
        let request = BackendRequest::FillMask {
            text: text.to_string(),
            top_k,
        };
        let response: FillMaskResponse = self.call(&request)?;
        check_fill_mask(&response.predictions, top_k).map_err(|reason| {
            BackendError::Malformed {
                kind: RequestKind::FillMask,
                reason,
            }
        })?;
        Ok(response.predictions)
    }

    pub fn entail(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict, BackendError> {
        if premise.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(BackendError::InvalidRequest(
                "premise and hypothesis must be non-empty".into(),
            ));
        }
        let request = BackendRequest::Entail {
            premise: premise.to_string(),
            hypothesis: hypothesis.to_string(),
        };
        let verdict: EntailmentVerdict = self.call(&request)?;
        check_verdict(&verdict).map_err(|reason| BackendError::Malformed {
            kind: RequestKind::Entail,
            reason,
        })?;
        Ok(verdict)
    }

    /// Looks up word vectors. Tokens are lowercased, deduplicated, and sent
    /// in sorted order so that equal token sets make equal requests.
    pub fn embed<S: AsRef<str>>(&self, tokens: &[S]) -> Result<WordVectors, BackendError> {
        let mut sorted: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
        sorted.sort();
        sorted.dedup();
        if sorted.is_empty() {
            return Ok(WordVectors::default());
        }
        let request = BackendRequest::Embed {
            tokens: sorted.clone(),
        };
        let response: EmbedResponse = self.call(&request)?;
        let malformed = |reason: String| BackendError::Malformed {
            kind: RequestKind::Embed,
            reason,
        };
        let mut vectors = BTreeMap::new();
        for (word, vector) in response.vectors {
            let Some(vector) = vector else { continue };
            if vector.len() != response.dim {
                return Err(malformed(format!(
                    "vector for {word:?} has {} entries, expected {}",
                    vector.len(),
                    response.dim
                )));
            }
            if vector.iter().any(|x| !x.is_finite()) {
                return Err(malformed(format!("vector for {word:?} is not finite")));
            }
            if sorted.binary_search(&word).is_ok() {
                vectors.insert(word, vector);
            }
        }
        Ok(WordVectors {
            dim: response.dim,
            vectors,
        })
    }

    pub fn head_word(&self, sentence: &str, span: CharSpan) -> Result<Option<String>, BackendError> {
        span.slice(sentence)
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let request = BackendRequest::HeadWord {
            sentence: sentence.to_string(),
            span,
        };
        let response: HeadWordResponse = self.call(&request)?;
        Ok(response.head.filter(|h| !h.trim().is_empty()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_form_sorts_keys() {
        let r = BackendRequest::HeadWord {
            sentence: "A b.".into(),
            span: CharSpan::new(0, 1),
        };
        assert_eq!(
            String::from_utf8(r.canonical_bytes()).unwrap(),
            r#"{"kind":"head_word","payload":{"sentence":"A b.","span":{"end":1,"start":0}}}"#
        );
        assert_eq!(r.endpoint(), "/head_word");
        assert_eq!(r.fixture_key().len(), 64);
    }

    #[test]
    fn payload_round_trip() {
        let r = BackendRequest::Entail {
            premise: "p".into(),
            hypothesis: "h".into(),
        };
        let back = BackendRequest::from_payload(r.kind(), r.payload()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn verdict_checks() {
        let ok = EntailmentVerdict {
            entail: 0.2,
            neutral: 0.3,
            contradict: 0.5,
        };
        assert!(check_verdict(&ok).is_ok());
        let bad = EntailmentVerdict { entail: 0.5, ..ok };
        assert!(check_verdict(&bad).is_err());
        let neg = EntailmentVerdict {
            entail: -0.1,
            neutral: 0.6,
            contradict: 0.5,
        };
        assert!(check_verdict(&neg).is_err());
    }

    #[test]
    fn fill_mask_checks() {
        let p = |t: &str, x| MaskPrediction {
            token: t.into(),
            probability: x,
        };
        assert!(check_fill_mask(&[p("a", 0.5), p("b", 0.5), p("c", 0.1)], 3).is_ok());
        assert!(check_fill_mask(&[p("a", 0.1), p("b", 0.5)], 3).is_err());
        assert!(check_fill_mask(&[p("a", 0.5), p("b", 0.1)], 1).is_err());
        assert!(check_fill_mask(&[p("a", 1.5)], 1).is_err());
    }

    struct Echo(&'static str);

    impl Transport for Echo {
        fn call(&self, _: &BackendRequest) -> Result<Vec<u8>, BackendError> {
            Ok(self.0.as_bytes().to_vec())
        }
    }

    #[test]
    fn mask_slot_count_is_enforced() {
        let b = Backend::new(Echo(r#"{"predictions":[]}"#));
        assert!(matches!(
            b.fill_mask("no slot", 3),
            Err(BackendError::InvalidRequest(_))
        ));
        assert!(matches!(
            b.fill_mask("[MASK] and [MASK]", 3),
            Err(BackendError::InvalidRequest(_))
        ));
        assert!(matches!(
            b.fill_mask("one [MASK]", 0),
            Err(BackendError::InvalidRequest(_))
        ));
        assert!(b.fill_mask("one [MASK]", 3).unwrap().is_empty());
    }

    #[test]
    fn malformed_responses_are_errors() {
        let b = Backend::new(Echo(r#"{"entail":0.9}"#));
        assert!(matches!(
            b.entail("p", "h"),
            Err(BackendError::Malformed { .. })
        ));
        let b = Backend::new(Echo(r#"{"dim":2,"vectors":{"a":[1.0]}}"#));
        assert!(matches!(b.embed(&["a"]), Err(BackendError::Malformed { .. })));
    }

    #[test]
    fn embed_drops_nulls_and_unrequested_words() {
        let b = Backend::new(Echo(
            r#"{"dim":2,"vectors":{"a":[1.0,0.0],"zzzzqq":null,"extra":[0.0,1.0]}}"#,
        ));
        let v = b.embed(&["A", "a", "zzzzqq"]).unwrap();
        assert_eq!(v.dim, 2);
        assert_eq!(v.vectors.len(), 1);
        assert_eq!(v.get("a"), Some(&[1.0, 0.0][..]));
        assert!(v.get("zzzzqq").is_none());
    }

    fn arb_request() -> impl Strategy<Value = BackendRequest> {
        let text = "\\PC{0,24}";
        prop_oneof![
            (text, 1usize..50).prop_map(|(text, top_k)| BackendRequest::FillMask { text, top_k }),
            (text, text).prop_map(|(premise, hypothesis)| BackendRequest::Entail {
                premise,
                hypothesis
            }),
            proptest::collection::vec(text, 0..6).prop_map(|tokens| BackendRequest::Embed { tokens }),
            (text, 0usize..40, 0usize..40).prop_map(|(sentence, a, b)| BackendRequest::HeadWord {
                sentence,
                span: CharSpan::new(a.min(b), a.max(b)),
            }),
        ]
    }

    proptest! {
        #[test]
        fn canonical_serialization_is_stable(r in arb_request()) {
            let bytes = r.canonical_bytes();
            let parsed: BackendRequest = serde_json::from_slice(&bytes).unwrap();
            prop_assert_eq!(&parsed, &r);
            prop_assert_eq!(parsed.canonical_bytes(), bytes);
            prop_assert_eq!(parsed.fixture_key(), r.fixture_key());
        }
    }
}
