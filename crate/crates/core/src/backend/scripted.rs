use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    BackendError, BackendRequest, EmbedResponse, EntailmentVerdict, FillMaskResponse,
    HeadWordResponse, MaskPrediction, Transport,
};
use crate::alignment::EmbeddingTable;

/// Hand-authored model responses.
///
/// `fill_mask` is keyed by the full masked text, `entail` by premise then
/// hypothesis, and `head_word` by sentence then `"start:end"`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub fill_mask: BTreeMap<String, Vec<(String, f64)>>,
    #[serde(default)]
    pub entail: BTreeMap<String, BTreeMap<String, [f64; 3]>>,
    #[serde(default)]
    pub head_word: BTreeMap<String, BTreeMap<String, Option<String>>>,
}

/// An in-process stand-in for a model sidecar, answering from a [`Script`]
/// and an optional embedding table. Unscripted requests fail as unavailable.
#[derive(Clone, Debug, Default)]
pub struct ScriptedTransport {
    script: Script,
    embeddings: Option<EmbeddingTable>,
}

impl ScriptedTransport {
    pub fn new(script: Script, embeddings: Option<EmbeddingTable>) -> Self {
        ScriptedTransport { script, embeddings }
    }

    fn respond(&self, request: &BackendRequest) -> Result<serde_json::Value, BackendError> {
        let unscripted = || BackendError::Unavailable(format!(
            "no scripted response for {} request {}",
            request.kind(),
            String::from_utf8_lossy(&request.canonical_bytes())
        ));
        let value = match request {
            BackendRequest::FillMask { text, top_k } => {
                let scripted = self.script.fill_mask.get(text).ok_or_else(unscripted)?;
                let predictions = scripted
                    .iter()
                    .take(*top_k)
                    .map(|(token, probability)| MaskPrediction {
                        token: token.clone(),
                        probability: *probability,
                    })
                    .collect();
                serde_json::to_value(FillMaskResponse { predictions })
            }
            BackendRequest::Entail { premise, hypothesis } => {
                let [entail, neutral, contradict] = *self
                    .script
                    .entail
                    .get(premise)
                    .and_then(|m| m.get(hypothesis))
                    .ok_or_else(unscripted)?;
                serde_json::to_value(EntailmentVerdict {
                    entail,
                    neutral,
                    contradict,
                })
            }
            BackendRequest::Embed { tokens } => {
                let table = self.embeddings.as_ref().ok_or_else(unscripted)?;
                let vectors = tokens
                    .iter()
                    .map(|t| (t.clone(), table.get(t).map(<[f64]>::to_vec)))
                    .collect();
                serde_json::to_value(EmbedResponse {
                    dim: table.dim(),
                    vectors,
                })
            }
            BackendRequest::HeadWord { sentence, span } => {
                let key = format!("{}:{}", span.start, span.end);
                let head = self
                    .script
                    .head_word
                    .get(sentence)
                    .and_then(|m| m.get(&key))
                    .ok_or_else(unscripted)?;
                serde_json::to_value(HeadWordResponse { head: head.clone() })
            }
        };
        Ok(value.expect("responses serialize"))
    }
}

impl Transport for ScriptedTransport {
    fn call(&self, request: &BackendRequest) -> Result<Vec<u8>, BackendError> {
        let value = self.respond(request)?;
        Ok(serde_json::to_vec(&value).expect("value serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Backend;
    use crate::text::CharSpan;

    #[test]
    fn answers_scripted_requests_only() {
        let mut script = Script::default();
        script.fill_mask.insert(
            "x [MASK]".into(),
            vec![("a".into(), 0.5), ("b".into(), 0.3), ("c".into(), 0.1)],
        );
        script
            .head_word
            .entry("Big Ben".into())
            .or_default()
            .insert("0:7".into(), Some("Ben".into()));
        let table = EmbeddingTable::parse("1 2\nword 1 0\n").unwrap();
        let b = Backend::new(ScriptedTransport::new(script, Some(table)));
        assert_eq!(b.fill_mask("x [MASK]", 1).unwrap().len(), 1);
        assert_eq!(
            b.head_word("Big Ben", CharSpan::new(0, 7)).unwrap().as_deref(),
            Some("Ben")
        );
        assert!(matches!(
            b.entail("p", "h"),
            Err(BackendError::Unavailable(_))
        ));
        let v = b.embed(&["word", "zzzzqq"]).unwrap();
        assert_eq!(v.vectors.len(), 1);
    }
}
