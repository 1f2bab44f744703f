//! Wire format: one JSON object per line. Envelope fields and the message
//! fields share one flat object, discriminated by `type`.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use wadmarket_core::fl::FedConfig;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("frame is not valid UTF-8 JSON: {0}")]
    Malformed(String),
    #[error("frame is missing required field `{0}`")]
    MissingField(String),
    #[error("unknown message type `{0}`")]
    UnknownTag(String),
    #[error("trailing data after the frame")]
    TrailingGarbage,
    #[error("invalid field value: {0}")]
    InvalidField(String),
}

/// Local-training side information returned with an update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateAux {
    pub steps: usize,
    pub mean_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_delta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    /// The platform broadcasts the sampled anchor points along with the spec
    /// they were drawn from.
    SharedMeasureInit {
        seed: u64,
        k: usize,
        d: usize,
        mean: f64,
        std: f64,
        points: Vec<Vec<f64>>,
    },
    InterpMeasure {
        party_id: String,
        t: f64,
        points: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<usize>>,
    },
    TrialRequest {
        run_id: String,
        p: Vec<f64>,
        n: usize,
        /// Local-training settings when they differ from the session default
        /// (formal training).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<FedConfig>,
    },
    SampleIndices {
        run_id: String,
        party_id: String,
        indices: Vec<usize>,
    },
    LocalUpdate {
        run_id: String,
        round: usize,
        party_id: String,
        weights: Vec<f64>,
        n_samples: usize,
        aux: UpdateAux,
    },
    GlobalModel {
        run_id: String,
        round: usize,
        weights: Vec<f64>,
        /// Server control variate (Scaffold only).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        control: Option<Vec<f64>>,
    },
    EvalRequest {
        run_id: String,
    },
    EvalResult {
        run_id: String,
        accuracy: f64,
        loss: f64,
    },
    TrialRecord {
        run_id: String,
        p: Vec<f64>,
        n: usize,
        w: f64,
        v: f64,
    },
}

pub const MESSAGE_TAGS: [&str; 9] = [
    "shared_measure_init",
    "interp_measure",
    "trial_request",
    "sample_indices",
    "local_update",
    "global_model",
    "eval_request",
    "eval_result",
    "trial_record",
];

impl Message {
    pub fn tag(&self) -> &'static str {
        match self {
            Message::SharedMeasureInit { .. } => MESSAGE_TAGS[0],
            Message::InterpMeasure { .. } => MESSAGE_TAGS[1],
            Message::TrialRequest { .. } => MESSAGE_TAGS[2],
            Message::SampleIndices { .. } => MESSAGE_TAGS[3],
            Message::LocalUpdate { .. } => MESSAGE_TAGS[4],
            Message::GlobalModel { .. } => MESSAGE_TAGS[5],
            Message::EvalRequest { .. } => MESSAGE_TAGS[6],
            Message::EvalResult { .. } => MESSAGE_TAGS[7],
            Message::TrialRecord { .. } => MESSAGE_TAGS[8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub session_id: String,
    /// Strictly increasing per sender within a session.
    pub seq: u64,
    pub sender: String,
    pub receiver: String,
    #[serde(flatten)]
    pub msg: Message,
}

const ENVELOPE_FIELDS: [&str; 5] = ["session_id", "seq", "sender", "receiver", "type"];

/// Serialize to a single `\n`-terminated line.
pub fn encode(env: &Envelope) -> Vec<u8> {
    let mut out = serde_json::to_vec(env).expect("envelopes always serialize");
    out.push(b'\n');
    out
}

pub fn decode(frame: &[u8]) -> Result<Envelope, CodecError> {
    let text = std::str::from_utf8(frame).map_err(|e| CodecError::Malformed(e.to_string()))?;
    let line = text.strip_suffix('\n').unwrap_or(text);
    let mut stream = serde_json::Deserializer::from_str(line).into_iter::<Value>();
    let value = match stream.next() {
        Some(Ok(v)) => v,
        Some(Err(e)) => return Err(CodecError::Malformed(e.to_string())),
        None => return Err(CodecError::Malformed("empty frame".into())),
    };
    if !line[stream.byte_offset()..].trim().is_empty() {
        return Err(CodecError::TrailingGarbage);
    }
    let obj = value
        .as_object()
        .ok_or_else(|| CodecError::Malformed("frame is not a JSON object".into()))?;
    for field in ENVELOPE_FIELDS {
        if !obj.contains_key(field) {
            return Err(CodecError::MissingField(field.into()));
        }
    }
    let tag = obj["type"]
        .as_str()
        .ok_or_else(|| CodecError::InvalidField("`type` must be a string".into()))?;
    if !MESSAGE_TAGS.contains(&tag) {
        return Err(CodecError::UnknownTag(tag.into()));
    }
    serde_json::from_value(value).map_err(|e| {
        let text = e.to_string();
        match text.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
            Some(field) => CodecError::MissingField(field.into()),
            None => CodecError::InvalidField(text),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(msg: Message) -> Envelope {
        Envelope {
            session_id: "s".into(),
            seq: 3,
            sender: "platform".into(),
            receiver: "seller-0".into(),
            msg,
        }
    }

    #[test]
    fn flat_lowercase_layout() {
        let line = encode(&env(Message::EvalRequest { run_id: "r1".into() }));
        assert_eq!(
            std::str::from_utf8(&line).unwrap(),
            "{\"session_id\":\"s\",\"seq\":3,\"sender\":\"platform\",\"receiver\":\"seller-0\",\"type\":\"eval_request\",\"run_id\":\"r1\"}\n"
        );
    }

    #[test]
    fn shortest_round_trip_floats() {
        let m = env(Message::EvalResult {
            run_id: "r".into(),
            accuracy: 0.1,
            loss: 1.0 / 3.0,
        });
        let line = encode(&m);
        assert!(std::str::from_utf8(&line).unwrap().contains("\"accuracy\":0.1,"));
        assert_eq!(decode(&line).unwrap(), m);
    }

    #[test]
    fn decode_errors() {
        let good = "{\"session_id\":\"s\",\"seq\":1,\"sender\":\"a\",\"receiver\":\"b\",\"type\":\"eval_request\",\"run_id\":\"r\"}";
        assert!(decode(good.as_bytes()).is_ok());
        let no_session = good.replace("\"session_id\":\"s\",", "");
        assert_eq!(decode(no_session.as_bytes()), Err(CodecError::MissingField("session_id".into())));
        let no_run = good.replace(",\"run_id\":\"r\"", "");
        assert_eq!(decode(no_run.as_bytes()), Err(CodecError::MissingField("run_id".into())));
        let unknown = good.replace("eval_request", "steal_data");
        assert_eq!(decode(unknown.as_bytes()), Err(CodecError::UnknownTag("steal_data".into())));
        assert_eq!(decode(format!("{good} x").as_bytes()), Err(CodecError::TrailingGarbage));
        assert_eq!(decode(format!("{good}\n{good}\n").as_bytes()), Err(CodecError::TrailingGarbage));
        assert!(matches!(decode(b"[1,2]"), Err(CodecError::Malformed(_))));
    }
}
