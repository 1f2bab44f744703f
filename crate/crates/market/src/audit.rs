use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use wadmarket_core::ot::DiscreteMeasure;

use crate::codec::{decode, Message};
use crate::party::BUYER_ID;
use crate::MarketError;

/// One transmitted frame. `tick` is a logical clock (position in the
/// session), which keeps logs byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub tick: u64,
    pub sender: String,
    pub receiver: String,
    pub frame: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditLog {
    pub entries: Vec<AuditEntry>,
    /// Set when the session closed normally.
    pub complete: bool,
}

#[derive(Serialize, Deserialize)]
struct EndMarker {
    session_end: bool,
    entries: usize,
}

impl AuditLog {
    pub fn push(&mut self, sender: &str, receiver: &str, frame: &[u8]) {
        let text = String::from_utf8_lossy(frame);
        self.entries.push(AuditEntry {
            tick: self.entries.len() as u64,
            sender: sender.to_string(),
            receiver: receiver.to_string(),
            frame: text.strip_suffix('\n').unwrap_or(&text).to_string(),
        });
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.entries {
            serde_json::to_writer(&mut out, e).expect("serializable");
            out.push(b'\n');
        }
        if self.complete {
            serde_json::to_writer(
                &mut out,
                &EndMarker {
                    session_end: true,
                    entries: self.entries.len(),
                },
            )
            .expect("serializable");
            out.push(b'\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), MarketError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_jsonl())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, MarketError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut log = AuditLog::default();
        for line in file.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if let Ok(end) = serde_json::from_str::<EndMarker>(&line) {
                log.complete = end.session_end && end.entries == log.entries.len();
                continue;
            }
            log.entries.push(serde_json::from_str(&line)?);
        }
        Ok(log)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// A raw row of another party appears in a message.
    RawRow,
    /// An interpolating measure below the privacy floor.
    TFloor,
    /// Buyer validation rows outside the buyer's own interpolating measure.
    BuyerValidation,
    /// The frame does not decode.
    Undecodable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Position of the offending message in the log.
    pub message: usize,
    pub rule: Rule,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub pass: bool,
    pub complete: bool,
    pub messages_checked: usize,
    pub violations: Vec<Violation>,
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "audit {}: {} messages, {} violations{}",
            if self.pass { "PASS" } else { "FAIL" },
            self.messages_checked,
            self.violations.len(),
            if self.complete { "" } else { ", log incomplete" }
        )?;
        for v in &self.violations {
            writeln!(f, "  message {}: {:?}: {}", v.message, v.rule, v.detail)?;
        }
        Ok(())
    }
}

fn row_key(row: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 compare equal as data
    row.iter().map(|x| if *x == 0.0 { 0 } else { x.to_bits() }).collect()
}

fn numeric_arrays<'a>(v: &'a Value, out: &mut Vec<Vec<f64>>) {
    match v {
        Value::Array(items) => {
            let nums: Option<Vec<f64>> = items.iter().map(Value::as_f64).collect();
            match nums {
                Some(n) if !n.is_empty() => out.push(n),
                _ => items.iter().for_each(|i| numeric_arrays(i, out)),
            }
        }
        Value::Object(map) => map.values().for_each(|i| numeric_arrays(i, out)),
        _ => {}
    }
}

/// Check a session log against every party's raw rows. `raw` may hold
/// several datasets per party (pilot and full data, say).
pub fn audit_no_raw_leak(log: &AuditLog, raw: &[(String, DiscreteMeasure)], t_min: f64) -> AuditReport {
    let mut index: HashMap<usize, HashMap<Vec<u64>, Vec<&str>>> = HashMap::new();
    for (owner, data) in raw {
        let by_dim = index.entry(data.dim()).or_default();
        for row in data.points().outer_iter() {
            let owners = by_dim.entry(row_key(row.as_slice().expect("standard layout"))).or_default();
            if !owners.contains(&owner.as_str()) {
                owners.push(owner);
            }
        }
    }
    let mut violations = Vec::new();
    for (i, entry) in log.entries.iter().enumerate() {
        let env = match decode(entry.frame.as_bytes()) {
            Ok(env) => env,
            Err(e) => {
                violations.push(Violation {
                    message: i,
                    rule: Rule::Undecodable,
                    detail: e.to_string(),
                });
                continue;
            }
        };
        let own_interp = match &env.msg {
            Message::InterpMeasure { party_id, t, .. } => {
                if *t < t_min {
                    violations.push(Violation {
                        message: i,
                        rule: Rule::TFloor,
                        detail: format!("{party_id} sent an interpolating measure at t = {t} < {t_min}"),
                    });
                }
                (*party_id == env.sender).then_some(party_id.as_str())
            }
            _ => None,
        };
        let value: Value = serde_json::from_str(&entry.frame).expect("decoded above");
        let mut arrays = Vec::new();
        numeric_arrays(&value, &mut arrays);
        let mut flagged: Vec<&str> = Vec::new();
        for arr in &arrays {
            for (&d, rows) in &index {
                if arr.len() < d {
                    continue;
                }
                for window in arr.windows(d) {
                    if let Some(owners) = rows.get(&row_key(window)) {
                        for &owner in owners {
                            if Some(owner) != own_interp && !flagged.contains(&owner) {
                                flagged.push(owner);
                            }
                        }
                    }
                }
            }
        }
        for owner in flagged {
            violations.push(Violation {
                message: i,
                rule: if owner == BUYER_ID { Rule::BuyerValidation } else { Rule::RawRow },
                detail: format!(
                    "{} from {} to {} carries a raw row of {owner}",
                    env.msg.tag(),
                    env.sender,
                    env.receiver
                ),
            });
        }
    }
    AuditReport {
        pass: violations.is_empty() && log.complete,
        complete: log.complete,
        messages_checked: log.entries.len(),
        violations,
    }
}
