//! Coordinator–agent messages and the links that carry them.
//!
//! Messages are JSON objects, one per LF-terminated line. The same message
//! contract runs over an in-process hub and over TCP.

mod inproc;
mod tcp;

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, DeviceReport};
use crate::codegen::SubtaskSpec;

pub use inproc::{DirectLink, InProcessHub};
pub use tcp::{bind_address, serve_agent_tcp, TcpCoordinatorLink, DEFAULT_PORT};

pub const MAX_LINE: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AckBody {
    pub subtask_id: u64,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superseded: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Poll {
        round: u64,
        correlation_id: u64,
    },
    Report {
        round: u64,
        correlation_id: u64,
        payload: DeviceReport,
    },
    Assign {
        correlation_id: u64,
        payload: SubtaskSpec,
    },
    Ack {
        correlation_id: u64,
        payload: AckBody,
    },
}

impl WireMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            WireMessage::Poll { .. } => "poll",
            WireMessage::Report { .. } => "report",
            WireMessage::Assign { .. } => "assign",
            WireMessage::Ack { .. } => "ack",
        }
    }

    pub fn correlation_id(&self) -> u64 {
        match self {
            WireMessage::Poll { correlation_id, .. }
            | WireMessage::Report { correlation_id, .. }
            | WireMessage::Assign { correlation_id, .. }
            | WireMessage::Ack { correlation_id, .. } => *correlation_id,
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("protocol error: {message} in line {line:?}")]
    Protocol { line: String, message: String },
    #[error("framing error: {0}")]
    Framing(String),
    #[error("endpoint `{0}` is not connected")]
    Unreachable(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One line, LF included. Field order is fixed by the type definitions and
/// maps are sorted, so equal messages encode to equal bytes.
pub fn encode(message: &WireMessage) -> Vec<u8> {
    let mut line = serde_json::to_vec(message).expect("wire messages serialize");
    line.push(b'\n');
    line
}

/// Decode one line; a trailing LF (and CR) is tolerated.
pub fn decode(line: &[u8]) -> Result<WireMessage, TransportError> {
    if line.len() > MAX_LINE {
        return Err(TransportError::Framing(format!("line of {} bytes exceeds {MAX_LINE}", line.len())));
    }
    let trimmed = line.strip_suffix(b"\n").unwrap_or(line);
    let trimmed = trimmed.strip_suffix(b"\r").unwrap_or(trimmed);
    let protocol = |message: String| TransportError::Protocol {
        line: String::from_utf8_lossy(trimmed).into_owned(),
        message,
    };
    let value: serde_json::Value = serde_json::from_slice(trimmed).map_err(|e| protocol(e.to_string()))?;
    if value.get("type").and_then(|t| t.as_str()).is_none() {
        return Err(protocol("missing `type`".into()));
    }
    serde_json::from_value(value).map_err(|e| protocol(e.to_string()))
}

/// Splits an arbitrary byte stream into decoded lines.
#[derive(Debug, Default)]
pub struct LineDecoder {
    buf: Vec<u8>,
    // Inside an oversized line; drop bytes until the next LF.
    discarding: bool,
}

impl LineDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Vec<Result<WireMessage, TransportError>> {
        let mut out = Vec::new();
        for chunk in bytes.split_inclusive(|b| *b == b'\n') {
            let complete = chunk.ends_with(b"\n");
            if self.discarding {
                if complete {
                    self.discarding = false;
                }
                continue;
            }
            self.buf.extend_from_slice(chunk);
            if complete {
                let line = std::mem::take(&mut self.buf);
                if line.trim_ascii().is_empty() {
                    continue;
                }
                out.push(decode(&line));
            } else if self.buf.len() > MAX_LINE {
                self.buf.clear();
                self.discarding = true;
                out.push(Err(TransportError::Framing(format!("line exceeds {MAX_LINE} bytes"))));
            }
        }
        out
    }

    /// End of stream: any buffered partial line is a framing error.
    pub fn finish(&mut self) -> Option<TransportError> {
        let pending = std::mem::take(&mut self.buf);
        let discarding = std::mem::replace(&mut self.discarding, false);
        if discarding || pending.trim_ascii().is_empty() {
            None
        } else {
            Some(TransportError::Framing(format!(
                "stream ended inside a {}-byte line",
                pending.len()
            )))
        }
    }
}

/// The coordinator's view of its agents.
pub trait CoordinatorLink: Send + Sync {
    /// Device ids currently known to the link, sorted.
    fn endpoints(&self) -> Vec<String>;

    fn send(&self, device_id: &str, message: &WireMessage) -> Result<(), TransportError>;

    /// Inbound messages tagged with the sender's device id.
    fn inbox(&self) -> &crossbeam_channel::Receiver<(String, WireMessage)>;
}

/// One poll per endpoint; each endpoint's result stands alone.
pub fn broadcast_poll(
    link: &dyn CoordinatorLink,
    endpoints: &[String],
    round: u64,
    first_correlation_id: u64,
) -> Vec<(String, Result<(), TransportError>)> {
    endpoints
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let msg = WireMessage::Poll {
                round,
                correlation_id: first_correlation_id + i as u64,
            };
            (id.clone(), link.send(id, &msg))
        })
        .collect()
}

/// The agent's side of every exchange: reports for polls, acks for assigns.
pub fn respond(agent: &Agent, message: WireMessage) -> Option<WireMessage> {
    match message {
        WireMessage::Poll { round, correlation_id } => Some(WireMessage::Report {
            round,
            correlation_id,
            payload: agent.handle_poll(round),
        }),
        WireMessage::Assign { correlation_id, payload } => {
            let subtask_id = payload.subtask_id;
            let body = match agent.handle_assign(payload) {
                Ok(ack) => AckBody {
                    subtask_id,
                    accepted: true,
                    superseded: ack.superseded,
                    error: None,
                },
                Err(e) => AckBody {
                    subtask_id,
                    accepted: false,
                    superseded: None,
                    error: Some(e.to_string()),
                },
            };
            Some(WireMessage::Ack { correlation_id, payload: body })
        }
        WireMessage::Report { .. } | WireMessage::Ack { .. } => None,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;
    use serde_json::json;

    use super::*;
    use crate::device::DeviceStatus;
    use crate::fsm::CompletionStatus;

    fn report() -> WireMessage {
        let mut attributes = BTreeMap::new();
        attributes.insert("upload_time_s".to_string(), json!(9.1));
        attributes.insert("band".to_string(), json!("2.4"));
        WireMessage::Report {
            round: 3,
            correlation_id: 11,
            payload: DeviceReport {
                device_id: "client-1".into(),
                status: DeviceStatus::Ok,
                attributes,
                subtask_status: Some((4, CompletionStatus::Ongoing)),
                finished: vec![(3, CompletionStatus::Superseded)],
                profile_update: None,
            },
        }
    }

    #[test]
    fn poll_line() {
        let m = WireMessage::Poll { round: 7, correlation_id: 1 };
        let line = encode(&m);
        assert_eq!(line, b"{\"type\":\"poll\",\"round\":7,\"correlation_id\":1}\n");
        assert_eq!(decode(&line).unwrap(), m);
    }

    #[test]
    fn report_round_trip() {
        let m = report();
        assert_eq!(decode(&encode(&m)).unwrap(), m);
        assert_eq!(encode(&m), encode(&decode(&encode(&m)).unwrap()));
    }

    #[test]
    fn extra_fields_ignored() {
        let m = decode(br#"{"type":"poll","round":1,"correlation_id":2,"future":true}"#).unwrap();
        assert_eq!(m, WireMessage::Poll { round: 1, correlation_id: 2 });
    }

    #[test]
    fn bad_lines_are_isolated() {
        let mut d = LineDecoder::new();
        let mut bytes = b"{\"type\":\"po\n{\"round\":1}\n".to_vec();
        bytes.extend(encode(&WireMessage::Poll { round: 2, correlation_id: 0 }));
        let out = d.push(&bytes);
        assert!(matches!(out[0], Err(TransportError::Protocol { .. })));
        match &out[1] {
            Err(TransportError::Protocol { message, .. }) => assert!(message.contains("type")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(out[2], Ok(WireMessage::Poll { round: 2, .. })));
        assert!(d.finish().is_none());
    }

    #[test]
    fn oversized_line_is_framing_error() {
        let mut d = LineDecoder::new();
        let big = vec![b'x'; MAX_LINE + 10];
        let out = d.push(&big);
        assert!(matches!(out[..], [Err(TransportError::Framing(_))]));
        let mut rest = b"yyy\n".to_vec();
        rest.extend(encode(&WireMessage::Poll { round: 1, correlation_id: 0 }));
        let out = d.push(&rest);
        assert_eq!(out.len(), 1);
        assert!(out[0].is_ok());
    }

    #[test]
    fn truncated_stream() {
        let mut d = LineDecoder::new();
        let line = encode(&report());
        assert!(d.push(&line[..line.len() / 2]).is_empty());
        assert!(matches!(d.finish(), Some(TransportError::Framing(_))));
    }

    fn arb_message() -> impl Strategy<Value = WireMessage> {
        prop_oneof![
            (any::<u64>(), any::<u64>()).prop_map(|(round, correlation_id)| WireMessage::Poll { round, correlation_id }),
            (any::<u64>(), "[a-z\\- ]{0,40}", "[a-z0-9\\-]{1,10}").prop_map(|(id, text, dev)| WireMessage::Assign {
                correlation_id: id,
                payload: SubtaskSpec { subtask_id: id, device_id: dev, text, issued_round: id / 2 },
            }),
            (any::<u64>(), any::<bool>(), proptest::option::of(any::<u64>())).prop_map(|(id, accepted, superseded)| {
                WireMessage::Ack {
                    correlation_id: id,
                    payload: AckBody { subtask_id: id, accepted, superseded, error: None },
                }
            }),
            (any::<u32>(), -1e6f64..1e6).prop_map(|(round, x)| {
                let mut attributes = BTreeMap::new();
                attributes.insert("x".to_string(), json!(x));
                WireMessage::Report {
                    round: round as u64,
                    correlation_id: 0,
                    payload: DeviceReport {
                        device_id: "d".into(),
                        status: DeviceStatus::Ok,
                        attributes,
                        subtask_status: None,
                        finished: vec![],
                        profile_update: None,
                    },
                }
            }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        // Any concatenation of encoded messages, cut anywhere, decodes back to
        // exactly the original sequence.
        #[test]
        fn framing_survives_arbitrary_chunking(
            msgs in proptest::collection::vec(arb_message(), 0..8),
            cuts in proptest::collection::vec(any::<prop::sample::Index>(), 0..6),
        ) {
            let stream: Vec<u8> = msgs.iter().flat_map(encode).collect();
            let mut points: Vec<usize> = cuts.iter().map(|c| c.index(stream.len() + 1)).collect();
            points.push(0);
            points.push(stream.len());
            points.sort_unstable();
            let mut d = LineDecoder::new();
            let mut out = Vec::new();
            for w in points.windows(2) {
                out.extend(d.push(&stream[w[0]..w[1]]));
            }
            prop_assert!(d.finish().is_none());
            let decoded: Vec<WireMessage> = out.into_iter().map(|r| r.unwrap()).collect();
            prop_assert_eq!(decoded, msgs);
        }
    }
}
