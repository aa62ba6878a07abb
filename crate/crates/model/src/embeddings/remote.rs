//! Remote embedding client.
//!
//! Wire protocol: `POST /embed` with body `{"labels": [...]}`; the service
//! answers 200 with `{"dim": d, "vectors": {"label": [...]}}`. Any other
//! status, a missing label, a timeout or a malformed body is surfaced as an
//! error — never silently substituted.
//!
//! The client is a deliberately small HTTP/1.1 implementation over
//! `TcpStream` (plain `http`, `Connection: close`); the protocol here is
//! this artifact's own, so there is no server variety to chase.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use ctxseg_data::Vocab;

use super::{EmbeddingProvider, Provenance};
use crate::error::ModelError;
use crate::Result;

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    labels: &'a [String],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RemoteProvider {
    /// `http://host:port`
    pub endpoint: String,
    pub timeout_ms: u64,
}

impl RemoteProvider {
    fn host_port(&self) -> Result<String> {
        let rest = self
            .endpoint
            .strip_prefix("http://")
            .ok_or_else(|| ModelError::Remote(format!("endpoint {:?} must be http://", self.endpoint)))?;
        Ok(rest.trim_end_matches('/').to_string())
    }

    fn post_embed(&self, body: &str) -> Result<(u16, Vec<u8>)> {
        let host = self.host_port()?;
        let timeout = Duration::from_millis(self.timeout_ms);
        let on_timeout = |e: std::io::Error| {
            if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) {
                ModelError::Timeout(self.timeout_ms)
            } else {
                ModelError::Remote(e.to_string())
            }
        };
        let mut stream = TcpStream::connect(&host).map_err(|e| ModelError::Remote(format!("connect {host}: {e}")))?;
        stream.set_read_timeout(Some(timeout)).map_err(|e| ModelError::Remote(e.to_string()))?;
        stream.set_write_timeout(Some(timeout)).map_err(|e| ModelError::Remote(e.to_string()))?;

        let request = format!(
            "POST /embed HTTP/1.1\r\nHost: {host}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        stream.write_all(request.as_bytes()).map_err(on_timeout)?;

        let mut raw = Vec::new();
        stream.read_to_end(&mut raw).map_err(on_timeout)?;

        let header_end = raw
            .windows(4)
            .position(|w| w == b"\r\n\r\n")
            .ok_or_else(|| ModelError::MalformedResponse("no header terminator".into()))?;
        let head = std::str::from_utf8(&raw[..header_end])
            .map_err(|_| ModelError::MalformedResponse("non-utf8 headers".into()))?;
        let status_line = head.lines().next().unwrap_or_default();
        let status: u16 = status_line
            .split_whitespace()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ModelError::MalformedResponse(format!("bad status line {status_line:?}")))?;
        Ok((status, raw[header_end + 4..].to_vec()))
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn provenance(&self) -> Provenance {
        Provenance::Remote
    }

    fn raw(&self, vocab: &Vocab) -> Result<(usize, Vec<Vec<f64>>)> {
        let body = serde_json::to_string(&EmbedRequest { labels: vocab.labels() })
            .map_err(|e| ModelError::MalformedResponse(e.to_string()))?;
        let (status, payload) = self.post_embed(&body)?;
        if status != 200 {
            return Err(ModelError::RemoteStatus(status));
        }
        let parsed: EmbedResponse = serde_json::from_slice(&payload)
            .map_err(|e| ModelError::MalformedResponse(e.to_string()))?;
        let rows = vocab
            .labels()
            .iter()
            .map(|label| {
                parsed
                    .vectors
                    .get(label)
                    .cloned()
                    .ok_or_else(|| ModelError::MissingLabel(label.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((parsed.dim, rows))
    }
}
