//! Proposal oracle boundary for assisted optimization. The request carries
//! the current population as text records; the response carries rewrite
//! proposals, each tagged with the side to truncate when too long. Malformed
//! response records are dropped individually; transport failures surface as
//! errors the optimizer downgrades to warnings.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PopulationRecord {
    pub text: String,
    pub f: f64,
    pub ce: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProposalRequest {
    /// Objective kind, e.g. "sae_max".
    pub task: String,
    /// Sequence length the proposals will be fitted to.
    pub n: usize,
    /// How many proposals the caller wants.
    pub count: usize,
    /// Current population, sorted by f descending.
    pub population: Vec<PopulationRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncateSide {
    Left,
    Right,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub text: String,
    pub truncate: TruncateSide,
}

pub trait ProposalOracle: Sync {
    fn propose(&self, request: &ProposalRequest) -> Result<Vec<ProposalRecord>>;
}

/// Parses a response body, keeping well-formed records and dropping the rest.
/// The body is `{"proposals": [...]}`; a record missing fields or carrying an
/// unknown truncate tag is skipped rather than failing the call.
pub fn parse_proposals(body: &str) -> Result<Vec<ProposalRecord>> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| Error::Oracle(format!("bad response json: {e}")))?;
    let items = value
        .get("proposals")
        .and_then(|p| p.as_array())
        .ok_or_else(|| Error::Oracle("response lacks a proposals array".into()))?;
    let mut out = Vec::new();
    for item in items {
        match serde_json::from_value::<ProposalRecord>(item.clone()) {
            Ok(rec) => out.push(rec),
            Err(e) => log::warn!("dropping malformed oracle record: {e}"),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Mock oracle
// ---------------------------------------------------------------------------

/// Deterministic word-swap paraphraser over a fixed word list. Each proposal
/// rewrites one population member, replacing words with probability 0.3, and
/// alternates truncate tags. Output depends only on the seed and the request.
pub struct MockOracle {
    pub words: Vec<String>,
    pub seed: u64,
}

impl MockOracle {
    pub fn new(words: Vec<String>, seed: u64) -> Self {
        MockOracle { words, seed }
    }
}

fn text_hash(text: &str) -> u64 {
    // FNV-1a, so the mock's stream varies with the source text.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl ProposalOracle for MockOracle {
    fn propose(&self, request: &ProposalRequest) -> Result<Vec<ProposalRecord>> {
        if request.population.is_empty() || self.words.is_empty() {
            return Ok(Vec::new());
        }
        let mut out = Vec::with_capacity(request.count);
        for i in 0..request.count {
            let member = &request.population[i % request.population.len()];
            let mut rng =
                rng::stream(self.seed ^ text_hash(&member.text), "mock-oracle", i as u64);
            let mut words: Vec<String> =
                member.text.split_whitespace().map(str::to_string).collect();
            for w in &mut words {
                if rng.gen::<f64>() < 0.3 {
                    *w = self.words[rng.gen_range(0..self.words.len())].clone();
                }
            }
            let truncate = if i % 2 == 0 { TruncateSide::Right } else { TruncateSide::Left };
            out.push(ProposalRecord { text: words.join(" "), truncate });
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// HTTP transport
// ---------------------------------------------------------------------------

const HTTP_TIMEOUT: Duration = Duration::from_secs(10);

/// Client for an oracle served at `http://host:port` via POST /propose.
pub struct HttpOracle {
    pub addr: String,
}

impl HttpOracle {
    pub fn new(addr: impl Into<String>) -> Self {
        let mut addr = addr.into();
        if let Some(rest) = addr.strip_prefix("http://") {
            addr = rest.trim_end_matches('/').to_string();
        }
        HttpOracle { addr }
    }
}

impl ProposalOracle for HttpOracle {
    fn propose(&self, request: &ProposalRequest) -> Result<Vec<ProposalRecord>> {
        let body = serde_json::to_string(request)?;
        let mut stream = TcpStream::connect(&self.addr)
            .map_err(|e| Error::Oracle(format!("connect {}: {e}", self.addr)))?;
        stream.set_read_timeout(Some(HTTP_TIMEOUT)).ok();
        stream.set_write_timeout(Some(HTTP_TIMEOUT)).ok();
        let head = format!(
            "POST /propose HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\n\
             Content-Length: {}\r\nConnection: close\r\n\r\n",
            self.addr,
            body.len()
        );
        stream
            .write_all(head.as_bytes())
            .and_then(|_| stream.write_all(body.as_bytes()))
            .map_err(|e| Error::Oracle(format!("send: {e}")))?;

        let mut reader = BufReader::new(stream);
        let mut status = String::new();
        reader
            .read_line(&mut status)
            .map_err(|e| Error::Oracle(format!("read status: {e}")))?;
        if !status.contains("200") {
            return Err(Error::Oracle(format!("oracle status {}", status.trim())));
        }
        let mut content_length = None;
        loop {
            let mut line = String::new();
            reader
                .read_line(&mut line)
                .map_err(|e| Error::Oracle(format!("read header: {e}")))?;
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                content_length = v.trim().parse::<usize>().ok();
            }
        }
        let body = match content_length {
            Some(len) => {
                let mut buf = vec![0u8; len];
                reader
                    .read_exact(&mut buf)
                    .map_err(|e| Error::Oracle(format!("read body: {e}")))?;
                String::from_utf8(buf).map_err(|_| Error::Oracle("body not UTF-8".into()))?
            }
            None => {
                let mut buf = String::new();
                reader
                    .read_to_string(&mut buf)
                    .map_err(|e| Error::Oracle(format!("read body: {e}")))?;
                buf
            }
        };
        parse_proposals(&body)
    }
}

fn http_response(stream: &mut TcpStream, status: &str, body: &str) {
    let msg = format!(
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\
         Connection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(msg.as_bytes());
}

fn handle_connection(stream: &mut TcpStream, oracle: &dyn ProposalOracle) {
    stream.set_read_timeout(Some(HTTP_TIMEOUT)).ok();
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() {
        return;
    }
    if !request_line.starts_with("POST /propose") {
        http_response(stream, "404 Not Found", "{\"error\":\"unknown endpoint\"}");
        return;
    }
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).is_err() {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = v.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let request: ProposalRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => {
            http_response(stream, "400 Bad Request", &format!("{{\"error\":\"{e}\"}}"));
            return;
        }
    };
    match oracle.propose(&request) {
        Ok(proposals) => {
            let body = serde_json::json!({ "proposals": proposals }).to_string();
            http_response(stream, "200 OK", &body);
        }
        Err(e) => {
            http_response(stream, "500 Internal Server Error", &format!("{{\"error\":\"{e}\"}}"));
        }
    }
}

/// Serves `oracle` over HTTP on an already-bound listener, one connection at
/// a time; `max_requests` bounds the loop (None = run until the process dies).
pub fn serve_oracle(
    listener: TcpListener,
    oracle: &dyn ProposalOracle,
    max_requests: Option<usize>,
) -> Result<()> {
    let mut served = 0usize;
    for stream in listener.incoming() {
        let mut stream = match stream {
            Ok(s) => s,
            Err(_) => continue,
        };
        handle_connection(&mut stream, oracle);
        served += 1;
        if max_requests.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Subprocess pipe transport
// ---------------------------------------------------------------------------

/// Line-delimited JSON over a child process: one request line on stdin, one
/// response line (`{"proposals": [...]}`) on stdout per call.
pub struct PipeOracle {
    child: Mutex<Child>,
}

impl PipeOracle {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Oracle(format!("spawn {program}: {e}")))?;
        Ok(PipeOracle { child: Mutex::new(child) })
    }
}

impl ProposalOracle for PipeOracle {
    fn propose(&self, request: &ProposalRequest) -> Result<Vec<ProposalRecord>> {
        let mut child = self.child.lock().expect("oracle lock");
        let line = serde_json::to_string(request)?;
        let stdin = child
            .stdin
            .as_mut()
            .ok_or_else(|| Error::Oracle("oracle stdin closed".into()))?;
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::Oracle(format!("write: {e}")))?;
        let stdout = child
            .stdout
            .as_mut()
            .ok_or_else(|| Error::Oracle("oracle stdout closed".into()))?;
        let mut reader = BufReader::new(stdout);
        let mut response = String::new();
        reader
            .read_line(&mut response)
            .map_err(|e| Error::Oracle(format!("read: {e}")))?;
        if response.trim().is_empty() {
            return Err(Error::Oracle("oracle closed the pipe".into()));
        }
        parse_proposals(&response)
    }
}

impl Drop for PipeOracle {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> ProposalRequest {
        ProposalRequest {
            task: "sae_max".into(),
            n: 4,
            count: 3,
            population: vec![
                PopulationRecord { text: "red fox runs fast".into(), f: 2.0, ce: 4.0 },
                PopulationRecord { text: "blue cat naps now".into(), f: 1.0, ce: 3.5 },
            ],
        }
    }

    #[test]
    fn mock_is_deterministic_and_sized() {
        let oracle = MockOracle::new(vec!["wolf".into(), "hare".into()], 7);
        let a = oracle.propose(&request()).unwrap();
        let b = oracle.propose(&request()).unwrap();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.text, y.text);
            assert_eq!(x.truncate, y.truncate);
        }
        // Word count is preserved by pure word swaps.
        assert_eq!(a[0].text.split_whitespace().count(), 4);
    }

    #[test]
    fn malformed_records_dropped_individually() {
        let body = r#"{"proposals": [
            {"text": "good one", "truncate": "left"},
            {"text": "missing tag"},
            {"text": "bad tag", "truncate": "sideways"},
            {"text": "another good", "truncate": "right"}
        ]}"#;
        let recs = parse_proposals(body).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].text, "good one");
        assert_eq!(recs[1].truncate, TruncateSide::Right);
    }

    #[test]
    fn non_object_response_is_an_error() {
        assert!(parse_proposals("[1,2,3]").is_err());
        assert!(parse_proposals("not json").is_err());
    }

    #[test]
    fn http_round_trip_against_served_mock() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let oracle = MockOracle::new(vec!["wolf".into()], 3);
            serve_oracle(listener, &oracle, Some(1)).unwrap();
        });
        let client = HttpOracle::new(format!("http://{addr}/"));
        let direct = MockOracle::new(vec!["wolf".into()], 3).propose(&request()).unwrap();
        let via_http = client.propose(&request()).unwrap();
        handle.join().unwrap();
        assert_eq!(via_http.len(), direct.len());
        for (a, b) in via_http.iter().zip(&direct) {
            assert_eq!(a.text, b.text);
            assert_eq!(a.truncate, b.truncate);
        }
    }

    #[test]
    fn unknown_endpoint_rejected() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let oracle = MockOracle::new(vec!["wolf".into()], 3);
            serve_oracle(listener, &oracle, Some(1)).unwrap();
        });
        let mut stream = TcpStream::connect(addr).unwrap();
        stream
            .write_all(b"GET /health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
            .unwrap();
        let mut response = String::new();
        BufReader::new(stream).read_line(&mut response).unwrap();
        assert!(response.contains("404"));
        handle.join().unwrap();
    }
}
