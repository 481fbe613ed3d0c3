#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;

use conlink::eval::{gen_synthetic, gold_aware_script, GoldLinks, SyntheticData, SyntheticSpec};
use conlink::llm::{LlmClient, MockProvider, PromptTemplates, UsageModel};
use conlink::orchestrator::{BatchOutput, Linker, PipelineConfig};

/// One canned HTTP reply.
pub struct Reply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Reply {
    pub fn json(status: u16, body: &str) -> Self {
        Reply {
            status,
            headers: Vec::new(),
            body: body.to_string(),
        }
    }

    pub fn header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }
}

/// Serves `replies` in order, one per connection, then answers 500.
pub struct StubServer {
    pub url: String,
    pub bodies: Arc<Mutex<Vec<String>>>,
}

impl StubServer {
    pub fn start(replies: Vec<Reply>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&bodies);
        thread::spawn(move || {
            let mut replies = replies.into_iter();
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0u8; len];
                let _ = reader.read_exact(&mut body);
                seen.lock().unwrap().push(String::from_utf8_lossy(&body).into_owned());
                let r = replies
                    .next()
                    .unwrap_or(Reply::json(500, r#"{"error":"script exhausted"}"#));
                let mut head = format!(
                    "HTTP/1.1 {} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n",
                    r.status,
                    r.body.len()
                );
                for (k, v) in &r.headers {
                    head.push_str(&format!("{k}: {v}\r\n"));
                }
                head.push_str("\r\n");
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(r.body.as_bytes());
                let _ = stream.flush();
            }
        });
        StubServer { url, bodies }
    }
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Rows of a fixture TSV, header dropped.
pub fn fixture_rows(name: &str) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect()
}

pub fn synthetic(queries: usize, targets: usize, seed: u64) -> SyntheticData {
    gen_synthetic(&SyntheticSpec {
        queries,
        targets,
        dim: 32,
        margin: 0.05,
        noise: 0.5,
        hard_fraction: 0.0,
        seed,
    })
}

/// A mock that answers like an oracle knowing `gold`.
pub fn oracle_mock(
    data: &SyntheticData,
    gold: &GoldLinks,
    templates: &PromptTemplates,
    usage: Option<UsageModel>,
) -> MockProvider {
    MockProvider::new(gold_aware_script(&data.queries, &data.targets, gold, templates, usage)).unwrap()
}

pub fn run(data: &SyntheticData, config: PipelineConfig, client: &LlmClient, jobs: usize) -> BatchOutput {
    Linker::new(config, &data.targets, &data.query_vectors, &data.target_vectors)
        .unwrap()
        .with_client(client)
        .link_batch(&data.queries, jobs)
}

pub fn decisions_jsonl(out: &BatchOutput) -> String {
    out.decisions
        .iter()
        .map(|d| serde_json::to_string(d).unwrap() + "\n")
        .collect()
}
