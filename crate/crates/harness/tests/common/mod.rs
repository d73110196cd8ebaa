#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use coe_core::chain::emit_chain;
use coe_core::dataset::{build_candidate_set, question_seed, DistractorPolicy};
use coe_core::metrics::gold_replay;
use coe_core::{CandidateSet, QaRecord};
use coe_harness::files::{self, PoolFile};
use serde_json::{json, Value};

pub type Handler = dyn Fn(&str, &str, &str) -> (u16, String) + Send + Sync;

/// Minimal HTTP stub. Tracks total hits and the peak number of requests
/// being handled at once.
pub struct Stub {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    pub peak: Arc<AtomicUsize>,
    server: Arc<tiny_http::Server>,
    workers: usize,
}

impl Drop for Stub {
    fn drop(&mut self) {
        for _ in 0..self.workers {
            self.server.unblock();
        }
    }
}

pub fn serve(workers: usize, handler: impl Fn(&str, &str, &str) -> (u16, String) + Send + Sync + 'static) -> Stub {
    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind stub"));
    let port = server.server_addr().to_ip().expect("ip").port();
    let hits = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let current = Arc::new(AtomicUsize::new(0));
    let handler: Arc<Handler> = Arc::new(handler);
    for _ in 0..workers {
        let (server, hits, peak, current, handler) = (server.clone(), hits.clone(), peak.clone(), current.clone(), handler.clone());
        thread::spawn(move || {
            while let Ok(mut req) = server.recv() {
                let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                hits.fetch_add(1, Ordering::SeqCst);
                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let method = req.method().to_string();
                let (status, text) = handler(&method, req.url(), &body);
                current.fetch_sub(1, Ordering::SeqCst);
                let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                let _ = req.respond(tiny_http::Response::from_string(text).with_status_code(status).with_header(header));
            }
        });
    }
    Stub {
        url: format!("http://127.0.0.1:{port}"),
        hits,
        peak,
        server,
        workers,
    }
}

pub fn chat_reply(text: &str) -> String {
    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}).to_string()
}

/// The question line of a chat request built by the client.
pub fn question_of(body: &str) -> Option<String> {
    let v: Value = serde_json::from_str(body).ok()?;
    let text = v.pointer("/messages/1/content/0/text")?.as_str()?;
    let line = text.lines().find(|l| l.starts_with("Question: "))?;
    Some(line.trim_start_matches("Question: ").to_owned())
}

/// Candidate sets exactly as the commands build them from `seed`.
pub fn candidate_sets(records: &[QaRecord], pool: &PoolFile, k: usize, seed: u64) -> Vec<CandidateSet> {
    records
        .iter()
        .map(|r| build_candidate_set(r, &pool.pool, k, question_seed(seed, &r.question_id), DistractorPolicy::GlobalPool).unwrap())
        .collect()
}

/// Stub chat endpoint answering each question with `answer(record, candset)`,
/// wrapped in prose and a fenced block.
pub fn replay_endpoint(
    records: &[QaRecord],
    sets: &[CandidateSet],
    answer: impl Fn(&QaRecord, &CandidateSet) -> String,
    workers: usize,
) -> Stub {
    let replies: HashMap<String, String> = records
        .iter()
        .zip(sets)
        .map(|(r, s)| (r.question.clone(), answer(r, s)))
        .collect();
    assert_eq!(replies.len(), records.len(), "fixture questions must be unique");
    serve(workers, move |_, _, body| match question_of(body).and_then(|q| replies.get(&q)) {
        Some(doc) => (200, chat_reply(&format!("Sure.\n```json\n{doc}\n```"))),
        None => (200, chat_reply("I do not know.")),
    })
}

pub fn gold_document(record: &QaRecord, set: &CandidateSet) -> String {
    emit_chain(&gold_replay(record, set).unwrap()).unwrap()
}

pub struct Fixture {
    pub dataset: std::path::PathBuf,
    pub pool_path: std::path::PathBuf,
    pub pool: PoolFile,
    pub records: Vec<QaRecord>,
}

pub fn bundled() -> Fixture {
    let dir = coe_harness::fixture::bundled_dir();
    load(&dir)
}

pub fn load(dir: &Path) -> Fixture {
    let pool_path = dir.join("pool.jsonl");
    let dataset = dir.join("dataset.jsonl");
    let pool = PoolFile::load(&pool_path).unwrap();
    let (records, rejected) = files::load_dataset(&dataset, &pool.pool).unwrap();
    assert!(rejected.is_empty());
    Fixture {
        dataset,
        pool_path,
        pool,
        records,
    }
}
