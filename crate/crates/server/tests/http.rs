use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use nmt_core::model::{Model, ModelConfig};
use nmt_core::train::Checkpoint;
use nmt_core::Translator;
use nmt_corpus::Vocab;
use nmt_server::{serve, ServerConfig};
use serde_json::{json, Value};

fn vocab_of(n: usize) -> Vocab {
    let words: Vec<String> = (0..n).map(|i| format!("w{i:02}")).collect();
    let sents: Vec<Vec<String>> = (0..n).map(|i| words[..n - i].to_vec()).collect();
    Vocab::build(sents.iter().map(|s| s.as_slice()), 1)
}

fn translator(max_len: usize) -> Arc<Translator> {
    let (sv, tv) = (vocab_of(10), vocab_of(10));
    let model = Model::<f32>::new(ModelConfig::new(sv.len(), tv.len(), 16, 2, 32, 2), 3).unwrap();
    let ck = Checkpoint::from_model(&model, 0.1, &[0, 1]);
    Arc::new(Translator::new(&[ck], sv, tv, 2, 0.0, max_len).unwrap())
}

fn start(tr: Arc<Translator>, cfg: ServerConfig) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            serve(listener, tr, cfg).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn http(addr: SocketAddr, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(120))).unwrap();
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: test\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    s.read_to_string(&mut raw).unwrap();
    let status = raw.split(' ').nth(1).unwrap().parse().unwrap();
    let body = raw.split_once("\r\n\r\n").map(|x| x.1.to_string()).unwrap_or_default();
    (status, body)
}

fn lines(n: usize, salt: usize) -> Vec<String> {
    (0..n)
        .map(|i| (0..1 + (i + salt) % 4).map(|j| format!("w{:02}", (i * 3 + j + salt) % 11)).collect::<Vec<_>>().join(" "))
        .collect()
}

#[test]
fn health_and_error_statuses() {
    let addr = start(translator(10), ServerConfig { max_batch: 3, model_name: "toy".into(), ..Default::default() });
    let (st, body) = http(addr, "GET", "/health", "");
    assert_eq!(st, 200);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap(), json!({"status": "ok", "model": "toy", "beam": 2}));
    assert_eq!(http(addr, "POST", "/translate", r#"{"text": []}"#), (200, r#"{"translations":[]}"#.to_string()));
    assert_eq!(http(addr, "POST", "/translate", "{oops").0, 400);
    assert_eq!(http(addr, "POST", "/translate", r#"{"text": ["a"], "beam": 0}"#).0, 400);
    assert_eq!(http(addr, "POST", "/translate", r#"{"text": ["a","b","c","d"]}"#).0, 413);
}

#[test]
fn concurrent_requests_are_aligned_and_match_direct_translation() {
    let tr = translator(10);
    let addr = start(Arc::clone(&tr), ServerConfig::default());
    let handles: Vec<_> = (0..16)
        .map(|k| {
            let tr = Arc::clone(&tr);
            std::thread::spawn(move || {
                let text = lines(5, k);
                let (st, body) = http(addr, "POST", "/translate", &json!({ "text": text }).to_string());
                assert_eq!(st, 200);
                let got: Vec<String> = serde_json::from_value(serde_json::from_str::<Value>(&body).unwrap()["translations"].clone()).unwrap();
                let want: Vec<String> = text.iter().map(|l| tr.translate(l).unwrap()).collect();
                assert_eq!(got, want);
                body
            })
        })
        .collect();
    let bodies: Vec<String> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    // identical requests give identical bodies
    let again = http(addr, "POST", "/translate", &json!({ "text": lines(5, 0) }).to_string()).1;
    assert_eq!(again, bodies[0]);
}

#[test]
fn health_answers_while_translation_runs() {
    let addr = start(translator(400), ServerConfig { workers: 1, ..Default::default() });
    let done = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&done);
    let long = std::thread::spawn(move || {
        let body = json!({ "text": lines(64, 1), "beam": 6 }).to_string();
        let r = http(addr, "POST", "/translate", &body);
        flag.store(true, Ordering::SeqCst);
        r.0
    });
    std::thread::sleep(Duration::from_millis(100));
    let (st, _) = http(addr, "GET", "/health", "");
    assert_eq!(st, 200);
    let finished_first = done.load(Ordering::SeqCst);
    assert_eq!(long.join().unwrap(), 200);
    assert!(!finished_first, "translation finished before the probe; make it longer");
}
