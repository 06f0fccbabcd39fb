//! Remote clients against an in-process HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Value};

use inkloop_core::assets::PromptAssets;
use inkloop_core::backends::remote::{
    Endpoint, RemoteChat, RemoteDetector, RemoteEditor, RemoteEmbedder, RemoteGenerator,
};
use inkloop_core::backends::sim::{extractor_echo_hook, SimChat};
use inkloop_core::backends::{BackendError, ChatClient, Detector, Generator};
use inkloop_core::boxmodel::{parse_object_list, serialize_object_list};
use inkloop_core::corpus::{Corpus, PoemRecord};
use inkloop_core::embedding::{EmbedError, Embedder, HashedNgramEmbedder};
use inkloop_core::pipeline::{run_pipeline, Clients, PipelineConfig};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    auth: Option<String>,
    body: Value,
}

type Handler = dyn Fn(&str, &Value) -> (u16, String) + Send + Sync;

/// Serves until the test process exits. Returns the base URL and the log
/// of requests received.
fn serve(handler: Arc<Handler>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let log = Arc::new(Mutex::new(Vec::new()));
    let log2 = Arc::clone(&log);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line
                .split_whitespace()
                .nth(1)
                .unwrap_or("/")
                .to_string();
            let mut len = 0usize;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => auth = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let (status, reply) = handler(&path, &body);
            log2.lock().unwrap().push(Seen { path, auth, body });
            let head = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                reply.len()
            );
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (base, log)
}

fn endpoint(base: &str, path: &str) -> Endpoint {
    Endpoint {
        model: "mock-model".into(),
        api_key: Some("sekret".into()),
        timeout_secs: 10,
        ..Endpoint::new(format!("{base}{path}"))
    }
}

#[test]
fn chat_request_shape_and_auth() {
    let (base, log) = serve(Arc::new(|_, _| {
        (200, json!({"text": "Image elements:\n1. moon"}).to_string())
    }));
    let chat = RemoteChat::new(endpoint(&base, "/chat")).unwrap();
    let reply = chat.chat("sys", "usr").unwrap();
    assert_eq!(reply, "Image elements:\n1. moon");
    let seen = log.lock().unwrap()[0].clone();
    assert_eq!(seen.path, "/chat");
    assert_eq!(seen.auth.as_deref(), Some("Bearer sekret"));
    assert_eq!(
        seen.body,
        json!({"model": "mock-model", "system": "sys", "user": "usr"})
    );
}

#[test]
fn detector_filters_clamps_and_numbers() {
    let (base, log) = serve(Arc::new(|path, _| match path {
        "/generate" => (200, json!({"image": B64.encode(b"png")}).to_string()),
        _ => (
            200,
            json!({"detections": [
                {"label": "crane", "box": [0.1, 0.1, 0.2, 0.2], "score": 0.9},
                {"label": "crane", "box": [0.9, 0.5, 0.3, 0.2], "score": 0.5},
                {"label": "moon", "box": [0.4, 0.0, 0.1, 0.1], "score": 0.2}
            ]})
            .to_string(),
        ),
    }));
    let image = RemoteGenerator::new(endpoint(&base, "/generate"), 512)
        .unwrap()
        .generate("a crane")
        .unwrap();
    assert_eq!(image.bytes(), Some(&b"png"[..]));
    let det = RemoteDetector::new(endpoint(&base, "/detect"), 0.3).unwrap();
    let list = det
        .detect(&image, &["crane".into(), "moon".into()])
        .unwrap()
        .to_object_list();
    assert_eq!(
        serialize_object_list(&list),
        "[('crane #1', [0.100, 0.100, 0.200, 0.200]), ('crane #2', [0.900, 0.500, 0.100, 0.200])]"
    );
    let log = log.lock().unwrap();
    assert_eq!(log[0].body, json!({"prompt": "a crane", "size": 512}));
    assert_eq!(log[1].body["image"], json!(B64.encode(b"png")));
    assert_eq!(log[1].body["labels"], json!(["crane", "moon"]));
    assert_eq!(log[1].body["threshold"], json!(0.3));
}

#[test]
fn http_errors_are_rejections() {
    let (base, _) = serve(Arc::new(|path, _| match path {
        "/bad" => (500, "{\"error\": \"boom\"}".into()),
        _ => (200, "not json".into()),
    }));
    let err = RemoteChat::new(endpoint(&base, "/bad"))
        .unwrap()
        .chat("s", "u")
        .unwrap_err();
    assert!(
        matches!(err, BackendError::Rejected(ref m) if m.contains("500")),
        "{err}"
    );
    let err = RemoteChat::new(endpoint(&base, "/garbled"))
        .unwrap()
        .chat("s", "u")
        .unwrap_err();
    assert!(matches!(err, BackendError::Rejected(_)));
}

#[test]
fn closed_port_is_unreachable() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let chat = RemoteChat::new(endpoint(&format!("http://127.0.0.1:{port}"), "/chat")).unwrap();
    assert!(matches!(
        chat.chat("s", "u"),
        Err(BackendError::Unreachable(_))
    ));
}

#[test]
fn embedder_normalizes_and_maps_errors() {
    let (base, _) = serve(Arc::new(|path, _| match path {
        "/zero" => (200, json!({"embedding": [0.0, 0.0]}).to_string()),
        _ => (200, json!({"embedding": [3.0, 4.0]}).to_string()),
    }));
    let e = RemoteEmbedder::new(endpoint(&base, "/embed")).unwrap();
    assert_eq!(e.embed("x").unwrap().components(), &[0.6, 0.8]);
    assert!(RemoteEmbedder::new(endpoint(&base, "/zero"))
        .unwrap()
        .embed("x")
        .is_err());
    assert_eq!(e.embed(""), Err(EmbedError::EmptyText));
}

/// A fake model service whose "images" are object lists: generation draws
/// a fixed partial scene, detection reads the list back, and editing
/// renders exactly the grounded boxes it is given.
#[test]
fn full_loop_over_http() {
    let initial = "[('peak #1', [0.021, 0.083, 0.949, 0.389]), ('incense burner #1', [0.341, 0.269, 0.188, 0.189])]";
    let handler = move |path: &str, body: &Value| -> (u16, String) {
        let img = |text: String| json!({"image": B64.encode(text)}).to_string();
        match path {
            "/generate" => (200, img(initial.to_string())),
            "/detect" => {
                let bytes = B64.decode(body["image"].as_str().unwrap()).unwrap();
                let scene = parse_object_list(std::str::from_utf8(&bytes).unwrap()).unwrap();
                let labels: Vec<String> = serde_json::from_value(body["labels"].clone()).unwrap();
                let dets: Vec<Value> = scene
                    .iter()
                    .filter(|o| labels.contains(&o.name))
                    .map(|o| json!({"label": o.name, "box": o.bbox.as_array(), "score": 0.8}))
                    .collect();
                (200, json!({"detections": dets}).to_string())
            }
            "/edit" => {
                let parts: Vec<String> = body["boxes"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|b| {
                        let a = b["box"].as_array().unwrap();
                        format!(
                            "('{}', [{}, {}, {}, {}])",
                            b["label"].as_str().unwrap(),
                            a[0],
                            a[1],
                            a[2],
                            a[3]
                        )
                    })
                    .collect();
                (200, img(format!("[{}]", parts.join(", "))))
            }
            _ => (404, "{}".into()),
        }
    };
    let (base, log) = serve(Arc::new(handler));
    let record = PoemRecord {
        id: "lu".into(),
        poem: "日照香炉生紫烟".into(),
        translation: "The sunlit peak wears a purple haze.".into(),
        annotations: vec![],
        appreciation: String::new(),
        manual_elements: Some(vec!["peak".into(), "purple haze".into(), "sun".into()]),
    };
    let assets = PromptAssets::bundled();
    let chat: Arc<dyn ChatClient> = Arc::new(SimChat::new().hook(extractor_echo_hook(
        &assets,
        std::slice::from_ref(&record),
        vec![],
    )));
    let clients = Clients {
        chat,
        generator: Arc::new(RemoteGenerator::new(endpoint(&base, "/generate"), 1024).unwrap()),
        detector: Arc::new(RemoteDetector::new(endpoint(&base, "/detect"), 0.3).unwrap()),
        editor: Arc::new(RemoteEditor::new(endpoint(&base, "/edit")).unwrap()),
        embedder: Arc::new(HashedNgramEmbedder),
    };
    let corpus = Corpus::new(vec![record]).unwrap();
    let cfg = PipelineConfig::default();
    let r = run_pipeline("日照香炉生紫烟", &corpus, &clients, &cfg, &assets)
        .unwrap()
        .result;
    assert_eq!(r.per_round_completeness.first(), Some(&(1.0 / 3.0)));
    assert_eq!(r.per_round_completeness.last(), Some(&1.0));
    assert!(r.converged);
    let log = log.lock().unwrap();
    let edit = log.iter().find(|s| s.path == "/edit").unwrap();
    let instruction = edit.body["instruction"].as_str().unwrap();
    assert!(instruction.contains("add purple haze"), "{instruction}");
    // The burner is detected only when named in the vocabulary, which it
    // never is, so the loop leaves it in the image untouched.
    assert!(!instruction.contains("incense burner"));
}
