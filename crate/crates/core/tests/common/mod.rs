#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use proptest::prelude::*;

use genie_core::assertion::AssertionStatus;
use genie_core::attributes::Attr;
use genie_core::integrate::{Span, StructuredEntity};
use genie_core::terminology::SemanticType;

// ---------------------------------------------------------------------------
// Naive longest-match scanner

fn lower1(c: char) -> char {
    let l: Vec<char> = c.to_lowercase().collect();
    if l.len() == 1 {
        l[0]
    } else {
        c
    }
}

fn wordy(c: char) -> bool {
    c.is_alphanumeric()
}

/// At each admissible position, tries every surface and keeps the longest
/// that ends on a word boundary. Returns `(start, end)` byte spans.
pub fn naive_scan(surfaces: &[String], text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let folded: Vec<char> = chars.iter().map(|&(_, c)| lower1(c)).collect();
    let byte_at = |i: usize| if i < chars.len() { chars[i].0 } else { text.len() };
    let boundary = |i: usize| {
        if i == 0 || i >= chars.len() {
            true
        } else {
            !(wordy(chars[i - 1].1) && wordy(chars[i].1))
        }
    };
    let pats: Vec<Vec<char>> = surfaces.iter().map(|s| s.chars().map(lower1).collect()).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].1.is_whitespace() || !boundary(i) {
            i += 1;
            continue;
        }
        let best = pats
            .iter()
            .filter(|p| !p.is_empty() && i + p.len() <= chars.len())
            .filter(|p| folded[i..i + p.len()] == p[..])
            .filter(|p| boundary(i + p.len()))
            .map(|p| p.len())
            .max();
        match best {
            Some(len) => {
                out.push((byte_at(i), byte_at(i + len)));
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Generators

fn word() -> impl Strategy<Value = String> {
    proptest::collection::vec(prop::sample::select(vec!['a', 'b', 'c', 'A', 'B', 'é', 'É', '1']), 1..4)
        .prop_map(|cs| cs.into_iter().collect())
}

pub fn surface() -> impl Strategy<Value = String> {
    (word(), proptest::collection::vec((prop::sample::select(vec![" ", "-"]), word()), 0..3)).prop_map(|(w, rest)| {
        let mut s = w;
        for (sep, w) in rest {
            s.push_str(sep);
            s.push_str(&w);
        }
        s
    })
}

pub fn lexicon(max: usize) -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(surface(), 1..=max)
}

pub fn text(max_chars: usize) -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        4 => word(),
        2 => Just(" ".to_string()),
        1 => prop::sample::select(vec!["-", ",", ".", "\n", "  ", "(", ")", "ß", "İ"]).prop_map(str::to_string),
    ];
    proptest::collection::vec(piece, 0..max_chars / 2).prop_map(move |ps| {
        let mut s = String::new();
        for p in ps {
            if s.chars().count() + p.chars().count() > max_chars {
                break;
            }
            s.push_str(&p);
        }
        s
    })
}

pub fn lexicon_tsv(surfaces: &[String]) -> String {
    surfaces
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{s}\tC{i}\tSign, Symptom, or Finding\n"))
        .collect()
}

fn sentence(max_words: usize) -> impl Strategy<Value = String> {
    (
        proptest::collection::vec("[a-z]{1,8}", 1..max_words),
        prop::sample::select(vec![".", "!", "?", ""]),
        "[A-Z]",
    )
        .prop_map(|(words, end, cap)| format!("{cap}{}{end}", words.join(" ")))
}

/// Notes with paragraphs, sentences and formatting line breaks; `long`
/// controls how many words a single sentence may reach.
pub fn note_text(long: usize) -> impl Strategy<Value = String> {
    let para = proptest::collection::vec(
        prop_oneof![8 => sentence(30), 1 => sentence(long)],
        1..8,
    )
    .prop_map(|ss| {
        let mut out = String::new();
        for (i, s) in ss.iter().enumerate() {
            if i > 0 {
                out.push_str(if i % 3 == 0 { "\n" } else { " " });
            }
            out.push_str(s);
        }
        out
    });
    proptest::collection::vec(para, 1..10).prop_map(|ps| ps.join("\n\n"))
}

fn attr_list() -> impl Strategy<Value = Attr<Vec<String>>> {
    prop_oneof![
        Just(Attr::Null),
        Just(Attr::NotApplicable),
        proptest::collection::vec(value_text(), 0..3).prop_map(Attr::Value),
    ]
}

fn attr_scalar() -> impl Strategy<Value = Attr<String>> {
    prop_oneof![Just(Attr::Null), Just(Attr::NotApplicable), value_text().prop_map(Attr::Value)]
}

fn value_text() -> impl Strategy<Value = String> {
    "\\PC{0,12}".prop_filter("reserved marker", |s| s != "not applicable")
}

pub fn entity() -> impl Strategy<Value = StructuredEntity> {
    (
        ("[a-z0-9-]{1,8}", "\\PC{1,16}", "\\PC{1,16}", 0usize..5000, 1usize..50),
        (
            prop::sample::select(SemanticType::REPORTABLE.to_vec()),
            prop::sample::select(AssertionStatus::ALL.to_vec()),
        ),
        (attr_list(), attr_list(), attr_scalar(), attr_scalar(), attr_scalar()),
        any::<bool>(),
    )
        .prop_map(|((note_id, phrase, surface, start, len), (st, status), (loc, modi, value, unit, purpose), ambiguous)| {
            StructuredEntity {
                note_id,
                phrase,
                surface,
                span: Span { start, end: start + len },
                semantic_type: st,
                assertion_status: status,
                locations: loc,
                modifiers: modi,
                value,
                unit,
                purpose,
                ambiguous,
            }
        })
}

// ---------------------------------------------------------------------------
// Stub chat-completion server

/// Counts requests and concurrent connections; answers from a script of
/// status codes, then with `fallback`.
pub struct StubServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    pub max_in_flight: Arc<AtomicUsize>,
    pub seen_auth: Arc<Mutex<Vec<String>>>,
}

pub struct StubSpec {
    pub script: Vec<u16>,
    pub fallback: u16,
    pub delay: Duration,
    /// Response content for prompts, by exact prompt text.
    pub answers: HashMap<String, String>,
}

impl Default for StubSpec {
    fn default() -> Self {
        StubSpec {
            script: Vec::new(),
            fallback: 200,
            delay: Duration::ZERO,
            answers: HashMap::new(),
        }
    }
}

impl StubServer {
    pub fn start(spec: StubSpec) -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
        let url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let max_in_flight = Arc::new(AtomicUsize::new(0));
        let seen_auth = Arc::new(Mutex::new(Vec::new()));
        let current = Arc::new(AtomicUsize::new(0));
        let script = Arc::new(Mutex::new(VecDeque::from(spec.script)));
        let answers = Arc::new(spec.answers);
        let (fallback, delay) = (spec.fallback, spec.delay);
        {
            let hits = hits.clone();
            let max_in_flight = max_in_flight.clone();
            let seen_auth = seen_auth.clone();
            thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { continue };
                    let (hits, max_in_flight, current, script, answers, seen_auth) = (
                        hits.clone(),
                        max_in_flight.clone(),
                        current.clone(),
                        script.clone(),
                        answers.clone(),
                        seen_auth.clone(),
                    );
                    thread::spawn(move || {
                        let Some((auth, body)) = read_request(&stream) else { return };
                        let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                        max_in_flight.fetch_max(now, Ordering::SeqCst);
                        hits.fetch_add(1, Ordering::SeqCst);
                        seen_auth.lock().unwrap().push(auth);
                        thread::sleep(delay);
                        let status = script.lock().unwrap().pop_front().unwrap_or(fallback);
                        let prompt = serde_json::from_str::<serde_json::Value>(&body)
                            .ok()
                            .and_then(|v| v.pointer("/messages/0/content").and_then(|c| c.as_str()).map(str::to_string))
                            .unwrap_or_default();
                        let content = answers.get(&prompt).cloned().unwrap_or_else(|| "ok".into());
                        let payload = if status == 200 {
                            serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
                                .to_string()
                        } else {
                            "{\"error\":\"stub\"}".to_string()
                        };
                        current.fetch_sub(1, Ordering::SeqCst);
                        write_response(stream, status, &payload);
                    });
                }
            });
        }
        StubServer {
            url,
            hits,
            max_in_flight,
            seen_auth,
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn read_request(stream: &TcpStream) -> Option<(String, String)> {
    let mut reader = BufReader::new(stream);
    let mut len = 0usize;
    let mut auth = String::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().ok()?;
        }
        if lower.starts_with("authorization:") {
            auth = line["authorization:".len()..].trim().to_string();
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some((auth, String::from_utf8_lossy(&body).into_owned()))
}

fn write_response(mut stream: TcpStream, status: u16, body: &str) {
    let reason = match status {
        200 => "OK",
        401 => "Unauthorized",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let _ = write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.flush();
}
