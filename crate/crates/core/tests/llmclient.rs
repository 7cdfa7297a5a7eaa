use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use mufu_core::corpus::ParallelCorpus;
use mufu_core::langdist::{AuxPlan, Provenance};
use mufu_core::llmclient::{
    run_ordered, student_pass, teacher_pass, teacher_requests, CallError, CorpusLookupEndpoint, DecodeParams,
    EndpointConfig, FnEndpoint, GenerationCache, LlmClient, RetryPolicy,
};
use mufu_core::promptgen::{render, PromptInstance, PromptVariant, RenderedPrompt};
use mufu_core::{Error, LanguageRegistry, LanguageSpec};

fn config(max_concurrency: usize, max_attempts: u32) -> EndpointConfig {
    EndpointConfig {
        max_concurrency,
        retry: RetryPolicy {
            max_attempts,
            backoff_base_ms: 0,
        },
        ..EndpointConfig::new("mock", "")
    }
}

fn prompt(text: &str) -> RenderedPrompt {
    let inst = PromptInstance::new(PromptVariant::baseline(), text, LanguageSpec::new("ace_Latn", "Achinese"));
    render(&inst).unwrap()
}

fn client(endpoint: FnEndpoint, cfg: EndpointConfig) -> LlmClient {
    LlmClient::new(Arc::new(endpoint), cfg, Arc::new(GenerationCache::in_memory())).unwrap()
}

#[test]
fn cache_hit_skips_endpoint() {
    let table: HashMap<String, String> = [("Translate from English to Achinese.\nEnglish: a\nAchinese:", " A")]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let c = client(
        FnEndpoint::new("mock", move |p, _| table.get(p).cloned().ok_or(CallError::Retryable("miss".into()))),
        config(1, 1),
    );
    let first = c.generate(&prompt("a"), &DecodeParams::default()).unwrap();
    assert_eq!(first.output, " A");
    let second = c.generate(&prompt("a"), &DecodeParams::default()).unwrap();
    assert_eq!(second, first);
    assert_eq!(c.calls(), 1);
}

#[test]
fn retries_until_success() {
    let seen = Arc::new(AtomicUsize::new(0));
    let counter = seen.clone();
    let c = client(
        FnEndpoint::new("flaky", move |_, _| {
            if counter.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(CallError::Retryable("boom".into()))
            } else {
                Ok("ok".into())
            }
        }),
        config(1, 3),
    );
    let record = c.generate(&prompt("x"), &DecodeParams::default()).unwrap();
    assert_eq!(record.attempts, 3);
    assert_eq!(seen.load(Ordering::SeqCst), 3);
}

#[test]
fn exhausted_retries_carry_history() {
    let c = client(FnEndpoint::new("down", |_, _| Err(CallError::Retryable("refused".into()))), config(1, 3));
    match c.generate(&prompt("x"), &DecodeParams::default()) {
        Err(Error::Transport { attempts }) => {
            assert_eq!(attempts.iter().map(|a| a.attempt).collect::<Vec<_>>(), vec![1, 2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn rejected_request_is_not_retried() {
    let c = client(
        FnEndpoint::new("strict", |_, _| Err(CallError::Rejected { status: 400, body: "{\"error\":\"bad\"}".into() })),
        config(1, 3),
    );
    assert!(matches!(
        c.generate(&prompt("x"), &DecodeParams::default()),
        Err(Error::Endpoint { status: 400, .. })
    ));
    assert_eq!(c.calls(), 1);
}

#[test]
fn in_flight_never_exceeds_limit_and_order_is_kept() {
    let in_flight = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (f, p) = (in_flight.clone(), peak.clone());
    let c = client(
        FnEndpoint::new("slow", move |prompt, _| {
            let now = f.fetch_add(1, Ordering::SeqCst) + 1;
            p.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(2));
            f.fetch_sub(1, Ordering::SeqCst);
            let src = prompt.lines().nth(1).unwrap().trim_start_matches("English: ");
            Ok(format!(" {src}"))
        }),
        config(3, 1),
    );
    let target = LanguageSpec::new("ace_Latn", "Achinese");
    let instances: Vec<PromptInstance> = (0..100)
        .map(|i| PromptInstance::new(PromptVariant::baseline(), &format!("s{i}"), target.clone()))
        .collect();
    let results = student_pass(&instances, &c, &DecodeParams::default());
    assert_eq!(results.len(), 100);
    for (i, r) in results.iter().enumerate() {
        assert_eq!(r.translation, format!("s{i}"));
    }
    assert!(peak.load(Ordering::SeqCst) <= 3);
    assert!(peak.load(Ordering::SeqCst) >= 2);
}

#[test]
fn run_ordered_matches_sequential() {
    let items: Vec<u64> = (0..57).collect();
    assert_eq!(run_ordered(&items, 8, |x| x * x), items.iter().map(|x| x * x).collect::<Vec<_>>());
}

#[test]
fn echoed_prefix_is_stripped() {
    let c = client(FnEndpoint::new("echo", |_, _| Ok("Achinese: hai\nEnglish: more".into())), config(1, 1));
    let inst = PromptInstance::new(PromptVariant::baseline(), "hi", LanguageSpec::new("ace_Latn", "Achinese"));
    assert_eq!(student_pass(&[inst], &c, &DecodeParams::default())[0].translation, "hai");
}

fn toy_corpus() -> ParallelCorpus {
    let langs = ["eng_Latn", "ace_Latn", "bjn_Latn", "ind_Latn", "zsm_Latn", "jav_Latn", "sun_Latn", "min_Latn"];
    let map: BTreeMap<String, Vec<String>> = langs
        .iter()
        .map(|l| (l.to_string(), (0..6).map(|i| format!("{l} sentence {i}")).collect()))
        .collect();
    ParallelCorpus::from_languages(map).unwrap()
}

fn plan(target: &str, aux: &[&str]) -> AuxPlan {
    AuxPlan::new(target, aux.iter().map(|s| s.to_string()).collect(), Provenance::DistanceRanked).unwrap()
}

fn lookup_client(name: &str, cache: Arc<GenerationCache>) -> LlmClient {
    let endpoint = CorpusLookupEndpoint::new(name, toy_corpus(), &LanguageRegistry::bundled()).unwrap();
    LlmClient::new(Arc::new(endpoint), config(4, 1), cache).unwrap()
}

#[test]
fn mufu5_needs_six_generations_per_pair() {
    let plans: BTreeMap<String, AuxPlan> =
        [("ace_Latn".to_string(), plan("ace_Latn", &["zsm_Latn", "jav_Latn", "sun_Latn", "ind_Latn", "min_Latn"]))].into();
    assert_eq!(teacher_requests(&plans, &[0]).len(), 6);
    assert_eq!(teacher_requests(&plans, &[0, 1, 2]).len(), 18);
}

#[test]
fn shared_auxiliary_generated_once() {
    let plans: BTreeMap<String, AuxPlan> = [
        ("ace_Latn".to_string(), plan("ace_Latn", &["ind_Latn"])),
        ("bjn_Latn".to_string(), plan("bjn_Latn", &["ind_Latn"])),
    ]
    .into();
    let c = lookup_client("teacher", Arc::new(GenerationCache::in_memory()));
    let store = teacher_pass(&toy_corpus(), &[0], &plans, &[5], &LanguageRegistry::bundled(), &c, &DecodeParams::default())
        .unwrap();
    // ace, bjn drafts plus a single Indonesian candidate
    assert_eq!(c.calls(), 3);
    assert_eq!(store.get(0, "ind_Latn"), Some("ind_Latn sentence 0"));
    assert_eq!(store.completion_ratio(), 1.0);
    assert_eq!(mufu_core::llmclient::CandidateStore::from_jsonl(&store.to_jsonl()).unwrap().candidates, store.candidates);
}

#[test]
fn zero_sentences_give_empty_store() {
    let plans: BTreeMap<String, AuxPlan> = [("ace_Latn".to_string(), plan("ace_Latn", &["ind_Latn"]))].into();
    let c = lookup_client("teacher", Arc::new(GenerationCache::in_memory()));
    let store = teacher_pass(&toy_corpus(), &[], &plans, &[5], &LanguageRegistry::bundled(), &c, &DecodeParams::default())
        .unwrap();
    assert!(store.is_empty());
    assert_eq!(c.calls(), 0);
}

#[test]
fn teacher_failures_are_recorded() {
    // zho_Hans is not in the toy corpus, so its few-shot references are missing
    let plans: BTreeMap<String, AuxPlan> = [("ace_Latn".to_string(), plan("ace_Latn", &["zho_Hans"]))].into();
    let c = lookup_client("teacher", Arc::new(GenerationCache::in_memory()));
    let store = teacher_pass(&toy_corpus(), &[0], &plans, &[5], &LanguageRegistry::bundled(), &c, &DecodeParams::default())
        .unwrap();
    assert_eq!(store.failures.len(), 1);
    assert_eq!(store.completion_ratio(), 0.5);
}

#[test]
fn persisted_cache_replays_without_calls() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let plans: BTreeMap<String, AuxPlan> = [("ace_Latn".to_string(), plan("ace_Latn", &["ind_Latn", "jav_Latn"]))].into();
    let run = || {
        let c = lookup_client("teacher", Arc::new(GenerationCache::open(&path).unwrap()));
        let store =
            teacher_pass(&toy_corpus(), &[0, 1, 2], &plans, &[5], &LanguageRegistry::bundled(), &c, &DecodeParams::default())
                .unwrap();
        (store.to_jsonl(), c.calls())
    };
    let (cold, cold_calls) = run();
    let (warm, warm_calls) = run();
    assert_eq!(cold_calls, 9);
    assert_eq!(warm_calls, 0);
    assert_eq!(cold, warm);
}

/// Serves canned (status, body) responses in order and records request bodies.
fn serve(responses: Vec<(u16, &'static str)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/generate", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let seen = bodies.clone();
    std::thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            seen.lock().unwrap().push(String::from_utf8(buf).unwrap());
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, bodies)
}

#[test]
fn http_endpoint_round_trip_with_retry() {
    let (url, bodies) = serve(vec![(503, "{\"error\":\"busy\"}"), (200, "{\"text\":\" hai\"}")]);
    let cfg = EndpointConfig {
        retry: RetryPolicy {
            max_attempts: 3,
            backoff_base_ms: 1,
        },
        ..EndpointConfig::new("http", &url)
    };
    let endpoint = cfg.http_endpoint().unwrap();
    let c = LlmClient::new(Arc::new(endpoint), cfg, Arc::new(GenerationCache::in_memory())).unwrap();
    let record = c.generate(&prompt("hi"), &DecodeParams::default()).unwrap();
    assert_eq!(record.output, " hai");
    assert_eq!(record.attempts, 2);
    let body: serde_json::Value = serde_json::from_str(&bodies.lock().unwrap()[1]).unwrap();
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["stop"][0], "\n");
    assert!(body["prompt"].as_str().unwrap().ends_with("Achinese:"));
    assert!(body["max_tokens"].is_u64());
}

#[test]
fn http_client_error_surfaces_body() {
    let (url, _) = serve(vec![(422, "{\"error\":\"prompt too long\"}")]);
    let cfg = EndpointConfig::new("http", &url);
    let endpoint = cfg.http_endpoint().unwrap();
    let c = LlmClient::new(Arc::new(endpoint), cfg, Arc::new(GenerationCache::in_memory())).unwrap();
    match c.generate(&prompt("hi"), &DecodeParams::default()) {
        Err(Error::Endpoint { status, body }) => {
            assert_eq!(status, 422);
            assert!(body.contains("prompt too long"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn invalid_configs() {
    assert!(config(0, 1).validate().is_err());
    assert!(config(1, 0).validate().is_err());
    let bad = DecodeParams {
        temperature: -1.0,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}
