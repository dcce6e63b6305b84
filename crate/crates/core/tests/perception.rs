mod common;

use std::collections::BTreeMap;
use std::time::Duration;

use common::stub::{Reply, Stub};
use patrol::clock::WallClock;
use patrol::mitigation::{default_rulebook, KeywordRule, Rulebook};
use patrol::perception::{
    parse_response, remote_caption, remote_classify, render_prompt, scripted_caption, scripted_classify, AnomalyClass,
    Caption, CaptionBackend, Directive, Lexicon, PerceptionError, RemoteEndpointConfig, EMPTY_SCENE_PHRASE,
};
use patrol::saliency::HeatmapSummary;
use patrol::world::TruthLabel;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn caption(text: &str) -> Caption {
    Caption {
        text: text.into(),
        source_frame: 1,
        backend: CaptionBackend::Scripted,
    }
}

fn summary(text: &str) -> HeatmapSummary {
    HeatmapSummary {
        source_frame: 1,
        regions: vec![],
        total_regions: 0,
        text: text.into(),
    }
}

#[test]
fn grammar_examples() {
    let p = parse_response("HAZARDOUS: firearm visible near doorway REPORT").unwrap();
    assert_eq!(
        (p.class(), p.description(), p.directive()),
        (
            AnomalyClass::Hazardous,
            "firearm visible near doorway",
            Directive::Report
        )
    );
    let p = parse_response("CLEAR: empty corridor, normal conditions RESUME").unwrap();
    assert_eq!(
        (p.class(), p.description(), p.directive()),
        (
            AnomalyClass::Clear,
            "empty corridor, normal conditions",
            Directive::Resume
        )
    );
    assert!(matches!(
        parse_response("it might be unsafe, not sure"),
        Err(PerceptionError::UnparsedResponse { .. })
    ));
    assert!(matches!(
        parse_response("HAZARDOUS: smoke AVOID"),
        Err(PerceptionError::UnparsedResponse { .. })
    ));
}

#[test]
fn exactly_three_pairings_parse() {
    let mut accepted = Vec::new();
    for class in AnomalyClass::ALL {
        for directive in Directive::ALL {
            let text = format!("{}: something odd {}", class.token(), directive.token());
            if parse_response(&text).is_ok() {
                accepted.push((class, directive));
            }
        }
    }
    assert_eq!(
        accepted,
        vec![
            (AnomalyClass::Hazardous, Directive::Report),
            (AnomalyClass::Conflict, Directive::Avoid),
            (AnomalyClass::Clear, Directive::Resume),
        ]
    );
}

#[test]
fn fuzzed_responses_never_panic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pieces = [
        "HAZARDOUS",
        "CONFLICT",
        "CLEAR",
        ":",
        " ",
        "REPORT",
        "AVOID",
        "RESUME",
        "\n",
        "é",
        "'",
        "and",
        "…",
    ];
    for _ in 0..10_000 {
        let n = rng.random_range(0..8);
        let s: String = (0..n)
            .map(|_| {
                if rng.random_bool(0.7) {
                    pieces[rng.random_range(0..pieces.len())].to_owned()
                } else {
                    char::from_u32(rng.random_range(0..0x3000)).unwrap_or('?').to_string()
                }
            })
            .collect();
        let _ = parse_response(&s);
    }
}

#[test]
fn captions_follow_tag_order() {
    let lex = Lexicon::default();
    let mut f = common::frame(1, &[], TruthLabel::Clear);
    assert_eq!(
        scripted_caption(&f, &lex).unwrap().text,
        format!("a view of {EMPTY_SCENE_PHRASE}")
    );
    f.scene_tags = vec!["hallway".into(), "spill".into()];
    assert_eq!(
        scripted_caption(&f, &lex).unwrap().text,
        "a view of a hallway, a liquid spill on the floor"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tags: Vec<String> = lex.tags().map(str::to_owned).collect();
    for _ in 0..50 {
        tags.shuffle(&mut rng);
        let k = rng.random_range(1..tags.len());
        f.scene_tags = tags[..k].to_vec();
        let mut want = String::from("a view of ");
        for (i, t) in f.scene_tags.iter().enumerate() {
            if i > 0 {
                want.push_str(", ");
            }
            want.push_str(lex.get(t).unwrap());
        }
        assert_eq!(scripted_caption(&f, &lex).unwrap().text, want);
    }
    f.scene_tags = vec!["unicorn".into()];
    assert!(matches!(
        scripted_caption(&f, &lex),
        Err(PerceptionError::UnknownTag(_))
    ));
}

#[test]
fn prompt_contains_inputs_once() {
    let ctx = render_prompt(&caption("a hallway"), &summary("no salient regions"));
    assert_eq!(ctx.rendered.matches("a hallway").count(), 1);
    assert_eq!(ctx.rendered.matches("no salient regions").count(), 1);
    assert!(ctx.rendered.contains("classify any detected anomalies"));
}

#[test]
fn scripted_classifier_examples() {
    let book = default_rulebook();
    let ctx = |c: &str| render_prompt(&caption(c), &summary("no salient regions"));
    assert_eq!(
        scripted_classify(&ctx("a person holding a firearm"), &book),
        "HAZARDOUS: firearm detected REPORT"
    );
    assert_eq!(
        scripted_classify(&ctx("an empty hallway"), &book),
        "CLEAR: an empty hallway RESUME"
    );
    assert_eq!(
        scripted_classify(&ctx("a spill next to a firearm"), &book),
        "HAZARDOUS: firearm detected REPORT"
    );
}

#[test]
fn keyword_pairs_resolve_by_severity() {
    let book = default_rulebook();
    let rank = |r: &KeywordRule| (r.severity(), r.keyword().len());
    for a in book.rules() {
        for b in book.rules() {
            if a.keyword() == b.keyword() {
                continue;
            }
            let text = format!("a view of {} and {}", a.keyword(), b.keyword());
            let want = match rank(a).cmp(&rank(b)) {
                std::cmp::Ordering::Greater => a,
                std::cmp::Ordering::Less => b,
                std::cmp::Ordering::Equal => std::cmp::min_by_key(a, b, |r| r.keyword().to_owned()),
            };
            let ctx = render_prompt(&caption(&text), &summary("x"));
            let raw = scripted_classify(&ctx, &book);
            assert!(
                raw.contains(&format!(": {} detected", want.keyword())),
                "{text} -> {raw}"
            );
        }
    }
}

#[test]
fn scripted_backends_are_pure() {
    let lex = Lexicon::default();
    let f = common::frame(2, &["corridor", "fight"], common::anomaly("fight"));
    let c1 = scripted_caption(&f, &lex).unwrap();
    let c2 = scripted_caption(&f.clone(), &lex).unwrap();
    assert_eq!(serde_json::to_vec(&c1).unwrap(), serde_json::to_vec(&c2).unwrap());
    let ctx = render_prompt(&c1, &summary("1 salient region"));
    assert_eq!(
        scripted_classify(&ctx, &default_rulebook()),
        scripted_classify(&ctx, &default_rulebook())
    );
}

fn keyword() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["firearm", "fight", "obstruction", "spill"]).prop_map(str::to_owned)
}

proptest! {
    #[test]
    fn scripted_output_always_parses(
        subset in prop::collection::btree_set(keyword(), 1..5),
        words in prop::collection::vec("[a-z]{1,8}", 0..6),
    ) {
        let full = default_rulebook();
        let rules = subset.iter().map(|k| full.lookup(k).unwrap().clone()).collect();
        let book = Rulebook::new(rules).unwrap();
        let text = format!("a view of {}", words.join(" "));
        let raw = scripted_classify(&render_prompt(&caption(&text), &summary("x")), &book);
        prop_assert!(parse_response(&raw).is_ok(), "{}", raw);
    }
}

fn endpoint(stub: &Stub, timeout_s: f64, retries: u32) -> RemoteEndpointConfig {
    RemoteEndpointConfig::new(&stub.url, "PATROL_TEST_KEY_UNSET", timeout_s, retries).unwrap()
}

fn ctx() -> patrol::perception::PromptContext {
    render_prompt(&caption("a hallway"), &summary("no salient regions"))
}

#[test]
fn remote_reply_passes_through() {
    let body = "CONFLICT: cart in the aisle AVOID";
    let stub = Stub::start(vec![Reply::text(body).delayed(Duration::from_millis(10))]);
    let clock = WallClock::new();
    let reply = remote_classify(&ctx(), None, &endpoint(&stub, 2.0, 0), &clock).unwrap();
    assert_eq!(reply.raw, body);
    assert_eq!(reply.t_processing_s, 0.0);
    assert!(
        reply.t_network_s >= 0.010 && reply.t_network_s < 1.0,
        "{}",
        reply.t_network_s
    );
    let seen = stub.requests();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].path, "/classify");
    let sent: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(sent["prompt"], ctx().rendered);
    assert!(seen[0].headers.iter().all(|(k, _)| k != "authorization"));
}

#[test]
fn processing_header_is_read() {
    let stub = Stub::start(vec![Reply::text("CLEAR: fine RESUME").header("processing-ms", "250")]);
    let reply = remote_classify(&ctx(), None, &endpoint(&stub, 2.0, 0), &WallClock::new()).unwrap();
    assert_eq!(reply.t_processing_s, 0.25);
}

#[test]
fn processing_body_field_wins() {
    let body = serde_json::json!({"text": "CLEAR: fine RESUME", "processing_ms": 40.0}).to_string();
    let stub = Stub::start(vec![Reply::json(body).header("processing-ms", "250")]);
    let reply = remote_classify(&ctx(), None, &endpoint(&stub, 2.0, 0), &WallClock::new()).unwrap();
    assert_eq!(reply.t_processing_s, 0.04);
}

#[test]
fn repeated_timeouts_exhaust_retries() {
    let stub = Stub::start(vec![Reply::Hang(Duration::from_millis(800))]);
    let err = remote_classify(&ctx(), None, &endpoint(&stub, 0.2, 1), &WallClock::new()).unwrap_err();
    assert_eq!(err, PerceptionError::RemoteTimeout { attempts: 2 });
    assert_eq!(stub.requests().len(), 2);
}

#[test]
fn retry_recovers_after_one_timeout() {
    let stub = Stub::start(vec![
        Reply::Hang(Duration::from_millis(800)),
        Reply::text("CLEAR: ok RESUME"),
    ]);
    let reply = remote_classify(&ctx(), None, &endpoint(&stub, 0.2, 1), &WallClock::new()).unwrap();
    assert_eq!(reply.raw, "CLEAR: ok RESUME");
}

#[test]
fn server_errors_are_not_retried() {
    let stub = Stub::start(vec![Reply::text("boom").status(500)]);
    let err = remote_classify(&ctx(), None, &endpoint(&stub, 1.0, 3), &WallClock::new()).unwrap_err();
    assert!(matches!(err, PerceptionError::RemoteProtocolError(_)), "{err:?}");
    assert_eq!(stub.requests().len(), 1);
}

#[test]
fn malformed_body_is_a_protocol_error() {
    let stub = Stub::start(vec![Reply::json("{\"txt\": 1}".into())]);
    let err = remote_classify(&ctx(), None, &endpoint(&stub, 1.0, 0), &WallClock::new()).unwrap_err();
    assert!(matches!(err, PerceptionError::RemoteProtocolError(_)), "{err:?}");
}

#[test]
fn refused_connection_is_unavailable() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let cfg = RemoteEndpointConfig::new(format!("http://127.0.0.1:{port}"), "UNSET", 0.5, 1).unwrap();
    let err = remote_classify(&ctx(), None, &cfg, &WallClock::new()).unwrap_err();
    assert!(
        matches!(err, PerceptionError::RemoteUnavailable { attempts: 2, .. }),
        "{err:?}"
    );
}

#[test]
fn api_key_sent_as_bearer() {
    std::env::set_var("PATROL_TEST_KEY_SET", "s3cret");
    let stub = Stub::start(vec![Reply::text("CLEAR: ok RESUME")]);
    let cfg = RemoteEndpointConfig::new(&stub.url, "PATROL_TEST_KEY_SET", 1.0, 0).unwrap();
    remote_classify(&ctx(), Some("aGk="), &cfg, &WallClock::new()).unwrap();
    let seen = stub.requests();
    let auth: BTreeMap<_, _> = seen[0].headers.iter().cloned().collect();
    assert_eq!(auth.get("authorization").map(String::as_str), Some("Bearer s3cret"));
    let sent: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(sent["image_b64"], "aGk=");
}

#[test]
fn remote_caption_round_trip() {
    let stub = Stub::start(vec![Reply::text("a hallway with a cart"), Reply::text("  ")]);
    let cfg = endpoint(&stub, 1.0, 0);
    let (cap, elapsed) = remote_caption("aGk=", 12, &cfg, &WallClock::new()).unwrap();
    assert_eq!(cap.text, "a hallway with a cart");
    assert_eq!((cap.source_frame, cap.backend), (12, CaptionBackend::Remote));
    assert!(elapsed >= 0.0);
    assert_eq!(stub.requests()[0].path, "/caption");
    assert!(remote_caption("aGk=", 13, &cfg, &WallClock::new()).is_err());
}

#[test]
fn config_rejects_bad_timeout() {
    assert!(RemoteEndpointConfig::new("http://x", "K", 0.0, 0).is_err());
    assert!(serde_json::from_str::<RemoteEndpointConfig>(
        r#"{"base_url": "http://x", "api_key_env_var": "K", "timeout_s": -1}"#
    )
    .is_err());
}
