use std::sync::Arc;

use ctxdecode::engine::{decode, DecodeRequest, DecodingMethod, ExecutionMode, RecordMode};
use ctxdecode::harness::template::{DatasetKind, PromptTemplate};
use ctxdecode::lm::{open_model, LanguageModel, LmError, LogitServer, ModelFamily, RemoteLm, TableLm};
use ctxdecode::sampler::SamplingConfig;

fn table() -> TableLm {
    TableLm::from_json(
        r#"{"id": "toy", "order": 2, "vocab": ["a", "b", "c", "<unk>", "</s>"], "eos": "</s>",
            "rules": [
                {"suffix": ["a"], "dist": {"b": 0.6, "c": 0.3, "</s>": 0.1}},
                {"suffix": ["b"], "dist": {"a": 0.5, "c": 0.4, "</s>": 0.1}},
                {"suffix": ["a", "b"], "dist": {"c": 0.9, "</s>": 0.1}}
            ],
            "default": {"a": 0.4, "b": 0.3, "c": 0.3},
            "config": {"n_layer": 2, "d_model": 8, "d_attn": 8, "d_ff": 32, "n_heads": 2, "n_vocab": 5}}"#,
    )
    .unwrap()
}

fn request(method: DecodingMethod) -> DecodeRequest {
    let mut sampling = DatasetKind::Xsum.hyperparameters().sampling_config(9);
    sampling.min_new_tokens = 3;
    sampling.max_new_tokens = 12;
    DecodeRequest::new(
        "1",
        "a b c a",
        "",
        PromptTemplate::builtin(DatasetKind::Xsum, ModelFamily::DecoderOnly, false),
        method,
        sampling,
    )
}

#[test]
fn remote_logits_match_local() {
    let local = Arc::new(table());
    let server = LogitServer::new(local.clone()).spawn("127.0.0.1:0").unwrap();
    let remote = RemoteLm::connect(&server.url()).unwrap();
    assert_eq!(remote.id(), "toy");
    assert_eq!(remote.vocab().tokens(), local.vocab().tokens());
    assert_eq!(remote.model_config().unwrap(), local.model_config().unwrap());
    for input in [vec![0u32], vec![0, 1], vec![2, 2, 1]] {
        assert_eq!(remote.forward(&input).unwrap(), local.forward(&input).unwrap());
    }
    let rows = remote.forward_batch(&[&[0, 1], &[1]]).unwrap();
    assert_eq!(rows[0], local.forward(&[0, 1]).unwrap());
    assert_eq!(rows[1], local.forward(&[1]).unwrap());
}

#[test]
fn remote_decoding_matches_local_in_both_modes() {
    let local = Arc::new(table());
    let server = LogitServer::new(local.clone()).spawn("127.0.0.1:0").unwrap();
    let remote = open_model(&format!("remote:{}", server.url())).unwrap();
    assert!(remote.supports_batch());
    for execution in [ExecutionMode::TwoPass, ExecutionMode::PackedBatch] {
        let method = DecodingMethod::Cad { alpha: 0.5, execution };
        let want = decode(local.as_ref(), &request(method)).unwrap();
        let got = decode(remote.as_ref(), &request(method)).unwrap();
        assert_eq!(got.token_ids, want.token_ids);
        assert_eq!(got.n_forward, want.n_forward);
        if execution == ExecutionMode::PackedBatch {
            assert_eq!(got.mode, RecordMode::PackedBatch);
            assert_eq!(got.n_calls, got.n_steps);
        }
    }
}

#[test]
fn missing_config_is_unsupported() {
    let server = LogitServer::new(Arc::new(table())).expose_config(false).spawn("127.0.0.1:0").unwrap();
    let remote = RemoteLm::connect(&server.url()).unwrap();
    assert!(matches!(remote.model_config(), Err(LmError::Unsupported(_))));
    // Decoding still works without the geometry.
    let record = decode(&remote, &request(DecodingMethod::Vanilla)).unwrap();
    assert!(record.n_steps > 0);
}

#[test]
fn packing_disabled_falls_back_to_two_passes() {
    let local = Arc::new(table());
    let server = LogitServer::new(local.clone()).batching(false).spawn("127.0.0.1:0").unwrap();
    let remote = RemoteLm::connect(&server.url()).unwrap();
    assert!(matches!(remote.forward_batch(&[&[0], &[1]]), Err(LmError::Unsupported(_))));
    let method = DecodingMethod::Cad { alpha: 0.3, execution: ExecutionMode::PackedBatch };
    let record = decode(&remote, &request(method)).unwrap();
    assert_eq!(record.mode, RecordMode::TwoPass);
    assert_eq!(record.n_calls, record.n_forward);
    assert_eq!(record.token_ids, decode(local.as_ref(), &request(method)).unwrap().token_ids);
}

#[test]
fn backend_errors_map_to_statuses() {
    let local = Arc::new(table().with_max_input_len(Some(4)));
    let server = LogitServer::new(local).expose_tokenize(true).spawn("127.0.0.1:0").unwrap();
    let remote = RemoteLm::connect(&server.url()).unwrap();
    assert!(remote.has_tokenize_endpoint());
    assert_eq!(remote.max_input_len(), Some(4));
    assert_eq!(remote.tokenize("a b zzz").unwrap(), vec![0, 1, 3]);
    match remote.forward(&[0, 1, 2, 0, 1]) {
        Err(LmError::Backend { status, .. }) => assert_eq!(status, 413),
        other => panic!("{other:?}"),
    }
    assert!(matches!(remote.forward(&[99]), Err(LmError::UnknownToken(_) | LmError::InvalidInput(_))));
}

#[test]
fn unreachable_backend_is_a_transport_error() {
    let server = LogitServer::new(Arc::new(table())).spawn("127.0.0.1:0").unwrap();
    let url = server.url();
    server.shutdown();
    let err = RemoteLm::connect(&url).err().expect("connect fails");
    assert!(err.is_transport(), "{err:?}");
}

#[test]
fn greedy_remote_generation_is_stable() {
    let server = LogitServer::new(Arc::new(table())).spawn("127.0.0.1:0").unwrap();
    let remote = RemoteLm::connect(&server.url()).unwrap();
    let mut req = request(DecodingMethod::Vanilla);
    req.sampling = SamplingConfig::greedy(0, 6);
    let a = decode(&remote, &req).unwrap();
    let b = decode(&remote, &req).unwrap();
    assert_eq!(a.token_ids, b.token_ids);
    assert!(a.s_per_token > 0.0);
}
