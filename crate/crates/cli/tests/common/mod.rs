//! Fixtures shared by the integration tests: seeded random table models,
//! random datasets and a runner for the built binary.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

pub const EOS: &str = "</s>";

pub fn words(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}")).collect()
}

/// Random distribution over `support`, some entries zero, summing to one.
fn random_dist(rng: &mut ChaCha8Rng, support: &[String]) -> Map<String, Value> {
    let mut weights: Vec<f64> = support
        .iter()
        .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.01..1.0) })
        .collect();
    if weights.iter().all(|w| *w == 0.0) {
        weights[0] = 1.0;
    }
    let total: f64 = weights.iter().sum();
    support
        .iter()
        .zip(&weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(tok, w)| (tok.clone(), json!(w / total)))
        .collect()
}

/// Order-2 table model over `n_words` words plus `<unk>` and EOS. EOS gets
/// probability mass only through rules, so generation ends at random.
pub fn random_table_spec(seed: u64, n_words: usize) -> Value {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ws = words(n_words);
    let mut vocab = ws.clone();
    vocab.push("<unk>".into());
    vocab.push(EOS.into());
    let mut targets = ws.clone();
    targets.push(EOS.into());

    let mut rules = Vec::new();
    for w in ws.iter().chain(std::iter::once(&"<unk>".to_string())) {
        rules.push(json!({ "suffix": [w], "dist": random_dist(&mut rng, &targets) }));
    }
    for _ in 0..n_words * 2 {
        let a = &ws[rng.gen_range(0..n_words)];
        let b = &ws[rng.gen_range(0..n_words)];
        if rules.iter().any(|r| r["suffix"] == json!([a, b])) {
            continue;
        }
        rules.push(json!({ "suffix": [a, b], "dist": random_dist(&mut rng, &targets) }));
    }
    json!({
        "id": format!("toy{seed}"),
        "order": 2,
        "vocab": vocab,
        "eos": EOS,
        "rules": rules,
        "default": random_dist(&mut rng, &ws),
        "config": { "n_layer": 2, "d_model": 16, "d_attn": 16, "d_ff": 64, "n_heads": 2, "n_vocab": vocab.len() },
    })
}

/// `n` rows of random documents and references over the same words.
pub fn random_dataset(seed: u64, n: usize, n_words: usize, with_query: bool) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ws = words(n_words);
    let mut sentence = |lo: usize, hi: usize| -> String {
        let len = rng.gen_range(lo..hi);
        (0..len).map(|_| ws[rng.gen_range(0..ws.len())].as_str()).collect::<Vec<_>>().join(" ")
    };
    let mut out = String::new();
    for i in 0..n {
        let query = if with_query { sentence(2, 5) } else { String::new() };
        let row = json!({
            "id": format!("ex{i:03}"),
            "query": query,
            "document": sentence(5, 15),
            "reference": sentence(4, 10),
        });
        out.push_str(&row.to_string());
        out.push('\n');
    }
    out
}

pub fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

pub fn run_cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxdecode"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

pub fn read_jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Drops the wall-clock fields so runs can be compared.
pub fn without_timing(mut rows: Vec<Value>) -> Vec<Value> {
    for row in &mut rows {
        let obj = row.as_object_mut().unwrap();
        obj.remove("wall_s");
        obj.remove("s_per_token");
    }
    rows
}
