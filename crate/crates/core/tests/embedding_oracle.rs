//! The hashed n-gram embedding and retrieval checked against a hand-rolled
//! reimplementation that shares no code with the library.

use std::collections::BTreeMap;

use inkloop_core::corpus::{retrieve, Corpus, PoemRecord};
use inkloop_core::embedding::{Embedder, HashedNgramEmbedder};
use inkloop_core::fixtures::{perturb_one_char, synthetic_corpus};

/// FNV-1a 64, spelled out byte by byte.
fn oracle_hash(s: &str) -> u64 {
    let mut h: u64 = 14695981039346656037;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(1099511628211);
    }
    h
}

/// Counts every 1-, 2- and 3-gram of `s` by index arithmetic.
fn oracle_counts(s: &str) -> BTreeMap<usize, f64> {
    let chars: Vec<char> = s.chars().collect();
    let mut counts = BTreeMap::new();
    for n in 1..=3 {
        if chars.len() < n {
            continue;
        }
        for start in 0..=chars.len() - n {
            let gram: String = chars[start..start + n].iter().collect();
            *counts
                .entry((oracle_hash(&gram) % 256) as usize)
                .or_insert(0.0) += 1.0;
        }
    }
    counts
}

fn oracle_cosine(a: &str, b: &str) -> f64 {
    let (ca, cb) = (oracle_counts(a), oracle_counts(b));
    let dot: f64 = ca
        .iter()
        .map(|(k, v)| v * cb.get(k).copied().unwrap_or(0.0))
        .sum();
    let na: f64 = ca.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = cb.values().map(|v| v * v).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn bucket_counts_match_oracle() {
    for text in [
        "moon river",
        "moon",
        "床前明月光",
        "a",
        "ab",
        "白日依山尽，黄河入海流。",
    ] {
        let got = HashedNgramEmbedder::bucket_counts(text);
        let want = oracle_counts(text);
        for (i, &c) in got.iter().enumerate() {
            assert_eq!(
                f64::from(c),
                want.get(&i).copied().unwrap_or(0.0),
                "{text:?} bucket {i}"
            );
        }
    }
}

#[test]
fn moon_river_against_moon() {
    let want = oracle_cosine("moon river", "moon");
    let got = HashedNgramEmbedder
        .similarity("moon river", "moon")
        .unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert!(want > 0.0 && want < 1.0);
}

#[test]
fn disjoint_alphabets_are_orthogonal() {
    // Only meaningful when the oracle sees no bucket collision.
    let (a, b) = ("abc", "xyz");
    let (ca, cb) = (oracle_counts(a), oracle_counts(b));
    assert!(
        ca.keys().all(|k| !cb.contains_key(k)),
        "pick strings without collisions"
    );
    let got = HashedNgramEmbedder.similarity(a, b).unwrap();
    assert!(got.abs() < 1e-9);
}

#[test]
fn vectors_are_unit_norm() {
    for r in synthetic_corpus(50, 11) {
        let v = HashedNgramEmbedder.embed(&r.poem).unwrap();
        let n: f64 = v.components().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }
}

fn oracle_argmax(query: &str, records: &[PoemRecord]) -> usize {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (i, r) in records.iter().enumerate() {
        let s = oracle_cosine(query, &r.poem);
        if s > best_sim {
            best = i;
            best_sim = s;
        }
    }
    best
}

#[test]
fn perturbed_queries_agree_with_exhaustive_oracle() {
    let records = synthetic_corpus(200, 3);
    let corpus = Corpus::new(records.clone()).unwrap();
    for (i, r) in records.iter().enumerate() {
        let q = perturb_one_char(&r.poem, i * 7, i as u64);
        let hit = retrieve(&q, &corpus, &HashedNgramEmbedder, None).unwrap();
        assert_eq!(hit.index, oracle_argmax(&q, &records), "query {i}");
    }
}

#[test]
fn duplicate_poems_resolve_to_lowest_index() {
    let rec = |id: &str, poem: &str| PoemRecord {
        id: id.into(),
        poem: poem.into(),
        translation: "t".into(),
        annotations: vec![],
        appreciation: String::new(),
        manual_elements: None,
    };
    let corpus = Corpus::new(vec![rec("x", "江雪"), rec("a", "孤舟"), rec("b", "孤舟")]).unwrap();
    let hit = retrieve("孤舟", &corpus, &HashedNgramEmbedder, None).unwrap();
    assert_eq!(hit.record.id, "a");
}

#[test]
fn cached_and_uncached_retrieval_agree() {
    let records = synthetic_corpus(40, 8);
    let plain = Corpus::new(records.clone()).unwrap();
    let mut cached = Corpus::new(records.clone()).unwrap();
    cached.build_cache(&HashedNgramEmbedder).unwrap();
    for r in &records {
        let q = perturb_one_char(&r.poem, 3, 1);
        let a = retrieve(&q, &plain, &HashedNgramEmbedder, None).unwrap();
        let b = retrieve(&q, &cached, &HashedNgramEmbedder, None).unwrap();
        assert_eq!((a.index, a.similarity), (b.index, b.similarity));
    }
}
