//! Seeded synthetic corpora and scene fixtures, plus a builder that wires
//! the simulated backends into a [`Clients`] bundle.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assets::PromptAssets;
use crate::backends::sim::{
    extractor_echo_hook, suggester_rule_hook, SimChat, SimDetector, SimEditor, SimGenerator,
};
use crate::backends::SceneState;
use crate::boxmodel::{assign_occurrences, BoundingBox};
use crate::corpus::PoemRecord;
use crate::embedding::{Embedder, HashedNgramEmbedder};
use crate::pipeline::Clients;
use crate::suggest::SuggestConfig;

const HANZI: &str = "山水月风花雪云雨江河湖海天地日星春秋夏冬松竹梅兰鸟鱼马牛羊龙凤草木石桥舟楼台城关门窗灯烛酒茶琴书剑弓旗鼓钟霜露烟霞";

const NOUNS: &[&str] = &[
    "peak",
    "waterfall",
    "moon",
    "river",
    "pine tree",
    "crane",
    "boat",
    "bridge",
    "pavilion",
    "willow",
    "plum blossom",
    "bamboo",
    "cloud",
    "sunset",
    "fisherman",
    "lantern",
    "horse",
    "tower",
    "wild goose",
    "maple leaf",
    "temple",
    "lotus",
    "snow",
    "mountain path",
    "cottage",
];

/// `n` records whose poems are random 24-character strings. Ids are
/// `syn-000`, `syn-001`, ...
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<PoemRecord> {
    let alphabet: Vec<char> = HANZI.chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let poem: String = (0..24)
                .map(|_| *alphabet.choose(&mut rng).expect("alphabet"))
                .collect();
            PoemRecord {
                id: format!("syn-{i:03}"),
                translation: format!("Synthetic translation {i}: {poem}"),
                poem,
                annotations: vec![format!("annotation {i}")],
                appreciation: String::new(),
                manual_elements: None,
            }
        })
        .collect()
}

/// Replaces the character at `index` with a different one from the same
/// alphabet.
pub fn perturb_one_char(text: &str, index: usize, seed: u64) -> String {
    let alphabet: Vec<char> = HANZI.chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chars: Vec<char> = text.chars().collect();
    let i = index % chars.len();
    let old = chars[i];
    chars[i] = loop {
        let c = *alphabet.choose(&mut rng).expect("alphabet");
        if c != old {
            break c;
        }
    };
    chars.into_iter().collect()
}

/// A record with manual key elements and the initial scene the simulated
/// generator returns for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneCase {
    pub record: PoemRecord,
    pub initial: SceneState,
    /// Key elements deliberately left out of the initial scene.
    pub missing: Vec<String>,
}

/// `n` cases with 3 to 6 key elements each, of which 1 to 4 (never more
/// than all) are absent from the initial scene.
pub fn convergence_suite(n: usize, seed: u64) -> Vec<SceneCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let k = rng.gen_range(3..=6usize);
            let elements: Vec<String> = NOUNS
                .choose_multiple(&mut rng, k)
                .map(|s| s.to_string())
                .collect();
            let miss = rng.gen_range(1..=k.min(4));
            let mut order: Vec<usize> = (0..k).collect();
            order.shuffle(&mut rng);
            let missing_idx = &order[..miss];
            let present: Vec<(String, BoundingBox)> = (0..k)
                .filter(|j| !missing_idx.contains(j))
                .map(|j| {
                    let w = rng.gen_range(10..=30) as f64 / 100.0;
                    let h = rng.gen_range(10..=30) as f64 / 100.0;
                    let x = rng.gen_range(0..=((1.0 - w) * 1000.0) as u32) as f64 / 1000.0;
                    let y = rng.gen_range(0..=((1.0 - h) * 1000.0) as u32) as f64 / 1000.0;
                    (
                        elements[j].clone(),
                        BoundingBox::new(x, y, w, h).expect("inside unit square"),
                    )
                })
                .collect();
            let missing = missing_idx.iter().map(|&j| elements[j].clone()).collect();
            let translation = format!("A scene with {}.", elements.join(", "));
            SceneCase {
                record: PoemRecord {
                    id: format!("case-{i:02}"),
                    poem: format!("Synthetic poem {i}: {}", elements.join(" and ")),
                    translation,
                    annotations: vec![],
                    appreciation: format!("Appreciation of case {i}."),
                    manual_elements: Some(elements),
                },
                initial: SceneState::new(assign_occurrences(present)),
                missing,
            }
        })
        .collect()
}

/// Builder for a fully simulated [`Clients`] bundle.
#[derive(Debug, Clone, Default)]
pub struct SimStack {
    pub records: Vec<PoemRecord>,
    pub scenes: Vec<(PoemRecord, SceneState)>,
    pub seed: u64,
    pub default_miss: f64,
    pub label_miss: Vec<(String, f64)>,
    /// Extractor answer for records without manual elements.
    pub fallback_elements: Vec<String>,
    pub suggest: SuggestConfig,
}

impl SimStack {
    pub fn from_cases(cases: &[SceneCase]) -> Self {
        Self {
            records: cases.iter().map(|c| c.record.clone()).collect(),
            scenes: cases
                .iter()
                .map(|c| (c.record.clone(), c.initial.clone()))
                .collect(),
            ..Self::default()
        }
    }

    pub fn with_miss(mut self, label: &str, p: f64) -> Self {
        self.label_miss.push((label.to_string(), p));
        self
    }

    pub fn clients(&self, assets: &PromptAssets) -> Clients {
        self.clients_with_embedder(assets, Arc::new(HashedNgramEmbedder))
    }

    pub fn clients_with_embedder(
        &self,
        assets: &PromptAssets,
        embedder: Arc<dyn Embedder>,
    ) -> Clients {
        let chat = SimChat::new()
            .hook(extractor_echo_hook(
                assets,
                &self.records,
                self.fallback_elements.clone(),
            ))
            .hook(suggester_rule_hook(assets, self.suggest));
        let mut generator = SimGenerator::new();
        for (rec, scene) in &self.scenes {
            generator.insert_record(rec, scene.clone());
        }
        let mut detector = SimDetector::new(self.seed).with_default_miss(self.default_miss);
        for (label, p) in &self.label_miss {
            detector = detector.with_miss(label, *p);
        }
        Clients {
            chat: Arc::new(chat),
            generator: Arc::new(generator),
            detector: Arc::new(detector),
            editor: Arc::new(SimEditor),
            embedder,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elements::KeyElementSet;
    use crate::pipeline::element_match;

    #[test]
    fn corpus_is_seeded_and_unique() {
        let a = synthetic_corpus(50, 1);
        assert_eq!(a, synthetic_corpus(50, 1));
        let mut poems: Vec<_> = a.iter().map(|r| r.poem.clone()).collect();
        poems.sort();
        poems.dedup();
        assert_eq!(poems.len(), 50);
    }

    #[test]
    fn perturbation_changes_exactly_one_char() {
        let p = "山水月风花";
        let q = perturb_one_char(p, 2, 9);
        let diff = p.chars().zip(q.chars()).filter(|(a, b)| a != b).count();
        assert_eq!(diff, 1);
    }

    #[test]
    fn suite_shape() {
        for case in convergence_suite(40, 3) {
            let manual = case.record.manual_elements.clone().unwrap();
            assert!((3..=6).contains(&manual.len()));
            assert!((1..=4).contains(&case.missing.len()));
            let key = KeyElementSet::from_labels(&manual, "");
            let (_, missing) = element_match(&case.initial.objects, &key);
            assert_eq!(missing.len(), case.missing.len());
        }
    }
}
