#![allow(dead_code)]

use carto_qa::ingest::DynamicsRecord;
use carto_qa::CartographyPoint;

/// Small deterministic generator for synthetic fixtures (splitmix64).
pub struct Gen(u64);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn shuffle<T>(&mut self, v: &mut [T]) {
        for i in (1..v.len()).rev() {
            let j = self.below(i + 1);
            v.swap(i, j);
        }
    }
}

/// `n_ids × n_epochs` records with random probabilities, in shuffled order.
pub fn synthetic_records(n_ids: usize, n_epochs: u32, seed: u64) -> Vec<DynamicsRecord> {
    let mut g = Gen::new(seed);
    let mut out = Vec::with_capacity(n_ids * n_epochs as usize);
    for i in 0..n_ids {
        for e in 0..n_epochs {
            out.push(DynamicsRecord {
                example_id: format!("ex{i:05}"),
                epoch: e,
                gold_prob: g.unit(),
                correct: g.next_u64() & 1 == 1,
            });
        }
    }
    g.shuffle(&mut out);
    out
}

/// Brute-force statistics for one example: two-pass mean and population
/// standard deviation, and the fraction of correct epochs, computed from an
/// unordered list of raw observations.
pub fn oracle_point(id: &str, records: &[DynamicsRecord]) -> (f64, f64, f64, usize) {
    let obs: Vec<&DynamicsRecord> = records.iter().filter(|r| r.example_id == id).collect();
    let n = obs.len() as f64;
    let mut sum = 0.0;
    for r in &obs {
        sum += r.gold_prob;
    }
    let mean = sum / n;
    let mut sq = 0.0;
    for r in &obs {
        sq += (r.gold_prob - mean).powi(2);
    }
    let std = (sq / n).sqrt();
    let correct = obs.iter().filter(|r| r.correct).count() as f64 / n;
    (mean, std, correct, obs.len())
}

/// Synthetic data-map points. Confidences are quantized to 3 decimals so
/// that ties exercise the id tie-break.
pub fn synthetic_points(n: usize, seed: u64) -> Vec<CartographyPoint> {
    let mut g = Gen::new(seed);
    (0..n)
        .map(|i| CartographyPoint {
            example_id: format!("p{i:05}"),
            confidence: (g.unit() * 1000.0).floor() / 1000.0,
            variability: (g.unit() * 500.0).floor() / 1000.0,
            correctness: (g.below(6)) as f64 / 5.0,
            num_epochs: 5,
        })
        .collect()
}

const WORDS: &[&str] = &[
    "Super",
    "Bowl",
    "50",
    "was",
    "an",
    "American",
    "football",
    "game",
    "Levi's",
    "Stadium",
    "24–10",
    "“golden",
    "anniversary”",
    "Broncos",
    "Panthers",
    "2016",
    "Santa",
    "Clara",
    "café",
    "naïve",
];

/// A SQuAD v1.1 document with `n` questions spread over several articles
/// and paragraphs. Every answer is a word copied from its context at the
/// correct character offset.
pub fn synthetic_squad(n: usize, seed: u64) -> Vec<u8> {
    let mut g = Gen::new(seed);
    let mut data = Vec::new();
    let mut made = 0;
    let mut article = 0;
    while made < n {
        let mut paragraphs = Vec::new();
        for _ in 0..(1 + g.below(4)) {
            if made >= n {
                break;
            }
            let words: Vec<&str> = (0..(5 + g.below(20)))
                .map(|_| WORDS[g.below(WORDS.len())])
                .collect();
            let context = words.join(" ");
            let mut qas = Vec::new();
            for _ in 0..(1 + g.below(5)) {
                if made >= n {
                    break;
                }
                let mut answers = Vec::new();
                for _ in 0..(1 + g.below(3)) {
                    let w = g.below(words.len());
                    let start: usize = words[..w].iter().map(|s| s.chars().count() + 1).sum();
                    answers.push(serde_json::json!({"text": words[w], "answer_start": start}));
                }
                qas.push(serde_json::json!({
                    "id": format!("{:024x}", (made as u64).wrapping_mul(0x9E37_79B9) ^ seed),
                    "question": format!("question {made}?"),
                    "answers": answers,
                }));
                made += 1;
            }
            paragraphs.push(serde_json::json!({"context": context, "qas": qas}));
        }
        data.push(
            serde_json::json!({"title": format!("Article_{article}"), "paragraphs": paragraphs}),
        );
        article += 1;
    }
    serde_json::to_vec(&serde_json::json!({"version": "1.1", "data": data})).unwrap()
}
