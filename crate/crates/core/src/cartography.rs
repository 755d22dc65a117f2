//! Training-dynamics statistics, the data map built from them, and the
//! easy / ambiguous / hard partition plus its random-subset baseline.
//!
//! For an example observed over `E` epochs with gold-answer probabilities
//! `p_1..p_E`:
//!
//! - confidence is the mean of `p_e`,
//! - variability is the population standard deviation of `p_e`,
//! - correctness is the fraction of epochs whose decoded answer was correct.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{DynamicsRecord, DynamicsTable};

#[derive(Debug, thiserror::Error)]
pub enum CartographyError {
    #[error("no dynamics records for example")]
    EmptyGroup,
    #[error("records for {expected} and {found} mixed in one group")]
    MixedGroup { expected: String, found: String },
    #[error("dynamics table is empty")]
    EmptyTable,
    #[error("fraction {0} is outside the allowed range {1}")]
    BadFraction(f64, &'static str),
    #[error("data map is empty")]
    EmptyMap,
    #[error("map csv: {0}")]
    MapCsv(String),
}

pub type Result<T, E = CartographyError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartographyPoint {
    pub example_id: String,
    pub confidence: f64,
    pub variability: f64,
    pub correctness: f64,
    pub num_epochs: usize,
}

pub fn compute_point(records: &[DynamicsRecord]) -> Result<CartographyPoint> {
    let first = records.first().ok_or(CartographyError::EmptyGroup)?;
    if let Some(r) = records.iter().find(|r| r.example_id != first.example_id) {
        return Err(CartographyError::MixedGroup {
            expected: first.example_id.clone(),
            found: r.example_id.clone(),
        });
    }

    let n = records.len() as f64;
    let (confidence, variance) = if records.iter().all(|r| r.gold_prob == first.gold_prob) {
        (first.gold_prob, 0.0)
    } else {
        let mean = records.iter().map(|r| r.gold_prob).sum::<f64>() / n;
        let var = records
            .iter()
            .map(|r| {
                let d = r.gold_prob - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        (mean, var)
    };
    let correct = records.iter().filter(|r| r.correct).count();

    Ok(CartographyPoint {
        example_id: first.example_id.clone(),
        // Rounding can push a mean of values in [0, 1] a hair outside.
        confidence: confidence.clamp(0.0, 1.0),
        variability: variance.sqrt().min(0.5),
        correctness: correct as f64 / n,
        num_epochs: records.len(),
    })
}

/// One point per example, sorted by ascending id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CartographyMap {
    points: Vec<CartographyPoint>,
}

impl CartographyMap {
    /// Builds a map from arbitrary points; they are re-sorted by id.
    /// Duplicate ids keep the first occurrence.
    pub fn from_points(mut points: Vec<CartographyPoint>) -> Self {
        points.sort_by(|a, b| a.example_id.cmp(&b.example_id));
        points.dedup_by(|b, a| a.example_id == b.example_id);
        Self { points }
    }

    pub fn points(&self) -> &[CartographyPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CartographyPoint> {
        self.points
            .binary_search_by(|p| p.example_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.points[i])
    }

    /// CSV with header `example_id,confidence,variability,correctness,num_epochs`,
    /// six decimals, rows in id order.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "example_id",
            "confidence",
            "variability",
            "correctness",
            "num_epochs",
        ])
        .expect("in-memory csv write");
        for p in &self.points {
            w.write_record([
                p.example_id.clone(),
                format!("{:.6}", p.confidence),
                format!("{:.6}", p.variability),
                format!("{:.6}", p.correctness),
                p.num_epochs.to_string(),
            ])
            .expect("in-memory csv write");
        }
        w.into_inner().expect("in-memory csv flush")
    }

    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r
            .headers()
            .map_err(|e| CartographyError::MapCsv(e.to_string()))?;
        let expected = [
            "example_id",
            "confidence",
            "variability",
            "correctness",
            "num_epochs",
        ];
        if headers.iter().ne(expected) {
            return Err(CartographyError::MapCsv(format!(
                "expected header {}",
                expected.join(",")
            )));
        }
        let mut points = Vec::new();
        let mut seen = BTreeSet::new();
        for row in r.deserialize::<CartographyPoint>() {
            let p = row.map_err(|e| CartographyError::MapCsv(e.to_string()))?;
            let in_range = (0.0..=1.0).contains(&p.confidence)
                && (0.0..=0.5).contains(&p.variability)
                && (0.0..=1.0).contains(&p.correctness)
                && p.num_epochs > 0;
            if !in_range {
                return Err(CartographyError::MapCsv(format!(
                    "example {}: values out of range",
                    p.example_id
                )));
            }
            if !seen.insert(p.example_id.clone()) {
                return Err(CartographyError::MapCsv(format!(
                    "example {} listed twice",
                    p.example_id
                )));
            }
            points.push(p);
        }
        Ok(Self::from_points(points))
    }
}

/// Computes one point per example id. Groups are evaluated in parallel; the
/// result is ordered by id and so does not depend on scheduling.
pub fn compute_map(table: &DynamicsTable) -> Result<CartographyMap> {
    if table.is_empty() {
        return Err(CartographyError::EmptyTable);
    }
    let groups: Vec<&[DynamicsRecord]> = table.groups().map(|(_, g)| g).collect();
    let points = groups
        .par_iter()
        .map(|g| compute_point(g))
        .collect::<Result<Vec<_>>>()?;
    Ok(CartographyMap { points })
}

/// Subset size for `fraction` of `n` items: rounded half away from zero,
/// at least 1 when `n > 0`, at most `n`.
pub fn subset_size(fraction: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    ((fraction * n as f64).round() as usize).clamp(1, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Lowest confidence admitted to `easy`.
    pub easy_min_confidence: Option<f64>,
    /// Highest confidence admitted to `hard`.
    pub hard_max_confidence: Option<f64>,
    /// Lowest variability admitted to `ambiguous`.
    pub ambiguous_min_variability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapCounts {
    pub easy_ambiguous: usize,
    pub hard_ambiguous: usize,
    pub easy_hard: usize,
}

/// Three id-sets selected from a data map. `ambiguous` is chosen on the
/// variability axis alone and may overlap the other two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub easy: BTreeSet<String>,
    pub ambiguous: BTreeSet<String>,
    pub hard: BTreeSet<String>,
    pub fraction: f64,
    pub source_size: usize,
    pub thresholds: Thresholds,
    pub overlap_counts: OverlapCounts,
}

impl Partition {
    pub fn subset(&self, region: Region) -> &BTreeSet<String> {
        match region {
            Region::Easy => &self.easy,
            Region::Ambiguous => &self.ambiguous,
            Region::Hard => &self.hard,
        }
    }

    pub fn region_of(&self, id: &str) -> Option<Region> {
        if self.easy.contains(id) {
            Some(Region::Easy)
        } else if self.hard.contains(id) {
            Some(Region::Hard)
        } else if self.ambiguous.contains(id) {
            Some(Region::Ambiguous)
        } else {
            None
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("partition serialization cannot fail");
        out.push(b'\n');
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Easy,
    Ambiguous,
    Hard,
}

fn by_confidence_desc(a: &CartographyPoint, b: &CartographyPoint) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.example_id.cmp(&b.example_id))
}

fn by_variability_desc(a: &CartographyPoint, b: &CartographyPoint) -> Ordering {
    b.variability
        .total_cmp(&a.variability)
        .then_with(|| a.example_id.cmp(&b.example_id))
}

/// Selects `k = subset_size(fraction, n)` ids per region.
///
/// All points are ranked once by (confidence descending, id ascending):
/// `easy` is the head of that ranking and `hard` its tail, so the two never
/// share an id. When `2k > n` the tail is shortened to the `n - k` ids not
/// already in `easy`. `ambiguous` is the head of the (variability
/// descending, id ascending) ranking.
pub fn partition(map: &CartographyMap, fraction: f64) -> Result<Partition> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(CartographyError::BadFraction(fraction, "(0, 0.5]"));
    }
    if map.is_empty() {
        return Err(CartographyError::EmptyMap);
    }
    let n = map.len();
    let k = subset_size(fraction, n);
    let k_hard = k.min(n - k);

    let mut by_conf: Vec<&CartographyPoint> = map.points.iter().collect();
    by_conf.sort_by(|a, b| by_confidence_desc(a, b));
    let easy_pts = &by_conf[..k];
    let hard_pts = &by_conf[n - k_hard..];

    let mut by_var: Vec<&CartographyPoint> = map.points.iter().collect();
    by_var.sort_by(|a, b| by_variability_desc(a, b));
    let amb_pts = &by_var[..k];

    let ids = |pts: &[&CartographyPoint]| -> BTreeSet<String> {
        pts.iter().map(|p| p.example_id.clone()).collect()
    };
    let easy = ids(easy_pts);
    let hard = ids(hard_pts);
    let ambiguous = ids(amb_pts);

    let thresholds = Thresholds {
        easy_min_confidence: easy_pts.last().map(|p| p.confidence),
        hard_max_confidence: hard_pts.first().map(|p| p.confidence),
        ambiguous_min_variability: amb_pts.last().map(|p| p.variability),
    };
    let overlap_counts = OverlapCounts {
        easy_ambiguous: easy.intersection(&ambiguous).count(),
        hard_ambiguous: hard.intersection(&ambiguous).count(),
        easy_hard: easy.intersection(&hard).count(),
    };

    Ok(Partition {
        easy,
        ambiguous,
        hard,
        fraction,
        source_size: n,
        thresholds,
        overlap_counts,
    })
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xorshift64* generator used for subset sampling.
///
/// Seeding: the state is one splitmix64 step applied to the seed
/// (`z = seed + 0x9E3779B97F4A7C15`, `z = (z ^ z>>30) * 0xBF58476D1CE4E5B9`,
/// `z = (z ^ z>>27) * 0x94D049BB133111EB`, `state = z ^ z>>31`, all mod 2^64);
/// a zero state is replaced by `0x9E3779B97F4A7C15`.
///
/// Step: `x ^= x>>12; x ^= x<<25; x ^= x>>27; state = x`, output
/// `x * 0x2545F4914F6CDD1D mod 2^64`.
#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        let s = splitmix64(seed);
        Self {
            state: if s == 0 { GOLDEN_GAMMA } else { s },
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform integer in `0..n` by rejection: outputs below `2^64 mod n`
    /// are discarded, the rest are reduced mod `n`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let threshold = n.wrapping_neg() % n;
        loop {
            let r = self.next_u64();
            if r >= threshold {
                return r % n;
            }
        }
    }
}

/// Draws `subset_size(fraction, ids.len())` ids without replacement.
///
/// A partial Fisher–Yates shuffle runs over the positions `0..n`: for
/// `i in 0..k`, swap position `i` with `i + rng.below(n - i)`. The first `k`
/// positions are the sample, returned in their original input order.
pub fn random_sample<S: AsRef<str>>(ids: &[S], fraction: f64, seed: u64) -> Result<Vec<String>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CartographyError::BadFraction(fraction, "(0, 1]"));
    }
    let n = ids.len();
    let k = subset_size(fraction, n);
    let mut rng = XorShift64Star::new(seed);
    let mut positions: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.below((n - i) as u64) as usize;
        positions.swap(i, j);
    }
    let mut chosen = positions[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen
        .into_iter()
        .map(|i| ids[i].as_ref().to_string())
        .collect())
}
