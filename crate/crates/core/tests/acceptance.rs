//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use carto_qa::cartography::{self, CartographyMap};
use carto_qa::ingest::{self, PredictionSet};
use carto_qa::metrics::{self, EvalReport, ExampleScore};
use carto_qa::report::{self, AdversarialPairing};
use common::{oracle_point, synthetic_points, synthetic_records, synthetic_squad, Gen};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn cartography_oracle_equivalence() -> Outcome {
    const TOL: f64 = 1e-12;
    const BUDGET: Duration = Duration::from_secs(5);
    let records = synthetic_records(1_000, 5, 0xCA27);
    let log: String = records.iter().map(|r| r.to_json_line() + "\n").collect();

    let start = Instant::now();
    let table = ingest::parse_dynamics_log(log.as_bytes()).map_err(|e| e.to_string())?;
    let map = cartography::compute_map(&table).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    ensure!(
        map.len() == 1_000,
        "expected 1000 points, got {}",
        map.len()
    );
    let mut worst = 0.0f64;
    for p in map.points() {
        let (mean, std, frac, n) = oracle_point(&p.example_id, &records);
        ensure!(
            p.num_epochs == n,
            "{}: num_epochs {} vs {}",
            p.example_id,
            p.num_epochs,
            n
        );
        for (got, want, what) in [
            (p.confidence, mean, "confidence"),
            (p.variability, std, "variability"),
            (p.correctness, frac, "correctness"),
        ] {
            let diff = (got - want).abs();
            worst = worst.max(diff);
            ensure!(
                diff <= TOL,
                "{}: {what} {got} vs oracle {want}",
                p.example_id
            );
        }
    }
    ensure!(elapsed < BUDGET, "took {elapsed:?}");
    Ok(format!("max |diff| = {worst:.1e}, {elapsed:?}"))
}

#[derive(serde::Deserialize)]
struct Expected {
    per_example: Vec<ExpectedScore>,
    exact_match: f64,
    f1: f64,
    missing: Vec<String>,
}

#[derive(serde::Deserialize)]
struct ExpectedScore {
    id: String,
    em: u8,
    f1: f64,
}

fn metric_conformance() -> Outcome {
    let dataset = ingest::parse_dataset(
        &std::fs::read(format!("{FIXTURES}/conformance_dataset.json")).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let preds = ingest::parse_predictions(
        &std::fs::read(format!("{FIXTURES}/conformance_preds.json")).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let expected: Expected = serde_json::from_slice(
        &std::fs::read(format!("{FIXTURES}/conformance_expected.json")).unwrap(),
    )
    .unwrap();

    ensure!(
        dataset.len() == 20,
        "conformance set has {} examples",
        dataset.len()
    );
    let report = metrics::evaluate(&preds, &dataset).map_err(|e| e.to_string())?;
    ensure!(
        report.len() == expected.per_example.len(),
        "score count mismatch"
    );
    let report_ids: Vec<&str> = report
        .per_example
        .iter()
        .map(|s| s.example_id.as_str())
        .collect();
    ensure!(
        report_ids == dataset.ids().collect::<Vec<_>>(),
        "scores not in dataset order"
    );
    for want in &expected.per_example {
        let got = report
            .score(&want.id)
            .ok_or_else(|| format!("no score for {}", want.id))?;
        ensure!(
            got.em == want.em && got.f1 == want.f1,
            "{}: ({}, {}) vs oracle ({}, {})",
            want.id,
            got.em,
            got.f1,
            want.em,
            want.f1
        );
        ensure!(got.f1 >= got.em as f64, "{}: f1 < em", want.id);
    }
    ensure!(
        report.aggregate_em == expected.exact_match,
        "EM {} vs {}",
        report.aggregate_em,
        expected.exact_match
    );
    ensure!(
        report.aggregate_f1 == expected.f1,
        "F1 {} vs {}",
        report.aggregate_f1,
        expected.f1
    );
    ensure!(
        report.aggregate_f1 >= report.aggregate_em,
        "aggregate F1 < EM"
    );
    ensure!(
        report.missing_predictions == expected.missing,
        "missing list differs"
    );

    let s = |id: &str| report.score(id).unwrap();
    ensure!(
        s("56bf10f43aeaaa14008c94fd").em == 1,
        "\"2016\" must be exact"
    );
    ensure!(
        s("56bf10f43aeaaa14008c94fd-high-conf").em == 0,
        "\"1990\" must not match"
    );
    ensure!(
        s("c03").f1 == 0.5,
        "\"February 7, 2016\" vs \"2016\" must score 0.5"
    );
    Ok(format!(
        "EM {:.2} / F1 {:.2}",
        report.aggregate_em, report.aggregate_f1
    ))
}

fn partition_determinism_and_sizing() -> Outcome {
    let fraction = 1.0 / 3.0;
    let points = synthetic_points(10_000, 0x5EED);
    let map = CartographyMap::from_points(points.clone());
    let part = cartography::partition(&map, fraction).map_err(|e| e.to_string())?;

    for (name, set) in [
        ("easy", &part.easy),
        ("ambiguous", &part.ambiguous),
        ("hard", &part.hard),
    ] {
        ensure!(set.len() == 3_333, "{name} has {} ids", set.len());
    }
    ensure!(part.easy.is_disjoint(&part.hard), "easy and hard overlap");

    // Sort-based oracle: rank everything, take the ends.
    let mut asc = points.clone();
    asc.sort_by(|a, b| {
        a.confidence
            .partial_cmp(&b.confidence)
            .unwrap()
            .then_with(|| b.example_id.cmp(&a.example_id))
    });
    let hard: BTreeSet<String> = asc[..3_333].iter().map(|p| p.example_id.clone()).collect();
    let easy: BTreeSet<String> = asc[asc.len() - 3_333..]
        .iter()
        .map(|p| p.example_id.clone())
        .collect();
    let mut by_var = points.clone();
    by_var.sort_by(|a, b| {
        b.variability
            .partial_cmp(&a.variability)
            .unwrap()
            .then_with(|| a.example_id.cmp(&b.example_id))
    });
    let ambiguous: BTreeSet<String> = by_var[..3_333]
        .iter()
        .map(|p| p.example_id.clone())
        .collect();
    ensure!(part.easy == easy, "easy differs from oracle");
    ensure!(part.hard == hard, "hard differs from oracle");
    ensure!(part.ambiguous == ambiguous, "ambiguous differs from oracle");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for run in 0..2 {
        let p =
            cartography::partition(&CartographyMap::from_points(points.clone()), fraction).unwrap();
        let path = dir.path().join(format!("part{run}.json"));
        carto_qa::cli::write_atomic(&path, &p.to_json()).map_err(|e| e.to_string())?;
        files.push(std::fs::read(&path).unwrap());
    }
    ensure!(files[0] == files[1], "partition files differ between runs");

    let mut shuffled = points;
    Gen::new(99).shuffle(&mut shuffled);
    let again = cartography::partition(&CartographyMap::from_points(shuffled), fraction).unwrap();
    ensure!(
        again.to_json() == files[0],
        "input permutation changed the partition"
    );
    Ok("3333/3333/3333, disjoint, byte-identical".into())
}

fn scores(
    prefix: &str,
    n: usize,
    n_exact: usize,
    n_half: usize,
    suffix: &str,
) -> Vec<ExampleScore> {
    (0..n)
        .map(|i| {
            let (em, f1) = if i < n_exact {
                (1, 1.0)
            } else if i < n_exact + n_half {
                (0, 0.5)
            } else {
                (0, 0.0)
            };
            ExampleScore {
                example_id: format!("{prefix}{i:05}{suffix}"),
                em,
                f1,
            }
        })
        .collect()
}

fn adversarial_delta_arithmetic() -> Outcome {
    const TOL: f64 = 1e-9;
    const FIGURE_ID: &str = "56bf10f43aeaaa14008c94fd";
    let adv_figure_id = format!("{FIGURE_ID}-high-conf");

    // 10,000 examples each: 7691 exact + 1674 half-credit → 76.91 / 85.28;
    // 5374 exact + 1392 half-credit → 53.74 / 60.70.
    let mut orig_scores = scores("o", 9_999, 7_690, 1_674, "");
    orig_scores.insert(
        0,
        ExampleScore {
            example_id: FIGURE_ID.into(),
            em: 1,
            f1: 1.0,
        },
    );
    let mut adv_scores = scores("o", 9_999, 5_374, 1_392, "-turk0");
    adv_scores.push(ExampleScore {
        example_id: adv_figure_id.clone(),
        em: 0,
        f1: 0.0,
    });
    let orig = EvalReport::from_scores(orig_scores, vec![]);
    let adv = EvalReport::from_scores(adv_scores, vec![]);
    ensure!(
        (orig.aggregate_em - 76.91).abs() < TOL && (orig.aggregate_f1 - 85.28).abs() < TOL,
        "original aggregates {} / {}",
        orig.aggregate_em,
        orig.aggregate_f1
    );
    ensure!(
        (adv.aggregate_em - 53.74).abs() < TOL && (adv.aggregate_f1 - 60.70).abs() < TOL,
        "adversarial aggregates {} / {}",
        adv.aggregate_em,
        adv.aggregate_f1
    );

    // Pair the figure example plus variants whose outcome does not change.
    let mut pairs = vec![(FIGURE_ID.to_string(), adv_figure_id.clone())];
    pairs.extend((0..5_000).map(|i| (format!("o{i:05}"), format!("o{i:05}-turk0"))));
    let pairing = AdversarialPairing {
        pairs,
        unmatched_adversarial: vec!["zzzz-turk1".into()],
    };
    let orig_preds: PredictionSet = [(FIGURE_ID, "2016")].into_iter().collect();
    let adv_preds: PredictionSet = [(adv_figure_id.as_str(), "1990")].into_iter().collect();

    let cmp = report::adversarial_compare(&orig, &adv, &pairing, &orig_preds, &adv_preds);
    ensure!(
        (cmp.delta_em - -23.17).abs() < TOL,
        "delta EM {}",
        cmp.delta_em
    );
    ensure!(
        (cmp.delta_f1 - -24.58).abs() < TOL,
        "delta F1 {}",
        cmp.delta_f1
    );
    ensure!(
        cmp.delta_em == adv.aggregate_em - orig.aggregate_em,
        "delta EM is not plain subtraction"
    );
    ensure!(
        cmp.flips.len() == 1,
        "expected one flip, got {}",
        cmp.flips.len()
    );
    let flip = &cmp.flips[0];
    ensure!(
        flip.original_id == FIGURE_ID
            && flip.adversarial_id == adv_figure_id
            && flip.original_answer == "2016"
            && flip.adversarial_answer == "1990",
        "unexpected flip {flip:?}"
    );
    ensure!(
        cmp.unmatched == vec!["zzzz-turk1".to_string()],
        "unmatched ids not surfaced"
    );
    Ok(format!(
        "ΔEM {:.2}, ΔF1 {:.2}, 1 flip",
        cmp.delta_em, cmp.delta_f1
    ))
}

fn subset_round_trip() -> Outcome {
    let bytes = synthetic_squad(500, 0xDA7A);
    let dataset = ingest::parse_dataset(&bytes).map_err(|e| e.to_string())?;
    ensure!(
        dataset.len() == 500,
        "synthetic dataset has {} examples",
        dataset.len()
    );
    let ids: Vec<&str> = dataset.ids().collect();
    let mut g = Gen::new(0x0DD);
    for trial in 0..100 {
        let density = g.unit();
        let mut keep: Vec<&str> = ids.iter().copied().filter(|_| g.unit() < density).collect();
        let expected: Vec<_> = keep
            .iter()
            .map(|id| dataset.get(id).unwrap().clone())
            .collect();
        g.shuffle(&mut keep);
        let out = ingest::write_subset(&dataset, &keep).map_err(|e| e.to_string())?;
        let back = ingest::parse_dataset(&out).map_err(|e| format!("trial {trial}: {e}"))?;
        ensure!(
            back.examples() == expected.as_slice(),
            "trial {trial}: round trip differs ({} kept)",
            keep.len()
        );
    }
    Ok("100 keep-sets over 500 examples".into())
}

fn datamap_rendering() -> Outcome {
    const BUDGET: usize = 20 * 1024 * 1024;
    let map = CartographyMap::from_points(synthetic_points(10_000, 0x3A9));
    let part = cartography::partition(&map, 1.0 / 3.0).unwrap();
    let svg = report::render_datamap(&map, &part).map_err(|e| e.to_string())?;
    ensure!(svg.len() <= BUDGET, "document is {} bytes", svg.len());

    let doc = roxmltree::Document::parse(&svg).map_err(|e| format!("invalid XML: {e}"))?;
    let root = doc.root_element();
    ensure!(
        root.has_tag_name(("http://www.w3.org/2000/svg", "svg")),
        "root is not an SVG element"
    );
    ensure!(root.attribute("version") == Some("1.1"), "not SVG 1.1");
    let markers = doc
        .descendants()
        .filter(|n| n.has_tag_name("circle") && n.attribute("class") == Some("marker"))
        .count();
    ensure!(markers == 10_000, "{markers} markers");

    let labels: Vec<_> = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("axis-label"))
        .collect();
    ensure!(labels.len() == 2, "{} axis labels", labels.len());
    let x_label = labels.iter().find(|n| n.attribute("transform").is_none());
    let y_label = labels.iter().find(|n| {
        n.attribute("transform")
            .is_some_and(|t| t.starts_with("rotate(-90"))
    });
    ensure!(
        x_label.and_then(|n| n.text()) == Some("variability"),
        "x axis must be variability"
    );
    ensure!(
        y_label.and_then(|n| n.text()) == Some("confidence"),
        "y axis must be confidence"
    );

    let fills: BTreeSet<&str> = ["region-easy", "region-ambiguous", "region-hard"]
        .iter()
        .filter_map(|class| {
            doc.descendants()
                .find(|n| n.attribute("class") == Some(*class))
        })
        .filter_map(|n| n.attribute("fill"))
        .collect();
    ensure!(fills.len() == 3, "regions must use three distinct colors");
    Ok(format!("{markers} markers, {} bytes", svg.len()))
}

#[derive(serde::Deserialize)]
struct SamplingGolden {
    sample_n100_f033_s13: Vec<String>,
    sample_n10_f05_s0: Vec<String>,
}

fn seeded_sampling() -> Outcome {
    let golden: SamplingGolden =
        serde_json::from_slice(&std::fs::read(format!("{FIXTURES}/sampling_golden.json")).unwrap())
            .unwrap();
    let ids: Vec<String> = (0..100).map(|i| format!("q{i:03}")).collect();
    let got = cartography::random_sample(&ids, 0.33, 13).map_err(|e| e.to_string())?;
    ensure!(got.len() == 33, "sample has {} ids", got.len());
    ensure!(
        got == golden.sample_n100_f033_s13,
        "sample differs from golden set: {got:?}"
    );
    let small: Vec<String> = (0..10).map(|i| format!("q{i:03}")).collect();
    ensure!(
        cartography::random_sample(&small, 0.5, 0).unwrap() == golden.sample_n10_f05_s0,
        "second golden set differs"
    );
    Ok("matches golden id-sets".into())
}

fn main() {
    let criteria: [Criterion; 7] = [
        (
            "cartography oracle equivalence (1000 ids x 5 epochs, 1e-12, <5s)",
            cartography_oracle_equivalence,
        ),
        (
            "metric conformance (20-example oracle set)",
            metric_conformance,
        ),
        (
            "partition determinism and sizing (10,000 points, 1/3)",
            partition_determinism_and_sizing,
        ),
        (
            "adversarial delta arithmetic (-23.17 / -24.58, 1e-9)",
            adversarial_delta_arithmetic,
        ),
        (
            "write_subset/parse_dataset round trip (100 x 500)",
            subset_round_trip,
        ),
        ("data-map rendering (10,000 markers)", datamap_rendering),
        (
            "seeded sampling golden set (N=100, 0.33, seed 13)",
            seeded_sampling,
        ),
    ];

    let mut failed = 0;
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS  {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL  {name}: panicked");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
