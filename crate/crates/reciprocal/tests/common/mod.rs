//! Shared fixtures for the integration suites: a from-scratch metric
//! reimplementation used as an oracle, random instance generators, and a
//! lazily built trained benchmark shared by the slower checks.
//!
//! The oracle works on plain vectors and maps only — none of the library's
//! index structures — but mirrors the library's accumulation order
//! (ascending user ids, ascending ranks) so agreement can be asserted
//! bit-for-bit rather than within a tolerance.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use reciprocal::backbone::{init_model, train, TrainConfig, TrainData, TrainOutcome};
use reciprocal::dataset::{generate_synthetic, split, DatasetSplit};
use reciprocal::metrics::{MatchSet, MetricReport, RecommendationRun};
use reciprocal::seed::{derive_seed, SeedStream};
use reciprocal::Side;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

/// One randomly generated evaluation problem in plain data structures.
#[derive(Debug, Clone)]
pub struct Instance {
    pub n: u32,
    pub m: u32,
    pub k: usize,
    pub pairs: Vec<(u32, u32)>,
    pub lists_a: BTreeMap<u32, Vec<u32>>,
    pub lists_b: BTreeMap<u32, Vec<u32>>,
}

impl Instance {
    pub fn match_set(&self) -> MatchSet {
        MatchSet::from_pairs(self.pairs.iter().copied())
    }

    pub fn run(&self) -> RecommendationRun {
        let mut run = RecommendationRun::new(self.k).expect("k >= 1");
        for (&user, list) in &self.lists_a {
            run.insert_list(Side::A, user, list.clone()).expect("valid list");
        }
        for (&user, list) in &self.lists_b {
            run.insert_list(Side::B, user, list.clone()).expect("valid list");
        }
        run
    }
}

/// Small instance with up to 10 users per side and lists of length at most
/// 3. Some users get no list at all and some no matches, so the skipped
/// and zero-denominator paths are exercised too.
pub fn random_instance(rng: &mut ChaCha20Rng) -> Instance {
    let n = rng.random_range(1..=10u32);
    let m = rng.random_range(1..=10u32);
    let k = rng.random_range(1..=3usize);
    let mut pairs = Vec::new();
    for a in 0..n {
        for b in 0..m {
            if rng.random::<f64>() < 0.25 {
                pairs.push((a, b));
            }
        }
    }
    let mut lists_a = BTreeMap::new();
    for a in 0..n {
        if rng.random::<f64>() < 0.85 {
            lists_a.insert(a, random_list(rng, m, k));
        }
    }
    let mut lists_b = BTreeMap::new();
    for b in 0..m {
        if rng.random::<f64>() < 0.85 {
            lists_b.insert(b, random_list(rng, n, k));
        }
    }
    Instance {
        n,
        m,
        k,
        pairs,
        lists_a,
        lists_b,
    }
}

fn random_list(rng: &mut ChaCha20Rng, universe: u32, k: usize) -> Vec<u32> {
    let len = rng.random_range(0..=k.min(universe as usize));
    let mut picked: Vec<u32> = Vec::new();
    while picked.len() < len {
        let candidate = rng.random_range(0..universe);
        if !picked.contains(&candidate) {
            picked.push(candidate);
        }
    }
    picked
}

/// Independently computed counterpart of [`MetricReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub recall_a: f64,
    pub precision_a: f64,
    pub ndcg_a: f64,
    pub recall_b: f64,
    pub precision_b: f64,
    pub ndcg_b: f64,
    pub recall_avg: f64,
    pub precision_avg: f64,
    pub ndcg_avg: f64,
    pub crecall: f64,
    pub cprecision: f64,
    pub srecall: f64,
    pub sprecision: f64,
    pub rndcg: f64,
    pub true_positive_pairs: usize,
    pub warnings: Vec<String>,
}

/// Brute-force report over the raw instance data.
pub fn oracle_report(inst: &Instance) -> OracleReport {
    let mut dedup = inst.pairs.clone();
    dedup.sort_unstable();
    dedup.dedup();

    let mut matches_of_a: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    let mut matches_of_b: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(a, b) in &dedup {
        matches_of_a.entry(a).or_default().push(b);
        matches_of_b.entry(b).or_default().push(a);
    }
    for partners in matches_of_a.values_mut() {
        partners.sort_unstable();
    }
    for partners in matches_of_b.values_mut() {
        partners.sort_unstable();
    }

    let (recall_a, precision_a, ndcg_a, eval_a) =
        oracle_side(&matches_of_a, &inst.lists_a, inst.k);
    let (recall_b, precision_b, ndcg_b, eval_b) =
        oracle_side(&matches_of_b, &inst.lists_b, inst.k);

    let mut covered = 0usize;
    let mut mutual = 0usize;
    for &(a, b) in &dedup {
        let hit_a = inst.lists_a.get(&a).is_some_and(|l| l.contains(&b));
        let hit_b = inst.lists_b.get(&b).is_some_and(|l| l.contains(&a));
        if hit_a || hit_b {
            covered += 1;
        }
        if hit_a && hit_b {
            mutual += 1;
        }
    }
    let pair_total = dedup.len();
    let list_total = eval_a + eval_b;
    let slot_total = list_total * inst.k;

    let mut warnings = Vec::new();
    if eval_a == 0 {
        warnings.push("side A has no evaluable users; its metrics default to 0".to_string());
    }
    if eval_b == 0 {
        warnings.push("side B has no evaluable users; its metrics default to 0".to_string());
    }
    if pair_total == 0 {
        warnings.push(
            "no matched pairs; coverage and stability metrics default to 0".to_string(),
        );
    }

    OracleReport {
        recall_a,
        precision_a,
        ndcg_a,
        recall_b,
        precision_b,
        ndcg_b,
        recall_avg: (recall_a + recall_b) / 2.0,
        precision_avg: (precision_a + precision_b) / 2.0,
        ndcg_avg: (ndcg_a + ndcg_b) / 2.0,
        crecall: fraction(covered, pair_total),
        cprecision: fraction(covered, slot_total),
        srecall: fraction(mutual, pair_total),
        sprecision: fraction(mutual, slot_total),
        rndcg: if list_total == 0 {
            0.0
        } else {
            (eval_a as f64 * ndcg_a + eval_b as f64 * ndcg_b) / list_total as f64
        },
        true_positive_pairs: covered,
        warnings,
    }
}

fn oracle_side(
    matches_of: &BTreeMap<u32, Vec<u32>>,
    lists: &BTreeMap<u32, Vec<u32>>,
    k: usize,
) -> (f64, f64, f64, usize) {
    let evaluable = matches_of.len();
    if evaluable == 0 {
        return (0.0, 0.0, 0.0, 0);
    }
    let mut recall_sum = 0.0;
    let mut precision_sum = 0.0;
    let mut ndcg_sum = 0.0;
    for (user, matched) in matches_of {
        let list = lists.get(user).map(Vec::as_slice).unwrap_or(&[]);
        let mut hits = 0usize;
        let mut dcg = 0.0;
        for (pos, candidate) in list.iter().enumerate() {
            if matched.binary_search(candidate).is_ok() {
                hits += 1;
                dcg += 1.0 / ((pos + 2) as f64).log2();
            }
        }
        recall_sum += hits as f64 / matched.len() as f64;
        precision_sum += hits as f64 / k as f64;
        let ideal = matched.len().min(k);
        let mut idcg = 0.0;
        for rank in 1..=ideal {
            idcg += 1.0 / ((rank + 1) as f64).log2();
        }
        ndcg_sum += dcg / idcg;
    }
    (
        recall_sum / evaluable as f64,
        precision_sum / evaluable as f64,
        ndcg_sum / evaluable as f64,
        evaluable,
    )
}

fn fraction(numerator: usize, denominator: usize) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

/// Field-by-field comparison, bitwise for floats. Returns a description of
/// every disagreement.
pub fn report_mismatches(oracle: &OracleReport, report: &MetricReport) -> Vec<String> {
    let mut out = Vec::new();
    let float_fields = [
        ("recall_a", oracle.recall_a, report.recall_a),
        ("precision_a", oracle.precision_a, report.precision_a),
        ("ndcg_a", oracle.ndcg_a, report.ndcg_a),
        ("recall_b", oracle.recall_b, report.recall_b),
        ("precision_b", oracle.precision_b, report.precision_b),
        ("ndcg_b", oracle.ndcg_b, report.ndcg_b),
        ("recall_avg", oracle.recall_avg, report.recall_avg),
        ("precision_avg", oracle.precision_avg, report.precision_avg),
        ("ndcg_avg", oracle.ndcg_avg, report.ndcg_avg),
        ("crecall", oracle.crecall, report.crecall),
        ("cprecision", oracle.cprecision, report.cprecision),
        ("srecall", oracle.srecall, report.srecall),
        ("sprecision", oracle.sprecision, report.sprecision),
        ("rndcg", oracle.rndcg, report.rndcg),
    ];
    for (name, expected, got) in float_fields {
        if expected.to_bits() != got.to_bits() {
            out.push(format!("{name}: oracle {expected:?} vs report {got:?}"));
        }
    }
    if oracle.true_positive_pairs != report.true_positive_pairs {
        out.push(format!(
            "true_positive_pairs: oracle {} vs report {}",
            oracle.true_positive_pairs, report.true_positive_pairs
        ));
    }
    if oracle.warnings != report.warnings {
        out.push(format!(
            "warnings: oracle {:?} vs report {:?}",
            oracle.warnings, report.warnings
        ));
    }
    out
}

/// One per-user list arrival for the streaming metrics.
#[derive(Debug, Clone)]
pub struct StreamEvent {
    pub side: Side,
    pub user: u32,
    pub list: Vec<u32>,
    pub matches: BTreeSet<u32>,
}

/// Instance on which the closed-form recurrences are exact: every matched
/// pair whose two endpoints both get processed is hit by both endpoint
/// lists. Pairs with at most one processed endpoint are unconstrained, and
/// some processed users have no matches at all.
pub fn restricted_stream_instance(rng: &mut ChaCha20Rng) -> (usize, Vec<StreamEvent>) {
    let n = rng.random_range(2..=8u32);
    let m = rng.random_range(2..=8u32);
    let k = rng.random_range(1..=3usize);
    let processed_a: BTreeSet<u32> = (0..n).filter(|_| rng.random::<f64>() < 0.8).collect();
    let processed_b: BTreeSet<u32> = (0..m).filter(|_| rng.random::<f64>() < 0.8).collect();

    let mut matched: BTreeSet<(u32, u32)> = BTreeSet::new();
    let mut mutual: BTreeSet<(u32, u32)> = BTreeSet::new();
    let mut mutual_deg_a: BTreeMap<u32, usize> = BTreeMap::new();
    let mut mutual_deg_b: BTreeMap<u32, usize> = BTreeMap::new();
    for a in 0..n {
        for b in 0..m {
            if rng.random::<f64>() >= 0.3 {
                continue;
            }
            if processed_a.contains(&a) && processed_b.contains(&b) {
                // A fully observed pair must be mutually hit to stay in
                // the exact class, which caps each user at k such pairs.
                let room = mutual_deg_a.get(&a).copied().unwrap_or(0) < k
                    && mutual_deg_b.get(&b).copied().unwrap_or(0) < k;
                if room && rng.random::<f64>() < 0.7 {
                    matched.insert((a, b));
                    mutual.insert((a, b));
                    *mutual_deg_a.entry(a).or_default() += 1;
                    *mutual_deg_b.entry(b).or_default() += 1;
                }
            } else {
                matched.insert((a, b));
            }
        }
    }

    let mut events = Vec::new();
    for &a in &processed_a {
        let required: Vec<u32> = mutual
            .iter()
            .filter(|&&(x, _)| x == a)
            .map(|&(_, b)| b)
            .collect();
        let partners: BTreeSet<u32> = matched
            .iter()
            .filter(|&&(x, _)| x == a)
            .map(|&(_, b)| b)
            .collect();
        let optional: Vec<u32> = partners
            .iter()
            .copied()
            .filter(|b| !processed_b.contains(b))
            .collect();
        let fillers: Vec<u32> = (0..m).filter(|b| !partners.contains(b)).collect();
        let list = build_list(rng, k, required, optional, fillers);
        events.push(StreamEvent {
            side: Side::A,
            user: a,
            list,
            matches: partners,
        });
    }
    for &b in &processed_b {
        let required: Vec<u32> = mutual
            .iter()
            .filter(|&&(_, y)| y == b)
            .map(|&(a, _)| a)
            .collect();
        let partners: BTreeSet<u32> = matched
            .iter()
            .filter(|&&(_, y)| y == b)
            .map(|&(a, _)| a)
            .collect();
        let optional: Vec<u32> = partners
            .iter()
            .copied()
            .filter(|a| !processed_a.contains(a))
            .collect();
        let fillers: Vec<u32> = (0..n).filter(|a| !partners.contains(a)).collect();
        let list = build_list(rng, k, required, optional, fillers);
        events.push(StreamEvent {
            side: Side::B,
            user: b,
            list,
            matches: partners,
        });
    }
    (k, events)
}

/// List = all required hits, then optional hits and non-match fillers as
/// the budget allows, in a shuffled order.
fn build_list(
    rng: &mut ChaCha20Rng,
    k: usize,
    required: Vec<u32>,
    optional: Vec<u32>,
    fillers: Vec<u32>,
) -> Vec<u32> {
    assert!(required.len() <= k, "mutual degree exceeds the list budget");
    let mut list = required;
    for candidate in optional {
        if list.len() < k && rng.random::<f64>() < 0.5 {
            list.push(candidate);
        }
    }
    let mut fillers = fillers;
    while list.len() < k && !fillers.is_empty() && rng.random::<f64>() < 0.7 {
        let idx = rng.random_range(0..fillers.len());
        list.push(fillers.swap_remove(idx));
    }
    // Rank order is irrelevant to the pair metrics; shuffle to make sure
    // nothing depends on it.
    for i in (1..list.len()).rev() {
        list.swap(i, rng.random_range(0..=i));
    }
    list
}

/// Root seed of the shared benchmark; all stage seeds derive from it the
/// same way the command-line pipeline derives them.
pub const BENCH_ROOT_SEED: u64 = 90210;

/// A 200x200 synthetic dataset with a dimension-16 backbone trained on its
/// train partition, built once and shared by the slower checks.
pub struct Benchmark {
    pub split: DatasetSplit,
    pub data: TrainData,
    pub valset: MatchSet,
    pub outcome: TrainOutcome,
    pub build_time: Duration,
}

pub fn benchmark() -> &'static Benchmark {
    static CELL: OnceLock<Benchmark> = OnceLock::new();
    CELL.get_or_init(|| {
        let started = Instant::now();
        let log = generate_synthetic(
            200,
            200,
            16,
            0.15,
            derive_seed(BENCH_ROOT_SEED, SeedStream::Synthetic),
        )
        .expect("benchmark dataset");
        let parts = split(&log, (0.8, 0.1, 0.1), derive_seed(BENCH_ROOT_SEED, SeedStream::Split))
            .expect("benchmark split");
        let data = TrainData::from_log(&parts.train);
        // Score validation recall on pairs that first match in the validation
        // partition. A pair already matched in train is a training positive,
        // so the ranking harness excludes it from the candidate pool and it
        // could never be recalled anyway.
        let train_matched = parts.train.matched_pairs();
        let valset = MatchSet::from_pairs(
            parts
                .validation
                .matched_pairs()
                .difference(&train_matched)
                .copied(),
        );
        assert!(!valset.is_empty(), "benchmark validation has no fresh matches");
        assert!(
            !parts.matched_pairs_test.is_empty(),
            "benchmark test partition has no matches"
        );
        let init_seed = derive_seed(BENCH_ROOT_SEED, SeedStream::Pretrain);
        let init = init_model(200, 200, 16, init_seed).expect("benchmark init");
        let config = TrainConfig {
            seed: init_seed.wrapping_add(1),
            learning_rate: 3e-3,
            batch_size: 256,
            negatives_per_positive: 2,
            ..TrainConfig::default()
        };
        let outcome = train(&init, &data, Some(&valset), &config).expect("benchmark training");
        Benchmark {
            split: parts,
            data,
            valset,
            outcome,
            build_time: started.elapsed(),
        }
    })
}

/// Expected Recall@k of a ranker drawing its list uniformly from each
/// user's allowed candidates, averaged the same way the validation metric
/// averages: per side over evaluable users, then across the two sides.
pub fn random_ranker_expectation(
    data: &TrainData,
    valset: &MatchSet,
    n: usize,
    m: usize,
    k: usize,
) -> f64 {
    let side_value = |side: Side, universe: usize, exclusions: &BTreeMap<u32, BTreeSet<u32>>| {
        let mut sum = 0.0;
        let mut count = 0usize;
        for user in valset.users(side) {
            let matched = valset.matches_of(side, user).expect("evaluable user");
            let excluded = exclusions.get(&user);
            let candidates = universe - excluded.map_or(0, |e| e.len());
            let reachable = matched
                .iter()
                .filter(|c| excluded.is_none_or(|e| !e.contains(c)))
                .count();
            if candidates > 0 {
                let inclusion = (k as f64 / candidates as f64).min(1.0);
                sum += inclusion * reachable as f64 / matched.len() as f64;
            }
            count += 1;
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    };
    let a = side_value(Side::A, m, &data.exclusions_a);
    let b = side_value(Side::B, n, &data.exclusions_b);
    (a + b) / 2.0
}
