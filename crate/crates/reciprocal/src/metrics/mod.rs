//! Ranking metrics for two-sided recommendation.
//!
//! Alongside the conventional per-side Recall / Precision / NDCG, this
//! module computes overall-system quantities defined on matched pairs:
//! coverage (a matched pair is covered when at least one side's list
//! contains it) and bilateral stability (the pair appears in both lists).
//! Batch computation lives here; [`streaming`] maintains the same values
//! incrementally as user lists arrive one at a time.

pub mod streaming;

use crate::error::{Error, Result};
use crate::types::Side;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Ground-truth matched pairs for one evaluation, with per-user indexes.
///
/// A user is *evaluable* when it has at least one matched counterpart;
/// per-side means and precision denominators run over evaluable users only.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchSet {
    pairs: BTreeSet<(u32, u32)>,
    per_user_a: BTreeMap<u32, BTreeSet<u32>>,
    per_user_b: BTreeMap<u32, BTreeSet<u32>>,
}

impl MatchSet {
    pub fn from_pairs<I>(pairs: I) -> MatchSet
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        let mut set = MatchSet::default();
        for (a, b) in pairs {
            set.pairs.insert((a, b));
            set.per_user_a.entry(a).or_default().insert(b);
            set.per_user_b.entry(b).or_default().insert(a);
        }
        set
    }

    /// Total number of matched pairs (M).
    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &BTreeSet<(u32, u32)> {
        &self.pairs
    }

    pub fn contains(&self, pair: (u32, u32)) -> bool {
        self.pairs.contains(&pair)
    }

    /// Evaluable users on one side, ascending.
    pub fn users(&self, side: Side) -> impl Iterator<Item = u32> + '_ {
        match side {
            Side::A => self.per_user_a.keys().copied(),
            Side::B => self.per_user_b.keys().copied(),
        }
    }

    pub fn evaluable_count(&self, side: Side) -> usize {
        match side {
            Side::A => self.per_user_a.len(),
            Side::B => self.per_user_b.len(),
        }
    }

    /// Matched counterparts of one user, if it has any.
    pub fn matches_of(&self, side: Side, user: u32) -> Option<&BTreeSet<u32>> {
        match side {
            Side::A => self.per_user_a.get(&user),
            Side::B => self.per_user_b.get(&user),
        }
    }
}

/// Top-K ranked lists for both sides. Lists are keyed by user id; users
/// without an entry are treated as having an empty list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecommendationRun {
    pub k: usize,
    pub lists_a: BTreeMap<u32, Vec<u32>>,
    pub lists_b: BTreeMap<u32, Vec<u32>>,
}

impl RecommendationRun {
    pub fn new(k: usize) -> Result<RecommendationRun> {
        if k == 0 {
            return Err(Error::Config("list length K must be >= 1".into()));
        }
        Ok(RecommendationRun {
            k,
            lists_a: BTreeMap::new(),
            lists_b: BTreeMap::new(),
        })
    }

    /// Add one user's ranked list, checking length and distinctness.
    pub fn insert_list(&mut self, side: Side, user: u32, list: Vec<u32>) -> Result<()> {
        if list.len() > self.k {
            return Err(Error::Validation(format!(
                "list for {side} user {user} has {} entries, K = {}",
                list.len(),
                self.k
            )));
        }
        let distinct: BTreeSet<u32> = list.iter().copied().collect();
        if distinct.len() != list.len() {
            return Err(Error::Validation(format!(
                "list for {side} user {user} contains duplicates"
            )));
        }
        match side {
            Side::A => self.lists_a.insert(user, list),
            Side::B => self.lists_b.insert(user, list),
        };
        Ok(())
    }

    pub fn list(&self, side: Side, user: u32) -> &[u32] {
        let lists = match side {
            Side::A => &self.lists_a,
            Side::B => &self.lists_b,
        };
        lists.get(&user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn lists(&self, side: Side) -> &BTreeMap<u32, Vec<u32>> {
        match side {
            Side::A => &self.lists_a,
            Side::B => &self.lists_b,
        }
    }

    /// Full invariant check against the user universe sizes.
    pub fn validate(&self, side_a_count: usize, side_b_count: usize) -> Result<()> {
        for (side, lists, own_count, other_count) in [
            (Side::A, &self.lists_a, side_a_count, side_b_count),
            (Side::B, &self.lists_b, side_b_count, side_a_count),
        ] {
            for (&user, list) in lists {
                if user as usize >= own_count {
                    return Err(Error::Index(format!("{side} user {user} out of range")));
                }
                if list.len() > self.k {
                    return Err(Error::Validation(format!(
                        "list for {side} user {user} exceeds K = {}",
                        self.k
                    )));
                }
                let mut seen = BTreeSet::new();
                for &c in list {
                    if c as usize >= other_count {
                        return Err(Error::Index(format!(
                            "list for {side} user {user} references out-of-range id {c}"
                        )));
                    }
                    if !seen.insert(c) {
                        return Err(Error::Validation(format!(
                            "list for {side} user {user} contains duplicate id {c}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Mean Recall / Precision / NDCG over one side's evaluable users.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideMetrics {
    pub recall: f64,
    pub precision: f64,
    pub ndcg: f64,
    pub evaluable_users: usize,
}

/// Coverage of matched pairs by at least one side's list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub crecall: f64,
    pub cprecision: f64,
}

/// Matched pairs recommended on both sides simultaneously.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability {
    pub srecall: f64,
    pub sprecision: f64,
}

/// Every metric of one evaluation, plus warnings about degenerate inputs
/// (empty sides, zero matched pairs) that forced defined-as-zero values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
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
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl MetricReport {
    /// Column order of the TSV form; also the field order of the JSON form.
    pub const TSV_COLUMNS: [&'static str; 15] = [
        "recall_a",
        "precision_a",
        "ndcg_a",
        "recall_b",
        "precision_b",
        "ndcg_b",
        "recall_avg",
        "precision_avg",
        "ndcg_avg",
        "crecall",
        "cprecision",
        "srecall",
        "sprecision",
        "rndcg",
        "true_positive_pairs",
    ];

    fn tsv_values(&self) -> [String; 15] {
        [
            self.recall_a.to_string(),
            self.precision_a.to_string(),
            self.ndcg_a.to_string(),
            self.recall_b.to_string(),
            self.precision_b.to_string(),
            self.ndcg_b.to_string(),
            self.recall_avg.to_string(),
            self.precision_avg.to_string(),
            self.ndcg_avg.to_string(),
            self.crecall.to_string(),
            self.cprecision.to_string(),
            self.srecall.to_string(),
            self.sprecision.to_string(),
            self.rndcg.to_string(),
            self.true_positive_pairs.to_string(),
        ]
    }

    /// Header line plus one data row, tab-separated.
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\n{}\n",
            Self::TSV_COLUMNS.join("\t"),
            self.tsv_values().join("\t")
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Position discount for a 1-based rank.
fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// NDCG with binary relevance: gains 1 at matched positions, ideal list
/// packs min(#matches, K) hits at the top.
fn ndcg_for_user(list: &[u32], user_matches: &BTreeSet<u32>, k: usize) -> f64 {
    let ideal_len = user_matches.len().min(k);
    if ideal_len == 0 {
        return 0.0;
    }
    let dcg: f64 = list
        .iter()
        .enumerate()
        .filter(|(_, c)| user_matches.contains(c))
        .map(|(i, _)| discount(i + 1))
        .sum();
    let idcg: f64 = (1..=ideal_len).map(discount).sum();
    dcg / idcg
}

/// Mean Recall, Precision, and NDCG over one side's evaluable users.
/// A side with no evaluable users reports zeros.
pub fn side_metrics(run: &RecommendationRun, matches: &MatchSet, side: Side) -> SideMetrics {
    let evaluable = matches.evaluable_count(side);
    if evaluable == 0 || run.k == 0 {
        return SideMetrics {
            recall: 0.0,
            precision: 0.0,
            ndcg: 0.0,
            evaluable_users: evaluable,
        };
    }
    let mut recall_sum = 0.0;
    let mut precision_sum = 0.0;
    let mut ndcg_sum = 0.0;
    for user in matches.users(side) {
        let user_matches = matches
            .matches_of(side, user)
            .expect("evaluable user has matches");
        let list = run.list(side, user);
        let hits = list.iter().filter(|c| user_matches.contains(c)).count();
        recall_sum += hits as f64 / user_matches.len() as f64;
        precision_sum += hits as f64 / run.k as f64;
        ndcg_sum += ndcg_for_user(list, user_matches, run.k);
    }
    SideMetrics {
        recall: recall_sum / evaluable as f64,
        precision: precision_sum / evaluable as f64,
        ndcg: ndcg_sum / evaluable as f64,
        evaluable_users: evaluable,
    }
}

/// Matched pairs contained in the given side's lists.
fn hit_pairs(run: &RecommendationRun, matches: &MatchSet, side: Side) -> BTreeSet<(u32, u32)> {
    let mut hits = BTreeSet::new();
    for user in matches.users(side) {
        let user_matches = matches
            .matches_of(side, user)
            .expect("evaluable user has matches");
        for &c in run.list(side, user) {
            if user_matches.contains(&c) {
                hits.insert(side.pair(user, c));
            }
        }
    }
    hits
}

fn coverage_counts(run: &RecommendationRun, matches: &MatchSet) -> (usize, usize) {
    let hits_a = hit_pairs(run, matches, Side::A);
    let hits_b = hit_pairs(run, matches, Side::B);
    let covered = hits_a.union(&hits_b).count();
    let mutual = hits_a.intersection(&hits_b).count();
    (covered, mutual)
}

/// Fraction of matched pairs hit by at least one side's list, and the
/// corresponding precision over all (n + m) evaluable lists.
pub fn overall_coverage(run: &RecommendationRun, matches: &MatchSet) -> Coverage {
    let (covered, _) = coverage_counts(run, matches);
    let m_total = matches.pair_count();
    let lists = matches.evaluable_count(Side::A) + matches.evaluable_count(Side::B);
    Coverage {
        crecall: ratio(covered, m_total),
        cprecision: ratio(covered, lists * run.k),
    }
}

/// Fraction of matched pairs hit by both sides' lists simultaneously.
pub fn bilateral_stability(run: &RecommendationRun, matches: &MatchSet) -> Stability {
    let (_, mutual) = coverage_counts(run, matches);
    let m_total = matches.pair_count();
    let lists = matches.evaluable_count(Side::A) + matches.evaluable_count(Side::B);
    Stability {
        srecall: ratio(mutual, m_total),
        sprecision: ratio(mutual, lists * run.k),
    }
}

/// Count of matched pairs hit by at least one side.
pub fn true_positive_pairs(run: &RecommendationRun, matches: &MatchSet) -> usize {
    coverage_counts(run, matches).0
}

/// NDCG combined across sides, weighted by each side's evaluable-user
/// population. Equals the plain mean when the populations are equal.
pub fn rndcg(run: &RecommendationRun, matches: &MatchSet) -> f64 {
    let a = side_metrics(run, matches, Side::A);
    let b = side_metrics(run, matches, Side::B);
    population_weighted(a.evaluable_users, b.evaluable_users, a.ndcg, b.ndcg)
}

fn population_weighted(n: usize, m: usize, value_a: f64, value_b: f64) -> f64 {
    if n + m == 0 {
        return 0.0;
    }
    (n as f64 * value_a + m as f64 * value_b) / (n + m) as f64
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Compute the full report for one run against one match set.
pub fn compute_report(run: &RecommendationRun, matches: &MatchSet) -> MetricReport {
    let a = side_metrics(run, matches, Side::A);
    let b = side_metrics(run, matches, Side::B);
    let coverage = overall_coverage(run, matches);
    let stability = bilateral_stability(run, matches);
    let tp = true_positive_pairs(run, matches);

    let mut warnings = Vec::new();
    if a.evaluable_users == 0 {
        warnings.push("side A has no evaluable users; its metrics default to 0".to_string());
    }
    if b.evaluable_users == 0 {
        warnings.push("side B has no evaluable users; its metrics default to 0".to_string());
    }
    if matches.is_empty() {
        warnings.push(
            "no matched pairs; coverage and stability metrics default to 0".to_string(),
        );
    }

    MetricReport {
        recall_a: a.recall,
        precision_a: a.precision,
        ndcg_a: a.ndcg,
        recall_b: b.recall,
        precision_b: b.precision,
        ndcg_b: b.ndcg,
        recall_avg: (a.recall + b.recall) / 2.0,
        precision_avg: (a.precision + b.precision) / 2.0,
        ndcg_avg: (a.ndcg + b.ndcg) / 2.0,
        crecall: coverage.crecall,
        cprecision: coverage.cprecision,
        srecall: stability.srecall,
        sprecision: stability.sprecision,
        rndcg: population_weighted(a.evaluable_users, b.evaluable_users, a.ndcg, b.ndcg),
        true_positive_pairs: tp,
        warnings,
    }
}
