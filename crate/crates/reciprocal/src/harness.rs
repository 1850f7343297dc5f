//! End-to-end evaluation: full-ranking top-K list construction for several
//! scoring rules, metric reporting, redundancy-adjustment experiments, and
//! the redundant-rank histogram.
//!
//! Every evaluation ranks, for each user with at least one held-out match,
//! all opposite-side candidates allowed by the candidate policy, keeps the
//! top K, and hands the lists to the metrics module. The adjusters rewrite
//! a finished run to show how the overall-system metrics move while the
//! per-side metrics stay fixed.

use crate::backbone::{init_model, train, LatentFactorModel, TrainConfig, TrainData};
use crate::crrs::{
    rerank_decision, simple_scores_weighted, PotentialOutcomes, ScoreWeights, TreatmentModels,
    VacantSlotConfig, VacantSlotTable,
};
use crate::dataset::{derive_treatment_sets, DatasetSplit, InteractionLog};
use crate::error::{Error, Result};
use crate::metrics::{compute_report, MatchSet, MetricReport, RecommendationRun};
use crate::types::Side;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

/// Which opposite-side users are ranked for a target user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidatePolicy {
    /// Rank every opposite-side user.
    All,
    /// Rank everyone except the user's train and validation positives.
    ExcludeTrainValPositives,
}

impl std::fmt::Display for CandidatePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CandidatePolicy::All => "all",
            CandidatePolicy::ExcludeTrainValPositives => "exclude-train-val-positives",
        })
    }
}

impl FromStr for CandidatePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<CandidatePolicy> {
        match s {
            "all" => Ok(CandidatePolicy::All),
            "exclude-train-val-positives" => Ok(CandidatePolicy::ExcludeTrainValPositives),
            other => Err(Error::Config(format!(
                "unknown candidate policy {other:?} (expected \"all\" or \
                 \"exclude-train-val-positives\")"
            ))),
        }
    }
}

/// Evaluation-time settings shared by every scoring rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// List length K.
    pub k: usize,
    pub candidate_policy: CandidatePolicy,
    /// Counterparts sampled per vacant-slot estimate.
    pub ybar_sample_size: usize,
    /// Top sampled scores averaged per vacant-slot estimate.
    pub ybar_top_q: usize,
    /// Seed for evaluation-time randomness (vacant-slot sampling and the
    /// adjusters' substitute choices).
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> EvalConfig {
        EvalConfig {
            k: 50,
            candidate_policy: CandidatePolicy::ExcludeTrainValPositives,
            ybar_sample_size: 100,
            ybar_top_q: 1,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("evaluation K must be >= 1".into()));
        }
        if self.ybar_sample_size == 0 {
            return Err(Error::Config("ybar_sample_size must be >= 1".into()));
        }
        if self.ybar_top_q == 0 {
            return Err(Error::Config("ybar_top_q must be >= 1".into()));
        }
        Ok(())
    }

    pub fn vacant_slot_config(&self) -> VacantSlotConfig {
        VacantSlotConfig {
            sample_size: self.ybar_sample_size,
            top_q: self.ybar_top_q,
        }
    }
}

/// Scores one side's view of every opposite-side candidate.
///
/// `scores` takes `&mut self` so stateful scorers (sampling caches) can
/// memoize; a scorer is deterministic for a fixed construction, with users
/// queried side A first, ascending ids.
pub trait PairScorer {
    /// Scores for `user` against all opposite-side candidates, indexed by
    /// candidate id.
    fn scores(&mut self, side: Side, user: u32) -> Result<Vec<f64>>;

    fn side_count(&self, side: Side) -> usize;
}

/// One latent-factor model scoring both sides.
pub struct BackboneScorer<'a> {
    model: &'a LatentFactorModel,
}

impl<'a> BackboneScorer<'a> {
    pub fn new(model: &'a LatentFactorModel) -> BackboneScorer<'a> {
        BackboneScorer { model }
    }
}

impl PairScorer for BackboneScorer<'_> {
    fn scores(&mut self, side: Side, user: u32) -> Result<Vec<f64>> {
        self.model.scores_for(side, user)
    }

    fn side_count(&self, side: Side) -> usize {
        self.model.side_count(side)
    }
}

/// Two independent models, one per recommendation direction.
pub struct DualScorer<'a> {
    model_a: &'a LatentFactorModel,
    model_b: &'a LatentFactorModel,
}

impl<'a> DualScorer<'a> {
    pub fn new(
        model_a: &'a LatentFactorModel,
        model_b: &'a LatentFactorModel,
    ) -> Result<DualScorer<'a>> {
        if model_a.n() != model_b.n() || model_a.m() != model_b.m() {
            return Err(Error::Validation(format!(
                "dual-scorer models disagree on shape: {}x{} vs {}x{}",
                model_a.n(),
                model_a.m(),
                model_b.n(),
                model_b.m()
            )));
        }
        Ok(DualScorer { model_a, model_b })
    }
}

impl PairScorer for DualScorer<'_> {
    fn scores(&mut self, side: Side, user: u32) -> Result<Vec<f64>> {
        match side {
            Side::A => self.model_a.scores_for(side, user),
            Side::B => self.model_b.scores_for(side, user),
        }
    }

    fn side_count(&self, side: Side) -> usize {
        self.model_a.side_count(side)
    }
}

/// Additive treatment-model rule: side A ranks by f10 + f11 scores, side B
/// by f01 + f11 (weighted).
pub struct SimpleCrrsScorer<'a> {
    models: &'a TreatmentModels,
    weights: ScoreWeights,
}

impl<'a> SimpleCrrsScorer<'a> {
    pub fn new(models: &'a TreatmentModels, weights: ScoreWeights) -> Result<SimpleCrrsScorer<'a>> {
        models.validate()?;
        Ok(SimpleCrrsScorer { models, weights })
    }
}

impl PairScorer for SimpleCrrsScorer<'_> {
    fn scores(&mut self, side: Side, user: u32) -> Result<Vec<f64>> {
        let y10 = self.models.f10.scores_for(side, user)?;
        let y11 = self.models.f11.scores_for(side, user)?;
        let y01 = self.models.f01.scores_for(side, user)?;
        let mut out = Vec::with_capacity(y10.len());
        for i in 0..y10.len() {
            let outcomes = PotentialOutcomes {
                y10: y10[i],
                y11: y11[i],
                y01: y01[i],
            };
            let (s_a, s_b) = simple_scores_weighted(&outcomes, &self.weights);
            out.push(match side {
                Side::A => s_a,
                Side::B => s_b,
            });
        }
        Ok(out)
    }

    fn side_count(&self, side: Side) -> usize {
        self.models.pretrained.side_count(side)
    }
}

/// Vacant-slot reranking rule: each pair's exposure pattern is chosen by
/// weighing its potential outcomes against both users' vacant-slot values,
/// and the serving score credits only the exposed side(s).
///
/// Vacant-slot values come from the bundle's pretrained backbone and are
/// cached, so each user's estimate is computed once per scorer.
pub struct RerankScorer<'a> {
    models: &'a TreatmentModels,
    vacant: VacantSlotConfig,
    /// Per-user training positives excluded from vacant-slot sampling.
    ybar_exclusions_a: &'a BTreeMap<u32, BTreeSet<u32>>,
    ybar_exclusions_b: &'a BTreeMap<u32, BTreeSet<u32>>,
    table: VacantSlotTable,
    rng: ChaCha20Rng,
}

impl<'a> RerankScorer<'a> {
    pub fn new(
        models: &'a TreatmentModels,
        vacant: VacantSlotConfig,
        ybar_exclusions_a: &'a BTreeMap<u32, BTreeSet<u32>>,
        ybar_exclusions_b: &'a BTreeMap<u32, BTreeSet<u32>>,
        seed: u64,
    ) -> Result<RerankScorer<'a>> {
        models.validate()?;
        Ok(RerankScorer {
            models,
            vacant,
            ybar_exclusions_a,
            ybar_exclusions_b,
            table: VacantSlotTable::new(),
            rng: rand::SeedableRng::seed_from_u64(seed),
        })
    }

    /// Vacant-slot values computed so far.
    pub fn vacant_slot_table(&self) -> &VacantSlotTable {
        &self.table
    }

    fn ybar(&mut self, side: Side, user: u32) -> Result<f64> {
        let exclusions = match side {
            Side::A => self.ybar_exclusions_a.get(&user),
            Side::B => self.ybar_exclusions_b.get(&user),
        };
        self.table.get_or_compute(
            &self.models.pretrained,
            side,
            user,
            exclusions,
            &self.vacant,
            &mut self.rng,
        )
    }
}

impl PairScorer for RerankScorer<'_> {
    fn scores(&mut self, side: Side, user: u32) -> Result<Vec<f64>> {
        let y10 = self.models.f10.scores_for(side, user)?;
        let y11 = self.models.f11.scores_for(side, user)?;
        let y01 = self.models.f01.scores_for(side, user)?;
        let ybar_user = self.ybar(side, user)?;
        let mut out = Vec::with_capacity(y10.len());
        for c in 0..y10.len() {
            let ybar_counterpart = self.ybar(side.other(), c as u32)?;
            let outcomes = PotentialOutcomes {
                y10: y10[c],
                y11: y11[c],
                y01: y01[c],
            };
            let decision = match side {
                Side::A => rerank_decision(&outcomes, ybar_user, ybar_counterpart),
                Side::B => rerank_decision(&outcomes, ybar_counterpart, ybar_user),
            };
            out.push(match side {
                Side::A => decision.s_a,
                Side::B => decision.s_b,
            });
        }
        Ok(out)
    }

    fn side_count(&self, side: Side) -> usize {
        self.models.pretrained.side_count(side)
    }
}

/// Ground-truth scorer: 1 for matched pairs, 0 otherwise. An upper-bound
/// sanity check for the evaluation path.
pub struct OracleScorer<'a> {
    pub matches: &'a MatchSet,
    pub side_a_count: usize,
    pub side_b_count: usize,
}

impl PairScorer for OracleScorer<'_> {
    fn scores(&mut self, side: Side, user: u32) -> Result<Vec<f64>> {
        let opposite = self.side_count(side.other());
        let user_matches = self.matches.matches_of(side, user);
        Ok((0..opposite as u32)
            .map(|c| match user_matches {
                Some(set) if set.contains(&c) => 1.0,
                _ => 0.0,
            })
            .collect())
    }

    fn side_count(&self, side: Side) -> usize {
        match side {
            Side::A => self.side_a_count,
            Side::B => self.side_b_count,
        }
    }
}

/// A recommendation run plus the score of every kept entry, for dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRun {
    pub run: RecommendationRun,
    /// `scores_a[user][i]` is the score of `run.lists_a[user][i]`.
    pub scores_a: BTreeMap<u32, Vec<f64>>,
    pub scores_b: BTreeMap<u32, Vec<f64>>,
}

impl ScoredRun {
    /// Write one side's lists as TSV: `user`, 1-based `rank`,
    /// `counterpart`, `score`.
    pub fn write_tsv(&self, side: Side, path: &Path) -> Result<()> {
        let (lists, scores) = match side {
            Side::A => (&self.run.lists_a, &self.scores_a),
            Side::B => (&self.run.lists_b, &self.scores_b),
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (user, list) in lists {
            let entry_scores = scores.get(user).ok_or_else(|| {
                Error::Validation(format!("no scores recorded for {side} user {user}"))
            })?;
            if entry_scores.len() != list.len() {
                return Err(Error::Validation(format!(
                    "{side} user {user} has {} list entries but {} scores",
                    list.len(),
                    entry_scores.len()
                )));
            }
            for (i, (counterpart, score)) in list.iter().zip(entry_scores).enumerate() {
                writeln!(out, "{user}\t{}\t{counterpart}\t{score}", i + 1)?;
            }
        }
        Ok(())
    }
}

/// Per-user sets of known positives, used both for candidate filtering and
/// vacant-slot sampling exclusions. Returns `(by_a_user, by_b_user)`.
pub fn positive_exclusion_maps(
    logs: &[&InteractionLog],
) -> (
    BTreeMap<u32, BTreeSet<u32>>,
    BTreeMap<u32, BTreeSet<u32>>,
) {
    let mut by_a: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    let mut by_b: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for log in logs {
        for (a, b) in log.matched_pairs() {
            by_a.entry(a).or_default().insert(b);
            by_b.entry(b).or_default().insert(a);
        }
    }
    (by_a, by_b)
}

/// Rank all candidates for every user with at least one test match.
///
/// Per user: query the scorer, drop candidates barred by the candidate
/// policy, sort by descending score with ties broken by ascending id, keep
/// the top K, and compute the full metric report over the resulting lists.
/// Deterministic given the scorer construction, split, and config.
pub fn full_rank_evaluate(
    scorer: &mut dyn PairScorer,
    split: &DatasetSplit,
    config: &EvalConfig,
) -> Result<(ScoredRun, MetricReport)> {
    config.validate()?;
    let matches = MatchSet::from_pairs(split.matched_pairs_test.iter().copied());
    let (excl_a, excl_b) = match config.candidate_policy {
        CandidatePolicy::All => (BTreeMap::new(), BTreeMap::new()),
        CandidatePolicy::ExcludeTrainValPositives => {
            positive_exclusion_maps(&[&split.train, &split.validation])
        }
    };

    let mut run = RecommendationRun::new(config.k)?;
    let mut scores_a = BTreeMap::new();
    let mut scores_b = BTreeMap::new();
    for side in [Side::A, Side::B] {
        let users: Vec<u32> = matches.users(side).collect();
        let exclusions = match side {
            Side::A => &excl_a,
            Side::B => &excl_b,
        };
        for user in users {
            let scores = scorer.scores(side, user)?;
            let excluded = exclusions.get(&user);
            let mut candidates: Vec<u32> = (0..scores.len() as u32)
                .filter(|c| excluded.is_none_or(|e| !e.contains(c)))
                .collect();
            candidates.sort_by(|&x, &y| {
                scores[y as usize]
                    .partial_cmp(&scores[x as usize])
                    .expect("finite scores")
                    .then(x.cmp(&y))
            });
            candidates.truncate(config.k);
            let entry_scores: Vec<f64> = candidates.iter().map(|&c| scores[c as usize]).collect();
            run.insert_list(side, user, candidates)?;
            match side {
                Side::A => scores_a.insert(user, entry_scores),
                Side::B => scores_b.insert(user, entry_scores),
            };
        }
    }
    run.validate(scorer.side_count(Side::A), scorer.side_count(Side::B))?;
    let report = compute_report(&run, &matches);
    Ok((
        ScoredRun {
            run,
            scores_a,
            scores_b,
        },
        report,
    ))
}

fn rank_of(list: &[u32], id: u32) -> Option<usize> {
    list.iter().position(|&x| x == id)
}

/// Matched pairs currently recommended on both sides' lists.
pub fn mutual_pairs(run: &RecommendationRun, matches: &MatchSet) -> BTreeSet<(u32, u32)> {
    let mut out = BTreeSet::new();
    for (&a, list) in &run.lists_a {
        for &b in list {
            if matches.contains((a, b)) && run.list(Side::B, b).contains(&a) {
                out.insert((a, b));
            }
        }
    }
    out
}

/// Matched pairs currently recommended on exactly one side's lists.
fn one_sided_hits(run: &RecommendationRun, matches: &MatchSet) -> BTreeSet<(u32, u32)> {
    let mut out = BTreeSet::new();
    for (&a, list) in &run.lists_a {
        for &b in list {
            if matches.contains((a, b)) && !run.list(Side::B, b).contains(&a) {
                out.insert((a, b));
            }
        }
    }
    for (&b, list) in &run.lists_b {
        for &a in list {
            if matches.contains((a, b)) && !run.list(Side::A, a).contains(&b) {
                out.insert((a, b));
            }
        }
    }
    out
}

/// Bookkeeping from one adjustment pass. `candidates` counts the pairs
/// that qualified in the input run and equals the sum of the other three
/// fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AdjustmentReport {
    pub candidates: usize,
    /// List entries rewritten.
    pub replaced: usize,
    /// Pairs left alone because no eligible substitute existed.
    pub skipped_no_substitute: usize,
    /// Pairs left alone because earlier rewrites already changed their
    /// hit pattern.
    pub skipped_stale: usize,
}

/// Rewrite mutual hits into one-sided hits plus a fresh hit elsewhere.
///
/// For each matched pair recommended on both sides, the later-ranked
/// occurrence (ties rewrite the side-B one) is replaced, at the same rank,
/// by another matched counterpart of that user that is currently hit on
/// neither side — chosen seeded-randomly among eligibles, skipping the
/// pair when none exists. A hit is swapped for a hit at an unchanged rank,
/// so per-side Recall, Precision, and NDCG are preserved exactly, while
/// pair coverage (crecall) never decreases.
pub fn adjust_uni(
    run: &RecommendationRun,
    matches: &MatchSet,
    rng: &mut ChaCha20Rng,
) -> (RecommendationRun, AdjustmentReport) {
    let mut out = run.clone();
    let targets = mutual_pairs(run, matches);
    let mut report = AdjustmentReport {
        candidates: targets.len(),
        ..AdjustmentReport::default()
    };
    for (a, b) in targets {
        let ranks = (rank_of(out.list(Side::A, a), b), rank_of(out.list(Side::B, b), a));
        let (Some(rank_a), Some(rank_b)) = ranks else {
            report.skipped_stale += 1;
            continue;
        };
        let (side, user, rank) = if rank_a > rank_b {
            (Side::A, a, rank_a)
        } else {
            (Side::B, b, rank_b)
        };
        let eligible: Vec<u32> = matches
            .matches_of(side, user)
            .into_iter()
            .flatten()
            .copied()
            .filter(|&c| {
                !out.list(side, user).contains(&c) && !out.list(side.other(), c).contains(&user)
            })
            .collect();
        if eligible.is_empty() {
            report.skipped_no_substitute += 1;
            continue;
        }
        let pick = eligible[rng.random_range(0..eligible.len())];
        let lists = match side {
            Side::A => &mut out.lists_a,
            Side::B => &mut out.lists_b,
        };
        lists.get_mut(&user).expect("hit user has a list")[rank] = pick;
        report.replaced += 1;
    }
    (out, report)
}

/// Rewrite one-sided hits into mutual hits.
///
/// For each matched pair recommended on exactly one side, that occurrence
/// is replaced, at the same rank, by another matched counterpart of the
/// user that is already hit from the other side — chosen seeded-randomly
/// among eligibles, skipping the pair when none exists (or when earlier
/// rewrites already made it mutual). Per-side metrics are preserved
/// exactly; the mutual-pair count (srecall) never decreases and pair
/// coverage (crecall) never increases.
pub fn adjust_rep(
    run: &RecommendationRun,
    matches: &MatchSet,
    rng: &mut ChaCha20Rng,
) -> (RecommendationRun, AdjustmentReport) {
    let mut out = run.clone();
    let targets = one_sided_hits(run, matches);
    let mut report = AdjustmentReport {
        candidates: targets.len(),
        ..AdjustmentReport::default()
    };
    for (a, b) in targets {
        let on_a = rank_of(out.list(Side::A, a), b);
        let on_b = rank_of(out.list(Side::B, b), a);
        let (side, user, rank) = match (on_a, on_b) {
            (Some(rank), None) => (Side::A, a, rank),
            (None, Some(rank)) => (Side::B, b, rank),
            _ => {
                report.skipped_stale += 1;
                continue;
            }
        };
        let eligible: Vec<u32> = matches
            .matches_of(side, user)
            .into_iter()
            .flatten()
            .copied()
            .filter(|&c| {
                !out.list(side, user).contains(&c) && out.list(side.other(), c).contains(&user)
            })
            .collect();
        if eligible.is_empty() {
            report.skipped_no_substitute += 1;
            continue;
        }
        let pick = eligible[rng.random_range(0..eligible.len())];
        let lists = match side {
            Side::A => &mut out.lists_a,
            Side::B => &mut out.lists_b,
        };
        lists.get_mut(&user).expect("hit user has a list")[rank] = pick;
        report.replaced += 1;
    }
    (out, report)
}

/// Where redundant (mutually recommended) matched pairs sit in the lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankHistogram {
    /// `counts[i]` = redundant list entries at 1-based rank i+1, summed
    /// over both sides.
    pub counts: Vec<usize>,
}

impl RankHistogram {
    /// Total redundant entries; twice the number of mutual pairs.
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Write the counts as a bare JSON array.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.counts)?)?;
        Ok(())
    }
}

/// Count, for every matched pair recommended on both sides, the rank of
/// each of its two occurrences (one increment per side).
pub fn redundancy_rank_histogram(run: &RecommendationRun, matches: &MatchSet) -> RankHistogram {
    let mut counts = vec![0usize; run.k];
    for (a, b) in mutual_pairs(run, matches) {
        let rank_a = rank_of(run.list(Side::A, a), b).expect("mutual pair is on side A");
        let rank_b = rank_of(run.list(Side::B, b), a).expect("mutual pair is on side B");
        counts[rank_a] += 1;
        counts[rank_b] += 1;
    }
    RankHistogram { counts }
}

/// Train and evaluate the two-model baseline: one backbone per
/// recommendation direction.
///
/// The A-side model trains on matched pairs with an a-initiated record
/// (plus both-direction pairs), the B-side model symmetrically; both
/// exclude every known training match from negative sampling and share the
/// same initialization seed. Each side is then ranked by its own model.
pub fn run_baseline_dual(
    split: &DatasetSplit,
    dim: usize,
    init_seed: u64,
    train_config: &TrainConfig,
    eval_config: &EvalConfig,
) -> Result<(ScoredRun, MetricReport)> {
    let sets = derive_treatment_sets(&split.train);
    let matched = split.train.matched_pairs();
    let pairs_a: BTreeSet<(u32, u32)> = sets.d10.union(&sets.d11).copied().collect();
    let pairs_b: BTreeSet<(u32, u32)> = sets.d01.union(&sets.d11).copied().collect();
    if pairs_a.is_empty() || pairs_b.is_empty() {
        return Err(Error::Validation(
            "dual baseline needs a-initiated and b-initiated matched training pairs".into(),
        ));
    }
    let data_a = TrainData::from_pairs(pairs_a.iter().copied(), &matched);
    let data_b = TrainData::from_pairs(pairs_b.iter().copied(), &matched);
    let validation = MatchSet::from_pairs(split.validation.matched_pairs());
    let init = init_model(
        split.train.side_a_count,
        split.train.side_b_count,
        dim,
        init_seed,
    )?;
    let out_a = train(&init, &data_a, Some(&validation), train_config)?;
    let out_b = train(&init, &data_b, Some(&validation), train_config)?;
    let mut scorer = DualScorer::new(&out_a.model, &out_b.model)?;
    full_rank_evaluate(&mut scorer, split, eval_config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{init_model, StopMetric};
    use crate::crrs::{counterfactual_finetune, init_from_pretrained, potential_outcomes, Strategy};
    use crate::dataset::{generate_synthetic, split, Direction, Interaction};
    use crate::metrics::side_metrics;
    use rand::SeedableRng;

    fn empty_log(n: usize, m: usize) -> InteractionLog {
        InteractionLog::new(n, m, Vec::new()).unwrap()
    }

    fn log_from_pairs(n: usize, m: usize, pairs: &[(u32, u32)]) -> InteractionLog {
        let interactions = pairs
            .iter()
            .flat_map(|&(a, b)| {
                [
                    Interaction { a, b, direction: Direction::AToB, matched: true },
                    Interaction { a, b, direction: Direction::BToA, matched: true },
                ]
            })
            .collect();
        InteractionLog::new(n, m, interactions).unwrap()
    }

    /// A split whose only content is the given test matches.
    fn split_from_test_pairs(n: usize, m: usize, pairs: &[(u32, u32)]) -> DatasetSplit {
        DatasetSplit {
            train: empty_log(n, m),
            validation: empty_log(n, m),
            test: log_from_pairs(n, m, pairs),
            matched_pairs_test: pairs.iter().copied().collect(),
        }
    }

    #[test]
    fn oracle_scorer_hits_the_ceiling() {
        let pairs = [(0, 0), (0, 1), (1, 1), (2, 2)];
        let split = split_from_test_pairs(6, 6, &pairs);
        let matches = MatchSet::from_pairs(pairs);
        let mut scorer = OracleScorer {
            matches: &matches,
            side_a_count: 6,
            side_b_count: 6,
        };
        let config = EvalConfig {
            k: 3,
            ..EvalConfig::default()
        };
        let (_, report) = full_rank_evaluate(&mut scorer, &split, &config).unwrap();
        assert_eq!(report.recall_a, 1.0);
        assert_eq!(report.recall_b, 1.0);
        assert_eq!(report.ndcg_avg, 1.0);
        assert_eq!(report.crecall, 1.0);
        assert_eq!(report.srecall, 1.0);
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn constant_scorer_keeps_first_ids() {
        let model = LatentFactorModel::zeroed(5, 5, 2, false).unwrap();
        let pairs = [(0, 0), (1, 3)];
        let mut split = split_from_test_pairs(5, 5, &pairs);
        let config = EvalConfig {
            k: 3,
            candidate_policy: CandidatePolicy::All,
            ..EvalConfig::default()
        };
        let mut scorer = BackboneScorer::new(&model);
        let (scored, _) = full_rank_evaluate(&mut scorer, &split, &config).unwrap();
        assert_eq!(scored.run.list(Side::A, 0), &[0, 1, 2]);
        assert_eq!(scored.run.list(Side::B, 3), &[0, 1, 2]);
        assert_eq!(scored.scores_a[&0], vec![0.5; 3]);

        // Excluding train positives shifts the ties.
        split.train = log_from_pairs(5, 5, &[(0, 0), (0, 2)]);
        let mut scorer = BackboneScorer::new(&model);
        let exclude = EvalConfig {
            k: 3,
            ..EvalConfig::default()
        };
        let (scored, _) = full_rank_evaluate(&mut scorer, &split, &exclude).unwrap();
        assert_eq!(scored.run.list(Side::A, 0), &[1, 3, 4]);
    }

    #[test]
    fn fresh_bundle_evaluates_like_its_backbone() {
        let backbone = init_model(7, 9, 3, 31).unwrap();
        let bundle = init_from_pretrained(&backbone);
        let pairs = [(0, 2), (1, 1), (3, 0), (6, 8)];
        let split = split_from_test_pairs(7, 9, &pairs);
        let config = EvalConfig {
            k: 4,
            ..EvalConfig::default()
        };
        let (run_backbone, _) =
            full_rank_evaluate(&mut BackboneScorer::new(&backbone), &split, &config).unwrap();
        let mut simple = SimpleCrrsScorer::new(&bundle, ScoreWeights::default()).unwrap();
        let (run_simple, _) = full_rank_evaluate(&mut simple, &split, &config).unwrap();
        assert_eq!(run_backbone.run, run_simple.run);
    }

    #[test]
    fn rerank_scorer_over_tied_models_prefers_a_side_exposure() {
        // All scores 0.5 everywhere, so every pair ties across strategies
        // and the single-sided A preference wins: side A serves 0.5 per
        // candidate, side B serves 0.
        let backbone = LatentFactorModel::zeroed(4, 4, 2, false).unwrap();
        let bundle = init_from_pretrained(&backbone);
        let pairs = [(0, 0), (1, 1)];
        let split = split_from_test_pairs(4, 4, &pairs);
        let (excl_a, excl_b) = positive_exclusion_maps(&[&split.train]);
        let config = EvalConfig {
            k: 2,
            candidate_policy: CandidatePolicy::All,
            ..EvalConfig::default()
        };
        let mut scorer = RerankScorer::new(
            &bundle,
            config.vacant_slot_config(),
            &excl_a,
            &excl_b,
            7,
        )
        .unwrap();
        let (scored, _) = full_rank_evaluate(&mut scorer, &split, &config).unwrap();
        assert_eq!(scored.run.list(Side::A, 0), &[0, 1]);
        assert_eq!(scored.scores_a[&0], vec![0.5, 0.5]);
        assert_eq!(scored.scores_b[&0], vec![0.0, 0.0]);
        assert_eq!(scorer.vacant_slot_table().len(), 8);
        assert_eq!(scorer.vacant_slot_table().get(Side::A, 0), Some(0.5));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let backbone = init_model(8, 8, 3, 3).unwrap();
        let bundle = init_from_pretrained(&backbone);
        let pairs = [(0, 1), (2, 2), (5, 7)];
        let split = split_from_test_pairs(8, 8, &pairs);
        let (excl_a, excl_b) = positive_exclusion_maps(&[&split.train]);
        let config = EvalConfig {
            k: 3,
            ybar_sample_size: 4,
            ..EvalConfig::default()
        };
        let run_once = || {
            let mut scorer = RerankScorer::new(
                &bundle,
                config.vacant_slot_config(),
                &excl_a,
                &excl_b,
                11,
            )
            .unwrap();
            full_rank_evaluate(&mut scorer, &split, &config).unwrap()
        };
        let (scored1, report1) = run_once();
        let (scored2, report2) = run_once();
        assert_eq!(scored1, scored2);
        assert_eq!(report1, report2);
    }

    #[test]
    fn run_dump_matches_expected_layout() {
        let mut run = RecommendationRun::new(2).unwrap();
        run.insert_list(Side::A, 0, vec![3, 1]).unwrap();
        run.insert_list(Side::B, 2, vec![0]).unwrap();
        let scored = ScoredRun {
            run,
            scores_a: [(0, vec![0.75, 0.5])].into(),
            scores_b: [(2, vec![0.25])].into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path_a = dir.path().join("run_a.tsv");
        let path_b = dir.path().join("run_b.tsv");
        scored.write_tsv(Side::A, &path_a).unwrap();
        scored.write_tsv(Side::B, &path_b).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path_a).unwrap(),
            "0\t1\t3\t0.75\n0\t2\t1\t0.5\n"
        );
        assert_eq!(std::fs::read_to_string(&path_b).unwrap(), "2\t1\t0\t0.25\n");
    }

    /// Hand instance where pair (0,0) is mutual and user b0 has an unhit
    /// matched alternative a1.
    fn mutual_instance() -> (RecommendationRun, MatchSet) {
        let matches = MatchSet::from_pairs([(0, 0), (0, 1), (1, 0)]);
        let mut run = RecommendationRun::new(2).unwrap();
        run.insert_list(Side::A, 0, vec![0, 2]).unwrap();
        run.insert_list(Side::A, 1, vec![2, 3]).unwrap();
        run.insert_list(Side::B, 0, vec![0, 3]).unwrap();
        run.insert_list(Side::B, 1, vec![2, 3]).unwrap();
        (run, matches)
    }

    #[test]
    fn adjust_uni_trades_a_mutual_hit_for_coverage() {
        let (run, matches) = mutual_instance();
        let before = compute_report(&run, &matches);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let (adjusted, report) = adjust_uni(&run, &matches, &mut rng);
        assert_eq!(
            report,
            AdjustmentReport {
                candidates: 1,
                replaced: 1,
                ..AdjustmentReport::default()
            }
        );
        // Equal ranks: the side-B occurrence is rewritten, same position,
        // with b0's only neither-side matched counterpart a1.
        assert_eq!(adjusted.list(Side::B, 0), &[1, 3]);
        assert_eq!(adjusted.list(Side::A, 0), &[0, 2]);
        let after = compute_report(&adjusted, &matches);
        for side in [Side::A, Side::B] {
            assert_eq!(
                side_metrics(&run, &matches, side),
                side_metrics(&adjusted, &matches, side)
            );
        }
        assert_eq!(before.crecall, 1.0 / 3.0);
        assert_eq!(after.crecall, 2.0 / 3.0);
        assert_eq!(before.srecall, 1.0 / 3.0);
        assert_eq!(after.srecall, 0.0);
    }

    #[test]
    fn adjust_rep_trades_coverage_for_a_mutual_hit() {
        let matches = MatchSet::from_pairs([(0, 0), (0, 1)]);
        let mut run = RecommendationRun::new(2).unwrap();
        run.insert_list(Side::A, 0, vec![0, 3]).unwrap();
        run.insert_list(Side::B, 0, vec![2, 3]).unwrap();
        run.insert_list(Side::B, 1, vec![0, 2]).unwrap();
        let before = compute_report(&run, &matches);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let (adjusted, report) = adjust_rep(&run, &matches, &mut rng);
        // (0,0) is rewritten to the already-hit-from-B pair (0,1); that
        // makes (0,1) mutual, so its own turn is a stale skip.
        assert_eq!(
            report,
            AdjustmentReport {
                candidates: 2,
                replaced: 1,
                skipped_stale: 1,
                ..AdjustmentReport::default()
            }
        );
        assert_eq!(adjusted.list(Side::A, 0), &[1, 3]);
        let after = compute_report(&adjusted, &matches);
        for side in [Side::A, Side::B] {
            assert_eq!(
                side_metrics(&run, &matches, side),
                side_metrics(&adjusted, &matches, side)
            );
        }
        assert_eq!(before.srecall, 0.0);
        assert_eq!(after.srecall, 0.5);
        assert_eq!(before.crecall, 1.0);
        assert_eq!(after.crecall, 0.5);
    }

    #[test]
    fn adjusters_leave_fixed_points_alone() {
        // Crossed lists: full coverage, no mutual hits, and every matched
        // counterpart is already hit somewhere, so neither adjuster can act.
        let matches = MatchSet::from_pairs([(0, 0), (0, 1), (1, 0), (1, 1)]);
        let mut run = RecommendationRun::new(1).unwrap();
        run.insert_list(Side::A, 0, vec![0]).unwrap();
        run.insert_list(Side::A, 1, vec![1]).unwrap();
        run.insert_list(Side::B, 0, vec![1]).unwrap();
        run.insert_list(Side::B, 1, vec![0]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (same, report) = adjust_uni(&run, &matches, &mut rng);
        assert_eq!(same, run);
        assert_eq!(report.candidates, 0);

        // Mirrored lists: everything mutual, nothing one-sided.
        let mut mirrored = RecommendationRun::new(1).unwrap();
        mirrored.insert_list(Side::A, 0, vec![0]).unwrap();
        mirrored.insert_list(Side::B, 0, vec![0]).unwrap();
        let (same, report) = adjust_rep(&mirrored, &matches, &mut rng);
        assert_eq!(same, mirrored);
        assert_eq!(report.candidates, 0);
    }

    #[test]
    fn adjusters_preserve_side_metrics_on_random_instances() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for _ in 0..150 {
            let (run, matches) = crate::metrics::test_support::random_instance(&mut rng);
            let before = compute_report(&run, &matches);
            for uni in [true, false] {
                let (adjusted, report) = if uni {
                    adjust_uni(&run, &matches, &mut rng)
                } else {
                    adjust_rep(&run, &matches, &mut rng)
                };
                assert_eq!(
                    report.candidates,
                    report.replaced + report.skipped_no_substitute + report.skipped_stale
                );
                for side in [Side::A, Side::B] {
                    assert_eq!(
                        side_metrics(&run, &matches, side),
                        side_metrics(&adjusted, &matches, side),
                        "side metrics drifted (uni = {uni})"
                    );
                }
                for lists in [&adjusted.lists_a, &adjusted.lists_b] {
                    for list in lists.values() {
                        let distinct: BTreeSet<u32> = list.iter().copied().collect();
                        assert_eq!(distinct.len(), list.len());
                    }
                }
                let after = compute_report(&adjusted, &matches);
                if uni {
                    assert!(after.crecall >= before.crecall - 1e-12);
                } else {
                    assert!(after.srecall >= before.srecall - 1e-12);
                    assert!(after.crecall <= before.crecall + 1e-12);
                }
            }
        }
    }

    #[test]
    fn histogram_counts_both_occurrences() {
        let (run, matches) = mutual_instance();
        let hist = redundancy_rank_histogram(&run, &matches);
        // The single mutual pair sits at rank 1 on both sides.
        assert_eq!(hist.counts, vec![2, 0]);
        assert_eq!(hist.total(), 2);

        let matches2 = MatchSet::from_pairs([(0, 0)]);
        let mut run2 = RecommendationRun::new(3).unwrap();
        run2.insert_list(Side::A, 0, vec![0, 1, 2]).unwrap();
        run2.insert_list(Side::B, 0, vec![2, 1, 0]).unwrap();
        let hist2 = redundancy_rank_histogram(&run2, &matches2);
        assert_eq!(hist2.counts, vec![1, 0, 1]);

        let empty = redundancy_rank_histogram(
            &RecommendationRun::new(4).unwrap(),
            &MatchSet::from_pairs([(0, 0)]),
        );
        assert_eq!(empty.counts, vec![0; 4]);
        assert_eq!(empty.total(), 0);
    }

    #[test]
    fn histogram_total_is_twice_the_mutual_pairs() {
        // Two entries per mutual pair, so total / 2 over the matched-pair
        // count reproduces the stability recall exactly.
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (run, matches) = crate::metrics::test_support::random_instance(&mut rng);
            let hist = redundancy_rank_histogram(&run, &matches);
            assert_eq!(hist.total() % 2, 0);
            if matches.pair_count() == 0 {
                assert_eq!(hist.total(), 0);
                continue;
            }
            let srecall = crate::metrics::bilateral_stability(&run, &matches).srecall;
            assert_eq!(
                srecall,
                (hist.total() / 2) as f64 / matches.pair_count() as f64
            );
        }
    }

    #[test]
    fn dual_baseline_collapses_to_one_model_on_symmetric_data() {
        // Every matched pair carries both directions, so the two per-side
        // training sets coincide and, with one shared init, so do the two
        // models; the report must equal a single-backbone evaluation.
        let train_pairs: Vec<(u32, u32)> = (0..8).map(|i| (i, (i + 1) % 8)).collect();
        let split = DatasetSplit {
            train: log_from_pairs(8, 8, &train_pairs),
            validation: empty_log(8, 8),
            test: log_from_pairs(8, 8, &[(0, 3), (2, 6), (5, 5)]),
            matched_pairs_test: [(0, 3), (2, 6), (5, 5)].into(),
        };
        let train_config = TrainConfig {
            max_epochs: 4,
            patience: 10,
            eval_metric: StopMetric::TrainingLoss,
            seed: 21,
            ..TrainConfig::default()
        };
        let eval_config = EvalConfig {
            k: 3,
            ..EvalConfig::default()
        };
        let (dual_run, dual_report) =
            run_baseline_dual(&split, 4, 17, &train_config, &eval_config).unwrap();

        let matched = split.train.matched_pairs();
        let data = TrainData::from_pairs(matched.iter().copied(), &matched);
        let out = train(&init_model(8, 8, 4, 17).unwrap(), &data, None, &train_config).unwrap();
        let (single_run, single_report) =
            full_rank_evaluate(&mut BackboneScorer::new(&out.model), &split, &eval_config)
                .unwrap();
        assert_eq!(dual_run, single_run);
        assert_eq!(dual_report, single_report);
    }

    #[test]
    fn dual_baseline_runs_on_synthetic_data() {
        let log = generate_synthetic(20, 20, 3, 0.3, 7).unwrap();
        let parts = split(&log, (0.8, 0.1, 0.1), 1).unwrap();
        assert!(!parts.matched_pairs_test.is_empty());
        let train_config = TrainConfig {
            max_epochs: 3,
            patience: 5,
            eval_metric: StopMetric::TrainingLoss,
            seed: 2,
            ..TrainConfig::default()
        };
        let eval_config = EvalConfig {
            k: 5,
            ..EvalConfig::default()
        };
        let (_, report) = run_baseline_dual(&parts, 3, 4, &train_config, &eval_config).unwrap();
        for value in [
            report.recall_a,
            report.precision_a,
            report.ndcg_a,
            report.recall_b,
            report.precision_b,
            report.ndcg_b,
            report.recall_avg,
            report.precision_avg,
            report.ndcg_avg,
            report.crecall,
            report.cprecision,
            report.srecall,
            report.sprecision,
            report.rndcg,
        ] {
            assert!((0.0..=1.0).contains(&value), "{value} out of range");
        }
    }

    #[test]
    fn rerank_mutual_hits_come_from_double_exposure_or_padding() {
        // Any matched pair mutually recommended by the rerank rule must
        // either have been explicitly exposed on both sides (strategy
        // BothSides) or have entered a list with serving score 0 (padding
        // when fewer than K candidates score positive). With positive
        // scores on both occurrences, the winning strategy is BothSides.
        let log = generate_synthetic(30, 30, 4, 0.2, 9).unwrap();
        let parts = split(&log, (0.8, 0.1, 0.1), 3).unwrap();
        let train_config = TrainConfig {
            max_epochs: 5,
            patience: 10,
            eval_metric: StopMetric::TrainingLoss,
            seed: 13,
            ..TrainConfig::default()
        };
        let data = TrainData::from_log(&parts.train);
        let pre = train(&init_model(30, 30, 4, 8).unwrap(), &data, None, &train_config).unwrap();
        let sets = derive_treatment_sets(&parts.train);
        let bundle =
            counterfactual_finetune(&init_from_pretrained(&pre.model), &sets, &parts.train, None, &train_config)
                .unwrap()
                .models;

        let (excl_a, excl_b) = positive_exclusion_maps(&[&parts.train]);
        let eval_config = EvalConfig {
            k: 5,
            ..EvalConfig::default()
        };
        let mut scorer = RerankScorer::new(
            &bundle,
            eval_config.vacant_slot_config(),
            &excl_a,
            &excl_b,
            19,
        )
        .unwrap();
        let (scored, _) = full_rank_evaluate(&mut scorer, &parts, &eval_config).unwrap();
        let matches = MatchSet::from_pairs(parts.matched_pairs_test.iter().copied());
        let table = scorer.vacant_slot_table();
        for (a, b) in mutual_pairs(&scored.run, &matches) {
            let outcomes = potential_outcomes(&bundle, a, b).unwrap();
            let ybar_a = table.get(Side::A, a).unwrap();
            let ybar_b = table.get(Side::B, b).unwrap();
            let decision = rerank_decision(&outcomes, ybar_a, ybar_b);
            let rank_a = rank_of(scored.run.list(Side::A, a), b).unwrap();
            let rank_b = rank_of(scored.run.list(Side::B, b), a).unwrap();
            let score_a = scored.scores_a[&a][rank_a];
            let score_b = scored.scores_b[&b][rank_b];
            // Stored entry scores agree with the recomputed decision.
            assert_eq!(score_a, decision.s_a);
            assert_eq!(score_b, decision.s_b);
            if score_a > 0.0 && score_b > 0.0 {
                assert_eq!(decision.strategy, Strategy::BothSides);
            }
        }
    }
}
