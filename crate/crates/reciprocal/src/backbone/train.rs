//! Pairwise-ranking (BPR) training for the latent-factor model: triple
//! construction with uniform negative sampling, analytic gradients on
//! pre-squash logits, mini-batch epochs, and best-snapshot early stopping.

use crate::backbone::{sigmoid, AdamConfig, LatentFactorModel, OptimizerState};
use crate::dataset::InteractionLog;
use crate::error::{Error, Result};
use crate::metrics::MatchSet;
use crate::types::Side;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Which side of the positive pair the sampled negative replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegKind {
    /// Negative is a side-B id: rank (a, b) above (a, neg).
    ForA,
    /// Negative is a side-A id: rank (a, b) above (neg, b).
    ForB,
}

/// One ranking constraint: the positive pair (a, b) should outscore the
/// same pair with one side replaced by `neg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BprTriple {
    pub a: u32,
    pub b: u32,
    pub neg: u32,
    pub kind: NegKind,
}

/// Uniform draw from the opposite side, avoiding `exclusions`. Falls back
/// to an explicit scan of candidates when rejection sampling keeps
/// colliding with excluded ids.
pub fn sample_negative(
    opposite_count: usize,
    exclusions: &BTreeSet<u32>,
    rng: &mut ChaCha20Rng,
) -> Result<u32> {
    let excluded_in_range = exclusions
        .iter()
        .filter(|&&e| (e as usize) < opposite_count)
        .count();
    if excluded_in_range >= opposite_count {
        return Err(Error::NoCandidate(
            "every opposite-side user is excluded from negative sampling".into(),
        ));
    }
    for _ in 0..32 {
        let candidate = rng.random_range(0..opposite_count as u32);
        if !exclusions.contains(&candidate) {
            return Ok(candidate);
        }
    }
    let allowed: Vec<u32> = (0..opposite_count as u32)
        .filter(|c| !exclusions.contains(c))
        .collect();
    Ok(allowed[rng.random_range(0..allowed.len())])
}

/// Positive pairs to rank plus per-user exclusion sets that negatives are
/// sampled around.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainData {
    pub positive_pairs: Vec<(u32, u32)>,
    pub exclusions_a: BTreeMap<u32, BTreeSet<u32>>,
    pub exclusions_b: BTreeMap<u32, BTreeSet<u32>>,
}

impl TrainData {
    /// Positives = matched pairs of the log; exclusions = each user's
    /// matched counterparts (a known match is never used as a negative).
    pub fn from_log(log: &InteractionLog) -> TrainData {
        let matched = log.matched_pairs();
        TrainData::from_pairs(matched.iter().copied(), &matched)
    }

    /// Custom positive subset with an explicit exclusion pair set (useful
    /// when a model trains on one side's pairs but must still avoid all
    /// known matches as negatives).
    pub fn from_pairs<I>(positives: I, exclusion_pairs: &BTreeSet<(u32, u32)>) -> TrainData
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        let mut exclusions_a: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        let mut exclusions_b: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        for &(a, b) in exclusion_pairs {
            exclusions_a.entry(a).or_default().insert(b);
            exclusions_b.entry(b).or_default().insert(a);
        }
        TrainData {
            positive_pairs: positives.into_iter().collect(),
            exclusions_a,
            exclusions_b,
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mean BPR loss over the triples plus an L2 penalty on each triple's
/// touched embedding vectors, with the dense analytic gradient.
///
/// The ranking difference is taken on logits; per triple the loss is
/// `-log sigmoid(logit_pos - logit_neg)`.
pub fn bpr_loss_and_grad(
    model: &LatentFactorModel,
    triples: &[BprTriple],
    l2_weight: f64,
) -> Result<(f64, Vec<f64>)> {
    if triples.is_empty() {
        return Err(Error::Validation("BPR loss needs at least one triple".into()));
    }
    let d = model.d();
    let mut grad = vec![0.0; model.param_len()];
    let inv = 1.0 / triples.len() as f64;
    let reg = l2_weight * inv;
    let mut loss = 0.0;

    for t in triples {
        let (pos_logit, neg_logit) = match t.kind {
            NegKind::ForA => {
                if t.neg == t.b {
                    return Err(Error::Validation(format!(
                        "triple for pair ({}, {}) uses its own positive as negative",
                        t.a, t.b
                    )));
                }
                (model.logit(t.a, t.b)?, model.logit(t.a, t.neg)?)
            }
            NegKind::ForB => {
                if t.neg == t.a {
                    return Err(Error::Validation(format!(
                        "triple for pair ({}, {}) uses its own positive as negative",
                        t.a, t.b
                    )));
                }
                (model.logit(t.a, t.b)?, model.logit(t.neg, t.b)?)
            }
        };
        let z = pos_logit - neg_logit;
        loss += softplus(-z) * inv;
        let g = -sigmoid(-z) * inv;

        match t.kind {
            NegKind::ForA => {
                let ua = model.a_offset(t.a as usize);
                let vb = model.b_offset(t.b as usize);
                let vn = model.b_offset(t.neg as usize);
                for i in 0..d {
                    let (pu, pb, pn) = (
                        model.params()[ua + i],
                        model.params()[vb + i],
                        model.params()[vn + i],
                    );
                    grad[ua + i] += g * (pb - pn) + 2.0 * reg * pu;
                    grad[vb + i] += g * pu + 2.0 * reg * pb;
                    grad[vn + i] += -g * pu + 2.0 * reg * pn;
                    loss += reg * (pu * pu + pb * pb + pn * pn);
                }
                if model.use_bias() {
                    grad[model.bias_b_index(t.b as usize)] += g;
                    grad[model.bias_b_index(t.neg as usize)] -= g;
                }
            }
            NegKind::ForB => {
                let ua = model.a_offset(t.a as usize);
                let un = model.a_offset(t.neg as usize);
                let vb = model.b_offset(t.b as usize);
                for i in 0..d {
                    let (pu, pn, pb) = (
                        model.params()[ua + i],
                        model.params()[un + i],
                        model.params()[vb + i],
                    );
                    grad[ua + i] += g * pb + 2.0 * reg * pu;
                    grad[un + i] += -g * pb + 2.0 * reg * pn;
                    grad[vb + i] += g * (pu - pn) + 2.0 * reg * pb;
                    loss += reg * (pu * pu + pn * pn + pb * pb);
                }
                if model.use_bias() {
                    grad[model.bias_a_index(t.a as usize)] += g;
                    grad[model.bias_a_index(t.neg as usize)] -= g;
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Validation quantity watched by early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopMetric {
    /// Mean of the two sides' Recall@eval_k on held-out matches,
    /// excluding training positives from the candidate pool.
    ValidationRecall,
    /// Negated epoch training loss (for runs without a validation set).
    TrainingLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub l2_weight: f64,
    pub eval_metric: StopMetric,
    /// List length for the validation-recall stopping metric.
    pub eval_k: usize,
    pub negatives_per_positive: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 1024,
            max_epochs: 200,
            patience: 30,
            seed: 0,
            l2_weight: 1e-6,
            eval_metric: StopMetric::ValidationRecall,
            eval_k: 10,
            negatives_per_positive: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.eval_k == 0 {
            return Err(Error::Config("eval_k must be >= 1".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("negatives_per_positive must be >= 1".into()));
        }
        if self.l2_weight < 0.0 {
            return Err(Error::Config("l2_weight must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Value of the stopping metric after this epoch (higher is better).
    pub validation: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot of the best-scoring epoch, not the last one.
    pub model: LatentFactorModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Fraction of `user_matches` present in the top `k` candidates when the
/// candidate ids `0..scores.len()` are ranked by descending score (ties by
/// ascending id), skipping any id in `excluded`.
pub(crate) fn recall_from_scores(
    scores: &[f64],
    excluded: Option<&BTreeSet<u32>>,
    user_matches: &BTreeSet<u32>,
    k: usize,
) -> f64 {
    let mut candidates: Vec<u32> = (0..scores.len() as u32)
        .filter(|c| excluded.is_none_or(|e| !e.contains(c)))
        .collect();
    candidates.sort_by(|&x, &y| {
        scores[y as usize]
            .partial_cmp(&scores[x as usize])
            .expect("finite scores")
            .then(x.cmp(&y))
    });
    let top = &candidates[..k.min(candidates.len())];
    let hits = top.iter().filter(|c| user_matches.contains(c)).count();
    hits as f64 / user_matches.len() as f64
}

fn side_recall_at_k(
    model: &LatentFactorModel,
    side: Side,
    matches: &MatchSet,
    exclusions: &BTreeMap<u32, BTreeSet<u32>>,
    k: usize,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for user in matches.users(side) {
        let scores = model.scores_for(side, user)?;
        let user_matches = matches.matches_of(side, user).expect("evaluable user");
        sum += recall_from_scores(&scores, exclusions.get(&user), user_matches, k);
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Mean of the two sides' Recall@k on `validation` matches, ranking every
/// opposite-side candidate except the user's training positives.
pub fn validation_recall(
    model: &LatentFactorModel,
    data: &TrainData,
    validation: &MatchSet,
    k: usize,
) -> Result<f64> {
    let ra = side_recall_at_k(model, Side::A, validation, &data.exclusions_a, k)?;
    let rb = side_recall_at_k(model, Side::B, validation, &data.exclusions_b, k)?;
    Ok((ra + rb) / 2.0)
}

/// Mini-batch BPR training with early stopping on the configured metric.
/// Returns the best-epoch snapshot and the per-epoch history. Fully
/// deterministic given the config seed.
pub fn train(
    initial: &LatentFactorModel,
    data: &TrainData,
    validation: Option<&MatchSet>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.positive_pairs.is_empty() {
        return Err(Error::Validation("training data has no positive pairs".into()));
    }
    let validation_set = match config.eval_metric {
        StopMetric::ValidationRecall => Some(validation.ok_or_else(|| {
            Error::Config("recall-based early stopping needs validation matches".into())
        })?),
        StopMetric::TrainingLoss => None,
    };

    let mut model = initial.clone();
    let mut opt = OptimizerState::new(
        model.param_len(),
        AdamConfig::with_learning_rate(config.learning_rate),
    );
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut history = Vec::new();
    let mut best_model = model.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..data.positive_pairs.len()).collect();
    let empty = BTreeSet::new();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_weighted = 0.0;
        let mut triple_total = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut triples =
                Vec::with_capacity(chunk.len() * 2 * config.negatives_per_positive);
            for &i in chunk {
                let (a, b) = data.positive_pairs[i];
                let ex_a = data.exclusions_a.get(&a).unwrap_or(&empty);
                let ex_b = data.exclusions_b.get(&b).unwrap_or(&empty);
                for _ in 0..config.negatives_per_positive {
                    match sample_negative(model.m(), ex_a, &mut rng) {
                        Ok(neg) if neg != b => triples.push(BprTriple {
                            a,
                            b,
                            neg,
                            kind: NegKind::ForA,
                        }),
                        Ok(_) => {}
                        Err(_) => {
                            log::debug!("no negative candidate for side-A user {a}; skipping")
                        }
                    }
                    match sample_negative(model.n(), ex_b, &mut rng) {
                        Ok(neg) if neg != a => triples.push(BprTriple {
                            a,
                            b,
                            neg,
                            kind: NegKind::ForB,
                        }),
                        Ok(_) => {}
                        Err(_) => {
                            log::debug!("no negative candidate for side-B user {b}; skipping")
                        }
                    }
                }
            }
            if triples.is_empty() {
                continue;
            }
            let (loss, grad) = bpr_loss_and_grad(&model, &triples, config.l2_weight)?;
            opt.apply(model.params_mut(), &grad);
            loss_weighted += loss * triples.len() as f64;
            triple_total += triples.len();
        }
        let epoch_loss = if triple_total == 0 {
            0.0
        } else {
            loss_weighted / triple_total as f64
        };
        let metric = match config.eval_metric {
            StopMetric::ValidationRecall => {
                validation_recall(&model, data, validation_set.expect("checked"), config.eval_k)?
            }
            StopMetric::TrainingLoss => -epoch_loss,
        };
        history.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            validation: metric,
        });
        if metric > best_metric {
            best_metric = metric;
            best_model = model.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best_model,
        history,
        best_epoch,
    })
}
