//! Treatment-conditioned reciprocal scoring.
//!
//! Three copies of the latent-factor backbone are finetuned on
//! direction-specific subsets of the matched training pairs, so each copy
//! learns what happens under one exposure pattern: counterpart shown on
//! side A's list only (`f10`), on side B's only (`f01`), or on both
//! (`f11`). At serving time the three squashed scores for a pair either
//! feed a simple additive rule, or a reranking step that weighs each
//! exposure pattern against the value of leaving the slot open for the
//! next-best alternative (the "vacant slot").

use crate::backbone::train::recall_from_scores;
use crate::backbone::{
    bpr_loss_and_grad, sample_negative, AdamConfig, BprTriple, EpochRecord, LatentFactorModel,
    NegKind, OptimizerState, StopMetric, TrainConfig, TrainData,
};
use crate::dataset::{InteractionLog, TreatmentSets};
use crate::error::{Error, Result};
use crate::metrics::MatchSet;
use crate::types::Side;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// Pipeline position of a treatment-model bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TreatmentStage {
    /// Fresh copies of the pretrained backbone; no counterfactual pass yet.
    Initialized,
    /// The per-treatment finetuning pass has run.
    Finetuned,
}

/// The three treatment-conditioned models plus the backbone they started
/// from.
///
/// The pretrained backbone is retained unmodified; it supplies vacant-slot
/// values at rerank time.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentModels {
    /// Scores pairs whose counterpart is exposed on side A's list only.
    pub f10: LatentFactorModel,
    /// Scores pairs exposed on both lists.
    pub f11: LatentFactorModel,
    /// Scores pairs exposed on side B's list only.
    pub f01: LatentFactorModel,
    pub pretrained: LatentFactorModel,
    pub stage: TreatmentStage,
}

const TREATMENT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct TreatmentFileRef<'a> {
    format_version: u32,
    stage: TreatmentStage,
    f10: &'a LatentFactorModel,
    f11: &'a LatentFactorModel,
    f01: &'a LatentFactorModel,
    pretrained: &'a LatentFactorModel,
}

#[derive(Deserialize)]
struct TreatmentFile {
    format_version: u32,
    stage: TreatmentStage,
    f10: LatentFactorModel,
    f11: LatentFactorModel,
    f01: LatentFactorModel,
    pretrained: LatentFactorModel,
}

impl TreatmentModels {
    /// All four models must agree on shape (and bias mode).
    pub fn validate(&self) -> Result<()> {
        let shape = |m: &LatentFactorModel| (m.n(), m.m(), m.d(), m.use_bias());
        let base = shape(&self.pretrained);
        for (name, model) in [("f10", &self.f10), ("f11", &self.f11), ("f01", &self.f01)] {
            if shape(model) != base {
                return Err(Error::Validation(format!(
                    "treatment model {name} has shape {:?}, expected {:?}",
                    shape(model),
                    base
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.pretrained.n()
    }

    pub fn m(&self) -> usize {
        self.pretrained.m()
    }

    pub fn d(&self) -> usize {
        self.pretrained.d()
    }

    /// Write the bundle (four model checkpoints plus stage) as JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(
            file,
            &TreatmentFileRef {
                format_version: TREATMENT_FORMAT_VERSION,
                stage: self.stage,
                f10: &self.f10,
                f11: &self.f11,
                f01: &self.f01,
                pretrained: &self.pretrained,
            },
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TreatmentModels> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let tf: TreatmentFile = serde_json::from_reader(file)?;
        if tf.format_version != TREATMENT_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported treatment bundle version {} (expected {})",
                tf.format_version, TREATMENT_FORMAT_VERSION
            )));
        }
        let models = TreatmentModels {
            f10: tf.f10,
            f11: tf.f11,
            f01: tf.f01,
            pretrained: tf.pretrained,
            stage: tf.stage,
        };
        models.validate()?;
        Ok(models)
    }
}

/// Deep-copy the pretrained backbone into the three treatment models. All
/// four members score every pair identically until finetuning runs; the
/// copy is deterministic and leaves `backbone` untouched.
pub fn init_from_pretrained(backbone: &LatentFactorModel) -> TreatmentModels {
    TreatmentModels {
        f10: backbone.clone(),
        f11: backbone.clone(),
        f01: backbone.clone(),
        pretrained: backbone.clone(),
        stage: TreatmentStage::Initialized,
    }
}

/// Build the triple groups for one mini-batch of matched pairs.
///
/// Returns `(shared, t11, t10, t01)`. The shared group holds one A-side
/// and one B-side ranking term per pair with fresh negatives; every model
/// evaluates it against its own parameters, which keeps each gradient
/// self-contained. The routed groups follow the pair's treatment: a d11
/// pair contributes its A-negative and B-negative terms to t11 and one
/// each to t01 / t10 (four routed terms total), a d01 pair one A-negative
/// term to t01, a d10 pair one B-negative term to t10. Within a pair the
/// routed terms reuse a single negative draw per side.
pub(crate) fn route_batch(
    pairs: &[(u32, u32)],
    sets: &TreatmentSets,
    data: &TrainData,
    n: usize,
    m: usize,
    negatives_per_positive: usize,
    rng: &mut ChaCha20Rng,
) -> (
    Vec<BprTriple>,
    Vec<BprTriple>,
    Vec<BprTriple>,
    Vec<BprTriple>,
) {
    let empty = BTreeSet::new();
    let mut shared = Vec::new();
    let mut t11 = Vec::new();
    let mut t10 = Vec::new();
    let mut t01 = Vec::new();
    for &(a, b) in pairs {
        let ex_a = data.exclusions_a.get(&a).unwrap_or(&empty);
        let ex_b = data.exclusions_b.get(&b).unwrap_or(&empty);
        for _ in 0..negatives_per_positive {
            match sample_negative(m, ex_a, rng) {
                Ok(neg) if neg != b => shared.push(BprTriple {
                    a,
                    b,
                    neg,
                    kind: NegKind::ForA,
                }),
                Ok(_) => {}
                Err(_) => log::debug!("no shared A-side negative for user {a}; skipping"),
            }
            match sample_negative(n, ex_b, rng) {
                Ok(neg) if neg != a => shared.push(BprTriple {
                    a,
                    b,
                    neg,
                    kind: NegKind::ForB,
                }),
                Ok(_) => {}
                Err(_) => log::debug!("no shared B-side negative for user {b}; skipping"),
            }
            let for_a = match sample_negative(m, ex_a, rng) {
                Ok(neg) if neg != b => Some(BprTriple {
                    a,
                    b,
                    neg,
                    kind: NegKind::ForA,
                }),
                Ok(_) => None,
                Err(_) => {
                    log::debug!("no routed A-side negative for user {a}; skipping");
                    None
                }
            };
            let for_b = match sample_negative(n, ex_b, rng) {
                Ok(neg) if neg != a => Some(BprTriple {
                    a,
                    b,
                    neg,
                    kind: NegKind::ForB,
                }),
                Ok(_) => None,
                Err(_) => {
                    log::debug!("no routed B-side negative for user {b}; skipping");
                    None
                }
            };
            if sets.d11.contains(&(a, b)) {
                if let Some(t) = for_a {
                    t11.push(t);
                    t01.push(t);
                }
                if let Some(t) = for_b {
                    t11.push(t);
                    t10.push(t);
                }
            } else if sets.d01.contains(&(a, b)) {
                if let Some(t) = for_a {
                    t01.push(t);
                }
            } else if sets.d10.contains(&(a, b)) {
                if let Some(t) = for_b {
                    t10.push(t);
                }
            }
        }
    }
    (shared, t11, t10, t01)
}

/// Recall@k of the simple additive rule on `validation` matches: side A
/// ranks by f10 + f11 scores, side B by f01 + f11, excluding each user's
/// training positives. Used as the finetuning early-stopping metric.
fn simple_rule_recall(
    f10: &LatentFactorModel,
    f11: &LatentFactorModel,
    f01: &LatentFactorModel,
    data: &TrainData,
    validation: &MatchSet,
    k: usize,
) -> Result<f64> {
    let mut side_vals = [0.0f64; 2];
    for (slot, side) in [Side::A, Side::B].into_iter().enumerate() {
        let (one_sided, exclusions) = match side {
            Side::A => (f10, &data.exclusions_a),
            Side::B => (f01, &data.exclusions_b),
        };
        let mut sum = 0.0;
        let mut count = 0usize;
        for user in validation.users(side) {
            let s1 = one_sided.scores_for(side, user)?;
            let s2 = f11.scores_for(side, user)?;
            let scores: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| x + y).collect();
            let user_matches = validation.matches_of(side, user).expect("evaluable user");
            sum += recall_from_scores(&scores, exclusions.get(&user), user_matches, k);
            count += 1;
        }
        side_vals[slot] = if count == 0 { 0.0 } else { sum / count as f64 };
    }
    Ok((side_vals[0] + side_vals[1]) / 2.0)
}

/// Result of the counterfactual finetuning pass.
#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    /// Best-epoch snapshot of the three treatment models; the pretrained
    /// member is carried through unchanged.
    pub models: TreatmentModels,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Finetune the three treatment models on their direction-specific match
/// subsets.
///
/// Each epoch walks the union of the treatment sets in shuffled mini
/// batches. Per batch, every model's loss is its routed ranking terms (see
/// [`route_batch`]) plus the shared ranking terms evaluated against its own
/// scores; each loss backpropagates into its own model only, through its
/// own optimizer. A model whose treatment set is empty receives only the
/// shared component (a warning is logged). Early stopping mirrors backbone
/// training: the stopping metric is either the simple additive rule's
/// validation recall or the negated epoch loss, and the best-epoch snapshot
/// of the whole triple is returned. Fully deterministic given the config
/// seed.
pub fn counterfactual_finetune(
    models: &TreatmentModels,
    sets: &TreatmentSets,
    train_log: &InteractionLog,
    validation: Option<&MatchSet>,
    config: &TrainConfig,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    models.validate()?;
    if train_log.side_a_count != models.n() || train_log.side_b_count != models.m() {
        return Err(Error::Validation(format!(
            "train log is {}x{} users but the models are {}x{}",
            train_log.side_a_count,
            train_log.side_b_count,
            models.n(),
            models.m()
        )));
    }
    let matched = train_log.matched_pairs();
    let all_pairs = sets.all_pairs();
    if let Some(&(a, b)) = all_pairs.iter().find(|p| !matched.contains(p)) {
        return Err(Error::Validation(format!(
            "treatment pair ({a}, {b}) is not a matched pair of the train log"
        )));
    }
    if all_pairs.is_empty() {
        return Err(Error::Validation(
            "treatment sets contain no pairs to finetune on".into(),
        ));
    }
    for (name, set) in [
        ("both-direction", &sets.d11),
        ("a-to-b-only", &sets.d10),
        ("b-to-a-only", &sets.d01),
    ] {
        if set.is_empty() {
            log::warn!(
                "treatment set {name} is empty; its model receives only the shared ranking loss"
            );
        }
    }
    let validation_set = match config.eval_metric {
        StopMetric::ValidationRecall => Some(validation.ok_or_else(|| {
            Error::Config("recall-based early stopping needs validation matches".into())
        })?),
        StopMetric::TrainingLoss => None,
    };

    let data = TrainData::from_pairs(all_pairs.iter().copied(), &matched);
    let pairs: Vec<(u32, u32)> = all_pairs.into_iter().collect();
    let (n, m) = (models.n(), models.m());

    let mut f10 = models.f10.clone();
    let mut f11 = models.f11.clone();
    let mut f01 = models.f01.clone();
    let adam = AdamConfig::with_learning_rate(config.learning_rate);
    let mut opt10 = OptimizerState::new(f10.param_len(), adam);
    let mut opt11 = OptimizerState::new(f11.param_len(), adam);
    let mut opt01 = OptimizerState::new(f01.param_len(), adam);

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut history = Vec::new();
    let mut best = (f10.clone(), f11.clone(), f01.clone());
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk_ids in order.chunks(config.batch_size) {
            let chunk: Vec<(u32, u32)> = chunk_ids.iter().map(|&i| pairs[i]).collect();
            let (shared, t11, t10, t01) = route_batch(
                &chunk,
                sets,
                &data,
                n,
                m,
                config.negatives_per_positive,
                &mut rng,
            );
            let mut batch_loss = 0.0;
            for (model, opt, routed) in [
                (&mut f10, &mut opt10, &t10),
                (&mut f11, &mut opt11, &t11),
                (&mut f01, &mut opt01, &t01),
            ] {
                if routed.is_empty() && shared.is_empty() {
                    continue;
                }
                let mut loss_t = 0.0;
                let mut grad = vec![0.0; model.param_len()];
                for triples in [routed.as_slice(), shared.as_slice()] {
                    if triples.is_empty() {
                        continue;
                    }
                    let (l, g) = bpr_loss_and_grad(model, triples, config.l2_weight)?;
                    loss_t += l;
                    for (acc, add) in grad.iter_mut().zip(&g) {
                        *acc += add;
                    }
                }
                opt.apply(model.params_mut(), &grad);
                batch_loss += loss_t;
            }
            loss_sum += batch_loss / 3.0;
            batches += 1;
        }
        let epoch_loss = if batches == 0 {
            0.0
        } else {
            loss_sum / batches as f64
        };
        let metric = match config.eval_metric {
            StopMetric::ValidationRecall => simple_rule_recall(
                &f10,
                &f11,
                &f01,
                &data,
                validation_set.expect("checked"),
                config.eval_k,
            )?,
            StopMetric::TrainingLoss => -epoch_loss,
        };
        history.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            validation: metric,
        });
        if metric > best_metric {
            best_metric = metric;
            best = (f10.clone(), f11.clone(), f01.clone());
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    Ok(FinetuneOutcome {
        models: TreatmentModels {
            f10: best.0,
            f11: best.1,
            f01: best.2,
            pretrained: models.pretrained.clone(),
            stage: TreatmentStage::Finetuned,
        },
        history,
        best_epoch,
    })
}

/// Squashed scores for one pair under each exposure pattern. The
/// no-exposure outcome is identically zero and is not stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialOutcomes {
    pub y10: f64,
    pub y11: f64,
    pub y01: f64,
}

/// Score the pair (a, b) with each of the three treatment models.
pub fn potential_outcomes(models: &TreatmentModels, a: u32, b: u32) -> Result<PotentialOutcomes> {
    Ok(PotentialOutcomes {
        y10: models.f10.score(a, b)?,
        y11: models.f11.score(a, b)?,
        y01: models.f01.score(a, b)?,
    })
}

/// Per-outcome weights for the additive serving scores; all 1 by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub w10: f64,
    pub w11: f64,
    pub w01: f64,
}

impl Default for ScoreWeights {
    fn default() -> ScoreWeights {
        ScoreWeights {
            w10: 1.0,
            w11: 1.0,
            w01: 1.0,
        }
    }
}

/// Additive serving scores: side A ranks the counterpart by y10 + y11,
/// side B by y01 + y11.
pub fn simple_scores(outcomes: &PotentialOutcomes) -> (f64, f64) {
    simple_scores_weighted(outcomes, &ScoreWeights::default())
}

/// [`simple_scores`] with configurable weights.
pub fn simple_scores_weighted(outcomes: &PotentialOutcomes, weights: &ScoreWeights) -> (f64, f64) {
    (
        weights.w10 * outcomes.y10 + weights.w11 * outcomes.y11,
        weights.w01 * outcomes.y01 + weights.w11 * outcomes.y11,
    )
}

/// Controls the vacant-slot estimate: how many counterparts to sample and
/// how many of the best sampled scores to average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VacantSlotConfig {
    pub sample_size: usize,
    /// Number of top sampled scores averaged; 1 means the slot is valued
    /// at the best available alternative.
    pub top_q: usize,
}

impl Default for VacantSlotConfig {
    fn default() -> VacantSlotConfig {
        VacantSlotConfig {
            sample_size: 100,
            top_q: 1,
        }
    }
}

/// Expected value of leaving one of `user`'s recommendation slots open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VacantSlotEstimate {
    pub side: Side,
    pub user: u32,
    pub ybar: f64,
    /// Counterparts actually sampled (the request is capped at the
    /// available pool).
    pub sample_size: usize,
}

/// Estimate what a slot on `user`'s list would earn if given to somebody
/// other than the pair under consideration: sample counterparts uniformly
/// without replacement, score them with the pretrained backbone, and
/// average the best `top_q` scores. Deterministic given the rng state.
pub fn vacant_slot_value(
    pretrained: &LatentFactorModel,
    side: Side,
    user: u32,
    exclusions: Option<&BTreeSet<u32>>,
    config: &VacantSlotConfig,
    rng: &mut ChaCha20Rng,
) -> Result<VacantSlotEstimate> {
    if config.sample_size == 0 {
        return Err(Error::Config("vacant-slot sample_size must be >= 1".into()));
    }
    if config.top_q == 0 {
        return Err(Error::Config("vacant-slot top_q must be >= 1".into()));
    }
    let opposite = pretrained.side_count(side.other());
    let allowed: Vec<u32> = (0..opposite as u32)
        .filter(|c| exclusions.is_none_or(|e| !e.contains(c)))
        .collect();
    if allowed.is_empty() {
        return Err(Error::NoCandidate(format!(
            "no counterpart available to estimate the vacant slot of side-{side} user {user}"
        )));
    }
    let take = config.sample_size.min(allowed.len());
    let mut scores = rand::seq::index::sample(rng, allowed.len(), take)
        .into_iter()
        .map(|i| {
            let (a, b) = side.pair(user, allowed[i]);
            pretrained.score(a, b)
        })
        .collect::<Result<Vec<f64>>>()?;
    scores.sort_by(|x, y| y.partial_cmp(x).expect("finite scores"));
    let q = config.top_q.min(take);
    let ybar = scores[..q].iter().sum::<f64>() / q as f64;
    Ok(VacantSlotEstimate {
        side,
        user,
        ybar,
        sample_size: take,
    })
}

/// Per-evaluation cache of vacant-slot values keyed by side and user, so
/// each estimate is computed once per run.
#[derive(Debug, Clone, Default)]
pub struct VacantSlotTable {
    values: BTreeMap<(Side, u32), f64>,
}

impl VacantSlotTable {
    pub fn new() -> VacantSlotTable {
        VacantSlotTable::default()
    }

    pub fn get(&self, side: Side, user: u32) -> Option<f64> {
        self.values.get(&(side, user)).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Look up the cached value, or compute and remember it. A cache hit
    /// leaves the rng untouched.
    #[allow(clippy::too_many_arguments)]
    pub fn get_or_compute(
        &mut self,
        pretrained: &LatentFactorModel,
        side: Side,
        user: u32,
        exclusions: Option<&BTreeSet<u32>>,
        config: &VacantSlotConfig,
        rng: &mut ChaCha20Rng,
    ) -> Result<f64> {
        if let Some(v) = self.values.get(&(side, user)) {
            return Ok(*v);
        }
        let est = vacant_slot_value(pretrained, side, user, exclusions, config, rng)?;
        self.values.insert((side, user), est.ybar);
        Ok(est.ybar)
    }
}

/// Exposure pattern chosen for a pair at rerank time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Show the counterpart on side A's list only.
    ASideOnly,
    /// Show on side B's list only.
    BSideOnly,
    /// Show on both lists.
    BothSides,
    /// Leave both slots for other candidates.
    NeitherSide,
}

/// Outcome of weighing a pair's potential outcomes against its users'
/// vacant-slot values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankDecision {
    pub strategy: Strategy,
    /// Serving score for the pair on side A's list (0 unless side A
    /// exposes it).
    pub s_a: f64,
    pub s_b: f64,
}

/// Pick the exposure pattern with the highest total expected matching:
/// one-sided exposure earns the pair outcome plus the other user's
/// vacant-slot value, double exposure earns y11, no exposure earns both
/// vacant-slot values. Exact ties prefer single-sided exposure (A side
/// first), then double, then none — one-sided wins avoid spending both
/// users' slots on the same pair. The returned serving scores credit only
/// the exposed side(s).
pub fn rerank_decision(outcomes: &PotentialOutcomes, ybar_a: f64, ybar_b: f64) -> RerankDecision {
    let s10 = outcomes.y10 + ybar_b;
    let s01 = outcomes.y01 + ybar_a;
    let s11 = outcomes.y11;
    let s00 = ybar_a + ybar_b;
    let max = s10.max(s01).max(s11).max(s00);
    let (strategy, s_a, s_b) = if s10 == max {
        (Strategy::ASideOnly, outcomes.y10, 0.0)
    } else if s01 == max {
        (Strategy::BSideOnly, 0.0, outcomes.y01)
    } else if s11 == max {
        (Strategy::BothSides, outcomes.y11, outcomes.y11)
    } else {
        (Strategy::NeitherSide, 0.0, 0.0)
    };
    RerankDecision { strategy, s_a, s_b }
}

/// The two serving scores from [`rerank_decision`].
pub fn rerank_scores(outcomes: &PotentialOutcomes, ybar_a: f64, ybar_b: f64) -> (f64, f64) {
    let decision = rerank_decision(outcomes, ybar_a, ybar_b);
    (decision.s_a, decision.s_b)
}
