//! Latent-factor scoring model shared by every recommender in this crate.
//!
//! Each user on each side owns a d-dimensional embedding; the predicted
//! relevance of a cross-side pair is the logistic squash of the embedding
//! dot product (optionally plus per-user biases), so reported scores live
//! in (0, 1). Training is pairwise ranking on logits ([`train`] submodule)
//! with adaptive-moment updates ([`optim`]).

pub mod optim;
pub mod train;

pub use optim::{AdamConfig, OptimizerState};
pub use train::{
    bpr_loss_and_grad, sample_negative, train, validation_recall, BprTriple, EpochRecord,
    NegKind, StopMetric, TrainConfig, TrainData, TrainOutcome,
};

use crate::error::{Error, Result};
use crate::types::Side;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Embeddings for n side-A users and m side-B users, flattened into one
/// parameter vector: `[emb_a | emb_b | bias_a | bias_b]` (bias segments
/// only when biases are enabled).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFactorModel {
    n: usize,
    m: usize,
    d: usize,
    use_bias: bool,
    params: Vec<f64>,
}

const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk JSON form of a model checkpoint.
#[derive(Serialize, Deserialize)]
struct ModelCheckpoint {
    format_version: u32,
    n: usize,
    m: usize,
    d: usize,
    use_bias: bool,
    emb_a: Vec<f64>,
    emb_b: Vec<f64>,
    bias_a: Vec<f64>,
    bias_b: Vec<f64>,
}

impl LatentFactorModel {
    fn shape_len(n: usize, m: usize, d: usize, use_bias: bool) -> usize {
        (n + m) * d + if use_bias { n + m } else { 0 }
    }

    pub fn zeroed(n: usize, m: usize, d: usize, use_bias: bool) -> Result<LatentFactorModel> {
        if n == 0 || m == 0 || d == 0 {
            return Err(Error::Config(format!(
                "model shape must be positive, got n={n}, m={m}, d={d}"
            )));
        }
        Ok(LatentFactorModel {
            n,
            m,
            d,
            use_bias,
            params: vec![0.0; Self::shape_len(n, m, d, use_bias)],
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn use_bias(&self) -> bool {
        self.use_bias
    }

    /// Users on one side, counted.
    pub fn side_count(&self, side: Side) -> usize {
        match side {
            Side::A => self.n,
            Side::B => self.m,
        }
    }

    pub fn param_len(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn a_offset(&self, a: usize) -> usize {
        a * self.d
    }

    fn b_offset(&self, b: usize) -> usize {
        (self.n + b) * self.d
    }

    fn bias_a_index(&self, a: usize) -> usize {
        (self.n + self.m) * self.d + a
    }

    fn bias_b_index(&self, b: usize) -> usize {
        (self.n + self.m) * self.d + self.n + b
    }

    pub fn emb_a(&self, a: u32) -> &[f64] {
        let off = self.a_offset(a as usize);
        &self.params[off..off + self.d]
    }

    pub fn emb_b(&self, b: u32) -> &[f64] {
        let off = self.b_offset(b as usize);
        &self.params[off..off + self.d]
    }

    fn check_pair(&self, a: u32, b: u32) -> Result<()> {
        if a as usize >= self.n {
            return Err(Error::Index(format!("side A id {a} >= n = {}", self.n)));
        }
        if b as usize >= self.m {
            return Err(Error::Index(format!("side B id {b} >= m = {}", self.m)));
        }
        Ok(())
    }

    pub(crate) fn logit_unchecked(&self, a: u32, b: u32) -> f64 {
        let ua = self.emb_a(a);
        let vb = self.emb_b(b);
        let mut z: f64 = ua.iter().zip(vb).map(|(x, y)| x * y).sum();
        if self.use_bias {
            z += self.params[self.bias_a_index(a as usize)]
                + self.params[self.bias_b_index(b as usize)];
        }
        z
    }

    /// Pre-squash relevance of a cross-side pair.
    pub fn logit(&self, a: u32, b: u32) -> Result<f64> {
        self.check_pair(a, b)?;
        Ok(self.logit_unchecked(a, b))
    }

    /// Predicted relevance in (0, 1).
    pub fn score(&self, a: u32, b: u32) -> Result<f64> {
        Ok(sigmoid(self.logit(a, b)?))
    }

    /// Scores of one user against every opposite-side candidate, indexed
    /// by candidate id.
    pub fn scores_for(&self, side: Side, user: u32) -> Result<Vec<f64>> {
        match side {
            Side::A => {
                self.check_pair(user, 0)?;
                Ok((0..self.m as u32)
                    .map(|b| sigmoid(self.logit_unchecked(user, b)))
                    .collect())
            }
            Side::B => {
                self.check_pair(0, user)?;
                Ok((0..self.n as u32)
                    .map(|a| sigmoid(self.logit_unchecked(a, user)))
                    .collect())
            }
        }
    }

    fn to_checkpoint(&self) -> ModelCheckpoint {
        let nd = self.n * self.d;
        let md = self.m * self.d;
        ModelCheckpoint {
            format_version: MODEL_FORMAT_VERSION,
            n: self.n,
            m: self.m,
            d: self.d,
            use_bias: self.use_bias,
            emb_a: self.params[..nd].to_vec(),
            emb_b: self.params[nd..nd + md].to_vec(),
            bias_a: if self.use_bias {
                self.params[nd + md..nd + md + self.n].to_vec()
            } else {
                Vec::new()
            },
            bias_b: if self.use_bias {
                self.params[nd + md + self.n..].to_vec()
            } else {
                Vec::new()
            },
        }
    }

    fn from_checkpoint(cp: ModelCheckpoint) -> Result<LatentFactorModel> {
        if cp.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported model checkpoint version {} (expected {})",
                cp.format_version, MODEL_FORMAT_VERSION
            )));
        }
        let mut model = LatentFactorModel::zeroed(cp.n, cp.m, cp.d, cp.use_bias)?;
        let expect = |name: &str, got: usize, want: usize| -> Result<()> {
            if got != want {
                return Err(Error::Validation(format!(
                    "checkpoint field {name} has length {got}, expected {want}"
                )));
            }
            Ok(())
        };
        expect("emb_a", cp.emb_a.len(), cp.n * cp.d)?;
        expect("emb_b", cp.emb_b.len(), cp.m * cp.d)?;
        let bias_len = if cp.use_bias { (cp.n, cp.m) } else { (0, 0) };
        expect("bias_a", cp.bias_a.len(), bias_len.0)?;
        expect("bias_b", cp.bias_b.len(), bias_len.1)?;
        let nd = cp.n * cp.d;
        let md = cp.m * cp.d;
        model.params[..nd].copy_from_slice(&cp.emb_a);
        model.params[nd..nd + md].copy_from_slice(&cp.emb_b);
        if cp.use_bias {
            model.params[nd + md..nd + md + cp.n].copy_from_slice(&cp.bias_a);
            model.params[nd + md + cp.n..].copy_from_slice(&cp.bias_b);
        }
        for &p in &model.params {
            if !p.is_finite() {
                return Err(Error::Validation(
                    "checkpoint contains non-finite parameters".into(),
                ));
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<LatentFactorModel> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }
}

impl Serialize for LatentFactorModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_checkpoint().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LatentFactorModel {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<LatentFactorModel, D::Error> {
        let cp = ModelCheckpoint::deserialize(deserializer)?;
        LatentFactorModel::from_checkpoint(cp).map_err(serde::de::Error::custom)
    }
}

/// Fresh model with embeddings drawn from a zero-mean normal with
/// standard deviation 0.1/sqrt(d); biases (when enabled) start at zero.
pub fn init_model(n: usize, m: usize, d: usize, seed: u64) -> Result<LatentFactorModel> {
    init_model_with_bias(n, m, d, seed, false)
}

pub fn init_model_with_bias(
    n: usize,
    m: usize,
    d: usize,
    seed: u64,
    use_bias: bool,
) -> Result<LatentFactorModel> {
    let mut model = LatentFactorModel::zeroed(n, m, d, use_bias)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, 0.1 / (d as f64).sqrt()).expect("valid normal");
    let emb_len = (n + m) * d;
    for p in &mut model.params[..emb_len] {
        *p = normal.sample(&mut rng);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let a = init_model(4, 5, 3, 99).unwrap();
        let b = init_model(4, 5, 3, 99).unwrap();
        assert_eq!(a, b);
        let c = init_model(4, 5, 3, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn minimal_shape_is_two_scalars() {
        let model = init_model(1, 1, 1, 0).unwrap();
        assert_eq!(model.param_len(), 2);
    }

    #[test]
    fn init_entries_have_zero_mean() {
        // 10_000 embedding entries; mean should sit within 3 standard
        // errors of zero.
        let d = 4;
        let model = init_model(1250, 1250, d, 7).unwrap();
        assert_eq!(model.param_len(), 10_000);
        let mean: f64 = model.params().iter().sum::<f64>() / model.param_len() as f64;
        let std = 0.1 / (d as f64).sqrt();
        let se = std / (model.param_len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} vs se {se}");
    }

    #[test]
    fn zero_embeddings_score_half() {
        let model = LatentFactorModel::zeroed(2, 2, 4, false).unwrap();
        assert_eq!(model.score(0, 0).unwrap(), 0.5);
        assert_eq!(model.score(1, 1).unwrap(), 0.5);
    }

    #[test]
    fn unit_dot_scores_sigmoid_of_one() {
        let mut model = LatentFactorModel::zeroed(1, 1, 2, false).unwrap();
        model.params_mut()[0] = 1.0; // emb_a[0] = (1, 0)
        model.params_mut()[2] = 1.0; // emb_b[0] = (1, 0)
        let s = model.score(0, 0).unwrap();
        assert!((s - 0.7310585786300049).abs() < 1e-15);
    }

    #[test]
    fn score_rejects_out_of_range_ids() {
        let model = init_model(2, 3, 2, 1).unwrap();
        assert!(model.score(2, 0).is_err());
        assert!(model.score(0, 3).is_err());
        assert!(model.scores_for(Side::A, 2).is_err());
    }

    #[test]
    fn score_is_invariant_under_axis_permutation() {
        let model = init_model(3, 3, 4, 5).unwrap();
        // Permute coordinate axes (reverse order) in both matrices.
        let mut permuted = model.clone();
        for row in 0..6 {
            let off = row * 4;
            let slice = &mut permuted.params_mut()[off..off + 4];
            slice.reverse();
        }
        for a in 0..3 {
            for b in 0..3 {
                let s1 = model.score(a, b).unwrap();
                let s2 = permuted.score(a, b).unwrap();
                assert!((s1 - s2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn bias_terms_shift_the_logit() {
        let mut model = LatentFactorModel::zeroed(2, 2, 2, true).unwrap();
        let idx = model.bias_a_index(0);
        model.params_mut()[idx] = 1.0;
        assert!((model.logit(0, 0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(model.logit(1, 0).unwrap(), 0.0);
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for use_bias in [false, true] {
            let mut model = init_model_with_bias(5, 4, 3, 21, use_bias).unwrap();
            if use_bias {
                let idx = model.bias_b_index(2);
                model.params_mut()[idx] = -0.25;
            }
            let path = dir.path().join(format!("model_{use_bias}.json"));
            model.save(&path).unwrap();
            let loaded = LatentFactorModel::load(&path).unwrap();
            assert_eq!(loaded, model);
        }
    }

    #[test]
    fn checkpoint_version_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let text = r#"{"format_version":99,"n":1,"m":1,"d":1,"use_bias":false,
            "emb_a":[0.0],"emb_b":[0.0],"bias_a":[],"bias_b":[]}"#;
        std::fs::write(&path, text).unwrap();
        assert!(LatentFactorModel::load(&path).is_err());
    }

    #[test]
    fn scores_for_matches_pairwise_scores() {
        let model = init_model(4, 6, 3, 11).unwrap();
        let row = model.scores_for(Side::A, 2).unwrap();
        assert_eq!(row.len(), 6);
        for b in 0..6u32 {
            assert_eq!(row[b as usize], model.score(2, b).unwrap());
        }
        let col = model.scores_for(Side::B, 5).unwrap();
        assert_eq!(col.len(), 4);
        for a in 0..4u32 {
            assert_eq!(col[a as usize], model.score(a, 5).unwrap());
        }
    }
}
