//! Incremental maintenance of the pair-coverage and stability metrics as
//! user lists arrive one at a time.
//!
//! Two representations are kept side by side. The *exact* representation
//! stores the sets themselves (positive pairs of processed users, covered
//! pairs, mutually recommended pairs) and reads metrics off their sizes;
//! it is authoritative and matches batch computation for any processing
//! order. The *mirror* representation advances four scalars by closed-form
//! recurrences that only see per-step counts (hits, match count, overlap
//! with earlier positives). The recurrences charge the overlap count `rm`
//! against the hit count, which is only correct when every pair whose both
//! endpoints were processed was hit from both sides; outside that class
//! the mirrors drift away from the exact values (and can even leave
//! [0, 1]). Callers wanting guarantees should read the exact values.

use crate::error::{Error, Result};
use crate::types::Side;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// The four scalar metrics in one bundle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RecurrenceScalars {
    pub crecall: f64,
    pub cprecision: f64,
    pub srecall: f64,
    pub sprecision: f64,
}

/// One row of a metric trajectory: values after `t` processed lists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamingSnapshot {
    pub t: usize,
    pub exact: RecurrenceScalars,
    pub mirror: RecurrenceScalars,
}

/// Incremental metric state over a stream of per-user recommendation
/// lists. Each (user, side) may be processed at most once.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamingMetricsState {
    k: usize,
    /// Matched pairs of all processed users.
    p: BTreeSet<(u32, u32)>,
    /// Matched pairs hit by at least one processed list.
    covered: BTreeSet<(u32, u32)>,
    /// Matched pairs hit by both endpoints' lists.
    mutual: BTreeSet<(u32, u32)>,
    /// Number of processed lists.
    t: usize,
    processed_a: BTreeSet<u32>,
    processed_b: BTreeSet<u32>,
    mirror: RecurrenceScalars,
}

/// Fresh state for lists of length at most `k`.
pub fn streaming_init(k: usize) -> Result<StreamingMetricsState> {
    if k == 0 {
        return Err(Error::Config("streaming list length K must be >= 1".into()));
    }
    Ok(StreamingMetricsState {
        k,
        p: BTreeSet::new(),
        covered: BTreeSet::new(),
        mutual: BTreeSet::new(),
        t: 0,
        processed_a: BTreeSet::new(),
        processed_b: BTreeSet::new(),
        mirror: RecurrenceScalars::default(),
    })
}

impl StreamingMetricsState {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn positive_pairs(&self) -> &BTreeSet<(u32, u32)> {
        &self.p
    }

    pub fn covered_pairs(&self) -> &BTreeSet<(u32, u32)> {
        &self.covered
    }

    pub fn mutual_pairs(&self) -> &BTreeSet<(u32, u32)> {
        &self.mutual
    }

    pub fn exact_crecall(&self) -> f64 {
        safe_ratio(self.covered.len(), self.p.len())
    }

    pub fn exact_cprecision(&self) -> f64 {
        safe_ratio(self.covered.len(), self.t * self.k)
    }

    pub fn exact_srecall(&self) -> f64 {
        safe_ratio(self.mutual.len(), self.p.len())
    }

    pub fn exact_sprecision(&self) -> f64 {
        safe_ratio(self.mutual.len(), self.t * self.k)
    }

    pub fn exact(&self) -> RecurrenceScalars {
        RecurrenceScalars {
            crecall: self.exact_crecall(),
            cprecision: self.exact_cprecision(),
            srecall: self.exact_srecall(),
            sprecision: self.exact_sprecision(),
        }
    }

    /// Scalars maintained by the closed-form recurrences.
    pub fn mirror(&self) -> RecurrenceScalars {
        self.mirror
    }

    pub fn snapshot(&self) -> StreamingSnapshot {
        StreamingSnapshot {
            t: self.t,
            exact: self.exact(),
            mirror: self.mirror,
        }
    }
}

fn safe_ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Fold one user's list into the state.
///
/// `user_matches` are the user's matched counterparts (its ground-truth
/// positives). Errors if the (user, side) was already processed or the
/// list is malformed.
pub fn streaming_process_user(
    state: &mut StreamingMetricsState,
    side: Side,
    user: u32,
    list: &[u32],
    user_matches: &BTreeSet<u32>,
) -> Result<()> {
    if list.len() > state.k {
        return Err(Error::Validation(format!(
            "list for {side} user {user} has {} entries, K = {}",
            list.len(),
            state.k
        )));
    }
    let distinct: BTreeSet<u32> = list.iter().copied().collect();
    if distinct.len() != list.len() {
        return Err(Error::Validation(format!(
            "list for {side} user {user} contains duplicates"
        )));
    }
    let processed = match side {
        Side::A => &mut state.processed_a,
        Side::B => &mut state.processed_b,
    };
    if !processed.insert(user) {
        return Err(Error::Validation(format!(
            "{side} user {user} was already processed"
        )));
    }

    let positive_pairs: BTreeSet<(u32, u32)> = user_matches
        .iter()
        .map(|&c| side.pair(user, c))
        .collect();
    let hit_pairs: Vec<(u32, u32)> = list
        .iter()
        .filter(|c| user_matches.contains(c))
        .map(|&c| side.pair(user, c))
        .collect();

    // Per-step counts feeding the recurrences.
    let p_before = state.p.len();
    let tp = hit_pairs.len();
    let m = user_matches.len();
    let rm = positive_pairs.iter().filter(|p| state.p.contains(p)).count();

    // Exact sets. A hit pair already covered must have been hit by the
    // counterpart's list (this user was never processed before), so it
    // becomes mutual.
    for &pair in &positive_pairs {
        state.p.insert(pair);
    }
    for &pair in &hit_pairs {
        if !state.covered.insert(pair) {
            state.mutual.insert(pair);
        }
    }

    // Mirror scalars. When the recall denominator would be zero (first
    // lists all belonging to users without matches), the recall mirrors
    // carry over unchanged while the precision mirrors still dilute.
    if p_before + m - rm == 0 {
        state.mirror.cprecision =
            (state.mirror.cprecision * (state.t * state.k) as f64 + (tp - rm) as f64)
                / ((state.t + 1) * state.k) as f64;
        state.mirror.sprecision =
            (state.mirror.sprecision * (state.t * state.k) as f64 + rm as f64)
                / ((state.t + 1) * state.k) as f64;
    } else {
        state.mirror = recurrence_update(state.mirror, p_before, state.t, state.k, tp, m, rm)?;
    }
    state.t += 1;
    Ok(())
}

/// One step of the four closed-form recurrences.
///
/// `prev` holds the metric values after `t` lists, `p_size` the positive
/// pairs accumulated so far, `tp` the new list's hits, `m` the new user's
/// match count, and `rm` the overlap between the user's matches and the
/// accumulated positives. Pure; errors on a zero denominator.
pub fn recurrence_update(
    prev: RecurrenceScalars,
    p_size: usize,
    t: usize,
    k: usize,
    tp: usize,
    m: usize,
    rm: usize,
) -> Result<RecurrenceScalars> {
    if rm > m {
        return Err(Error::Domain(format!(
            "overlap rm = {rm} exceeds match count m = {m}"
        )));
    }
    let recall_den = p_size + m - rm;
    let precision_den = (t + 1) * k;
    if recall_den == 0 {
        return Err(Error::Domain(
            "recall denominator p + m - rm is zero".into(),
        ));
    }
    if precision_den == 0 {
        return Err(Error::Domain("precision denominator (t+1)k is zero".into()));
    }
    let recall_den = recall_den as f64;
    let precision_den = precision_den as f64;
    let tk = (t * k) as f64;
    Ok(RecurrenceScalars {
        crecall: (prev.crecall * p_size as f64 + tp as f64 - rm as f64) / recall_den,
        cprecision: (prev.cprecision * tk + tp as f64 - rm as f64) / precision_den,
        srecall: (prev.srecall * p_size as f64 + rm as f64) / recall_den,
        sprecision: (prev.sprecision * tk + rm as f64) / precision_den,
    })
}
