//! Pretraining objectives: one term per active view, summed without weights.
//!
//! Distribution-valued views (mobility, demographics) are scored with the
//! Jensen-Shannon divergence so every term stays in `[0, 1]` and no single
//! view dominates the gradient.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::divergence::{self, Distribution, SimilarityMatrix, EPSILON};
use crate::graph::{EdgeType, HeteroGraph, MobilityTargets};
use crate::model::ModelOutput;
use crate::rng::{derive_seed, SplitMix64};
use crate::{Error, Matrix, Result};

/// Divergence used by the mobility term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MobilityDivergence {
    #[default]
    Js,
    /// `KL(target ‖ predicted)`.
    KlTargetPredicted,
    /// `KL(predicted ‖ target)`.
    KlPredictedTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    /// Seeds the triplet negatives.
    pub seed: u64,
    pub mobility_divergence: MobilityDivergence,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            seed: 0,
            mobility_divergence: MobilityDivergence::Js,
        }
    }
}

/// Loss values; inactive terms are exactly 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_n: f64,
    pub l_poi: f64,
    pub l_mobility: f64,
    pub l_demo: BTreeMap<String, f64>,
    pub total: f64,
}

impl LossBreakdown {
    /// Values of the active terms, in the order n, poi, mobility, demo.
    pub fn active_terms(&self, vars: &LossVars) -> Vec<f64> {
        let mut out = Vec::new();
        if vars.neighbor.is_some() {
            out.push(self.l_n);
        }
        if vars.poi.is_some() {
            out.push(self.l_poi);
        }
        if vars.mobility.is_some() {
            out.push(self.l_mobility);
        }
        out.extend(self.l_demo.values().copied());
        out
    }
}

/// Tape handles of each active term.
#[derive(Debug, Clone)]
pub struct LossVars {
    pub neighbor: Option<Var>,
    pub poi: Option<Var>,
    pub mobility: Option<Var>,
    pub demo: BTreeMap<String, Var>,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        let get = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
        LossBreakdown {
            l_n: get(self.neighbor),
            l_poi: get(self.poi),
            l_mobility: get(self.mobility),
            l_demo: self
                .demo
                .iter()
                .map(|(k, &v)| (k.clone(), tape.scalar(v)))
                .collect(),
            total: tape.scalar(self.total),
        }
    }
}

/// `(anchor, positive, negative)` triplets for every directed neighbor pair.
///
/// The negative for `(i, j)` is drawn uniformly from the non-neighbors of
/// `i` using a stream keyed by `(seed, i, j)`, so the draw does not depend
/// on iteration order. Anchors with no non-neighbor are skipped.
pub fn sample_triplets(
    pairs: &BTreeSet<(usize, usize)>,
    n: usize,
    seed: u64,
) -> Result<Vec<(usize, usize, usize)>> {
    let adjacent = |a: usize, b: usize| pairs.contains(&(a.min(b), a.max(b)));
    let mut directed: Vec<(usize, usize)> = pairs
        .iter()
        .filter(|(a, b)| a != b)
        .flat_map(|&(a, b)| [(a, b), (b, a)])
        .collect();
    directed.sort_unstable();

    let mut out = Vec::with_capacity(directed.len());
    for (i, j) in directed {
        let negatives: Vec<usize> = (0..n).filter(|&k| k != i && !adjacent(i, k)).collect();
        if negatives.is_empty() {
            continue;
        }
        let mut rng = SplitMix64::new(derive_seed(derive_seed(seed, i as u64), j as u64));
        out.push((i, j, negatives[rng.below(negatives.len())]));
    }
    if out.is_empty() {
        return Err(Error::NoTripletPairs);
    }
    Ok(out)
}

/// Row-wise squared distance between two m × d tensors, as m × 1.
fn squared_distance(tape: &mut Tape, a: Var, b: Var, ones_d: Var) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    let sq = tape.square(diff);
    tape.matmul(sq, ones_d)
}

/// Mean hinge `max(0, ‖h_i − h_j‖² − ‖h_i − h_k‖² + margin)` over neighbor pairs.
pub fn neighbor_triplet_loss(
    tape: &mut Tape,
    h: Var,
    pairs: &BTreeSet<(usize, usize)>,
    margin: f64,
    seed: u64,
) -> Result<Var> {
    let (n, d) = tape.shape(h);
    let triplets = sample_triplets(pairs, n, seed)?;
    let anchors: Vec<usize> = triplets.iter().map(|t| t.0).collect();
    let positives: Vec<usize> = triplets.iter().map(|t| t.1).collect();
    let negatives: Vec<usize> = triplets.iter().map(|t| t.2).collect();

    let ones_d = tape.constant(Matrix::filled(d, 1, 1.0));
    let ha = tape.gather_rows(h, &anchors)?;
    let hp = tape.gather_rows(h, &positives)?;
    let hn = tape.gather_rows(h, &negatives)?;
    let dp = squared_distance(tape, ha, hp, ones_d)?;
    let dn = squared_distance(tape, ha, hn, ones_d)?;
    let gap = tape.sub(dp, dn)?;
    let margin = tape.constant(Matrix::filled(triplets.len(), 1, margin));
    let pre = tape.add(gap, margin)?;
    let hinge = tape.clamp_min(pre, 0.0);
    Ok(tape.mean(hinge))
}

/// Mean squared error between embedding cosines and the POI similarity matrix.
pub fn poi_recon_loss(tape: &mut Tape, h: Var, target: &SimilarityMatrix) -> Result<Var> {
    let (n, d) = tape.shape(h);
    if target.n() != n {
        return Err(Error::ShapeMismatch {
            op: "poi_recon_loss",
            left: (n, n),
            right: (target.n(), target.n()),
        });
    }
    let ones_d = tape.constant(Matrix::filled(d, 1, 1.0));
    let ones_row = tape.constant(Matrix::filled(1, d, 1.0));
    let sq = tape.square(h);
    let norm2 = tape.matmul(sq, ones_d)?;
    let norm = tape.sqrt(norm2);
    let norm = tape.clamp_min(norm, 1e-12);
    let norm = tape.matmul(norm, ones_row)?;
    let unit = tape.div(h, norm)?;
    let unit_t = tape.transpose(unit);
    let cos = tape.matmul(unit, unit_t)?;
    let s = tape.constant(target.as_matrix().clone());
    let diff = tape.sub(cos, s)?;
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}

/// Stacks smoothed target rows.
fn smoothed_targets(rows: &[&Distribution]) -> Result<Matrix> {
    let smoothed: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| divergence::smooth(r.values()))
        .collect();
    Matrix::from_rows(&smoothed)
}

/// Per-row divergence between constant smoothed targets (m × c) and
/// predicted distributions `q` (m × c, rows sum to 1); averaged over rows.
fn mean_row_divergence(
    tape: &mut Tape,
    target: Matrix,
    q: Var,
    kind: MobilityDivergence,
) -> Result<Var> {
    let (m, c) = target.shape();
    let log_target = tape.constant(target.map(libm::log));
    let target = tape.constant(target);
    let eps = tape.constant(Matrix::filled(m, c, EPSILON));
    let q = tape.add(q, eps)?;
    let q = tape.scale(q, 1.0 / (1.0 + c as f64 * EPSILON));
    let log_q = tape.log(q);
    let ones_c = tape.constant(Matrix::filled(c, 1, 1.0));

    let pointwise = match kind {
        MobilityDivergence::Js => {
            let mix = tape.add(target, q)?;
            let mix = tape.scale(mix, 0.5);
            let log_mix = tape.log(mix);
            let lt = tape.sub(log_target, log_mix)?;
            let lq = tape.sub(log_q, log_mix)?;
            let a = tape.mul(target, lt)?;
            let b = tape.mul(q, lq)?;
            let sum = tape.add(a, b)?;
            tape.scale(sum, 0.5)
        }
        MobilityDivergence::KlTargetPredicted => {
            let l = tape.sub(log_target, log_q)?;
            tape.mul(target, l)?
        }
        MobilityDivergence::KlPredictedTarget => {
            let l = tape.sub(log_q, log_target)?;
            tape.mul(q, l)?
        }
    };
    let per_row = tape.matmul(pointwise, ones_c)?;
    let mean = tape.mean(per_row);
    Ok(tape.scale(mean, 1.0 / LN_2))
}

fn unmasked(rows: &[Option<Distribution>]) -> (Vec<usize>, Vec<&Distribution>) {
    rows.iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().map(|r| (i, r)))
        .unzip()
}

/// Divergence between observed trip distributions and those predicted from
/// source/destination embeddings, averaged over both directions.
pub fn mobility_loss(
    tape: &mut Tape,
    h_src: Var,
    h_dst: Var,
    targets: &MobilityTargets,
    kind: MobilityDivergence,
) -> Result<Var> {
    let (out_idx, out_rows) = unmasked(&targets.outflow);
    let (in_idx, in_rows) = unmasked(&targets.inflow);
    if out_idx.is_empty() && in_idx.is_empty() {
        return Err(Error::AllRowsMasked);
    }
    let dst_t = tape.transpose(h_dst);
    let logits = tape.matmul(h_src, dst_t)?;
    let logits_t = tape.transpose(logits);

    let mut halves = Vec::with_capacity(2);
    for (idx, rows, scores) in [(out_idx, out_rows, logits), (in_idx, in_rows, logits_t)] {
        if idx.is_empty() {
            continue;
        }
        let q = tape.softmax_rows(scores);
        let q = tape.gather_rows(q, &idx)?;
        halves.push(mean_row_divergence(
            tape,
            smoothed_targets(&rows)?,
            q,
            kind,
        )?);
    }
    let total = match halves.as_slice() {
        [one] => *one,
        [a, b] => tape.add(*a, *b)?,
        _ => unreachable!(),
    };
    Ok(tape.scale(total, 1.0 / halves.len() as f64))
}

/// JS form of [`mobility_loss`].
pub fn mobility_js_loss(
    tape: &mut Tape,
    h_src: Var,
    h_dst: Var,
    targets: &MobilityTargets,
) -> Result<Var> {
    mobility_loss(tape, h_src, h_dst, targets, MobilityDivergence::Js)
}

/// Row-major flat indices of the off-diagonal entries of an n × n matrix.
fn off_diagonal(n: usize) -> Vec<usize> {
    (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| i * n + j))
        .collect()
}

/// Targets for the demographic term: each off-diagonal similarity row, normalized.
pub fn demo_targets(s: &SimilarityMatrix) -> Result<Vec<Distribution>> {
    let n = s.n();
    (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| s.get(i, j)).collect();
            divergence::normalize(&row).map_err(|_| Error::EmptySimilarityRow(i))
        })
        .collect()
}

/// Mean JS between normalized similarity rows and `softmax_{j≠i}(h_i · h_j)`.
pub fn demo_js_loss(tape: &mut Tape, h: Var, s: &SimilarityMatrix) -> Result<Var> {
    let n = tape.shape(h).0;
    if n < 2 || s.n() != n {
        return Err(Error::ShapeMismatch {
            op: "demo_js_loss",
            left: tape.shape(h),
            right: (s.n(), s.n()),
        });
    }
    let targets = demo_targets(s)?;
    let refs: Vec<&Distribution> = targets.iter().collect();
    let ht = tape.transpose(h);
    let logits = tape.matmul(h, ht)?;
    let off = tape.take(logits, &off_diagonal(n), n, n - 1)?;
    let q = tape.softmax_rows(off);
    mean_row_divergence(tape, smoothed_targets(&refs)?, q, MobilityDivergence::Js)
}

fn relation_output(out: &ModelOutput, r: &EdgeType) -> Result<Var> {
    out.shared_of(r).ok_or_else(|| {
        Error::InvalidConfig(alloc::format!("relation {r:?} missing from model output"))
    })
}

/// Every active term plus their unweighted sum.
pub fn total_loss(
    tape: &mut Tape,
    graph: &HeteroGraph,
    out: &ModelOutput,
    cfg: &LossConfig,
) -> Result<LossVars> {
    let mut terms = Vec::new();
    let neighbor = if graph.edges.contains_key(&EdgeType::Neighbor) {
        let h = relation_output(out, &EdgeType::Neighbor)?;
        Some(neighbor_triplet_loss(
            tape,
            h,
            &graph.neighbor_pairs,
            cfg.margin,
            cfg.seed,
        )?)
    } else {
        None
    };
    let poi = match &graph.poi_similarity {
        Some(s) => Some(poi_recon_loss(
            tape,
            relation_output(out, &EdgeType::Poi)?,
            s,
        )?),
        None => None,
    };
    let mobility = match &graph.mobility {
        Some(targets) => {
            let src = relation_output(out, &EdgeType::MobilitySrc)?;
            let dst = relation_output(out, &EdgeType::MobilityDst)?;
            Some(mobility_loss(
                tape,
                src,
                dst,
                targets,
                cfg.mobility_divergence,
            )?)
        }
        None => None,
    };
    let mut demo = BTreeMap::new();
    for (attr, s) in &graph.demo_similarity {
        let h = relation_output(out, &EdgeType::Demo(attr.clone()))?;
        demo.insert(attr.clone(), demo_js_loss(tape, h, s)?);
    }

    terms.extend(neighbor);
    terms.extend(poi);
    terms.extend(mobility);
    terms.extend(demo.values().copied());
    let mut total = *terms.first().ok_or(Error::EmptyViews)?;
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(LossVars {
        neighbor,
        poi,
        mobility,
        demo,
        total,
    })
}
