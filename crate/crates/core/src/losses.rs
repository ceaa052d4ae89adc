//! KL-divergence losses over bags.
//!
//! * Similarity-proportion loss: `KL(P̂ ‖ P)` between the soft histogram of
//!   cross-bag cosine similarities and the histogram implied by the two
//!   bags' class proportions.
//! * Proportion loss: `KL(p ‖ p̂)` between a bag's class proportions and the
//!   mean of its instance-level softmax outputs.
//!
//! Both use natural logarithms. The `1e-8` floor is applied as additive
//! smoothing followed by renormalization, so both arguments stay on the
//! simplex and Gibbs' inequality still holds exactly.

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::ordinal::{ground_truth_pdf, GroundTruthSimPdf, ProportionVector};
use crate::scalar::{count, Scalar};
use crate::simhist::{
    gaussian_expansion, gaussian_histogram_on, gaussian_histogram_values, Kernel, scaled_cosine_similarity,
    scaled_cosine_similarity_on, Bins, SimilarityHistogram,
};

/// Floor applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-8;

/// How the ground-truth atoms are placed onto histogram bins.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GroundTruthMode {
    /// Same Gaussian expansion as the predicted histogram.
    #[default]
    Smoothed,
    /// Each atom's mass goes to the bin containing it.
    Hard,
}

/// Which cross-bag instance pairs enter the predicted histogram.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PairingMode {
    /// `(x_n, y_π(n))` for a pairing permutation `π`.
    #[default]
    Aligned,
    /// All `N²` pairs.
    FullCross,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimPropConfig<T> {
    pub bins: Bins,
    pub sigma: T,
    pub ground_truth: GroundTruthMode,
    pub pairing: PairingMode,
    pub kernel: Kernel,
}

impl<T: Scalar> SimPropConfig<T> {
    pub fn new(bins: usize, sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) {
            return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(SimPropConfig {
            bins: Bins::new(bins)?,
            sigma,
            ground_truth: GroundTruthMode::default(),
            pairing: PairingMode::default(),
            kernel: Kernel::default(),
        })
    }
}

/// `(v + ε) / (1 + len·ε)`.
fn smooth<T: Scalar>(v: T, len: usize) -> T {
    let eps = T::of(LOG_EPS);
    (v + eps) / (T::one() + eps * count(len))
}

/// Places ground-truth atoms on bins, then renormalizes and floors so that
/// every bin is strictly positive.
pub fn discretize_ground_truth<T: Scalar>(
    pdf: &GroundTruthSimPdf<T>,
    bins: Bins,
    sigma: T,
    mode: GroundTruthMode,
    kernel: Kernel,
) -> Result<SimilarityHistogram<T>> {
    let hist = match mode {
        GroundTruthMode::Smoothed => gaussian_expansion(pdf.atoms().collect::<Vec<_>>(), bins, sigma, kernel)?,
        GroundTruthMode::Hard => {
            let mut values = vec![T::zero(); bins.count()];
            for (s, m) in pdf.atoms() {
                values[bins.index_of(s)?] += m;
            }
            SimilarityHistogram::from_values(bins, values, false)?
        }
    };
    let hist = hist.normalized();
    let b = bins.count();
    let floored = hist.values().iter().map(|&v| smooth(v, b)).collect();
    SimilarityHistogram::from_values(bins, floored, true)
}

/// `Σ p_i ln(p_i / q_i)` with `0 ln 0 = 0`; no smoothing.
pub fn kl_divergence<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(&a, _)| a > T::zero())
        .map(|(&a, &b)| a * (a / b).ln())
        .sum())
}

/// `KL(p̃ ‖ q̃)` with both arguments smoothed; the similarity loss's divergence.
pub fn smoothed_kl<T: Scalar>(pred: &[T], target: &[T]) -> Result<T> {
    let n = pred.len();
    let p: Vec<T> = pred.iter().map(|&v| smooth(v, n)).collect();
    let q: Vec<T> = target.iter().map(|&v| smooth(v, n)).collect();
    kl_divergence(&p, &q)
}

/// Cosine similarities between index-paired (or all) instances.
fn pair_indices(n: usize, pairing: PairingMode, perm: Option<&[usize]>) -> Result<Vec<(usize, usize)>> {
    Ok(match pairing {
        PairingMode::Aligned => match perm {
            Some(p) => {
                if p.len() != n {
                    return Err(Error::LengthMismatch {
                        expected: n,
                        actual: p.len(),
                    });
                }
                p.iter().enumerate().map(|(i, &j)| (i, j)).collect()
            }
            None => (0..n).map(|i| (i, i)).collect(),
        },
        PairingMode::FullCross => (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect(),
    })
}

fn check_bags<A, B>(a: &[A], b: &[B]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("bag"));
    }
    Ok(())
}

/// Target histogram `P` for two bags.
pub fn target_histogram<T: Scalar>(
    pa: &ProportionVector<T>,
    pb: &ProportionVector<T>,
    cfg: &SimPropConfig<T>,
) -> Result<SimilarityHistogram<T>> {
    let pdf = ground_truth_pdf(pa, pb)?;
    discretize_ground_truth(&pdf, cfg.bins, cfg.sigma, cfg.ground_truth, cfg.kernel)
}

/// Similarity-proportion loss recorded on `tape`.
///
/// `feats_a[n]` is paired with `feats_b[perm[n]]` (identity when `perm` is
/// `None`) unless the config asks for full cross pairing.
pub fn sim_prop_loss_on<T: Scalar>(
    tape: &mut Tape<T>,
    feats_a: &[Vec<Var>],
    feats_b: &[Vec<Var>],
    pa: &ProportionVector<T>,
    pb: &ProportionVector<T>,
    cfg: &SimPropConfig<T>,
    perm: Option<&[usize]>,
) -> Result<Var> {
    check_bags(feats_a, feats_b)?;
    let target = target_histogram(pa, pb, cfg)?;
    let sims = pair_indices(feats_a.len(), cfg.pairing, perm)?
        .into_iter()
        .map(|(i, j)| scaled_cosine_similarity_on(tape, &feats_a[i], &feats_b[j]))
        .collect::<Result<Vec<_>>>()?;
    let pred = gaussian_histogram_on(tape, &sims, cfg.bins, cfg.sigma, cfg.kernel, true)?;
    Ok(smoothed_kl_on(tape, &pred, target.values()))
}

fn smoothed_kl_on<T: Scalar>(tape: &mut Tape<T>, pred: &[Var], target: &[T]) -> Var {
    let n = pred.len();
    let eps = T::of(LOG_EPS);
    let inv = T::one() / (T::one() + eps * count(n));
    let terms: Vec<Var> = pred
        .iter()
        .zip(target)
        .map(|(&p, &q)| {
            let shifted = tape.add_const(p, eps);
            let pt = tape.scale(shifted, inv);
            let lp = tape.ln(pt);
            let ratio = tape.add_const(lp, -smooth(q, n).ln());
            tape.mul(pt, ratio)
        })
        .collect();
    tape.sum(&terms)
}

/// Plain-value evaluation of the similarity-proportion loss.
#[derive(Clone, Debug)]
pub struct SimPropBreakdown<T> {
    pub predicted: SimilarityHistogram<T>,
    pub target: SimilarityHistogram<T>,
    pub loss: T,
}

pub fn sim_prop_loss<T: Scalar>(
    feats_a: &[Vec<T>],
    feats_b: &[Vec<T>],
    pa: &ProportionVector<T>,
    pb: &ProportionVector<T>,
    cfg: &SimPropConfig<T>,
    perm: Option<&[usize]>,
) -> Result<SimPropBreakdown<T>> {
    check_bags(feats_a, feats_b)?;
    let target = target_histogram(pa, pb, cfg)?;
    let sims = pair_indices(feats_a.len(), cfg.pairing, perm)?
        .into_iter()
        .map(|(i, j)| scaled_cosine_similarity(&feats_a[i], &feats_b[j]))
        .collect::<Result<Vec<_>>>()?;
    let predicted = gaussian_histogram_values(&sims, cfg.bins, cfg.sigma, cfg.kernel)?;
    let loss = smoothed_kl(predicted.values(), target.values())?;
    Ok(SimPropBreakdown {
        predicted,
        target,
        loss,
    })
}

/// Bag-level class proportions: the mean of per-instance confidences.
pub fn aggregate_predictions_on<T: Scalar>(tape: &mut Tape<T>, confidences: &[Vec<Var>]) -> Result<Vec<Var>> {
    let first = confidences.first().ok_or(Error::Empty("bag"))?;
    let k = first.len();
    if let Some(row) = confidences.iter().find(|r| r.len() != k) {
        return Err(Error::LengthMismatch {
            expected: k,
            actual: row.len(),
        });
    }
    let inv_n = T::one() / count(confidences.len());
    let mut column = Vec::with_capacity(confidences.len());
    Ok((0..k)
        .map(|c| {
            column.clear();
            column.extend(confidences.iter().map(|row| row[c]));
            let s = tape.sum(&column);
            tape.scale(s, inv_n)
        })
        .collect())
}

pub fn aggregate_predictions<T: Scalar>(confidences: &[Vec<T>]) -> Result<Vec<T>> {
    let first = confidences.first().ok_or(Error::Empty("bag"))?;
    let k = first.len();
    let mut acc = vec![T::zero(); k];
    for row in confidences {
        if row.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                actual: row.len(),
            });
        }
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let n = count::<T>(confidences.len());
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// `KL(p ‖ p̂)` with `0 ln 0 = 0` and the floor applied to `p̂` only.
pub fn prop_loss<T: Scalar>(p: &ProportionVector<T>, predicted: &[T]) -> Result<T> {
    if predicted.len() != p.classes() {
        return Err(Error::LengthMismatch {
            expected: p.classes(),
            actual: predicted.len(),
        });
    }
    let k = predicted.len();
    let q: Vec<T> = predicted.iter().map(|&v| smooth(v, k)).collect();
    kl_divergence(p.as_slice(), &q)
}

pub fn prop_loss_on<T: Scalar>(tape: &mut Tape<T>, p: &ProportionVector<T>, predicted: &[Var]) -> Result<Var> {
    let k = predicted.len();
    if k != p.classes() {
        return Err(Error::LengthMismatch {
            expected: p.classes(),
            actual: k,
        });
    }
    let eps = T::of(LOG_EPS);
    let inv = T::one() / (T::one() + eps * count(k));
    let mut terms = Vec::with_capacity(k);
    for (&pk, &q) in p.as_slice().iter().zip(predicted) {
        if pk <= T::zero() {
            continue;
        }
        let shifted = tape.add_const(q, eps);
        let qt = tape.scale(shifted, inv);
        let lq = tape.ln(qt);
        // p_k (ln p_k - ln q̃_k)
        let neg = tape.scale(lq, -pk);
        terms.push(tape.add_const(neg, pk * pk.ln()));
    }
    Ok(tape.sum(&terms))
}
