//! Objective terms: factual fit loss, squared MMD on the shared embedding,
//! prognostic balance loss (exact KS for evaluation, soft-KS and SMD as
//! differentiable training variants), and their weighted sum.

use crate::array::Array;
use crate::diffcore::{Tape, ValueRef};
use crate::error::{Error, Result};
use crate::model::{Model, TapedModel, TapedTwoHead};

const SMD_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    /// sigma = median of all pairwise distances in the pooled batch,
    /// treated as a constant (no gradient through sigma).
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrgVariant {
    SoftKs,
    Smd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmdEstimator {
    /// V-statistic: includes same-index kernel terms.
    Biased,
    /// U-statistic: within-group terms exclude the diagonal.
    Unbiased,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SoftKsTemperature {
    /// 0.1 x standard deviation of the pooled sample.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub rho: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub prg_variant: PrgVariant,
    pub kernel_bandwidth: Bandwidth,
    pub softks_temperature: SoftKsTemperature,
    pub mmd_estimator: MmdEstimator,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rho: 1.0,
            gamma: 0.0,
            lambda: 0.0,
            prg_variant: PrgVariant::SoftKs,
            kernel_bandwidth: Bandwidth::MedianHeuristic,
            softks_temperature: SoftKsTemperature::Auto,
            mmd_estimator: MmdEstimator::Biased,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.rho < 0.0 || self.gamma < 0.0 || self.lambda < 0.0 {
            return Err(Error::contract(format!(
                "loss weights must be nonnegative: rho={}, gamma={}, lambda={}",
                self.rho, self.gamma, self.lambda
            )));
        }
        if let Bandwidth::Fixed(sigma) = self.kernel_bandwidth {
            if sigma <= 0.0 {
                return Err(Error::contract(format!("kernel bandwidth must be positive: {sigma}")));
            }
        }
        if let SoftKsTemperature::Fixed(tau) = self.softks_temperature {
            if tau <= 0.0 {
                return Err(Error::contract(format!("soft-KS temperature must be positive: {tau}")));
            }
        }
        Ok(())
    }
}

/// One minibatch split by treatment group. Either side may be empty.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x_control: Array,
    pub y_control: Vec<f64>,
    pub x_treated: Array,
    pub y_treated: Vec<f64>,
}

impl Batch {
    pub fn n_control(&self) -> usize {
        self.y_control.len()
    }

    pub fn n_treated(&self) -> usize {
        self.y_treated.len()
    }

    pub fn len(&self) -> usize {
        self.n_control() + self.n_treated()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// 1/2 sum_control (pred - y)^2 + rho * 1/2 sum_treated (pred - y)^2.
/// Sums, not means. Either group may be absent.
pub fn fit_loss(
    tape: &mut Tape,
    pred0: Option<ValueRef>,
    y0: &[f64],
    pred1: Option<ValueRef>,
    y1: &[f64],
    rho: f64,
) -> Result<ValueRef> {
    let group_term = |tape: &mut Tape, pred: Option<ValueRef>, y: &[f64], weight: f64| -> Result<Option<ValueRef>> {
        match pred {
            None => {
                if !y.is_empty() {
                    return Err(Error::contract(format!(
                        "fit_loss: {} targets with no predictions",
                        y.len()
                    )));
                }
                Ok(None)
            }
            Some(p) => {
                if tape.value(p).len() != y.len() {
                    return Err(Error::contract(format!(
                        "fit_loss: {} predictions vs {} targets",
                        tape.value(p).len(),
                        y.len()
                    )));
                }
                let target = tape.leaf(Array::column(y.to_vec()));
                let diff = tape.sub(p, target)?;
                let sq = tape.square(diff);
                let s = tape.sum(sq);
                Ok(Some(tape.mul_scalar(s, 0.5 * weight)))
            }
        }
    };
    let t0 = group_term(tape, pred0, y0, 1.0)?;
    let t1 = group_term(tape, pred1, y1, rho)?;
    match (t0, t1) {
        (Some(a), Some(b)) => tape.add(a, b),
        (Some(a), None) => Ok(a),
        (None, Some(b)) => Ok(b),
        (None, None) => Ok(tape.scalar(0.0)),
    }
}

/// Median of pairwise euclidean distances over the pooled rows of both
/// embeddings (forward values only; no gradient flows through sigma).
fn median_heuristic_sigma(a: &Array, b: &Array) -> f64 {
    let rows: Vec<&[f64]> = {
        let mut v = Vec::with_capacity(a.rows() + b.rows());
        let d = a.cols();
        for i in 0..a.rows() {
            v.push(&a.data()[i * d..(i + 1) * d]);
        }
        for i in 0..b.rows() {
            v.push(&b.data()[i * d..(i + 1) * d]);
        }
        v
    };
    let mut dists = Vec::new();
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let s: f64 = rows[i]
                .iter()
                .zip(rows[j])
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            dists.push(s.sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n = dists.len();
    let median = if n % 2 == 1 {
        dists[n / 2]
    } else {
        0.5 * (dists[n / 2 - 1] + dists[n / 2])
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

fn kernel_matrix(tape: &mut Tape, a: ValueRef, b: ValueRef, sigma: f64) -> Result<ValueRef> {
    let d = tape.pairwise_sq_dist(a, b)?;
    let scaled = tape.mul_scalar(d, -1.0 / (2.0 * sigma * sigma));
    Ok(tape.exp(scaled))
}

/// Squared MMD with Gaussian kernel k(u,v) = exp(-||u-v||^2 / (2 sigma^2)):
/// mean_aa k + mean_bb k - 2 mean_ab k (biased V-statistic by default).
pub fn mmd_sq(
    tape: &mut Tape,
    emb_a: ValueRef,
    emb_b: ValueRef,
    bandwidth: Bandwidth,
    estimator: MmdEstimator,
) -> Result<ValueRef> {
    let (na, nb) = (tape.value(emb_a).rows(), tape.value(emb_b).rows());
    if na == 0 || nb == 0 {
        return Err(Error::GroupAbsent);
    }
    if estimator == MmdEstimator::Unbiased && (na < 2 || nb < 2) {
        return Err(Error::GroupAbsent);
    }
    let sigma = match bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::MedianHeuristic => median_heuristic_sigma(tape.value(emb_a), tape.value(emb_b)),
    };
    let k_aa = kernel_matrix(tape, emb_a, emb_a, sigma)?;
    let k_bb = kernel_matrix(tape, emb_b, emb_b, sigma)?;
    let k_ab = kernel_matrix(tape, emb_a, emb_b, sigma)?;
    let (term_aa, term_bb) = match estimator {
        MmdEstimator::Biased => (tape.mean(k_aa), tape.mean(k_bb)),
        MmdEstimator::Unbiased => {
            // diagonal of a Gaussian kernel gram matrix is exactly 1
            let within = |tape: &mut Tape, k: ValueRef, n: usize| {
                let s = tape.sum(k);
                let off = tape.add_scalar(s, -(n as f64));
                tape.mul_scalar(off, 1.0 / (n as f64 * (n as f64 - 1.0)))
            };
            (within(tape, k_aa, na), within(tape, k_bb, nb))
        }
    };
    let term_ab = tape.mean(k_ab);
    let within = tape.add(term_aa, term_bb)?;
    let cross = tape.mul_scalar(term_ab, -2.0);
    tape.add(within, cross)
}

/// Exact two-sample Kolmogorov-Smirnov statistic over right-continuous
/// empirical CDFs. Evaluation only (non-differentiable).
pub fn ks_exact(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(Error::GroupAbsent);
    }
    let ecdf = |samples: &[f64], z: f64| -> f64 {
        samples.iter().filter(|&&s| s <= z).count() as f64 / samples.len() as f64
    };
    let mut best: f64 = 0.0;
    for &z in samples_a.iter().chain(samples_b.iter()) {
        best = best.max((ecdf(samples_a, z) - ecdf(samples_b, z)).abs());
    }
    Ok(best)
}

fn pooled_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Differentiable KS surrogate: smooth ECDF F(z) = mean_i sigmoid((z - s_i)/tau),
/// maximized over the midpoints of consecutive sorted pooled values (the
/// plateaus where the exact ECDF difference is attained). Gradient flows
/// through the argmax branch, including the evaluation point itself.
pub fn soft_ks(
    tape: &mut Tape,
    samples_a: ValueRef,
    samples_b: ValueRef,
    temperature: SoftKsTemperature,
) -> Result<ValueRef> {
    let (na, nb) = (tape.value(samples_a).rows(), tape.value(samples_b).rows());
    if na == 0 || nb == 0 {
        return Err(Error::GroupAbsent);
    }
    let tau = match temperature {
        SoftKsTemperature::Fixed(t) => {
            if t <= 0.0 {
                return Err(Error::contract(format!("soft_ks: temperature must be positive, got {t}")));
            }
            t
        }
        SoftKsTemperature::Auto => {
            let mut pooled: Vec<f64> = tape.value(samples_a).data().to_vec();
            pooled.extend_from_slice(tape.value(samples_b).data());
            let sd = pooled_std(&pooled);
            if sd > 0.0 {
                0.1 * sd
            } else {
                1.0 // all pooled values identical; result is 0 regardless
            }
        }
    };
    let pooled = tape.concat_rows(samples_a, samples_b)?;
    let n = na + nb;
    let mut perm: Vec<usize> = (0..n).collect();
    {
        let vals = tape.value(pooled).data();
        perm.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap());
    }
    let sorted = tape.permute_rows(pooled, perm)?;
    let lo = tape.slice_rows(sorted, 0, n - 1)?;
    let hi = tape.slice_rows(sorted, 1, n - 1)?;
    let sums = tape.add(lo, hi)?;
    let midpoints = tape.mul_scalar(sums, 0.5);
    let smooth_ecdf = |tape: &mut Tape, samples: ValueRef| -> Result<ValueRef> {
        let gaps = tape.outer_sub(midpoints, samples)?;
        let scaled = tape.mul_scalar(gaps, 1.0 / tau);
        let s = tape.sigmoid(scaled);
        Ok(tape.row_means(s))
    };
    let f_a = smooth_ecdf(tape, samples_a)?;
    let f_b = smooth_ecdf(tape, samples_b)?;
    let diff = tape.sub(f_a, f_b)?;
    let gaps = tape.abs(diff);
    Ok(tape.max(gaps))
}

/// Standardized mean difference with pooled-variance denominator:
/// |mean_a - mean_b| / sqrt((var_a + var_b)/2 + eps), sample variances.
pub fn smd(tape: &mut Tape, samples_a: ValueRef, samples_b: ValueRef) -> Result<ValueRef> {
    let (na, nb) = (tape.value(samples_a).len(), tape.value(samples_b).len());
    if na < 2 || nb < 2 {
        return Err(Error::GroupAbsent);
    }
    let moments = |tape: &mut Tape, s: ValueRef, n: usize| -> Result<(ValueRef, ValueRef)> {
        let mean = tape.mean(s);
        let centered = tape.sub(s, mean)?;
        let sq = tape.square(centered);
        let ss = tape.sum(sq);
        let var = tape.mul_scalar(ss, 1.0 / (n as f64 - 1.0));
        Ok((mean, var))
    };
    let (mean_a, var_a) = moments(tape, samples_a, na)?;
    let (mean_b, var_b) = moments(tape, samples_b, nb)?;
    let gap = tape.sub(mean_a, mean_b)?;
    let num = tape.abs(gap);
    let var_sum = tape.add(var_a, var_b)?;
    let half = tape.mul_scalar(var_sum, 0.5);
    let shifted = tape.add_scalar(half, SMD_EPS);
    let den = tape.sqrt(shifted);
    tape.div(num, den)
}

fn prg_on_predictions(
    tape: &mut Tape,
    pred_control: ValueRef,
    pred_treated: ValueRef,
    variant: PrgVariant,
    temperature: SoftKsTemperature,
) -> Result<ValueRef> {
    match variant {
        PrgVariant::SoftKs => soft_ks(tape, pred_control, pred_treated, temperature),
        PrgVariant::Smd => smd(tape, pred_control, pred_treated),
    }
}

/// Prognostic balance loss: control-head predictions on both groups,
/// compared by the chosen differentiable two-sample statistic.
pub fn prognostic_loss(
    tape: &mut Tape,
    taped: &TapedTwoHead,
    x_control: &Array,
    x_treated: &Array,
    variant: PrgVariant,
    temperature: SoftKsTemperature,
) -> Result<ValueRef> {
    if x_control.rows() == 0 || x_treated.rows() == 0 {
        return Err(Error::GroupAbsent);
    }
    let xc = tape.leaf(x_control.clone());
    let xt = tape.leaf(x_treated.clone());
    let hc = taped.embed(tape, xc)?;
    let ht = taped.embed(tape, xt)?;
    let pred_c = taped.head0_on(tape, hc)?;
    let pred_t = taped.head0_on(tape, ht)?;
    prg_on_predictions(tape, pred_c, pred_t, variant, temperature)
}

/// The recorded objective of one minibatch plus the taped parameter handles
/// needed to pull gradients after backward.
pub struct Objective {
    pub total: ValueRef,
    pub taped: TapedModel,
    pub fit_value: f64,
    pub mmd_value: f64,
    pub prg_value: f64,
}

/// L_fit + gamma * L_mmd + lambda * L_prg on one minibatch. Regularizer
/// terms are skipped (contribute 0) when a treatment group is absent from
/// the batch or its weight is 0. The MMD and prognostic terms require the
/// shared embedding and are therefore only valid for the two-head model.
pub fn total_objective(
    tape: &mut Tape,
    model: &Model,
    batch: &Batch,
    weights: &LossWeights,
) -> Result<Objective> {
    weights.validate()?;
    if batch.is_empty() {
        return Err(Error::contract("total_objective: empty batch"));
    }
    let taped = model.record_on(tape);
    match &taped {
        TapedModel::Separate(sep) => {
            if weights.gamma > 0.0 || weights.lambda > 0.0 {
                return Err(Error::contract(
                    "separate-heads model has no shared embedding; gamma and lambda must be 0",
                ));
            }
            let pred0 = if batch.n_control() > 0 {
                let xc = tape.leaf(batch.x_control.clone());
                Some(sep.net0_on(tape, xc)?)
            } else {
                None
            };
            let pred1 = if batch.n_treated() > 0 {
                let xt = tape.leaf(batch.x_treated.clone());
                Some(sep.net1_on(tape, xt)?)
            } else {
                None
            };
            let fit = fit_loss(tape, pred0, &batch.y_control, pred1, &batch.y_treated, weights.rho)?;
            let fit_value = tape.scalar_value(fit);
            Ok(Objective {
                total: fit,
                taped,
                fit_value,
                mmd_value: 0.0,
                prg_value: 0.0,
            })
        }
        TapedModel::TwoHead(two) => {
            let mut h_control = None;
            let mut h_treated = None;
            let pred0 = if batch.n_control() > 0 {
                let xc = tape.leaf(batch.x_control.clone());
                let h = two.embed(tape, xc)?;
                h_control = Some(h);
                Some(two.head0_on(tape, h)?)
            } else {
                None
            };
            let pred1 = if batch.n_treated() > 0 {
                let xt = tape.leaf(batch.x_treated.clone());
                let h = two.embed(tape, xt)?;
                h_treated = Some(h);
                Some(two.head1_on(tape, h)?)
            } else {
                None
            };
            let fit = fit_loss(tape, pred0, &batch.y_control, pred1, &batch.y_treated, weights.rho)?;
            let fit_value = tape.scalar_value(fit);
            let mut total = fit;
            let mut mmd_value = 0.0;
            let mut prg_value = 0.0;
            if let (Some(hc), Some(ht)) = (h_control, h_treated) {
                if weights.gamma > 0.0 {
                    let mmd = mmd_sq(tape, hc, ht, weights.kernel_bandwidth, weights.mmd_estimator)?;
                    mmd_value = tape.scalar_value(mmd);
                    let weighted = tape.mul_scalar(mmd, weights.gamma);
                    total = tape.add(total, weighted)?;
                }
                if weights.lambda > 0.0 {
                    let pred_c = pred0.expect("control group present");
                    let pred_t = two.head0_on(tape, ht)?;
                    let prg = prg_on_predictions(
                        tape,
                        pred_c,
                        pred_t,
                        weights.prg_variant,
                        weights.softks_temperature,
                    )?;
                    prg_value = tape.scalar_value(prg);
                    let weighted = tape.mul_scalar(prg, weights.lambda);
                    total = tape.add(total, weighted)?;
                }
            }
            Ok(Objective {
                total,
                taped,
                fit_value,
                mmd_value,
                prg_value,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelKind, TwoHeadModel};

    fn column_leaf(tape: &mut Tape, v: &[f64]) -> ValueRef {
        tape.leaf(Array::column(v.to_vec()))
    }

    #[test]
    fn fit_loss_perfect_predictions_zero() {
        let mut tape = Tape::new();
        let p0 = column_leaf(&mut tape, &[1.0, 2.0]);
        let p1 = column_leaf(&mut tape, &[3.0]);
        let l = fit_loss(&mut tape, Some(p0), &[1.0, 2.0], Some(p1), &[3.0], 1.0).unwrap();
        assert_eq!(tape.scalar_value(l), 0.0);
    }

    #[test]
    fn fit_loss_single_control_hand_case() {
        let mut tape = Tape::new();
        let p0 = column_leaf(&mut tape, &[3.0]);
        let l = fit_loss(&mut tape, Some(p0), &[1.0], None, &[], 7.3).unwrap();
        assert_eq!(tape.scalar_value(l), 2.0);
    }

    #[test]
    fn fit_loss_both_groups_hand_case() {
        // control err 2, treated err 1, rho = 1: 0.5*4 + 0.5*1 = 2.5
        let mut tape = Tape::new();
        let p0 = column_leaf(&mut tape, &[2.0]);
        let p1 = column_leaf(&mut tape, &[1.0]);
        let l = fit_loss(&mut tape, Some(p0), &[0.0], Some(p1), &[0.0], 1.0).unwrap();
        assert_eq!(tape.scalar_value(l), 2.5);
    }

    #[test]
    fn fit_loss_length_mismatch() {
        let mut tape = Tape::new();
        let p0 = column_leaf(&mut tape, &[1.0, 2.0]);
        assert!(fit_loss(&mut tape, Some(p0), &[1.0], None, &[], 1.0).is_err());
    }

    #[test]
    fn mmd_identical_points_near_zero() {
        let mut tape = Tape::new();
        let pts = Array::from_vec(3, 2, vec![0.1, 0.4, -1.0, 2.0, 0.0, 0.3]);
        let a = tape.leaf(pts.clone());
        let b = tape.leaf(pts);
        let m = mmd_sq(&mut tape, a, b, Bandwidth::MedianHeuristic, MmdEstimator::Biased).unwrap();
        assert!(tape.scalar_value(m).abs() < 1e-12);
    }

    #[test]
    fn mmd_closed_form_single_points() {
        let mut tape = Tape::new();
        let a = column_leaf(&mut tape, &[0.0]);
        let b = column_leaf(&mut tape, &[1.0]);
        let m = mmd_sq(&mut tape, a, b, Bandwidth::Fixed(1.0), MmdEstimator::Biased).unwrap();
        let expected = 2.0 - 2.0 * (-0.5f64).exp();
        assert!((tape.scalar_value(m) - expected).abs() < 1e-12);
    }

    #[test]
    fn mmd_symmetric() {
        let mut tape = Tape::new();
        let a = tape.leaf(Array::from_vec(2, 2, vec![0.3, 1.0, -0.2, 0.5]));
        let b = tape.leaf(Array::from_vec(3, 2, vec![1.1, 0.0, 0.7, -0.4, 0.2, 0.9]));
        let ab = mmd_sq(&mut tape, a, b, Bandwidth::Fixed(0.8), MmdEstimator::Biased).unwrap();
        let ba = mmd_sq(&mut tape, b, a, Bandwidth::Fixed(0.8), MmdEstimator::Biased).unwrap();
        assert!((tape.scalar_value(ab) - tape.scalar_value(ba)).abs() < 1e-14);
    }

    #[test]
    fn mmd_empty_group_signals_absent() {
        let mut tape = Tape::new();
        let a = tape.leaf(Array::zeros(0, 2));
        let b = tape.leaf(Array::zeros(3, 2));
        assert!(matches!(
            mmd_sq(&mut tape, a, b, Bandwidth::Fixed(1.0), MmdEstimator::Biased),
            Err(Error::GroupAbsent)
        ));
    }

    #[test]
    fn ks_exact_cases() {
        assert_eq!(ks_exact(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_exact(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(ks_exact(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), 0.5);
        assert!(matches!(ks_exact(&[], &[1.0]), Err(Error::GroupAbsent)));
    }

    #[test]
    fn soft_ks_identical_samples_zero() {
        let mut tape = Tape::new();
        let a = column_leaf(&mut tape, &[0.5, 1.5, -0.3]);
        let b = column_leaf(&mut tape, &[0.5, 1.5, -0.3]);
        let s = soft_ks(&mut tape, a, b, SoftKsTemperature::Auto).unwrap();
        assert!(tape.scalar_value(s).abs() < 1e-12);
    }

    #[test]
    fn soft_ks_approaches_exact_at_low_temperature() {
        let a = [1.0, 3.0];
        let b = [2.0, 4.0];
        let pooled_sd = pooled_std(&[1.0, 2.0, 3.0, 4.0]);
        let mut tape = Tape::new();
        let av = column_leaf(&mut tape, &a);
        let bv = column_leaf(&mut tape, &b);
        let s = soft_ks(&mut tape, av, bv, SoftKsTemperature::Fixed(0.01 * pooled_sd)).unwrap();
        let exact = ks_exact(&a, &b).unwrap();
        assert!((tape.scalar_value(s) - exact).abs() < 0.01);
    }

    #[test]
    fn soft_ks_monotone_in_shift() {
        let a = [0.0, 0.0, 0.0, 0.0];
        let mut prev = -1.0;
        for c in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let mut tape = Tape::new();
            let av = column_leaf(&mut tape, &a);
            let bv = column_leaf(&mut tape, &[c, c, c, c]);
            let s = soft_ks(&mut tape, av, bv, SoftKsTemperature::Fixed(1.0)).unwrap();
            let v = tape.scalar_value(s);
            assert!(v > prev, "soft_ks not increasing at shift {c}: {v} <= {prev}");
            prev = v;
        }
    }

    #[test]
    fn soft_ks_rejects_nonpositive_temperature() {
        let mut tape = Tape::new();
        let a = column_leaf(&mut tape, &[1.0]);
        let b = column_leaf(&mut tape, &[2.0]);
        assert!(matches!(
            soft_ks(&mut tape, a, b, SoftKsTemperature::Fixed(0.0)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn smd_identical_zero_and_hand_case() {
        let mut tape = Tape::new();
        let a = column_leaf(&mut tape, &[1.0, 2.0, 3.0]);
        let b = column_leaf(&mut tape, &[1.0, 2.0, 3.0]);
        let s = smd(&mut tape, a, b).unwrap();
        assert!(tape.scalar_value(s).abs() < 1e-9);

        let a = column_leaf(&mut tape, &[0.0, 2.0]);
        let b = column_leaf(&mut tape, &[3.0, 5.0]);
        let s = smd(&mut tape, a, b).unwrap();
        assert!((tape.scalar_value(s) - 3.0 / 2.0f64.sqrt()).abs() < 1e-7);
    }

    #[test]
    fn smd_scale_covariant() {
        let base_a = [0.4, 1.9, -0.7, 2.2];
        let base_b = [1.1, 0.3, 2.8, -0.5];
        let eval = |c: f64| {
            let mut tape = Tape::new();
            let a = column_leaf(&mut tape, &base_a.map(|x| c * x));
            let b = column_leaf(&mut tape, &base_b.map(|x| c * x));
            let s = smd(&mut tape, a, b).unwrap();
            tape.scalar_value(s)
        };
        assert!((eval(1.0) - eval(5.0)).abs() < 1e-6);
    }

    #[test]
    fn smd_tiny_group_signals_absent() {
        let mut tape = Tape::new();
        let a = column_leaf(&mut tape, &[1.0]);
        let b = column_leaf(&mut tape, &[1.0, 2.0]);
        assert!(matches!(smd(&mut tape, a, b), Err(Error::GroupAbsent)));
    }

    fn toy_batch(n_control: usize, n_treated: usize, d: usize) -> Batch {
        let gen_matrix = |rows: usize, offset: f64| {
            Array::from_vec(
                rows,
                d,
                (0..rows * d)
                    .map(|i| ((i * 31 % 17) as f64) * 0.1 - 0.8 + offset)
                    .collect(),
            )
        };
        Batch {
            x_control: gen_matrix(n_control, 0.0),
            y_control: (0..n_control).map(|i| (i as f64) * 0.3 - 1.0).collect(),
            x_treated: gen_matrix(n_treated, 0.4),
            y_treated: (0..n_treated).map(|i| (i as f64) * 0.2 + 0.5).collect(),
        }
    }

    #[test]
    fn objective_reduces_to_fit_when_unregularized() {
        let model = Model::init(ModelKind::TwoHead, 25, 1);
        let batch = toy_batch(4, 3, 25);
        let weights = LossWeights::default();
        let mut tape = Tape::new();
        let obj = total_objective(&mut tape, &model, &batch, &weights).unwrap();
        assert_eq!(tape.scalar_value(obj.total), obj.fit_value);
        assert_eq!(obj.mmd_value, 0.0);
        assert_eq!(obj.prg_value, 0.0);
    }

    #[test]
    fn objective_all_control_batch_skips_regularizers() {
        let model = Model::init(ModelKind::TwoHead, 25, 1);
        let batch = toy_batch(5, 0, 25);
        let weights = LossWeights {
            gamma: 3.0,
            lambda: 2.0,
            ..LossWeights::default()
        };
        let mut tape = Tape::new();
        let obj = total_objective(&mut tape, &model, &batch, &weights).unwrap();
        assert_eq!(tape.scalar_value(obj.total), obj.fit_value);
    }

    #[test]
    fn objective_rejects_negative_weights() {
        let model = Model::init(ModelKind::TwoHead, 25, 1);
        let batch = toy_batch(2, 2, 25);
        let weights = LossWeights {
            gamma: -1.0,
            ..LossWeights::default()
        };
        let mut tape = Tape::new();
        assert!(total_objective(&mut tape, &model, &batch, &weights).is_err());
    }

    #[test]
    fn objective_rejects_regularized_separate_heads() {
        let model = Model::init(ModelKind::SeparateHeads, 25, 1);
        let batch = toy_batch(2, 2, 25);
        let weights = LossWeights {
            gamma: 1.0,
            ..LossWeights::default()
        };
        let mut tape = Tape::new();
        assert!(total_objective(&mut tape, &model, &batch, &weights).is_err());
    }

    #[test]
    fn prognostic_loss_constant_head_is_zero_smd() {
        let mut model = TwoHeadModel::init(25, 2);
        // zero the head0 weights so it predicts the same constant everywhere
        for layer in &mut model.head0 {
            layer.weight.fill(0.0);
            layer.bias.fill(0.25);
        }
        let mut tape = Tape::new();
        let taped = model.record(&mut tape);
        let xc = Array::from_vec(3, 25, (0..75).map(|i| (i % 7) as f64 * 0.1).collect());
        let xt = Array::from_vec(2, 25, (0..50).map(|i| (i % 5) as f64 * 0.2).collect());
        let l = prognostic_loss(&mut tape, &taped, &xc, &xt, PrgVariant::Smd, SoftKsTemperature::Auto)
            .unwrap();
        assert!(tape.scalar_value(l).abs() < 1e-6);
    }

    #[test]
    fn prognostic_loss_has_zero_gradient_on_head1() {
        let model = TwoHeadModel::init(25, 4);
        let mut tape = Tape::new();
        let taped = model.record(&mut tape);
        let xc = Array::from_vec(4, 25, (0..100).map(|i| ((i * 13) % 9) as f64 * 0.1).collect());
        let xt = Array::from_vec(3, 25, (0..75).map(|i| ((i * 7) % 11) as f64 * 0.1).collect());
        let l = prognostic_loss(&mut tape, &taped, &xc, &xt, PrgVariant::Smd, SoftKsTemperature::Auto)
            .unwrap();
        tape.backward(l).unwrap();
        // param order: shared (4 refs), head0 (4), head1 (4)
        let refs = taped.param_refs();
        for &r in &refs[8..12] {
            assert!(tape.grad(r).data().iter().all(|&g| g == 0.0));
        }
        // shared layers are in the graph, so at least one gradient is nonzero
        assert!(refs[..4]
            .iter()
            .any(|&r| tape.grad(r).data().iter().any(|&g| g != 0.0)));
    }
}
