//! Evaluation metrics (AUC, log loss, RMSE, relative information gain) and a
//! paired two-sided t-test for comparing per-seed metric series.
//!
//! The AUC uses the rank statistic with average ranks for ties, which equals
//! the brute-force count over all positive/negative pairs (1 for a correctly
//! ordered pair, 1/2 for a tied score) — both compute `U / (P * N)` and the
//! tests pin them to bitwise equality. The t-test's p-value comes from the
//! regularized incomplete beta function, implemented below via a Lanczos
//! log-gamma and Lentz's continued fraction; spot values are frozen in the
//! tests against an independent reference implementation.

use crate::data::{recalibrate, Dataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::log_loss;

/// Area under the ROC curve from `(label, score)` pairs, by the
/// Mann-Whitney rank statistic with average ranks for tied scores.
/// Scores may be any finite reals; labels must be 0/1 with both classes
/// present ([`Error::AucUndefined`] otherwise).
pub fn auc(pairs: &[(u8, f64)]) -> Result<f64> {
    validate_pairs(pairs, false)?;
    let positives = pairs.iter().filter(|(y, _)| *y == 1).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::AucUndefined);
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].1.total_cmp(&pairs[b].1));
    // Walk tie groups; each member gets the group's average 1-based rank.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && pairs[order[j]].1 == pairs[order[i]].1 {
            j += 1;
        }
        // Ranks i+1 ..= j, averaging to (i + 1 + j) / 2.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group =
            order[i..j].iter().filter(|&&idx| pairs[idx].0 == 1).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j;
    }
    let p = positives as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Reference AUC: explicit loop over every positive/negative pair, scoring
/// 1 for a correctly ordered pair and 1/2 for a tie. `O(P * N)` — oracle and
/// test use only.
pub fn auc_brute(pairs: &[(u8, f64)]) -> Result<f64> {
    validate_pairs(pairs, false)?;
    let pos: Vec<f64> = pairs.iter().filter(|(y, _)| *y == 1).map(|(_, s)| *s).collect();
    let neg: Vec<f64> = pairs.iter().filter(|(y, _)| *y == 0).map(|(_, s)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::AucUndefined);
    }
    let mut u = 0.0;
    for &sp in &pos {
        for &sn in &neg {
            if sp > sn {
                u += 1.0;
            } else if sp == sn {
                u += 0.5;
            }
        }
    }
    Ok(u / (pos.len() as f64 * neg.len() as f64))
}

/// Root mean squared error between labels and predicted probabilities.
pub fn rmse(pairs: &[(u8, f64)]) -> Result<f64> {
    validate_pairs(pairs, false)?;
    let mse = pairs
        .iter()
        .map(|(y, p)| {
            let d = *y as f64 - p;
            d * d
        })
        .sum::<f64>()
        / pairs.len() as f64;
    Ok(mse.sqrt())
}

/// Mean log loss over the pairs (predictions clamped as in training).
pub fn mean_log_loss(pairs: &[(u8, f64)]) -> Result<f64> {
    validate_pairs(pairs, true)?;
    let mut sum = 0.0;
    for (y, p) in pairs {
        sum += log_loss(*y, *p)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Relative information gain: `1 - mean_log_loss / H(base_rate)` where `H`
/// is the entropy of always predicting the label base rate. Errors when the
/// base rate is 0 or 1 (the reference entropy vanishes).
pub fn rig(pairs: &[(u8, f64)]) -> Result<f64> {
    validate_pairs(pairs, true)?;
    let r = pairs.iter().map(|(y, _)| *y as f64).sum::<f64>() / pairs.len() as f64;
    if r == 0.0 || r == 1.0 {
        return Err(Error::DegenerateBaseRate(r));
    }
    let entropy = -r * r.ln() - (1.0 - r) * (1.0 - r).ln();
    Ok(1.0 - mean_log_loss(pairs)? / entropy)
}

fn validate_pairs(pairs: &[(u8, f64)], _probabilistic: bool) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (y, p) in pairs {
        if *y > 1 {
            return Err(Error::InvalidArg(format!("label must be 0 or 1, got {y}")));
        }
        if !p.is_finite() {
            return Err(Error::NonFinite(format!("prediction {p} is not finite")));
        }
    }
    Ok(())
}

/// One model's evaluation summary.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub n: usize,
    pub auc: f64,
    pub log_loss: f64,
    pub rmse: f64,
    pub rig: f64,
    pub base_rate: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "model,n,auc,logloss,rmse,rig";

    pub fn csv_row(&self, model: &str) -> String {
        format!("{},{},{},{},{},{}", model, self.n, self.auc, self.log_loss, self.rmse, self.rig)
    }
}

/// Scores a dataset with a model and computes all metrics.
///
/// `downsampling_ratio` is the negative down-sampling ratio the model was
/// *trained* under; when it is below 1 the raw predictions are recalibrated
/// back to the original prior before any metric is computed.
pub fn evaluate(model: &Model, ds: &Dataset, downsampling_ratio: f64) -> Result<MetricsReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(downsampling_ratio > 0.0 && downsampling_ratio <= 1.0) {
        return Err(Error::InvalidArg(format!(
            "downsampling ratio must be in (0, 1], got {downsampling_ratio}"
        )));
    }
    model.validate_schema(&ds.schema)?;
    let mut pairs = Vec::with_capacity(ds.len());
    for s in &ds.samples {
        let raw = model.predict(s);
        let p =
            if downsampling_ratio < 1.0 { recalibrate(raw, downsampling_ratio)? } else { raw };
        pairs.push((s.label, p));
    }
    Ok(MetricsReport {
        n: pairs.len(),
        auc: auc(&pairs)?,
        log_loss: mean_log_loss(&pairs)?,
        rmse: rmse(&pairs)?,
        rig: rig(&pairs)?,
        base_rate: ds.base_rate(),
    })
}

/// Paired two-sided t-test result.
#[derive(Clone, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    /// True when the differences had (numerically) zero variance, in which
    /// case `p` is 1 for identical means and 0 otherwise by convention.
    pub degenerate: bool,
}

/// Paired two-sided t-test on matched samples `a` and `b` (e.g. per-seed AUCs
/// of two models). Requires equal lengths and at least two pairs.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidArg(format!(
            "paired t-test needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArg("paired t-test needs at least 2 pairs".into()));
    }
    for v in a.iter().chain(b) {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("t-test input {v} is not finite")));
        }
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let df = n - 1;
    // Constant shifts can leave rounding dust in the differences, so treat
    // any spread far below the mean's scale as zero variance too.
    if sd == 0.0 || sd < 1e-12 * mean.abs() {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        };
        return Ok(TTest { t, p, df, degenerate: true });
    }
    let t = mean / (sd / (n as f64).sqrt());
    Ok(TTest { t, p: student_t_two_sided_p(t, df), df, degenerate: false })
}

/// Two-sided p-value of Student's t with `df` degrees of freedom:
/// `P(|T| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2)` (regularized incomplete
/// beta).
pub fn student_t_two_sided_p(t: f64, df: usize) -> f64 {
    let dff = df as f64;
    reg_inc_beta(dff / 2.0, 0.5, dff / (dff + t * t))
}

/// Regularized incomplete beta function `I_x(a, b)`, evaluated through
/// Lentz's continued fraction on whichever tail converges fast.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        1.0 - front * betacf(b, a, 1.0 - x) / b
    }
}

/// Natural log of the gamma function (Lanczos approximation, g = 7, 9
/// coefficients; |relative error| < 1e-13 on the positive axis).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    use std::f64::consts::PI;
    if x < 0.5 {
        // Reflection: Gamma(x) Gamma(1 - x) = pi / sin(pi x).
        (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let z = x - 1.0;
        let mut acc = COEF[0];
        for (i, &c) in COEF.iter().enumerate().skip(1) {
            acc += c / (z + i as f64);
        }
        let t = z + 7.5;
        0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
    }
}

/// Continued fraction for the incomplete beta (modified Lentz's method).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 3e-16;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let mf = m as f64;
        let m2 = 2.0 * mf;
        // Even step.
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    #[test]
    fn auc_on_hand_computed_cases() {
        // Perfect separation.
        let perfect = [(0u8, 0.1), (0, 0.2), (1, 0.8), (1, 0.9)];
        assert_eq!(auc(&perfect).unwrap(), 1.0);
        // Perfectly wrong.
        let inverted = [(1u8, 0.1), (1, 0.2), (0, 0.8), (0, 0.9)];
        assert_eq!(auc(&inverted).unwrap(), 0.0);
        // Tie across classes: labels [1,0,1,0], scores [.9,.8,.8,.1]
        // -> pairs (0.9>0.8)=1, (0.9>0.1)=1, (0.8=0.8)=0.5, (0.8>0.1)=1,
        // U = 3.5 of 4.
        let tied = [(1u8, 0.9), (0, 0.8), (1, 0.8), (0, 0.1)];
        assert_eq!(auc(&tied).unwrap(), 0.875);
        assert_eq!(auc_brute(&tied).unwrap(), 0.875);
    }

    /// Rank AUC equals pairwise AUC bitwise, including heavy ties: both are
    /// exact rational arithmetic in f64 at these sizes (halves and small
    /// integer sums), divided identically.
    #[test]
    fn rank_auc_equals_brute_force_bitwise() {
        let mut rng = Rng::new(404);
        for trial in 0..50 {
            let n = 2 + rng.index(120);
            let mut pairs: Vec<(u8, f64)> = (0..n)
                .map(|_| {
                    // Quantized scores force plenty of exact ties.
                    let s = (rng.index(8) as f64) / 8.0;
                    (rng.bernoulli(0.4) as u8, s)
                })
                .collect();
            // Guarantee both classes.
            pairs[0].0 = 1;
            if n > 1 {
                pairs[1].0 = 0;
            }
            let fast = auc(&pairs).unwrap();
            let brute = auc_brute(&pairs).unwrap();
            assert_eq!(fast.to_bits(), brute.to_bits(), "trial {trial}: {fast} vs {brute}");
        }
    }

    #[test]
    fn auc_needs_both_classes_and_finite_scores() {
        assert!(matches!(auc(&[(1u8, 0.5), (1, 0.7)]), Err(Error::AucUndefined)));
        assert!(matches!(auc(&[(0u8, 0.5), (0, 0.7)]), Err(Error::AucUndefined)));
        assert!(auc(&[]).is_err());
        assert!(auc(&[(1u8, f64::NAN), (0, 0.3)]).is_err());
        assert!(auc(&[(3u8, 0.5), (0, 0.3)]).is_err());
        // Scores outside [0, 1] are fine (ranking only).
        assert_eq!(auc(&[(0u8, -5.0), (1, 17.0)]).unwrap(), 1.0);
    }

    #[test]
    fn rmse_hand_computed() {
        let pairs = [(1u8, 0.5), (0, 0.5)];
        assert_eq!(rmse(&pairs).unwrap(), 0.5);
        let pairs = [(1u8, 1.0), (0, 0.0)];
        assert_eq!(rmse(&pairs).unwrap(), 0.0);
    }

    /// Frozen reference value (independent implementation):
    /// labels [1,0,0,0], predictions [0.7, 0.1, 0.1, 0.1].
    #[test]
    fn rig_matches_frozen_reference() {
        let pairs = [(1u8, 0.7), (0, 0.1), (0, 0.1), (0, 0.1)];
        let got = rig(&pairs).unwrap();
        assert!(
            (got - 0.7009094588209249).abs() < 1e-14,
            "rig {got} vs frozen 0.7009094588209249"
        );
    }

    #[test]
    fn rig_requires_mixed_labels() {
        assert!(matches!(
            rig(&[(1u8, 0.9), (1, 0.8)]),
            Err(Error::DegenerateBaseRate(r)) if r == 1.0
        ));
        assert!(matches!(
            rig(&[(0u8, 0.1)]),
            Err(Error::DegenerateBaseRate(r)) if r == 0.0
        ));
        // Perfect predictor approaches RIG of 1 (clamped loss, not exactly 1).
        let pairs = [(1u8, 1.0), (0, 0.0)];
        assert!(rig(&pairs).unwrap() > 0.999);
        // Base-rate predictor has RIG exactly 0.
        let pairs = [(1u8, 0.5), (0, 0.5)];
        assert!((rig(&pairs).unwrap()).abs() < 1e-15);
    }

    /// Frozen two-sided Student-t p-values (independent reference):
    /// (t=2, df=9), (t=0.5, df=4), (t=5, df=29), (t=1, df=1).
    #[test]
    fn t_distribution_matches_frozen_references() {
        let cases = [
            (2.0, 9, 0.07655282377070094),
            (0.5, 4, 0.6433299631818633),
            (5.0, 29, 2.5366315735423254e-5),
            (1.0, 1, 0.4999999999999996),
        ];
        for (t, df, want) in cases {
            let got = student_t_two_sided_p(t, df);
            assert!(
                (got - want).abs() <= 1e-12 * want.max(1e-3),
                "p(|T| >= {t}, df = {df}) = {got}, frozen {want}"
            );
            // Two-sided symmetry.
            assert_eq!(student_t_two_sided_p(-t, df), got);
        }
        // t = 0 is certain.
        assert_eq!(student_t_two_sided_p(0.0, 7), 1.0);
    }

    /// Frozen paired t-test (independent reference): the full statistic and
    /// p-value on two 8-seed metric series.
    #[test]
    fn paired_ttest_matches_frozen_reference() {
        let a = [0.52, 0.48, 0.50, 0.47, 0.55, 0.49, 0.51, 0.46];
        let b = [0.50, 0.49, 0.46, 0.44, 0.52, 0.50, 0.48, 0.43];
        let r = paired_ttest(&a, &b).unwrap();
        assert_eq!(r.df, 7);
        assert!(!r.degenerate);
        assert!(
            (r.t - 2.935197542821371).abs() < 1e-12,
            "t = {} vs frozen 2.935197542821371",
            r.t
        );
        assert!(
            (r.p - 0.021862041109044376).abs() < 1e-12,
            "p = {} vs frozen 0.021862041109044376",
            r.p
        );
    }

    #[test]
    fn paired_ttest_zero_variance_convention() {
        // Identical series: no evidence of difference.
        let a = [0.5, 0.6, 0.7];
        let r = paired_ttest(&a, &a).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 1.0);
        assert_eq!(r.t, 0.0);
        // Exact constant shift: certain difference.
        let b: Vec<f64> = a.iter().map(|v| v + 0.125).collect();
        let r = paired_ttest(&a, &b).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 0.0);
        assert!(r.t.is_infinite() && r.t < 0.0);
        // Non-representable constant shift leaves rounding dust; still
        // treated as degenerate.
        let c: Vec<f64> = [10.1, 11.3, 12.7].iter().map(|v| v + 0.1).collect();
        let r = paired_ttest(&[10.1, 11.3, 12.7], &c).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 0.0);
    }

    #[test]
    fn paired_ttest_input_validation() {
        assert!(paired_ttest(&[1.0], &[1.0]).is_err());
        assert!(paired_ttest(&[1.0, 2.0], &[1.0]).is_err());
        assert!(paired_ttest(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ln_gamma_known_values() {
        // Gamma(1) = Gamma(2) = 1, Gamma(5) = 24, Gamma(1/2) = sqrt(pi).
        assert!(ln_gamma(1.0).abs() < 1e-13);
        assert!(ln_gamma(2.0).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24.0f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-13);
    }

    #[test]
    fn reg_inc_beta_basics() {
        assert_eq!(reg_inc_beta(2.0, 3.0, 0.0), 0.0);
        assert_eq!(reg_inc_beta(2.0, 3.0, 1.0), 1.0);
        // I_x(1, 1) = x.
        for &x in &[0.1, 0.25, 0.5, 0.9] {
            assert!((reg_inc_beta(1.0, 1.0, x) - x).abs() < 1e-14);
        }
        // Symmetry: I_x(a, b) = 1 - I_{1-x}(b, a).
        let v = reg_inc_beta(2.5, 4.0, 0.3);
        assert!((v - (1.0 - reg_inc_beta(4.0, 2.5, 0.7))).abs() < 1e-13);
    }

    #[test]
    fn csv_row_shape() {
        let rep = MetricsReport {
            n: 10,
            auc: 0.75,
            log_loss: 0.5,
            rmse: 0.25,
            rig: 0.125,
            base_rate: 0.5,
        };
        assert_eq!(MetricsReport::CSV_HEADER, "model,n,auc,logloss,rmse,rig");
        assert_eq!(rep.csv_row("ipnn"), "ipnn,10,0.75,0.5,0.25,0.125");
    }
}
