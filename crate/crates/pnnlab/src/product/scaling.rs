//! Empirical runtime-scaling measurements of the product-layer forms.
//!
//! For a range of field counts `N` at fixed embedding order `M` and node
//! count `D1`, each form's full first-layer construction is timed: the
//! linear signal `lz`, the product signal `lp` in the chosen form, and
//! the biased relu combine. Fitting a least-squares line to the
//! `(log N, log seconds)` points yields the empirical growth exponent,
//! which separates the complexity-reduced forms (factorized inner,
//! superposed outer — near-linear, because the linear signal's
//! `D1*N*M` work dominates their cheap product terms) from the naive
//! quadratic forms.
//!
//! Timing is adaptive: each point doubles an iteration count until a
//! batch runs at least `min_point_seconds`, then reports the mean
//! per-iteration time of that batch, so fast points are averaged over
//! many thousands of runs while slow points execute only a few times.

use std::hint::black_box;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::numkit::{relu, Mat, Rng};
use crate::product::{
    field_sum, ipnn_lp_factorized, ipnn_lp_naive, lz_forward_into, opnn_lp_naive_tied,
    opnn_lp_superposed_into, PackedSym,
};

/// The four product-signal implementations under measurement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpForm {
    /// Full pairwise inner-product sum, `O(N^2 M)` per node set.
    InnerNaive,
    /// Rank-decomposed inner form, `O(D1 N M)`.
    InnerFactorized,
    /// Pairwise outer-product contraction, `O(D1 N^2 M^2)`.
    OuterNaive,
    /// Superposed outer form on the field sum, `O(D1 M^2 + N M)`.
    OuterSuperposed,
}

impl LpForm {
    pub const ALL: [LpForm; 4] = [
        LpForm::InnerNaive,
        LpForm::InnerFactorized,
        LpForm::OuterNaive,
        LpForm::OuterSuperposed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LpForm::InnerNaive => "inner-naive",
            LpForm::InnerFactorized => "inner-factorized",
            LpForm::OuterNaive => "outer-naive",
            LpForm::OuterSuperposed => "outer-superposed",
        }
    }

    pub fn parse(s: &str) -> Result<LpForm> {
        LpForm::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                Error::InvalidArg(format!(
                    "unknown lp form '{s}' (expected one of: inner-naive, \
                     inner-factorized, outer-naive, outer-superposed)"
                ))
            })
    }

    /// True for the complexity-reduced implementations, whose fitted
    /// exponent should be near-linear rather than quadratic.
    pub fn is_reduced(self) -> bool {
        matches!(self, LpForm::InnerFactorized | LpForm::OuterSuperposed)
    }
}

/// Field counts swept by default; six octaves give the log-log fit a
/// wide lever arm.
pub const DEFAULT_N_VALUES: [usize; 6] = [8, 16, 32, 64, 128, 256];

#[derive(Clone, Debug)]
pub struct ScalingConfig {
    /// Field counts to sweep.
    pub n_values: Vec<usize>,
    /// Embedding order.
    pub m: usize,
    /// Product nodes.
    pub d1: usize,
    pub seed: u64,
    /// Minimum wall time of the timed batch at each point.
    pub min_point_seconds: f64,
}

impl Default for ScalingConfig {
    fn default() -> ScalingConfig {
        ScalingConfig {
            n_values: DEFAULT_N_VALUES.to_vec(),
            m: 10,
            d1: 32,
            seed: 1,
            min_point_seconds: 0.03,
        }
    }
}

/// One timed sweep point.
#[derive(Clone, Debug)]
pub struct ScalingPoint {
    pub n_fields: usize,
    /// Mean seconds per full first-layer construction.
    pub seconds: f64,
}

/// A full sweep of one form plus its fitted exponent.
#[derive(Clone, Debug)]
pub struct ScalingRun {
    pub form: LpForm,
    pub points: Vec<ScalingPoint>,
    /// Least-squares slope of `log seconds` against `log N`.
    pub slope: f64,
}

impl ScalingRun {
    /// CSV header matching [`ScalingRun::csv_rows`].
    pub const CSV_HEADER: &'static str = "form,n_fields,seconds";

    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", self.form.name(), p.n_fields, p.seconds));
        }
        out
    }
}

/// Least-squares slope of `ln(seconds)` against `ln(n_fields)`.
pub fn fit_loglog_slope(points: &[ScalingPoint]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidArg(
            "slope fit needs at least two points".into(),
        ));
    }
    for p in points {
        if p.seconds <= 0.0 || p.n_fields == 0 {
            return Err(Error::InvalidArg(format!(
                "slope fit needs positive measurements, got N={} seconds={}",
                p.n_fields, p.seconds
            )));
        }
    }
    let n = points.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for p in points {
        sx += (p.n_fields as f64).ln();
        sy += p.seconds.ln();
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut cov, mut var) = (0.0, 0.0);
    for p in points {
        let dx = (p.n_fields as f64).ln() - mx;
        let dy = p.seconds.ln() - my;
        cov += dx * dy;
        var += dx * dx;
    }
    Ok(cov / var)
}

/// Random dense matrix for benchmark inputs.
fn rand_mat(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.uniform(-0.5, 0.5))
}

/// Random symmetric matrix (for the naive inner weights).
fn rand_sym(n: usize, rng: &mut Rng) -> Mat {
    let a = rand_mat(n, n, rng);
    Mat::from_fn(n, n, |i, j| 0.5 * (a.get(i, j) + a.get(j, i)))
}

/// Times `form` across the configured field counts and fits the slope.
pub fn run_scaling(form: LpForm, cfg: &ScalingConfig) -> Result<ScalingRun> {
    if cfg.m == 0 || cfg.d1 == 0 {
        return Err(Error::InvalidArg("scaling needs m >= 1 and d1 >= 1".into()));
    }
    let mut points = Vec::with_capacity(cfg.n_values.len());
    for &n in &cfg.n_values {
        if n == 0 {
            return Err(Error::InvalidArg("field count 0 in scaling sweep".into()));
        }
        let seconds = time_point(form, n, cfg)?;
        points.push(ScalingPoint {
            n_fields: n,
            seconds,
        });
    }
    let slope = fit_loglog_slope(&points)?;
    Ok(ScalingRun {
        form,
        points,
        slope,
    })
}

/// Builds the inputs for one `(form, N)` point and measures the mean
/// time of a full first-layer construction.
fn time_point(form: LpForm, n: usize, cfg: &ScalingConfig) -> Result<f64> {
    let mut rng = Rng::new(cfg.seed ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let (m, d1) = (cfg.m, cfg.d1);

    let f = rand_mat(n, m, &mut rng);
    let wz = rand_mat(d1, n * m, &mut rng);
    let b1: Vec<f64> = (0..d1).map(|_| rng.uniform(-0.5, 0.5)).collect();

    // Form-specific weights; only the ones the form needs are built.
    let mut inner_naive_w = Vec::new();
    let mut theta = Mat::zeros(1, 1);
    let mut outer_tied_w = Vec::new();
    let mut packed = PackedSym::zeros(1, 1);
    match form {
        LpForm::InnerNaive => {
            inner_naive_w = (0..d1).map(|_| rand_sym(n, &mut rng)).collect();
        }
        LpForm::InnerFactorized => {
            theta = rand_mat(d1, n, &mut rng);
        }
        LpForm::OuterNaive => {
            outer_tied_w = (0..d1).map(|_| rand_sym(m, &mut rng)).collect();
        }
        LpForm::OuterSuperposed => {
            packed = PackedSym::zeros(d1, m);
            for v in packed.mat_mut().data_mut() {
                *v = rng.uniform(-0.5, 0.5);
            }
        }
    }

    let mut lz = Vec::with_capacity(d1);
    let mut lp = Vec::with_capacity(d1);
    let mut l1 = vec![0.0; d1];

    let mut construct = || -> Result<()> {
        lz_forward_into(&wz, f.data(), &mut lz);
        match form {
            LpForm::InnerNaive => lp = ipnn_lp_naive(&inner_naive_w, &f)?,
            LpForm::InnerFactorized => lp = ipnn_lp_factorized(&theta, &f)?,
            LpForm::OuterNaive => lp = opnn_lp_naive_tied(&outer_tied_w, &f)?,
            LpForm::OuterSuperposed => {
                let fsum = field_sum(&f);
                opnn_lp_superposed_into(&packed, &fsum, &mut lp);
            }
        }
        for (k, out) in l1.iter_mut().enumerate() {
            *out = relu(lz[k] + lp[k] + b1[k]);
        }
        black_box(&l1);
        Ok(())
    };

    // Warm-up run (also surfaces shape errors before timing).
    construct()?;

    let mut reps: u64 = 1;
    loop {
        let t0 = Instant::now();
        for _ in 0..reps {
            construct()?;
        }
        let dt = t0.elapsed().as_secs_f64();
        if dt >= cfg.min_point_seconds {
            return Ok(dt / reps as f64);
        }
        // Aim directly for the target batch length once a measurable
        // time exists; otherwise keep doubling.
        reps = if dt > 1e-4 {
            let scale = (cfg.min_point_seconds / dt) * 1.2;
            (reps as f64 * scale).ceil() as u64
        } else {
            reps * 2
        };
    }
}
