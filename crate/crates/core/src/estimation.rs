//! Least-squares kernels: OLS, the regime-wise first and second stages of
//! 2SLS, and Eicker-White covariance blocks by direct summation.
//!
//! These routines favour clarity over speed. The search over partitions uses
//! the prefix-moment engine in [`crate::partition_search`], which is checked
//! against the functions here.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, RowMat, CONDITION_CAP};
use crate::model::{build_instrument_rows, regime_of, Dataset, ModelSpec, Partition, RegimeEstimates};

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: Vec<f64>,
    pub residuals: Vec<f64>,
    pub ssr: f64,
    /// `(X'X)^{-1}`, p x p.
    pub xtx_inv: RowMat,
    pub n_obs: usize,
}

/// OLS of `y` on the columns of `x` through Householder QR.
pub fn ols(x: &RowMat, y: &[f64]) -> Result<OlsFit> {
    ols_with_cap(x, y, CONDITION_CAP)
}

pub fn ols_with_cap(x: &RowMat, y: &[f64], cap: f64) -> Result<OlsFit> {
    let (n, p) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::Config(format!("ols: {} rows but {} responses", n, y.len())));
    }
    if n < p || p == 0 {
        return Err(Error::RankDeficient { context: format!("ols with {n} rows and {p} columns"), condition: f64::INFINITY });
    }
    let xm = x.to_dmatrix();
    let yv = DVector::from_column_slice(y);
    let coef = linalg::qr_least_squares(&xm, &yv, cap).map_err(|condition| Error::RankDeficient { context: "ols".into(), condition })?;
    let fitted = &xm * &coef;
    let residuals: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let ssr = residuals.iter().map(|e| e * e).sum();
    let r = xm.qr().r();
    let rinv = r.try_inverse().ok_or(Error::RankDeficient { context: "ols".into(), condition: f64::INFINITY })?;
    let xtx_inv = &rinv * rinv.transpose();
    Ok(OlsFit { coef: coef.iter().copied().collect(), residuals, ssr, xtx_inv: RowMat::from_dmatrix(&xtx_inv), n_obs: n })
}

/// OLS of every column of `ys` on `x`, returning the `p x m` coefficient matrix.
pub fn ols_multi(x: &RowMat, ys: &RowMat) -> Result<RowMat> {
    let (n, p) = (x.rows(), x.cols());
    if n < p || p == 0 {
        return Err(Error::RankDeficient { context: format!("ols with {n} rows and {p} columns"), condition: f64::INFINITY });
    }
    let xm = x.to_dmatrix();
    let cond = linalg::equilibrated_gram_condition(&xm);
    if !(cond <= CONDITION_CAP) {
        return Err(Error::RankDeficient { context: "first stage".into(), condition: cond });
    }
    let qr = xm.qr();
    let qty = qr.q().transpose() * ys.to_dmatrix();
    let coef = qr.r().solve_upper_triangular(&qty).ok_or(Error::RankDeficient { context: "first stage".into(), condition: f64::INFINITY })?;
    Ok(RowMat::from_dmatrix(&coef))
}

/// Effective-sample arrays shared by every estimation step.
#[derive(Debug, Clone)]
pub struct Design {
    /// Instruments `z_t` (n x q).
    pub z: RowMat,
    /// Included exogenous regressors `z1_t` (n x q1).
    pub z1: RowMat,
    /// Endogenous regressors `x_t` (n x p1).
    pub x: RowMat,
    pub y: Vec<f64>,
    /// Row `i` corresponds to 0-based time `i + offset` of the dataset.
    pub offset: usize,
}

impl Design {
    pub fn new(spec: &ModelSpec, data: &Dataset) -> Result<Self> {
        let rows = build_instrument_rows(spec, data)?;
        let n = rows.z.rows();
        let x = data.x.slice_rows(rows.offset, rows.offset + n);
        let y = data.y[rows.offset..].to_vec();
        Ok(Self { z: rows.z, z1: rows.z1, x, y, offset: rows.offset })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn p1(&self) -> usize {
        self.x.cols()
    }

    /// `w_t = (x_t, z1_t)` with the given first block (`x` or `x_hat`).
    pub fn stack_w(&self, first: &RowMat) -> RowMat {
        let (n, p1, q1) = (self.n_obs(), first.cols(), self.z1.cols());
        let mut w = RowMat::zeros(n, p1 + q1);
        for i in 0..n {
            let row = w.row_mut(i);
            row[..p1].copy_from_slice(first.row(i));
            row[p1..].copy_from_slice(self.z1.row(i));
        }
        w
    }
}

/// Reduced-form fit on a fixed reduced-form partition.
#[derive(Debug, Clone)]
pub struct FirstStage {
    pub delta: Vec<RowMat>,
    pub x_hat: RowMat,
    pub v_hat: RowMat,
}

/// Regime-wise OLS of each column of `x` on `z`.
pub fn first_stage(design: &Design, rf: &Partition) -> Result<FirstStage> {
    first_stage_rows(&design.z, &design.x, rf)
}

pub fn first_stage_rows(z: &RowMat, x: &RowMat, rf: &Partition) -> Result<FirstStage> {
    let (n, p1) = (x.rows(), x.cols());
    let mut delta = Vec::with_capacity(rf.n_regimes());
    let mut x_hat = RowMat::zeros(n, p1);
    for (a, b) in rf.regimes() {
        let zs = z.slice_rows(a - 1, b);
        let xs = x.slice_rows(a - 1, b);
        let d = ols_multi(&zs, &xs).map_err(|e| with_context(e, &format!("reduced-form regime {a}..{b}")))?;
        for t in a - 1..b {
            for c in 0..p1 {
                let fit: f64 = (0..z.cols()).map(|k| z.get(t, k) * d.get(k, c)).sum();
                x_hat.set(t, c, fit);
            }
        }
        delta.push(d);
    }
    let mut v_hat = x.clone();
    for t in 0..n {
        for c in 0..p1 {
            v_hat.set(t, c, x.get(t, c) - x_hat.get(t, c));
        }
    }
    Ok(FirstStage { delta, x_hat, v_hat })
}

fn with_context(e: Error, context: &str) -> Error {
    match e {
        Error::RankDeficient { condition, .. } => Error::RankDeficient { context: context.to_string(), condition },
        other => other,
    }
}

/// Second-stage fit on a fixed structural partition.
#[derive(Debug, Clone)]
pub struct SecondStage {
    pub beta: Vec<Vec<f64>>,
    /// Total second-stage SSR, summed over regimes.
    pub ssr: f64,
    /// `y_t - w_hat_t' beta_t`.
    pub residuals: Vec<f64>,
    /// Structural residuals `y_t - w_t' beta_t` with the observed `x_t`.
    pub u_hat: Vec<f64>,
}

pub fn second_stage(design: &Design, x_hat: &RowMat, se: &Partition) -> Result<SecondStage> {
    let w_hat = design.stack_w(x_hat);
    let w = design.stack_w(&design.x);
    let n = design.n_obs();
    let mut beta = Vec::with_capacity(se.n_regimes());
    let mut residuals = vec![0.0; n];
    let mut u_hat = vec![0.0; n];
    let mut ssr = 0.0;
    for (a, b) in se.regimes() {
        let fit = ols(&w_hat.slice_rows(a - 1, b), &design.y[a - 1..b]).map_err(|e| with_context(e, &format!("structural regime {a}..{b}")))?;
        for t in a - 1..b {
            residuals[t] = fit.residuals[t + 1 - a];
            u_hat[t] = design.y[t] - linalg::dot(w.row(t), &fit.coef);
        }
        ssr += fit.ssr;
        beta.push(fit.coef);
    }
    Ok(SecondStage { beta, ssr, residuals, u_hat })
}

/// Full 2SLS pipeline for one (reduced-form, structural) partition pair.
pub fn estimate(design: &Design, rf: &Partition, se: &Partition) -> Result<RegimeEstimates> {
    let fs = first_stage(design, rf)?;
    let ss = second_stage(design, &fs.x_hat, se)?;
    Ok(RegimeEstimates { rf_breaks: rf.clone(), delta: fs.delta, se_breaks: se.clone(), beta: ss.beta, u_hat: ss.u_hat, v_hat: fs.v_hat, x_hat: fs.x_hat })
}

/// Which fit supplies `beta_x` in the score `u_hat_t + v_hat_t' beta_x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaSource {
    /// The fit under the null hypothesis of the test.
    Null,
    /// The fit under the alternative, at the candidate partition.
    #[default]
    Alt,
}

/// Per-regime `Q`, `M` and `V = Q^{-1} M Q^{-1}`, each normalised by the
/// effective sample size.
#[derive(Debug, Clone)]
pub struct RobustBlocks {
    pub q: Vec<RowMat>,
    pub m: Vec<RowMat>,
    pub v: Vec<RowMat>,
}

/// Eicker-White blocks over the regimes of `partition`. The score at `t` is
/// `a_t = w_hat_t (u_hat_t + v_hat_t' beta_x)` where `u_hat`, `v_hat` and
/// `beta_x` (regime of `t` in `scores.se_breaks`) come from `scores`; pass the
/// alternative fit for [`BetaSource::Alt`] and the null fit for
/// [`BetaSource::Null`].
pub fn eicker_white(design: &Design, scores: &RegimeEstimates, partition: &Partition) -> Result<RobustBlocks> {
    let n = design.n_obs();
    let w_hat = design.stack_w(&scores.x_hat);
    let d = w_hat.cols();
    let p1 = design.p1();
    let s: Vec<f64> = (0..n)
        .map(|t| {
            let beta = &scores.beta[regime_of(t + 1, &scores.se_breaks) - 1];
            scores.u_hat[t] + linalg::dot(scores.v_hat.row(t), &beta[..p1])
        })
        .collect();
    let scale = 1.0 / n as f64;
    let mut out = RobustBlocks { q: Vec::new(), m: Vec::new(), v: Vec::new() };
    for (i, (a, b)) in partition.regimes().into_iter().enumerate() {
        let mut q = DMatrix::<f64>::zeros(d, d);
        let mut m = DMatrix::<f64>::zeros(d, d);
        for t in a - 1..b {
            let w = DVector::from_column_slice(w_hat.row(t));
            let ww = &w * w.transpose();
            m += &ww * (s[t] * s[t]);
            q += ww;
        }
        q *= scale;
        m *= scale;
        let qinv = q.clone().cholesky().ok_or(Error::SingularQ { regime: i + 1 })?.inverse();
        let v = &qinv * &m * &qinv;
        out.q.push(RowMat::from_dmatrix(&q));
        out.m.push(RowMat::from_dmatrix(&m));
        out.v.push(RowMat::from_dmatrix(&v));
    }
    Ok(out)
}
