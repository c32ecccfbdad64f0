//! Admissible partitions, segment regressions from prefix moments and the
//! dynamic program for the globally SSR-minimising break partition.
//!
//! Segments are half-open 0-based row ranges `a..b` of the effective sample.
//! A break point `b` (1-based last observation of a regime) therefore splits
//! the sample into `0..b` and `b..n`.
//!
//! [`SegmentMoments`] fits every segment from cumulative sums. To keep the
//! prefix differences well conditioned when regressors trend, the full-sample
//! design is first orthonormalised, `W = Q R`, and segment regressions are run
//! of the full-sample residual on `Q`. Coefficients in these coordinates map
//! back through `beta = beta_full + R^{-1} beta_q`. Segments whose moments
//! are too small to trust are refitted from their rows.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimation::{Design, FirstStage};
use crate::linalg::{self, RowMat, CONDITION_CAP};
use crate::model::{min_regime_len, Partition};

/// All admissible break tuples for `k` breaks in `n_obs` observations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdmissibleGrid {
    n_obs: usize,
    k: usize,
    min_len: usize,
}

impl AdmissibleGrid {
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Shortest admissible regime.
    pub fn min_len(&self) -> usize {
        self.min_len
    }

    /// Break tuples in lexicographic order.
    pub fn iter(&self) -> GridIter {
        GridIter { grid: self.clone(), current: None, done: false }
    }

    pub fn count(&self) -> usize {
        self.iter().count()
    }
}

impl IntoIterator for &AdmissibleGrid {
    type Item = Vec<usize>;
    type IntoIter = GridIter;
    fn into_iter(self) -> GridIter {
        self.iter()
    }
}

pub struct GridIter {
    grid: AdmissibleGrid,
    current: Option<Vec<usize>>,
    done: bool,
}

impl Iterator for GridIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let AdmissibleGrid { n_obs: n, k, min_len: m } = self.grid;
        let upper = |i: usize| n - (k - i + 1) * m;
        let next = match self.current.take() {
            None => (1..=k).map(|i| i * m).collect::<Vec<_>>(),
            Some(mut cur) => {
                // advance the right-most break that still has room
                let mut i = k;
                loop {
                    if i == 0 {
                        self.done = true;
                        return None;
                    }
                    if cur[i - 1] < upper(i) {
                        cur[i - 1] += 1;
                        for j in i..k {
                            cur[j] = cur[j - 1] + m;
                        }
                        break;
                    }
                    i -= 1;
                }
                cur
            }
        };
        if k == 0 {
            self.done = true;
        }
        self.current = Some(next.clone());
        Some(next)
    }
}

/// Grid of `k`-break partitions whose regimes are all longer than
/// `max(q - 1, ceil(trim * n_obs))`.
pub fn enumerate_partitions(n_obs: usize, k: usize, trim: f64, q: usize) -> Result<AdmissibleGrid> {
    if !(trim > 0.0 && trim < 0.5) {
        return Err(Error::Config(format!("trimming must lie in (0, 0.5), got {trim}")));
    }
    let min_len = min_regime_len(n_obs, trim, q);
    if (k + 1) * min_len > n_obs {
        return Err(Error::Infeasible(format!("{k} breaks need {} observations with regimes of at least {min_len}, have {n_obs}", (k + 1) * min_len)));
    }
    Ok(AdmissibleGrid { n_obs, k, min_len })
}

/// What the score `s_t` of the robust covariance is built from.
#[derive(Debug, Clone, Copy)]
pub enum ScoreBasis {
    /// Sums of squares only; no robust covariance.
    None,
    /// `s_t` is the residual `y_t - w_t' beta` of a segment fit.
    Residual,
}

/// Prefix sums of `(q q') (x) (c c')` with `c_t = (e_t, q_t)` and `e_t` the
/// full-sample residual, upper triangles of both factors.
#[derive(Debug, Clone)]
struct ScoreTable {
    h: Vec<f64>,
}

/// Smallest pivot of a segment Gram in orthonormalised coordinates for which
/// the prefix-moment fit is trusted. Prefix sums carry absolute rounding of
/// order `n * eps`, so segments whose design is tiny next to the full sample
/// (as after an explosive stretch) are refitted from their rows.
const MOMENT_FLOOR: f64 = 1e-6;

/// Prefix moments of one regression `y ~ W` for fast segment fits.
#[derive(Debug, Clone)]
pub struct SegmentMoments {
    n: usize,
    d: usize,
    w: RowMat,
    y: Vec<f64>,
    r: Vec<f64>,
    r_inv: Vec<f64>,
    beta_full: Vec<f64>,
    gram: Vec<f64>,
    cross: Vec<f64>,
    yy: Vec<f64>,
    score: Option<ScoreTable>,
    pairs_d: Vec<(usize, usize)>,
}

/// Regression on one segment. `coef` is in the original coordinates of `W`.
#[derive(Debug, Clone)]
pub struct SegmentFit {
    pub start: usize,
    pub end: usize,
    pub coef: Vec<f64>,
    pub ssr: f64,
    kind: FitKind,
}

#[derive(Debug, Clone)]
enum FitKind {
    /// From prefix moments: Cholesky factor of the orthonormalised Gram.
    Moments { chol: Vec<f64> },
    /// From a QR of the segment rows: `Q_s` and `R_s^{-1}`.
    Direct { q: RowMat, r_inv: Vec<f64> },
}

impl SegmentFit {
    /// Whether the fit was recomputed from the segment rows.
    pub fn is_direct(&self) -> bool {
        matches!(self.kind, FitKind::Direct { .. })
    }
}

/// `A S A'` for row-major `d x d` matrices.
fn congruence(a: &[f64], s: &[f64], d: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; d * d];
    for (t, ar) in tmp.chunks_exact_mut(d).zip(a.chunks_exact(d)) {
        for (&aik, sr) in ar.iter().zip(s.chunks_exact(d)) {
            for (x, &v) in t.iter_mut().zip(sr) {
                *x += aik * v;
            }
        }
    }
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        let t = &tmp[i * d..(i + 1) * d];
        for j in i..d {
            let v = linalg::dot(t, &a[j * d..(j + 1) * d]);
            out[i * d + j] = v;
            out[j * d + i] = v;
        }
    }
    out
}

impl SegmentMoments {
    pub fn new(w: &RowMat, y: &[f64], basis: ScoreBasis) -> Result<Self> {
        let (n, d) = (w.rows(), w.cols());
        if y.len() != n {
            return Err(Error::Config(format!("{} responses for {} rows", y.len(), n)));
        }
        let wm = w.to_dmatrix();
        let cond = linalg::equilibrated_gram_condition(&wm);
        if !(cond <= CONDITION_CAP) {
            return Err(Error::RankDeficient { context: "full-sample design".into(), condition: cond });
        }
        let qr = wm.qr();
        let q = qr.q();
        let r = qr.r();
        let r_inv_m = r.clone().try_inverse().ok_or(Error::RankDeficient { context: "full-sample design".into(), condition: f64::INFINITY })?;
        let yv = DVector::from_column_slice(y);
        let qty = q.transpose() * &yv;
        let beta_full = &r_inv_m * &qty;
        let resid = &yv - &q * &qty;

        let pairs_d = linalg::upper_pairs(d);
        let nd = pairs_d.len();
        let m = d + 1;
        let pairs_m = linalg::upper_pairs(m);
        let nm = pairs_m.len();
        let stride = nd * nm;
        let mut gram = vec![0.0; (n + 1) * nd];
        let mut cross = vec![0.0; (n + 1) * d];
        let mut yy = vec![0.0; n + 1];
        let mut h = match basis {
            ScoreBasis::None => None,
            ScoreBasis::Residual => Some(vec![0.0; (n + 1) * stride]),
        };
        let mut crow = vec![0.0; m];
        let mut qq = vec![0.0; nd];
        let mut cc = vec![0.0; nm];
        for t in 0..n {
            let e = resid[t];
            crow[0] = e;
            for j in 0..d {
                crow[j + 1] = q[(t, j)];
            }
            let qrow = &crow[1..];
            for (v, &(i, j)) in qq.iter_mut().zip(&pairs_d) {
                *v = qrow[i] * qrow[j];
            }
            let (g0, g1) = gram[t * nd..(t + 2) * nd].split_at_mut(nd);
            for ((next, prev), v) in g1.iter_mut().zip(&*g0).zip(&qq) {
                *next = prev + v;
            }
            let (c0, c1) = cross[t * d..(t + 2) * d].split_at_mut(d);
            for ((next, prev), v) in c1.iter_mut().zip(&*c0).zip(qrow) {
                *next = prev + v * e;
            }
            yy[t + 1] = yy[t] + e * e;
            if let Some(h) = h.as_mut() {
                for (v, &(k, l)) in cc.iter_mut().zip(&pairs_m) {
                    *v = crow[k] * crow[l];
                }
                let (h0, h1) = h[t * stride..(t + 2) * stride].split_at_mut(stride);
                for ((next, prev), &w) in h1.chunks_exact_mut(nm).zip(h0.chunks_exact(nm)).zip(&qq) {
                    for ((x, p), v) in next.iter_mut().zip(prev).zip(&cc) {
                        *x = p + w * v;
                    }
                }
            }
        }
        let score = h.map(|h| ScoreTable { h });
        Ok(Self {
            n,
            d,
            w: w.clone(),
            y: y.to_vec(),
            r: RowMat::from_dmatrix(&r).as_slice().to_vec(),
            r_inv: RowMat::from_dmatrix(&r_inv_m).as_slice().to_vec(),
            beta_full: beta_full.iter().copied().collect(),
            gram,
            cross,
            yy,
            score,
            pairs_d,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// SSR of the full-sample regression.
    pub fn full_ssr(&self) -> f64 {
        self.yy[self.n]
    }

    pub fn fit(&self, a: usize, b: usize) -> Result<SegmentFit> {
        let d = self.d;
        if b > self.n || b < a + d {
            return Err(Error::RankDeficient { context: format!("segment {}..{} with {d} regressors", a + 1, b), condition: f64::INFINITY });
        }
        let nd = self.pairs_d.len();
        let mut chol = vec![0.0; d * d];
        for (p, &(i, j)) in self.pairs_d.iter().enumerate() {
            let v = self.gram[b * nd + p] - self.gram[a * nd + p];
            chol[i * d + j] = v;
            chol[j * d + i] = v;
        }
        let mut coef_q: Vec<f64> = (0..d).map(|j| self.cross[b * d + j] - self.cross[a * d + j]).collect();
        let g = coef_q.clone();
        let trusted = match linalg::cholesky_in_place(&mut chol, d) {
            Some(c) => c <= CONDITION_CAP && (0..d).all(|i| chol[i * d + i].powi(2) >= MOMENT_FLOOR),
            None => false,
        };
        if !trusted {
            return self.direct_fit(a, b);
        }
        linalg::cholesky_solve(&chol, d, &mut coef_q);
        let yy = self.yy[b] - self.yy[a];
        let ssr = (yy - linalg::dot(&g, &coef_q)).max(0.0);
        let coef = (0..d).map(|i| self.beta_full[i] + (0..d).map(|j| self.r_inv[i * d + j] * coef_q[j]).sum::<f64>()).collect();
        Ok(SegmentFit { start: a, end: b, coef, ssr, kind: FitKind::Moments { chol } })
    }

    fn direct_fit(&self, a: usize, b: usize) -> Result<SegmentFit> {
        let ws = self.w.slice_rows(a, b).to_dmatrix();
        let cond = linalg::equilibrated_gram_condition(&ws);
        if !(cond <= CONDITION_CAP) {
            return Err(Error::RankDeficient { context: format!("segment {}..{}", a + 1, b), condition: cond });
        }
        let qr = ws.qr();
        let (q, r) = (qr.q(), qr.r());
        let r_inv = r.try_inverse().ok_or(Error::RankDeficient { context: format!("segment {}..{}", a + 1, b), condition: f64::INFINITY })?;
        let ys = DVector::from_column_slice(&self.y[a..b]);
        let qty = q.transpose() * &ys;
        let coef = &r_inv * &qty;
        let ssr = (&ys - &q * &qty).norm_squared();
        Ok(SegmentFit {
            start: a,
            end: b,
            coef: coef.iter().copied().collect(),
            ssr,
            kind: FitKind::Direct { q: RowMat::from_dmatrix(&q), r_inv: RowMat::from_dmatrix(&r_inv).as_slice().to_vec() },
        })
    }

    pub fn ssr(&self, a: usize, b: usize) -> Result<f64> {
        self.fit(a, b).map(|f| f.ssr)
    }

    /// Weights `gamma` with `s_t = c_t' gamma` for coefficients `beta`:
    /// `s_t = e_t - q_t' R (beta - beta_full)`.
    fn gamma(&self, beta: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut g = vec![1.0; d + 1];
        for i in 0..d {
            g[i + 1] = -(i..d).map(|j| self.r[i * d + j] * (beta[j] - self.beta_full[j])).sum::<f64>();
        }
        g
    }

    /// Robust covariance `(W'W)^{-1} S (W'W)^{-1}` of segment `fit` in the
    /// original coordinates, with `S = sum w w' s_t^2` and residuals
    /// `s_t = y_t - w_t' beta`: the segment's own fit, or the null fit of the
    /// regime for the sequential test.
    pub fn sandwich(&self, fit: &SegmentFit, beta: &[f64]) -> Vec<f64> {
        let table = self.score.as_ref().expect("score table required");
        let d = self.d;
        match &fit.kind {
            FitKind::Moments { chol } => {
                let gamma = self.gamma(beta);
                let m = d + 1;
                let nm = m * (m + 1) / 2;
                let nd = self.pairs_d.len();
                let mut weights = Vec::with_capacity(nm);
                for k in 0..m {
                    for l in k..m {
                        weights.push(if k == l { gamma[k] * gamma[k] } else { 2.0 * gamma[k] * gamma[l] });
                    }
                }
                let stride = nd * nm;
                let (ha, hb) = (&table.h[fit.start * stride..], &table.h[fit.end * stride..]);
                let mut s = vec![0.0; d * d];
                let diffs = hb[..nd * nm].chunks_exact(nm).zip(ha[..nd * nm].chunks_exact(nm));
                for (&(i, j), (b, a)) in self.pairs_d.iter().zip(diffs) {
                    let acc: f64 = weights.iter().zip(b.iter().zip(a)).map(|(w, (hb, ha))| w * (hb - ha)).sum();
                    s[i * d + j] = acc;
                    s[j * d + i] = acc;
                }
                // V = A S A' with A = R^{-1} G^{-1}; row i of A solves G x = row i of R^{-1}
                let mut a = self.r_inv.clone();
                for row in a.chunks_exact_mut(d) {
                    linalg::cholesky_solve(chol, d, row);
                }
                congruence(&a, &s, d)
            }
            FitKind::Direct { q, r_inv } => {
                let mut s = vec![0.0; d * d];
                for (i, t) in (fit.start..fit.end).enumerate() {
                    let st = self.y[t] - linalg::dot(self.w.row(t), beta);
                    let qt = q.row(i);
                    for a in 0..d {
                        for b in a..d {
                            s[a * d + b] += qt[a] * qt[b] * st * st;
                        }
                    }
                }
                for a in 0..d {
                    for b in 0..a {
                        s[a * d + b] = s[b * d + a];
                    }
                }
                congruence(r_inv, &s, d)
            }
        }
    }
}

/// Condition of the column-equilibrated Gram from the triangular factor.
fn scaled_r_condition(r: &[f64], col_sq: &[f64], d: usize) -> f64 {
    let m = DMatrix::from_fn(d, d, |i, j| if j >= i { r[i * d + j] / col_sq[j].sqrt() } else { 0.0 });
    let sv = m.singular_values();
    match sv.min() {
        lo if lo > 0.0 => (sv.max() / lo).powi(2),
        _ => f64::INFINITY,
    }
}

/// SSRs of every segment starting at `a`: entry `b` holds `SSR(a..b)`, or
/// NaN where the segment is shorter than `d` or numerically rank deficient.
/// Rows are added one at a time with Givens rotations, so each value is as
/// accurate as a fresh QR fit.
pub fn ssr_row(w: &RowMat, y: &[f64], a: usize) -> Vec<f64> {
    let (n, d) = (w.rows(), w.cols());
    let mut out = vec![f64::NAN; n + 1];
    let mut r = vec![0.0f64; d * d];
    let mut qty = vec![0.0; d];
    let mut col_sq = vec![0.0; d];
    let mut x = vec![0.0; d];
    let mut ssr = 0.0;
    for t in a..n {
        x.copy_from_slice(w.row(t));
        let mut yt = y[t];
        for j in 0..d {
            col_sq[j] += x[j] * x[j];
        }
        for i in 0..d {
            if x[i] == 0.0 {
                continue;
            }
            let rii = r[i * d + i];
            let h = rii.hypot(x[i]);
            let (c, s) = (rii / h, x[i] / h);
            r[i * d + i] = h;
            for j in i + 1..d {
                let (rij, xj) = (r[i * d + j], x[j]);
                r[i * d + j] = c * rij + s * xj;
                x[j] = c * xj - s * rij;
            }
            let zi = qty[i];
            qty[i] = c * zi + s * yt;
            yt = c * yt - s * zi;
        }
        ssr += yt * yt;
        let len = t + 1 - a;
        if len >= d {
            let mut lo = f64::INFINITY;
            for i in 0..d {
                let rel = if col_sq[i] > 0.0 { r[i * d + i].abs() / col_sq[i].sqrt() } else { 0.0 };
                lo = lo.min(rel);
            }
            // The scaled diagonal only bounds the condition from below; near
            // the cap the exact value decides, so the DP never proposes a
            // partition the estimators refuse.
            let margin = lo * lo * CONDITION_CAP;
            if margin >= 1e4 || (margin >= 1.0 && scaled_r_condition(&r, &col_sq, d) <= CONDITION_CAP) {
                out[t + 1] = ssr;
            }
        }
    }
    out
}

/// Globally SSR-minimising `l`-break partition of `0..n`. `row(a)` returns the
/// segment SSRs starting at `a` (as [`ssr_row`]); NaN segments are
/// inadmissible. Ties go to the lexicographically smallest break tuple.
pub fn optimal_breaks<F>(n: usize, l: usize, min_len: usize, row: F) -> Result<(Vec<usize>, f64)>
where
    F: Fn(usize) -> Vec<f64>,
{
    if (l + 1) * min_len > n {
        return Err(Error::Infeasible(format!("{l} breaks with regimes of {min_len} in {n} observations")));
    }
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n + 1];
    let mut seg = |a: usize, b: usize| -> Option<f64> {
        let v = rows[a].get_or_insert_with(|| row(a))[b];
        (!v.is_nan()).then_some(v)
    };
    let rank_deficient = || Error::RankDeficient { context: format!("every {l}-break partition of 1..{n}"), condition: f64::INFINITY };
    if l == 0 {
        return Ok((Vec::new(), seg(0, n).ok_or_else(rank_deficient)?));
    }
    // best[b]: (ssr, breaks) over 0..b with the last break at b
    let mut best: Vec<Option<(f64, Vec<usize>)>> = vec![None; n + 1];
    for b in min_len..=n - l * min_len {
        best[b] = seg(0, b).map(|v| (v, vec![b]));
    }
    let better = |total: f64, breaks: &[usize], cand: &Option<(f64, Vec<usize>)>| match cand {
        None => true,
        Some((c, cb)) => total < *c || (total == *c && breaks < &cb[..breaks.len()]),
    };
    for j in 2..=l {
        let mut next: Vec<Option<(f64, Vec<usize>)>> = vec![None; n + 1];
        for b in j * min_len..=n - (l - j + 1) * min_len {
            let mut cand: Option<(f64, Vec<usize>)> = None;
            for s in (j - 1) * min_len..=b - min_len {
                let Some((prev, breaks)) = &best[s] else { continue };
                let Some(v) = seg(s, b) else { continue };
                if better(prev + v, breaks, &cand) {
                    let mut nb = breaks.clone();
                    nb.push(b);
                    cand = Some((prev + v, nb));
                }
            }
            next[b] = cand;
        }
        best = next;
    }
    let mut out: Option<(f64, Vec<usize>)> = None;
    for s in l * min_len..=n - min_len {
        let Some((prev, breaks)) = &best[s] else { continue };
        let Some(v) = seg(s, n) else { continue };
        if better(prev + v, breaks, &out) {
            out = Some((prev + v, breaks.clone()));
        }
    }
    let (ssr, breaks) = out.ok_or_else(rank_deficient)?;
    Ok((breaks, ssr))
}

/// Partition with `l` structural breaks minimising the second-stage SSR of
/// `y` on `w_hat = (x_hat, z1)`.
pub fn global_ssr_breaks(design: &Design, x_hat: &RowMat, l: usize, trim: f64) -> Result<(Partition, f64)> {
    let n = design.n_obs();
    let q = design.z.cols();
    let w_hat = design.stack_w(x_hat);
    let min_len = enumerate_partitions(n, l, trim, q)?.min_len();
    let (breaks, ssr) = optimal_breaks(n, l, min_len, |a| ssr_row(&w_hat, &design.y, a))?;
    Ok((Partition::new(breaks, n, trim, q)?, ssr))
}

/// Reduced-form break partition with `h` breaks (SSR summed over the columns
/// of `x`) and the matching first-stage fit.
pub fn rf_break_grid_and_fit(design: &Design, h: usize, trim: f64) -> Result<(Partition, FirstStage)> {
    let n = design.n_obs();
    let q = design.z.cols();
    let columns: Vec<Vec<f64>> = (0..design.p1()).map(|c| design.x.col_vec(c)).collect();
    let min_len = enumerate_partitions(n, h, trim, q)?.min_len();
    let (breaks, _) = optimal_breaks(n, h, min_len, |a| {
        let mut total = ssr_row(&design.z, &columns[0], a);
        for col in &columns[1..] {
            for (acc, v) in total.iter_mut().zip(ssr_row(&design.z, col, a)) {
                *acc += v;
            }
        }
        total
    })?;
    let partition = Partition::new(breaks, n, trim, q)?;
    let fs = crate::estimation::first_stage(design, &partition)?;
    Ok((partition, fs))
}
