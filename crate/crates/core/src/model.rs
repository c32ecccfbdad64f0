//! Domain types: model specification, observed data, partitions and
//! per-regime estimates.
//!
//! Time conventions: a [`Dataset`] holds `T` observations indexed `0..T`.
//! Lagged regressors consume the first `max_lag` of them, so every statistic
//! lives on the effective sample of `T_eff = T - max_lag` rows. Break points
//! in a [`Partition`] are 1-based positions in the effective sample and mark
//! the last observation of a regime.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::RowMat;

/// One regressor or instrument, identified by the variable it reads and the lag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Intercept,
    /// Dependent variable of the structural equation at lag `lag >= 1`.
    Y {
        lag: usize,
    },
    /// Endogenous regressor column `col` (0-based) at lag `lag >= 1`.
    X {
        col: usize,
        lag: usize,
    },
    /// Exogenous regressor column `col` (0-based) at lag `lag >= 0`.
    R {
        col: usize,
        lag: usize,
    },
}

impl Role {
    pub fn lag(&self) -> usize {
        match *self {
            Role::Intercept => 0,
            Role::Y { lag } | Role::X { lag, .. } | Role::R { lag, .. } => lag,
        }
    }

    /// Value of this role at 0-based time `t`, reading the given series.
    /// The caller guarantees `t >= self.lag()`.
    #[inline]
    pub fn value(&self, t: usize, y: &[f64], x: &RowMat, r: &RowMat) -> f64 {
        match *self {
            Role::Intercept => 1.0,
            Role::Y { lag } => y[t - lag],
            Role::X { col, lag } => x.get(t - lag, col),
            Role::R { col, lag } => r.get(t - lag, col),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Role::Intercept => write!(f, "const"),
            Role::Y { lag } => write!(f, "y(-{lag})"),
            Role::X { col, lag: 0 } => write!(f, "x{}", col + 1),
            Role::X { col, lag } => write!(f, "x{}(-{lag})", col + 1),
            Role::R { col, lag: 0 } => write!(f, "r{}", col + 1),
            Role::R { col, lag } => write!(f, "r{}(-{lag})", col + 1),
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    /// Accepts `const`, `y(-1)`, `x1`, `x2(-1)`, `r3`, `r1(-2)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("unrecognised role '{s}'"));
        if s.eq_ignore_ascii_case("const") || s.eq_ignore_ascii_case("intercept") || s == "1" {
            return Ok(Role::Intercept);
        }
        let (head, lag) = match s.find('(') {
            Some(p) => {
                let inner = s[p + 1..].strip_suffix(')').ok_or_else(bad)?;
                let inner = inner.trim();
                let lag: usize = inner.strip_prefix('-').ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
                (&s[..p], lag)
            }
            None => (s, 0),
        };
        let mut chars = head.chars();
        let kind = chars.next().ok_or_else(bad)?;
        let rest: &str = chars.as_str();
        match kind {
            'y' if rest.is_empty() => Ok(Role::Y { lag }),
            'x' | 'r' => {
                let idx: usize = rest.parse().map_err(|_| bad())?;
                if idx == 0 {
                    return Err(bad());
                }
                Ok(if kind == 'x' { Role::X { col: idx - 1, lag } } else { Role::R { col: idx - 1, lag } })
            }
            _ => Err(bad()),
        }
    }
}

impl Serialize for Role {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Role {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelSpecFile {
    p1: usize,
    p2: usize,
    se_regressors: Vec<Role>,
    rf_instruments: Vec<Role>,
}

/// Variable roles of the structural equation and the reduced form.
///
/// The structural regressors are `w_t = (x_t, z1_t)` where `x_t` are all `p1`
/// endogenous regressors and `z1_t` is `se_regressors`; the reduced form
/// regresses `x_t` on `z_t = rf_instruments`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpecFile", into = "ModelSpecFile")]
pub struct ModelSpec {
    p1: usize,
    p2: usize,
    se_regressors: Vec<Role>,
    rf_instruments: Vec<Role>,
    max_lag: usize,
    /// Position of each `z1` role inside `z`.
    z1_in_z: Vec<usize>,
}

impl TryFrom<ModelSpecFile> for ModelSpec {
    type Error = Error;
    fn try_from(f: ModelSpecFile) -> Result<Self> {
        ModelSpec::new(f.p1, f.p2, f.se_regressors, f.rf_instruments)
    }
}

impl From<ModelSpec> for ModelSpecFile {
    fn from(m: ModelSpec) -> Self {
        ModelSpecFile { p1: m.p1, p2: m.p2, se_regressors: m.se_regressors, rf_instruments: m.rf_instruments }
    }
}

impl ModelSpec {
    pub fn new(p1: usize, p2: usize, se_regressors: Vec<Role>, rf_instruments: Vec<Role>) -> Result<Self> {
        if p1 == 0 {
            return Err(Error::Config("at least one endogenous regressor is required (p1 > 0)".into()));
        }
        for (list, name) in [(&se_regressors, "se_regressors"), (&rf_instruments, "rf_instruments")] {
            for (i, role) in list.iter().enumerate() {
                match *role {
                    Role::Y { lag: 0 } => return Err(Error::Config(format!("{name}: contemporaneous y is not a regressor"))),
                    Role::X { lag: 0, .. } => return Err(Error::Config(format!("{name}: contemporaneous x enters w_t automatically and cannot be listed"))),
                    Role::X { col, .. } if col >= p1 => return Err(Error::Config(format!("{name}: {role} exceeds p1 = {p1}"))),
                    Role::R { col, .. } if col >= p2 => return Err(Error::Config(format!("{name}: {role} exceeds p2 = {p2}"))),
                    _ => {}
                }
                if list[..i].contains(role) {
                    return Err(Error::Config(format!("{name}: duplicate role {role}")));
                }
            }
        }
        let mut z1_in_z = Vec::with_capacity(se_regressors.len());
        for role in &se_regressors {
            match rf_instruments.iter().position(|r| r == role) {
                Some(p) => z1_in_z.push(p),
                None => return Err(Error::Config(format!("structural regressor {role} is not among the instruments"))),
            }
        }
        if se_regressors.len() >= rf_instruments.len() {
            return Err(Error::Config("z1 must be a strict subset of z".into()));
        }
        if rf_instruments.len() < p1 + se_regressors.len() {
            return Err(Error::Config(format!("order condition fails: q = {} < p1 + q1 = {}", rf_instruments.len(), p1 + se_regressors.len())));
        }
        let max_lag = se_regressors.iter().chain(&rf_instruments).map(Role::lag).max().unwrap_or(0);
        Ok(Self { p1, p2, se_regressors, rf_instruments, max_lag, z1_in_z })
    }

    /// The specification used by every simulation scenario: one endogenous
    /// regressor, four exogenous regressors, `z1 = (1, r1, y(-1))` and
    /// `z = (1, r1..r4, x1(-1), y(-1))`.
    pub fn simulation() -> Self {
        use Role::*;
        ModelSpec::new(
            1,
            4,
            vec![Intercept, R { col: 0, lag: 0 }, Y { lag: 1 }],
            vec![Intercept, R { col: 0, lag: 0 }, R { col: 1, lag: 0 }, R { col: 2, lag: 0 }, R { col: 3, lag: 0 }, X { col: 0, lag: 1 }, Y { lag: 1 }],
        )
        .expect("simulation spec is valid")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn p1(&self) -> usize {
        self.p1
    }
    pub fn p2(&self) -> usize {
        self.p2
    }
    pub fn se_regressors(&self) -> &[Role] {
        &self.se_regressors
    }
    pub fn rf_instruments(&self) -> &[Role] {
        &self.rf_instruments
    }
    pub fn max_lag(&self) -> usize {
        self.max_lag
    }
    /// `dim(z_t)`.
    pub fn q(&self) -> usize {
        self.rf_instruments.len()
    }
    /// `dim(z1_t)`.
    pub fn q1(&self) -> usize {
        self.se_regressors.len()
    }
    /// `dim(w_t) = p1 + q1`.
    pub fn d_beta(&self) -> usize {
        self.p1 + self.se_regressors.len()
    }
    pub fn z1_in_z(&self) -> &[usize] {
        &self.z1_in_z
    }
    /// True when no role reads a lag of `y` or `x`.
    pub fn is_static(&self) -> bool {
        self.se_regressors.iter().chain(&self.rf_instruments).all(|r| !matches!(r, Role::Y { .. } | Role::X { .. }))
    }
}

/// Observed series `y_t`, `x_t` (T x p1) and `r_t` (T x p2).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub x: RowMat,
    pub r: RowMat,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: RowMat, r: RowMat) -> Result<Self> {
        let n = y.len();
        if x.rows() != n || r.rows() != n {
            return Err(Error::Config(format!("series lengths differ: y has {n}, x has {}, r has {}", x.rows(), r.rows())));
        }
        if !y.iter().all(|v| v.is_finite()) || !x.is_finite() || !r.is_finite() {
            return Err(Error::Config("dataset contains non-finite values".into()));
        }
        Ok(Self { y, x, r })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn p1(&self) -> usize {
        self.x.cols()
    }

    pub fn p2(&self) -> usize {
        self.r.cols()
    }

    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        if self.p1() != spec.p1() || self.p2() != spec.p2() {
            return Err(Error::Config(format!("data has p1 = {}, p2 = {} but the model expects p1 = {}, p2 = {}", self.p1(), self.p2(), spec.p1(), spec.p2())));
        }
        if self.len() <= spec.max_lag() {
            return Err(Error::Config(format!("T = {} does not exceed the maximum lag {}", self.len(), spec.max_lag())));
        }
        Ok(())
    }

    /// CSV header `y,x1..xp1,r1..rp2`.
    pub fn csv_header(p1: usize, p2: usize) -> Vec<String> {
        let mut h = vec!["y".to_string()];
        h.extend((1..=p1).map(|i| format!("x{i}")));
        h.extend((1..=p2).map(|i| format!("r{i}")));
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let header = Self::csv_header(self.p1(), self.p2());
        wr.write_record(&header).map_err(csv_err)?;
        for t in 0..self.len() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(format!("{:?}", self.y[t]));
            rec.extend(self.x.row(t).iter().map(|v| format!("{v:?}")));
            rec.extend(self.r.row(t).iter().map(|v| format!("{v:?}")));
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a CSV whose header names the columns `y`, `x1..`, `r1..`.
    pub fn read_csv<R: Read>(rd: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(rd);
        let header = reader.headers().map_err(csv_err)?.clone();
        let mut y_col = None;
        let mut x_cols: Vec<(usize, usize)> = Vec::new();
        let mut r_cols: Vec<(usize, usize)> = Vec::new();
        for (pos, name) in header.iter().enumerate() {
            let bad = || Error::Parse { line: 1, msg: format!("unexpected column '{name}'") };
            if name == "y" {
                y_col = Some(pos);
            } else if let Some(idx) = name.strip_prefix('x') {
                x_cols.push((idx.parse().map_err(|_| bad())?, pos));
            } else if let Some(idx) = name.strip_prefix('r') {
                r_cols.push((idx.parse().map_err(|_| bad())?, pos));
            } else {
                return Err(bad());
            }
        }
        let y_col = y_col.ok_or(Error::Parse { line: 1, msg: "missing column 'y'".into() })?;
        x_cols.sort_unstable();
        r_cols.sort_unstable();
        for (cols, name) in [(&x_cols, 'x'), (&r_cols, 'r')] {
            for (k, (idx, _)) in cols.iter().enumerate() {
                if *idx != k + 1 {
                    return Err(Error::Parse { line: 1, msg: format!("columns {name}1..{name}n must be contiguous") });
                }
            }
        }
        let (p1, p2) = (x_cols.len(), r_cols.len());
        let mut y = Vec::new();
        let mut xs = Vec::new();
        let mut rs = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
            let field = |pos: usize| -> Result<f64> {
                let raw = rec.get(pos).ok_or(Error::Parse { line, msg: "missing field".into() })?;
                let v: f64 = raw.parse().map_err(|_| Error::Parse { line, msg: format!("not a number: '{raw}'") })?;
                if !v.is_finite() {
                    return Err(Error::Parse { line, msg: format!("non-finite value '{raw}'") });
                }
                Ok(v)
            };
            y.push(field(y_col)?);
            for &(_, pos) in &x_cols {
                xs.push(field(pos)?);
            }
            for &(_, pos) in &r_cols {
                rs.push(field(pos)?);
            }
        }
        let n = y.len();
        Dataset::new(y, RowMat::from_vec(n, p1, xs), RowMat::from_vec(n, p2, rs))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse { line, msg: e.to_string() }
}

/// Instrument rows `z_t'` and `z1_t'` over the effective sample.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentRows {
    pub z: RowMat,
    pub z1: RowMat,
    /// Row `i` of `z`/`z1` corresponds to 0-based time `i + offset`.
    pub offset: usize,
}

/// Builds `z_t` and `z1_t` for `t = max_lag..T` (0-based). Rank is not checked
/// here; singular designs are rejected by the solvers.
pub fn build_instrument_rows(spec: &ModelSpec, data: &Dataset) -> Result<InstrumentRows> {
    data.check_against(spec)?;
    let offset = spec.max_lag();
    let n = data.len() - offset;
    let mut z = RowMat::zeros(n, spec.q());
    let mut z1 = RowMat::zeros(n, spec.q1());
    for i in 0..n {
        let t = i + offset;
        for (j, role) in spec.rf_instruments().iter().enumerate() {
            z.set(i, j, role.value(t, &data.y, &data.x, &data.r));
        }
        for (j, &pos) in spec.z1_in_z().iter().enumerate() {
            z1.set(i, j, z.get(i, pos));
        }
    }
    Ok(InstrumentRows { z, z1, offset })
}

/// Minimum admissible regime length: regimes must be strictly longer than
/// `max(q - 1, ceil(trim * n_obs))`.
pub fn min_regime_len(n_obs: usize, trim: f64, q: usize) -> usize {
    let et = ceil_tol(trim * n_obs as f64);
    q.saturating_sub(1).max(et) + 1
}

/// `ceil` that ignores floating noise just above an integer (`0.15 * 20`).
pub(crate) fn ceil_tol(v: f64) -> usize {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r as usize
    } else {
        v.ceil() as usize
    }
}

/// Ordered break points over an effective sample of `n_obs` observations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    breaks: Vec<usize>,
    n_obs: usize,
}

impl Partition {
    /// Validated partition: every regime must be longer than
    /// `max(q - 1, ceil(trim * n_obs))`.
    pub fn new(breaks: Vec<usize>, n_obs: usize, trim: f64, q: usize) -> Result<Self> {
        if !(trim > 0.0 && trim < 0.5) {
            return Err(Error::Config(format!("trimming must lie in (0, 0.5), got {trim}")));
        }
        let min_len = min_regime_len(n_obs, trim, q);
        let mut prev = 0;
        for (i, &b) in breaks.iter().chain(std::iter::once(&n_obs)).enumerate() {
            if b <= prev || b - prev < min_len {
                return Err(Error::Config(format!(
                    "partition {breaks:?} of {n_obs} observations: regime {} has length {} (minimum {min_len})",
                    i + 1,
                    b.saturating_sub(prev)
                )));
            }
            prev = b;
        }
        Ok(Self { breaks, n_obs })
    }

    /// The no-break partition.
    pub fn none(n_obs: usize) -> Self {
        Self { breaks: Vec::new(), n_obs }
    }

    /// Partition without trimming checks, for internal sub-sample bookkeeping
    /// and oracles. Still requires strictly increasing interior breaks.
    pub fn unchecked(breaks: Vec<usize>, n_obs: usize) -> Self {
        debug_assert!(breaks.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(breaks.iter().all(|&b| b > 0 && b < n_obs));
        Self { breaks, n_obs }
    }

    pub fn breaks(&self) -> &[usize] {
        &self.breaks
    }

    pub fn n_breaks(&self) -> usize {
        self.breaks.len()
    }

    pub fn n_regimes(&self) -> usize {
        self.breaks.len() + 1
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Break fractions `T_i / T`.
    pub fn fractions(&self) -> Vec<f64> {
        self.breaks.iter().map(|&b| b as f64 / self.n_obs as f64).collect()
    }

    /// Regimes as 1-based inclusive `(first, last)` pairs.
    pub fn regimes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_regimes());
        let mut start = 1;
        for &b in &self.breaks {
            out.push((start, b));
            start = b + 1;
        }
        out.push((start, self.n_obs));
        out
    }

    /// Regime label (0-based) for every effective observation.
    pub fn labels(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_obs);
        for (i, (a, b)) in self.regimes().into_iter().enumerate() {
            out.extend(std::iter::repeat_n(i, b + 1 - a));
        }
        out
    }
}

/// 1-based regime index `i` with `T_{i-1} < t <= T_i`.
pub fn regime_of(t: usize, p: &Partition) -> usize {
    p.breaks.iter().take_while(|&&b| b < t).count() + 1
}

/// Estimates of the reduced form and structural equation for one pair of
/// (reduced-form, structural) partitions.
#[derive(Debug, Clone)]
pub struct RegimeEstimates {
    pub rf_breaks: Partition,
    /// One `q x p1` coefficient matrix per reduced-form regime.
    pub delta: Vec<RowMat>,
    pub se_breaks: Partition,
    /// One `d_beta` vector per structural regime, ordered as `w_t = (x_t, z1_t)`.
    pub beta: Vec<Vec<f64>>,
    /// Structural residuals `y_t - w_t' beta_t` with the observed `x_t`.
    pub u_hat: Vec<f64>,
    /// Reduced-form residuals `x_t - x_hat_t` (T_eff x p1).
    pub v_hat: RowMat,
    /// First-stage fitted values (T_eff x p1).
    pub x_hat: RowMat,
}
