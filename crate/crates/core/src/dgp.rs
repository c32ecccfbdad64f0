//! Synthetic data for the four break scenarios and four error designs.
//!
//! Every scenario shares one endogenous regressor `x_t` and four exogenous
//! regressors `r_t`:
//!
//! ```text
//! x_t = a_x + r_t' d_r + d_x1 x_{t-1} + d_y1 y_{t-1} + v_t
//! y_t = a_y + b_x x_t + b_r1 r_{1,t} + b_y1 y_{t-1} + u_t
//! ```
//!
//! with reduced-form parameters switching at `[T/4]` when `h = 1` and
//! structural parameters switching at `[3T/4]` when `m = 1`. A non-zero `g`
//! adds `g` to every structural coefficient on `[T/2]+1 ..= T_tilde`
//! (`T_tilde = T` for `m = 0`, `[3T/4]` for `m = 1`).
//!
//! Innovations are drawn before any coefficient is applied, so two configs
//! that differ only in `g` share the same `(u, v, r)` paths.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::RowMat;
use crate::model::Dataset;
use crate::rng::{self, StreamRng};

const GARCH_GAMMA0: f64 = 0.1;
const GARCH_GAMMA1: f64 = 0.4;
const GARCH_GAMMA2: f64 = 0.4;
const ERROR_COV: f64 = 0.5;

/// `(h, m)`: true number of reduced-form and structural breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Scenario {
    #[serde(rename = "h0m0")]
    H0M0,
    #[serde(rename = "h1m0")]
    H1M0,
    #[serde(rename = "h0m1")]
    H0M1,
    #[serde(rename = "h1m1")]
    H1M1,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::H0M0, Scenario::H1M0, Scenario::H0M1, Scenario::H1M1];

    pub fn rf_breaks(self) -> usize {
        matches!(self, Scenario::H1M0 | Scenario::H1M1) as usize
    }

    pub fn se_breaks(self) -> usize {
        matches!(self, Scenario::H0M1 | Scenario::H1M1) as usize
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}m{}", self.rf_breaks(), self.se_breaks())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown scenario '{s}' (expected h0m0, h1m0, h0m1 or h1m1)")))
    }
}

/// Distribution of `(u_t, v_t)` and `r_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ErrorCase {
    /// i.i.d. normal errors, unit variances, covariance 0.5; `r_t ~ N(0, I)`.
    A,
    /// Standardised GARCH(1,1) errors with correlated innovations.
    B,
    /// Error variances jump from 1 to 2 after `[T/3]`.
    C,
    /// As C, and `Var(r_t)` jumps from `I` to `1.5 I` after `[3T/5]`.
    D,
}

impl fmt::Display for ErrorCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            ErrorCase::A => "A",
            ErrorCase::B => "B",
            ErrorCase::C => "C",
            ErrorCase::D => "D",
        };
        f.write_str(c)
    }
}

impl FromStr for ErrorCase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(ErrorCase::A),
            "B" | "b" => Ok(ErrorCase::B),
            "C" | "c" => Ok(ErrorCase::C),
            "D" | "d" => Ok(ErrorCase::D),
            _ => Err(Error::Config(format!("unknown error case '{s}' (expected A, B, C or D)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub error_case: ErrorCase,
    /// Retained sample length `T`.
    pub n_obs: usize,
    /// Coefficient shift of the alternative.
    pub g: f64,
    pub burn_in: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, error_case: ErrorCase, n_obs: usize, g: f64, seed: u64) -> Self {
        Self { scenario, error_case, n_obs, g, burn_in: 200, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_obs < 40 {
            return Err(Error::Config(format!("T = {} is below the minimum of 40", self.n_obs)));
        }
        if !self.g.is_finite() {
            return Err(Error::Config("g must be finite".into()));
        }
        Ok(())
    }
}

/// Structural-equation coefficients `(a_y, b_x, b_r1, b_y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeParams {
    pub alpha_y: f64,
    pub beta_x: f64,
    pub beta_r1: f64,
    pub beta_y1: f64,
}

impl SeParams {
    fn shifted(self, g: f64) -> Self {
        SeParams { alpha_y: self.alpha_y + g, beta_x: self.beta_x + g, beta_r1: self.beta_r1 + g, beta_y1: self.beta_y1 + g }
    }

    /// Coefficients ordered as `w_t = (x_t, 1, r_{1,t}, y_{t-1})`.
    pub fn as_w_order(&self) -> [f64; 4] {
        [self.beta_x, self.alpha_y, self.beta_r1, self.beta_y1]
    }
}

/// Reduced-form coefficients `(a_x, d_r, d_x1, d_y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfParams {
    pub alpha_x: f64,
    pub delta_r: [f64; 4],
    pub delta_x1: f64,
    pub delta_y1: f64,
}

impl RfParams {
    /// Coefficients ordered as `z_t = (1, r_t', x_{t-1}, y_{t-1})`.
    pub fn as_z_order(&self) -> [f64; 7] {
        let d = self.delta_r;
        [self.alpha_x, d[0], d[1], d[2], d[3], self.delta_x1, self.delta_y1]
    }
}

const SE_STABLE: SeParams = SeParams { alpha_y: 0.5, beta_x: 0.5, beta_r1: 0.5, beta_y1: 0.8 };
const SE_SECOND: SeParams = SeParams { alpha_y: -0.5, beta_x: -0.5, beta_r1: -0.5, beta_y1: 0.1 };
const RF_STABLE: RfParams = RfParams { alpha_x: 0.5, delta_r: [1.5; 4], delta_x1: 0.5, delta_y1: 0.2 };
const RF_FIRST: RfParams = RfParams { alpha_x: 0.1, delta_r: [0.1; 4], delta_x1: 0.1, delta_y1: 0.1 };

/// Parameters and realised innovations behind one generated sample.
/// Break points are 1-based positions in the retained sample `1..=T`.
#[derive(Debug, Clone)]
pub struct ScenarioTruth {
    /// Structural regimes before the `g` shift.
    pub se: Vec<SeParams>,
    pub se_break: Option<usize>,
    pub rf: Vec<RfParams>,
    pub rf_break: Option<usize>,
    /// Inclusive `(first, last)` window receiving the `g` shift.
    pub shift_window: (usize, usize),
    pub g: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl ScenarioTruth {
    /// Structural coefficients in force at 1-based time `t`, shift included.
    pub fn se_at(&self, t: usize) -> SeParams {
        let regime = match self.se_break {
            Some(b) if t > b => 1,
            _ => 0,
        };
        let base = self.se[regime];
        if t >= self.shift_window.0 && t <= self.shift_window.1 {
            base.shifted(self.g)
        } else {
            base
        }
    }

    pub fn rf_at(&self, t: usize) -> RfParams {
        match self.rf_break {
            Some(b) if t > b => self.rf[1],
            _ => self.rf[0],
        }
    }
}

/// Innovations over `burn_in + T` periods.
#[derive(Debug, Clone)]
pub struct Innovations {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// `(burn_in + T) x 4`.
    pub r: RowMat,
}

/// Lower-triangular factor of `[[s, c], [c, s]]`.
fn bivariate_factor(var: f64, cov: f64) -> (f64, f64, f64) {
    let l11 = var.sqrt();
    let l21 = cov / l11;
    let l22 = (var - l21 * l21).sqrt();
    (l11, l21, l22)
}

/// Draws `(u, v, r)` for `burn_in + n_obs` periods. Variance shifts are placed
/// relative to the retained sample. Per period the stream is consumed in a
/// fixed order: two normals for the errors, then four for `r_t`.
pub fn draw_errors(case: ErrorCase, n_obs: usize, burn_in: usize, rng: &mut StreamRng) -> Innovations {
    let total = burn_in + n_obs;
    let error_shift = burn_in + n_obs / 3;
    let r_shift = burn_in + 3 * n_obs / 5;
    let base = bivariate_factor(1.0, ERROR_COV);
    let high = bivariate_factor(2.0, ERROR_COV);
    let garch_var = GARCH_GAMMA0 / (1.0 - GARCH_GAMMA1 - GARCH_GAMMA2);
    let garch_scale = garch_var.sqrt();
    let (mut su, mut sv) = (garch_var, garch_var);
    let (mut prev_u, mut prev_v) = (garch_var.sqrt(), garch_var.sqrt());

    let mut u = Vec::with_capacity(total);
    let mut v = Vec::with_capacity(total);
    let mut r = RowMat::zeros(total, 4);
    for s in 0..total {
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        let (ut, vt) = match case {
            ErrorCase::A => (base.0 * e1, base.1 * e1 + base.2 * e2),
            ErrorCase::B => {
                if s > 0 {
                    su = GARCH_GAMMA0 + GARCH_GAMMA1 * prev_u * prev_u + GARCH_GAMMA2 * su;
                    sv = GARCH_GAMMA0 + GARCH_GAMMA1 * prev_v * prev_v + GARCH_GAMMA2 * sv;
                }
                let tu = su.sqrt() * (base.0 * e1);
                let tv = sv.sqrt() * (base.1 * e1 + base.2 * e2);
                prev_u = tu;
                prev_v = tv;
                (tu / garch_scale, tv / garch_scale)
            }
            ErrorCase::C | ErrorCase::D => {
                let f = if s >= error_shift { high } else { base };
                (f.0 * e1, f.1 * e1 + f.2 * e2)
            }
        };
        u.push(ut);
        v.push(vt);
        let r_sd = if case == ErrorCase::D && s >= r_shift { 1.5f64.sqrt() } else { 1.0 };
        for c in 0..4 {
            let e: f64 = rng.sample(StandardNormal);
            r.set(s, c, r_sd * e);
        }
    }
    Innovations { u, v, r }
}

/// Parameters of a scenario without generating data.
pub fn scenario_truth(cfg: &ScenarioConfig) -> ScenarioTruth {
    let t = cfg.n_obs;
    let (rf, rf_break) = match cfg.scenario.rf_breaks() {
        0 => (vec![RF_STABLE], None),
        _ => (vec![RF_FIRST, RF_STABLE], Some(t / 4)),
    };
    let (se, se_break) = match cfg.scenario.se_breaks() {
        0 => (vec![SE_STABLE], None),
        _ => (vec![SE_STABLE, SE_SECOND], Some(3 * t / 4)),
    };
    let shift_end = se_break.unwrap_or(t);
    ScenarioTruth { se, se_break, rf, rf_break, shift_window: (t / 2 + 1, shift_end), g: cfg.g, u: Vec::new(), v: Vec::new() }
}

/// Generates one sample of length `T` after discarding `burn_in` periods that
/// start from `y_0 = x_0 = 0` under the first-regime parameters.
pub fn generate(cfg: &ScenarioConfig) -> Result<(Dataset, ScenarioTruth)> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, 0, 0, rng::tag::DGP_ERRORS);
    let inn = draw_errors(cfg.error_case, cfg.n_obs, cfg.burn_in, &mut rng);
    let mut truth = scenario_truth(cfg);

    let total = cfg.burn_in + cfg.n_obs;
    let mut y = Vec::with_capacity(cfg.n_obs);
    let mut x = Vec::with_capacity(cfg.n_obs);
    let (mut y_prev, mut x_prev) = (0.0, 0.0);
    for s in 0..total {
        // 1-based time in the retained sample; burn-in periods map to t <= 0.
        let t = s as i64 - cfg.burn_in as i64 + 1;
        let (rf, se) = if t >= 1 { (truth.rf_at(t as usize), truth.se_at(t as usize)) } else { (truth.rf[0], truth.se[0]) };
        let rt = inn.r.row(s);
        let xt = rf.alpha_x + rt.iter().zip(&rf.delta_r).map(|(a, b)| a * b).sum::<f64>() + rf.delta_x1 * x_prev + rf.delta_y1 * y_prev + inn.v[s];
        let yt = se.alpha_y + se.beta_x * xt + se.beta_r1 * rt[0] + se.beta_y1 * y_prev + inn.u[s];
        if t >= 1 {
            y.push(yt);
            x.push(xt);
        }
        y_prev = yt;
        x_prev = xt;
    }
    truth.u = inn.u[cfg.burn_in..].to_vec();
    truth.v = inn.v[cfg.burn_in..].to_vec();
    let r = inn.r.slice_rows(cfg.burn_in, total);
    let data = Dataset::new(y, RowMat::column(&x), r)?;
    Ok((data, truth))
}
