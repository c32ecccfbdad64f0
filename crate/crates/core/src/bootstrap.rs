//! Wild recursive (WR) and wild fixed (WF) bootstrap.
//!
//! Both schemes rebuild `(y, x)` from the null fit with residuals multiplied
//! by one Rademacher draw per observation, the same draw for `u_hat_t` and
//! `v_hat_t`. WR regenerates the lagged `y` and `x` inside the instruments
//! from the bootstrap series; WF keeps every instrument at its sample value.
//! The first `max_lag` observations are start-up values copied from the
//! sample. Reduced-form break dates stay at their sample estimates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{first_stage, Design};
use crate::model::{Dataset, ModelSpec, Partition, RegimeEstimates};
use crate::par;
use crate::partition_search::{ScoreBasis, SegmentMoments};
use crate::rng::{self, Rademacher};
use crate::stats::{sample_test, LevelDecision, Statistic, TestOutcome, TestSpec};

/// Largest tolerated share of failed bootstrap replications.
pub const FAILURE_CAP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Wild recursive.
    #[default]
    Wr,
    /// Wild fixed.
    Wf,
}

impl Scheme {
    pub fn is_recursive(&self) -> bool {
        matches!(self, Scheme::Wr)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Wr => "wr",
            Scheme::Wf => "wf",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wr" => Ok(Scheme::Wr),
            "wf" => Ok(Scheme::Wf),
            other => Err(Error::Config(format!("unknown scheme '{other}' (expected wr or wf)"))),
        }
    }
}

/// Replication count and the stream coordinates of the multipliers: draw `b`
/// (1-based) uses stream `(seed, replication, b, tag)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapConfig {
    pub scheme: Scheme,
    pub reps: usize,
    pub seed: u64,
    pub replication: u64,
    pub tag: u64,
}

impl BootstrapConfig {
    pub fn new(scheme: Scheme, reps: usize, seed: u64) -> Self {
        Self { scheme, reps, seed, replication: 0, tag: rng::tag::BOOT_MAIN }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("at least one bootstrap replication is required".into()));
        }
        Ok(())
    }

    /// Multipliers of draw `b` for `n` observations.
    pub fn multipliers(&self, n: usize, b: u64) -> Vec<f64> {
        rng::multipliers(&Rademacher, n, self.seed, self.replication, b, self.tag)
    }
}

/// Bootstrap series `(y_b, x_b)` over the whole sample. `nu` has one entry
/// per effective observation; `null` must be fitted on `design`.
pub fn generate(spec: &ModelSpec, data: &Dataset, design: &Design, null: &RegimeEstimates, nu: &[f64], recursive: bool) -> Result<Dataset> {
    let (n, off, p1, q) = (design.n_obs(), design.offset, design.p1(), design.z.cols());
    if nu.len() != n || null.u_hat.len() != n || null.v_hat.rows() != n {
        return Err(Error::Config("multipliers or residuals do not match the effective sample".into()));
    }
    let rf = null.rf_breaks.labels();
    let se = null.se_breaks.labels();
    let z1_pos = spec.z1_in_z();
    let mut y = data.y.clone();
    let mut x = data.x.clone();
    let mut z = vec![0.0; q];
    for i in 0..n {
        let t = i + off;
        if recursive {
            for (j, role) in spec.rf_instruments().iter().enumerate() {
                z[j] = role.value(t, &y, &x, &data.r);
            }
        } else {
            z.copy_from_slice(design.z.row(i));
        }
        let delta = &null.delta[rf[i]];
        let beta = &null.beta[se[i]];
        let mut yt = null.u_hat[i] * nu[i];
        for c in 0..p1 {
            let mut xt = null.v_hat.get(i, c) * nu[i];
            for (j, zj) in z.iter().enumerate() {
                xt += zj * delta.get(j, c);
            }
            x.set(t, c, xt);
            yt += xt * beta[c];
        }
        for (j, &pos) in z1_pos.iter().enumerate() {
            yt += z[pos] * beta[p1 + j];
        }
        y[t] = yt;
    }
    if !y.iter().all(|v| v.is_finite()) || !x.is_finite() {
        return Err(Error::Degenerate("bootstrap path diverged".into()));
    }
    Ok(Dataset { y, x, r: data.r.clone() })
}

/// WR bootstrap series: lagged `y` and `x` in the instruments are bootstrap values.
pub fn wr_generate(spec: &ModelSpec, data: &Dataset, design: &Design, null: &RegimeEstimates, nu: &[f64]) -> Result<Dataset> {
    generate(spec, data, design, null, nu, true)
}

/// WF bootstrap series: instruments stay at their sample values.
pub fn wf_generate(spec: &ModelSpec, data: &Dataset, design: &Design, null: &RegimeEstimates, nu: &[f64]) -> Result<Dataset> {
    generate(spec, data, design, null, nu, false)
}

/// Design on which bootstrap statistics are computed: WR rebuilds the
/// instruments from the bootstrap series, WF keeps the sample instruments.
pub fn bootstrap_design(spec: &ModelSpec, scheme: Scheme, design: &Design, boot: &Dataset) -> Result<Design> {
    match scheme {
        Scheme::Wr => Design::new(spec, boot),
        Scheme::Wf => {
            let (n, off) = (design.n_obs(), design.offset);
            Ok(Design { z: design.z.clone(), z1: design.z1.clone(), x: boot.x.slice_rows(off, off + n), y: boot.y[off..].to_vec(), offset: off })
        }
    }
}

/// One bootstrap statistic for multipliers `nu`. The reduced form is
/// re-estimated on the fixed sample break dates, then the test statistic is
/// recomputed exactly as on the sample, with scores from the bootstrap
/// residuals; the sequential test keeps the null regimes at their sample
/// estimates.
pub fn bootstrap_statistic(
    spec: &ModelSpec,
    data: &Dataset,
    design: &Design,
    null: &RegimeEstimates,
    test: &TestSpec,
    scheme: Scheme,
    nu: &[f64],
) -> Result<f64> {
    let boot = generate(spec, data, design, null, nu, scheme.is_recursive())?;
    let bd = bootstrap_design(spec, scheme, design, &boot)?;
    let fs = first_stage(&bd, &null.rf_breaks)?;
    let basis = match test.statistic {
        Statistic::SupWald => ScoreBasis::Residual,
        Statistic::SupF => ScoreBasis::None,
    };
    let engine = SegmentMoments::new(&bd.stack_w(&fs.x_hat), &bd.y, basis)?;
    Ok(test.scan(std::slice::from_ref(&engine), null.se_breaks.breaks(), bd.z.cols())?.statistic)
}

/// Bootstrap draws in replication order, with failed replications dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub draws: Vec<f64>,
    pub failures: usize,
}

/// Evaluates `stat(b)` for `b = 1..=reps` (in parallel when enabled) and
/// keeps the successful draws in order. Numerical failures and non-finite
/// values are counted; more than [`FAILURE_CAP`] of them is an error.
pub fn collect_draws<F>(reps: usize, stat: F) -> Result<Draws>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    let results = par::map_indexed(reps, |i| stat(i as u64 + 1));
    let mut draws = Vec::with_capacity(reps);
    let mut failures = 0;
    for r in results {
        match r {
            Ok(v) if v.is_finite() => draws.push(v),
            Ok(_) => failures += 1,
            Err(e) if e.is_numerical() => {
                log::debug!("bootstrap replication failed: {e}");
                failures += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if failures as f64 > FAILURE_CAP * reps as f64 {
        return Err(Error::FailureCap { failed: failures, total: reps });
    }
    Ok(Draws { draws, failures })
}

/// Bootstrap distribution of `test` under its null fit.
pub fn run_bootstrap(spec: &ModelSpec, data: &Dataset, design: &Design, null: &RegimeEstimates, test: &TestSpec, cfg: &BootstrapConfig) -> Result<Draws> {
    cfg.validate()?;
    let n = design.n_obs();
    collect_draws(cfg.reps, |b| {
        let nu = cfg.multipliers(n, b);
        bootstrap_statistic(spec, data, design, null, test, cfg.scheme, &nu)
    })
}

/// Bootstrap p-value `#{draws >= stat} / B` and, per level, the critical
/// value at order statistic `(1 - alpha)(B + 1)` (rounded up when not an
/// integer, flagged by `exact = false`). Rejection means `stat >= critical`.
pub fn pvalue_and_quantile(stat: f64, draws: &[f64], alphas: &[f64]) -> Result<(f64, Vec<LevelDecision>)> {
    if draws.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let b = draws.len();
    let p = draws.iter().filter(|&&d| d >= stat).count() as f64 / b as f64;
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let levels = alphas
        .iter()
        .map(|&alpha| {
            let pos = (1.0 - alpha) * (b + 1) as f64;
            let rounded = pos.round();
            let exact = (pos - rounded).abs() < 1e-9;
            let idx = if exact { rounded as usize } else { pos.ceil() as usize }.clamp(1, b);
            let critical_value = sorted[idx - 1];
            LevelDecision { alpha, critical_value, order_index: idx, exact, reject: stat >= critical_value }
        })
        .collect();
    Ok((p, levels))
}

/// Sample statistic, bootstrap distribution and decisions for one test.
pub fn bootstrap_test(spec: &ModelSpec, data: &Dataset, rf: &Partition, test: &TestSpec, cfg: &BootstrapConfig, alphas: &[f64]) -> Result<TestOutcome> {
    let design = Design::new(spec, data)?;
    let sample = sample_test(&design, rf, test)?;
    let draws = run_bootstrap(spec, data, &design, &sample.null, test, cfg)?;
    let mut out = sample.outcome;
    let (p, levels) = pvalue_and_quantile(out.statistic, &draws.draws, alphas)?;
    out.boot_draws = draws.draws;
    out.boot_failures = draws.failures;
    out.p_value = Some(p);
    out.levels = levels;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate as simulate, ErrorCase, Scenario, ScenarioConfig};
    use crate::estimation::BetaSource;
    use crate::linalg::RowMat;
    use crate::model::Role;
    use proptest::prelude::*;

    struct Fixture {
        spec: ModelSpec,
        data: Dataset,
        design: Design,
        null: RegimeEstimates,
    }

    fn fixture(spec: ModelSpec, scenario: Scenario, n_obs: usize, test: &TestSpec, seed: u64) -> Fixture {
        let (data, _) = simulate(&ScenarioConfig::new(scenario, ErrorCase::B, n_obs, 0.0, seed)).unwrap();
        let design = Design::new(&spec, &data).unwrap();
        let rf = Partition::none(design.n_obs());
        let null = sample_test(&design, &rf, test).unwrap().null;
        Fixture { spec, data, design, null }
    }

    fn static_spec() -> ModelSpec {
        use Role::*;
        let r = |col| R { col, lag: 0 };
        ModelSpec::new(1, 4, vec![Intercept, r(0)], vec![Intercept, r(0), r(1), r(2), r(3)]).unwrap()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn unit_multipliers_reproduce_the_sample() {
        for test in [TestSpec::default(), TestSpec::sequential(Statistic::SupWald, 1)] {
            let f = fixture(ModelSpec::simulation(), Scenario::H0M1, 120, &test, 3);
            let ones = vec![1.0; f.design.n_obs()];
            for recursive in [true, false] {
                let b = generate(&f.spec, &f.data, &f.design, &f.null, &ones, recursive).unwrap();
                let scale = f.data.y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                assert!(max_abs_diff(&b.y, &f.data.y) <= 1e-12 * scale);
                assert!(max_abs_diff(b.x.as_slice(), f.data.x.as_slice()) <= 1e-12 * scale);
                assert_eq!(b.r, f.data.r);
            }
        }
    }

    #[test]
    fn negative_multipliers_by_hand() {
        // T = 5, one lag: z = (1, r1, x(-1), y(-1)), z1 = (1, y(-1))
        use Role::*;
        let spec = ModelSpec::new(1, 1, vec![Intercept, Y { lag: 1 }], vec![Intercept, R { col: 0, lag: 0 }, X { col: 0, lag: 1 }, Y { lag: 1 }]).unwrap();
        let y = vec![1.0, 2.0, 0.5, -1.0, 3.0];
        let x = RowMat::column(&[0.5, 1.5, -0.5, 2.0, 1.0]);
        let r = RowMat::column(&[0.1, 0.2, 0.3, 0.4, 0.5]);
        let data = Dataset::new(y, x, r).unwrap();
        let design = Design::new(&spec, &data).unwrap();
        let delta = RowMat::column(&[0.2, 1.0, 0.5, 0.1]);
        let beta = vec![2.0, 1.0, 0.5];
        let null = RegimeEstimates {
            rf_breaks: Partition::none(4),
            delta: vec![delta],
            se_breaks: Partition::none(4),
            beta: vec![beta],
            u_hat: vec![0.3, -0.2, 0.1, 0.4],
            v_hat: RowMat::column(&[0.1, 0.2, -0.3, 0.05]),
            x_hat: RowMat::zeros(4, 1),
        };
        let b = wr_generate(&spec, &data, &design, &null, &[-1.0; 4]).unwrap();
        assert_eq!((b.y[0], b.x.get(0, 0)), (1.0, 0.5));
        // t = 2: z = (1, 0.2, x1 = 0.5, y1 = 1.0)
        let x2 = 0.2 + 0.2 + 0.25 + 0.1 - 0.1;
        let y2 = 2.0 * x2 + 1.0 + 0.5 * 1.0 - 0.3;
        assert!((b.x.get(1, 0) - x2).abs() < 1e-15 && (b.y[1] - y2).abs() < 1e-15);
        // t = 3 reads the bootstrap values at t = 2
        let x3 = 0.2 + 0.3 + 0.5 * x2 + 0.1 * y2 - 0.2;
        let y3 = 2.0 * x3 + 1.0 + 0.5 * y2 + 0.2;
        assert!((b.x.get(2, 0) - x3).abs() < 1e-14 && (b.y[2] - y3).abs() < 1e-14);
        // WF keeps sample lags: t = 3 uses x2 = 1.5, y2 = 2.0
        let f = wf_generate(&spec, &data, &design, &null, &[-1.0; 4]).unwrap();
        let x3f = 0.2 + 0.3 + 0.75 + 0.2 - 0.2;
        assert!((f.x.get(2, 0) - x3f).abs() < 1e-14);
        assert!((f.y[2] - (2.0 * x3f + 1.0 + 1.0 + 0.2)).abs() < 1e-14);
    }

    #[test]
    fn wr_equals_wf_without_lags() {
        let test = TestSpec::default();
        let f = fixture(static_spec(), Scenario::H0M0, 100, &test, 11);
        let cfg = BootstrapConfig::new(Scheme::Wr, 1, 5);
        for b in 1..=5 {
            let nu = cfg.multipliers(f.design.n_obs(), b);
            let wr = wr_generate(&f.spec, &f.data, &f.design, &f.null, &nu).unwrap();
            let wf = wf_generate(&f.spec, &f.data, &f.design, &f.null, &nu).unwrap();
            assert_eq!(wr, wf);
            for stat in [Statistic::SupWald, Statistic::SupF] {
                let t = TestSpec { statistic: stat, ..test };
                let a = bootstrap_statistic(&f.spec, &f.data, &f.design, &f.null, &t, Scheme::Wr, &nu).unwrap();
                let c = bootstrap_statistic(&f.spec, &f.data, &f.design, &f.null, &t, Scheme::Wf, &nu).unwrap();
                assert_eq!(a.to_bits(), c.to_bits());
            }
        }
    }

    #[test]
    fn wf_two_point_average_is_the_fitted_chain() {
        let f = fixture(ModelSpec::simulation(), Scenario::H0M0, 80, &TestSpec::default(), 4);
        let n = f.design.n_obs();
        let plus = wf_generate(&f.spec, &f.data, &f.design, &f.null, &vec![1.0; n]).unwrap();
        let minus = wf_generate(&f.spec, &f.data, &f.design, &f.null, &vec![-1.0; n]).unwrap();
        let bd = bootstrap_design(&f.spec, Scheme::Wf, &f.design, &plus).unwrap();
        for i in 0..n {
            let t = i + f.design.offset;
            let z = f.design.z.row(i);
            let xbar: f64 = z.iter().enumerate().map(|(j, v)| v * f.null.delta[0].get(j, 0)).sum();
            let beta = &f.null.beta[0];
            let ybar = xbar * beta[0] + f.design.z1.row(i).iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
            assert!((0.5 * (plus.x.get(t, 0) + minus.x.get(t, 0)) - xbar).abs() < 1e-10);
            assert!((0.5 * (plus.y[t] + minus.y[t]) - ybar).abs() < 1e-10);
            assert_eq!(bd.z.row(i), z);
        }
    }

    #[test]
    fn multipliers_preserve_error_cross_signs() {
        let f = fixture(ModelSpec::simulation(), Scenario::H0M0, 60, &TestSpec::default(), 6);
        let n = f.design.n_obs();
        let nu = BootstrapConfig::new(Scheme::Wr, 1, 9).multipliers(n, 1);
        let boot = wf_generate(&f.spec, &f.data, &f.design, &f.null, &nu).unwrap();
        let beta = &f.null.beta[0];
        for i in 0..n {
            let t = i + f.design.offset;
            let xbar: f64 = f.design.z.row(i).iter().enumerate().map(|(j, v)| v * f.null.delta[0].get(j, 0)).sum();
            let vb = boot.x.get(t, 0) - xbar;
            let ub = boot.y[t] - boot.x.get(t, 0) * beta[0] - f.design.z1.row(i).iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
            let (u, v) = (f.null.u_hat[i], f.null.v_hat.get(i, 0));
            assert!((ub - u * nu[i]).abs() < 1e-10 && (vb - v * nu[i]).abs() < 1e-10);
            assert_eq!((ub * vb).signum(), (u * v).signum());
        }
    }

    #[test]
    fn identity_multipliers_reproduce_the_sample_statistic() {
        let f = fixture(ModelSpec::simulation(), Scenario::H0M0, 60, &TestSpec::default(), 21);
        let n = f.design.n_obs();
        let ones = vec![1.0; n];
        for statistic in [Statistic::SupWald, Statistic::SupF] {
            for source in [BetaSource::Alt, BetaSource::Null] {
                let test = TestSpec { statistic, beta_source: source, ..TestSpec::default() };
                let sample = sample_test(&f.design, &Partition::none(n), &test).unwrap().outcome.statistic;
                for scheme in [Scheme::Wr, Scheme::Wf] {
                    let boot = bootstrap_statistic(&f.spec, &f.data, &f.design, &f.null, &test, scheme, &ones).unwrap();
                    assert!((boot - sample).abs() <= 1e-9 * sample, "{statistic} {scheme}: {boot} vs {sample}");
                }
            }
        }
    }

    #[test]
    fn draws_are_deterministic_and_nonnegative() {
        for test in [TestSpec::default(), TestSpec::sequential(Statistic::SupF, 1)] {
            let f = fixture(ModelSpec::simulation(), Scenario::H0M1, 120, &test, 8);
            let cfg = BootstrapConfig { replication: 3, ..BootstrapConfig::new(Scheme::Wr, 19, 77) };
            let a = run_bootstrap(&f.spec, &f.data, &f.design, &f.null, &test, &cfg).unwrap();
            let serial = par::with_threads(1, || run_bootstrap(&f.spec, &f.data, &f.design, &f.null, &test, &cfg)).unwrap().unwrap();
            assert_eq!(a, serial);
            assert_eq!(a.draws.len() + a.failures, 19);
            assert!(a.draws.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn failure_cap() {
        let fail_every = |k: u64| move |b: u64| if b.is_multiple_of(k) { Err(Error::SingularMiddle) } else { Ok(b as f64) };
        let ok = collect_draws(100, fail_every(25)).unwrap();
        assert_eq!((ok.draws.len(), ok.failures), (96, 4));
        assert_eq!(ok.draws[..3], [1.0, 2.0, 3.0]);
        assert!(matches!(collect_draws(100, fail_every(10)), Err(Error::FailureCap { failed: 10, total: 100 })));
        assert!(matches!(collect_draws(3, |_| Err(Error::Config("bad".into()))), Err(Error::Config(_))));
    }

    #[test]
    fn pvalue_and_quantile_by_hand() {
        let (p, _) = pvalue_and_quantile(2.5, &[1.0, 2.0, 3.0, 4.0], &[0.05]).unwrap();
        assert_eq!(p, 0.5);
        let (p, lv) = pvalue_and_quantile(9.0, &[4.0, 1.0, 3.0, 2.0], &[0.10, 0.05, 0.01]).unwrap();
        assert_eq!(p, 0.0);
        assert!(lv.iter().all(|l| l.reject && !l.exact && l.order_index == 4));
        let draws19: Vec<f64> = (1..=19).map(f64::from).collect();
        let (_, lv) = pvalue_and_quantile(18.5, &draws19, &[0.10, 0.05]).unwrap();
        assert_eq!((lv[0].order_index, lv[0].exact, lv[0].critical_value, lv[0].reject), (18, true, 18.0, true));
        assert_eq!((lv[1].order_index, lv[1].exact, lv[1].critical_value, lv[1].reject), (19, true, 19.0, false));
        let draws399: Vec<f64> = (1..=399).map(f64::from).collect();
        let (p, lv) = pvalue_and_quantile(380.0, &draws399, &[0.10, 0.05, 0.01]).unwrap();
        assert_eq!(p, 20.0 / 399.0);
        assert_eq!(lv.iter().map(|l| l.order_index).collect::<Vec<_>>(), vec![360, 380, 396]);
        assert!(lv.iter().all(|l| l.exact));
        assert!(matches!(pvalue_and_quantile(1.0, &[], &[0.05]), Err(Error::EmptyDraws)));
    }

    proptest! {
        #[test]
        fn pvalue_and_order_rules_agree(draws in prop::collection::vec(0.0f64..10.0, 399), stat in 0.0f64..12.0) {
            prop_assume!(!draws.contains(&stat));
            let (p, lv) = pvalue_and_quantile(stat, &draws, &[0.10, 0.05, 0.01]).unwrap();
            for l in lv {
                prop_assert!(l.exact);
                prop_assert_eq!(l.reject, p <= l.alpha);
            }
        }
    }
}
