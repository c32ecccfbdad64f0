//! Browser demo: simulate a break scenario, trace the one-break Wald profile
//! and run a wild bootstrap test. Every call returns JSON for the page.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use breakboot::bootstrap::{bootstrap_test, BootstrapConfig, Scheme};
use breakboot::dgp::{self, ErrorCase, Scenario, ScenarioConfig, ScenarioTruth};
use breakboot::estimation::{first_stage, BetaSource, Design};
use breakboot::partition_search::{enumerate_partitions, ScoreBasis, SegmentMoments};
use breakboot::stats::{statistic_at, Statistic, TestSpec};
use breakboot::{Dataset, ModelSpec, Partition};

const LEVELS: [f64; 3] = [0.10, 0.05, 0.01];

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(js_err)
}

#[derive(Serialize)]
struct Series {
    y: Vec<f64>,
    x: Vec<f64>,
    /// True break dates of the structural equation and the reduced form.
    se_break: Option<usize>,
    rf_break: Option<usize>,
    /// Inclusive rows that receive the `g` shift.
    shift_window: (usize, usize),
}

#[derive(Serialize)]
struct Profile {
    /// Break date as a row of the dataset, and the Wald statistic there.
    dates: Vec<usize>,
    wald: Vec<f64>,
    sup: f64,
    argmax: usize,
}

#[derive(Serialize)]
struct Bootstrap {
    statistic: f64,
    p_value: f64,
    draws: Vec<f64>,
    failures: usize,
    levels: Vec<Level>,
}

#[derive(Serialize)]
struct Level {
    alpha: f64,
    critical: f64,
    reject: bool,
}

/// One simulated dataset held by the page.
#[wasm_bindgen]
pub struct Demo {
    spec: ModelSpec,
    data: Dataset,
    truth: ScenarioTruth,
}

#[wasm_bindgen]
impl Demo {
    /// Simulates `scenario` (h0m0, h1m0, h0m1, h1m1) under error `case`
    /// (A to D) with `n_obs` observations and shift size `g`.
    #[wasm_bindgen(constructor)]
    pub fn new(scenario: &str, case: &str, n_obs: usize, g: f64, seed: u64) -> Result<Demo, JsError> {
        let scenario: Scenario = scenario.parse().map_err(js_err)?;
        let case: ErrorCase = case.parse().map_err(js_err)?;
        let (data, truth) = dgp::generate(&ScenarioConfig::new(scenario, case, n_obs, g, seed)).map_err(js_err)?;
        Ok(Demo { spec: ModelSpec::simulation(), data, truth })
    }

    /// The simulated `y` and `x` with the true break dates.
    pub fn series(&self) -> Result<String, JsError> {
        to_json(&Series {
            y: self.data.y.clone(),
            x: self.data.x.col_vec(0),
            se_break: self.truth.se_break,
            rf_break: self.truth.rf_break,
            shift_window: self.truth.shift_window,
        })
    }

    /// Robust Wald statistic of one structural break at every admissible
    /// date, with a stable reduced form and trimming `eps`.
    pub fn wald_profile(&self, eps: f64) -> Result<String, JsError> {
        let design = Design::new(&self.spec, &self.data).map_err(js_err)?;
        let n = design.n_obs();
        let fs = first_stage(&design, &Partition::none(n)).map_err(js_err)?;
        let engine = SegmentMoments::new(&design.stack_w(&fs.x_hat), &design.y, ScoreBasis::Residual).map_err(js_err)?;
        let grid = enumerate_partitions(n, 1, eps, design.z.cols()).map_err(js_err)?;
        let mut profile = Profile { dates: Vec::new(), wald: Vec::new(), sup: f64::NEG_INFINITY, argmax: 0 };
        for breaks in &grid {
            let Ok(w) = statistic_at(std::slice::from_ref(&engine), &breaks, Statistic::SupWald, BetaSource::Alt) else {
                continue;
            };
            let date = breaks[0] + design.offset;
            if w > profile.sup {
                profile.sup = w;
                profile.argmax = date;
            }
            profile.dates.push(date);
            profile.wald.push(w);
        }
        to_json(&profile)
    }

    /// Bootstrap test of no structural break against `alt_breaks` breaks.
    /// `scheme` is `wr` or `wf`, `statistic` is `supwald` or `supf`.
    pub fn bootstrap(&self, statistic: &str, scheme: &str, alt_breaks: usize, reps: usize, seed: u64) -> Result<String, JsError> {
        let statistic: Statistic = statistic.parse().map_err(js_err)?;
        let scheme: Scheme = scheme.parse().map_err(js_err)?;
        let test = TestSpec::sup(statistic, alt_breaks);
        let rf = Partition::none(self.data.len() - self.spec.max_lag());
        let out = bootstrap_test(&self.spec, &self.data, &rf, &test, &BootstrapConfig::new(scheme, reps, seed), &LEVELS).map_err(js_err)?;
        to_json(&Bootstrap {
            statistic: out.statistic,
            p_value: out.p_value.unwrap_or(f64::NAN),
            failures: out.boot_failures,
            levels: out.levels.iter().map(|l| Level { alpha: l.alpha, critical: l.critical_value, reject: l.reject }).collect(),
            draws: out.boot_draws,
        })
    }
}
