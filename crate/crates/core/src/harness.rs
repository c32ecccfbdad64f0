//! Monte Carlo harness: rejection frequencies per design cell, table output
//! and the single-dataset test.
//!
//! Replication `j` of every cell draws its dataset from seed
//! `derive(master, j, 0, REPLICATION)` and its multipliers from streams keyed
//! by `(master, j, b, tag)`. Nothing depends on `g`, so arms of one design
//! that differ only in `g` share their random numbers.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{pvalue_and_quantile, run_bootstrap, BootstrapConfig, Scheme, FAILURE_CAP};
use crate::dgp::{self, ErrorCase, Scenario, ScenarioConfig};
use crate::error::{Error, Result};
use crate::estimation::{BetaSource, Design};
use crate::model::{Dataset, ModelSpec, Partition};
use crate::par;
use crate::rng::{self, tag};
use crate::sequential::{estimate_rf_breaks, SequentialConfig, SequentialResult};
use crate::stats::{sample_test, Statistic, TestOutcome, TestSpec};

/// Exact header of the rejection-rate table.
pub const CSV_HEADER: &str = "scenario,case,T,g,test,scheme,alpha,rate,N,B,failures,seconds";

/// A simulation grid and everything needed to run it. Field names double as
/// the keys of the JSON configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub scenario: Vec<Scenario>,
    pub case: Vec<ErrorCase>,
    #[serde(rename = "T")]
    pub n_obs: Vec<usize>,
    pub g: Vec<f64>,
    /// Monte Carlo replications.
    #[serde(rename = "N")]
    pub reps: usize,
    /// Bootstrap replications.
    #[serde(rename = "B")]
    pub boot_reps: usize,
    pub alpha: Vec<f64>,
    pub test: Statistic,
    pub scheme: Scheme,
    /// Structural breaks under the null; defaults to the scenario's `m`.
    pub null_breaks: Option<usize>,
    /// Breaks under the alternative of the `m = 0` test; defaults to 1.
    pub alt_breaks: Option<usize>,
    pub eps: f64,
    pub beta_source: BetaSource,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub out: Option<PathBuf>,
    /// Cap and level of the reduced-form pre-test.
    pub rf_max_breaks: usize,
    pub rf_alpha: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            scenario: vec![Scenario::H0M0],
            case: vec![ErrorCase::A],
            n_obs: vec![240],
            g: vec![0.0],
            reps: 1000,
            boot_reps: 399,
            alpha: vec![0.10, 0.05, 0.01],
            test: Statistic::SupWald,
            scheme: Scheme::Wr,
            null_breaks: None,
            alt_breaks: None,
            eps: 0.15,
            beta_source: BetaSource::Alt,
            seed: 20_240_601,
            threads: 0,
            out: None,
            rf_max_breaks: 2,
            rf_alpha: 0.05,
        }
    }
}

/// One `(scenario, case, T, g)` point of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub scenario: Scenario,
    pub case: ErrorCase,
    pub n_obs: usize,
    pub g: f64,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 || self.boot_reps == 0 {
            return Err(Error::Config("N and B must be at least 1".into()));
        }
        if self.alpha.is_empty() || !self.alpha.iter().all(|&a| a > 0.0 && a < 1.0) {
            return Err(Error::Config("significance levels must lie in (0, 1)".into()));
        }
        if !self.alpha.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::Config("significance levels must be strictly decreasing".into()));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::Config(format!("eps must lie in (0, 0.5), got {}", self.eps)));
        }
        if self.rf_max_breaks == 0 || !(self.rf_alpha > 0.0 && self.rf_alpha < 1.0) {
            return Err(Error::Config("the reduced-form pre-test needs a positive cap and a level in (0, 1)".into()));
        }
        for cell in self.cells() {
            ScenarioConfig::new(cell.scenario, cell.case, cell.n_obs, cell.g, 0).validate()?;
            self.test_for(cell.scenario).validate()?;
        }
        Ok(())
    }

    /// Grid points in scenario, case, `T`, `g` order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &scenario in &self.scenario {
            for &case in &self.case {
                for &n_obs in &self.n_obs {
                    for &g in &self.g {
                        out.push(Cell { scenario, case, n_obs, g });
                    }
                }
            }
        }
        out
    }

    /// The structural test of a scenario: `m = 0` against `m = k` when the
    /// scenario has no structural break, otherwise `m = 1` against `m = 2`.
    pub fn test_for(&self, scenario: Scenario) -> TestSpec {
        let null = self.null_breaks.unwrap_or(scenario.se_breaks());
        let alt = match null {
            0 => self.alt_breaks.unwrap_or(1),
            l => self.alt_breaks.unwrap_or(l + 1),
        };
        TestSpec { statistic: self.test, null_breaks: null, alt_breaks: alt, trim: self.eps, beta_source: self.beta_source }
    }

    fn boot(&self, j: usize) -> BootstrapConfig {
        BootstrapConfig { replication: j as u64, ..BootstrapConfig::new(self.scheme, self.boot_reps, self.seed) }
    }

    fn sequential(&self, j: usize) -> SequentialConfig {
        SequentialConfig { max_breaks: self.rf_max_breaks, alpha: self.rf_alpha, trim: self.eps, boot: self.boot(j) }
    }

    /// Simulated dataset of replication `j`.
    pub fn dataset(&self, cell: &Cell, j: usize) -> Result<Dataset> {
        let seed = rng::derive_seed(self.seed, j as u64, 0, tag::REPLICATION);
        Ok(dgp::generate(&ScenarioConfig::new(cell.scenario, cell.case, cell.n_obs, cell.g, seed))?.0)
    }
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replication {
    pub statistic: f64,
    pub p_value: f64,
    pub rejects: Vec<bool>,
    pub boot_failures: usize,
    /// Number of reduced-form breaks imposed.
    pub rf_breaks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub cell: Cell,
    pub test: TestSpec,
    pub scheme: Scheme,
    pub alpha: Vec<f64>,
    /// Rejection frequency per level over the successful replications.
    pub rates: Vec<f64>,
    pub reps: usize,
    pub boot_reps: usize,
    /// Failed bootstrap replications summed over the cell.
    pub boot_failures: usize,
    /// Monte Carlo replications dropped after a numerical failure.
    pub failed_reps: usize,
    pub seconds: f64,
    /// `None` for dropped replications.
    pub replications: Vec<Option<Replication>>,
}

impl CellResult {
    /// Share of successful replications that imposed each number of
    /// reduced-form breaks, `0..=cap`.
    pub fn rf_break_shares(&self, cap: usize) -> Vec<f64> {
        let done: Vec<&Replication> = self.replications.iter().flatten().collect();
        (0..=cap).map(|h| done.iter().filter(|r| r.rf_breaks == h).count() as f64 / done.len().max(1) as f64).collect()
    }
}

/// Keeps the successful items, failing when more than [`FAILURE_CAP`] of
/// them hit numerical errors.
fn drop_failures<T>(results: Vec<Result<T>>) -> Result<(Vec<Option<T>>, usize)> {
    let total = results.len();
    let mut failed = 0;
    let mut out = Vec::with_capacity(total);
    for r in results {
        match r {
            Ok(v) => out.push(Some(v)),
            Err(e) if e.is_numerical() => {
                log::warn!("replication dropped: {e}");
                failed += 1;
                out.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    if failed as f64 > FAILURE_CAP * total as f64 {
        return Err(Error::FailureCap { failed, total });
    }
    Ok((out, failed))
}

fn replicate(cfg: &McConfig, cell: &Cell, j: usize) -> Result<Replication> {
    let spec = ModelSpec::simulation();
    let data = cfg.dataset(cell, j)?;
    let design = Design::new(&spec, &data)?;
    let n = design.n_obs();
    let (rf, rf_breaks) = if cell.scenario.rf_breaks() > 0 {
        let seq = estimate_rf_breaks(&spec, &data, &cfg.sequential(j))?;
        (seq.partition, seq.chosen_breaks)
    } else {
        (Partition::none(n), 0)
    };
    let test = cfg.test_for(cell.scenario);
    let sample = sample_test(&design, &rf, &test)?;
    let draws = run_bootstrap(&spec, &data, &design, &sample.null, &test, &cfg.boot(j))?;
    let statistic = sample.outcome.statistic;
    let (p_value, levels) = pvalue_and_quantile(statistic, &draws.draws, &cfg.alpha)?;
    Ok(Replication { statistic, p_value, rejects: levels.iter().map(|l| l.reject).collect(), boot_failures: draws.failures, rf_breaks })
}

/// Rejection frequencies of one cell.
pub fn run_cell(cfg: &McConfig, cell: &Cell) -> Result<CellResult> {
    cfg.validate()?;
    let start = Instant::now();
    let results = par::with_threads(cfg.threads, || par::map_indexed(cfg.reps, |j| replicate(cfg, cell, j)))?;
    let (replications, failed_reps) = drop_failures(results)?;
    let done: Vec<&Replication> = replications.iter().flatten().collect();
    let rates = (0..cfg.alpha.len()).map(|a| done.iter().filter(|r| r.rejects[a]).count() as f64 / done.len().max(1) as f64).collect();
    let result = CellResult {
        cell: *cell,
        test: cfg.test_for(cell.scenario),
        scheme: cfg.scheme,
        alpha: cfg.alpha.clone(),
        rates,
        reps: done.len(),
        boot_reps: cfg.boot_reps,
        boot_failures: done.iter().map(|r| r.boot_failures).sum(),
        failed_reps,
        seconds: start.elapsed().as_secs_f64(),
        replications,
    };
    log::info!("{} {} T={} g={}: rates {:?} ({:.1}s)", cell.scenario, cell.case, cell.n_obs, cell.g, result.rates, result.seconds);
    Ok(result)
}

/// Share of replications in which the sequential pre-test chose each number
/// of reduced-form breaks, `0..=rf_max_breaks`.
pub fn rf_selection(cfg: &McConfig, cell: &Cell) -> Result<Vec<f64>> {
    cfg.validate()?;
    let spec = ModelSpec::simulation();
    let results = par::with_threads(cfg.threads, || {
        par::map_indexed(cfg.reps, |j| -> Result<SequentialResult> { estimate_rf_breaks(&spec, &cfg.dataset(cell, j)?, &cfg.sequential(j)) })
    })?;
    let (runs, _) = drop_failures(results)?;
    let done: Vec<&SequentialResult> = runs.iter().flatten().collect();
    Ok((0..=cfg.rf_max_breaks).map(|h| done.iter().filter(|r| r.chosen_breaks == h).count() as f64 / done.len().max(1) as f64).collect())
}

/// Writes the table header followed by one row per cell and level.
pub fn write_table<W: Write>(mut w: W, results: &[CellResult]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in results {
        for (alpha, rate) in r.alpha.iter().zip(&r.rates) {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{:.4},{},{},{},{:.2}",
                r.cell.scenario, r.cell.case, r.cell.n_obs, r.cell.g, r.test.statistic, r.scheme, alpha, rate, r.reps, r.boot_reps, r.boot_failures, r.seconds
            )?;
        }
    }
    Ok(())
}

/// Runs every cell of the grid in order.
pub fn run_table(cfg: &McConfig) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    cfg.cells().iter().map(|cell| run_cell(cfg, cell)).collect()
}

/// Options of the single-dataset test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetTest {
    pub test: TestSpec,
    pub scheme: Scheme,
    pub boot_reps: usize,
    pub alpha: Vec<f64>,
    pub seed: u64,
    /// Cap of the reduced-form pre-test; 0 imposes no reduced-form break.
    pub rf_max_breaks: usize,
    pub rf_alpha: f64,
}

impl Default for DatasetTest {
    fn default() -> Self {
        Self {
            test: TestSpec::default(),
            scheme: Scheme::Wr,
            boot_reps: 399,
            alpha: vec![0.10, 0.05, 0.01],
            seed: 20_240_601,
            rf_max_breaks: 2,
            rf_alpha: 0.05,
        }
    }
}

/// Result of the single-dataset test.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetReport {
    pub rf: Option<SequentialResult>,
    pub outcome: TestOutcome,
}

/// Runs the reduced-form pre-test (unless disabled) and one bootstrap test
/// on user data.
pub fn test_dataset(spec: &ModelSpec, data: &Dataset, opts: &DatasetTest) -> Result<DatasetReport> {
    opts.test.validate()?;
    let boot = BootstrapConfig::new(opts.scheme, opts.boot_reps, opts.seed);
    boot.validate()?;
    let design = Design::new(spec, data)?;
    let n = design.n_obs();
    let rf = match opts.rf_max_breaks {
        0 => None,
        cap => Some(estimate_rf_breaks(spec, data, &SequentialConfig { max_breaks: cap, alpha: opts.rf_alpha, trim: opts.test.trim, boot })?),
    };
    let rf_partition = rf.as_ref().map_or_else(|| Partition::none(n), |r| r.partition.clone());
    let sample = sample_test(&design, &rf_partition, &opts.test)?;
    let draws = run_bootstrap(spec, data, &design, &sample.null, &opts.test, &boot)?;
    let mut outcome = sample.outcome;
    let (p, levels) = pvalue_and_quantile(outcome.statistic, &draws.draws, &opts.alpha)?;
    outcome.boot_draws = draws.draws;
    outcome.boot_failures = draws.failures;
    outcome.p_value = Some(p);
    outcome.levels = levels;
    Ok(DatasetReport { rf, outcome })
}

impl std::fmt::Display for DatasetReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let o = &self.outcome;
        if let Some(rf) = &self.rf {
            writeln!(f, "reduced-form breaks: {} at {:?}", rf.chosen_breaks, rf.partition.breaks())?;
            for s in &rf.trail {
                writeln!(f, "  h={} vs {}: stat {:.4}, p {:.4}", s.null_breaks, s.null_breaks + 1, s.statistic, s.p_value)?;
            }
        }
        writeln!(f, "test: {} m={} vs m={}", o.test.statistic, o.test.null_breaks, o.test.alt_breaks)?;
        if o.test.null_breaks > 0 {
            writeln!(f, "null breaks: {:?}", o.null_partition.breaks())?;
        }
        writeln!(f, "statistic: {:.6}", o.statistic)?;
        writeln!(f, "argmax breaks: {:?}", o.argmax_partition.breaks())?;
        if let Some(p) = o.p_value {
            writeln!(f, "p-value: {p:.4} (B = {}, failed replications {})", o.boot_draws.len() + o.boot_failures, o.boot_failures)?;
        }
        for l in &o.levels {
            writeln!(
                f,
                "alpha {}: critical {:.4} (order {}{}) -> {}",
                l.alpha,
                l.critical_value,
                l.order_index,
                if l.exact { "" } else { ", rounded up" },
                if l.reject { "reject" } else { "do not reject" }
            )?;
        }
        write!(f, "candidates: {} evaluated, {} skipped", o.evaluated, o.skipped)
    }
}
