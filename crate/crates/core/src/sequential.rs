//! Sequential bootstrap choice of the number of reduced-form breaks.
//!
//! Stage `l` tests `h = l` against `h = l + 1` with the robust sup-Wald of
//! the reduced-form regression, which is the two-stage machinery with `x` as
//! the dependent block and no second stage. Bootstrap samples impose the
//! `l`-break reduced form together with the no-break structural fit, because
//! the recursive scheme also needs `y_b` for the lagged instruments. With
//! several endogenous regressors the per-column Wald forms are added.

use serde::Serialize;

use crate::bootstrap::{bootstrap_design, collect_draws, generate, pvalue_and_quantile, BootstrapConfig};
use crate::error::{Error, Result};
use crate::estimation::{estimate, BetaSource, Design};
use crate::linalg::RowMat;
use crate::model::{min_regime_len, Dataset, ModelSpec, Partition};
use crate::partition_search::{enumerate_partitions, rf_break_grid_and_fit, ScoreBasis, SegmentMoments};
use crate::rng::tag;
use crate::stats::{scan_partitions, scan_regimes, Scan, Statistic};

/// Settings of the sequential procedure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequentialConfig {
    pub max_breaks: usize,
    pub alpha: f64,
    pub trim: f64,
    /// Scheme, replication count and stream coordinates; the tag of stage `l`
    /// is `BOOT_RF + l`.
    pub boot: BootstrapConfig,
}

impl SequentialConfig {
    pub fn new(boot: BootstrapConfig) -> Self {
        Self { max_breaks: 2, alpha: 0.05, trim: 0.15, boot }
    }
}

/// One tested stage: `h = null_breaks` against `h = null_breaks + 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage {
    pub null_breaks: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequentialResult {
    pub chosen_breaks: usize,
    pub partition: Partition,
    pub trail: Vec<Stage>,
}

/// One engine per column of `x`, scored by segment residuals.
fn column_engines(z: &RowMat, x: &RowMat) -> Result<Vec<SegmentMoments>> {
    (0..x.cols()).map(|c| SegmentMoments::new(z, &x.col_vec(c), ScoreBasis::Residual)).collect()
}

fn rf_scan(engines: &[SegmentMoments], null: &Partition, trim: f64, q: usize) -> Result<Scan> {
    let n = null.n_obs();
    if null.n_breaks() == 0 {
        let grid = enumerate_partitions(n, 1, trim, q)?;
        scan_partitions(engines, &grid, Statistic::SupWald, BetaSource::Alt)
    } else {
        scan_regimes(engines, null.breaks(), min_regime_len(n, trim, q), Statistic::SupWald)
    }
}

/// Sample sup-Wald of `h = null.n_breaks()` against one more break in the
/// reduced form.
pub fn rf_statistic(design: &Design, null: &Partition, trim: f64) -> Result<Scan> {
    let engines = column_engines(&design.z, &design.x)?;
    rf_scan(&engines, null, trim, design.z.cols())
}

/// Tests `h = l` against `h = l + 1` for `l = 0, 1, ...` and stops at the
/// first non-rejection or at `max_breaks`; the chosen breaks are then dated
/// by the global SSR minimiser.
pub fn estimate_rf_breaks(spec: &ModelSpec, data: &Dataset, cfg: &SequentialConfig) -> Result<SequentialResult> {
    if cfg.max_breaks == 0 {
        return Err(Error::Config("the sequential procedure needs max_breaks >= 1".into()));
    }
    cfg.boot.validate()?;
    let design = Design::new(spec, data)?;
    let (n, q) = (design.n_obs(), design.z.cols());
    let mut trail = Vec::new();
    let mut chosen = cfg.max_breaks;
    for l in 0..cfg.max_breaks {
        let null = match l {
            0 => Partition::none(n),
            _ => match rf_break_grid_and_fit(&design, l, cfg.trim) {
                Ok((p, _)) => p,
                Err(e @ (Error::Infeasible(_) | Error::InfeasibleRegime { .. })) => {
                    log::debug!("stage {l} cannot be fitted: {e}");
                    chosen = l - 1;
                    break;
                }
                Err(e) => return Err(e),
            },
        };
        let sample = match rf_statistic(&design, &null, cfg.trim) {
            Ok(s) => s,
            Err(e @ (Error::Infeasible(_) | Error::InfeasibleRegime { .. })) => {
                log::debug!("stage {l} admits no extra break: {e}");
                chosen = l;
                break;
            }
            Err(e) => return Err(e),
        };
        let fit = estimate(&design, &null, &Partition::none(n))?;
        let boot = BootstrapConfig { tag: tag::BOOT_RF + l as u64, ..cfg.boot };
        let draws = collect_draws(boot.reps, |b| {
            let nu = boot.multipliers(n, b);
            let series = generate(spec, data, &design, &fit, &nu, boot.scheme.is_recursive())?;
            let bd = bootstrap_design(spec, boot.scheme, &design, &series)?;
            let engines = column_engines(&bd.z, &bd.x)?;
            Ok(rf_scan(&engines, &null, cfg.trim, q)?.statistic)
        })?;
        let (p, _) = pvalue_and_quantile(sample.statistic, &draws.draws, &[cfg.alpha])?;
        trail.push(Stage { null_breaks: l, statistic: sample.statistic, p_value: p, failures: draws.failures });
        if p > cfg.alpha {
            chosen = l;
            break;
        }
    }
    let partition = match chosen {
        0 => Partition::none(n),
        h => rf_break_grid_and_fit(&design, h, cfg.trim)?.0,
    };
    Ok(SequentialResult { chosen_breaks: chosen, partition, trail })
}
