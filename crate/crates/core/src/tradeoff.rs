//! Grid-search inner bounds to the trade-off regions.
//!
//! A sweep evaluates every `(R_c, λ, δ, R)` combination once; the three
//! optimizers then read frontiers off the same table for any list of
//! constraint values.

use rayon::prelude::*;
use serde::Serialize;

use crate::cluster::resolve_n_m_max;
use crate::error::{Error, Result};
use crate::geometry::{ParentKind, ParentProcess};
use crate::interference::estimate_slot_count_law;
use crate::metrics::{MetricsEngine, MetricsOptions, OriginDraws, RatePoint};
use crate::network::NetworkConfig;
use crate::rng::Streams;
use crate::stats::MetricEstimate;

/// Standard errors an estimate must clear its floor by.
pub const SAFETY_MARGIN: f64 = 3.0;

pub fn linear_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linear_space(lo.ln(), hi.ln(), n)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Axes of the parameter search. Clearances are multiples of `2 R_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub cluster_radii: Vec<f64>,
    pub rates: Vec<f64>,
    /// Matérn proposal intensities; unused by the grid parent.
    pub lambdas: Vec<f64>,
    /// `δ / (2 R_c)`, each at least 1.
    pub delta_factors: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            cluster_radii: linear_space(10.0, 200.0, 12),
            rates: log_space(1e-6, 2.0, 12),
            lambdas: log_space(1e-6, 1e-2, 12),
            delta_factors: linear_space(1.0, 3.0, 12),
        }
    }
}

impl SweepGrid {
    /// A single parameter point swept over `rates`.
    pub fn rate_sweep(cluster_radius: f64, lambda: f64, delta: f64, rates: Vec<f64>) -> Self {
        Self {
            cluster_radii: vec![cluster_radius],
            rates,
            lambdas: vec![lambda],
            delta_factors: vec![delta / (2.0 * cluster_radius)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("cluster radius", &self.cluster_radii),
            ("rate", &self.rates),
            ("lambda", &self.lambdas),
            ("delta factor", &self.delta_factors),
        ];
        for (name, axis) in axes {
            if axis.is_empty() {
                return Err(Error::config(format!("{name} grid is empty")));
            }
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("{name} grid has a non-finite value")));
            }
        }
        if self
            .cluster_radii
            .iter()
            .chain(&self.lambdas)
            .any(|v| *v <= 0.0)
        {
            return Err(Error::config("cluster radii and lambdas must be positive"));
        }
        if self.rates.iter().any(|r| *r < 0.0) {
            return Err(Error::config("rates must be non-negative"));
        }
        // Small tolerance so that δ = 2 R_c read back from a file stays admissible.
        if self.delta_factors.iter().any(|f| *f < 1.0 - 1e-12) {
            return Err(Error::config(
                "clearance factors must be at least 1 (δ ≥ 2 R_c)",
            ));
        }
        Ok(())
    }
}

/// Metrics at one evaluated parameter combination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridPoint {
    pub cluster_radius: f64,
    pub lambda: f64,
    pub delta: f64,
    pub parent_density: f64,
    pub rate: f64,
    pub local: MetricEstimate,
    pub global: MetricEstimate,
    pub average_rate: MetricEstimate,
}

/// Optimum for one constraint value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub constraint: f64,
    pub objective: MetricEstimate,
    pub feasible: bool,
    pub argmax: Option<GridPoint>,
}

/// Every grid combination with its metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub points: Vec<GridPoint>,
}

fn config_at(base: &NetworkConfig, r_c: f64, lambda: f64, factor: f64) -> Result<NetworkConfig> {
    let mut cfg = base.clone();
    cfg.cluster_radius = r_c;
    let delta = (factor * 2.0 * r_c).max(2.0 * r_c);
    cfg.parent = match base.parent.kind {
        ParentKind::MaternIi => ParentProcess::matern(lambda, delta)?,
        ParentKind::TranslatedGrid => ParentProcess::grid(delta)?,
    };
    if base.window_radius.is_some_and(|w| w <= delta) {
        cfg.window_radius = None;
    }
    Ok(cfg)
}

/// Evaluate every grid combination. Cluster-level draws depend only on the
/// cluster radius and are shared across the clearance and density axes.
pub fn evaluate_grid(
    base: &NetworkConfig,
    grid: &SweepGrid,
    options: &MetricsOptions,
    streams: &Streams,
) -> Result<Sweep> {
    grid.validate()?;
    let lambdas: Vec<f64> = match base.parent.kind {
        ParentKind::MaternIi => grid.lambdas.clone(),
        ParentKind::TranslatedGrid => vec![base.parent.lambda],
    };
    let mut points = Vec::new();
    for &r_c in &grid.cluster_radii {
        let probe = config_at(base, r_c, lambdas[0], grid.delta_factors[0])?;
        probe.validate()?;
        let n_m_max = resolve_n_m_max(&probe, streams)?;
        let law = estimate_slot_count_law(&probe, n_m_max, options.law_replicates.max(1), streams)?;
        let origin = OriginDraws::sample(&probe, options.replicates.max(1), streams)?;
        let combos: Vec<(f64, f64)> = lambdas
            .iter()
            .flat_map(|&l| grid.delta_factors.iter().map(move |&f| (l, f)))
            .collect();
        let rows = combos
            .par_iter()
            .map(|&(lambda, factor)| -> Result<Vec<GridPoint>> {
                let cfg = config_at(base, r_c, lambda, factor)?;
                let engine = MetricsEngine::with_law(&cfg, options, streams, n_m_max, law.clone())?;
                let rated: Vec<RatePoint> = if engine.approximator().is_some() {
                    engine.evaluate_with(&origin, &grid.rates)?
                } else {
                    engine.evaluate(&grid.rates)?
                };
                Ok(rated
                    .into_iter()
                    .map(|p| GridPoint {
                        cluster_radius: r_c,
                        lambda,
                        delta: cfg.parent.delta,
                        parent_density: cfg.parent_density(),
                        rate: p.rate,
                        local: p.local,
                        global: p.global,
                        average_rate: p.average_rate,
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        points.extend(rows.into_iter().flatten());
    }
    Ok(Sweep { points })
}

fn feasible_floor(estimate: &MetricEstimate, floor: f64) -> bool {
    // A non-positive floor is met by every non-negative metric.
    floor <= 0.0 || estimate.lower(SAFETY_MARGIN) >= floor
}

impl Sweep {
    fn frontier<'a>(
        &self,
        floors: &[f64],
        candidates: impl Fn() -> Box<dyn Iterator<Item = &'a GridPoint> + 'a>,
        objective: fn(&GridPoint) -> MetricEstimate,
        constraint: fn(&GridPoint) -> MetricEstimate,
    ) -> Vec<TradeoffPoint>
    where
        Self: 'a,
    {
        floors
            .iter()
            .map(|&floor| {
                let mut best: Option<&GridPoint> = None;
                for p in candidates() {
                    if !feasible_floor(&constraint(p), floor) {
                        continue;
                    }
                    if best.is_none_or(|b| objective(p).value > objective(b).value) {
                        best = Some(p);
                    }
                }
                match best {
                    Some(p) => TradeoffPoint {
                        constraint: floor,
                        objective: objective(p),
                        feasible: true,
                        argmax: Some(*p),
                    },
                    None => TradeoffPoint {
                        constraint: floor,
                        objective: MetricEstimate::exact(0.0),
                        feasible: false,
                        argmax: None,
                    },
                }
            })
            .collect()
    }

    /// Largest global metric with average rate at least each floor.
    pub fn global_frontier(&self, rate_floors: &[f64]) -> Vec<TradeoffPoint> {
        self.frontier(
            rate_floors,
            || Box::new(self.points.iter()),
            |p| p.global,
            |p| p.average_rate,
        )
    }

    /// Largest local metric with average rate at least each floor and
    /// parent density at least `min_density`.
    pub fn local_frontier(&self, rate_floors: &[f64], min_density: f64) -> Vec<TradeoffPoint> {
        self.frontier(
            rate_floors,
            || {
                Box::new(
                    self.points
                        .iter()
                        .filter(move |p| p.parent_density >= min_density),
                )
            },
            |p| p.local,
            |p| p.average_rate,
        )
    }

    /// Largest global metric at attempted rate `rate` with local metric at
    /// least each floor.
    pub fn local_global_frontier(&self, rate: f64, local_floors: &[f64]) -> Vec<TradeoffPoint> {
        let tol = 1e-12 * rate.abs().max(1e-300);
        self.frontier(
            local_floors,
            || {
                Box::new(
                    self.points
                        .iter()
                        .filter(move |p| (p.rate - rate).abs() <= tol),
                )
            },
            |p| p.global,
            |p| p.local,
        )
    }
}

pub fn optimize_global(
    base: &NetworkConfig,
    grid: &SweepGrid,
    rate_floors: &[f64],
    options: &MetricsOptions,
    streams: &Streams,
) -> Result<Vec<TradeoffPoint>> {
    Ok(evaluate_grid(base, grid, options, streams)?.global_frontier(rate_floors))
}

pub fn optimize_local(
    base: &NetworkConfig,
    grid: &SweepGrid,
    rate_floors: &[f64],
    min_density: f64,
    options: &MetricsOptions,
    streams: &Streams,
) -> Result<Vec<TradeoffPoint>> {
    Ok(evaluate_grid(base, grid, options, streams)?.local_frontier(rate_floors, min_density))
}

/// `grid.rates` is replaced by the single attempted rate.
pub fn optimize_local_global(
    base: &NetworkConfig,
    grid: &SweepGrid,
    rate: f64,
    local_floors: &[f64],
    options: &MetricsOptions,
    streams: &Streams,
) -> Result<Vec<TradeoffPoint>> {
    let grid = SweepGrid {
        rates: vec![rate],
        ..grid.clone()
    };
    Ok(evaluate_grid(base, &grid, options, streams)?.local_global_frontier(rate, local_floors))
}
