//! Served-request fractions and average rate of the slotted strategy.
//!
//! Each replicate draws the typical cluster's matched-request count and a
//! source/destination pair, independently of the surrounding interference.
//! The success probability of the link given those draws is evaluated either
//! through the LT approximation (power-law Rayleigh, Matérn parents) or from
//! a simulated interference field.

use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::ChannelKind;
use crate::cluster::{resolve_n_m_max, slots_and_served, ClusterSampler};
use crate::error::{Error, Result};
use crate::geometry::{uniform_in_disc, ParentKind, Point};
use crate::interference::{
    estimate_slot_count_law, interference_at, sample_field, InterferenceMode, LtApproximator,
    SlotCountLaw,
};
use crate::network::NetworkConfig;
use crate::rng::Streams;
use crate::stats::{Method, MetricEstimate};

pub use crate::events::{campbell_identity_check, CampbellCheck};

/// Where the link success probability comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterferenceMethod {
    /// LT approximation when it applies, simulated field otherwise.
    Auto,
    LtApprox,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsOptions {
    pub replicates: usize,
    pub method: InterferenceMethod,
    /// Cluster draws used for the slot-count law of interferers.
    pub law_replicates: usize,
    /// Simulated-field runs stop doubling once the local metric's error is below this.
    pub target_std_error: f64,
    pub max_replicates: usize,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            replicates: 4000,
            method: InterferenceMethod::Auto,
            law_replicates: 10_000,
            target_std_error: 0.005,
            max_replicates: 64_000,
        }
    }
}

/// Metrics at one attempted rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatePoint {
    pub rate: f64,
    pub local: MetricEstimate,
    pub global: MetricEstimate,
    pub average_rate: MetricEstimate,
}

/// Draws for the typical cluster that do not depend on the parent process.
#[derive(Clone, Debug, PartialEq)]
pub struct OriginDraws {
    pub n_m: Vec<usize>,
    /// Source-to-destination distance.
    pub link: Vec<f64>,
    /// Destination position relative to the cluster center.
    pub receiver: Vec<Point>,
}

impl OriginDraws {
    pub fn sample(cfg: &NetworkConfig, replicates: usize, streams: &Streams) -> Result<Self> {
        let sampler = ClusterSampler::new(cfg)?;
        let r_c = cfg.cluster_radius;
        let draws: Vec<(usize, f64, Point)> = (0..replicates as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = streams.stream("origin", i);
                let n_m = sampler.sample_match_count(&mut rng);
                let s = uniform_in_disc(Point::ORIGIN, r_c, &mut rng);
                let d = uniform_in_disc(Point::ORIGIN, r_c, &mut rng);
                (n_m, s.distance(d), d)
            })
            .collect();
        let mut out = Self {
            n_m: Vec::with_capacity(replicates),
            link: Vec::with_capacity(replicates),
            receiver: Vec::with_capacity(replicates),
        };
        for (n, l, d) in draws {
            out.n_m.push(n);
            out.link.push(l);
            out.receiver.push(d);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.n_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_m.is_empty()
    }
}

/// Resolved model pieces shared by all rates of one configuration.
#[derive(Debug, Clone)]
pub struct MetricsEngine {
    cfg: NetworkConfig,
    n_m_max: usize,
    law: SlotCountLaw,
    approx: Option<LtApproximator>,
    options: MetricsOptions,
    streams: Streams,
}

fn uses_lt(cfg: &NetworkConfig, method: InterferenceMethod) -> Result<bool> {
    let applicable = cfg.channel.kind == ChannelKind::RayleighPowerLaw
        && cfg.parent.kind == ParentKind::MaternIi;
    match method {
        InterferenceMethod::Auto => Ok(applicable),
        InterferenceMethod::MonteCarlo => Ok(false),
        InterferenceMethod::LtApprox if applicable => Ok(true),
        InterferenceMethod::LtApprox => Err(Error::config(
            "the LT approximation needs Matérn parents and the power-law Rayleigh channel",
        )),
    }
}

impl MetricsEngine {
    pub fn new(cfg: &NetworkConfig, options: &MetricsOptions, streams: &Streams) -> Result<Self> {
        cfg.validate()?;
        let n_m_max = resolve_n_m_max(cfg, streams)?;
        let law = estimate_slot_count_law(cfg, n_m_max, options.law_replicates.max(1), streams)?;
        Self::with_law(cfg, options, streams, n_m_max, law)
    }

    /// Engine with a given cap and interferer slot law.
    pub fn with_law(
        cfg: &NetworkConfig,
        options: &MetricsOptions,
        streams: &Streams,
        n_m_max: usize,
        law: SlotCountLaw,
    ) -> Result<Self> {
        cfg.validate()?;
        let approx = if uses_lt(cfg, options.method)? {
            let max_observer = slots_and_served(n_m_max, cfg.epsilon, n_m_max)?.0;
            Some(LtApproximator::new(cfg, &law, max_observer)?)
        } else {
            None
        };
        Ok(Self {
            cfg: cfg.clone(),
            n_m_max,
            law,
            approx,
            options: options.clone(),
            streams: *streams,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn n_m_max(&self) -> usize {
        self.n_m_max
    }

    pub fn slot_law(&self) -> &SlotCountLaw {
        &self.law
    }

    pub fn approximator(&self) -> Option<&LtApproximator> {
        self.approx.as_ref()
    }

    pub fn method(&self) -> Method {
        if self.approx.is_some() {
            Method::LtRayleigh
        } else {
            Method::FullMonteCarlo
        }
    }

    /// Metrics at each rate, from fresh origin draws. Simulated-field runs
    /// double the replicate count until the local metric is precise enough.
    pub fn evaluate(&self, rates: &[f64]) -> Result<Vec<RatePoint>> {
        let mut n = self.options.replicates.max(1);
        loop {
            let origin = OriginDraws::sample(&self.cfg, n, &self.streams)?;
            let points = self.evaluate_with(&origin, rates)?;
            let worst = points.iter().map(|p| p.local.std_error).fold(0.0, f64::max);
            if self.approx.is_some()
                || worst < self.options.target_std_error
                || 2 * n > self.options.max_replicates
            {
                return Ok(points);
            }
            n *= 2;
        }
    }

    /// Metrics at each rate from the given origin draws.
    pub fn evaluate_with(&self, origin: &OriginDraws, rates: &[f64]) -> Result<Vec<RatePoint>> {
        for &r in rates {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(Error::domain(format!(
                    "rate must be finite and non-negative, got {r}"
                )));
            }
        }
        let cfg = &self.cfg;
        let eps = cfg.epsilon;
        let cap = self.n_m_max;
        let power = cfg.channel.tx_power();
        let noise = cfg.channel.noise;
        let n_rates = rates.len();

        // Per replicate: (served slots, success probability at each rate).
        let rows: Vec<(usize, Vec<f64>)> = (0..origin.len())
            .into_par_iter()
            .map(|i| -> Result<(usize, Vec<f64>)> {
                let (w, k) = slots_and_served(origin.n_m[i], eps, cap)?;
                if k == 0 {
                    return Ok((0, vec![0.0; n_rates]));
                }
                let link = origin.link[i];
                let d = origin.receiver[i];
                let thetas = rates.iter().map(|&r| (w as f64 * r * LN_2).exp_m1());
                let success: Vec<f64> = match &self.approx {
                    Some(lt) => thetas
                        .map(|theta| {
                            let mut p = lt.link_success(theta, link, d.norm(), w);
                            if noise > 0.0 {
                                p *= cfg.channel.intra_ccdf(link, theta * noise / power);
                            }
                            p
                        })
                        .collect(),
                    None => {
                        let field = sample_field(
                            cfg,
                            &self.law,
                            &mut self.streams.stream("field", i as u64),
                        )?;
                        let interference = interference_at(
                            d,
                            w,
                            &field,
                            &cfg.channel,
                            InterferenceMode::WorstCaseB1,
                            &mut self.streams.stream("transmitters", i as u64),
                        ) + noise;
                        thetas
                            .map(|theta| cfg.channel.intra_ccdf(link, theta * interference / power))
                            .collect()
                    }
                };
                Ok((k, success))
            })
            .collect::<Result<_>>()?;

        let method = self.method();
        let requests = cfg.mean_requesting_users();
        let coverage = cfg.parent_density() * cfg.cluster_area();
        let p_m = cfg.match_probability();
        let mut out = Vec::with_capacity(n_rates);
        for (j, &rate) in rates.iter().enumerate() {
            let local: Vec<f64> = rows
                .iter()
                .map(|(k, p)| {
                    if requests > 0.0 {
                        *k as f64 * p[j] / requests
                    } else {
                        0.0
                    }
                })
                .collect();
            let avg: Vec<f64> = rows
                .iter()
                .map(|(k, p)| if *k > 0 { rate * p[j] } else { 0.0 })
                .collect();
            // Projected onto [0, p_M], the support of the estimand; the standard error is left unchanged.
            let mut local = MetricEstimate::from_samples(&local, method);
            local.value = local.value.clamp(0.0, p_m);
            out.push(RatePoint {
                rate,
                local,
                global: local.scaled(coverage),
                average_rate: MetricEstimate::from_samples(&avg, method),
            });
        }
        Ok(out)
    }
}

/// Fraction of requests served per cluster at attempted rate `rate`.
pub fn local_metric(
    cfg: &NetworkConfig,
    rate: f64,
    options: &MetricsOptions,
    streams: &Streams,
) -> Result<MetricEstimate> {
    Ok(MetricsEngine::new(cfg, options, streams)?.evaluate(&[rate])?[0].local)
}

/// Served requests per unit area, as a fraction of the cluster coverage.
pub fn global_metric(
    cfg: &NetworkConfig,
    rate: f64,
    options: &MetricsOptions,
    streams: &Streams,
) -> Result<MetricEstimate> {
    Ok(MetricsEngine::new(cfg, options, streams)?.evaluate(&[rate])?[0].global)
}

pub fn average_rate(
    cfg: &NetworkConfig,
    rate: f64,
    options: &MetricsOptions,
    streams: &Streams,
) -> Result<MetricEstimate> {
    Ok(MetricsEngine::new(cfg, options, streams)?.evaluate(&[rate])?[0].average_rate)
}

/// Upper bounds on the local and global metrics at any rate.
pub fn metric_bounds(cfg: &NetworkConfig) -> (f64, f64) {
    let p_m = cfg.match_probability();
    (p_m, cfg.parent_density() * cfg.cluster_area() * p_m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelModel;
    use crate::content::ContentConfig;
    use crate::geometry::ParentProcess;
    use std::f64::consts::PI;

    fn cfg() -> NetworkConfig {
        NetworkConfig {
            parent: ParentProcess::matern(2e-4, 40.0).unwrap(),
            cluster_radius: 20.0,
            lambda_u: 0.01,
            lambda_r: 0.01,
            content: ContentConfig::zipf(10, 2, 0.6).unwrap(),
            channel: ChannelModel::rayleigh(4.0),
            epsilon: 0.0,
            n_m_max: None,
            window_radius: Some(400.0),
        }
    }

    fn opts(method: InterferenceMethod, replicates: usize) -> MetricsOptions {
        MetricsOptions {
            replicates,
            method,
            law_replicates: 4000,
            target_std_error: 1.0,
            max_replicates: replicates,
        }
    }

    #[test]
    fn zero_rate_and_no_caching() {
        let s = Streams::new(1);
        let e = MetricsEngine::new(&cfg(), &opts(InterferenceMethod::Auto, 2000), &s).unwrap();
        let p = e.evaluate(&[0.0]).unwrap()[0];
        assert_eq!(p.average_rate.value, 0.0);
        let mut none = cfg();
        none.lambda_u = 0.0;
        let t = local_metric(&none, 0.01, &opts(InterferenceMethod::MonteCarlo, 500), &s).unwrap();
        assert_eq!(t.value, 0.0);
        assert_eq!(
            global_metric(&none, 0.01, &opts(InterferenceMethod::MonteCarlo, 500), &s)
                .unwrap()
                .value,
            0.0
        );
    }

    #[test]
    fn global_is_scaled_local() {
        let c = cfg();
        let s = Streams::new(2);
        let e = MetricsEngine::new(&c, &opts(InterferenceMethod::Auto, 3000), &s).unwrap();
        for p in e.evaluate(&[1e-3, 0.05, 0.3]).unwrap() {
            let scale = c.parent_density() * PI * 400.0;
            assert!(
                (p.global.value - scale * p.local.value).abs()
                    <= 1e-15 * p.global.value.max(1e-300)
            );
            let (tl_max, tg_max) = metric_bounds(&c);
            assert!(p.local.value <= tl_max + 1e-12);
            assert!(p.global.value <= tg_max + 1e-12);
            assert!(p.average_rate.value <= p.rate);
        }
    }

    #[test]
    fn interference_free_rate_matches_disc_quadrature() {
        // Single isolated cluster: no interference, only noise. Success is
        // exp(-θ N / (P l)) with l = |S - D|^-4. Oracle integrates over the
        // distance law of two uniform points in a disc.
        let mut c = cfg();
        c.parent = ParentProcess::matern(1e-9, 40.0).unwrap();
        c.window_radius = Some(41.0);
        c.channel.noise = 1e-4;
        c.n_m_max = Some(1);
        c.lambda_u = 5.0;
        let s = Streams::new(3);
        let rate = 0.2;
        let e = MetricsEngine::new(&c, &opts(InterferenceMethod::MonteCarlo, 40_000), &s).unwrap();
        let p = e.evaluate(&[rate]).unwrap()[0];
        // Distance density for two uniform points in a disc of radius a.
        let a = 20.0f64;
        let density = |r: f64| {
            let x = r / (2.0 * a);
            (4.0 * r / (PI * a * a)) * ((x).acos() - x * (1.0 - x * x).sqrt())
        };
        let theta = (rate * LN_2).exp_m1();
        let n = 20_000;
        let h = 2.0 * a / n as f64;
        let mut success = 0.0;
        for i in 0..n {
            let r = (i as f64 + 0.5) * h;
            success += density(r) * (-theta * 1e-4 * r.powi(4)).exp() * h;
        }
        // P(N_m >= 1) = 1 - exp(-λ_r π R_c² p_M)
        let busy = 1.0 - (-c.mean_requesting_users() * c.match_probability()).exp();
        let expected = rate * busy * success;
        assert!(
            (p.average_rate.value - expected).abs() < 3.0 * p.average_rate.std_error + 1e-4,
            "{} ± {} vs {}",
            p.average_rate.value,
            p.average_rate.std_error,
            expected
        );
    }

    #[test]
    fn local_metric_never_exceeds_matched_fraction_of_same_draws() {
        let c = cfg();
        let s = Streams::new(7);
        let e = MetricsEngine::new(&c, &opts(InterferenceMethod::Auto, 3000), &s).unwrap();
        let origin = OriginDraws::sample(&c, 3000, &s).unwrap();
        let matched = origin.n_m.iter().sum::<usize>() as f64
            / origin.len() as f64
            / c.mean_requesting_users();
        for p in e.evaluate_with(&origin, &[0.0, 1e-6, 0.1]).unwrap() {
            assert!(p.local.value <= matched + 1e-12);
            let (tl, _) = metric_bounds(&c);
            assert!(p.local.value <= tl + 3.0 * p.local.std_error);
        }
    }

    #[test]
    fn lt_request_rejected_for_grid() {
        let mut c = cfg();
        c.parent = ParentProcess::grid(40.0).unwrap();
        let s = Streams::new(4);
        assert!(MetricsEngine::new(&c, &opts(InterferenceMethod::LtApprox, 100), &s).is_err());
        let e = MetricsEngine::new(&c, &opts(InterferenceMethod::Auto, 100), &s).unwrap();
        assert_eq!(e.method(), Method::FullMonteCarlo);
    }

    #[test]
    fn monotone_in_rate() {
        let s = Streams::new(5);
        let e = MetricsEngine::new(&cfg(), &opts(InterferenceMethod::Auto, 4000), &s).unwrap();
        let rates = [1e-4, 1e-3, 0.01, 0.05, 0.1, 0.3, 1.0];
        let pts = e.evaluate(&rates).unwrap();
        for w in pts.windows(2) {
            // Common random numbers: exact monotonicity per replicate.
            assert!(w[1].local.value <= w[0].local.value + 1e-15);
            assert!(
                w[1].average_rate.value / w[1].rate <= w[0].average_rate.value / w[0].rate + 1e-15
            );
        }
    }

    #[test]
    fn error_shrinks_with_replicates() {
        let s = Streams::new(6);
        let small = MetricsEngine::new(&cfg(), &opts(InterferenceMethod::Auto, 8000), &s).unwrap();
        let big = MetricsEngine::new(&cfg(), &opts(InterferenceMethod::Auto, 16_000), &s).unwrap();
        let a = small.evaluate(&[0.05]).unwrap()[0].local.std_error;
        let b = big.evaluate(&[0.05]).unwrap()[0].local.std_error;
        let ratio = b / a;
        assert!(
            (ratio - 1.0 / 2f64.sqrt()).abs() < 0.2 / 2f64.sqrt(),
            "{ratio}"
        );
    }
}
