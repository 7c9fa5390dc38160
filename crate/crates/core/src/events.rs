//! Event-level simulation of the slotted strategy.
//!
//! Every cluster gets full marks and a slot plan. A request counts as served
//! when it is matched, scheduled, and its rate `R` is below the time-sharing
//! rate of its slot with the time-averaged interference. Interfering slots
//! that the plan leaves empty are filled with a fictitious transmitter
//! uniform in the cluster, the same worst case the analytical metrics use.

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::grid_penetrations;
use crate::cluster::{schedule, ClusterMarks, ClusterSampler, SlotPlan};
use crate::error::{Error, Result};
use crate::geometry::{uniform_in_disc, ParentKind, Point, Window};
use crate::interference::achievable_rate_bound;
use crate::network::NetworkConfig;
use crate::rng::{SimRng, Streams};
use crate::stats::{normal_cdf, Method, MetricEstimate};

/// A cluster with its realized schedule.
#[derive(Clone, Debug)]
struct Deployed {
    marks: ClusterMarks,
    plan: SlotPlan,
}

/// Simulates served requests for one configuration.
#[derive(Clone, Debug)]
pub struct EventSimulator {
    cfg: NetworkConfig,
    sampler: ClusterSampler,
    n_m_max: usize,
}

impl EventSimulator {
    pub fn new(cfg: &NetworkConfig, n_m_max: usize) -> Result<Self> {
        cfg.validate()?;
        if n_m_max == 0 {
            return Err(Error::domain("n_m_max must be at least 1"));
        }
        Ok(Self {
            cfg: cfg.clone(),
            sampler: ClusterSampler::new(cfg)?,
            n_m_max,
        })
    }

    fn deploy(&self, center: Point, rng: &mut SimRng) -> Result<Deployed> {
        let marks = self.sampler.sample(center, rng);
        let plan = schedule(&marks, self.cfg.epsilon, self.n_m_max, rng)?;
        Ok(Deployed { marks, plan })
    }

    fn penetrations(&self, a: Point, b: Point) -> u32 {
        match self.cfg.parent.kind {
            ParentKind::TranslatedGrid => grid_penetrations(a, b, self.cfg.parent.delta),
            ParentKind::MaternIi => 1,
        }
    }

    /// Time-averaged interference at `y` during slot `k` of a cluster at
    /// `center` running `n1` slots.
    fn slot_interference(
        &self,
        y: Point,
        center: Point,
        k: usize,
        n1: usize,
        others: &[&Deployed],
        rng: &mut SimRng,
    ) -> f64 {
        let ch = &self.cfg.channel;
        let r_c = self.cfg.cluster_radius;
        let mut total = 0.0;
        let mut seen: Vec<(usize, f64)> = Vec::new();
        for other in others {
            let w = other.plan.slot_count();
            if w == 0 {
                continue;
            }
            let (first, count) = if w <= n1 {
                (k * w / n1, 1)
            } else {
                (k * (w / n1), w / n1)
            };
            let pen = self.penetrations(center, other.marks.center);
            seen.clear();
            let mut sum = 0.0;
            for slot in &other.plan.slots[first..first + count] {
                sum += match slot {
                    Some(t) => match seen.iter().find(|(j, _)| *j == t.transmitter) {
                        // Slow fading: a repeated transmitter keeps its gain.
                        Some(&(_, g)) => g,
                        None => {
                            let x = other.marks.center + other.marks.caching[t.transmitter];
                            let g = ch.inter_gain(x, y, pen, rng);
                            seen.push((t.transmitter, g));
                            g
                        }
                    },
                    None => {
                        ch.inter_gain(uniform_in_disc(other.marks.center, r_c, rng), y, pen, rng)
                    }
                };
            }
            total += sum / count as f64;
        }
        ch.tx_power() * total
    }

    /// Served requests of `cluster`, optionally only those whose destination
    /// falls in `region`.
    fn served(
        &self,
        cluster: &Deployed,
        others: &[&Deployed],
        rate: f64,
        region: Option<&Window>,
        rng: &mut SimRng,
    ) -> usize {
        let ch = &self.cfg.channel;
        let n1 = cluster.plan.slot_count();
        let center = cluster.marks.center;
        let mut count = 0;
        for (k, t) in cluster.plan.occupied() {
            let y = center + cluster.marks.requesting[t.request];
            if region.is_some_and(|w| !w.contains(y)) {
                continue;
            }
            let x = center + cluster.marks.caching[t.transmitter];
            let signal = ch.tx_power() * ch.intra_gain(x, y, rng);
            let interference = self.slot_interference(y, center, k, n1, others, rng) + ch.noise;
            if rate < achievable_rate_bound(signal, interference, n1) {
                count += 1;
            }
        }
        count
    }

    /// Served requests of the typical cluster, interferers within `window_radius`.
    pub fn typical_cluster_served(
        &self,
        rate: f64,
        window_radius: f64,
        rng: &mut SimRng,
    ) -> Result<usize> {
        let window = Window::centered(window_radius)?;
        let parents = self.cfg.parent.sample_palm_others(&window, rng);
        let origin = self.deploy(Point::ORIGIN, rng)?;
        let others = parents
            .points
            .into_iter()
            .map(|c| self.deploy(c, rng))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Deployed> = others.iter().collect();
        Ok(self.served(&origin, &refs, rate, None, rng))
    }

    /// Served requests with destination in the disc `region` of a stationary
    /// network; each cluster sees interferers within `truncation` of its center.
    pub fn served_in_region(
        &self,
        rate: f64,
        region: &Window,
        truncation: f64,
        rng: &mut SimRng,
    ) -> Result<usize> {
        let r_c = self.cfg.cluster_radius;
        let outer = Window::new(region.center, region.radius + r_c + truncation)?;
        let parents = self.cfg.parent.sample(&outer, rng);
        let clusters = parents
            .points
            .into_iter()
            .map(|c| self.deploy(c, rng))
            .collect::<Result<Vec<_>>>()?;
        let mut total = 0;
        for (i, cl) in clusters.iter().enumerate() {
            if cl.marks.center.distance(region.center) > region.radius + r_c {
                continue;
            }
            let others: Vec<&Deployed> = clusters
                .iter()
                .enumerate()
                .filter(|(j, o)| *j != i && o.marks.center.distance(cl.marks.center) <= truncation)
                .map(|(_, o)| o)
                .collect();
            total += self.served(cl, &others, rate, Some(region), rng);
        }
        Ok(total)
    }
}

/// Local metric from event-level simulation of the typical cluster.
pub fn brute_force_local_metric(
    cfg: &NetworkConfig,
    rate: f64,
    n_m_max: usize,
    replicates: usize,
    streams: &Streams,
) -> Result<MetricEstimate> {
    let sim = EventSimulator::new(cfg, n_m_max)?;
    let window = cfg.window_radius();
    let served = (0..replicates as u64)
        .into_par_iter()
        .map(|i| sim.typical_cluster_served(rate, window, &mut streams.stream("events", i)))
        .collect::<Result<Vec<usize>>>()?;
    let requests = cfg.mean_requesting_users();
    let samples: Vec<f64> = served
        .into_iter()
        .map(|n| {
            if requests > 0.0 {
                n as f64 / requests
            } else {
                0.0
            }
        })
        .collect();
    Ok(MetricEstimate::from_samples(
        &samples,
        Method::FullMonteCarlo,
    ))
}

/// Both sides of the mean served-request identity for a disc region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CampbellCheck {
    /// Mean served requests counted directly in the region.
    pub direct: MetricEstimate,
    /// Parent density times region area times the typical-cluster mean.
    pub palm: MetricEstimate,
    /// `|direct - palm| / palm`, 0 when both vanish.
    pub discrepancy: f64,
    /// Difference in combined standard errors.
    pub z_score: f64,
}

impl CampbellCheck {
    /// Two-sided p-value of the difference.
    pub fn p_value(&self) -> f64 {
        2.0 * (1.0 - normal_cdf(self.z_score.abs()))
    }
}

/// Compare served requests counted in a stationary disc of radius
/// `region_radius` with the typical-cluster prediction; interference is
/// truncated at `truncation` from each cluster center on both sides.
pub fn campbell_identity_check(
    cfg: &NetworkConfig,
    rate: f64,
    region_radius: f64,
    truncation: f64,
    n_m_max: usize,
    replicates: usize,
    streams: &Streams,
) -> Result<CampbellCheck> {
    if !(region_radius > 0.0) || !(truncation > cfg.parent.delta) {
        return Err(Error::domain(
            "region radius must be positive and truncation must exceed the clearance",
        ));
    }
    let sim = EventSimulator::new(cfg, n_m_max)?;
    let region = Window::centered(region_radius)?;
    let direct = (0..replicates as u64)
        .into_par_iter()
        .map(|i| {
            sim.served_in_region(
                rate,
                &region,
                truncation,
                &mut streams.stream("campbell-direct", i),
            )
            .map(|n| n as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let typical = (0..replicates as u64)
        .into_par_iter()
        .map(|i| {
            sim.typical_cluster_served(rate, truncation, &mut streams.stream("campbell-palm", i))
                .map(|n| n as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let direct = MetricEstimate::from_samples(&direct, Method::FullMonteCarlo);
    let palm = MetricEstimate::from_samples(&typical, Method::FullMonteCarlo)
        .scaled(cfg.parent_density() * region.area());
    let diff = direct.value - palm.value;
    let se = direct.std_error.hypot(palm.std_error);
    let discrepancy = if palm.value > 0.0 {
        diff.abs() / palm.value
    } else if direct.value == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let z_score = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(CampbellCheck {
        direct,
        palm,
        discrepancy,
        z_score,
    })
}
