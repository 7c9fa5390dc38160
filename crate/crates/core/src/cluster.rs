//! Cluster marks and the slot-allocation strategy.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use crate::content::{find_matches, matched_count, Cache, ContentSampler};
use crate::error::{Error, Result};
use crate::geometry::{poisson_count, uniform_in_disc, Point};
use crate::network::NetworkConfig;
use crate::rng::Streams;
use crate::stats::{Method, MetricEstimate};

/// Target for `P(N_m > n_m_max)` when the cap is estimated.
pub const N_M_MAX_TAIL: f64 = 1e-3;
/// Cluster draws used to estimate the cap.
pub const N_M_MAX_REPLICATES: usize = 10_000;

/// One cluster's realized users, caches and requests.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterMarks {
    pub center: Point,
    /// Caching-user positions relative to the center.
    pub caching: Vec<Point>,
    /// Requesting-user positions relative to the center.
    pub requesting: Vec<Point>,
    pub caches: Vec<Cache>,
    pub requests: Vec<usize>,
    /// Holders of each request's video.
    pub matches: Vec<Vec<usize>>,
    pub n_m: usize,
}

impl ClusterMarks {
    pub fn n_caching(&self) -> usize {
        self.caching.len()
    }

    pub fn n_requesting(&self) -> usize {
        self.requesting.len()
    }

    /// Requests with at least one holder.
    pub fn matched_requests(&self) -> Vec<usize> {
        self.matches
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Draws clusters for a fixed configuration.
#[derive(Clone, Debug)]
pub struct ClusterSampler {
    content: ContentSampler,
    radius: f64,
    mean_users: f64,
    mean_requests: f64,
}

impl ClusterSampler {
    pub fn new(cfg: &NetworkConfig) -> Result<Self> {
        Ok(Self {
            content: ContentSampler::new(&cfg.content)?,
            radius: cfg.cluster_radius,
            mean_users: cfg.mean_caching_users(),
            mean_requests: cfg.mean_requesting_users(),
        })
    }

    pub fn content(&self) -> &ContentSampler {
        &self.content
    }

    pub fn sample<R: Rng + ?Sized>(&self, center: Point, rng: &mut R) -> ClusterMarks {
        let n_u = poisson_count(self.mean_users, rng);
        let n_r = poisson_count(self.mean_requests, rng);
        let caching: Vec<Point> = (0..n_u)
            .map(|_| uniform_in_disc(Point::ORIGIN, self.radius, rng))
            .collect();
        let requesting: Vec<Point> = (0..n_r)
            .map(|_| uniform_in_disc(Point::ORIGIN, self.radius, rng))
            .collect();
        let caches: Vec<Cache> = (0..n_u).map(|_| self.content.draw_cache(rng)).collect();
        let requests: Vec<usize> = (0..n_r).map(|_| self.content.draw_request(rng)).collect();
        let matches = find_matches(&requests, &caches);
        let n_m = matched_count(&matches);
        ClusterMarks {
            center,
            caching,
            requesting,
            caches,
            requests,
            matches,
            n_m,
        }
    }

    /// Matched-request count from explicit caches and requests, skipping
    /// positions and holder lists.
    pub fn sample_matches_explicit<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let n_u = poisson_count(self.mean_users, rng);
        let n_r = poisson_count(self.mean_requests, rng);
        let mut cached = vec![false; self.content.library_size()];
        for _ in 0..n_u {
            for v in self.content.draw_cache(rng) {
                cached[v] = true;
            }
        }
        (0..n_r)
            .filter(|_| cached[self.content.draw_request(rng)])
            .count()
    }

    /// Matched-request count only.
    pub fn sample_match_count<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.content
            .draw_match_count(self.mean_users, self.mean_requests, rng)
    }
}

pub fn sample_cluster<R: Rng + ?Sized>(
    cfg: &NetworkConfig,
    center: Point,
    rng: &mut R,
) -> Result<ClusterMarks> {
    Ok(ClusterSampler::new(cfg)?.sample(center, rng))
}

/// Largest power of two not above `n` (`n >= 1`).
fn floor_pow2(n: usize) -> usize {
    1 << (usize::BITS - 1 - n.leading_zeros())
}

/// Number of slots for `n_m` matched requests: round down to a power of two
/// when the overshoot above it is a fraction below `eps` of the gap, up otherwise.
pub fn slot_count(n_m: usize, eps: f64) -> Result<usize> {
    if n_m == 0 {
        return Err(Error::domain(
            "slot count is undefined without matched requests",
        ));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::domain(format!(
            "epsilon must lie in [0, 1], got {eps}"
        )));
    }
    let low = floor_pow2(n_m);
    if low == n_m {
        return Ok(n_m);
    }
    let high = 2 * low;
    let overshoot = (n_m - low) as f64 / (high - low) as f64;
    Ok(if overshoot < eps { low } else { high })
}

/// Slot count and number of served slots for a cluster with `n_m` matches,
/// after applying the cap. `(0, 0)` for an idle cluster.
pub fn slots_and_served(n_m: usize, eps: f64, cap: usize) -> Result<(usize, usize)> {
    let n = n_m.min(cap);
    if n == 0 {
        return Ok((0, 0));
    }
    let w = slot_count(n, eps)?;
    Ok((w, n.min(w)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transmission {
    /// Index of the caching user that transmits.
    pub transmitter: usize,
    /// Index of the request being served.
    pub request: usize,
}

/// Outcome of scheduling one cluster.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlotPlan {
    /// One entry per slot; `None` for an empty slot.
    pub slots: Vec<Option<Transmission>>,
    /// Matched requests left unserved.
    pub dropped: Vec<usize>,
}

impl SlotPlan {
    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn occupied(&self) -> impl Iterator<Item = (usize, Transmission)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(k, s)| s.map(|t| (k, t)))
    }

    pub fn served(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }
}

pub fn schedule<R: Rng + ?Sized>(
    marks: &ClusterMarks,
    eps: f64,
    n_m_max: usize,
    rng: &mut R,
) -> Result<SlotPlan> {
    let mut pending = marks.matched_requests();
    if pending.is_empty() {
        return Ok(SlotPlan::default());
    }
    let mut dropped = Vec::new();
    pending.shuffle(rng);
    if pending.len() > n_m_max {
        dropped.extend(pending.drain(n_m_max..));
    }
    let w = slot_count(pending.len(), eps)?;
    if pending.len() > w {
        dropped.extend(pending.drain(w..));
    }
    // `pending` is already a uniform random order of the survivors.
    let mut slots = vec![None; w];
    let chosen = index::sample(rng, w, pending.len());
    for (slot, request) in chosen.iter().zip(pending) {
        let holders = &marks.matches[request];
        let transmitter = holders[rng.random_range(0..holders.len())];
        slots[slot] = Some(Transmission {
            transmitter,
            request,
        });
    }
    dropped.sort_unstable();
    Ok(SlotPlan { slots, dropped })
}

/// Smallest power of two `n` whose empirical exceedance `P(N_m > n)` is
/// below `tail`, from `replicates` cluster draws.
pub fn estimate_n_m_max(
    cfg: &NetworkConfig,
    replicates: usize,
    tail: f64,
    streams: &Streams,
) -> Result<usize> {
    let sampler = ClusterSampler::new(cfg)?;
    let mut counts: Vec<usize> = (0..replicates as u64)
        .map(|i| sampler.sample_match_count(&mut streams.stream("n-m-max", i)))
        .collect();
    counts.sort_unstable();
    let allowed = (tail * replicates as f64).ceil() as usize;
    let mut cap = 1usize;
    loop {
        let above = counts.len() - counts.partition_point(|&c| c <= cap);
        if above < allowed.max(1) {
            return Ok(cap);
        }
        cap *= 2;
    }
}

/// Event-level estimate of the match probability: matched requests of
/// clusters with explicit caches and requests over the mean request count.
pub fn empirical_match_probability(
    cfg: &NetworkConfig,
    replicates: usize,
    streams: &Streams,
) -> Result<MetricEstimate> {
    let sampler = ClusterSampler::new(cfg)?;
    let mean = cfg.mean_requesting_users();
    let ratios: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|i| {
            let n_m = sampler.sample_matches_explicit(&mut streams.stream("match-check", i));
            if mean > 0.0 {
                n_m as f64 / mean
            } else {
                0.0
            }
        })
        .collect();
    Ok(MetricEstimate::from_samples(
        &ratios,
        Method::FullMonteCarlo,
    ))
}

/// The configured cap, or the estimated default.
pub fn resolve_n_m_max(cfg: &NetworkConfig, streams: &Streams) -> Result<usize> {
    match cfg.n_m_max {
        Some(n) => Ok(n),
        None => estimate_n_m_max(cfg, N_M_MAX_REPLICATES, N_M_MAX_TAIL, streams),
    }
}
