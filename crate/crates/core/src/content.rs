//! Video popularity, user caches and request matching.
//!
//! Videos are indexed `0..L` internally, most popular first.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::geometry::poisson_count;

const PMF_TOLERANCE: f64 = 1e-12;

/// Zipf popularity over `library_size` videos: entry `v` is `(v+1)^-γ`, normalized.
pub fn zipf_pmf(gamma: f64, library_size: usize) -> Result<Vec<f64>> {
    if library_size == 0 {
        return Err(Error::domain("library size must be at least 1"));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::domain(format!(
            "Zipf exponent must be non-negative, got {gamma}"
        )));
    }
    let weights: Vec<f64> = (1..=library_size)
        .map(|v| (v as f64).powf(-gamma))
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Library, cache size and the two popularity laws.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentConfig {
    pub library_size: usize,
    pub cache_size: usize,
    pub zipf_gamma: f64,
    pub request_pmf: Vec<f64>,
    pub cache_pmf: Vec<f64>,
}

impl ContentConfig {
    /// Zipf requests; caches follow the request law.
    pub fn zipf(library_size: usize, cache_size: usize, gamma: f64) -> Result<Self> {
        if cache_size == 0 {
            return Err(Error::domain("cache size must be at least 1"));
        }
        let pmf = zipf_pmf(gamma, library_size)?;
        Ok(Self {
            library_size,
            cache_size,
            zipf_gamma: gamma,
            cache_pmf: pmf.clone(),
            request_pmf: pmf,
        })
    }

    /// Replace the cache law.
    pub fn with_cache_pmf(mut self, pmf: Vec<f64>) -> Result<Self> {
        check_pmf(&pmf, self.library_size)?;
        self.cache_pmf = pmf;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cache_size == 0 {
            return Err(Error::domain("cache size must be at least 1"));
        }
        check_pmf(&self.request_pmf, self.library_size)?;
        check_pmf(&self.cache_pmf, self.library_size)
    }
}

fn check_pmf(pmf: &[f64], len: usize) -> Result<()> {
    if pmf.len() != len {
        return Err(Error::domain(format!(
            "pmf has {} entries, library has {len}",
            pmf.len()
        )));
    }
    if pmf.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::domain("pmf entries must be non-negative"));
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > PMF_TOLERANCE {
        return Err(Error::domain(format!("pmf sums to {total}, not 1")));
    }
    Ok(())
}

/// Probability that a typical request finds its video in some cache of its
/// cluster, for Poisson(`lambda_u π R_c²`) caching users with independent
/// caches.
pub fn match_probability(cfg: &ContentConfig, lambda_u: f64, cluster_radius: f64) -> f64 {
    let mean_users = lambda_u * PI * cluster_radius * cluster_radius;
    let m = cfg.cache_size as i32;
    let miss: f64 = cfg
        .request_pmf
        .iter()
        .zip(&cfg.cache_pmf)
        .map(|(&pv, &pa)| {
            let hit_one_user = 1.0 - (1.0 - pa).powi(m);
            pv * (-mean_users * hit_one_user).exp()
        })
        .sum();
    (1.0 - miss).clamp(0.0, 1.0)
}

/// One user's cached videos (duplicates allowed).
pub type Cache = Vec<usize>;

/// For each request, the indices of the caches holding its video.
pub fn find_matches(requests: &[usize], caches: &[Cache]) -> Vec<Vec<usize>> {
    let Some(&top) = requests.iter().max() else {
        return Vec::new();
    };
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); top + 1];
    for (j, cache) in caches.iter().enumerate() {
        for &v in cache.iter().filter(|&&v| v <= top) {
            if holders[v].last() != Some(&j) {
                holders[v].push(j);
            }
        }
    }
    requests.iter().map(|&v| holders[v].clone()).collect()
}

/// Number of requests with at least one holder.
pub fn matched_count(matches: &[Vec<usize>]) -> usize {
    matches.iter().filter(|m| !m.is_empty()).count()
}

/// Alias tables for drawing caches and requests.
#[derive(Clone, Debug)]
pub struct ContentSampler {
    request: WeightedAliasIndex<f64>,
    cache: WeightedAliasIndex<f64>,
    request_pmf: Vec<f64>,
    cache_size: usize,
    library_size: usize,
}

impl ContentSampler {
    pub fn new(cfg: &ContentConfig) -> Result<Self> {
        cfg.validate()?;
        let table = |pmf: &[f64]| {
            WeightedAliasIndex::new(pmf.to_vec())
                .map_err(|e| Error::domain(format!("bad pmf: {e}")))
        };
        Ok(Self {
            request: table(&cfg.request_pmf)?,
            cache: table(&cfg.cache_pmf)?,
            request_pmf: cfg.request_pmf.clone(),
            cache_size: cfg.cache_size,
            library_size: cfg.library_size,
        })
    }

    pub fn draw_cache<R: Rng + ?Sized>(&self, rng: &mut R) -> Cache {
        (0..self.cache_size)
            .map(|_| self.cache.sample(rng))
            .collect()
    }

    pub fn library_size(&self) -> usize {
        self.library_size
    }

    pub fn draw_request<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.request.sample(rng)
    }

    /// Draw the matched-request count of a cluster with Poisson user counts
    /// of the given means, without materializing positions or match sets.
    ///
    /// Given the caches, requests hit the cached set independently, so the
    /// count is binomial in the request total with the request mass of the
    /// cached set.
    pub fn draw_match_count<R: Rng + ?Sized>(
        &self,
        mean_users: f64,
        mean_requests: f64,
        rng: &mut R,
    ) -> usize {
        let n_users = poisson_count(mean_users, rng);
        let mut cached = vec![false; self.library_size];
        for _ in 0..n_users * self.cache_size {
            cached[self.cache.sample(rng)] = true;
        }
        let mass: f64 = cached
            .iter()
            .zip(&self.request_pmf)
            .filter(|(c, _)| **c)
            .map(|(_, p)| *p)
            .sum::<f64>()
            .clamp(0.0, 1.0);
        let n_requests = poisson_count(mean_requests, rng);
        if n_requests == 0 || mass == 0.0 {
            return 0;
        }
        Binomial::new(n_requests as u64, mass)
            .expect("probability in [0,1]")
            .sample(rng) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;
    use crate::stats::Moments;
    use proptest::prelude::*;

    #[test]
    fn zipf_uniform_and_singleton() {
        assert_eq!(zipf_pmf(0.0, 4).unwrap(), vec![0.25; 4]);
        assert_eq!(zipf_pmf(0.8, 1).unwrap(), vec![1.0]);
        assert!(zipf_pmf(0.5, 0).is_err());
        assert!(zipf_pmf(-0.1, 3).is_err());
    }

    #[test]
    fn zipf_reference_values() {
        // 1 + 2^-0.6 + 3^-0.6 = 2.1770358
        let norm: f64 = 1.0 + 2f64.powf(-0.6) + 3f64.powf(-0.6);
        assert!((norm - 2.1770358).abs() < 1e-6);
        let p = zipf_pmf(0.6, 3).unwrap();
        for (a, b) in p.iter().zip([0.45934, 0.30305, 0.23761]) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn match_probability_edge_cases() {
        let cfg = ContentConfig::zipf(500, 6, 0.6).unwrap();
        assert_eq!(match_probability(&cfg, 0.0, 50.0), 0.0);
        let single = ContentConfig::zipf(1, 1, 0.6).unwrap();
        let expected = 1.0 - (-0.01 * PI * 400.0f64).exp();
        assert!((match_probability(&single, 0.01, 20.0) - expected).abs() < 1e-14);
    }

    #[test]
    fn find_matches_examples() {
        let caches: Vec<Cache> = vec![];
        let m = find_matches(&[0, 1], &caches);
        assert!(m.iter().all(Vec::is_empty));
        assert_eq!(matched_count(&m), 0);

        let full: Vec<Cache> = vec![vec![0, 1, 2], vec![2, 1, 0]];
        let m = find_matches(&[1, 2], &full);
        assert_eq!(m, vec![vec![0, 1], vec![0, 1]]);

        // Requests for videos 3 and 7; caches {3, 9} and {7, 3}.
        let caches: Vec<Cache> = vec![vec![3, 9], vec![7, 3]];
        let m = find_matches(&[3, 7], &caches);
        assert_eq!(m, vec![vec![0, 1], vec![1]]);
        assert_eq!(matched_count(&m), 2);
    }

    #[test]
    fn custom_cache_pmf_must_be_valid() {
        let cfg = ContentConfig::zipf(3, 2, 0.6).unwrap();
        assert!(cfg.clone().with_cache_pmf(vec![0.5, 0.5]).is_err());
        assert!(cfg.clone().with_cache_pmf(vec![0.5, 0.6, -0.1]).is_err());
        assert!(cfg.with_cache_pmf(vec![1.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn match_count_shortcut_matches_event_level_mean() {
        // E[N_m] = λ_r π R_c² p_M.
        let cfg = ContentConfig::zipf(50, 2, 0.6).unwrap();
        let sampler = ContentSampler::new(&cfg).unwrap();
        let (mu, mr) = (20.0, 10.0);
        let s = Streams::new(9);
        let m: Moments = (0..20_000)
            .map(|i| sampler.draw_match_count(mu, mr, &mut s.stream("nm", i)) as f64)
            .collect();
        let pm = match_probability(&cfg, mu / (PI * 100.0), 10.0);
        assert!(
            (m.mean() - mr * pm).abs() < 3.0 * m.std_error(),
            "{} vs {}",
            m.mean(),
            mr * pm
        );
    }

    proptest! {
        #[test]
        fn zipf_is_normalized_and_nonincreasing(gamma in 0.0f64..2.0, l in 1usize..300) {
            let p = zipf_pmf(gamma, l).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn match_probability_is_monotone(
            gamma in 0.0f64..1.5,
            l in 1usize..200,
            m in 1usize..10,
            lu in 0.0f64..0.05,
            rc in 1.0f64..80.0,
        ) {
            let cfg = ContentConfig::zipf(l, m, gamma).unwrap();
            let base = match_probability(&cfg, lu, rc);
            prop_assert!((0.0..=1.0).contains(&base));
            prop_assert!(match_probability(&cfg, lu * 1.5, rc) >= base - 1e-12);
            prop_assert!(match_probability(&cfg, lu, rc * 1.2) >= base - 1e-12);
            let bigger = ContentConfig::zipf(l, m + 1, gamma).unwrap();
            prop_assert!(match_probability(&bigger, lu, rc) >= base - 1e-12);
        }

        #[test]
        fn permuting_caches_permutes_match_indices(
            requests in proptest::collection::vec(0usize..8, 0..6),
            caches in proptest::collection::vec(proptest::collection::vec(0usize..8, 1..4), 0..6),
        ) {
            let forward = find_matches(&requests, &caches);
            let reversed: Vec<Cache> = caches.iter().rev().cloned().collect();
            let backward = find_matches(&requests, &reversed);
            let n = caches.len();
            for (f, b) in forward.iter().zip(&backward) {
                let mut mapped: Vec<usize> = b.iter().map(|j| n - 1 - j).collect();
                mapped.sort_unstable();
                prop_assert_eq!(f, &mapped);
            }
            prop_assert_eq!(matched_count(&forward), matched_count(&backward));
        }
    }
}
