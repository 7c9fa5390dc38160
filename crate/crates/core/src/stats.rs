//! Monte Carlo estimates and their standard errors.

use serde::Serialize;

/// How an estimate was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    LtRayleigh,
    FullMonteCarlo,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ClosedForm => "closed_form",
            Method::LtRayleigh => "lt_rayleigh",
            Method::FullMonteCarlo => "full_monte_carlo",
        }
    }
}

/// A value with its Monte Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricEstimate {
    pub value: f64,
    pub std_error: f64,
    pub replicates: usize,
    pub method: Method,
}

/// Minimum number of batches used for batch-means standard errors.
pub const MIN_BATCHES: usize = 30;

impl MetricEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
            replicates: 0,
            method: Method::ClosedForm,
        }
    }

    /// Mean and batch-means standard error of per-replicate values.
    pub fn from_samples(samples: &[f64], method: Method) -> Self {
        let (value, std_error) = batch_means(samples);
        Self {
            value,
            std_error,
            replicates: samples.len(),
            method,
        }
    }

    /// Multiply value and error by a known constant.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            value: self.value * factor,
            std_error: self.std_error * factor.abs(),
            ..*self
        }
    }

    /// Lower end of a `k`-standard-error band.
    pub fn lower(&self, k: f64) -> f64 {
        self.value - k * self.std_error
    }

    pub fn upper(&self, k: f64) -> f64 {
        self.value + k * self.std_error
    }
}

/// Streaming first and second moments; merging is associative.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(self, other: Moments) -> Moments {
        Moments {
            count: self.count + other.count,
            sum: self.sum + other.sum,
            sum_sq: self.sum_sq + other.sum_sq,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Sample mean and batch-means standard error.
///
/// With fewer than `2 * MIN_BATCHES` samples this falls back to the plain
/// i.i.d. standard error.
pub fn batch_means(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 * MIN_BATCHES {
        let m: Moments = samples.iter().copied().collect();
        return (mean, m.std_error());
    }
    let batches = MIN_BATCHES.max(((n as f64).sqrt() as usize).min(n / 2));
    let size = n / batches;
    let used = size * batches;
    let batch_means: Moments = samples[..used]
        .chunks(size)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let se = (batch_means.variance() / batches as f64).sqrt();
    (mean, se)
}

/// Mean and standard error of the paired difference `a - b`.
pub fn paired_difference(a: &[f64], b: &[f64]) -> (f64, f64) {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    batch_means(&diff)
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Upper-tail probability of a chi-square variable with `dof` degrees of
/// freedom, via the Wilson–Hilferty normal approximation.
pub fn chi_square_sf(stat: f64, dof: usize) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    if dof == 1 {
        return libm::erfc((stat / 2.0).sqrt());
    }
    let k = dof as f64;
    let z = ((stat / k).cbrt() - (1.0 - 2.0 / (9.0 * k))) / (2.0 / (9.0 * k)).sqrt();
    1.0 - normal_cdf(z)
}
