//! Attenuation laws between and within clusters.
//!
//! Gains returned here are linear power ratios; the received power is
//! `tx_power() * gain`.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::stats::normal_cdf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    /// Power-law path loss with unit-mean exponential fading, same law inside
    /// and between clusters.
    RayleighPowerLaw,
    /// Indoor LOS/NLOS lognormal law inside clusters, outdoor-to-indoor
    /// lognormal law between clusters.
    WinnerLognormal,
}

/// `c1 log10(d) + c2 + c3 log10(fc / 5)` dB with a zero-mean normal
/// shadowing term of standard deviation `sigma_db`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogDistanceLaw {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub sigma_db: f64,
}

impl LogDistanceLaw {
    pub fn mean_db(&self, d: f64, carrier_ghz: f64) -> f64 {
        self.c1 * d.log10() + self.c2 + self.c3 * (carrier_ghz / 5.0).log10()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WinnerParams {
    pub los: LogDistanceLaw,
    pub nlos: LogDistanceLaw,
    /// Loss per wall, NLOS only.
    pub wall_db: f64,
    /// Distance between walls.
    pub wall_spacing: f64,
    /// Distance below which LOS is certain.
    pub los_certain_within: f64,
    pub inter: LogDistanceLaw,
    /// Loss per cluster crossed by an inter-cluster link.
    pub penetration_db: f64,
    pub tx_gain_db: f64,
    pub rx_gain_db: f64,
    pub tx_power_dbm: f64,
}

impl Default for WinnerParams {
    fn default() -> Self {
        Self {
            los: LogDistanceLaw {
                c1: 18.7,
                c2: 46.8,
                c3: 20.0,
                sigma_db: 3.0,
            },
            nlos: LogDistanceLaw {
                c1: 36.8,
                c2: 43.8,
                c3: 23.0,
                sigma_db: 6.0,
            },
            wall_db: 5.0,
            wall_spacing: 5.0,
            los_certain_within: 5.0,
            inter: LogDistanceLaw {
                c1: 40.0,
                c2: 41.0,
                c3: 22.7,
                sigma_db: 7.0,
            },
            penetration_db: 28.0,
            tx_gain_db: 12.0,
            rx_gain_db: 0.0,
            tx_power_dbm: 20.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelModel {
    pub kind: ChannelKind,
    pub alpha: f64,
    pub c_tilde: f64,
    /// Transmit power of the power-law model.
    pub power: f64,
    pub carrier_ghz: f64,
    pub winner: WinnerParams,
    /// Additive noise power at the receiver (0 = interference limited).
    pub noise: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self::rayleigh(4.0)
    }
}

impl ChannelModel {
    pub fn rayleigh(alpha: f64) -> Self {
        Self {
            kind: ChannelKind::RayleighPowerLaw,
            alpha,
            c_tilde: 1.0,
            power: 1.0,
            carrier_ghz: 2.45,
            winner: WinnerParams::default(),
            noise: 0.0,
        }
    }

    pub fn winner() -> Self {
        Self {
            kind: ChannelKind::WinnerLognormal,
            ..Self::rayleigh(4.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 2.0) {
            return Err(Error::domain(format!(
                "path-loss exponent must exceed 2, got {}",
                self.alpha
            )));
        }
        if !(self.c_tilde > 0.0) || !(self.power > 0.0) {
            return Err(Error::domain(
                "path-loss constant and power must be positive",
            ));
        }
        if !(self.carrier_ghz > 0.0) {
            return Err(Error::domain("carrier frequency must be positive"));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::domain("noise power must be non-negative"));
        }
        Ok(())
    }

    pub fn tx_power(&self) -> f64 {
        match self.kind {
            ChannelKind::RayleighPowerLaw => self.power,
            ChannelKind::WinnerLognormal => {
                let w = &self.winner;
                10f64.powf((w.tx_gain_db + w.rx_gain_db + w.tx_power_dbm) / 10.0)
            }
        }
    }

    /// Random intra-cluster gain for a link from `x` to `y`.
    pub fn intra_gain<R: Rng + ?Sized>(&self, x: Point, y: Point, rng: &mut R) -> f64 {
        match self.kind {
            ChannelKind::RayleighPowerLaw => {
                sample_rayleigh_power(rng) * self.power_law_sq((x - y).norm_sq())
            }
            ChannelKind::WinnerLognormal => intra_cluster_gain_winner(x, y, self, rng),
        }
    }

    /// Random inter-cluster gain; `penetrations` is ignored by the power-law model.
    pub fn inter_gain<R: Rng + ?Sized>(
        &self,
        x: Point,
        y: Point,
        penetrations: u32,
        rng: &mut R,
    ) -> f64 {
        match self.kind {
            ChannelKind::RayleighPowerLaw => {
                sample_rayleigh_power(rng) * self.power_law_sq((x - y).norm_sq())
            }
            ChannelKind::WinnerLognormal => {
                inter_cluster_gain_winner(x, y, penetrations, self, rng)
            }
        }
    }

    /// `P(intra gain > t)` over fading, shadowing and LOS state at distance `d`.
    pub fn intra_ccdf(&self, d: f64, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        if !t.is_finite() {
            return 0.0;
        }
        match self.kind {
            ChannelKind::RayleighPowerLaw => (-t / self.power_law(d)).exp(),
            ChannelKind::WinnerLognormal => {
                // gain > t  <=>  loss_dB < -10 log10 t
                let budget = -10.0 * t.log10();
                let w = &self.winner;
                let p_los = los_probability_with(d, w.los_certain_within);
                let los =
                    normal_cdf((budget - w.los.mean_db(d, self.carrier_ghz)) / w.los.sigma_db);
                let nlos_mean = w.nlos.mean_db(d, self.carrier_ghz)
                    + w.wall_db * wall_count(d, w.wall_spacing) as f64;
                let nlos = normal_cdf((budget - nlos_mean) / w.nlos.sigma_db);
                p_los * los + (1.0 - p_los) * nlos
            }
        }
    }

    fn power_law(&self, d: f64) -> f64 {
        self.c_tilde * d.powf(-self.alpha)
    }

    /// `power_law` from a squared distance.
    fn power_law_sq(&self, d_sq: f64) -> f64 {
        if self.alpha == 4.0 {
            self.c_tilde / (d_sq * d_sq)
        } else {
            self.c_tilde * d_sq.powf(-0.5 * self.alpha)
        }
    }
}

/// Deterministic power-law attenuation `C̃ d^-α`.
pub fn path_loss(d: f64, model: &ChannelModel) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::domain(format!(
            "path loss needs a positive distance, got {d}"
        )));
    }
    Ok(model.power_law(d))
}

/// Unit-mean exponential power gain.
pub fn sample_rayleigh_power<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

/// Indoor line-of-sight probability at distance `d`.
pub fn los_probability(d: f64) -> f64 {
    los_probability_with(d, WinnerParams::default().los_certain_within)
}

fn los_probability_with(d: f64, certain_within: f64) -> f64 {
    if d <= certain_within {
        return 1.0;
    }
    let inner = 1.24 - 0.61 * d.log10();
    let p = 1.0 - 0.9 * (1.0 - inner.powi(3)).cbrt();
    p.clamp(0.0, 1.0)
}

/// Walls between two NLOS users `d` apart.
pub fn wall_count(d: f64, spacing: f64) -> u32 {
    1 + (d / spacing - 1.0).max(0.0).floor() as u32
}

/// Intra-cluster loss in dB for a given LOS state and shadowing draw.
pub fn intra_loss_db(d: f64, los: bool, shadowing_db: f64, model: &ChannelModel) -> f64 {
    let w = &model.winner;
    if los {
        w.los.mean_db(d, model.carrier_ghz) + shadowing_db
    } else {
        w.nlos.mean_db(d, model.carrier_ghz)
            + w.wall_db * wall_count(d, w.wall_spacing) as f64
            + shadowing_db
    }
}

/// Inter-cluster loss in dB.
pub fn inter_loss_db(d: f64, penetrations: u32, shadowing_db: f64, model: &ChannelModel) -> f64 {
    let w = &model.winner;
    w.inter.mean_db(d, model.carrier_ghz) + w.penetration_db * penetrations as f64 + shadowing_db
}

pub fn intra_cluster_gain_winner<R: Rng + ?Sized>(
    x: Point,
    y: Point,
    model: &ChannelModel,
    rng: &mut R,
) -> f64 {
    let d = x.distance(y);
    let w = &model.winner;
    let los = rng.random::<f64>() < los_probability_with(d, w.los_certain_within);
    let sigma = if los { w.los.sigma_db } else { w.nlos.sigma_db };
    let z: f64 = StandardNormal.sample(rng);
    db_to_gain(intra_loss_db(d, los, sigma * z, model))
}

pub fn inter_cluster_gain_winner<R: Rng + ?Sized>(
    x: Point,
    y: Point,
    penetrations: u32,
    model: &ChannelModel,
    rng: &mut R,
) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    let loss = inter_loss_db(
        x.distance(y),
        penetrations,
        model.winner.inter.sigma_db * z,
        model,
    );
    db_to_gain(loss)
}

/// Clusters crossed between two grid clusters: the Chebyshev distance of
/// their centers in units of the grid spacing, at least one.
pub fn grid_penetrations(a: Point, b: Point, spacing: f64) -> u32 {
    ((a - b).norm_inf() / spacing).round().max(1.0) as u32
}

pub fn db_to_gain(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;
    use crate::stats::Moments;
    use proptest::prelude::*;

    #[test]
    fn power_law_examples() {
        let m = ChannelModel::rayleigh(4.0);
        assert_eq!(path_loss(1.0, &m).unwrap(), 1.0);
        assert!((path_loss(10.0, &m).unwrap() - 1e-4).abs() < 1e-18);
        let ratio = path_loss(3.0, &m).unwrap() / path_loss(6.0, &m).unwrap();
        assert!((ratio - 16.0).abs() < 1e-12);
        assert!(path_loss(0.0, &m).is_err());
    }

    #[test]
    fn exponential_fading_moments() {
        let mut rng = Streams::new(1).stream("fade", 0);
        let n = 1_000_000;
        let mut m = Moments::default();
        let mut tail = 0usize;
        for _ in 0..n {
            let g = sample_rayleigh_power(&mut rng);
            assert!(g >= 0.0);
            tail += (g > 2.0) as usize;
            m.push(g);
        }
        assert!((m.mean() - 1.0).abs() < 0.003);
        let p = tail as f64 / n as f64;
        let se = ((-2.0f64).exp() * (1.0 - (-2.0f64).exp()) / n as f64).sqrt();
        assert!((p - 0.1353).abs() < 3.0 * se + 1e-4);
    }

    #[test]
    fn los_probability_examples() {
        assert_eq!(los_probability(3.0), 1.0);
        assert_eq!(los_probability(5.0), 1.0);
        // 1.24 - 0.61 = 0.63; 1 - 0.63³ = 0.749953; cbrt = 0.908541.
        let inner: f64 = 1.0 - 0.63f64.powi(3);
        assert!((inner - 0.749953).abs() < 1e-6);
        assert!((inner.cbrt() - 0.908541).abs() < 1e-6);
        assert!((los_probability(10.0) - 0.182313).abs() < 1e-6);
        assert!((los_probability(100.0) - 0.10000).abs() < 1e-5);
    }

    #[test]
    fn winner_loss_examples() {
        let m = ChannelModel::winner();
        // 18.7 + 46.8 + 20 log10(0.49) = 59.3039
        let los = intra_loss_db(10.0, true, 0.0, &m);
        assert!((los - 59.3039).abs() < 1e-4, "{los}");
        assert_eq!(wall_count(12.0, 5.0), 2);
        assert_eq!(wall_count(4.0, 5.0), 1);
        // 80 + 41 + 22.7 log10(0.49) = 113.9675
        let inter = inter_loss_db(100.0, 1, 0.0, &m) - 28.0;
        assert!((inter - 113.9675).abs() < 1e-4, "{inter}");
        let extra = inter_loss_db(100.0, 3, 0.0, &m) - inter_loss_db(100.0, 2, 0.0, &m);
        assert!((extra - 28.0).abs() < 1e-12);
        // 10^{(12 + 0 + 20)/10}
        assert!((m.tx_power() - 1584.893).abs() < 1e-3);
    }

    #[test]
    fn shadowing_is_zero_mean_in_db() {
        let m = ChannelModel::winner();
        let mut rng = Streams::new(2).stream("shadow", 0);
        let (a, b) = (Point::ORIGIN, Point::new(100.0, 0.0));
        let base = inter_loss_db(100.0, 1, 0.0, &m);
        let n = 1_000_000;
        let s: Moments = (0..n)
            .map(|_| -10.0 * inter_cluster_gain_winner(a, b, 1, &m, &mut rng).log10() - base)
            .collect();
        assert!(s.mean().abs() < 3.0 * 7.0 / (n as f64).sqrt());
        assert!((s.variance().sqrt() - 7.0).abs() < 0.05);
    }

    #[test]
    fn winner_ccdf_matches_sampling() {
        let m = ChannelModel::winner();
        let s = Streams::new(3);
        let (x, y) = (Point::ORIGIN, Point::new(12.0, 0.0));
        let t = db_to_gain(75.0);
        let n = 200_000;
        let mut rng = s.stream("ccdf", 0);
        let hits = (0..n).filter(|_| m.intra_gain(x, y, &mut rng) > t).count() as f64 / n as f64;
        let exact = m.intra_ccdf(12.0, t);
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((hits - exact).abs() < 4.0 * se, "{hits} vs {exact}");
    }

    #[test]
    fn grid_penetration_rule() {
        let o = Point::ORIGIN;
        assert_eq!(grid_penetrations(o, Point::new(50.0, 0.0), 50.0), 1);
        assert_eq!(grid_penetrations(o, Point::new(50.0, 50.0), 50.0), 1);
        assert_eq!(grid_penetrations(o, Point::new(150.0, -50.0), 50.0), 3);
        assert_eq!(grid_penetrations(o, Point::new(10.0, 0.0), 50.0), 1);
    }

    #[test]
    fn rayleigh_intra_equals_inter_law() {
        let m = ChannelModel::rayleigh(4.0);
        let s = Streams::new(4);
        let (x, y) = (Point::new(1.0, 2.0), Point::new(7.0, -3.0));
        let a = m.intra_gain(x, y, &mut s.stream("g", 0));
        let b = m.inter_gain(x, y, 5, &mut s.stream("g", 0));
        assert_eq!(a, b);
    }

    #[test]
    fn validation() {
        assert!(ChannelModel::rayleigh(2.0).validate().is_err());
        assert!(ChannelModel::rayleigh(4.0).validate().is_ok());
        let mut m = ChannelModel::rayleigh(3.0);
        m.power = 0.0;
        assert!(m.validate().is_err());
    }

    proptest! {
        #[test]
        fn gains_are_positive(seed in any::<u64>(), dx in 0.1f64..500.0, dy in -500.0f64..500.0) {
            let mut rng = Streams::new(seed).stream("pos", 0);
            let (x, y) = (Point::ORIGIN, Point::new(dx, dy));
            for m in [ChannelModel::rayleigh(4.0), ChannelModel::winner()] {
                prop_assert!(m.intra_gain(x, y, &mut rng) > 0.0);
                prop_assert!(m.inter_gain(x, y, 1, &mut rng) > 0.0);
            }
        }

        #[test]
        fn los_probability_nonincreasing(d in 5.0f64..100.0, step in 0.0f64..50.0) {
            prop_assert!(los_probability(d + step) <= los_probability(d) + 1e-12);
            prop_assert!((0.0..=1.0).contains(&los_probability(d)));
        }

        #[test]
        fn winner_replay_is_bitwise(seed in any::<u64>()) {
            let m = ChannelModel::winner();
            let (x, y) = (Point::ORIGIN, Point::new(13.0, 4.0));
            let a = m.intra_gain(x, y, &mut Streams::new(seed).stream("r", 1));
            let b = m.intra_gain(x, y, &mut Streams::new(seed).stream("r", 1));
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
