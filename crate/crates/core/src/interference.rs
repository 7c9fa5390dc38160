//! Interference seen inside the typical cluster, the time-averaged rate
//! bound, and the Laplace-transform approximation for Matérn parents.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rayon::prelude::*;

use crate::channel::{grid_penetrations, ChannelKind};
use crate::cluster::{slots_and_served, ClusterSampler};
use crate::error::{Error, Result};
use crate::geometry::{uniform_in_disc, ParentKind, Point, Window};
use crate::network::NetworkConfig;
use crate::rng::Streams;
use crate::stats::{Method, MetricEstimate};

/// How transmitters of a cluster with more slots than the observer share
/// one observer slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterferenceMode {
    /// Every sub-slot is used by a different transmitter.
    WorstCaseB1,
    /// Sub-slots are allocated to transmitters uniformly at random.
    RandomB,
}

/// Distribution of the slot count of a cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotCountLaw {
    /// Probability that a cluster has no matched request.
    pub empty: f64,
    /// `probs[i] = P(W = 2^i | N_m >= 1)`.
    pub probs: Vec<f64>,
}

impl SlotCountLaw {
    pub fn point_mass(slots: usize) -> Result<Self> {
        if !slots.is_power_of_two() {
            return Err(Error::domain(format!(
                "slot count {slots} is not a power of two"
            )));
        }
        let i = slots.trailing_zeros() as usize;
        let mut probs = vec![0.0; i + 1];
        probs[i] = 1.0;
        Ok(Self { empty: 0.0, probs })
    }

    /// Build from counts of each slot exponent plus the number of idle draws.
    pub fn from_counts(exponent_counts: &[usize], empty_count: usize) -> Result<Self> {
        let busy: usize = exponent_counts.iter().sum();
        let total = busy + empty_count;
        if total == 0 {
            return Err(Error::domain("slot-count law needs at least one draw"));
        }
        let probs = if busy == 0 {
            vec![1.0]
        } else {
            exponent_counts
                .iter()
                .map(|&c| c as f64 / busy as f64)
                .collect()
        };
        Ok(Self {
            empty: empty_count as f64 / total as f64,
            probs,
        })
    }

    /// Largest slot count with positive probability.
    pub fn max_slots(&self) -> usize {
        let i = self.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
        1 << i
    }

    /// Unconditional `P(W = 2^i)` paired with `2^i`, skipping null entries.
    pub fn busy_terms(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let busy = 1.0 - self.empty;
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(move |(i, p)| (1usize << i, p * busy))
    }

    /// Draw a slot count; 0 for an idle cluster.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if rng.random::<f64>() < self.empty {
            return 0;
        }
        let mut u: f64 = rng.random();
        for (i, p) in self.probs.iter().enumerate() {
            if u < *p {
                return 1 << i;
            }
            u -= p;
        }
        self.max_slots()
    }
}

/// Empirical slot-count law from `replicates` cluster draws with the given cap.
pub fn estimate_slot_count_law(
    cfg: &NetworkConfig,
    n_m_max: usize,
    replicates: usize,
    streams: &Streams,
) -> Result<SlotCountLaw> {
    if replicates == 0 {
        return Err(Error::domain("at least one replicate is required"));
    }
    let sampler = ClusterSampler::new(cfg)?;
    let draws: Vec<usize> = (0..replicates as u64)
        .into_par_iter()
        .map(|i| sampler.sample_match_count(&mut streams.stream("slot-law", i)))
        .collect();
    let mut counts = vec![0usize; (usize::BITS - n_m_max.leading_zeros()) as usize + 1];
    let mut empty = 0usize;
    for n_m in draws {
        let (w, _) = slots_and_served(n_m, cfg.epsilon, n_m_max)?;
        if w == 0 {
            empty += 1;
        } else {
            counts[w.trailing_zeros() as usize] += 1;
        }
    }
    while counts.len() > 1 && *counts.last().unwrap() == 0 {
        counts.pop();
    }
    SlotCountLaw::from_counts(&counts, empty)
}

/// An interfering cluster and its slot count (0 = idle).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterfererCluster {
    pub center: Point,
    pub slots: usize,
}

/// Clusters around the typical cluster at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct InterferenceField {
    pub clusters: Vec<InterfererCluster>,
    pub cluster_radius: f64,
    /// Grid spacing when parents form a grid (used for wall penetrations).
    pub grid_spacing: Option<f64>,
}

impl InterferenceField {
    pub fn empty(cluster_radius: f64) -> Self {
        Self {
            clusters: Vec::new(),
            cluster_radius,
            grid_spacing: None,
        }
    }

    fn penetrations(&self, center: Point) -> u32 {
        match self.grid_spacing {
            Some(spacing) => grid_penetrations(Point::ORIGIN, center, spacing),
            None => 1,
        }
    }
}

/// Parents seen from the typical cluster, with slot counts drawn from `law`.
pub fn sample_field<R: Rng + ?Sized>(
    cfg: &NetworkConfig,
    law: &SlotCountLaw,
    rng: &mut R,
) -> Result<InterferenceField> {
    let window = Window::centered(cfg.window_radius())?;
    let parents = cfg.parent.sample_palm_others(&window, rng);
    let clusters = parents
        .points
        .into_iter()
        .map(|center| InterfererCluster {
            center,
            slots: law.sample(rng),
        })
        .collect();
    Ok(InterferenceField {
        clusters,
        cluster_radius: cfg.cluster_radius,
        grid_spacing: (cfg.parent.kind == ParentKind::TranslatedGrid).then_some(cfg.parent.delta),
    })
}

/// Time-averaged interference power at `d` during one slot of an observer
/// running `n1` slots.
pub fn interference_at<R: Rng + ?Sized>(
    d: Point,
    n1: usize,
    field: &InterferenceField,
    channel: &crate::channel::ChannelModel,
    mode: InterferenceMode,
    rng: &mut R,
) -> f64 {
    let n1 = n1.max(1);
    let power = channel.tx_power();
    let mut total = 0.0;
    let mut shares: Vec<u32> = Vec::new();
    for cl in &field.clusters {
        if cl.slots == 0 {
            continue;
        }
        let active = if cl.slots <= n1 { 1 } else { cl.slots / n1 };
        let pen = field.penetrations(cl.center);
        let mut cluster_sum = 0.0;
        match mode {
            InterferenceMode::WorstCaseB1 => {
                for _ in 0..active {
                    let tx = uniform_in_disc(cl.center, field.cluster_radius, rng);
                    cluster_sum += channel.inter_gain(tx, d, pen, rng);
                }
            }
            InterferenceMode::RandomB => {
                shares.clear();
                shares.resize(active, 0);
                for _ in 0..active {
                    shares[rng.random_range(0..active)] += 1;
                }
                for &b in &shares {
                    if b == 0 {
                        continue;
                    }
                    let tx = uniform_in_disc(cl.center, field.cluster_radius, rng);
                    cluster_sum += b as f64 * channel.inter_gain(tx, d, pen, rng);
                }
            }
        }
        total += power * cluster_sum / active as f64;
    }
    total
}

/// Rate of a link with constant interference equal to the time average,
/// sharing the block among `n1` slots. `+inf` without interference.
pub fn achievable_rate_bound(signal: f64, interference: f64, n1: usize) -> f64 {
    if interference <= 0.0 {
        return f64::INFINITY;
    }
    (signal / interference).ln_1p() / std::f64::consts::LN_2 / n1.max(1) as f64
}

/// Exact time-sharing rate over the interference phases of one slot.
pub fn exact_slot_rate_oracle(signal: f64, phases: &[f64], n1: usize) -> f64 {
    if phases.is_empty() || phases.iter().any(|&i| i <= 0.0) {
        return f64::INFINITY;
    }
    let total: f64 = phases
        .iter()
        .map(|&i| (signal / i).ln_1p() / std::f64::consts::LN_2)
        .sum();
    total / (n1.max(1) * phases.len()) as f64
}

// ---------------------------------------------------------------------------
// Laplace transform approximation

const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

const QUAD_TOLERANCE: f64 = 1e-6;
const QUAD_MAX_LEVELS: usize = 7;
const BASE_ANGLES: usize = 64;
const BASE_PANEL_WIDTH: f64 = 0.5;

/// `1 - (1 + t/c)^-c`
fn shot_kernel(t: f64, c: f64) -> f64 {
    -(-c * (t / c).ln_1p()).exp_m1()
}

fn dist_pow(dist_sq: f64, alpha: f64) -> f64 {
    if alpha == 4.0 {
        1.0 / (dist_sq * dist_sq)
    } else {
        dist_sq.powf(-alpha / 2.0)
    }
}

/// Integral over the far tail `|u| > r_max`, expanded to second order in `s`.
fn tail_integral(s: f64, a: f64, c: f64, alpha: f64, r_max: f64) -> f64 {
    let second = (c + 1.0) / (2.0 * c);
    if alpha == 4.0 {
        let v = r_max * r_max - a * a;
        let first = PI * (1.0 / v + a * a / (v * v));
        s * first - second * s * s * PI / (3.0 * r_max.powi(6))
    } else {
        let first = 2.0 * PI * r_max.powf(2.0 - alpha) / (alpha - 2.0);
        let sec = 2.0 * PI * r_max.powf(2.0 - 2.0 * alpha) / (2.0 * alpha - 2.0);
        s * first - second * s * s * sec
    }
}

fn lt_integral_at_level(s: f64, a: f64, c: f64, alpha: f64, level: usize) -> f64 {
    let scale = 1usize << level;
    let r_max = 40f64.max(10.0 * s.powf(1.0 / alpha));
    let t_max = r_max.ln();
    let panels = ((t_max / BASE_PANEL_WIDTH).ceil() as usize).max(4) * scale;
    let angles = if a == 0.0 { 1 } else { BASE_ANGLES * scale };
    let width = t_max / panels as f64;
    let mut radial = 0.0;
    for p in 0..panels {
        let lo = p as f64 * width;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            let t = lo + 0.5 * width * (x + 1.0);
            let r = t.exp();
            let mut ang = 0.0;
            for k in 0..angles {
                let phi = (k as f64 + 0.5) * PI / angles as f64;
                let dist_sq = r * r + a * a - 2.0 * r * a * phi.cos();
                ang += shot_kernel(s * dist_pow(dist_sq, alpha), c);
            }
            // dx = r² dt dφ over the full circle
            radial += 0.5 * width * w * r * r * 2.0 * PI * ang / angles as f64;
        }
    }
    radial + tail_integral(s, a, c, alpha, r_max)
}

/// `∫_{|u|>1} [1 - (1 + s |u - a|^-α / c)^-c] du` for a point at distance
/// `a < 1` from the origin, in units of the clearance.
pub fn scaled_lt_integral(s: f64, a: f64, c: f64, alpha: f64) -> Result<f64> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::domain(format!(
            "scaled LT argument must be finite and non-negative, got {s}"
        )));
    }
    if !(0.0..1.0).contains(&a) {
        return Err(Error::domain(format!(
            "observation point must lie inside the clearance disc, got {a}"
        )));
    }
    if !(alpha > 2.0) || !(c >= 1.0) {
        return Err(Error::domain("need alpha > 2 and c >= 1"));
    }
    if s == 0.0 {
        return Ok(0.0);
    }
    let mut prev = lt_integral_at_level(s, a, c, alpha, 0);
    for level in 1..=QUAD_MAX_LEVELS {
        let next = lt_integral_at_level(s, a, c, alpha, level);
        if (next - prev).abs() <= QUAD_TOLERANCE * next.abs() {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::Numerical(format!(
        "LT quadrature did not converge (s = {s}, a = {a}, c = {c})"
    )))
}

/// Transmitters per active interfering cluster when the observer runs `n1`
/// slots and the interferer `w`.
pub fn active_transmitters(w: usize, n1: usize) -> usize {
    w.div_ceil(n1.max(1)).max(1)
}

fn check_lt_inputs(cfg: &NetworkConfig, eta: f64, d: Point) -> Result<()> {
    if cfg.channel.kind != ChannelKind::RayleighPowerLaw {
        return Err(Error::domain(
            "the LT approximation needs the power-law Rayleigh channel",
        ));
    }
    if cfg.parent.kind != ParentKind::MaternIi {
        return Err(Error::domain(
            "the LT approximation is built for Matérn parents",
        ));
    }
    if !(eta >= 0.0) {
        return Err(Error::domain(format!(
            "LT argument must be non-negative, got {eta}"
        )));
    }
    if d.norm() >= cfg.parent.delta {
        return Err(Error::domain(
            "observation point must lie within the clearance of the origin",
        ));
    }
    Ok(())
}

/// Approximate LT of the interference at `d` for an observer with `n1` slots:
/// interferers form a Poisson field outside the clearance disc and transmit
/// from their cluster centers.
pub fn lt_interference_approx(
    eta: f64,
    d: Point,
    n1: usize,
    cfg: &NetworkConfig,
    law: &SlotCountLaw,
) -> Result<f64> {
    check_lt_inputs(cfg, eta, d)?;
    let delta = cfg.parent.delta;
    let ch = &cfg.channel;
    let s = eta * ch.tx_power() * ch.c_tilde * delta.powf(-ch.alpha);
    let a = d.norm() / delta;
    let mut exponent = 0.0;
    for (w, q) in law.busy_terms() {
        let c = active_transmitters(w, n1) as f64;
        exponent += q * scaled_lt_integral(s, a, c, ch.alpha)?;
    }
    Ok((-cfg.parent_density() * delta * delta * exponent).exp())
}

/// Precomputed `ln ∫ ...` of [`scaled_lt_integral`] over a grid in
/// `(ln s, a)`, bicubic interpolation in between.
#[derive(Debug)]
pub struct LtTable {
    alpha: f64,
    c: f64,
    ln_s: Vec<f64>,
    a: Vec<f64>,
    /// Row-major over `a`, then `ln s`.
    ln_values: Vec<f64>,
}

pub const TABLE_LN_S_MIN: f64 = -20.0;
pub const TABLE_LN_S_MAX: f64 = 12.0;
const TABLE_LN_S_STEP: f64 = 0.25;
pub const TABLE_A_MAX: f64 = 0.5;
const TABLE_A_POINTS: usize = 11;

fn table_cache() -> &'static Mutex<HashMap<(u64, u64), Arc<LtTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<(u64, u64), Arc<LtTable>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl LtTable {
    pub fn build(alpha: f64, c: f64) -> Result<Self> {
        let n_s = ((TABLE_LN_S_MAX - TABLE_LN_S_MIN) / TABLE_LN_S_STEP).round() as usize + 1;
        let ln_s: Vec<f64> = (0..n_s)
            .map(|i| TABLE_LN_S_MIN + i as f64 * TABLE_LN_S_STEP)
            .collect();
        let a: Vec<f64> = (0..TABLE_A_POINTS)
            .map(|j| TABLE_A_MAX * j as f64 / (TABLE_A_POINTS - 1) as f64)
            .collect();
        let ln_values = (0..a.len() * n_s)
            .into_par_iter()
            .map(|k| {
                let (j, i) = (k / n_s, k % n_s);
                scaled_lt_integral(ln_s[i].exp(), a[j], c, alpha).map(f64::ln)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self {
            alpha,
            c,
            ln_s,
            a,
            ln_values,
        })
    }

    /// Shared table for `(alpha, c)`, built on first use.
    pub fn shared(alpha: f64, c: usize) -> Result<Arc<LtTable>> {
        let key = (alpha.to_bits(), c as u64);
        if let Some(t) = table_cache().lock().unwrap().get(&key) {
            return Ok(t.clone());
        }
        let table = Arc::new(Self::build(alpha, c as f64)?);
        Ok(table_cache()
            .lock()
            .unwrap()
            .entry(key)
            .or_insert(table)
            .clone())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn transmitters(&self) -> f64 {
        self.c
    }

    fn node(&self, j: usize, i: usize) -> f64 {
        self.ln_values[j * self.ln_s.len() + i]
    }

    /// Interpolated value of the scaled integral.
    pub fn eval(&self, s: f64, a: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let ls = s.ln();
        let a = a.clamp(0.0, TABLE_A_MAX);
        if ls < TABLE_LN_S_MIN {
            return (self.interp(TABLE_LN_S_MIN, a) + ls - TABLE_LN_S_MIN).exp();
        }
        if ls > TABLE_LN_S_MAX {
            return (self.interp(TABLE_LN_S_MAX, a) + (ls - TABLE_LN_S_MAX) * 2.0 / self.alpha)
                .exp();
        }
        self.interp(ls, a).exp()
    }

    fn interp(&self, ls: f64, a: f64) -> f64 {
        let n_s = self.ln_s.len();
        let n_a = self.a.len();
        let xs = (ls - TABLE_LN_S_MIN) / TABLE_LN_S_STEP;
        let xa = a / (TABLE_A_MAX / (n_a - 1) as f64);
        let (is, fs) = split(xs, n_s);
        let (ia, fa) = split(xa, n_a);
        let mut rows = [0.0; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            let j = ia as isize - 1 + r as isize;
            let pts: [f64; 4] =
                std::array::from_fn(|k| self.extended(j, is as isize - 1 + k as isize));
            *row = catmull_rom(pts, fs);
        }
        catmull_rom(rows, fa)
    }

    /// Node value with linear extrapolation one step past each edge.
    fn extended(&self, j: isize, i: isize) -> f64 {
        let n_s = self.ln_s.len() as isize;
        let n_a = self.a.len() as isize;
        let at_i = |j: usize| -> f64 {
            if i < 0 {
                2.0 * self.node(j, 0) - self.node(j, 1)
            } else if i >= n_s {
                2.0 * self.node(j, (n_s - 1) as usize) - self.node(j, (n_s - 2) as usize)
            } else {
                self.node(j, i as usize)
            }
        };
        if j < 0 {
            // Even in `a`.
            at_i((-j) as usize)
        } else if j >= n_a {
            2.0 * at_i((n_a - 1) as usize) - at_i((n_a - 2) as usize)
        } else {
            at_i(j as usize)
        }
    }
}

fn split(x: f64, n: usize) -> (usize, f64) {
    let i = (x.floor().max(0.0) as usize).min(n - 2);
    (i, x - i as f64)
}

fn catmull_rom(p: [f64; 4], t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    0.5 * (2.0 * p[1]
        + (-p[0] + p[2]) * t
        + (2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3]) * t2
        + (-p[0] + 3.0 * p[1] - 3.0 * p[2] + p[3]) * t3)
}

/// Table-backed evaluation of [`lt_interference_approx`] for many points
/// sharing one configuration and slot-count law.
#[derive(Debug, Clone)]
pub struct LtApproximator {
    density_scale: f64,
    delta: f64,
    alpha: f64,
    power_scale: f64,
    /// Per observer slot count `n1 = 2^k`: `(P(W = w), table)` terms.
    terms: Vec<Vec<(f64, Arc<LtTable>)>>,
}

impl LtApproximator {
    pub fn new(cfg: &NetworkConfig, law: &SlotCountLaw, max_observer_slots: usize) -> Result<Self> {
        check_lt_inputs(cfg, 0.0, Point::ORIGIN)?;
        let ch = &cfg.channel;
        let levels = (usize::BITS - max_observer_slots.max(1).leading_zeros()) as usize;
        let mut terms = Vec::with_capacity(levels);
        for k in 0..levels {
            let n1 = 1usize << k;
            let mut row = Vec::new();
            for (w, q) in law.busy_terms() {
                row.push((q, LtTable::shared(ch.alpha, active_transmitters(w, n1))?));
            }
            terms.push(row);
        }
        let delta = cfg.parent.delta;
        Ok(Self {
            density_scale: cfg.parent_density() * delta * delta,
            delta,
            alpha: ch.alpha,
            power_scale: ch.tx_power() * ch.c_tilde * delta.powf(-ch.alpha),
            terms,
        })
    }

    /// LT at `eta` for a receiver at distance `d` from its cluster center,
    /// observer running `n1` slots (a power of two).
    pub fn eval(&self, eta: f64, d: f64, n1: usize) -> f64 {
        let s = eta * self.power_scale;
        self.eval_scaled(s, d / self.delta, n1)
    }

    /// Success probability of a Rayleigh link of length `link` with SIR
    /// threshold `theta`, receiver at distance `d` from the center.
    pub fn link_success(&self, theta: f64, link: f64, d: f64, n1: usize) -> f64 {
        let s = theta * (link / self.delta).powf(self.alpha);
        self.eval_scaled(s, d / self.delta, n1)
    }

    fn eval_scaled(&self, s: f64, a: f64, n1: usize) -> f64 {
        if s <= 0.0 {
            return 1.0;
        }
        if !s.is_finite() {
            return 0.0;
        }
        let k = (n1.max(1).trailing_zeros() as usize).min(self.terms.len() - 1);
        let exponent: f64 = self.terms[k].iter().map(|(q, t)| q * t.eval(s, a)).sum();
        (-self.density_scale * exponent).exp()
    }
}

/// Interference samples at `d` over independent fields.
#[allow(clippy::too_many_arguments)]
pub fn sample_interference(
    cfg: &NetworkConfig,
    law: &SlotCountLaw,
    d: Point,
    n1: usize,
    replicates: usize,
    mode: InterferenceMode,
    streams: &Streams,
) -> Result<Vec<f64>> {
    let mut cols = sample_interference_modes(cfg, law, d, n1, replicates, &[mode], streams)?;
    Ok(cols.pop().expect("one mode requested"))
}

/// Interference samples at `d` under each of `modes`, sharing one field per
/// replicate. Column `k` equals `sample_interference` with `modes[k]`.
pub fn sample_interference_modes(
    cfg: &NetworkConfig,
    law: &SlotCountLaw,
    d: Point,
    n1: usize,
    replicates: usize,
    modes: &[InterferenceMode],
    streams: &Streams,
) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|i| {
            let field = sample_field(cfg, law, &mut streams.stream("lt-field", i))?;
            Ok(modes
                .iter()
                .map(|&mode| {
                    interference_at(
                        d,
                        n1,
                        &field,
                        &cfg.channel,
                        mode,
                        &mut streams.stream("lt-tx", i),
                    )
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..modes.len())
        .map(|k| rows.iter().map(|r| r[k]).collect())
        .collect())
}

/// Monte Carlo LT `E[exp(-eta I)]` at each `eta`, from interference samples.
pub fn empirical_lt(samples: &[f64], etas: &[f64]) -> Vec<MetricEstimate> {
    etas.iter()
        .map(|&eta| {
            let v: Vec<f64> = samples.iter().map(|i| (-eta * i).exp()).collect();
            MetricEstimate::from_samples(&v, Method::FullMonteCarlo)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelModel;
    use crate::content::ContentConfig;
    use crate::geometry::ParentProcess;
    use proptest::prelude::*;

    fn matern_cfg(lambda: f64) -> NetworkConfig {
        NetworkConfig {
            parent: ParentProcess::matern(lambda, 100.0).unwrap(),
            cluster_radius: 50.0,
            lambda_u: 0.072,
            lambda_r: 0.018,
            content: ContentConfig::zipf(500, 6, 0.6).unwrap(),
            channel: ChannelModel::rayleigh(4.0),
            epsilon: 0.5,
            n_m_max: Some(256),
            window_radius: None,
        }
    }

    /// Closed form of the scaled integral at the cluster center with one
    /// transmitter and α = 4: `π √s (π/2 - atan(1/√s))`.
    fn center_oracle(s: f64) -> f64 {
        let r = s.sqrt();
        PI * r * (PI / 2.0 - (1.0 / r).atan())
    }

    #[test]
    fn rate_bound_examples() {
        assert_eq!(achievable_rate_bound(1.0, 0.0, 3), f64::INFINITY);
        assert!((achievable_rate_bound(2.0, 2.0, 1) - 1.0).abs() < 1e-15);
        assert!((achievable_rate_bound(3.0, 1.0, 4) - 0.5).abs() < 1e-15);
        assert!(achievable_rate_bound(1.0, 1e300, 1) < 1e-290);
    }

    #[test]
    fn exact_rate_examples() {
        let s = 2.7;
        let same = exact_slot_rate_oracle(s, &[1.3, 1.3, 1.3, 1.3], 2);
        assert!((same - achievable_rate_bound(s, 1.3, 2)).abs() < 1e-14);
        let split = exact_slot_rate_oracle(s, &[0.5, 1.5], 4);
        assert!(split > achievable_rate_bound(s, 1.0, 4));
        assert_eq!(exact_slot_rate_oracle(s, &[0.0, 0.0], 4), f64::INFINITY);
    }

    #[test]
    fn interference_examples() {
        let ch = ChannelModel::rayleigh(4.0);
        let mut rng = Streams::new(1).stream("i", 0);
        let empty = InterferenceField::empty(50.0);
        assert_eq!(
            interference_at(
                Point::ORIGIN,
                8,
                &empty,
                &ch,
                InterferenceMode::WorstCaseB1,
                &mut rng
            ),
            0.0
        );

        // One small cluster: a single transmitter at full power.
        let field = InterferenceField {
            clusters: vec![InterfererCluster {
                center: Point::new(300.0, 0.0),
                slots: 4,
            }],
            cluster_radius: 1e-9,
            grid_spacing: None,
        };
        let seed = Streams::new(2);
        let i = interference_at(
            Point::ORIGIN,
            8,
            &field,
            &ch,
            InterferenceMode::WorstCaseB1,
            &mut seed.stream("a", 0),
        );
        let mut replay = seed.stream("a", 0);
        let _ = uniform_in_disc(Point::ORIGIN, 1.0, &mut replay);
        let g: f64 = crate::channel::sample_rayleigh_power(&mut replay) * 300f64.powi(-4);
        assert!((i - g).abs() <= 1e-9 * g);
    }

    #[test]
    fn conservation_of_sub_slots() {
        // Four sub-slots with equal unit gains: both modes give P.
        let mut ch = ChannelModel::rayleigh(4.0);
        ch.power = 2.0;
        let field = InterferenceField {
            clusters: vec![InterfererCluster {
                center: Point::new(1.0, 0.0),
                slots: 32,
            }],
            cluster_radius: 0.0,
            grid_spacing: None,
        };
        // Fading is random, so compare the mean of many draws with unit-mean gain.
        let s = Streams::new(3);
        for mode in [InterferenceMode::WorstCaseB1, InterferenceMode::RandomB] {
            let mut rng = s.stream("c", 0);
            let n = 40_000;
            let mean = (0..n)
                .map(|_| interference_at(Point::ORIGIN, 8, &field, &ch, mode, &mut rng))
                .sum::<f64>()
                / n as f64;
            assert!((mean - 2.0).abs() < 0.05, "{mode:?}: {mean}");
        }
    }

    #[test]
    fn lt_approx_trivial_cases() {
        let cfg = matern_cfg(2e-4);
        let law = SlotCountLaw::point_mass(8).unwrap();
        assert_eq!(
            lt_interference_approx(0.0, Point::ORIGIN, 8, &cfg, &law).unwrap(),
            1.0
        );
        let idle = SlotCountLaw {
            empty: 1.0,
            probs: vec![1.0],
        };
        assert_eq!(
            lt_interference_approx(1e8, Point::ORIGIN, 8, &cfg, &idle).unwrap(),
            1.0
        );
        assert!(lt_interference_approx(1e8, Point::new(150.0, 0.0), 8, &cfg, &law).is_err());
        let mut w = cfg.clone();
        w.channel = ChannelModel::winner();
        assert!(lt_interference_approx(1e8, Point::ORIGIN, 8, &w, &law).is_err());
    }

    #[test]
    fn quadrature_matches_closed_form_at_center() {
        for s in [1e-6, 1e-2, 1.0, 30.0, 1e4] {
            let q = scaled_lt_integral(s, 0.0, 1.0, 4.0).unwrap();
            let exact = center_oracle(s);
            assert!((q - exact).abs() < 2e-6 * exact, "s={s}: {q} vs {exact}");
        }
    }

    #[test]
    fn off_center_quadrature_matches_brute_force() {
        // Cartesian midpoint rule over a square annulus region plus the same tail.
        let (s, a, c) = (0.7, 0.35, 2.0);
        let q = scaled_lt_integral(s, a, c, 4.0).unwrap();
        let h = 0.01;
        let half = 40.0;
        let n = (2.0 * half / h) as i64;
        let mut brute = 0.0;
        for ix in 0..n {
            let x = -half + (ix as f64 + 0.5) * h;
            for iy in 0..n {
                let y = -half + (iy as f64 + 0.5) * h;
                let r2 = x * x + y * y;
                if r2 <= 1.0 || r2 > half * half {
                    continue;
                }
                let d2 = (x - a) * (x - a) + y * y;
                brute += shot_kernel(s / (d2 * d2), c) * h * h;
            }
        }
        brute += tail_integral(s, a, c, 4.0, half);
        assert!((q - brute).abs() < 2e-3 * q, "{q} vs {brute}");
    }

    #[test]
    fn table_interpolation_tracks_quadrature() {
        let table = LtTable::shared(4.0, 2).unwrap();
        for (s, a) in [
            (3e-7, 0.12),
            (0.013, 0.0),
            (0.8, 0.27),
            (55.0, 0.44),
            (4e4, 0.5),
        ] {
            let direct = scaled_lt_integral(s, a, 2.0, 4.0).unwrap();
            let t = table.eval(s, a);
            assert!(
                (t - direct).abs() < 1e-4 * direct,
                "s={s} a={a}: {t} vs {direct}"
            );
        }
    }

    #[test]
    fn approximator_agrees_with_direct() {
        let cfg = matern_cfg(2e-4);
        let law = SlotCountLaw::from_counts(&[0, 1, 2, 5, 8], 3).unwrap();
        let approx = LtApproximator::new(&cfg, &law, 16).unwrap();
        for (eta, d, n1) in [(1e6, 0.0, 8), (3e7, 35.0, 4), (2e8, 12.0, 16)] {
            let direct = lt_interference_approx(eta, Point::new(d, 0.0), n1, &cfg, &law).unwrap();
            let table = approx.eval(eta, d, n1);
            assert!((direct - table).abs() < 1e-5, "{direct} vs {table}");
        }
    }

    #[test]
    fn slot_law_point_mass_and_normalization() {
        let mut cfg = matern_cfg(2e-4);
        cfg.content = ContentConfig::zipf(1, 1, 0.6).unwrap();
        // Huge user counts and one video: every cluster matches all requests,
        // and a cap of 1 forces W = 1.
        cfg.lambda_u = 1.0;
        let law = estimate_slot_count_law(&cfg, 1, 500, &Streams::new(4)).unwrap();
        assert_eq!(law.probs, vec![1.0]);
        let law = estimate_slot_count_law(&matern_cfg(2e-4), 256, 2000, &Streams::new(5)).unwrap();
        assert!((law.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dense_clusters_mostly_run_128_slots() {
        let law = estimate_slot_count_law(&matern_cfg(2e-4), 256, 5000, &Streams::new(8)).unwrap();
        let (mode, p) = law
            .busy_terms()
            .fold((0, 0.0), |best, t| if t.1 > best.1 { t } else { best });
        assert_eq!(mode, 128);
        assert!(p > 0.9, "{p}");
    }

    #[test]
    fn shared_field_columns_match_single_mode_runs() {
        let cfg = matern_cfg(1e-4);
        let law = estimate_slot_count_law(&cfg, 256, 500, &Streams::new(12)).unwrap();
        let d = Point::new(20.0, 5.0);
        let s = Streams::new(13);
        let modes = [InterferenceMode::RandomB, InterferenceMode::WorstCaseB1];
        let cols = sample_interference_modes(&cfg, &law, d, 4, 50, &modes, &s).unwrap();
        for (mode, col) in modes.into_iter().zip(&cols) {
            assert_eq!(
                &sample_interference(&cfg, &law, d, 4, 50, mode, &s).unwrap(),
                col
            );
        }
    }

    #[test]
    fn single_interferer_per_slot_lowers_the_transform() {
        let cfg = matern_cfg(2e-4);
        let law = estimate_slot_count_law(&cfg, 256, 2000, &Streams::new(9)).unwrap();
        for (k, dist) in [0.0, 35.0].into_iter().enumerate() {
            let d = Point::new(dist, 0.0);
            let s = Streams::new(10).derive_index("d", k as u64);
            let modes = [InterferenceMode::WorstCaseB1, InterferenceMode::RandomB];
            let cols = sample_interference_modes(&cfg, &law, d, 8, 1000, &modes, &s).unwrap();
            let (b1, rb) = (&cols[0], &cols[1]);
            for eta in [1e6, 1e7, 1e8, 1e9] {
                let lt = |xs: &[f64]| xs.iter().map(|i| (-eta * i).exp()).collect::<Vec<f64>>();
                let (diff, se) = crate::stats::paired_difference(&lt(b1), &lt(rb));
                assert!(diff <= 3.0 * se, "d={dist} eta={eta}: {diff} > 3 x {se}");
            }
        }
    }

    #[test]
    fn law_sampling_frequencies() {
        let law = SlotCountLaw {
            empty: 0.2,
            probs: vec![0.5, 0.0, 0.5],
        };
        let mut rng = Streams::new(6).stream("w", 0);
        let n = 100_000;
        let mut counts = HashMap::new();
        for _ in 0..n {
            *counts.entry(law.sample(&mut rng)).or_insert(0usize) += 1;
        }
        assert!(counts.get(&2).is_none());
        assert!((counts[&0] as f64 / n as f64 - 0.2).abs() < 0.01);
        assert!((counts[&4] as f64 / n as f64 - 0.4).abs() < 0.01);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn exact_rate_dominates_bound(signal in 1e-3f64..1e3, phases in proptest::collection::vec(1e-3f64..1e3, 1..16), n1 in 1usize..64) {
            let mean = phases.iter().sum::<f64>() / phases.len() as f64;
            prop_assert!(exact_slot_rate_oracle(signal, &phases, n1) >= achievable_rate_bound(signal, mean, n1) * (1.0 - 1e-12));
        }

        #[test]
        fn lt_approx_monotone(eta in 1e5f64..1e9, d in 0.0f64..49.0, factor in 1.0f64..4.0) {
            let cfg = matern_cfg(2e-4);
            let law = SlotCountLaw::from_counts(&[1, 2, 4, 3], 1).unwrap();
            let base = lt_interference_approx(eta, Point::new(d, 0.0), 2, &cfg, &law).unwrap();
            prop_assert!((0.0..=1.0).contains(&base));
            prop_assert!(lt_interference_approx(eta * factor, Point::new(d, 0.0), 2, &cfg, &law).unwrap() <= base + 1e-9);
            let denser = matern_cfg(2e-4 * factor);
            prop_assert!(lt_interference_approx(eta, Point::new(d, 0.0), 2, &denser, &law).unwrap() <= base + 1e-9);
            prop_assert!(lt_interference_approx(eta, Point::new((d + 1.0).min(49.5), 0.0), 2, &cfg, &law).unwrap() <= base + 1e-9);
        }
    }
}
