//! Experiment files and the built-in presets.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{ChannelKind, ChannelModel};
use crate::content::ContentConfig;
use crate::error::{Error, Result};
use crate::geometry::{ParentKind, ParentProcess};
use crate::metrics::{InterferenceMethod, MetricsOptions};
use crate::network::NetworkConfig;
use crate::tradeoff::{linear_space, log_space, SweepGrid};

/// Names accepted by `--preset`.
pub const PRESETS: [(&str, &str); 6] = [
    ("fig4", include_str!("../presets/fig4.toml")),
    ("fig5", include_str!("../presets/fig5.toml")),
    ("fig6", include_str!("../presets/fig6.toml")),
    ("fig7", include_str!("../presets/fig7.toml")),
    (
        "fig8-matern-winner",
        include_str!("../presets/fig8-matern-winner.toml"),
    ),
    (
        "fig9-grid-winner",
        include_str!("../presets/fig9-grid-winner.toml"),
    ),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub parent: ParentKind,
    /// Matérn proposal intensity.
    #[serde(default)]
    pub lambda: f64,
    pub delta: f64,
    pub cluster_radius: f64,
    pub lambda_u: f64,
    pub lambda_r: f64,
    pub library_size: usize,
    pub cache_size: usize,
    pub zipf_gamma: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub n_m_max: Option<usize>,
    #[serde(default)]
    pub window_radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub replicates: usize,
    pub law_replicates: usize,
    pub method: InterferenceMethod,
    pub target_std_error: f64,
    pub max_replicates: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        let m = MetricsOptions::default();
        Self {
            seed: 0,
            replicates: m.replicates,
            law_replicates: m.law_replicates,
            method: m.method,
            target_std_error: m.target_std_error,
            max_replicates: m.max_replicates,
        }
    }
}

/// Overrides applied on top of the base network; each variant gets its own output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub library_size: Option<usize>,
    #[serde(default)]
    pub cache_size: Option<usize>,
    #[serde(default)]
    pub zipf_gamma: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub channel: Option<ChannelKind>,
}

/// An explicit list or an evenly spaced range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    Values(Vec<f64>),
    Range {
        min: f64,
        max: f64,
        points: usize,
        #[serde(default)]
        log: bool,
    },
}

impl Axis {
    pub fn values(&self) -> Result<Vec<f64>> {
        match *self {
            Axis::Values(ref v) => Ok(v.clone()),
            Axis::Range {
                min,
                max,
                points,
                log,
            } => {
                if points == 0 {
                    return Err(Error::config("axis needs at least one point"));
                }
                if log && !(min > 0.0 && max > 0.0) {
                    return Err(Error::config("log axis bounds must be positive"));
                }
                Ok(if log {
                    log_space(min, max, points)
                } else {
                    linear_space(min, max, points)
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LtCompareSection {
    pub eta_min: f64,
    pub eta_max: f64,
    pub points: usize,
    pub distances: Vec<f64>,
    pub observer_slots: usize,
}

impl Default for LtCompareSection {
    fn default() -> Self {
        Self {
            eta_min: 1e5,
            eta_max: 1e9,
            points: 10,
            distances: vec![0.0, 35.0],
            observer_slots: 8,
        }
    }
}

impl LtCompareSection {
    pub fn etas(&self) -> Result<Vec<f64>> {
        Axis::Range {
            min: self.eta_min,
            max: self.eta_max,
            points: self.points,
            log: true,
        }
        .values()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub cluster_radii: Option<Axis>,
    pub rates: Option<Axis>,
    pub lambdas: Option<Axis>,
    pub delta_factors: Option<Axis>,
    /// Average-rate floors `r`.
    pub rate_floors: Axis,
    /// Parent-density floors for the local trade-off.
    pub density_floors: Vec<f64>,
    /// Local-metric floors `t_c`.
    pub local_floors: Axis,
    /// Attempted rates for the local-global trade-off.
    pub fixed_rates: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            cluster_radii: None,
            rates: None,
            lambdas: None,
            delta_factors: None,
            rate_floors: Axis::Range {
                min: 0.0,
                max: 0.45,
                points: 10,
                log: false,
            },
            density_floors: vec![0.0],
            local_floors: Axis::Range {
                min: 0.0,
                max: 1.0,
                points: 21,
                log: false,
            },
            fixed_rates: vec![0.05],
        }
    }
}

impl SweepSection {
    pub fn grid(&self) -> Result<SweepGrid> {
        let d = SweepGrid::default();
        let pick =
            |a: &Option<Axis>, fallback: Vec<f64>| a.as_ref().map_or(Ok(fallback), Axis::values);
        let grid = SweepGrid {
            cluster_radii: pick(&self.cluster_radii, d.cluster_radii)?,
            rates: pick(&self.rates, d.rates)?,
            lambdas: pick(&self.lambdas, d.lambdas)?,
            delta_factors: pick(&self.delta_factors, d.delta_factors)?,
        };
        grid.validate()?;
        Ok(grid)
    }
}

/// A full experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub description: String,
    pub network: NetworkSection,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub lt_compare: LtCompareSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::config(format!(
                "unknown preset {name:?}; available: {}",
                names.join(", ")
            ))
        })?;
        Self::from_toml(text)
    }

    /// Every variant's network must be valid and every grid nonempty.
    pub fn check(&self) -> Result<()> {
        for v in self.networks()? {
            v.1.validate().map_err(|e| Error::config(e.to_string()))?;
        }
        if self.run.replicates == 0 || self.run.law_replicates == 0 {
            return Err(Error::config("replicate counts must be positive"));
        }
        let names: std::collections::BTreeSet<&str> =
            self.variants.iter().map(|v| v.name.as_str()).collect();
        if names.len() != self.variants.len() || names.iter().any(|n| n.is_empty()) {
            return Err(Error::config("variant names must be unique and nonempty"));
        }
        self.sweep.grid()?;
        if self.sweep.rate_floors.values()?.is_empty()
            || self.sweep.local_floors.values()?.is_empty()
        {
            return Err(Error::config("constraint grids must be nonempty"));
        }
        if self.sweep.density_floors.is_empty() || self.sweep.fixed_rates.is_empty() {
            return Err(Error::config(
                "density floors and fixed rates must be nonempty",
            ));
        }
        let lt = &self.lt_compare;
        if lt.distances.is_empty() || lt.observer_slots == 0 || !lt.observer_slots.is_power_of_two()
        {
            return Err(Error::config(
                "lt_compare needs distances and a power-of-two slot count",
            ));
        }
        lt.etas()?;
        Ok(())
    }

    pub fn base_network(&self) -> Result<NetworkConfig> {
        let n = &self.network;
        let parent = match n.parent {
            ParentKind::MaternIi => ParentProcess::matern(n.lambda, n.delta),
            ParentKind::TranslatedGrid => ParentProcess::grid(n.delta),
        }
        .map_err(|e| Error::config(e.to_string()))?;
        let content = ContentConfig::zipf(n.library_size, n.cache_size, n.zipf_gamma)
            .map_err(|e| Error::config(e.to_string()))?;
        Ok(NetworkConfig {
            parent,
            cluster_radius: n.cluster_radius,
            lambda_u: n.lambda_u,
            lambda_r: n.lambda_r,
            content,
            channel: self.channel,
            epsilon: n.epsilon,
            n_m_max: n.n_m_max,
            window_radius: n.window_radius,
        })
    }

    /// `(variant name, network)` pairs; a single unnamed entry without variants.
    pub fn networks(&self) -> Result<Vec<(Option<String>, NetworkConfig)>> {
        let base = self.base_network()?;
        if self.variants.is_empty() {
            return Ok(vec![(None, base)]);
        }
        self.variants
            .iter()
            .map(|v| {
                let n = &self.network;
                let mut cfg = base.clone();
                cfg.content = ContentConfig::zipf(
                    v.library_size.unwrap_or(n.library_size),
                    v.cache_size.unwrap_or(n.cache_size),
                    v.zipf_gamma.unwrap_or(n.zipf_gamma),
                )
                .map_err(|e| Error::config(e.to_string()))?;
                if let Some(eps) = v.epsilon {
                    cfg.epsilon = eps;
                }
                if let Some(kind) = v.channel {
                    cfg.channel = match kind {
                        ChannelKind::RayleighPowerLaw => ChannelModel::rayleigh(self.channel.alpha),
                        ChannelKind::WinnerLognormal => ChannelModel::winner(),
                    };
                }
                Ok((Some(v.name.clone()), cfg))
            })
            .collect()
    }

    pub fn metrics_options(&self) -> MetricsOptions {
        MetricsOptions {
            replicates: self.run.replicates,
            method: self.run.method,
            law_replicates: self.run.law_replicates,
            target_std_error: self.run.target_std_error,
            max_replicates: self.run.max_replicates.max(self.run.replicates),
        }
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
