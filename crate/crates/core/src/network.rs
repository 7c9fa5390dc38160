use std::f64::consts::PI;

use crate::channel::ChannelModel;
use crate::content::{match_probability, ContentConfig};
use crate::error::{Error, Result};
use crate::geometry::{ParentKind, ParentProcess};

/// Default simulation radius in units of the clearance.
pub const DEFAULT_WINDOW_FACTOR: f64 = 40.0;

/// Every model parameter of one experiment point.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub parent: ParentProcess,
    pub cluster_radius: f64,
    /// Intensity of users holding caches.
    pub lambda_u: f64,
    /// Intensity of users issuing requests.
    pub lambda_r: f64,
    pub content: ContentConfig,
    pub channel: ChannelModel,
    /// Slot-rounding threshold in `[0, 1]`.
    pub epsilon: f64,
    /// Cap on matched requests per cluster; estimated when absent.
    pub n_m_max: Option<usize>,
    /// Simulation/truncation radius; `DEFAULT_WINDOW_FACTOR * delta` when absent.
    pub window_radius: Option<f64>,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        self.parent.validate()?;
        self.content.validate()?;
        self.channel.validate()?;
        if !(self.cluster_radius > 0.0) {
            return Err(Error::domain(format!(
                "cluster radius must be positive, got {}",
                self.cluster_radius
            )));
        }
        if self.parent.delta < 2.0 * self.cluster_radius {
            return Err(Error::domain(format!(
                "clearance {} is below twice the cluster radius {}",
                self.parent.delta, self.cluster_radius
            )));
        }
        if !(self.lambda_u >= 0.0) || !(self.lambda_r >= 0.0) {
            return Err(Error::domain("user intensities must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::domain(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if self.n_m_max == Some(0) {
            return Err(Error::domain("n_m_max must be at least 1"));
        }
        if let Some(r) = self.window_radius {
            if !(r > self.parent.delta) {
                return Err(Error::domain("window radius must exceed the clearance"));
            }
        }
        Ok(())
    }

    pub fn cluster_area(&self) -> f64 {
        PI * self.cluster_radius * self.cluster_radius
    }

    pub fn mean_caching_users(&self) -> f64 {
        self.lambda_u * self.cluster_area()
    }

    pub fn mean_requesting_users(&self) -> f64 {
        self.lambda_r * self.cluster_area()
    }

    pub fn parent_density(&self) -> f64 {
        self.parent.density()
    }

    pub fn window_radius(&self) -> f64 {
        self.window_radius
            .unwrap_or(DEFAULT_WINDOW_FACTOR * self.parent.delta)
    }

    pub fn match_probability(&self) -> f64 {
        match_probability(&self.content, self.lambda_u, self.cluster_radius)
    }

    pub fn is_grid(&self) -> bool {
        self.parent.kind == ParentKind::TranslatedGrid
    }
}
