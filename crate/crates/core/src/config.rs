//! Pipeline-wide configuration, loadable from JSON with per-field defaults.

use serde::{Deserialize, Serialize};

use crate::anomaly::FilterConfig;
use crate::instance::UnifyConfig;
use crate::projection::SplatOptions;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Baseline,
    External,
}

impl BackendKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "baseline" => Some(Self::Baseline),
            "external" => Some(Self::External),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::External => "external",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
    pub attempts: u32,
    pub max_concurrency: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Baseline,
            endpoint: None,
            timeout_secs: 300,
            attempts: 3,
            max_concurrency: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub tau: f64,
    pub min_violations: u32,
    pub min_observations: u32,
    pub eta: f64,
    pub closing_radius: u32,
    pub min_group_points: usize,
    pub splat_radius: u32,
    pub z_epsilon: f64,
    pub backend: BackendConfig,
    /// Median-ratio scale alignment before depth metrics.
    pub depth_scale_align: bool,
    /// Estimate scale in pose alignment; `false` gives a rigid fit.
    pub pose_scale: bool,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let filter = FilterConfig::default();
        let unify = UnifyConfig::default();
        let splat = SplatOptions::default();
        Self {
            tau: filter.tau,
            min_violations: filter.min_violations,
            min_observations: filter.min_observations,
            eta: unify.eta,
            closing_radius: unify.closing_radius,
            min_group_points: unify.min_group_points,
            splat_radius: splat.splat_radius,
            z_epsilon: splat.z_epsilon,
            backend: BackendConfig::default(),
            depth_scale_align: true,
            pose_scale: true,
            threads: 0,
        }
    }
}

impl PipelineConfig {
    pub fn filter(&self) -> FilterConfig {
        FilterConfig {
            tau: self.tau,
            min_violations: self.min_violations,
            min_observations: self.min_observations,
        }
    }

    pub fn unify(&self) -> UnifyConfig {
        UnifyConfig {
            eta: self.eta,
            min_group_points: self.min_group_points,
            closing_radius: self.closing_radius,
        }
    }

    pub fn splat(&self) -> SplatOptions {
        SplatOptions {
            splat_radius: self.splat_radius,
            z_epsilon: self.z_epsilon,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.filter().validate().map_err(|e| e.to_string())?;
        self.unify().validate().map_err(|e| e.to_string())?;
        self.splat().validate()?;
        if self.backend.attempts == 0 {
            return Err("backend.attempts must be >= 1".into());
        }
        if self.backend.max_concurrency == 0 {
            return Err("backend.max_concurrency must be >= 1".into());
        }
        if self.backend.timeout_secs == 0 {
            return Err("backend.timeout_secs must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_constants() {
        let c = PipelineConfig::default();
        assert_eq!(c.tau, 0.75);
        assert_eq!(c.eta, 1.0 / 3.0);
        assert_eq!(c.min_group_points, 20);
        assert_eq!(c.closing_radius, 1);
        assert_eq!(c.backend.attempts, 3);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"tau": 0.5, "backend": {"kind": "external"}}"#).unwrap();
        assert_eq!(c.tau, 0.5);
        assert_eq!(c.eta, 1.0 / 3.0);
        assert_eq!(c.backend.kind, BackendKind::External);
        assert_eq!(c.backend.attempts, 3);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"tua": 0.5}"#).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let c = PipelineConfig {
            eta: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = PipelineConfig {
            splat_radius: 9,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
