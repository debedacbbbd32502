use std::path::Path;

use anyhow::{bail, Context};
use geodid::did::{Adjustment, CovariateSpec};
use geodid::panel::{ColumnSchema, ReversalPolicy};
use geodid::synth::SimConfig;
use serde::{Deserialize, Serialize};

/// Declarative run configuration. Every field is optional; command-line
/// flags override file values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Covariate ladder row, by label or short key.
    pub covariates: Option<String>,
    /// Explicit covariate columns; takes precedence over `covariates`.
    pub covariate_columns: Option<Vec<String>>,
    pub adjustment: Option<Adjustment>,
    pub bootstrap_reps: Option<usize>,
    pub confidence_level: Option<f64>,
    pub reversal_policy: Option<ReversalPolicy>,
    pub columns: Option<ColumnSchema>,
    pub local: LocalSection,
    pub cluster: ClusterSection,
    pub simulate: Option<SimConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalSection {
    pub kernel: Option<String>,
    /// `auto` or a bandwidth in km.
    pub bandwidth: Option<String>,
    pub bandwidth_grid: Option<Vec<f64>>,
    pub d_max: Option<f64>,
    pub min_mass: Option<f64>,
    pub jobs: Option<usize>,
    pub bootstrap: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub k: Option<usize>,
    /// Inclusive range such as `2:6`.
    pub select_k: Option<String>,
    pub restarts: Option<usize>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub n_basis: Option<usize>,
    pub order: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn covariate_spec(&self) -> anyhow::Result<CovariateSpec> {
        if let Some(cols) = &self.covariate_columns {
            let label = self.covariates.clone().unwrap_or_else(|| "custom".into());
            return Ok(CovariateSpec::custom(label, cols.clone()));
        }
        match &self.covariates {
            None => Ok(CovariateSpec::baseline()),
            Some(label) => CovariateSpec::from_label(label).with_context(|| {
                let known: Vec<&str> = CovariateSpec::ladder().iter().map(|(k, _)| *k).collect();
                format!("unknown covariate ladder row `{label}` (known: {})", known.join(", "))
            }),
        }
    }

    /// Outcome regression whenever covariates are named, unless overridden.
    pub fn adjustment(&self, spec: &CovariateSpec) -> Adjustment {
        self.adjustment.unwrap_or(if spec.is_empty() { Adjustment::None } else { Adjustment::OutcomeRegression })
    }

    pub fn require_seed(&self, stage: &str) -> anyhow::Result<u64> {
        match self.seed {
            Some(s) => Ok(s),
            None => bail!("{stage} is stochastic: pass --seed or set `seed` in the config file"),
        }
    }
}

pub fn parse_k_range(s: &str) -> anyhow::Result<Vec<usize>> {
    let (a, b) = s.split_once(':').with_context(|| format!("K range `{s}` must look like 2:6"))?;
    let lo: usize = a.trim().parse().with_context(|| format!("bad K range start `{a}`"))?;
    let hi: usize = b.trim().parse().with_context(|| format!("bad K range end `{b}`"))?;
    if lo < 2 || hi < lo {
        bail!("K range `{s}` must satisfy 2 <= start <= end");
    }
    Ok((lo..=hi).collect())
}
