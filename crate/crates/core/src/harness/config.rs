//! Run configuration read from a sectioned key-value (TOML) file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::eoc::Scheme;
use crate::harness::manufactured::{
    make_degenerate, make_manufactured, ManufacturedProblem, Variant,
};
use crate::optimizer::SolveConfig;
use crate::perturbation::{Family, DEFAULT_BOUND};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    #[default]
    Manufactured,
    Degenerate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    pub gamma: f64,
    pub variant: Variant,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            kind: ProblemKind::Manufactured,
            gamma: 1.0,
            variant: Variant::Tracking,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    /// Subdivisions per side for single-mesh commands.
    pub n: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self { n: 32 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EocSection {
    pub scheme: Scheme,
    pub levels: Vec<usize>,
    /// Gap tolerance constant; defaults to 1e-2 |J_h(midpoint)| on the coarsest level.
    pub c_gap: Option<f64>,
}

impl Default for EocSection {
    fn default() -> Self {
        Self {
            scheme: Scheme::Full,
            levels: vec![8, 16, 32, 64, 128],
            c_gap: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub family: Family,
    pub delta_max: f64,
    pub delta_min: f64,
    pub points: usize,
    pub bound: f64,
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            family: Family::Rho,
            delta_max: 1e-1,
            delta_min: 1e-3,
            points: 11,
            bound: DEFAULT_BOUND,
        }
    }
}

impl StabilitySection {
    /// Log-spaced scales from delta_max down to delta_min.
    pub fn scales(&self) -> Vec<f64> {
        if self.points < 2 {
            return vec![self.delta_max];
        }
        let (a, b) = (self.delta_max.ln(), self.delta_min.ln());
        (0..self.points)
            .map(|k| (a + (b - a) * k as f64 / (self.points - 1) as f64).exp())
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    pub samples: usize,
    pub seed: u64,
    pub gamma: f64,
    pub beta: f64,
    pub tau: f64,
    pub alpha: f64,
    pub c: f64,
    /// Number of worst samples to dump as control fields.
    pub worst: usize,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            samples: 500,
            seed: 7,
            gamma: 1.0,
            beta: 1.0,
            tau: 1e-2,
            alpha: 0.5,
            c: 1e-3,
            worst: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub cells: usize,
    pub grid: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { cells: 2, grid: 21 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

/// Acceptance thresholds; unset entries are not checked.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub min_control_order: Option<f64>,
    pub min_state_order: Option<f64>,
    pub max_control_order: Option<f64>,
    /// Number of trailing level pairs the order thresholds apply to.
    pub last_pairs: Option<usize>,
    pub min_log_slope: Option<f64>,
    pub min_stability_slope: Option<f64>,
    pub max_gap: Option<f64>,
    pub max_violations: Option<usize>,
    pub min_c_hat: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub mesh: MeshSection,
    pub solver: SolveConfig,
    pub eoc: EocSection,
    pub stability: StabilitySection,
    pub audit: AuditSection,
    pub oracle: OracleSection,
    pub output: OutputSection,
    pub thresholds: Thresholds,
    #[serde(skip)]
    pub hash: String,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.hash = config_hash(text);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative output directory is resolved against the working directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.problem.gamma >= 0.5 && self.problem.gamma <= 1.0) {
            return bad("problem.gamma must lie in [0.5, 1]");
        }
        if self.mesh.n == 0 {
            return bad("mesh.n must be positive");
        }
        if self.eoc.levels.is_empty() || self.eoc.levels.windows(2).any(|w| w[1] != 2 * w[0]) {
            return bad("eoc.levels must be nonempty and double between entries");
        }
        let s = &self.stability;
        if !(s.delta_max > 0.0 && s.delta_min > 0.0 && s.bound > 0.0) || s.points == 0 {
            return bad("stability scales and bound must be positive");
        }
        if self.audit.samples == 0 {
            return bad("audit.samples must be positive");
        }
        Ok(())
    }

    pub fn manufactured(&self) -> Result<ManufacturedProblem> {
        match self.problem.kind {
            ProblemKind::Manufactured => {
                make_manufactured(self.problem.gamma, self.problem.variant)
            }
            ProblemKind::Degenerate => make_degenerate(),
        }
    }
}

/// Hex SHA-256 of the config text.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Outcome of one threshold check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            passed: value >= threshold,
        }
    }

    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            passed: value <= threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub command: String,
    pub config_hash: String,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub values: serde_json::Value,
}

impl Summary {
    pub fn new(
        command: &str,
        cfg: &RunConfig,
        checks: Vec<Check>,
        values: serde_json::Value,
    ) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        Self {
            command: command.into(),
            config_hash: cfg.hash.clone(),
            checks,
            passed,
            values,
        }
    }
}

/// Writes files to the output directory.
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_with(
        &self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> Result<()>,
    ) -> Result<PathBuf> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let p = self.path(name);
        fs::write(&p, buf)?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, serde_json::to_string_pretty(value)?)?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_file() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.eoc.levels, vec![8, 16, 32, 64, 128]);
        assert_eq!(cfg.hash.len(), 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            RunConfig::parse("[mesh]\nsize = 3\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("[eoc]\nlevels = [8, 12]\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn log_spaced_scales() {
        let s = StabilitySection {
            points: 3,
            ..Default::default()
        };
        let v = s.scales();
        assert!(
            (v[0] - 1e-1).abs() < 1e-15
                && (v[1] - 1e-2).abs() < 1e-15
                && (v[2] - 1e-3).abs() < 1e-15
        );
    }
}
