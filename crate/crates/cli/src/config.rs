//! Run configuration: TOML file, `--set` overrides, conversion to a [`Scenario`].

use std::path::{Path, PathBuf};

use ddlab_core::control::matrix_from_pairs;
use ddlab_core::fock::DEFAULT_MAX_DIM;
use ddlab_core::{ControlRecipe, Mode, ModeSet, Scenario, SweepAxis, SystemSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Environment variable overriding `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "DDLAB_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemBlock,
    pub reservoir: ReservoirBlock,
    #[serde(default)]
    pub truncation: TruncationBlock,
    pub control: ControlBlock,
    pub dynamics: DynamicsBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub levels: usize,
    /// Ascending `E_0 < E_1 < …`.
    pub energies: Vec<f64>,
    /// Coupling matrix, row-major `[[re, im], ...]`.
    #[serde(rename = "Q")]
    pub q: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirBlock {
    pub modes: Vec<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationBlock {
    pub n_cut: u32,
    /// Second cutoff of the stability pair; `n_cut + 2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_n_cut: Option<u32>,
    pub max_dim: usize,
}

impl Default for TruncationBlock {
    fn default() -> Self {
        TruncationBlock { n_cut: 8, fine_n_cut: None, max_dim: DEFAULT_MAX_DIM }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBlock {
    #[serde(rename = "T")]
    pub period: f64,
    #[serde(flatten)]
    pub recipe: ControlRecipe,
}

/// A single time or a list of times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Times {
    One(f64),
    Many(Vec<f64>),
}

impl Times {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Times::One(t) => vec![*t],
            Times::Many(ts) => ts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsBlock {
    pub g: f64,
    pub t: Times,
    #[serde(rename = "L", default)]
    pub l: u32,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_quadrature")]
    pub quadrature_points: usize,
    /// Decoupling tolerance relative to `T·‖Q‖`.
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
}

fn default_substeps() -> usize {
    1
}

fn default_quadrature() -> usize {
    ddlab_core::control::DEFAULT_QUADRATURE_POINTS
}

fn default_residual_tol() -> f64 {
    ddlab_core::control::DEFAULT_RESIDUAL_TOL
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    /// `T`, `g` or `t`.
    pub axis: String,
    pub grid: Vec<f64>,
    /// Evaluation time for `T` and `g` sweeps; the largest `dynamics.t` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default = "default_true")]
    pub require_hypotheses: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

impl Default for RunConfig {
    /// The default scenario with `t ∈ {0.1, 0.5, 1}` and a five-point `T` sweep.
    fn default() -> Self {
        let sc = Scenario::default();
        RunConfig {
            system: SystemBlock {
                levels: 2,
                energies: vec![0.0, 1.0],
                q: vec![[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [-1.0, 0.0]],
            },
            reservoir: ReservoirBlock { modes: vec![Mode { omega: 1.0, re: 1.0, im: 0.0 }] },
            truncation: TruncationBlock::default(),
            control: ControlBlock { period: sc.period, recipe: sc.recipe },
            dynamics: DynamicsBlock {
                g: sc.g,
                t: Times::Many(vec![0.1, 0.5, 1.0]),
                l: 0,
                substeps: default_substeps(),
                quadrature_points: default_quadrature(),
                residual_tol: default_residual_tol(),
            },
            experiment: Some(ExperimentBlock {
                axis: "T".into(),
                grid: vec![0.0125, 0.025, 0.05, 0.1, 0.2],
                t: Some(1.0),
                require_hypotheses: true,
            }),
            output: OutputBlock::default(),
        }
    }
}

impl RunConfig {
    /// Parse a TOML document and apply `path=value` overrides on top.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::parse(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        table.try_into().map_err(|e| CliError::parse(format!("config: {e}")))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::parse(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    /// SHA-256 of the effective config without the output block, so that
    /// the same experiment hashes identically wherever it is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputBlock::default();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn times(&self) -> Vec<f64> {
        self.dynamics.t.to_vec()
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("ddlab-out"))
    }

    /// All module-level invariants, with the offending field path on failure.
    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let s = &self.system;
        if s.levels != s.energies.len() {
            return Err(CliError::semantic(
                "system.levels",
                format!("{} levels but {} energies", s.levels, s.energies.len()),
            ));
        }
        if s.q.len() != s.levels * s.levels {
            return Err(CliError::semantic(
                "system.Q",
                format!("expected {} entries for a {0}x{0} matrix, got {}", s.levels * s.levels, s.q.len()),
            ));
        }
        let q = matrix_from_pairs(&s.q, "system.Q")?;
        let system = SystemSpec::new(s.energies.clone(), q)?;
        let modes = ModeSet::new(self.reservoir.modes.clone())?;
        let tr = &self.truncation;
        let fine = tr.fine_n_cut.unwrap_or(tr.n_cut + 2);
        if tr.n_cut == 0 {
            return Err(CliError::semantic("truncation.n_cut", "cutoff must be positive"));
        }
        if fine < tr.n_cut {
            return Err(CliError::semantic("truncation.fine_n_cut", "fine cutoff is below n_cut"));
        }
        let d = &self.dynamics;
        if !(d.g.is_finite() && d.g >= 0.0) {
            return Err(CliError::semantic("dynamics.g", format!("coupling must be nonnegative, got {}", d.g)));
        }
        let times = self.times();
        if times.is_empty() || times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(CliError::semantic("dynamics.t", "times must be a nonempty list of nonnegative numbers"));
        }
        if d.substeps == 0 {
            return Err(CliError::semantic("dynamics.substeps", "need at least one substep"));
        }
        if d.quadrature_points < 2 {
            return Err(CliError::semantic("dynamics.quadrature_points", "need at least two points"));
        }
        if !(self.control.period.is_finite() && self.control.period > 0.0) {
            return Err(CliError::semantic(
                "control.T",
                format!("period must be positive, got {}", self.control.period),
            ));
        }
        if let Some(e) = &self.experiment {
            if SweepAxis::parse(&e.axis).is_none() {
                return Err(CliError::semantic("experiment.axis", format!("unknown axis {:?}; use T, g or t", e.axis)));
            }
            if e.grid.is_empty() || e.grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(CliError::semantic(
                    "experiment.grid",
                    "grid must be a nonempty list of nonnegative numbers",
                ));
            }
        }
        Ok(Scenario {
            system,
            modes,
            cutoffs: (tr.n_cut, fine),
            max_dim: tr.max_dim,
            recipe: self.control.recipe.clone(),
            period: self.control.period,
            g: d.g,
            l: d.l,
            substeps: d.substeps,
            quadrature_points: d.quadrature_points,
            residual_tol: d.residual_tol,
        })
    }
}

/// `a.b.c=value`, value in TOML syntax; bare words fall back to strings.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::parse(format!("override {spec:?} is not of the form path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::parse(format!("override {spec:?} has an empty key")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let (last, parents) = keys.split_last().expect("nonempty path");
    let mut cur = table;
    for k in parents {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| CliError::parse(format!("override {spec:?}: {k} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml(), &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_take_precedence() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(
            &c.to_toml(),
            &["dynamics.g=2e-3".into(), "experiment.axis=g".into(), "control.kind=\"none\"".into()],
        )
        .unwrap();
        assert_eq!(back.dynamics.g, 2e-3);
        assert_eq!(back.experiment.unwrap().axis, "g");
        assert_eq!(back.control.recipe, ControlRecipe::None);
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output.dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.dynamics.g = 5e-4;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn equal_energies_name_the_field() {
        let mut c = RunConfig::default();
        c.system.energies = vec![1.0, 1.0];
        let e = c.scenario().unwrap_err();
        assert_eq!(e.code, crate::EXIT_SEMANTIC);
        assert!(e.message.contains("system.energies"), "{}", e.message);
    }

    #[test]
    fn malformed_toml_is_a_parse_error() {
        assert_eq!(RunConfig::from_toml("system = [", &[]).unwrap_err().code, crate::EXIT_PARSE);
        assert_eq!(RunConfig::from_toml("", &[]).unwrap_err().code, crate::EXIT_PARSE);
    }

    #[test]
    fn integer_literals_are_accepted_for_reals() {
        let text = RunConfig::default().to_toml().replace("energies = [0.0, 1.0]", "energies = [0, 1]");
        assert!(text.contains("energies = [0, 1]"));
        let c = RunConfig::from_toml(&text, &[]).unwrap();
        assert_eq!(c.system.energies, vec![0.0, 1.0]);
    }
}
