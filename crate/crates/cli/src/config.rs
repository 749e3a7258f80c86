//! Run configuration: one TOML document, optionally patched with
//! `--set dotted.path=value` overrides before deserialization.

use std::path::{Path, PathBuf};

use ensemble_place::ensemble::{
    DecayFamily, EnsembleSpec, InputFamily, MaterializedEnsemble, SpaceTag, TargetSpectrum,
};
use ensemble_place::simulation::InitialCondition;
use serde::Deserialize;
use toml::{Table, Value};

use crate::Failure;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub ensemble: EnsembleSection,
    #[serde(default = "default_targets")]
    pub targets: TargetSpectrum,
    pub truncation: Truncation,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub feasibility: FeasibilitySection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub strict: bool,
}

fn default_targets() -> TargetSpectrum {
    TargetSpectrum::Mirror
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub a: DecayFamily,
    pub b: InputFamily,
    #[serde(default = "default_space")]
    pub space: SpaceTag,
}

fn default_space() -> SpaceTag {
    SpaceTag::L2
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truncation {
    #[serde(rename = "N")]
    pub n: usize,
    /// Product truncation; the family default when absent.
    #[serde(rename = "M", default)]
    pub m: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// RK4 step; the stability limit when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Overrides the ensemble space for norms.
    #[serde(default)]
    pub space: Option<SpaceTag>,
    #[serde(default = "default_initial")]
    pub initial: InitialCondition,
}

fn default_t_end() -> f64 {
    10.0
}

fn default_record_every() -> usize {
    10
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_initial() -> InitialCondition {
    InitialCondition::Ones
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            t_end: default_t_end(),
            dt: None,
            record_every: default_record_every(),
            epsilon: default_epsilon(),
            space: None,
            initial: default_initial(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeasibilitySection {
    /// Candidate decay exponents for the decay-class test.
    #[serde(default = "default_ds")]
    pub d: Vec<f64>,
}

fn default_ds() -> Vec<f64> {
    vec![1.5, 2.5]
}

impl Default for FeasibilitySection {
    fn default() -> Self {
        FeasibilitySection { d: default_ds() }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Number of placed modes; all `N` when absent.
    #[serde(default)]
    pub n_gain: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

impl OutputSection {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig, Failure> {
        let mut table: Table = text
            .parse()
            .map_err(|e| Failure::Usage(format!("malformed config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e| Failure::Usage(format!("invalid config: {e}")))?;
        if let Some(m) = cfg.truncation.m {
            if m < cfg.truncation.n {
                return Err(Failure::Usage(format!(
                    "truncation.M = {m} must be at least truncation.N = {}",
                    cfg.truncation.n
                )));
            }
        }
        Ok(cfg)
    }

    pub fn spec(&self) -> EnsembleSpec {
        EnsembleSpec::new(
            self.ensemble.a.clone(),
            self.ensemble.b.clone(),
            self.truncation.n,
            self.ensemble.space,
        )
    }

    pub fn ensemble(&self) -> Result<MaterializedEnsemble, Failure> {
        self.spec()
            .materialize()
            .map_err(|e| Failure::Validation(e.to_string()))
    }

    pub fn product_truncation(&self, ens: &MaterializedEnsemble) -> usize {
        self.truncation
            .m
            .unwrap_or_else(|| ensemble_place::gain::default_product_truncation(ens))
    }
}

/// `a.b.c=v`, where `v` is read as a TOML value and falls back to a string.
fn apply_override(table: &mut Table, assignment: &str) -> Result<(), Failure> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("override `{assignment}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Failure::Usage(format!("empty key in override `{assignment}`")));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut cursor = table;
    for k in parents {
        let entry = cursor
            .entry(k.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Failure::Usage(format!("override `{assignment}`: `{k}` is not a table")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
