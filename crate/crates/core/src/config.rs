//! Experiment configuration: a versioned, schema-checked JSON document that
//! pins everything a run needs.  Identical config plus seed reproduces
//! byte-identical CSV bodies; all randomness flows from the single seed
//! through purpose-keyed counter-based generators.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bmo::EnsemblePolicy;
use crate::grid::BoxGrid;
use crate::operators::{LaplaceSymbol, OperatorDescriptor, OperatorKind};
use crate::potential::{Potential, PotentialSpec, RhExponent, RhoScan};
use crate::verify::ProbePolicy;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dimension: usize,
    pub points_per_axis: usize,
    pub box_half_width: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    1.0
}

impl GridConfig {
    pub fn to_grid(&self) -> Result<BoxGrid> {
        BoxGrid::new(self.dimension, self.points_per_axis, self.box_half_width, self.margin)
    }
}

#[derive(Debug, Clone)]
pub struct PotentialConfig {
    pub spec: PotentialSpec,
    /// Reverse Hölder exponent; omitted or null means the infinite sentinel.
    pub q_exponent: Option<f64>,
}

// the potential object inlines the preset tag next to q_exponent, which
// serde cannot express with `flatten` + `deny_unknown_fields`; the config
// format is JSON by contract, so route through a Value
impl Serialize for PotentialConfig {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut v = serde_json::to_value(&self.spec).map_err(serde::ser::Error::custom)?;
        if let Some(q) = self.q_exponent {
            v.as_object_mut()
                .expect("potential spec serializes to an object")
                .insert("q_exponent".into(), serde_json::json!(q));
        }
        v.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PotentialConfig {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let mut v = serde_json::Value::deserialize(deserializer)?;
        let q_exponent = match v.get("q_exponent") {
            None | Some(serde_json::Value::Null) => None,
            Some(q) => Some(q.as_f64().ok_or_else(|| {
                serde::de::Error::custom("q_exponent must be a number or null")
            })?),
        };
        if let Some(obj) = v.as_object_mut() {
            obj.remove("q_exponent");
        }
        let spec: PotentialSpec =
            serde_json::from_value(v).map_err(serde::de::Error::custom)?;
        Ok(PotentialConfig { spec, q_exponent })
    }
}

impl PotentialConfig {
    pub fn rh_exponent(&self) -> RhExponent {
        match self.q_exponent {
            Some(q) => RhExponent::Finite(q),
            None => RhExponent::Infinite,
        }
    }

    pub fn build(&self, grid: BoxGrid) -> Result<Potential> {
        Potential::build(&self.spec, grid, self.rh_exponent())
    }
}

/// The checks a run can execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Rho,
    Cover,
    Spectrum,
    Bmo,
    T1,
    Verify,
    Norms,
}

impl CheckKind {
    pub fn name(&self) -> &'static str {
        match self {
            CheckKind::Rho => "rho",
            CheckKind::Cover => "cover",
            CheckKind::Spectrum => "spectrum",
            CheckKind::Bmo => "bmo",
            CheckKind::T1 => "t1",
            CheckKind::Verify => "verify",
            CheckKind::Norms => "norms",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "rho" => CheckKind::Rho,
            "cover" => CheckKind::Cover,
            "spectrum" => CheckKind::Spectrum,
            "bmo" => CheckKind::Bmo,
            "t1" | "t1-check" => CheckKind::T1,
            "verify" => CheckKind::Verify,
            "norms" | "op-norm" => CheckKind::Norms,
            other => return Err(Error::Config(format!("unknown check '{other}'"))),
        })
    }
}

/// Tolerances a config may override.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Accepted relative change of fitted constants under refinement.
    pub stability: f64,
    /// Margin-sensitivity threshold above which T1 is truncation-dominated.
    pub sensitivity_threshold: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { stability: 0.25, sensitivity_threshold: 0.05 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub grid: GridConfig,
    pub potential: PotentialConfig,
    #[serde(default)]
    pub operators: Vec<OperatorDescriptor>,
    #[serde(default)]
    pub ensemble: EnsemblePolicy,
    #[serde(default)]
    pub probes: ProbePolicy,
    pub checks: Vec<CheckKind>,
    #[serde(default = "default_alphas")]
    pub alpha_values: Vec<f64>,
    #[serde(default = "default_maximal_points")]
    pub maximal_points: usize,
    /// Run the shrunken-box truncation probe on T1 fields.
    #[serde(default)]
    pub margin_sensitivity: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub output_dir: String,
}

fn default_alphas() -> Vec<f64> {
    vec![0.0, 0.25, 0.5]
}

fn default_maximal_points() -> usize {
    64
}

impl ExperimentConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_slice(bytes)
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let grid = self.grid.to_grid()?;
        // dry-run the potential, including the dense-size cap
        let _ = self.potential.build(grid)?;
        if self.checks.is_empty() {
            return Err(Error::Config("no checks requested".into()));
        }
        for d in &self.operators {
            d.validate(grid.n)?;
        }
        for &a in &self.alpha_values {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("alpha {a} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the raw config bytes, hex-encoded.
    pub fn hash_of(bytes: &[u8]) -> String {
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Deterministic per-purpose seed derived from the master seed.
    pub fn stream_seed(&self, purpose: &str) -> u64 {
        derive_seed(self.seed, purpose)
    }

    pub fn rho_scan(&self) -> RhoScan {
        RhoScan::default()
    }

    /// The operator suite exercised when the config lists none.
    pub fn effective_operators(&self) -> Vec<OperatorDescriptor> {
        if !self.operators.is_empty() {
            return self.operators.clone();
        }
        default_operators(self.grid.dimension)
    }
}

/// Seed stream keyed by purpose string.
pub fn derive_seed(master: u64, purpose: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(purpose.as_bytes());
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

/// Default operator suite: one representative of every kind.
pub fn default_operators(dimension: usize) -> Vec<OperatorDescriptor> {
    let mut ops = vec![
        OperatorDescriptor::new(OperatorKind::HeatMaximal),
        OperatorDescriptor::new(OperatorKind::PoissonMaximal { sigma: 0.5 }),
        OperatorDescriptor::new(OperatorKind::GHeat),
        OperatorDescriptor::new(OperatorKind::GPoisson),
        OperatorDescriptor::new(OperatorKind::LaplaceMultiplier {
            symbol: LaplaceSymbol::ExpDecay { rate: 1.0 },
        }),
    ];
    for axis in 0..dimension {
        ops.push(OperatorDescriptor::new(OperatorKind::RieszComponent { axis }));
    }
    ops.push(OperatorDescriptor::new(OperatorKind::NegativePower { gamma: 0.5 }));
    ops
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_json() -> String {
        r#"{
            "schema_version": 1,
            "seed": 42,
            "grid": {"dimension": 2, "points_per_axis": 24, "box_half_width": 3.0, "margin": 1.0},
            "potential": {"preset": "constant", "amplitude": 1.0},
            "checks": ["rho", "spectrum"],
            "output_dir": "out"
        }"#
        .to_string()
    }

    #[test]
    fn parses_and_validates() {
        let cfg = ExperimentConfig::from_json(sample_json().as_bytes()).unwrap();
        assert_eq!(cfg.schema_version, 1);
        assert_eq!(cfg.checks.len(), 2);
        assert!(!cfg.effective_operators().is_empty());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = sample_json().replace("\"seed\": 42", "\"seed\": 42, \"bogus\": 1");
        let err = ExperimentConfig::from_json(bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn wrong_schema_version_rejected() {
        let bad = sample_json().replace("\"schema_version\": 1", "\"schema_version\": 7");
        let err = ExperimentConfig::from_json(bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("schema_version"), "{err}");
    }

    #[test]
    fn dense_cap_rejected_through_config() {
        let bad = r#"{
            "schema_version": 1,
            "seed": 1,
            "grid": {"dimension": 3, "points_per_axis": 64, "box_half_width": 3.0},
            "potential": {"preset": "dense_samples", "values": []},
            "checks": ["rho"],
            "output_dir": "out"
        }"#;
        let err = ExperimentConfig::from_json(bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("dense cap"), "{err}");
    }

    #[test]
    fn seed_streams_differ_by_purpose() {
        let a = derive_seed(42, "ensemble");
        let b = derive_seed(42, "probes");
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(42, "ensemble"));
    }

    #[test]
    fn descriptor_round_trip() {
        let ops = default_operators(3);
        let json = serde_json::to_string(&ops).unwrap();
        let back: Vec<OperatorDescriptor> = serde_json::from_str(&json).unwrap();
        assert_eq!(back.len(), ops.len());
        let hash1 = ExperimentConfig::hash_of(json.as_bytes());
        let hash2 = ExperimentConfig::hash_of(json.as_bytes());
        assert_eq!(hash1, hash2);
    }
}
