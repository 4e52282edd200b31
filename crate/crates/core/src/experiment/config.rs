//! Experiment configuration: one TOML file drives every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::pipeline::Speeds;
use crate::bo::BoConfig;
use crate::ecg::{ActionPotentialParams, Electrode, IntracellularConductivity};
use crate::mesh::{FiberRule, GeometryKind, GeometryParams};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub eikonal: Speeds,
    #[serde(default)]
    pub conductivity: IntracellularConductivity,
    #[serde(default)]
    pub action_potential: ActionPotentialParams,
    #[serde(default)]
    pub ecg: EcgConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub bo: BoConfig,
    #[serde(default)]
    pub truth: TruthConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
}

/// HF mesh from a synthetic generator or a file; the LF mesh is read from a
/// file or obtained by coarsening the HF mesh. A `[geometry]` table replaces
/// the default geometry as a whole.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub synthetic: Option<GeometryParams>,
    pub hf_mesh: Option<PathBuf>,
    pub hf_fibers: Option<PathBuf>,
    pub lf_mesh: Option<PathBuf>,
    pub lf_fibers: Option<PathBuf>,
    /// Fibers for file meshes that carry none.
    pub fiber_rule: Option<FiberRule>,
    /// Target edge length of the coarsened LF mesh, in HF mean edge lengths.
    #[serde(default = "default_coarsen_factor")]
    pub lf_coarsen_factor: f64,
}

fn default_coarsen_factor() -> f64 {
    2.0
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let mut synthetic = GeometryParams::ellipsoid([28.0, 24.0, 45.0], 0);
        synthetic.frequency = Some(14);
        GeometryConfig {
            synthetic: Some(synthetic),
            hf_mesh: None,
            hf_fibers: None,
            lf_mesh: None,
            lf_fibers: None,
            fiber_rule: None,
            lf_coarsen_factor: default_coarsen_factor(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EcgConfig {
    /// Sampling step (ms).
    pub dt: f64,
    /// Simulated window as a multiple of the reference activation time.
    pub duration_factor: f64,
    /// Explicit electrode positions; the scaled standard layout otherwise.
    /// Must list RA, LA, LL, V1..V6 in this order.
    pub electrodes: Option<Vec<Electrode>>,
}

impl Default for EcgConfig {
    fn default() -> Self {
        EcgConfig { dt: 1.0, duration_factor: 1.2, electrodes: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub nu: f64,
    /// Eigenpairs kept; `min(256, n / 4)` when unset.
    pub n_eig: Option<usize>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { nu: 2.5, n_eig: None }
    }
}

/// Exactly one of `node`, `coordinate` or `direction`. A direction is taken
/// from the bounding-box centre and scaled by the half-extents. A `[truth]`
/// table replaces the default direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub node: Option<usize>,
    pub coordinate: Option<[f64; 3]>,
    pub direction: Option<[f64; 3]>,
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig { node: None, coordinate: None, direction: Some([1.0, 0.4, 0.1]) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub seeds: Vec<u64>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig { seeds: (0..20).collect() }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            geometry: GeometryConfig::default(),
            eikonal: Speeds::default(),
            conductivity: IntracellularConductivity::default(),
            action_potential: ActionPotentialParams::default(),
            ecg: EcgConfig::default(),
            kernel: KernelConfig::default(),
            bo: BoConfig::default(),
            truth: TruthConfig::default(),
            output: OutputConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a config file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.check_files()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let g = &mut self.geometry;
        for p in [&mut g.hf_mesh, &mut g.hf_fibers, &mut g.lf_mesh, &mut g.lf_fibers].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.output.dir.is_relative() {
            self.output.dir = base.join(&self.output.dir);
        }
    }

    /// Referenced input files must exist.
    pub fn check_files(&self) -> Result<()> {
        let g = &self.geometry;
        for p in [&g.hf_mesh, &g.hf_fibers, &g.lf_mesh, &g.lf_fibers].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let g = &self.geometry;
        match (&g.synthetic, &g.hf_mesh) {
            (Some(_), Some(_)) => return bad("geometry: give either `synthetic` or `hf_mesh`, not both".into()),
            (None, None) => return bad("geometry: one of `synthetic` or `hf_mesh` is required".into()),
            (Some(s), None) => {
                let radii = if s.kind == GeometryKind::Icosphere { &s.radii[..1] } else { &s.radii[..] };
                if radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
                    return bad(format!("geometry: radii must be positive, got {:?}", s.radii));
                }
                if g.hf_fibers.is_some() {
                    return bad("geometry: `hf_fibers` only applies to `hf_mesh`".into());
                }
            }
            (None, Some(_)) => {}
        }
        if g.lf_fibers.is_some() && g.lf_mesh.is_none() {
            return bad("geometry: `lf_fibers` only applies to `lf_mesh`".into());
        }
        if !(g.lf_coarsen_factor > 1.0) {
            return bad(format!("geometry: lf_coarsen_factor must be > 1, got {}", g.lf_coarsen_factor));
        }
        if !(self.eikonal.v_l > 0.0 && self.eikonal.v_t > 0.0 && self.eikonal.v_l >= self.eikonal.v_t) {
            return bad(format!("eikonal: need v_l >= v_t > 0, got {:?}", self.eikonal));
        }
        self.conductivity.validate().map_err(|e| Error::Config(format!("conductivity: {e}")))?;
        self.action_potential.validate().map_err(|e| Error::Config(format!("action_potential: {e}")))?;
        if !(self.ecg.dt > 0.0) || !(self.ecg.duration_factor >= 1.0) {
            return bad(format!("ecg: need dt > 0 and duration_factor >= 1, got {:?}", self.ecg));
        }
        if let Some(el) = &self.ecg.electrodes {
            if el.len() != 9 {
                return bad(format!("ecg: expected 9 electrodes (RA, LA, LL, V1..V6), got {}", el.len()));
            }
        }
        if !(self.kernel.nu > 0.0) || self.kernel.n_eig == Some(0) {
            return bad(format!("kernel: need nu > 0 and n_eig >= 1, got {:?}", self.kernel));
        }
        self.bo.validate().map_err(|e| Error::Config(format!("bo: {e}")))?;
        let t = &self.truth;
        let given = [t.node.is_some(), t.coordinate.is_some(), t.direction.is_some()];
        if given.iter().filter(|b| **b).count() != 1 {
            return bad("truth: give exactly one of `node`, `coordinate` or `direction`".into());
        }
        if let Some(d) = t.direction {
            if !(d.iter().map(|x| x * x).sum::<f64>() > 0.0) {
                return bad("truth: direction must be nonzero".into());
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, first 16 digits. The output
    /// directory is not part of the experiment and is left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir = PathBuf::new();
        short_hash(&serde_json::to_vec(&c).expect("config serializes"))
    }

    /// Hash of the parts that determine the preprocessed artifacts.
    pub fn preprocess_hash(&self) -> String {
        let key = (&self.geometry, &self.ecg.electrodes, &self.kernel);
        short_hash(&serde_json::to_vec(&key).expect("config serializes"))
    }

    /// Hash of the parts that determine the reference ECG and truth record.
    pub fn reference_hash(&self) -> String {
        let key = (
            &self.geometry,
            &self.eikonal,
            &self.conductivity,
            &self.action_potential,
            &self.ecg,
            &self.truth,
        );
        short_hash(&serde_json::to_vec(&key).expect("config serializes"))
    }

    pub fn benchmark_seeds(&self) -> Result<&[u64]> {
        if self.benchmark.seeds.len() < 2 {
            return Err(Error::Config(format!(
                "benchmark needs at least 2 seeds, got {}",
                self.benchmark.seeds.len()
            )));
        }
        Ok(&self.benchmark.seeds)
    }
}

pub(crate) fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(short_hash(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output.dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.bo.beta = 2.5;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.preprocess_hash(), b.preprocess_hash());
        b.kernel.n_eig = Some(64);
        assert_ne!(a.preprocess_hash(), b.preprocess_hash());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(ExperimentConfig::from_toml("[bo]\nbeat = 2.0\n"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml("[bo]\nbeta = -1.0\n"), Err(Error::Config(_))));
        let two = "[truth]\nnode = 3\ncoordinate = [1.0, 2.0, 3.0]\n";
        assert!(matches!(ExperimentConfig::from_toml(two), Err(Error::Config(_))));
    }

    #[test]
    fn truth_table_replaces_the_default_direction() {
        let cfg = ExperimentConfig::from_toml("[truth]\nnode = 12\n").unwrap();
        assert_eq!(cfg.truth, TruthConfig { node: Some(12), coordinate: None, direction: None });
        assert!(ExperimentConfig::from_toml("[truth]\n").is_err());
    }

    #[test]
    fn geometry_table_replaces_the_default_mesh() {
        let text = "[geometry.synthetic]\nkind = \"icosphere\"\nradii = [30.0, 30.0, 30.0]\nsubdivision = 3\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.geometry.synthetic.unwrap().kind, GeometryKind::Icosphere);
        assert_eq!(cfg.geometry.lf_coarsen_factor, 2.0);
    }

    #[test]
    fn short_seed_list_is_rejected_for_benchmarks() {
        let mut cfg = ExperimentConfig::default();
        cfg.benchmark.seeds = vec![7];
        assert!(matches!(cfg.benchmark_seeds(), Err(Error::Config(_))));
    }

    #[test]
    fn relative_paths_resolve_against_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("heart.off"), "OFF\n").unwrap();
        let path = dir.path().join("exp.toml");
        let text = "[geometry]\nhf_mesh = \"heart.off\"\n[output]\ndir = \"results\"\n";
        std::fs::write(&path, text).unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.geometry.hf_mesh.as_deref(), Some(dir.path().join("heart.off").as_path()));
        assert_eq!(cfg.output.dir, dir.path().join("results"));
    }

    #[test]
    fn missing_input_file_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        let mut cfg = ExperimentConfig::default();
        cfg.geometry.synthetic = None;
        cfg.geometry.hf_mesh = Some("absent.vtk".into());
        std::fs::write(&path, cfg.to_toml()).unwrap();
        assert!(matches!(ExperimentConfig::load(&path), Err(Error::Config(_))));
    }
}
