//! Run configuration: one TOML file with a section per concern, every
//! field defaulted so partial files work. The resolved form is serialized
//! canonically and hashed; that hash stamps every artifact a command emits.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use msfv_core::grf::GrfSpec;
use msfv_core::grid::{build_coarse_layout, CoarseLayout, FineGrid};
use msfv_core::nn::{MlpConfig, TrainConfig};
use msfv_core::transport::TransportConfig;
use msfv_core::tuner::SearchSpace;
use msfv_core::uq::Problem;

use crate::CliError;

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub coarse_nx: usize,
    pub coarse_ny: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { nx: 81, ny: 81, coarse_nx: 9, coarse_ny: 9 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrfSection {
    pub sigma2: f64,
    pub corr_len: f64,
}

impl Default for GrfSection {
    fn default() -> Self {
        GrfSection { sigma2: 1.0, corr_len: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    /// "quarter-five" or "uniform-flow".
    pub problem: String,
    pub n_realizations: usize,
    pub n_training: usize,
    pub master_seed: u64,
    pub validation_fraction: f64,
    #[serde(default = "default_true")]
    pub enforce_deltas: bool,
}

impl Default for CampaignSection {
    fn default() -> Self {
        CampaignSection {
            problem: "quarter-five".into(),
            n_realizations: 1000,
            n_training: 20,
            master_seed: 12345,
            validation_fraction: 0.2,
            enforce_deltas: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub use_batchnorm: bool,
    pub dropout_rate: f64,
    /// Non-positive disables the constraint.
    pub max_norm: f64,
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_dim: 1024,
            use_batchnorm: false,
            dropout_rate: 0.05,
            max_norm: 4.0,
            init_seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    /// Zero means full-batch.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { learning_rate: 1e-3, batch_size: 0, max_epochs: 5000, patience: 100, seed: 13 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportSection {
    pub porosity: f64,
    pub t_end: f64,
    pub cfl: f64,
    pub n_snapshots: usize,
    pub c_inject: f64,
}

impl Default for TransportSection {
    fn default() -> Self {
        let t = TransportConfig::default();
        TransportSection {
            porosity: t.porosity,
            t_end: t.t_end,
            cfl: t.cfl,
            n_snapshots: t.n_snapshots,
            c_inject: t.c_inject,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub budget: usize,
    pub seed: u64,
    pub dropout_lo: f64,
    pub dropout_hi: f64,
    pub learning_rate_lo: f64,
    pub learning_rate_hi: f64,
}

impl Default for TuneSection {
    fn default() -> Self {
        let s = SearchSpace::default();
        TuneSection {
            budget: 20,
            seed: 21,
            dropout_lo: s.dropout.0,
            dropout_hi: s.dropout.1,
            learning_rate_lo: s.learning_rate.0,
            learning_rate_hi: s.learning_rate.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Joined under MSFV_OUT_ROOT when that variable is set and the path
    /// is relative.
    pub dir: String,
    pub histogram_bins: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into(), histogram_bins: 30 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub grid: GridSection,
    pub grf: GrfSection,
    pub campaign: CampaignSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub transport: TransportSection,
    pub tune: TuneSection,
    pub output: OutputSection,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn layout(&self) -> Result<CoarseLayout, CliError> {
        let grid = FineGrid::unit(self.grid.nx, self.grid.ny)?;
        Ok(build_coarse_layout(grid, self.grid.coarse_nx, self.grid.coarse_ny)?)
    }

    pub fn grf_spec(&self) -> Result<GrfSpec, CliError> {
        Ok(GrfSpec::new(self.grf.sigma2, self.grf.corr_len)?)
    }

    pub fn problem(&self) -> Result<Problem, CliError> {
        match self.campaign.problem.as_str() {
            "quarter-five" => Ok(Problem::QuarterFive),
            "uniform-flow" => Ok(Problem::UniformFlow),
            other => Err(CliError::config(format!(
                "unknown problem {other:?} (expected quarter-five or uniform-flow)"
            ))),
        }
    }

    /// Architecture template; input/output dims are filled from the data.
    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig {
            input_dim: 0,
            hidden_dim: self.model.hidden_dim,
            output_dim: 0,
            use_batchnorm: self.model.use_batchnorm,
            dropout_rate: self.model.dropout_rate,
            max_norm: (self.model.max_norm > 0.0).then_some(self.model.max_norm),
            init_seed: self.model.init_seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: (self.train.batch_size > 0).then_some(self.train.batch_size),
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            seed: self.train.seed,
            ..Default::default()
        }
    }

    pub fn transport_config(&self) -> TransportConfig {
        TransportConfig {
            porosity: self.transport.porosity,
            t_end: self.transport.t_end,
            cfl: self.transport.cfl,
            n_snapshots: self.transport.n_snapshots,
            c_inject: self.transport.c_inject,
        }
    }

    pub fn search_space(&self) -> SearchSpace {
        SearchSpace {
            dropout: (self.tune.dropout_lo, self.tune.dropout_hi),
            learning_rate: (self.tune.learning_rate_lo, self.tune.learning_rate_hi),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        let dir = PathBuf::from(&self.output.dir);
        match std::env::var_os("MSFV_OUT_ROOT") {
            Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
            _ => dir,
        }
    }

    /// Canonical serialization of the fully resolved parameters; its hash
    /// identifies the run. Timestamps stay out so reruns hash identically.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("resolved config serializes")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Serialize)]
struct ManifestMeta<'a> {
    config_path: &'a str,
    hash: &'a str,
    tool_version: &'a str,
    created_unix: u64,
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    manifest: ManifestMeta<'a>,
    resolved: &'a Config,
}

/// Writes `manifest.toml` into the output directory. The hash covers only
/// the resolved parameters, never the timestamp, so artifacts from reruns
/// stay byte-identical.
pub fn write_manifest(cfg: &Config, config_path: &Path, out_dir: &Path) -> Result<String, CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::config(format!("{}: {e}", out_dir.display())))?;
    let hash = cfg.hash();
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let file = ManifestFile {
        manifest: ManifestMeta {
            config_path: &config_path.display().to_string(),
            hash: &hash,
            tool_version: env!("CARGO_PKG_VERSION"),
            created_unix: created,
        },
        resolved: cfg,
    };
    let text = toml::to_string(&file).expect("manifest serializes");
    std::fs::write(out_dir.join("manifest.toml"), text)
        .map_err(|e| CliError::config(format!("{}: {e}", out_dir.display())))?;
    Ok(hash)
}
