use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use nnpot_core::analysis::ScalingMode;
use nnpot_core::classical::LJParams;
use nnpot_core::decomp::Scheme;
use nnpot_core::deeppot::data::OracleParams;
use nnpot_core::deeppot::DPConfig;
use nnpot_core::deeppot::TrainParams;
use nnpot_core::engine::{NnGroup, Potential};

/// One file holds the shared settings and a section per command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub train: TrainSection,
    pub run: RunSection,
    pub validate_dd: ValidateSection,
    pub sweep: SweepSection,
    pub fit_scaling: FitSection,
    pub gyrate: GyrateSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            workers: 1,
            out: PathBuf::from("out"),
            train: TrainSection::default(),
            run: RunSection::default(),
            validate_dd: ValidateSection::default(),
            sweep: SweepSection::default(),
            fit_scaling: FitSection::default(),
            gyrate: GyrateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub model: DPConfig,
    /// Each entry yields one group of labelled frames.
    pub datasets: Vec<OracleParams>,
    pub params: TrainParams,
    /// Frames held out from the end of each group.
    pub n_validation: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            model: DPConfig {
                n_max: 48,
                n_attn: 0,
                ..DPConfig::default()
            },
            datasets: nnpot_core::deeppot::data::bulk_and_cluster(),
            params: TrainParams::default(),
            n_validation: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SystemSpec {
    Lattice {
        n_per_axis: usize,
        density: f64,
        #[serde(default)]
        species_pattern: Vec<usize>,
    },
    /// Lattice whose atoms within `radius` of the box center get `inner_species`
    /// and all others `outer_species`.
    Droplet {
        n_per_axis: usize,
        density: f64,
        radius: f64,
        inner_species: usize,
        outer_species: usize,
    },
    Xyz {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    /// Model file; needed for DP potentials.
    pub model: Option<PathBuf>,
    pub system: SystemSpec,
    pub lj: LJParams,
    pub potential: Potential,
    pub nn_group: NnGroup,
    pub n_steps: usize,
    pub dt: f64,
    pub output_every: usize,
    /// Initial temperature; velocities from an xyz file are kept when negative.
    pub temperature: f64,
    pub equilibration_steps: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            model: None,
            system: SystemSpec::Lattice {
                n_per_axis: 4,
                density: 0.8,
                species_pattern: vec![0],
            },
            lj: LJParams {
                rc: 2.0,
                ..LJParams::default()
            },
            potential: Potential::Classical,
            nn_group: NnGroup::All,
            n_steps: 100,
            dt: 0.002,
            output_every: 10,
            temperature: 1.0,
            equilibration_steps: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateSection {
    pub model: Option<PathBuf>,
    /// Architecture of a freshly initialised model when no file is given.
    pub model_config: DPConfig,
    pub n_configs: usize,
    pub max_atoms: usize,
    pub min_density: f64,
    pub max_density: f64,
    pub ranks: Vec<usize>,
    pub schemes: Vec<Scheme>,
    pub energy_tolerance: f64,
    pub force_tolerance: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection {
            model: None,
            model_config: DPConfig {
                rc: 1.5,
                rcs: 1.1,
                n_max: 64,
                ..DPConfig::default()
            },
            n_configs: 50,
            max_atoms: 256,
            min_density: 0.1,
            max_density: 0.6,
            ranks: vec![1, 2, 3, 4, 8],
            schemes: vec![Scheme::MaskedReduction, Scheme::WideHalo],
            energy_tolerance: 1e-10,
            force_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub model: Option<PathBuf>,
    pub model_config: DPConfig,
    pub mode: ScalingMode,
    /// Lattice edge of the base system (`n³` atoms).
    pub n_per_axis: usize,
    pub density: f64,
    /// Random displacement applied to lattice sites, in lattice spacings.
    pub jitter: f64,
    pub ranks: Vec<usize>,
    pub scheme: Scheme,
    pub repeats: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            model: None,
            model_config: DPConfig::default(),
            mode: ScalingMode::Strong,
            n_per_axis: 16,
            density: 0.8,
            jitter: 0.1,
            ranks: vec![1, 2, 4, 8, 16],
            scheme: Scheme::MaskedReduction,
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSection {
    pub input: Option<PathBuf>,
    pub reference: u32,
    pub mode: ScalingMode,
    /// Extra rank counts to predict.
    pub predict: Vec<u32>,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            input: None,
            reference: 1,
            mode: ScalingMode::Strong,
            predict: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSpec {
    Ids(Vec<u64>),
    Species(Vec<usize>),
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GyrateSection {
    pub trajectory: Option<PathBuf>,
    pub group: GroupSpec,
    /// Stability check window in frames; 0 disables the check.
    pub window: usize,
    pub band: f64,
}

impl Default for GyrateSection {
    fn default() -> Self {
        GyrateSection {
            trajectory: None,
            group: GroupSpec::All,
            window: 0,
            band: 0.25,
        }
    }
}

/// Parses TOML text, failing with every unknown key if any are present.
pub fn parse_config(text: &str) -> Result<Config> {
    let de = toml::Deserializer::new(text);
    let mut unknown = Vec::new();
    let cfg: Config = serde_ignored::deserialize(de, |path| unknown.push(path.to_string())).context("invalid config")?;
    if !unknown.is_empty() {
        bail!("unknown config keys: {}", unknown.join(", "));
    }
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            parse_config(&text).with_context(|| format!("in {}", p.display()))
        }
    }
}
