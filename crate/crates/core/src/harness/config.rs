//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assignment::AssignmentConfig;
use crate::backhaul::{parse_graph, BackhaulGraph, DeskGraphConfig, NMaxMinConfig};
use crate::clustering::ClusterConfig;
use crate::error::{Error, Result};
use crate::net_model::{load_instance, DropLayout, HexLayout, NetworkInstance};
use crate::stochastic::StochasticConfig;
use crate::utility::UtilityConfig;
use crate::wmmse::StopRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Wmmse,
    JointSched,
    JointAssign,
    SparseWmmse,
    Nmaxmin,
    StochasticWmmse,
    NnWmmse,
    SvdMmseTdma,
    RandomSched,
    OneSampleWmmse,
    MeanWmmse,
    ProjectedSgd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 12] = [
        Algorithm::Wmmse,
        Algorithm::JointSched,
        Algorithm::JointAssign,
        Algorithm::SparseWmmse,
        Algorithm::Nmaxmin,
        Algorithm::StochasticWmmse,
        Algorithm::NnWmmse,
        Algorithm::SvdMmseTdma,
        Algorithm::RandomSched,
        Algorithm::OneSampleWmmse,
        Algorithm::MeanWmmse,
        Algorithm::ProjectedSgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Wmmse => "wmmse",
            Algorithm::JointSched => "joint-sched",
            Algorithm::JointAssign => "joint-assign",
            Algorithm::SparseWmmse => "sparse-wmmse",
            Algorithm::Nmaxmin => "nmaxmin",
            Algorithm::StochasticWmmse => "stochastic-wmmse",
            Algorithm::NnWmmse => "nn-wmmse",
            Algorithm::SvdMmseTdma => "svd-mmse-tdma",
            Algorithm::RandomSched => "random-sched",
            Algorithm::OneSampleWmmse => "one-sample-wmmse",
            Algorithm::MeanWmmse => "mean-wmmse",
            Algorithm::ProjectedSgd => "projected-sgd",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{name}`")))
    }

    pub fn needs_graph(self) -> bool {
        self == Algorithm::Nmaxmin
    }
}

/// Where the wireless instance comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InstanceSpec {
    Hex(HexLayout),
    Drop(DropLayout),
    /// Instance file; the seed is not used.
    File { path: PathBuf },
}

/// Where the backhaul graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GraphSpec {
    Desk(DeskGraphConfig),
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateUnits {
    #[default]
    Nats,
    Bits,
}

impl RateUnits {
    pub fn scale(self) -> f64 {
        match self {
            RateUnits::Nats => 1.0,
            RateUnits::Bits => std::f64::consts::LOG2_E,
        }
    }
}

/// Partial-CSI protocol of the stochastic algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsiConfig {
    /// Links within this many dB of the user's direct link are estimated;
    /// the rest are known only statistically.
    pub eta_db: f64,
    pub gamma: f64,
    /// Training SNR; the layout's transmit SNR when absent.
    pub snr_db: Option<f64>,
}

impl Default for CsiConfig {
    fn default() -> Self {
        CsiConfig { eta_db: 6.0, gamma: 1.0, snr_db: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub units: RateUnits,
    pub instance: Option<InstanceSpec>,
    pub graph: Option<GraphSpec>,
    pub utility: UtilityConfig,
    pub stop: StopRule,
    /// Random starts of plain WMMSE (best kept).
    pub inits: usize,
    /// Slots of the scheduling algorithms.
    pub slots: usize,
    /// Streams of the SVD-TDMA baseline.
    pub streams: usize,
    /// Users per BS and slot of the random scheduler (`ceil(n_q / T)` when
    /// absent).
    pub users_per_slot: Option<usize>,
    pub assignment: AssignmentConfig,
    pub cluster: ClusterConfig,
    pub nmaxmin: NMaxMinConfig,
    pub stochastic: StochasticConfig,
    pub csi: CsiConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithm: Algorithm::Wmmse,
            seeds: vec![0],
            output: PathBuf::from("out"),
            units: RateUnits::Nats,
            instance: None,
            graph: None,
            utility: UtilityConfig::sum_rate(),
            stop: StopRule::default(),
            inits: 1,
            slots: 1,
            streams: 1,
            users_per_slot: None,
            assignment: AssignmentConfig::default(),
            cluster: ClusterConfig::default(),
            nmaxmin: NMaxMinConfig::default(),
            stochastic: StochasticConfig::default(),
            csi: CsiConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(b) = base {
            cfg.resolve_paths(b);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent())
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(InstanceSpec::File { path }) = &mut self.instance {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if let Some(GraphSpec::File { path }) = &mut self.graph {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.algorithm.needs_graph() {
            match &self.graph {
                None => return Err(Error::Config(format!("`{}` needs a [graph] section", self.algorithm.name()))),
                Some(GraphSpec::File { path }) if !path.is_file() => {
                    return Err(Error::Config(format!("graph file {} does not exist", path.display())))
                }
                _ => {}
            }
        } else {
            match &self.instance {
                None => return Err(Error::Config(format!("`{}` needs an [instance] section", self.algorithm.name()))),
                Some(InstanceSpec::File { path }) if !path.is_file() => {
                    return Err(Error::Config(format!("instance file {} does not exist", path.display())))
                }
                _ => {}
            }
        }
        if self.inits == 0 || self.slots == 0 || self.streams == 0 {
            return Err(Error::Config("inits, slots and streams must be positive".into()));
        }
        self.utility.validate()?;
        self.stochastic.validate()
    }

    pub fn instance(&self, seed: u64) -> Result<NetworkInstance> {
        match &self.instance {
            Some(InstanceSpec::Hex(h)) => h.generate(seed),
            Some(InstanceSpec::Drop(d)) => d.generate(seed),
            Some(InstanceSpec::File { path }) => load_instance(path),
            None => Err(Error::Config("no instance configured".into())),
        }
    }

    pub fn graph(&self, seed: u64) -> Result<BackhaulGraph> {
        match &self.graph {
            Some(GraphSpec::Desk(d)) => crate::backhaul::desk_graph(d, seed),
            Some(GraphSpec::File { path }) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                parse_graph(&text)
            }
            None => Err(Error::Config("no graph configured".into())),
        }
    }

    /// Transmit SNR (dB) of the configured layout.
    pub fn layout_snr_db(&self) -> Option<f64> {
        match &self.instance {
            Some(InstanceSpec::Hex(h)) => Some(h.snr_db),
            Some(InstanceSpec::Drop(d)) => Some(d.snr_db),
            _ => None,
        }
    }

    /// Canonical TOML of the configuration.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 (hex) of the canonical TOML with the seed list and output
    /// directory removed, so every seed of a sweep shares one hash.
    pub fn hash(&self) -> Result<String> {
        let canon = ExperimentConfig { seeds: vec![0], output: PathBuf::new(), ..self.clone() };
        Ok(hex::encode(Sha256::digest(canon.to_toml()?.as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::from_toml(
            "algorithm = \"joint-sched\"\nseeds = [1, 2]\nslots = 2\n[instance]\nkind = \"drop\"\nnum_bs = 2\nnum_users = 4\n",
            None,
        )
        .unwrap();
        assert_eq!(cfg.algorithm, Algorithm::JointSched);
        match cfg.instance {
            Some(InstanceSpec::Drop(d)) => {
                assert_eq!((d.num_bs, d.num_users), (2, 4));
                assert_eq!(d.tx_antennas, DropLayout::default().tx_antennas);
            }
            other => panic!("unexpected instance {other:?}"),
        }
    }

    #[test]
    fn unknown_algorithm_is_a_config_error() {
        let e = ExperimentConfig::from_toml("algorithm = \"magic\"\n[instance]\nkind = \"drop\"\n", None).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(Algorithm::parse("magic").is_err());
        for a in Algorithm::ALL {
            assert_eq!(Algorithm::parse(a.name()).unwrap(), a);
        }
    }

    #[test]
    fn missing_paths_are_rejected() {
        let e = ExperimentConfig::from_toml("[instance]\nkind = \"file\"\npath = \"/nonexistent/x.toml\"\n", None);
        assert!(matches!(e, Err(Error::Config(_))));
        let e = ExperimentConfig::from_toml("algorithm = \"nmaxmin\"\n", None);
        assert!(matches!(e, Err(Error::Config(_))));
    }

    #[test]
    fn canonical_form_round_trips_and_hash_ignores_seeds() {
        let mut cfg = ExperimentConfig {
            instance: Some(InstanceSpec::Hex(HexLayout::default())),
            ..Default::default()
        };
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap(), None).unwrap();
        assert_eq!(back, cfg);
        let h = cfg.hash().unwrap();
        cfg.seeds = vec![5, 6];
        assert_eq!(cfg.hash().unwrap(), h);
        cfg.slots = 3;
        assert_ne!(cfg.hash().unwrap(), h);
    }
}
