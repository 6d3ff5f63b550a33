//! Experiment configuration in TOML. Unknown keys are rejected at every level.
//! Every component seed is derived from the single global `seed`, so
//! section-level `seed` fields are overwritten when the config is resolved.

use std::path::{Path, PathBuf};

use hcnn::datagen::{P3Spec, VolumeSpec, ROI_COUNT};
use hcnn::geometry::{GridSpec, RadialSpec};
use hcnn::network::{Architecture, NetworkSpec, TrainConfig, Variant};
use hcnn::seed::derive_seed;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::format::sha256_hex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    P3Classify,
    SyntheticDmriClassify,
    Verify,
    Permtest,
    GenData,
    Eap,
}

/// Where the samples of a dataset come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSpec {
    P3(P3Spec),
    Volumes(VolumeSpec),
}

impl DataSpec {
    pub fn grid(&self) -> &GridSpec {
        match self {
            DataSpec::P3(s) => &s.grid,
            DataSpec::Volumes(s) => &s.grid,
        }
    }

    pub fn validate(&self) -> hcnn::Result<()> {
        match self {
            DataSpec::P3(s) => s.validate(),
            DataSpec::Volumes(s) => s.validate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "TrainSection::default_epochs")]
    pub epochs: usize,
    #[serde(default = "TrainSection::default_batch")]
    pub batch_size: usize,
    #[serde(default = "TrainSection::default_lr")]
    pub learning_rate: f64,
    #[serde(default = "TrainSection::default_decay")]
    pub decay: f64,
    #[serde(default = "TrainSection::default_decay_every")]
    pub decay_every: usize,
    #[serde(default = "TrainSection::default_true")]
    pub recalibrate_bn: bool,
    #[serde(default)]
    pub stop_at_train_acc: Option<f64>,
    /// 0 or 1 trains on a single stratified split; k ≥ 2 cross-validates.
    #[serde(default)]
    pub folds: usize,
    /// Held-out fraction of the single-split mode.
    #[serde(default = "TrainSection::default_holdout")]
    pub holdout: f64,
    /// Dataset artifact to train on, inside the output directory.
    #[serde(default = "TrainSection::default_dataset")]
    pub dataset: String,
}

impl TrainSection {
    fn default_epochs() -> usize {
        20
    }
    fn default_batch() -> usize {
        32
    }
    fn default_lr() -> f64 {
        0.1
    }
    fn default_decay() -> f64 {
        0.1
    }
    fn default_decay_every() -> usize {
        30
    }
    fn default_true() -> bool {
        true
    }
    fn default_holdout() -> f64 {
        0.2
    }
    fn default_dataset() -> String {
        "dataset".into()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            decay: self.decay,
            decay_every: self.decay_every,
            seed,
            recalibrate_bn: self.recalibrate_bn,
            stop_at_train_acc: self.stop_at_train_acc,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields default")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Random (signal, mask) pairs per equivariance check.
    #[serde(default = "VerifySection::default_pairs")]
    pub equivariance_pairs: usize,
    /// Random signals re-applied through an identified mask.
    #[serde(default = "VerifySection::default_closure")]
    pub closure_signals: usize,
}

impl VerifySection {
    fn default_pairs() -> usize {
        10
    }
    fn default_closure() -> usize {
        20
    }
}

impl Default for VerifySection {
    fn default() -> Self {
        toml::from_str("").expect("all fields default")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PermtestSection {
    #[serde(default = "PermtestSection::default_n_perm")]
    pub n_perm: usize,
    /// Permute the labels once before testing: a null control.
    #[serde(default)]
    pub shuffle_labels: bool,
}

impl PermtestSection {
    fn default_n_perm() -> usize {
        50_000
    }
}

impl Default for PermtestSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields default")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EapSection {
    #[serde(default = "EapSection::default_source")]
    pub source: String,
    #[serde(default = "EapSection::default_output")]
    pub output: String,
    /// Displacement grid on which the propagator is tabulated.
    #[serde(default = "EapSection::default_r_grid")]
    pub r_grid: GridSpec,
}

impl EapSection {
    fn default_source() -> String {
        "dataset".into()
    }
    fn default_output() -> String {
        "dataset_eap".into()
    }
    fn default_r_grid() -> GridSpec {
        GridSpec::Product { order: 3, radial: RadialSpec { nodes: 6, log_min: -3.0, log_max: -0.5 } }
    }
}

impl Default for EapSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields default")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    /// Overrides the voxel network's variant, e.g. `"intra_only"` to drop
    /// the spatial stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permtest: Option<PermtestSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eap: Option<EapSection>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<ExperimentConfig> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies the seed override, fills component seeds and defaults, and
    /// validates every section.
    pub fn resolve(mut self, seed_override: Option<u64>) -> CliResult<ExperimentConfig> {
        if let Some(s) = seed_override {
            self.seed = s;
        }
        let seed = self.seed;
        match (&self.kind, &self.data) {
            (ExperimentKind::P3Classify, Some(DataSpec::P3(_))) | (ExperimentKind::Verify, _) => {}
            (ExperimentKind::GenData, Some(_)) => {}
            (
                ExperimentKind::SyntheticDmriClassify | ExperimentKind::Permtest | ExperimentKind::Eap,
                Some(DataSpec::Volumes(_)),
            ) => {}
            (kind, _) => {
                let want = if *kind == ExperimentKind::P3Classify { "source = \"p3\"" } else { "source = \"volumes\"" };
                let want = if *kind == ExperimentKind::GenData { "a [data] section" } else { want };
                return Err(CliError::Usage(format!("{kind:?} experiments need {want} under [data]")));
            }
        }
        if let Some(data) = &mut self.data {
            let s = derive_seed(seed, "data");
            match data {
                DataSpec::P3(p) => p.seed = s,
                DataSpec::Volumes(v) => v.seed = s,
            }
            data.validate().map_err(|e| CliError::Usage(format!("invalid [data]: {e}")))?;
        }
        if matches!(self.kind, ExperimentKind::Eap) && self.eap.is_none() {
            self.eap = Some(EapSection::default());
        }
        if self.data.is_some() && self.train.is_none() {
            self.train = Some(TrainSection::default());
        }
        if self.network.is_none() {
            self.network = self.data.as_ref().map(default_network);
            // Training on the propagator dataset reads the displacement grid.
            if let (Some(net), Some(e), Some(t)) = (&mut self.network, &self.eap, &self.train) {
                if t.dataset == e.output {
                    set_input_grid(net, e.r_grid.clone());
                }
            }
        }
        if let Some(v) = self.variant {
            match self.network.as_mut().map(|n| &mut n.architecture) {
                Some(Architecture::Dmri { variant, .. }) => *variant = v,
                _ => return Err(CliError::Usage("`variant` applies only to voxel networks".into())),
            }
        }
        if let Some(net) = &mut self.network {
            net.seed = derive_seed(seed, "network");
            if net.classes < 2 {
                return Err(CliError::Usage("network.classes must be at least 2".into()));
            }
        }
        if let Some(t) = &self.train {
            t.train_config(0).validate().map_err(|e| CliError::Usage(format!("invalid [train]: {e}")))?;
            if t.epochs == 0 {
                return Err(CliError::Usage("train.epochs must be positive".into()));
            }
            if !(t.holdout > 0.0 && t.holdout < 1.0) {
                return Err(CliError::Usage("train.holdout must lie strictly between 0 and 1".into()));
            }
            check_name(&t.dataset)?;
        }
        if matches!(self.kind, ExperimentKind::Permtest) && self.permtest.is_none() {
            self.permtest = Some(PermtestSection::default());
        }
        if let Some(p) = &self.permtest {
            if p.n_perm == 0 {
                return Err(CliError::Usage("permtest.n_perm must be at least 1".into()));
            }
        }
        if let Some(e) = &self.eap {
            check_name(&e.source)?;
            check_name(&e.output)?;
            if e.r_grid.space_kind() != Some(hcnn::geometry::SpaceKind::ProductS2RPlus) {
                return Err(CliError::Usage("eap.r_grid must be a product grid".into()));
            }
        }
        if matches!(self.kind, ExperimentKind::Verify) && self.verify.is_none() {
            self.verify = Some(VerifySection::default());
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    /// SHA-256 of the resolved config in canonical TOML.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    pub fn component_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }
}

/// Artifact names are plain file stems inside the output directory.
fn check_name(name: &str) -> CliResult<()> {
    if name.is_empty() || name.contains(['/', '\\', '.']) {
        return Err(CliError::Usage(format!("artifact name {name:?} must be a plain file stem")));
    }
    Ok(())
}

fn set_input_grid(spec: &mut NetworkSpec, grid: GridSpec) {
    match &mut spec.architecture {
        Architecture::Spd { input_grid, .. } | Architecture::Dmri { input_grid, .. } => *input_grid = grid,
    }
}

/// The reference network for a data source, with its input grid and region
/// layout taken from the data.
pub fn default_network(data: &DataSpec) -> NetworkSpec {
    match data {
        DataSpec::P3(p) => {
            let mut spec = NetworkSpec::p3(0);
            set_input_grid(&mut spec, p.grid.clone());
            spec
        }
        DataSpec::Volumes(v) => {
            let mut spec = NetworkSpec::dmri(0);
            if let Architecture::Dmri { input_grid, rois, roi_dims, .. } = &mut spec.architecture {
                *input_grid = v.grid.clone();
                *rois = ROI_COUNT;
                *roi_dims = [v.roi_size; 3];
            }
            spec
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        assert!(ExperimentConfig::parse("kind = \"verify\"\nbogus = 1").is_err());
        assert!(ExperimentConfig::parse("kind = \"verify\"\n[verify]\nbogus = 1").is_err());
        let bad = "kind = \"p3-classify\"\n[data]\nsource = \"p3\"\nsigmaa = 1.0";
        assert!(ExperimentConfig::parse(bad).is_err());
        let bad = "kind = \"p3-classify\"\n[data]\nsource = \"p3\"\n[network]\nclasses = 2\nbogus = 0";
        assert!(ExperimentConfig::parse(bad).is_err());
    }

    #[test]
    fn negative_sigma_names_the_field() {
        let c = ExperimentConfig::parse("kind = \"p3-classify\"\n[data]\nsource = \"p3\"\nsigma = -1.0").unwrap();
        let e = c.resolve(None).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("sigma"), "{e}");
    }

    #[test]
    fn seeds_derive_from_the_global_seed() {
        let c = ExperimentConfig::parse("kind = \"p3-classify\"\nseed = 3\n[data]\nsource = \"p3\"\nseed = 99").unwrap();
        let a = c.clone().resolve(None).unwrap();
        let b = c.resolve(Some(4)).unwrap();
        let Some(DataSpec::P3(pa)) = &a.data else { panic!() };
        let Some(DataSpec::P3(pb)) = &b.data else { panic!() };
        assert_eq!(pa.seed, derive_seed(3, "data"));
        assert_ne!(pa.seed, pb.seed);
        assert_eq!(a.network.as_ref().unwrap().seed, derive_seed(3, "network"));
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = ExperimentConfig::parse("kind = \"synthetic-dmri-classify\"\n[data]\nsource = \"volumes\"\nn_per_class = 4")
            .unwrap()
            .resolve(None)
            .unwrap();
        let back = ExperimentConfig::parse(&c.to_toml()).unwrap().resolve(None).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.hash(), back.hash());
    }

    #[test]
    fn kind_and_data_must_agree() {
        let c = ExperimentConfig::parse("kind = \"p3-classify\"\n[data]\nsource = \"volumes\"").unwrap();
        assert!(c.resolve(None).is_err());
        let c = ExperimentConfig::parse("kind = \"gen-data\"").unwrap();
        assert!(c.resolve(None).is_err());
        assert!(ExperimentConfig::parse("kind = \"verify\"").unwrap().resolve(None).is_ok());
    }

    #[test]
    fn variant_override_reaches_voxel_networks_only() {
        let text = "kind = \"synthetic-dmri-classify\"\nvariant = \"intra_only\"\n[data]\nsource = \"volumes\"";
        let c = ExperimentConfig::parse(text).unwrap().resolve(None).unwrap();
        assert!(matches!(c.network.unwrap().architecture, Architecture::Dmri { variant: Variant::IntraOnly, .. }));
        let c = ExperimentConfig::parse("kind = \"p3-classify\"\nvariant = \"full\"\n[data]\nsource = \"p3\"").unwrap();
        assert!(c.resolve(None).is_err());
    }
}
