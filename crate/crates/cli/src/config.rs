use std::path::{Path, PathBuf};

use ncderev::corpus::Split;
use ncderev::diagnostics::{AutocorrDomain, ExportFormat, DEFAULT_MAX_LAG};
use ncderev::featurize::{EnergyFloor, FeatureConfig, DEFAULT_N_MELS, DEFAULT_RELATIVE_FLOOR};
use ncderev::mixing::EnhancerRef;
use ncderev::mlp::{LrSchedule, TrainConfig};
use ncderev::ncfir::Ridge;
use ncderev::rir::RT60_RANGE;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub workdir: PathBuf,
    pub corpus: CorpusConfig,
    pub rir: RirConfig,
    pub fir: FirConfig,
    pub features: FeaturesConfig,
    pub mlp: MlpConfig,
    pub mixing: MixingConfig,
    pub diagnose: DiagnoseConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workdir: PathBuf::from("work"),
            corpus: CorpusConfig::default(),
            rir: RirConfig::default(),
            fir: FirConfig::default(),
            features: FeaturesConfig::default(),
            mlp: MlpConfig::default(),
            mixing: MixingConfig::default(),
            diagnose: DiagnoseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Directory of 16-bit mono WAVs; when absent a synthetic corpus is generated.
    pub clean_dir: Option<PathBuf>,
    pub synthetic_utterances: usize,
    pub min_secs: f64,
    pub max_secs: f64,
    pub sample_rate: u32,
    pub unique_rirs: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            clean_dir: None,
            synthetic_utterances: 20,
            min_secs: 2.0,
            max_secs: 3.0,
            sample_rate: 16_000,
            unique_rirs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RirConfig {
    /// Number of RIRs to draw; defaults to the utterance count.
    pub count: Option<usize>,
    pub rt60_min: f64,
    pub rt60_max: f64,
    pub fractional_delay: bool,
    pub high_pass: bool,
    /// Unit impulses instead of simulated rooms, so reverberant equals clean.
    pub identity: bool,
}

impl Default for RirConfig {
    fn default() -> Self {
        Self {
            count: None,
            rt60_min: RT60_RANGE.0,
            rt60_max: RT60_RANGE.1,
            fractional_delay: false,
            high_pass: true,
            identity: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FirConfig {
    pub p: usize,
    pub q: usize,
    /// Fixed diagonal loading; `None` selects the trace-scaled default.
    pub ridge: Option<f64>,
    pub grid: Vec<(usize, usize)>,
    /// Sweep only the first `n` utterances by id.
    pub sweep_utterances: Option<usize>,
}

impl Default for FirConfig {
    fn default() -> Self {
        Self {
            p: 10,
            q: 10,
            ridge: None,
            grid: vec![(0, 0), (0, 20), (5, 15), (10, 10), (15, 5), (20, 0)],
            sweep_utterances: None,
        }
    }
}

impl FirConfig {
    pub fn ridge(&self) -> Ridge<f64> {
        self.ridge.map_or(Ridge::Auto, Ridge::Fixed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    pub n_mels: usize,
    pub mvn: bool,
    pub relative_floor: f64,
    /// Overrides `relative_floor` when set.
    pub absolute_floor: Option<f64>,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self { n_mels: DEFAULT_N_MELS, mvn: true, relative_floor: DEFAULT_RELATIVE_FLOOR, absolute_floor: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub p: usize,
    pub q: usize,
    pub hidden: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: LrSchedule,
}

impl Default for MlpConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            p: 10,
            q: 10,
            hidden: 128,
            layers: 3,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            schedule: t.schedule,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mapper {
    Mlp,
    /// Pass-through in place of the trained model.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixingConfig {
    pub configs: Vec<u8>,
    /// Defaults to `0, 0.05, ..., 1`.
    pub grid: Option<Vec<f64>>,
    pub enhancer: EnhancerRef,
    pub mapper: Mapper,
    pub enhancer_p: usize,
    /// Train-split pairs used to fit the causal enhancer.
    pub adaptation_utterances: usize,
    /// `None` sweeps every utterance.
    pub split: Option<Split>,
    /// RT60 boundaries between subsets.
    pub subset_edges: Vec<f64>,
}

impl Default for MixingConfig {
    fn default() -> Self {
        Self {
            configs: vec![1, 2, 3, 4],
            grid: None,
            enhancer: EnhancerRef::CausalFir,
            mapper: Mapper::Mlp,
            enhancer_p: 10,
            adaptation_utterances: 20,
            split: Some(Split::Dev),
            subset_edges: vec![0.7, 1.0, 1.4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub max_lag: usize,
    pub tail_from: usize,
    pub domain: AutocorrDomain,
    /// Number of utterances, by id, whose spectrograms are exported.
    pub spectrograms: usize,
    pub format: ExportFormat,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            max_lag: DEFAULT_MAX_LAG,
            tail_from: 10,
            domain: AutocorrDomain::Magnitude,
            spectrograms: 2,
            format: ExportFormat::Pgm,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let c = &self.corpus;
        if c.clean_dir.is_none() && c.synthetic_utterances == 0 {
            return bad("corpus needs a clean_dir or synthetic_utterances > 0".into());
        }
        if let Some(dir) = &c.clean_dir {
            if !dir.is_dir() {
                return bad(format!("clean_dir {} does not exist", dir.display()));
            }
        }
        if !(c.min_secs > 0.0 && c.min_secs <= c.max_secs) {
            return bad(format!("need 0 < min_secs <= max_secs, got {} and {}", c.min_secs, c.max_secs));
        }
        if !(self.rir.rt60_min < self.rir.rt60_max) {
            return bad(format!("rt60 range [{}, {}] is empty", self.rir.rt60_min, self.rir.rt60_max));
        }
        if self.fir.grid.is_empty() {
            return bad("fir.grid is empty".into());
        }
        if self.fir.ridge.is_some_and(|r| !(r >= 0.0)) {
            return bad("fir.ridge must be non-negative".into());
        }
        if self.features.n_mels == 0 {
            return bad("features.n_mels must be positive".into());
        }
        let m = &self.mlp;
        if m.hidden == 0 || m.batch_size == 0 || m.epochs == 0 {
            return bad("mlp.hidden, mlp.batch_size and mlp.epochs must be positive".into());
        }
        if !(m.learning_rate >= 0.0) {
            return bad("mlp.learning_rate must be non-negative".into());
        }
        let x = &self.mixing;
        if x.configs.is_empty() || x.configs.iter().any(|c| !(1..=4).contains(c)) {
            return bad(format!("mixing.configs must be a non-empty subset of 1-4, got {:?}", x.configs));
        }
        if x.grid.as_ref().is_some_and(|g| g.is_empty() || g.iter().any(|l| !(0.0..=1.0).contains(l))) {
            return bad("mixing.grid must be non-empty and lie in [0, 1]".into());
        }
        if x.subset_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("mixing.subset_edges must be strictly increasing".into());
        }
        if self.diagnose.tail_from > self.diagnose.max_lag {
            return bad("diagnose.tail_from exceeds diagnose.max_lag".into());
        }
        Ok(())
    }

    pub fn feature_config(&self) -> FeatureConfig {
        let f = &self.features;
        FeatureConfig {
            stft: ncderev::dsp::StftConfig::for_sample_rate(self.corpus.sample_rate),
            n_mels: f.n_mels,
            floor: f.absolute_floor.map_or(EnergyFloor::Relative(f.relative_floor), EnergyFloor::Absolute),
            mvn: f.mvn,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let m = &self.mlp;
        TrainConfig {
            learning_rate: m.learning_rate,
            batch_size: m.batch_size,
            epochs: m.epochs,
            schedule: m.schedule,
            seed: self.seed,
        }
    }
}
