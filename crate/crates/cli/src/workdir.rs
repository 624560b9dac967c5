//! Artifact layout under the work directory and loaders that name the
//! command responsible for anything missing.

use std::path::{Path, PathBuf};

use ncderev::corpus::{read_manifest, ManifestRow};
use ncderev::dsp::{read_wav, Waveform};
use ncderev::featurize::{read_ncft, FeatureMatrix};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub struct Workdir {
    pub root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }

    pub fn clean_wav(&self, id: &str) -> PathBuf {
        self.root.join("clean").join(format!("{id}.wav"))
    }

    pub fn reverb_wav(&self, id: &str) -> PathBuf {
        self.root.join("reverb").join(format!("{id}.wav"))
    }

    pub fn rir(&self, rir_id: usize) -> PathBuf {
        self.root.join("rirs").join(format!("rir{rir_id:05}.ncir"))
    }

    pub fn fir_dir(&self) -> PathBuf {
        self.root.join("fir")
    }

    pub fn fir_spectrogram(&self, id: &str) -> PathBuf {
        self.fir_dir().join(format!("{id}.ncsp"))
    }

    pub fn sweep_csv(&self) -> PathBuf {
        self.root.join("sweep").join("context_sweep.csv")
    }

    pub fn features(&self, stream: &str, id: &str) -> PathBuf {
        self.root.join("features").join(stream).join(format!("{id}.ncft"))
    }

    pub fn mlp_dir(&self) -> PathBuf {
        self.root.join("mlp")
    }

    pub fn model(&self) -> PathBuf {
        self.mlp_dir().join("model.json")
    }

    pub fn derev_dir(&self) -> PathBuf {
        self.root.join("derev")
    }

    pub fn mix_dir(&self) -> PathBuf {
        self.root.join("mix")
    }

    pub fn diagnose_dir(&self) -> PathBuf {
        self.root.join("diagnose")
    }

    pub fn run_record(&self, command: &str) -> PathBuf {
        self.root.join("runs").join(format!("{command}.json"))
    }
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn require(path: &Path, producer: &'static str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact { path: path.to_path_buf(), producer })
    }
}

/// Manifest rows sorted by utterance id.
pub fn load_manifest(wd: &Workdir) -> Result<Vec<ManifestRow>> {
    let path = wd.manifest();
    require(&path, "make-corpus")?;
    let mut rows = read_manifest(&path)?;
    rows.sort_by(|a, b| a.utterance.cmp(&b.utterance));
    if rows.is_empty() {
        return Err(CliError::Data(format!("{} lists no utterances", path.display())));
    }
    Ok(rows)
}

pub fn load_clean(wd: &Workdir, id: &str) -> Result<Waveform<f64>> {
    let path = wd.clean_wav(id);
    require(&path, "make-corpus")?;
    Ok(read_wav(&path)?)
}

pub fn load_reverb(wd: &Workdir, id: &str) -> Result<Waveform<f64>> {
    let path = wd.reverb_wav(id);
    require(&path, "make-corpus")?;
    Ok(read_wav(&path)?)
}

pub fn load_features(wd: &Workdir, stream: &str, id: &str) -> Result<FeatureMatrix<f32>> {
    let path = wd.features(stream, id);
    require(&path, "featurize")?;
    Ok(read_ncft(&path)?)
}

pub fn require_artifact(path: &Path, producer: &'static str) -> Result<()> {
    require(path, producer)
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config: &'a ExperimentConfig,
}

/// Writes `runs/<command>.json` with the resolved config, seed and tool version.
pub fn write_run_record(wd: &Workdir, command: &str, config: &ExperimentConfig) -> Result<()> {
    let record = RunRecord { tool: "ncderev", version: ncderev::VERSION, command, seed: config.seed, config };
    let mut text = serde_json::to_string_pretty(&record).expect("record serializes");
    text.push('\n');
    write_text(&wd.run_record(command), &text)
}
