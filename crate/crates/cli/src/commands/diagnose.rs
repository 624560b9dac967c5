use ncderev::diagnostics::{average_autocorr, export_spectrogram, tail_mass, write_autocorr_csv, ExportFormat, SpectrogramData};
use ncderev::dsp::{read_ncsp, ComplexSpectrogram, StftConfig};
use ncderev::featurize::{spectrogram_features, FeatureConfig};
use rayon::prelude::*;

use super::fir::spectrogram_pair;
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::workdir::{ensure_dir, load_manifest, require_artifact, write_text, Workdir};

struct Utterance {
    id: String,
    clean: ComplexSpectrogram<f64>,
    reverb: ComplexSpectrogram<f64>,
    fir: ComplexSpectrogram<f64>,
}

pub fn diagnose(cfg: &ExperimentConfig, wd: &Workdir) -> Result<()> {
    let d = &cfg.diagnose;
    let rows = load_manifest(wd)?;
    let stft_cfg = StftConfig::for_sample_rate(cfg.corpus.sample_rate);
    let corpus = rows
        .par_iter()
        .map(|r| {
            let id = r.utterance.clone();
            let (x, clean) = spectrogram_pair(wd, &id, &stft_cfg)?;
            let path = wd.fir_spectrogram(&id);
            require_artifact(&path, "fit-fir")?;
            let fir = read_ncsp(&path, stft_cfg)?;
            Ok(Utterance { reverb: x.truncated(clean.frames), clean, fir, id })
        })
        .collect::<Result<Vec<_>>>()?;

    let dir = wd.diagnose_dir();
    ensure_dir(&dir)?;
    let mut table = String::from("stream,domain,used,skipped,tail_from,tail_mass\n");
    let domain = serde_json::to_value(d.domain).expect("domain serializes");
    let domain = domain.as_str().unwrap_or_default();
    let streams: [(&str, fn(&Utterance) -> &ComplexSpectrogram<f64>); 3] =
        [("clean", |u| &u.clean), ("reverb", |u| &u.reverb), ("fir", |u| &u.fir)];
    for (name, pick) in streams {
        let specs: Vec<ComplexSpectrogram<f64>> = corpus.iter().map(|u| pick(u).clone()).collect();
        let avg = average_autocorr(&specs, d.max_lag, d.domain)?;
        write_autocorr_csv(&avg.curve, dir.join(format!("autocorr_{name}.csv")))?;
        let tail = tail_mass(&avg.curve, d.tail_from)?;
        table.push_str(&format!("{name},{domain},{},{},{},{tail}\n", avg.used, avg.skipped, d.tail_from));
    }
    write_text(&dir.join("tail_mass.csv"), &table)?;

    let format = d.format;
    let ext = match format {
        ExportFormat::Csv => "csv",
        ExportFormat::Pgm => "pgm",
    };
    let spec_dir = dir.join("spectrograms");
    ensure_dir(&spec_dir)?;
    let raw = FeatureConfig { mvn: false, ..cfg.feature_config() };
    for u in corpus.iter().take(d.spectrograms) {
        for (name, pick) in streams {
            let spec = pick(u);
            export_spectrogram(SpectrogramData::Complex(spec), spec_dir.join(format!("{}_{name}_stft.{ext}", u.id)), format)?;
            let lfe = spectrogram_features(spec, cfg.corpus.sample_rate, &raw)?;
            export_spectrogram(
                SpectrogramData::<f64>::Features(&lfe),
                spec_dir.join(format!("{}_{name}_logmel.{ext}", u.id)),
                format,
            )?;
        }
    }
    Ok(())
}
