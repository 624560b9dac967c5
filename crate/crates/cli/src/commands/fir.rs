use ncderev::dsp::{istft, stft, write_ncsp, write_wav, ComplexSpectrogram, StftConfig};
use ncderev::ncfir::{context_sweep, dereverberate_spectrogram, write_filter_csv, write_sweep_csv};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::workdir::{ensure_dir, load_clean, load_manifest, load_reverb, write_text, Workdir};

/// `(reverberant, clean)` spectrogram pair of one utterance.
pub fn spectrogram_pair(wd: &Workdir, id: &str, stft_cfg: &StftConfig) -> Result<(ComplexSpectrogram<f64>, ComplexSpectrogram<f64>)> {
    let x = stft(&load_reverb(wd, id)?, stft_cfg)?;
    let y = stft(&load_clean(wd, id)?, stft_cfg)?;
    Ok((x, y))
}

pub fn fit_fir(cfg: &ExperimentConfig, wd: &Workdir) -> Result<()> {
    let rows = load_manifest(wd)?;
    let stft_cfg = StftConfig::for_sample_rate(cfg.corpus.sample_rate);
    let (p, q) = (cfg.fir.p, cfg.fir.q);
    ensure_dir(&wd.fir_dir())?;
    let mut table = String::from("utterance_id,p,q,normalized_error\n");
    for row in &rows {
        let id = &row.utterance;
        let (x, y) = spectrogram_pair(wd, id, &stft_cfg)?;
        let fit = dereverberate_spectrogram(&x, &y, p, q, cfg.fir.ridge())?;
        let energy = y.energy();
        let err = if energy > 0.0 { fit.total_error() / energy } else { fit.total_error() };
        table.push_str(&format!("{id},{p},{q},{err}\n"));
        write_ncsp(&fit.estimate, wd.fir_spectrogram(id))?;
        write_filter_csv(&fit.filters, wd.fir_dir().join(format!("{id}.filters.csv")))?;
        let mut wave = istft(&fit.estimate, cfg.corpus.sample_rate)?;
        wave.samples.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        write_wav(&wave, wd.fir_dir().join(format!("{id}.wav")))?;
    }
    write_text(&wd.fir_dir().join("errors.csv"), &table)
}

pub fn sweep_context(cfg: &ExperimentConfig, wd: &Workdir) -> Result<()> {
    let mut rows = load_manifest(wd)?;
    if let Some(n) = cfg.fir.sweep_utterances {
        rows.truncate(n);
    }
    let stft_cfg = StftConfig::for_sample_rate(cfg.corpus.sample_rate);
    let corpus = rows
        .iter()
        .map(|r| spectrogram_pair(wd, &r.utterance, &stft_cfg))
        .collect::<Result<Vec<_>>>()?;
    let table = context_sweep(&corpus, &cfg.fir.grid, cfg.fir.ridge())?;
    let path = wd.sweep_csv();
    ensure_dir(path.parent().expect("sweep dir"))?;
    write_sweep_csv(&table, path)?;
    Ok(())
}
