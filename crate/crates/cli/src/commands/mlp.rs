use ncderev::corpus::{ManifestRow, Split};
use ncderev::diagnostics::{mse_report, write_mse_csv, MseReport};
use ncderev::featurize::{align_pairs, extract_features, write_ncft, FeatureMatrix};
use ncderev::mlp::{dereverberate_features, init_model, load_model, save_model, topology, train, write_loss_trace, Dataset};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::workdir::{ensure_dir, load_clean, load_features, load_manifest, load_reverb, require_artifact, write_text, Workdir};

pub fn featurize(cfg: &ExperimentConfig, wd: &Workdir) -> Result<()> {
    let rows = load_manifest(wd)?;
    let fc = cfg.feature_config();
    let feats = rows
        .par_iter()
        .map(|r| {
            let clean = extract_features(&load_clean(wd, &r.utterance)?, &fc)?;
            let reverb = extract_features(&load_reverb(wd, &r.utterance)?, &fc)?;
            Ok((clean, reverb))
        })
        .collect::<Result<Vec<_>>>()?;
    for stream in ["clean", "reverb"] {
        ensure_dir(&wd.root.join("features").join(stream))?;
    }
    for (r, (clean, reverb)) in rows.iter().zip(&feats) {
        write_ncft(clean, wd.features("clean", &r.utterance))?;
        write_ncft(reverb, wd.features("reverb", &r.utterance))?;
    }
    Ok(())
}

/// Aligned `(reverberant, clean)` feature pairs of the given rows.
fn feature_pairs(wd: &Workdir, rows: &[&ManifestRow]) -> Result<Vec<(FeatureMatrix<f32>, FeatureMatrix<f32>)>> {
    rows.iter()
        .map(|r| {
            let reverb = load_features(wd, "reverb", &r.utterance)?;
            let clean = load_features(wd, "clean", &r.utterance)?;
            Ok(align_pairs(&reverb, &clean)?)
        })
        .collect()
}

pub fn train_mlp(cfg: &ExperimentConfig, wd: &Workdir) -> Result<()> {
    let rows = load_manifest(wd)?;
    let of = |s: Split| rows.iter().filter(|r| r.split == s).collect::<Vec<_>>();
    let (train_rows, dev_rows) = (of(Split::Train), of(Split::Dev));
    if train_rows.is_empty() {
        return Err(CliError::Data("manifest has no train-split utterances".into()));
    }
    let m = &cfg.mlp;
    let train_pairs = feature_pairs(wd, &train_rows)?;
    let dims = train_pairs[0].0.cols();
    if dims != cfg.features.n_mels {
        return Err(CliError::Data(format!(
            "stored features have {dims} dims but features.n_mels is {}; rerun featurize",
            cfg.features.n_mels
        )));
    }
    let train_set = Dataset::from_utterances(&train_pairs, m.p, m.q)?;
    let dev_set = if dev_rows.is_empty() {
        None
    } else {
        Some(Dataset::from_utterances(&feature_pairs(wd, &dev_rows)?, m.p, m.q)?)
    };
    let model = init_model::<f32>(&topology(m.p, m.q, dims, m.hidden, m.layers), cfg.seed)?;
    let outcome = train(&model, &train_set, dev_set.as_ref(), &cfg.train_config())?;

    ensure_dir(&wd.mlp_dir())?;
    save_model(&outcome.model, wd.model())?;
    write_loss_trace(&outcome.trace, wd.mlp_dir().join("loss_trace.csv"))?;
    let best = outcome.trace.iter().find(|r| r.epoch == outcome.best_epoch);
    let summary = match best {
        Some(r) => format!(
            "best_epoch,train_mse,valid_mse,train_frames,valid_frames\n{},{},{},{},{}\n",
            r.epoch,
            r.train_mse,
            r.valid_mse,
            train_set.len(),
            dev_set.as_ref().map_or(0, |d| d.len())
        ),
        None => format!(
            "best_epoch,train_mse,valid_mse,train_frames,valid_frames\n0,,,{},{}\n",
            train_set.len(),
            dev_set.as_ref().map_or(0, |d| d.len())
        ),
    };
    write_text(&wd.mlp_dir().join("summary.csv"), &summary)
}

fn split_means(rows: &[ManifestRow], report: &MseReport, split: Option<Split>) -> Option<(usize, f64)> {
    let values: Vec<f64> = rows
        .iter()
        .zip(&report.rows)
        .filter(|(r, _)| split.is_none_or(|s| r.split == s))
        .map(|(_, m)| m.mse)
        .collect();
    (!values.is_empty()).then(|| (values.len(), values.iter().sum::<f64>() / values.len() as f64))
}

pub fn derev(cfg: &ExperimentConfig, wd: &Workdir) -> Result<()> {
    let rows = load_manifest(wd)?;
    require_artifact(&wd.model(), "train-mlp")?;
    let model = load_model::<f32>(wd.model())?;
    let (p, q) = (cfg.mlp.p, cfg.mlp.q);
    let out = rows
        .par_iter()
        .map(|r| {
            let reverb = load_features(wd, "reverb", &r.utterance)?;
            let clean = load_features(wd, "clean", &r.utterance)?;
            let derev = dereverberate_features(&model, &reverb, p, q)?;
            let (reverb, _) = align_pairs(&reverb, &clean)?;
            let (derev_aligned, clean) = align_pairs(&derev, &clean)?;
            Ok((derev, reverb, derev_aligned, clean))
        })
        .collect::<Result<Vec<_>>>()?;

    let dir = wd.derev_dir();
    ensure_dir(&dir)?;
    let mut reverb_pairs = Vec::with_capacity(rows.len());
    let mut derev_pairs = Vec::with_capacity(rows.len());
    for (r, (derev, reverb, derev_aligned, clean)) in rows.iter().zip(out) {
        write_ncft(&derev, dir.join(format!("{}.ncft", r.utterance)))?;
        reverb_pairs.push((r.utterance.clone(), reverb, clean.clone()));
        derev_pairs.push((r.utterance.clone(), derev_aligned, clean));
    }
    let reverb_report = mse_report(&reverb_pairs)?;
    let derev_report = mse_report(&derev_pairs)?;
    write_mse_csv(&reverb_report, dir.join("mse_reverb.csv"))?;
    write_mse_csv(&derev_report, dir.join("mse_derev.csv"))?;

    let mut summary = String::from("split,utterances,reverb_mse,derev_mse,relative_reduction\n");
    for (name, split) in [("all", None), ("train", Some(Split::Train)), ("dev", Some(Split::Dev)), ("test", Some(Split::Test))] {
        if let (Some((n, base)), Some((_, enh))) =
            (split_means(&rows, &reverb_report, split), split_means(&rows, &derev_report, split))
        {
            let rel = if base > 0.0 { 1.0 - enh / base } else { 0.0 };
            summary.push_str(&format!("{name},{n},{base},{enh},{rel}\n"));
        }
    }
    write_text(&dir.join("summary.csv"), &summary)
}
