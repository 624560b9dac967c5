use ncderev::corpus::{ManifestRow, Split};
use ncderev::dsp::{stft, StftConfig};
use ncderev::featurize::{spectrogram_features, FeatureMatrix};
use ncderev::mixing::{
    default_grid, lambda_sweep, reference_enhancer, write_sweep_summary, write_sweep_table, CausalFirEnhancer,
    EnhancerRef, EnhancerResources, MixUtterance, Streams, Subset,
};
use ncderev::mlp::{dereverberate_features, load_model, MlpModel};
use ncderev::ncfir::Ridge;
use rayon::prelude::*;

use super::fir::spectrogram_pair;
use crate::config::{ExperimentConfig, Mapper};
use crate::error::{CliError, Result};
use crate::workdir::{ensure_dir, load_features, load_manifest, load_reverb, require_artifact, Workdir};

/// Subset name for an RT60 given ascending band edges.
fn band_name(rt60: f64, edges: &[f64]) -> (usize, String) {
    let i = edges.iter().take_while(|e| rt60 >= **e).count();
    let name = match (i, edges.len()) {
        (_, 0) => "all".to_string(),
        (0, _) => format!("rt60_lt_{}", edges[0]),
        (i, n) if i == n => format!("rt60_ge_{}", edges[n - 1]),
        (i, _) => format!("rt60_{}_{}", edges[i - 1], edges[i]),
    };
    (i, name)
}

fn fit_enhancer(cfg: &ExperimentConfig, wd: &Workdir, rows: &[ManifestRow]) -> Result<EnhancerResources<f64>> {
    if cfg.mixing.enhancer != EnhancerRef::CausalFir {
        return Ok(EnhancerResources::default());
    }
    let stft_cfg = StftConfig::for_sample_rate(cfg.corpus.sample_rate);
    let adaptation = rows
        .iter()
        .filter(|r| r.split == Split::Train)
        .take(cfg.mixing.adaptation_utterances)
        .map(|r| spectrogram_pair(wd, &r.utterance, &stft_cfg))
        .collect::<Result<Vec<_>>>()?;
    if adaptation.is_empty() {
        return Err(CliError::Data("causal-fir enhancer needs train-split utterances to adapt on".into()));
    }
    Ok(EnhancerResources {
        causal_fir: Some(CausalFirEnhancer::fit(&adaptation, cfg.mixing.enhancer_p, Ridge::Auto)?),
    })
}

fn map_stream(model: Option<&MlpModel<f32>>, x: &FeatureMatrix<f32>, cfg: &ExperimentConfig) -> Result<FeatureMatrix<f32>> {
    match model {
        Some(m) => Ok(dereverberate_features(m, x, cfg.mlp.p, cfg.mlp.q)?),
        None => Ok(x.clone()),
    }
}

pub fn mix_sweep(cfg: &ExperimentConfig, wd: &Workdir) -> Result<()> {
    let mx = &cfg.mixing;
    let all = load_manifest(wd)?;
    let rows: Vec<&ManifestRow> = all.iter().filter(|r| mx.split.is_none_or(|s| r.split == s)).collect();
    if rows.is_empty() {
        let split = mx.split.map_or("any".to_string(), |s| s.to_string());
        return Err(CliError::Data(format!("no utterances in the {split} split to sweep")));
    }
    let model = match mx.mapper {
        Mapper::Mlp => {
            require_artifact(&wd.model(), "train-mlp")?;
            Some(load_model::<f32>(wd.model())?)
        }
        Mapper::Identity => None,
    };
    let resources = fit_enhancer(cfg, wd, &all)?;
    let fc = cfg.feature_config();

    let utterances = rows
        .par_iter()
        .map(|r| {
            let id = &r.utterance;
            let clean = load_features(wd, "clean", id)?;
            let reverb = load_features(wd, "reverb", id)?;
            let ref_enhanced = match mx.enhancer {
                EnhancerRef::Identity => reverb.clone(),
                kind => {
                    let spec = stft(&load_reverb(wd, id)?, &fc.stft)?;
                    let enhanced = reference_enhancer(kind, &spec, &resources)?;
                    spectrogram_features(&enhanced, cfg.corpus.sample_rate, &fc)?.cast::<f32>()
                }
            };
            let derev_of_reverb = map_stream(model.as_ref(), &reverb, cfg)?;
            let derev_of_ref_enhanced = map_stream(model.as_ref(), &ref_enhanced, cfg)?;
            let n = clean.rows();
            if [&reverb, &ref_enhanced].iter().any(|m| m.rows() < n) {
                return Err(CliError::Data(format!("utterance {id}: reverberant features shorter than clean")));
            }
            Ok(MixUtterance {
                id: id.clone(),
                streams: Streams {
                    reverb: Some(reverb.truncated(n)),
                    ref_enhanced: Some(ref_enhanced.truncated(n)),
                    derev_of_reverb: Some(derev_of_reverb.truncated(n)),
                    derev_of_ref_enhanced: Some(derev_of_ref_enhanced.truncated(n)),
                },
                clean,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut bands: Vec<(usize, Subset<f32>)> = Vec::new();
    for (r, u) in rows.iter().zip(utterances) {
        let (idx, name) = band_name(r.rt60, &mx.subset_edges);
        match bands.iter_mut().find(|(i, _)| *i == idx) {
            Some((_, s)) => s.utterances.push(u),
            None => bands.push((idx, Subset { name, utterances: vec![u] })),
        }
    }
    bands.sort_by_key(|(i, _)| *i);
    let subsets: Vec<Subset<f32>> = bands.into_iter().map(|(_, s)| s).collect();

    let grid = mx.grid.clone().unwrap_or_else(default_grid);
    let sweeps = mx
        .configs
        .iter()
        .map(|&c| lambda_sweep(c, &subsets, &grid))
        .collect::<ncderev::Result<Vec<_>>>()?;
    let dir = wd.mix_dir();
    ensure_dir(&dir)?;
    write_sweep_table(&sweeps, dir.join("sweep_table.csv"))?;
    write_sweep_summary(&sweeps, dir.join("sweep_summary.csv"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_names_cover_every_interval() {
        let edges = [0.7, 1.0];
        assert_eq!(band_name(0.5, &edges), (0, "rt60_lt_0.7".to_string()));
        assert_eq!(band_name(0.7, &edges), (1, "rt60_0.7_1".to_string()));
        assert_eq!(band_name(1.5, &edges), (2, "rt60_ge_1".to_string()));
        assert_eq!(band_name(1.5, &[]), (0, "all".to_string()));
    }
}
