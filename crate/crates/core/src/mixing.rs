//! Semi-enhanced features: convex mixes of a reverberant or reference-enhanced
//! stream with a dereverberated stream, and per-subset tuning of the weight.
//!
//! | config | first stream   | second stream           |
//! |--------|----------------|-------------------------|
//! | 1      | `ref_enhanced` | `derev_of_reverb`       |
//! | 2      | `ref_enhanced` | `derev_of_ref_enhanced` |
//! | 3      | `reverb`       | `derev_of_ref_enhanced` |
//! | 4      | `reverb`       | `derev_of_reverb`       |
//!
//! The output is `(1 - lambda) * first + lambda * second`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex;
use rayon::prelude::*;

use crate::diagnostics::mse_report;
use crate::dsp::ComplexSpectrogram;
use crate::error::{Error, Result};
use crate::featurize::FeatureMatrix;
use crate::ncfir::{apply_filter, build_normal_system, solve_normal_system, BinTrajectory, NcFirFilter, NormalSystem, Ridge};
use crate::scalar::{CompensatedSum, Real};

/// Average optimal weights reported for configs 1-4 with an MLP mapper,
/// tuned on word error rate. Kept for reference only.
pub const REPORTED_AVERAGE_LAMBDAS: [f64; 4] = [0.3, 0.363, 0.425, 0.425];

/// Relative slack under which two sweep scores count as a tie.
const TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixConfig {
    pub config_id: u8,
    pub lambda: f64,
}

impl MixConfig {
    pub fn new(config_id: u8, lambda: f64) -> Result<Self> {
        let c = Self { config_id, lambda };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.config_id) {
            return Err(Error::InvalidArgument(format!("mix config must be 1-4, got {}", self.config_id)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Stream names used by a config, first then second.
pub fn config_streams(config_id: u8) -> Result<(StreamKind, StreamKind)> {
    use StreamKind::*;
    Ok(match config_id {
        1 => (RefEnhanced, DerevOfReverb),
        2 => (RefEnhanced, DerevOfRefEnhanced),
        3 => (Reverb, DerevOfRefEnhanced),
        4 => (Reverb, DerevOfReverb),
        other => return Err(Error::InvalidArgument(format!("mix config must be 1-4, got {other}"))),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Reverb,
    RefEnhanced,
    DerevOfReverb,
    DerevOfRefEnhanced,
}

impl StreamKind {
    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Reverb => "reverb",
            StreamKind::RefEnhanced => "ref_enhanced",
            StreamKind::DerevOfReverb => "derev_of_reverb",
            StreamKind::DerevOfRefEnhanced => "derev_of_ref_enhanced",
        }
    }
}

/// The four candidate feature streams of one utterance; any may be absent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Streams<T> {
    pub reverb: Option<FeatureMatrix<T>>,
    pub ref_enhanced: Option<FeatureMatrix<T>>,
    pub derev_of_reverb: Option<FeatureMatrix<T>>,
    pub derev_of_ref_enhanced: Option<FeatureMatrix<T>>,
}

impl<T: Real> Streams<T> {
    pub fn get(&self, kind: StreamKind) -> Result<&FeatureMatrix<T>> {
        match kind {
            StreamKind::Reverb => self.reverb.as_ref(),
            StreamKind::RefEnhanced => self.ref_enhanced.as_ref(),
            StreamKind::DerevOfReverb => self.derev_of_reverb.as_ref(),
            StreamKind::DerevOfRefEnhanced => self.derev_of_ref_enhanced.as_ref(),
        }
        .ok_or(Error::MissingStream(kind.name()))
    }
}

/// Mixes the config's two streams. `lambda = 0` and `lambda = 1` return the
/// first and second stream unchanged.
pub fn semi_enhance<T: Real>(config: MixConfig, streams: &Streams<T>) -> Result<FeatureMatrix<T>> {
    config.validate()?;
    let (a, b) = config_streams(config.config_id)?;
    let (first, second) = (streams.get(a)?, streams.get(b)?);
    if first.values.dim() != second.values.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{} is {:?} but {} is {:?}",
            a.name(),
            first.values.dim(),
            b.name(),
            second.values.dim()
        )));
    }
    if config.lambda == 0.0 {
        return Ok(first.clone());
    }
    if config.lambda == 1.0 {
        return Ok(second.clone());
    }
    // Written as a + lambda (b - a) so equal streams come back unchanged.
    let lam = T::of(config.lambda);
    let mut out = first.values.clone();
    out.zip_mut_with(&second.values, |x, y| *x = *x + lam * (*y - *x));
    Ok(FeatureMatrix { values: out })
}

/// `0, 0.05, ..., 1`.
pub fn default_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixUtterance<T> {
    pub id: String,
    pub streams: Streams<T>,
    pub clean: FeatureMatrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subset<T> {
    pub name: String,
    pub utterances: Vec<MixUtterance<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub subset: String,
    pub config_id: u8,
    pub lambda: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetOptimum {
    pub subset: String,
    pub lambda: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSweep {
    pub config_id: u8,
    pub table: Vec<SweepCell>,
    pub optima: Vec<SubsetOptimum>,
    pub average_lambda: f64,
}

/// Mean per-utterance MSE to clean of the mixed stream.
fn subset_mse<T: Real>(config: MixConfig, subset: &Subset<T>) -> Result<f64> {
    let pairs = subset
        .utterances
        .iter()
        .map(|u| Ok((u.id.clone(), semi_enhance(config, &u.streams)?, u.clean.clone())))
        .collect::<Result<Vec<_>>>()?;
    Ok(mse_report(&pairs)?.corpus_mean)
}

/// Evaluates every `(subset, lambda)` cell and picks the per-subset argmin.
///
/// The grid is sorted ascending; scores within a relative 1e-12 of the best
/// count as ties and resolve to the smaller weight.
pub fn lambda_sweep<T: Real>(config_id: u8, subsets: &[Subset<T>], grid: &[f64]) -> Result<LambdaSweep> {
    config_streams(config_id)?;
    if grid.is_empty() {
        return Err(Error::Empty("lambda grid"));
    }
    if subsets.is_empty() {
        return Err(Error::Empty("sweep subsets"));
    }
    if let Some(s) = subsets.iter().find(|s| s.utterances.is_empty()) {
        return Err(Error::InvalidArgument(format!("subset {} has no utterances", s.name)));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    grid.dedup();
    for &lambda in &grid {
        MixConfig::new(config_id, lambda)?;
    }
    let cells: Vec<(usize, usize)> = (0..subsets.len()).flat_map(|s| (0..grid.len()).map(move |g| (s, g))).collect();
    let scores: Vec<f64> = cells
        .par_iter()
        .map(|&(s, g)| subset_mse(MixConfig { config_id, lambda: grid[g] }, &subsets[s]))
        .collect::<Result<_>>()?;

    let mut table = Vec::with_capacity(cells.len());
    let mut optima = Vec::with_capacity(subsets.len());
    for (s, subset) in subsets.iter().enumerate() {
        let row = &scores[s * grid.len()..(s + 1) * grid.len()];
        let mut best = 0;
        for (g, &v) in row.iter().enumerate() {
            if v < row[best] - TIE_RTOL * row[best].abs() {
                best = g;
            }
            table.push(SweepCell { subset: subset.name.clone(), config_id, lambda: grid[g], mse: v });
        }
        optima.push(SubsetOptimum { subset: subset.name.clone(), lambda: grid[best], mse: row[best] });
    }
    let mut acc = CompensatedSum::new();
    optima.iter().for_each(|o| acc.add(o.lambda));
    let average_lambda = acc.value() / optima.len() as f64;
    Ok(LambdaSweep { config_id, table, optima, average_lambda })
}

/// CSV `subset,config,lambda,mse`.
pub fn write_sweep_table(sweeps: &[LambdaSweep], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("subset,config,lambda,mse\n");
    for s in sweeps {
        for c in &s.table {
            text.push_str(&format!("{},{},{},{}\n", c.subset, c.config_id, c.lambda, c.mse));
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// CSV `subset,config,optimal_lambda,mse`, with one `average` row per config
/// whose `mse` column is left empty.
pub fn write_sweep_summary(sweeps: &[LambdaSweep], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("subset,config,optimal_lambda,mse\n");
    for s in sweeps {
        for o in &s.optima {
            text.push_str(&format!("{},{},{},{}\n", o.subset, s.config_id, o.lambda, o.mse));
        }
        text.push_str(&format!("average,{},{},\n", s.config_id, s.average_lambda));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Registered stand-ins for an external reference enhancer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnhancerRef {
    Identity,
    /// Per-bin causal (`q = 0`) filter fitted on an adaptation set.
    CausalFir,
}

impl FromStr for EnhancerRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(EnhancerRef::Identity),
            "causal-fir" => Ok(EnhancerRef::CausalFir),
            other => Err(Error::UnknownEnhancer(other.to_string())),
        }
    }
}

impl fmt::Display for EnhancerRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnhancerRef::Identity => "identity",
            EnhancerRef::CausalFir => "causal-fir",
        })
    }
}

/// One causal filter per bin, shared by every utterance it enhances.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalFirEnhancer<T> {
    pub p: usize,
    pub filters: Vec<NcFirFilter<T>>,
}

impl<T: Real> CausalFirEnhancer<T> {
    /// Accumulates the per-bin normal equations of every adaptation pair and
    /// solves once per bin. Reverberant spectrograms are truncated to the
    /// clean length.
    pub fn fit(
        adaptation: &[(ComplexSpectrogram<T>, ComplexSpectrogram<T>)],
        p: usize,
        ridge: Ridge<T>,
    ) -> Result<Self> {
        let first = adaptation.first().ok_or(Error::Empty("adaptation set"))?;
        let bins = first.0.bins;
        if adaptation.iter().any(|(x, y)| x.bins != bins || y.bins != bins) {
            return Err(Error::ShapeMismatch("adaptation spectrograms differ in bin count".into()));
        }
        let filters = (0..bins)
            .into_par_iter()
            .map(|k| {
                let wrap = |e: Error| Error::Bin { bin: k, source: Box::new(e) };
                let mut sys = NormalSystem::zeros(p, 0);
                for (x, y) in adaptation {
                    let xt = BinTrajectory::from_spectrogram(x, k);
                    let yt = BinTrajectory::from_spectrogram(y, k);
                    if yt.len() <= p {
                        continue;
                    }
                    sys.accumulate(&build_normal_system(&xt, &yt, p, 0).map_err(wrap)?).map_err(wrap)?;
                }
                if sys.frames == 0 {
                    return Err(wrap(Error::Underdetermined { taps: p + 1, frames: 0 }));
                }
                solve_normal_system(&sys, ridge).map_err(wrap)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { p, filters })
    }

    pub fn enhance(&self, x: &ComplexSpectrogram<T>) -> Result<ComplexSpectrogram<T>> {
        if x.bins != self.filters.len() {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram has {} bins, enhancer {}",
                x.bins,
                self.filters.len()
            )));
        }
        let mut out = ComplexSpectrogram::zeros(x.frames, x.config);
        for (k, f) in self.filters.iter().enumerate() {
            let traj: Vec<Complex<T>> = x.trajectory(k);
            out.set_trajectory(k, &apply_filter(f, &traj, x.frames));
        }
        Ok(out)
    }
}

/// Fitted state an enhancer may need.
#[derive(Debug, Clone, Default)]
pub struct EnhancerResources<T> {
    pub causal_fir: Option<CausalFirEnhancer<T>>,
}

/// Runs the named enhancer on a reverberant spectrogram. Enhancement happens
/// before featurization.
pub fn reference_enhancer<T: Real>(
    kind: EnhancerRef,
    reverb: &ComplexSpectrogram<T>,
    resources: &EnhancerResources<T>,
) -> Result<ComplexSpectrogram<T>> {
    match kind {
        EnhancerRef::Identity => Ok(reverb.clone()),
        EnhancerRef::CausalFir => resources
            .causal_fir
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("causal-fir enhancer has not been fitted".into()))?
            .enhance(reverb),
    }
}
