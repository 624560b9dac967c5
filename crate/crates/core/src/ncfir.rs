//! Per-bin non-causal MSE-optimal complex FIR filtering.
//!
//! For one STFT bin, the clean trajectory `Y` is estimated from the
//! reverberant trajectory `X` as
//!
//! ```text
//! Yhat(n) = sum_{d=-q}^{p} g_d X(n - d)
//! ```
//!
//! so `q` future and `p` past frames contribute. Taps are stored in the
//! order `d = -q, ..., 0, ..., p` (future first), and `X` is taken as zero
//! outside its support. The regression runs over `n = 0..N_c` where `N_c`
//! is the clean length.
//!
//! The production solve builds the real `2(p+q+1)` normal system in the
//! unknowns `[g_r; g_j]`:
//!
//! ```text
//! (M_rr + M_jj) g_r - (M_rj - M_jr) g_j = R_XrYr + R_XjYj
//! (M_jr - M_rj) g_r - (M_rr + M_jj) g_j = R_XjYr - R_XrYj
//! ```
//!
//! and solves it directly. [`closed_form_solve`] evaluates the explicit
//! block-inverse expressions instead; it needs both `M_rr + M_jj` and the
//! antisymmetric `M_rj - M_jr` to be invertible, which never holds for an
//! odd tap count or for purely real trajectories. [`ls_oracle`] solves the
//! same problem from the explicit complex design matrix by SVD.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2};
use num_complex::Complex;
use rayon::prelude::*;

use crate::dsp::ComplexSpectrogram;
use crate::error::{Error, Result};
use crate::linalg::{self, Lu};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct BinTrajectory<T> {
    pub values: Vec<Complex<T>>,
    pub bin_index: usize,
}

impl<T: Real> BinTrajectory<T> {
    pub fn new(values: Vec<Complex<T>>, bin_index: usize) -> Result<Self> {
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("bin trajectory"));
        }
        Ok(Self { values, bin_index })
    }

    pub fn from_spectrogram(spec: &ComplexSpectrogram<T>, bin: usize) -> Self {
        Self {
            values: spec.trajectory(bin),
            bin_index: bin,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcFirFilter<T> {
    pub g_real: Vec<T>,
    pub g_imag: Vec<T>,
    /// Causal (past) context in frames.
    pub p: usize,
    /// Non-causal (future) context in frames.
    pub q: usize,
}

impl<T: Real> NcFirFilter<T> {
    pub fn zeros(p: usize, q: usize) -> Self {
        Self {
            g_real: vec![T::zero(); p + q + 1],
            g_imag: vec![T::zero(); p + q + 1],
            p,
            q,
        }
    }

    /// Single unit tap on the current frame.
    pub fn identity(p: usize, q: usize) -> Self {
        let mut f = Self::zeros(p, q);
        f.g_real[q] = T::one();
        f
    }

    pub fn from_taps(taps: &[Complex<T>], p: usize, q: usize) -> Result<Self> {
        if taps.len() != p + q + 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} taps for p={p}, q={q}",
                taps.len()
            )));
        }
        Ok(Self {
            g_real: taps.iter().map(|c| c.re).collect(),
            g_imag: taps.iter().map(|c| c.im).collect(),
            p,
            q,
        })
    }

    pub fn len(&self) -> usize {
        self.p + self.q + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tap(&self, l: usize) -> Complex<T> {
        Complex::new(self.g_real[l], self.g_imag[l])
    }

    pub fn taps(&self) -> Vec<Complex<T>> {
        (0..self.len()).map(|l| self.tap(l)).collect()
    }

    /// Frame delay of tap `l`: `-q` for the first (most future) tap, `p` for the last.
    pub fn delay(&self, l: usize) -> isize {
        l as isize - self.q as isize
    }

    pub fn norm(&self) -> T {
        self.g_real
            .iter()
            .chain(&self.g_imag)
            .map(|v| *v * *v)
            .sum::<T>()
            .sqrt()
    }
}

/// Correlation blocks of the real normal equations for one bin.
///
/// With regressors `u_l(n) = X(n - d_l)`, the entries are the exact finite
/// sums over the regression range, e.g. `M_rj[a][b] = sum_n Re u_a(n) Im u_b(n)`
/// and `R_XrYj[a] = sum_n Re u_a(n) Im Y(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalSystem<T> {
    pub p: usize,
    pub q: usize,
    pub m_rr: Array2<T>,
    pub m_jj: Array2<T>,
    pub m_rj: Array2<T>,
    pub m_jr: Array2<T>,
    pub r_xr_yr: Array1<T>,
    pub r_xj_yj: Array1<T>,
    pub r_xr_yj: Array1<T>,
    pub r_xj_yr: Array1<T>,
    /// Frames accumulated into the sums.
    pub frames: usize,
}

impl<T: Real> NormalSystem<T> {
    pub fn zeros(p: usize, q: usize) -> Self {
        let l = p + q + 1;
        Self {
            p,
            q,
            m_rr: Array2::zeros((l, l)),
            m_jj: Array2::zeros((l, l)),
            m_rj: Array2::zeros((l, l)),
            m_jr: Array2::zeros((l, l)),
            r_xr_yr: Array1::zeros(l),
            r_xj_yj: Array1::zeros(l),
            r_xr_yj: Array1::zeros(l),
            r_xj_yr: Array1::zeros(l),
            frames: 0,
        }
    }

    pub fn taps(&self) -> usize {
        self.p + self.q + 1
    }

    /// Adds another system's sums; fitting the result is equivalent to
    /// fitting one filter over the concatenated regression ranges.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        if (self.p, self.q) != (other.p, other.q) {
            return Err(Error::ShapeMismatch(format!(
                "cannot add (p,q)=({},{}) system to ({},{})",
                other.p, other.q, self.p, self.q
            )));
        }
        self.m_rr += &other.m_rr;
        self.m_jj += &other.m_jj;
        self.m_rj += &other.m_rj;
        self.m_jr += &other.m_jr;
        self.r_xr_yr += &other.r_xr_yr;
        self.r_xj_yj += &other.r_xj_yj;
        self.r_xr_yj += &other.r_xr_yj;
        self.r_xj_yr += &other.r_xj_yr;
        self.frames += other.frames;
        Ok(())
    }

    /// `(M_rr + M_jj, M_rj - M_jr)`.
    fn blocks(&self) -> (Array2<T>, Array2<T>) {
        (&self.m_rr + &self.m_jj, &self.m_rj - &self.m_jr)
    }

    /// The stacked `2L x 2L` matrix and right-hand side in `[g_r; g_j]`.
    pub fn stacked(&self) -> (Array2<T>, Array1<T>) {
        let l = self.taps();
        let (a, b) = self.blocks();
        let mut m = Array2::zeros((2 * l, 2 * l));
        m.slice_mut(s![..l, ..l]).assign(&a);
        m.slice_mut(s![..l, l..]).assign(&b.mapv(|v| -v));
        m.slice_mut(s![l.., ..l]).assign(&b);
        m.slice_mut(s![l.., l..]).assign(&a);
        let mut rhs = Array1::zeros(2 * l);
        rhs.slice_mut(s![..l]).assign(&(&self.r_xr_yr + &self.r_xj_yj));
        rhs.slice_mut(s![l..]).assign(&(&self.r_xr_yj - &self.r_xj_yr));
        (m, rhs)
    }

    pub fn is_finite(&self) -> bool {
        [&self.m_rr, &self.m_jj, &self.m_rj, &self.m_jr]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
            && [&self.r_xr_yr, &self.r_xj_yj, &self.r_xr_yj, &self.r_xj_yr]
                .iter()
                .all(|r| r.iter().all(|v| v.is_finite()))
    }
}

/// Diagonal loading for the stacked solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge<T> {
    Fixed(T),
    /// `1e-8 * trace(M_rr + M_jj) / (p + q + 1)`.
    Auto,
}

impl<T: Real> Default for Ridge<T> {
    fn default() -> Self {
        Ridge::Auto
    }
}

const AUTO_RIDGE_SCALE: f64 = 1e-8;

#[inline]
fn sample_at<T: Real>(x: &[Complex<T>], idx: isize) -> Complex<T> {
    if idx >= 0 && (idx as usize) < x.len() {
        x[idx as usize]
    } else {
        Complex::new(T::zero(), T::zero())
    }
}

fn check_fit_args<T>(x: &BinTrajectory<T>, y: &BinTrajectory<T>, p: usize, q: usize) -> Result<()> {
    if x.values.is_empty() || y.values.is_empty() {
        return Err(Error::Empty("bin trajectory"));
    }
    if y.values.len() > x.values.len() {
        return Err(Error::ShapeMismatch(format!(
            "clean trajectory ({}) longer than reverberant ({})",
            y.values.len(),
            x.values.len()
        )));
    }
    let taps = p + q + 1;
    if taps > y.values.len() {
        return Err(Error::Underdetermined {
            taps,
            frames: y.values.len(),
        });
    }
    Ok(())
}

pub fn build_normal_system<T: Real>(
    x: &BinTrajectory<T>,
    y: &BinTrajectory<T>,
    p: usize,
    q: usize,
) -> Result<NormalSystem<T>> {
    check_fit_args(x, y, p, q)?;
    let l = p + q + 1;
    let mut sys = NormalSystem::zeros(p, q);
    let mut ur = vec![T::zero(); l];
    let mut uj = vec![T::zero(); l];
    for (n, yn) in y.values.iter().enumerate() {
        for k in 0..l {
            let v = sample_at(&x.values, n as isize + q as isize - k as isize);
            ur[k] = v.re;
            uj[k] = v.im;
        }
        for a in 0..l {
            let (ra, ja) = (ur[a], uj[a]);
            for b in 0..l {
                sys.m_rr[[a, b]] += ra * ur[b];
                sys.m_jj[[a, b]] += ja * uj[b];
                sys.m_rj[[a, b]] += ra * uj[b];
                sys.m_jr[[a, b]] += ja * ur[b];
            }
            sys.r_xr_yr[a] += ra * yn.re;
            sys.r_xj_yj[a] += ja * yn.im;
            sys.r_xr_yj[a] += ra * yn.im;
            sys.r_xj_yr[a] += ja * yn.re;
        }
    }
    sys.frames = y.values.len();
    if !sys.is_finite() {
        return Err(Error::NonFinite("normal system"));
    }
    Ok(sys)
}

/// Solves the stacked real system with `ridge` added to its diagonal.
pub fn solve_normal_system<T: Real>(sys: &NormalSystem<T>, ridge: Ridge<T>) -> Result<NcFirFilter<T>> {
    let l = sys.taps();
    let (mut m, rhs) = sys.stacked();
    let lambda = match ridge {
        Ridge::Fixed(v) => {
            if !(v >= T::zero()) {
                return Err(Error::InvalidArgument("ridge must be non-negative".into()));
            }
            v
        }
        Ridge::Auto => {
            let trace = (0..l).map(|i| m[[i, i]]).sum::<T>();
            if trace == T::zero() {
                // No excitation in range: the minimum-norm minimizer is zero.
                return Ok(NcFirFilter::zeros(sys.p, sys.q));
            }
            T::of(AUTO_RIDGE_SCALE) * trace / T::of(l as f64)
        }
    };
    for i in 0..2 * l {
        m[[i, i]] += lambda;
    }
    let g = linalg::solve(&m, &rhs)?;
    Ok(NcFirFilter {
        g_real: g.slice(s![..l]).to_vec(),
        g_imag: g.slice(s![l..]).to_vec(),
        p: sys.p,
        q: sys.q,
    })
}

/// Fits the filter minimizing `sum_n |Yhat(n) - Y(n)|^2` over `n < len(Y)`.
pub fn fit_filter<T: Real>(
    x: &BinTrajectory<T>,
    y: &BinTrajectory<T>,
    p: usize,
    q: usize,
    ridge: Ridge<T>,
) -> Result<NcFirFilter<T>> {
    solve_normal_system(&build_normal_system(x, y, p, q)?, ridge)
}

/// Block-inverse evaluation of the normal equations:
///
/// ```text
/// g_r = (A^-1 (M_jr - M_rj) - (M_rj - M_jr)^-1 A)^-1
///       (A^-1 (R_XjYr - R_XrYj) - (M_rj - M_jr)^-1 (R_XrYr + R_XjYj))
/// g_j = (A^-1 (M_rj - M_jr) - (M_jr - M_rj)^-1 A)^-1
///       ((M_jr - M_rj)^-1 (R_XjYr - R_XrYj) - A^-1 (R_XrYr + R_XjYj))
/// ```
///
/// with `A = M_rr + M_jj`. Returns [`Error::Singular`] whenever one of the
/// intermediate inverses does not exist.
pub fn closed_form_solve<T: Real>(sys: &NormalSystem<T>) -> Result<NcFirFilter<T>> {
    let (a, b) = sys.blocks();
    let a_inv = linalg::inverse(&a)?;
    let b_inv = linalg::inverse(&b)?;
    let neg_b_inv = b_inv.mapv(|v| -v);
    let c1 = &sys.r_xr_yr + &sys.r_xj_yj;
    let c2 = &sys.r_xj_yr - &sys.r_xr_yj;

    let lhs_r = a_inv.dot(&b.mapv(|v| -v)) - b_inv.dot(&a);
    let rhs_r = a_inv.dot(&c2) - b_inv.dot(&c1);
    let g_r = Lu::new(&lhs_r)?.solve(&rhs_r);

    let lhs_j = a_inv.dot(&b) - neg_b_inv.dot(&a);
    let rhs_j = neg_b_inv.dot(&c2) - a_inv.dot(&c1);
    let g_j = Lu::new(&lhs_j)?.solve(&rhs_j);

    Ok(NcFirFilter {
        g_real: g_r.to_vec(),
        g_imag: g_j.to_vec(),
        p: sys.p,
        q: sys.q,
    })
}

/// `Yhat(n)` for `n < out_len`, zero-padding `x` outside its support.
pub fn apply_filter<T: Real>(filter: &NcFirFilter<T>, x: &[Complex<T>], out_len: usize) -> Vec<Complex<T>> {
    let taps = filter.taps();
    (0..out_len)
        .map(|n| {
            taps.iter().enumerate().fold(Complex::new(T::zero(), T::zero()), |acc, (l, g)| {
                acc + *g * sample_at(x, n as isize - filter.delay(l))
            })
        })
        .collect()
}

/// `sum_n |yhat(n) - y(n)|^2`.
pub fn prediction_error<T: Real>(yhat: &[Complex<T>], y: &[Complex<T>]) -> Result<T> {
    if yhat.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} frames, reference {}",
            yhat.len(),
            y.len()
        )));
    }
    Ok(yhat.iter().zip(y).map(|(a, b)| (*a - *b).norm_sqr()).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit<T> {
    pub filter: NcFirFilter<T>,
    /// Numerical rank of the design matrix.
    pub rank: usize,
}

impl<T> OracleFit<T> {
    pub fn rank_deficient(&self) -> bool {
        self.rank < self.filter.p + self.filter.q + 1
    }
}

/// Reference least-squares fit: explicit `N_c x (p+q+1)` complex design
/// matrix, minimum-norm solution through an SVD in `f64`.
pub fn ls_oracle<T: Real>(x: &BinTrajectory<T>, y: &BinTrajectory<T>, p: usize, q: usize) -> Result<OracleFit<T>> {
    check_fit_args(x, y, p, q)?;
    let l = p + q + 1;
    let rows = y.values.len();
    let to64 = |c: Complex<T>| Complex::new(c.re.to_f64_lossy(), c.im.to_f64_lossy());
    let design = DMatrix::from_fn(rows, l, |n, k| {
        to64(sample_at(&x.values, n as isize + q as isize - k as isize))
    });
    let target = DMatrix::from_fn(rows, 1, |n, _| to64(y.values[n]));
    let svd = design.svd(true, true);
    let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let sigma = &svd.singular_values;
    let smax = sigma.iter().cloned().fold(0.0f64, f64::max);
    let tol = smax * rows.max(l) as f64 * f64::EPSILON;
    let uh_y = u.adjoint() * target;
    let mut g = DMatrix::<Complex<f64>>::zeros(l, 1);
    let mut rank = 0;
    for (i, s) in sigma.iter().enumerate() {
        if *s > tol && smax > 0.0 {
            rank += 1;
            let coef = uh_y[(i, 0)] / *s;
            for k in 0..l {
                g[(k, 0)] += v_t[(i, k)].conj() * coef;
            }
        }
    }
    let taps: Vec<Complex<T>> = (0..l).map(|k| Complex::new(T::of(g[(k, 0)].re), T::of(g[(k, 0)].im))).collect();
    Ok(OracleFit {
        filter: NcFirFilter::from_taps(&taps, p, q)?,
        rank,
    })
}

/// Result of fitting one filter per bin.
#[derive(Debug, Clone)]
pub struct BinwiseFit<T> {
    /// Filtered estimate, `N_c` frames.
    pub estimate: ComplexSpectrogram<T>,
    pub filters: Vec<NcFirFilter<T>>,
    /// In-sample prediction error per bin.
    pub errors: Vec<T>,
}

impl<T: Real> BinwiseFit<T> {
    pub fn total_error(&self) -> T {
        self.errors.iter().copied().sum()
    }
}

/// Fits and applies an independent filter for every bin of `x` against `y`.
pub fn dereverberate_spectrogram<T: Real>(
    x: &ComplexSpectrogram<T>,
    y: &ComplexSpectrogram<T>,
    p: usize,
    q: usize,
    ridge: Ridge<T>,
) -> Result<BinwiseFit<T>> {
    if x.bins != y.bins {
        return Err(Error::ShapeMismatch(format!("{} vs {} bins", x.bins, y.bins)));
    }
    if y.frames > x.frames {
        return Err(Error::ShapeMismatch(format!(
            "clean has {} frames, reverberant only {}",
            y.frames, x.frames
        )));
    }
    let per_bin: Vec<(NcFirFilter<T>, Vec<Complex<T>>, T)> = (0..x.bins)
        .into_par_iter()
        .map(|k| {
            let xt = BinTrajectory::from_spectrogram(x, k);
            let yt = BinTrajectory::from_spectrogram(y, k);
            let wrap = |e: Error| Error::Bin { bin: k, source: Box::new(e) };
            let filter = fit_filter(&xt, &yt, p, q, ridge).map_err(wrap)?;
            let yhat = apply_filter(&filter, &xt.values, yt.len());
            let err = prediction_error(&yhat, &yt.values).map_err(wrap)?;
            Ok((filter, yhat, err))
        })
        .collect::<Result<_>>()?;
    let mut estimate = ComplexSpectrogram::zeros(y.frames, y.config);
    let mut filters = Vec::with_capacity(x.bins);
    let mut errors = Vec::with_capacity(x.bins);
    for (k, (f, yhat, e)) in per_bin.into_iter().enumerate() {
        estimate.set_trajectory(k, &yhat);
        filters.push(f);
        errors.push(e);
    }
    Ok(BinwiseFit {
        estimate,
        filters,
        errors,
    })
}

/// Total in-sample error over all bins divided by the clean energy.
pub fn normalized_error<T: Real>(
    x: &ComplexSpectrogram<T>,
    y: &ComplexSpectrogram<T>,
    p: usize,
    q: usize,
    ridge: Ridge<T>,
) -> Result<T> {
    let fit = dereverberate_spectrogram(x, y, p, q, ridge)?;
    let energy = y.energy();
    let total = fit.total_error();
    Ok(if energy > T::zero() { total / energy } else { total })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub p: usize,
    pub q: usize,
    pub taps: usize,
    /// `100 p / (p + q)`; zero when `p + q = 0`.
    pub ratio_percent: f64,
    pub mean_err: f64,
    pub utterance_count: usize,
}

/// Mean normalized in-sample error per `(p, q)` over `(reverberant, clean)` pairs.
pub fn context_sweep<T: Real>(
    corpus: &[(ComplexSpectrogram<T>, ComplexSpectrogram<T>)],
    grid: &[(usize, usize)],
    ridge: Ridge<T>,
) -> Result<Vec<SweepRow>> {
    if corpus.is_empty() {
        return Err(Error::Empty("sweep corpus"));
    }
    if grid.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    grid.iter()
        .map(|&(p, q)| {
            let errs: Vec<f64> = corpus
                .par_iter()
                .map(|(x, y)| normalized_error(x, y, p, q, ridge).map(|e| e.to_f64_lossy()))
                .collect::<Result<_>>()?;
            let mut acc = crate::scalar::CompensatedSum::new();
            errs.iter().for_each(|e| acc.add(*e));
            Ok(SweepRow {
                p,
                q,
                taps: p + q + 1,
                ratio_percent: if p + q == 0 { 0.0 } else { 100.0 * p as f64 / (p + q) as f64 },
                mean_err: acc.value() / errs.len() as f64,
                utterance_count: errs.len(),
            })
        })
        .collect()
}

/// CSV `bin,tap_index,g_real,g_imag`; `tap_index` runs `-q..=p` (frame delay).
pub fn write_filter_csv<T: Real>(filters: &[NcFirFilter<T>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "bin,tap_index,g_real,g_imag").map_err(io)?;
    for (bin, f) in filters.iter().enumerate() {
        for l in 0..f.len() {
            writeln!(
                w,
                "{},{},{},{}",
                bin,
                f.delay(l),
                f.g_real[l].to_f64_lossy(),
                f.g_imag[l].to_f64_lossy()
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "p,q,taps,ratio_percent,mean_err,utterance_count").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.p, r.q, r.taps, r.ratio_percent, r.mean_err, r.utterance_count
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type C = Complex<f64>;

    fn random_traj(rng: &mut ChaCha8Rng, n: usize) -> BinTrajectory<f64> {
        BinTrajectory::new(
            (0..n).map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect(),
            0,
        )
        .unwrap()
    }

    fn traj(values: Vec<C>) -> BinTrajectory<f64> {
        BinTrajectory::new(values, 0).unwrap()
    }

    fn rel_tap_diff(a: &NcFirFilter<f64>, b: &NcFirFilter<f64>) -> f64 {
        let diff: f64 = a.taps().iter().zip(b.taps()).map(|(u, v)| (u - v).norm_sqr()).sum();
        diff.sqrt() / b.norm().max(1e-300)
    }

    /// Independent Gram computation from the explicit regressor matrix.
    fn design_gram(x: &[C], nc: usize, p: usize, q: usize) -> Vec<Vec<C>> {
        let l = p + q + 1;
        (0..nc)
            .map(|n| {
                (0..l)
                    .map(|k| {
                        let idx = n as isize + q as isize - k as isize;
                        if idx >= 0 && (idx as usize) < x.len() { x[idx as usize] } else { C::new(0.0, 0.0) }
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn real_trajectories_leave_imaginary_blocks_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = traj((0..30).map(|_| C::new(rng.gen_range(-1.0..1.0), 0.0)).collect());
        let sys = build_normal_system(&x, &x, 2, 1).unwrap();
        for m in [&sys.m_jj, &sys.m_rj, &sys.m_jr] {
            assert!(m.iter().all(|v| *v == 0.0));
        }
        for r in [&sys.r_xj_yj, &sys.r_xr_yj, &sys.r_xj_yr] {
            assert!(r.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn scalar_case_reduces_to_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_traj(&mut rng, 20);
        let y = random_traj(&mut rng, 20);
        let sys = build_normal_system(&x, &y, 0, 0).unwrap();
        assert_eq!(sys.m_rr.dim(), (1, 1));
        let m: f64 = x.values.iter().map(|v| v.re * v.re).sum();
        let r: f64 = x.values.iter().zip(&y.values).map(|(a, b)| a.re * b.re).sum();
        assert!((sys.m_rr[[0, 0]] - m).abs() < 1e-12);
        assert!((sys.r_xr_yr[0] - r).abs() < 1e-12);
    }

    #[test]
    fn normal_system_matches_design_matrix_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, q) = (2, 1);
        let x = random_traj(&mut rng, 50);
        let y = random_traj(&mut rng, 50);
        let sys = build_normal_system(&x, &y, p, q).unwrap();
        let u = design_gram(&x.values, 50, p, q);
        for a in 0..4 {
            for b in 0..4 {
                let (mut rr, mut jj, mut rj, mut jr) = (0.0, 0.0, 0.0, 0.0);
                for row in &u {
                    rr += row[a].re * row[b].re;
                    jj += row[a].im * row[b].im;
                    rj += row[a].re * row[b].im;
                    jr += row[a].im * row[b].re;
                }
                assert!((sys.m_rr[[a, b]] - rr).abs() < 1e-12);
                assert!((sys.m_jj[[a, b]] - jj).abs() < 1e-12);
                assert!((sys.m_rj[[a, b]] - rj).abs() < 1e-12);
                assert!((sys.m_jr[[a, b]] - jr).abs() < 1e-12);
            }
            let (mut a1, mut a2, mut a3, mut a4) = (0.0, 0.0, 0.0, 0.0);
            for (row, yn) in u.iter().zip(&y.values) {
                a1 += row[a].re * yn.re;
                a2 += row[a].im * yn.im;
                a3 += row[a].re * yn.im;
                a4 += row[a].im * yn.re;
            }
            assert!((sys.r_xr_yr[a] - a1).abs() < 1e-12);
            assert!((sys.r_xj_yj[a] - a2).abs() < 1e-12);
            assert!((sys.r_xr_yj[a] - a3).abs() < 1e-12);
            assert!((sys.r_xj_yr[a] - a4).abs() < 1e-12);
        }
    }

    #[test]
    fn argument_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_traj(&mut rng, 5);
        let empty = traj(vec![]);
        assert!(matches!(build_normal_system(&empty, &empty, 0, 0), Err(Error::Empty(_))));
        assert!(matches!(
            build_normal_system(&x, &x, 3, 2),
            Err(Error::Underdetermined { taps: 6, frames: 5 })
        ));
        let zero = traj(vec![C::new(0.0, 0.0); 10]);
        assert!(matches!(fit_filter(&zero, &zero, 1, 0, Ridge::Fixed(0.0)), Err(Error::Singular)));
        assert_eq!(fit_filter(&zero, &zero, 1, 0, Ridge::Auto).unwrap(), NcFirFilter::zeros(1, 0));
    }

    #[test]
    fn identity_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_traj(&mut rng, 40);
        let f = fit_filter(&x, &x, 0, 0, Ridge::Fixed(0.0)).unwrap();
        assert!((f.tap(0) - C::new(1.0, 0.0)).norm() < 1e-12);
        let e = prediction_error(&apply_filter(&f, &x.values, 40), &x.values).unwrap();
        assert!(e < 1e-20);
    }

    #[test]
    fn causal_two_tap_channel_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_traj(&mut rng, 60);
        let y: Vec<C> = (0..60)
            .map(|n| x.values[n] * 0.8 - if n > 0 { x.values[n - 1] * 0.2 } else { C::new(0.0, 0.0) })
            .collect();
        let f = fit_filter(&x, &traj(y.clone()), 1, 0, Ridge::Fixed(0.0)).unwrap();
        assert!((f.tap(0) - C::new(0.8, 0.0)).norm() < 1e-10);
        assert!((f.tap(1) - C::new(-0.2, 0.0)).norm() < 1e-10);
        let yhat = apply_filter(&f, &x.values, 60);
        assert!(prediction_error(&yhat, &y).unwrap() <= 1e-18);
        for (a, b) in yhat.iter().zip(&y) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn non_causal_pure_shift_uses_imaginary_tap() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_traj(&mut rng, 50);
        let y: Vec<C> = (0..50)
            .map(|n| if n + 1 < 50 { C::new(0.0, 1.0) * x.values[n + 1] } else { C::new(0.0, 0.0) })
            .collect();
        let f = fit_filter(&x, &traj(y), 0, 1, Ridge::Fixed(0.0)).unwrap();
        assert_eq!(f.delay(0), -1);
        assert!((f.tap(0) - C::new(0.0, 1.0)).norm() < 1e-10);
        assert!(f.tap(1).norm() < 1e-10);
    }

    #[test]
    fn fit_matches_oracle_on_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_traj(&mut rng, 200);
        let y = random_traj(&mut rng, 200);
        let f = fit_filter(&x, &y, 5, 5, Ridge::Fixed(0.0)).unwrap();
        let o = ls_oracle(&x, &y, 5, 5).unwrap();
        assert_eq!(o.rank, 11);
        assert!(rel_tap_diff(&f, &o.filter) <= 1e-6);
    }

    #[test]
    fn oracle_degenerate_cases() {
        let zero = traj(vec![C::new(0.0, 0.0); 12]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = random_traj(&mut rng, 12);
        let o = ls_oracle(&zero, &y, 1, 1).unwrap();
        assert_eq!(o.rank, 0);
        assert!(o.rank_deficient());
        assert_eq!(o.filter.norm(), 0.0);

        let x = random_traj(&mut rng, 12);
        let o = ls_oracle(&x, &y, 0, 0).unwrap();
        let num: C = x.values.iter().zip(&y.values).map(|(a, b)| a.conj() * b).sum();
        let den: f64 = x.values.iter().map(|a| a.norm_sqr()).sum();
        assert!((o.filter.tap(0) - num / den).norm() < 1e-12);

        // Reproduces the exact-model examples.
        let y2: Vec<C> = (0..12)
            .map(|n| x.values[n] * 0.8 - if n > 0 { x.values[n - 1] * 0.2 } else { C::new(0.0, 0.0) })
            .collect();
        let o = ls_oracle(&x, &traj(y2), 1, 0).unwrap();
        assert!((o.filter.tap(0) - C::new(0.8, 0.0)).norm() < 1e-10);
        assert!((o.filter.tap(1) - C::new(-0.2, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn closed_form_agrees_with_direct_solve_for_even_tap_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for (p, q) in [(1, 0), (0, 1), (2, 1), (1, 2), (3, 2)] {
            let x = random_traj(&mut rng, 120);
            let y = random_traj(&mut rng, 120);
            let sys = build_normal_system(&x, &y, p, q).unwrap();
            let direct = solve_normal_system(&sys, Ridge::Fixed(0.0)).unwrap();
            let closed = closed_form_solve(&sys).unwrap();
            assert!(rel_tap_diff(&closed, &direct) <= 1e-8);
        }
    }

    #[test]
    fn closed_form_needs_invertible_antisymmetric_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_traj(&mut rng, 80);
        let y = random_traj(&mut rng, 80);
        // Odd tap count: M_rj - M_jr is antisymmetric and therefore singular.
        let sys = build_normal_system(&x, &y, 1, 1).unwrap();
        assert!(matches!(closed_form_solve(&sys), Err(Error::Singular)));
        assert!(solve_normal_system(&sys, Ridge::Fixed(0.0)).is_ok());

        // Real trajectories: the antisymmetric block vanishes entirely.
        let xr = traj(x.values.iter().map(|v| C::new(v.re, 0.0)).collect());
        let yr = traj(y.values.iter().map(|v| C::new(v.re, 0.0)).collect());
        let sys = build_normal_system(&xr, &yr, 1, 0).unwrap();
        assert!(matches!(closed_form_solve(&sys), Err(Error::Singular)));
        let direct = solve_normal_system(&sys, Ridge::Fixed(0.0)).unwrap();
        let oracle = ls_oracle(&xr, &yr, 1, 0).unwrap();
        assert!(rel_tap_diff(&direct, &oracle.filter) <= 1e-10);
    }

    #[test]
    fn flipping_the_r_xj_yj_sign_breaks_the_closed_form() {
        // Using R_XrYr - R_XjYj in the right-hand side does not give the minimizer.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_traj(&mut rng, 100);
        let y = random_traj(&mut rng, 100);
        let mut sys = build_normal_system(&x, &y, 1, 0).unwrap();
        let good = closed_form_solve(&sys).unwrap();
        let oracle = ls_oracle(&x, &y, 1, 0).unwrap().filter;
        assert!(rel_tap_diff(&good, &oracle) <= 1e-8);
        sys.r_xj_yj.mapv_inplace(|v| -v);
        let flipped = closed_form_solve(&sys).unwrap();
        assert!(rel_tap_diff(&flipped, &oracle) > 1e-3);
    }

    #[test]
    fn fitted_taps_are_a_local_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let (p, q) = (rng.gen_range(0..4), rng.gen_range(0..4));
            let x = random_traj(&mut rng, 80);
            let y = random_traj(&mut rng, 80);
            let f = fit_filter(&x, &y, p, q, Ridge::Fixed(0.0)).unwrap();
            let e0 = prediction_error(&apply_filter(&f, &x.values, 80), &y.values).unwrap();
            for l in 0..f.len() {
                for delta in [1e-3, -1e-3] {
                    for imag in [false, true] {
                        let mut g = f.clone();
                        if imag { g.g_imag[l] += delta } else { g.g_real[l] += delta }
                        let e = prediction_error(&apply_filter(&g, &x.values, 80), &y.values).unwrap();
                        assert!(e >= e0);
                    }
                }
            }
        }
    }

    #[test]
    fn enlarging_context_never_increases_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_traj(&mut rng, 90);
        let y = random_traj(&mut rng, 80);
        let err = |p, q| {
            let f = fit_filter(&x, &y, p, q, Ridge::Fixed(0.0)).unwrap();
            prediction_error(&apply_filter(&f, &x.values, 80), &y.values).unwrap()
        };
        let chain = [(0, 0), (1, 0), (1, 1), (1, 2), (2, 2), (5, 5)];
        for w in chain.windows(2) {
            assert!(err(w[1].0, w[1].1) <= err(w[0].0, w[0].1) + 1e-9);
        }
    }

    #[test]
    fn apply_filter_is_linear_and_zero_padded() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let a = random_traj(&mut rng, 30).values;
        let b = random_traj(&mut rng, 30).values;
        let taps: Vec<C> = random_traj(&mut rng, 4).values;
        let f = NcFirFilter::from_taps(&taps, 2, 1).unwrap();
        let (ca, cb) = (C::new(0.3, -0.7), C::new(-1.1, 0.2));
        let mix: Vec<C> = a.iter().zip(&b).map(|(u, v)| ca * u + cb * v).collect();
        let (ya, yb, ym) = (apply_filter(&f, &a, 30), apply_filter(&f, &b, 30), apply_filter(&f, &mix, 30));
        for i in 0..30 {
            assert!((ym[i] - (ca * ya[i] + cb * yb[i])).norm() < 1e-12);
        }
        let g2 = NcFirFilter::from_taps(&random_traj(&mut rng, 4).values, 2, 1).unwrap();
        let sum = NcFirFilter::from_taps(&f.taps().iter().zip(g2.taps()).map(|(u, v)| u + v).collect::<Vec<_>>(), 2, 1).unwrap();
        let (y1, y2, ys) = (apply_filter(&f, &a, 30), apply_filter(&g2, &a, 30), apply_filter(&sum, &a, 30));
        for i in 0..30 {
            assert!((ys[i] - (y1[i] + y2[i])).norm() < 1e-12);
        }

        let id = apply_filter(&NcFirFilter::identity(3, 2), &a, 20);
        assert_eq!(id, a[..20].to_vec());
        let z = apply_filter(&NcFirFilter::<f64>::zeros(2, 2), &a, 30);
        assert!(z.iter().all(|v| v.norm() == 0.0));
        // out_len beyond the input support reads zeros.
        let long = apply_filter(&NcFirFilter::identity(0, 0), &a, 35);
        assert!(long[30..].iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn prediction_error_arithmetic() {
        let y = vec![C::new(1.0, 2.0), C::new(-0.5, 0.0), C::new(0.0, 0.0)];
        assert_eq!(prediction_error(&y, &y).unwrap(), 0.0);
        let mut a = y.clone();
        a[1] += C::new(1.0, 0.0);
        assert_eq!(prediction_error(&a, &y).unwrap(), 1.0);
        let mut b = y.clone();
        b[2] += C::new(3.0, 4.0);
        assert_eq!(prediction_error(&b, &y).unwrap(), 25.0);
        assert!(prediction_error(&y[..2], &y).is_err());
    }

    #[test]
    fn accumulated_system_minimizes_the_summed_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let (x1, y1) = (random_traj(&mut rng, 40), random_traj(&mut rng, 40));
        let (x2, y2) = (random_traj(&mut rng, 40), random_traj(&mut rng, 40));
        let s1 = build_normal_system(&x1, &y1, 1, 1).unwrap();
        let s2 = build_normal_system(&x2, &y2, 1, 1).unwrap();
        let mut sys = s1.clone();
        sys.accumulate(&s2).unwrap();
        assert_eq!(sys.frames, 80);
        assert!((&sys.m_rr - &(&s1.m_rr + &s2.m_rr)).iter().all(|v| v.abs() < 1e-12));
        assert!((&sys.r_xr_yj - &(&s1.r_xr_yj + &s2.r_xr_yj)).iter().all(|v| v.abs() < 1e-12));

        let g = solve_normal_system(&sys, Ridge::Fixed(0.0)).unwrap();
        let total = |f: &NcFirFilter<f64>| {
            let e1 = prediction_error(&apply_filter(f, &x1.values, 40), &y1.values).unwrap();
            let e2 = prediction_error(&apply_filter(f, &x2.values, 40), &y2.values).unwrap();
            e1 + e2
        };
        let best = total(&g);
        for _ in 0..20 {
            let taps: Vec<C> = g
                .taps()
                .iter()
                .map(|t| t + C::new(rng.gen_range(-1e-3..1e-3), rng.gen_range(-1e-3..1e-3)))
                .collect();
            assert!(total(&NcFirFilter::from_taps(&taps, 1, 1).unwrap()) >= best);
        }
        assert!(sys.accumulate(&NormalSystem::zeros(2, 0)).is_err());
    }

    #[test]
    fn spectrogram_identity_fit_has_zero_error() {
        use crate::dsp::{stft, StftConfig, Waveform};
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = Waveform::new((0..4000).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16_000).unwrap();
        let s = stft(&w, &StftConfig::default()).unwrap();
        let fit = dereverberate_spectrogram(&s, &s, 1, 1, Ridge::Auto).unwrap();
        assert_eq!(fit.filters.len(), 257);
        assert!(fit.total_error() <= 1e-12 * s.energy());
        for (a, b) in fit.estimate.values.iter().zip(&s.values) {
            assert!((a - b).norm() < 1e-6);
        }
        let rows = context_sweep(&[(s.clone(), s.clone())], &[(0, 0)], Ridge::Auto).unwrap();
        assert!(rows[0].mean_err < 1e-12);
        assert_eq!(rows[0].utterance_count, 1);
    }

    #[test]
    fn bin_errors_carry_the_bin_index() {
        use crate::dsp::{ComplexSpectrogram, StftConfig};
        let s = ComplexSpectrogram::<f64>::zeros(10, StftConfig::default());
        let e = dereverberate_spectrogram(&s, &s, 0, 0, Ridge::Fixed(0.0)).unwrap_err();
        assert!(matches!(e, Error::Bin { bin: 0, .. }));
    }

    #[test]
    fn csv_writers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_filter_csv(&[NcFirFilter::<f64>::identity(1, 1)], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "bin,tap_index,g_real,g_imag\n0,-1,0,0\n0,0,1,0\n0,1,0,0\n");
        let rows = vec![SweepRow { p: 2, q: 2, taps: 5, ratio_percent: 50.0, mean_err: 0.25, utterance_count: 3 }];
        write_sweep_csv(&rows, dir.path().join("s.csv")).unwrap();
        let t = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
        assert_eq!(t, "p,q,taps,ratio_percent,mean_err,utterance_count\n2,2,5,50,0.25,3\n");
    }
}
