//! Forgetting-weighted surrogate state and the frequency-domain projected
//! FISTA dictionary update.
//!
//! The accumulator keeps, per half-plane frequency `n`, the `M x M` block
//! `A_n = sum_t w_t x_n^H x_n` and the vector `b_n = sum_t w_t x_n^H s_n`,
//! where `x_n` is the row of coefficient-map spectra at `n`. That is the
//! whole memory of past samples: its size depends on `M` and the frequency
//! grid, never on how many samples were seen.

use std::fmt;
use std::str::FromStr;

use ndarray::Array3;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::dictionary::{proj_cpn, Dictionary, UNIT_NORM_TOL};
use crate::error::{Error, Result};
use crate::transforms::{column_weight, freq_count, half_width, Fft2d, Spectrum, SpectrumSet};

/// Safety factor applied to the power-iteration eigenvalue estimate.
pub const LIPSCHITZ_SAFETY: f64 = 1.01;

// Per-frequency loops go parallel only in chunks at least this long.
const PAR_MIN_FREQS: usize = 256;

/// Forgetting exponent `p` of `alpha_t = (1 - 1/t)^p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ForgettingSchedule {
    Exponent(f64),
    /// `p = inf`: every step forgets all history.
    Infinite,
}

impl ForgettingSchedule {
    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 0.0 {
            return Err(Error::invalid(format!(
                "forgetting exponent must be >= 0, got {p}"
            )));
        }
        if p.is_infinite() {
            Ok(ForgettingSchedule::Infinite)
        } else {
            Ok(ForgettingSchedule::Exponent(p))
        }
    }

    pub fn factor(&self, t: u64) -> Result<f64> {
        forgetting_factor(t, *self)
    }
}

impl fmt::Display for ForgettingSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ForgettingSchedule::Exponent(p) => write!(f, "{p:?}"),
            ForgettingSchedule::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for ForgettingSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" => Ok(ForgettingSchedule::Infinite),
            other => {
                let p: f64 = other
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad forgetting exponent {s:?}")))?;
                ForgettingSchedule::new(p)
            }
        }
    }
}

/// `(1 - 1/t)^p` for the `t`-th sample (1-based).
pub fn forgetting_factor(t: u64, schedule: ForgettingSchedule) -> Result<f64> {
    if t == 0 {
        return Err(Error::invalid("forgetting factor is defined for t >= 1"));
    }
    Ok(match schedule {
        ForgettingSchedule::Infinite => 0.0,
        ForgettingSchedule::Exponent(0.0) => 1.0,
        ForgettingSchedule::Exponent(p) => (1.0 - 1.0 / t as f64).powf(p),
    })
}

/// Anything that exposes a quadratic surrogate over dictionary spectra.
///
/// `surrogate_gradient` returns, per frequency, the Wirtinger gradient
/// `A_n g_n - b_n`; its inverse transform is the spatial gradient.
pub trait Surrogate {
    fn dims(&self) -> (usize, usize);
    fn count(&self) -> usize;
    /// Number of samples folded in so far.
    fn samples(&self) -> u64;
    fn surrogate_value(&self, g_hat: &SpectrumSet) -> Result<f64>;
    fn surrogate_gradient(&self, g_hat: &SpectrumSet) -> Result<SpectrumSet>;
    /// Upper estimate of the gradient's Lipschitz constant.
    fn lipschitz_estimate(&self, power_iters: usize) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Accumulator {
    dims: (usize, usize),
    count: usize,
    t: u64,
    a_blocks: Vec<Complex64>,
    b_vecs: Vec<Complex64>,
    s_energy: f64,
}

impl Accumulator {
    pub fn new(count: usize, dims: (usize, usize)) -> Result<Self> {
        if count == 0 || dims.0 == 0 || dims.1 == 0 {
            return Err(Error::invalid(
                "accumulator needs M >= 1 and a non-empty grid",
            ));
        }
        let f = freq_count(dims);
        Ok(Accumulator {
            dims,
            count,
            t: 0,
            a_blocks: vec![Complex64::new(0.0, 0.0); f * count * count],
            b_vecs: vec![Complex64::new(0.0, 0.0); f * count],
            s_energy: 0.0,
        })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn freq_count(&self) -> usize {
        freq_count(self.dims)
    }

    /// Row-major `M x M` block at half-plane frequency `f`.
    pub fn block(&self, f: usize) -> &[Complex64] {
        let mm = self.count * self.count;
        &self.a_blocks[f * mm..(f + 1) * mm]
    }

    pub fn b_vec(&self, f: usize) -> &[Complex64] {
        &self.b_vecs[f * self.count..(f + 1) * self.count]
    }

    pub fn a_blocks(&self) -> &[Complex64] {
        &self.a_blocks
    }

    pub fn b_vecs(&self) -> &[Complex64] {
        &self.b_vecs
    }

    /// Forgetting-weighted `sum ||s_hat||^2` over the full plane.
    pub fn s_energy(&self) -> f64 {
        self.s_energy
    }

    /// Bytes held by the per-frequency blocks and vectors.
    pub fn payload_bytes(&self) -> usize {
        (self.a_blocks.capacity() + self.b_vecs.capacity()) * std::mem::size_of::<Complex64>()
    }

    /// Total bytes owned, payload plus the fixed-size header.
    pub fn footprint_bytes(&self) -> usize {
        self.payload_bytes() + std::mem::size_of::<Self>()
    }

    pub fn is_zero(&self) -> bool {
        self.t == 0
            || (self.s_energy == 0.0
                && self.a_blocks.iter().all(|v| v.norm_sqr() == 0.0)
                && self.b_vecs.iter().all(|v| v.norm_sqr() == 0.0))
    }

    /// Largest `|A_ij - conj(A_ji)|` over all blocks.
    pub fn max_hermitian_error(&self) -> f64 {
        let m = self.count;
        let mut worst: f64 = 0.0;
        for block in self.a_blocks.chunks_exact(m * m) {
            for i in 0..m {
                for j in 0..m {
                    worst = worst.max((block[i * m + j] - block[j * m + i].conj()).norm());
                }
            }
        }
        worst
    }

    fn check_spectra(&self, set: &SpectrumSet, what: &str) -> Result<()> {
        if set.count() != self.count || set.dims() != self.dims {
            return Err(Error::invalid(format!(
                "{what}: got {} x {:?}, accumulator holds {} x {:?}",
                set.count(),
                set.dims(),
                self.count,
                self.dims
            )));
        }
        Ok(())
    }

    /// Folds in one sample: `A <- alpha A + x^H x`, `b <- alpha b + x^H s`,
    /// `e <- alpha e + ||s||^2`, `t <- t + 1`.
    pub fn accumulate(&mut self, x_hat: &SpectrumSet, s_hat: &Spectrum, alpha: f64) -> Result<()> {
        self.check_spectra(x_hat, "accumulate")?;
        if s_hat.dims() != self.dims {
            return Err(Error::invalid(format!(
                "accumulate: signal spectrum is {:?}, accumulator holds {:?}",
                s_hat.dims(),
                self.dims
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        let m = self.count;
        let x = freq_major(x_hat);
        let s = s_hat.data().as_slice().expect("standard layout");

        self.a_blocks
            .par_chunks_mut(m * m)
            .zip(self.b_vecs.par_chunks_mut(m))
            .zip(x.par_chunks(m))
            .zip(s.par_iter())
            .with_min_len(PAR_MIN_FREQS)
            .for_each(|(((a, b), xn), sn)| {
                for i in 0..m {
                    let xi = xn[i].conj();
                    for j in 0..m {
                        a[i * m + j] = a[i * m + j] * alpha + xi * xn[j];
                    }
                    b[i] = b[i] * alpha + xi * sn;
                }
            });
        self.s_energy = self.s_energy * alpha + s_hat.full_plane_energy();
        self.t += 1;
        Ok(())
    }

    /// Per frequency, the Rayleigh quotient after `iters` power-iteration
    /// steps, started from the block's heaviest column.
    fn block_eigen_estimates(&self, iters: usize) -> Vec<f64> {
        let m = self.count;
        self.a_blocks
            .par_chunks(m * m)
            .with_min_len(PAR_MIN_FREQS)
            .map(|a| power_iteration(a, m, iters))
            .collect()
    }
}

fn power_iteration(a: &[Complex64], m: usize, iters: usize) -> f64 {
    let mut heaviest = 0;
    for i in 1..m {
        if a[i * m + i].re > a[heaviest * m + heaviest].re {
            heaviest = i;
        }
    }
    if !(a[heaviest * m + heaviest].re > 0.0) {
        return 0.0;
    }
    let mut v: Vec<Complex64> = (0..m).map(|i| a[i * m + heaviest]).collect();
    let mut w = vec![Complex64::new(0.0, 0.0); m];
    normalize(&mut v);
    for _ in 0..iters {
        mat_vec(a, m, &v, &mut w);
        if normalize(&mut w) == 0.0 {
            return 0.0;
        }
        std::mem::swap(&mut v, &mut w);
    }
    mat_vec(a, m, &v, &mut w);
    v.iter()
        .zip(&w)
        .map(|(vi, wi)| (vi.conj() * wi).re)
        .sum::<f64>()
        .max(0.0)
}

fn mat_vec(a: &[Complex64], m: usize, v: &[Complex64], out: &mut [Complex64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = a[i * m..(i + 1) * m]
            .iter()
            .zip(v)
            .map(|(aij, vj)| aij * vj)
            .sum();
    }
}

fn normalize(v: &mut [Complex64]) -> f64 {
    let n = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|c| *c /= n);
    }
    n
}

/// Transposes a member-major `M x F` spectrum set to frequency-major `F x M`.
fn freq_major(set: &SpectrumSet) -> Vec<Complex64> {
    let m = set.count();
    let f = set.freq_count();
    let src = set.as_slice();
    let mut out = vec![Complex64::new(0.0, 0.0); m * f];
    for k in 0..m {
        for n in 0..f {
            out[n * m + k] = src[k * f + n];
        }
    }
    out
}

impl Surrogate for Accumulator {
    fn dims(&self) -> (usize, usize) {
        self.dims
    }

    fn count(&self) -> usize {
        self.count
    }

    fn samples(&self) -> u64 {
        self.t
    }

    /// `1/2 sum_n w_n (g^H A g - 2 Re g^H b) + 1/2 e`, with `w_n` the
    /// full-plane multiplicity of each stored frequency.
    fn surrogate_value(&self, g_hat: &SpectrumSet) -> Result<f64> {
        self.check_spectra(g_hat, "surrogate_value")?;
        let m = self.count;
        let h = half_width(self.dims.1);
        let n2 = self.dims.1;
        let g = freq_major(g_hat);
        let terms: Vec<f64> = self
            .a_blocks
            .par_chunks(m * m)
            .zip(self.b_vecs.par_chunks(m))
            .zip(g.par_chunks(m))
            .enumerate()
            .with_min_len(PAR_MIN_FREQS)
            .map(|(n, ((a, b), gn))| {
                let mut quad = 0.0;
                let mut lin = 0.0;
                for i in 0..m {
                    let ag: Complex64 = (0..m).map(|j| a[i * m + j] * gn[j]).sum();
                    quad += (gn[i].conj() * ag).re;
                    lin += (gn[i].conj() * b[i]).re;
                }
                column_weight(n2, n % h) * (quad - 2.0 * lin)
            })
            .collect();
        Ok(0.5 * (terms.iter().sum::<f64>() + self.s_energy))
    }

    fn surrogate_gradient(&self, g_hat: &SpectrumSet) -> Result<SpectrumSet> {
        self.check_spectra(g_hat, "surrogate_gradient")?;
        let m = self.count;
        let f = self.freq_count();
        let g = freq_major(g_hat);
        let mut grad = vec![Complex64::new(0.0, 0.0); f * m];
        grad.par_chunks_mut(m)
            .zip(self.a_blocks.par_chunks(m * m))
            .zip(self.b_vecs.par_chunks(m))
            .zip(g.par_chunks(m))
            .with_min_len(PAR_MIN_FREQS)
            .for_each(|(((out, a), b), gn)| {
                for i in 0..m {
                    let ag: Complex64 = (0..m).map(|j| a[i * m + j] * gn[j]).sum();
                    out[i] = ag - b[i];
                }
            });
        let mut out = SpectrumSet::zeros(m, self.dims);
        let dst = out.as_mut_slice();
        for n in 0..f {
            for k in 0..m {
                dst[k * f + n] = grad[n * m + k];
            }
        }
        Ok(out)
    }

    fn lipschitz_estimate(&self, power_iters: usize) -> Result<f64> {
        if self.t == 0 {
            return Err(Error::InvalidState("accumulator is empty".into()));
        }
        let top = self
            .block_eigen_estimates(power_iters)
            .into_iter()
            .fold(0.0, f64::max);
        if !(top > 0.0) {
            return Err(Error::InvalidState(
                "accumulator blocks are all zero".into(),
            ));
        }
        Ok(LIPSCHITZ_SAFETY * top)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepPolicy {
    /// `1 / (1.01 * max_n lambda_max(A_n))`, estimated by power iteration.
    AutoLipschitz,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FistaConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub step: StepPolicy,
    pub power_iters: usize,
}

impl Default for FistaConfig {
    fn default() -> Self {
        FistaConfig {
            max_iter: 50,
            rel_tol: 1e-4,
            step: StepPolicy::AutoLipschitz,
            power_iters: 20,
        }
    }
}

impl FistaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.power_iters == 0 {
            return Err(Error::invalid(
                "fista max_iter and power_iters must be >= 1",
            ));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid("fista rel_tol must be > 0"));
        }
        if let StepPolicy::Fixed(eta) = self.step {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::invalid(format!("fixed step must be > 0, got {eta}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FistaStats {
    pub iterations: usize,
    pub rel_change: f64,
    pub value: f64,
    pub step_size: f64,
    pub restarts: usize,
}

/// Step size `1/L` for the dictionary update driven by `acc`.
pub fn estimate_step_size(acc: &Accumulator, cfg: &FistaConfig) -> Result<f64> {
    Ok(1.0 / acc.lipschitz_estimate(cfg.power_iters)?)
}

/// Next term of the Nesterov sequence, `(1 + sqrt(1 + 4 gamma^2)) / 2`.
pub fn nesterov_next(gamma: f64) -> f64 {
    (1.0 + (1.0 + 4.0 * gamma * gamma).sqrt()) / 2.0
}

/// Dictionary update on the accumulated surrogate, warm-started at `d_prev`.
pub fn fista_d_update(
    acc: &Accumulator,
    d_prev: &Dictionary,
    signal_dims: (usize, usize),
    cfg: &FistaConfig,
) -> Result<(Dictionary, FistaStats)> {
    if signal_dims != acc.dims {
        return Err(Error::invalid(format!(
            "signal dims {:?} differ from accumulator grid {:?}",
            signal_dims, acc.dims
        )));
    }
    fista_minimize(acc, d_prev, cfg)
}

/// Projected FISTA on any [`Surrogate`]:
///
/// ```text
/// G_{j+1}   = proj_CPN(IFFT2(G_aux - eta grad(G_aux)))
/// G_aux     = G_{j+1} + (gamma_j - 1)/gamma_{j+1} (G_{j+1} - G_j)
/// ```
///
/// If a candidate raises the surrogate, the momentum is dropped: the
/// candidate is replaced by a plain projected step from `G_j`, `gamma`
/// restarts at 1, and the iteration stops if even that step cannot descend.
/// The returned value therefore never exceeds the value at `d_prev`.
pub fn fista_minimize<S: Surrogate + ?Sized>(
    model: &S,
    d_prev: &Dictionary,
    cfg: &FistaConfig,
) -> Result<(Dictionary, FistaStats)> {
    cfg.validate()?;
    if model.samples() == 0 {
        return Err(Error::InvalidState(
            "dictionary update needs at least one sample".into(),
        ));
    }
    if d_prev.count() != model.count() {
        return Err(Error::invalid(format!(
            "dictionary has {} filters, surrogate expects {}",
            d_prev.count(),
            model.count()
        )));
    }
    let dims = model.dims();
    let support = d_prev.filter_dims();
    let plan = Fft2d::new(dims)?;
    let eta = match cfg.step {
        StepPolicy::Fixed(eta) => eta,
        StepPolicy::AutoLipschitz => 1.0 / model.lipschitz_estimate(cfg.power_iters)?,
    };

    let step = |from: &SpectrumSet, iteration: usize| -> Result<(Dictionary, SpectrumSet, f64)> {
        let grad = model.surrogate_gradient(from)?;
        let raw = plan.inverse_set(&from.axpy(-eta, &grad));
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure {
                stage: "fista",
                iteration,
            });
        }
        let next = proj_cpn(raw.view(), support)?.dictionary;
        let next_hat = next.spectra(&plan)?;
        let value = model.surrogate_value(&next_hat)?;
        if !value.is_finite() {
            return Err(Error::NumericalFailure {
                stage: "fista",
                iteration,
            });
        }
        Ok((next, next_hat, value))
    };

    let mut g = d_prev.clone();
    let mut g_hat = g.spectra(&plan)?;
    let mut value = model.surrogate_value(&g_hat)?;
    let mut aux_hat = g_hat.clone();
    let mut aux_is_g = true;
    let mut gamma = 1.0;
    let mut stats = FistaStats {
        iterations: 0,
        rel_change: f64::INFINITY,
        value,
        step_size: eta,
        restarts: 0,
    };

    for j in 1..=cfg.max_iter {
        stats.iterations = j;
        let (mut next, mut next_hat, mut next_value) = step(&aux_hat, j)?;
        let mut gamma_next = nesterov_next(gamma);

        if next_value > value {
            stats.restarts += 1;
            if !aux_is_g {
                (next, next_hat, next_value) = step(&g_hat, j)?;
            }
            if aux_is_g || next_value > value {
                stats.rel_change = 0.0;
                break;
            }
            gamma_next = 1.0;
            aux_hat = next_hat.clone();
            aux_is_g = true;
        } else {
            let beta = (gamma - 1.0) / gamma_next;
            aux_hat = next_hat.axpy(beta, &next_hat.axpy(-1.0, &g_hat));
            aux_is_g = beta == 0.0;
        }

        let diff = l2_diff(next.filters(), g.filters());
        let base = l2(g.filters());
        stats.rel_change = if base > 0.0 { diff / base } else { diff };
        g = next;
        g_hat = next_hat;
        value = next_value;
        gamma = gamma_next;
        if stats.rel_change < cfg.rel_tol {
            break;
        }
    }

    stats.value = value;
    debug_assert!(g.max_norm_error() <= UNIT_NORM_TOL);
    debug_assert_eq!(g.filter_dims(), support);
    Ok((g, stats))
}

fn l2(a: &Array3<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn l2_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
