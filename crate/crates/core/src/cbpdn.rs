//! Convolutional basis pursuit denoising by frequency-domain ADMM.
//!
//! Solves `argmin_x 1/2 ||sum_m d_m * x_m - s||^2 + lambda sum_m ||x_m||_1`
//! with the splitting `x = y`. The x-update is a per-frequency rank-one
//! system `(d_n^H d_n + rho I) z_n = r_n`, solved in closed form.

use ndarray::{Array, Array3, ArrayBase, Data, Dimension, Zip};
use num_complex::Complex64;

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::transforms::{dict_apply, Fft2d, Signal, SpectrumSet};

#[derive(Clone, Debug, PartialEq)]
pub struct CbpdnConfig {
    pub lambda: f64,
    pub rho: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl CbpdnConfig {
    /// Defaults for a given `lambda`: `rho = 10 lambda`, 200 iterations,
    /// relative tolerance 1e-4, absolute tolerance 1e-6.
    pub fn new(lambda: f64) -> Self {
        CbpdnConfig {
            lambda,
            rho: 10.0 * lambda,
            max_iter: 200,
            rel_tol: 1e-4,
            abs_tol: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.lambda) {
            return Err(Error::invalid(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if !positive(self.rho) {
            return Err(Error::invalid(format!("rho must be > 0, got {}", self.rho)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("cbpdn max_iter must be >= 1"));
        }
        if !positive(self.rel_tol) || !positive(self.abs_tol) {
            return Err(Error::invalid("cbpdn tolerances must be > 0"));
        }
        Ok(())
    }
}

impl Default for CbpdnConfig {
    fn default() -> Self {
        Self::new(0.1)
    }
}

/// `M` coefficient maps, each the size of the coded signal, stored `(m, i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMaps {
    maps: Array3<f64>,
}

impl CoefficientMaps {
    pub fn new(maps: Array3<f64>) -> Result<Self> {
        if maps.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("coefficient maps must be finite"));
        }
        Ok(CoefficientMaps { maps })
    }

    pub fn zeros(count: usize, dims: (usize, usize)) -> Self {
        CoefficientMaps {
            maps: Array3::zeros((count, dims.0, dims.1)),
        }
    }

    pub fn count(&self) -> usize {
        self.maps.dim().0
    }

    pub fn dims(&self) -> (usize, usize) {
        let (_, n1, n2) = self.maps.dim();
        (n1, n2)
    }

    pub fn maps(&self) -> &Array3<f64> {
        &self.maps
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.maps
    }

    pub fn l1_norm(&self) -> f64 {
        self.maps.iter().map(|v| v.abs()).sum()
    }

    /// Half-plane spectra of the maps.
    pub fn spectra(&self, plan: &Fft2d) -> Result<SpectrumSet> {
        if plan.dims() != self.dims() {
            return Err(Error::invalid("maps and transform differ in size"));
        }
        Ok(plan.forward_set(self.maps.outer_iter()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub converged: bool,
}

/// Elementwise `sign(v) max(|v| - kappa, 0)`.
pub fn soft_threshold<S, D>(v: &ArrayBase<S, D>, kappa: f64) -> Array<f64, D>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    v.mapv(|a| shrink(a, kappa))
}

#[inline]
fn shrink(a: f64, kappa: f64) -> f64 {
    let m = a.abs() - kappa;
    if m > 0.0 {
        m.copysign(a)
    } else {
        0.0
    }
}

/// Solves `(d_n^H d_n + rho I) z_n = r_n` at every frequency `n`, where
/// `d_n` is the `1 x M` row of filter spectra.
pub fn solve_freq_diagonal_system(
    d_hat: &SpectrumSet,
    rho: f64,
    rhs: &SpectrumSet,
) -> Result<SpectrumSet> {
    d_hat.check_compatible(rhs, "solve_freq_diagonal_system")?;
    if !(rho > 0.0) {
        return Err(Error::invalid(format!("rho must be > 0, got {rho}")));
    }
    let energy = row_energy(d_hat);
    let mut out = rhs.clone();
    rank_one_solve(d_hat.as_slice(), &energy, rho, out.as_mut_slice());
    Ok(out)
}

/// `sum_m |d_hat[m, n]|^2` per frequency.
fn row_energy(d_hat: &SpectrumSet) -> Vec<f64> {
    let f = d_hat.freq_count();
    let d = d_hat.as_slice();
    let mut out = vec![0.0; f];
    for member in d.chunks_exact(f) {
        for (e, v) in out.iter_mut().zip(member) {
            *e += v.norm_sqr();
        }
    }
    out
}

/// In-place Sherman-Morrison solve over member-major `M x F` buffers:
/// `z = (r - d^H (d r) / (rho + d d^H)) / rho`.
fn rank_one_solve(d: &[Complex64], energy: &[f64], rho: f64, r: &mut [Complex64]) {
    let f = energy.len();
    let m = d.len() / f;
    let inv_rho = 1.0 / rho;
    for n in 0..f {
        let mut dr = Complex64::new(0.0, 0.0);
        for k in 0..m {
            dr += d[k * f + n] * r[k * f + n];
        }
        let c = dr / (rho + energy[n]);
        for k in 0..m {
            let idx = k * f + n;
            r[idx] = (r[idx] - d[idx].conj() * c) * inv_rho;
        }
    }
}

/// Exact value of the CBPDN objective with circular convolution.
pub fn cbpdn_objective(
    signal: &Signal,
    dict: &Dictionary,
    maps: &CoefficientMaps,
    lambda: f64,
) -> Result<f64> {
    let dims = signal.dims();
    if maps.dims() != dims || maps.count() != dict.count() {
        return Err(Error::invalid(format!(
            "maps {} x {:?} do not match signal {:?} and {} filters",
            maps.count(),
            maps.dims(),
            dims,
            dict.count()
        )));
    }
    let plan = Fft2d::new(dims)?;
    let d_hat = dict.spectra(&plan)?;
    objective_with(&plan, &d_hat, signal, maps.maps(), lambda)
}

fn objective_with(
    plan: &Fft2d,
    d_hat: &SpectrumSet,
    signal: &Signal,
    maps: &Array3<f64>,
    lambda: f64,
) -> Result<f64> {
    let x_hat = plan.forward_set(maps.outer_iter());
    let recon = plan.inverse(&dict_apply(d_hat, &x_hat)?)?;
    let data: f64 = recon
        .iter()
        .zip(signal.values().iter())
        .map(|(r, s)| (r - s) * (r - s))
        .sum();
    let l1: f64 = maps.iter().map(|v| v.abs()).sum();
    Ok(0.5 * data + lambda * l1)
}

/// Sparse coder bound to one dictionary and one signal size. Reuse it to
/// code many signals of the same size.
#[derive(Clone, Debug)]
pub struct CbpdnSolver {
    plan: Fft2d,
    d_hat: SpectrumSet,
    energy: Vec<f64>,
    count: usize,
    cfg: CbpdnConfig,
}

impl CbpdnSolver {
    pub fn new(dict: &Dictionary, dims: (usize, usize), cfg: &CbpdnConfig) -> Result<Self> {
        cfg.validate()?;
        dict.check_fits(dims)?;
        let plan = Fft2d::new(dims)?;
        let d_hat = dict.spectra(&plan)?;
        let energy = row_energy(&d_hat);
        Ok(CbpdnSolver {
            plan,
            d_hat,
            energy,
            count: dict.count(),
            cfg: cfg.clone(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.plan.dims()
    }

    pub fn solve(&self, signal: &Signal) -> Result<(CoefficientMaps, SolveStats)> {
        let dims = self.dims();
        if signal.dims() != dims {
            return Err(Error::invalid(format!(
                "signal is {:?}, solver set up for {:?}",
                signal.dims(),
                dims
            )));
        }
        let CbpdnConfig {
            lambda,
            rho,
            max_iter,
            rel_tol,
            abs_tol,
        } = self.cfg;
        let m = self.count;
        let shape = (m, dims.0, dims.1);
        let n_total = (m * dims.0 * dims.1) as f64;

        // D^H s, fixed part of every x-update right-hand side.
        let s_hat = self.plan.forward(signal.view())?;
        let mut dts = SpectrumSet::zeros(m, dims);
        {
            let f = dts.freq_count();
            let s = s_hat.data().as_slice().expect("standard layout");
            for (k, out) in dts.as_mut_slice().chunks_exact_mut(f).enumerate() {
                let d = &self.d_hat.as_slice()[k * f..(k + 1) * f];
                for ((o, d), s) in out.iter_mut().zip(d).zip(s) {
                    *o = d.conj() * s;
                }
            }
        }

        let mut y = Array3::<f64>::zeros(shape);
        let mut u = Array3::<f64>::zeros(shape);
        let mut y_prev = Array3::<f64>::zeros(shape);
        let mut stats = SolveStats {
            iterations: 0,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
            objective: f64::NAN,
            converged: false,
        };
        let kappa = lambda / rho;

        for iter in 1..=max_iter {
            // x-update
            let v = &y - &u;
            let mut rhs = self.plan.forward_set(v.outer_iter());
            Zip::from(rhs.data_mut())
                .and(dts.data())
                .for_each(|r, b| *r = b + *r * rho);
            rank_one_solve(self.d_hat.as_slice(), &self.energy, rho, rhs.as_mut_slice());
            let x = self.plan.inverse_set(&rhs);

            // y-update and scaled dual update
            std::mem::swap(&mut y, &mut y_prev);
            Zip::from(&mut y)
                .and(&x)
                .and(&u)
                .for_each(|y, x, u| *y = shrink(x + u, kappa));
            let mut primal_sq = 0.0;
            Zip::from(&mut u).and(&x).and(&y).for_each(|u, x, y| {
                let d = x - y;
                primal_sq += d * d;
                *u += d;
            });

            let primal = primal_sq.sqrt();
            let dual = rho * l2_diff(&y, &y_prev);
            if !primal.is_finite() || !dual.is_finite() {
                return Err(Error::NumericalFailure {
                    stage: "cbpdn",
                    iteration: iter,
                });
            }
            let eps_pri = n_total.sqrt() * abs_tol + rel_tol * l2(&x).max(l2(&y));
            let eps_dual = n_total.sqrt() * abs_tol + rel_tol * rho * l2(&u);
            stats.iterations = iter;
            stats.primal_residual = primal;
            stats.dual_residual = dual;
            if primal <= eps_pri && dual <= eps_dual {
                stats.converged = true;
                break;
            }
        }

        stats.objective = objective_with(&self.plan, &self.d_hat, signal, &y, lambda)?;
        Ok((CoefficientMaps { maps: y }, stats))
    }
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

/// Sparse-codes `signal` under `dict`. Maps start at zero.
pub fn cbpdn_solve(
    signal: &Signal,
    dict: &Dictionary,
    cfg: &CbpdnConfig,
) -> Result<(CoefficientMaps, SolveStats)> {
    CbpdnSolver::new(dict, signal.dims(), cfg)?.solve(signal)
}
