//! Brute-force reference implementations shared by the integration tests.
//! Nothing here goes through the library's FFT or accumulator paths except
//! where a test explicitly compares against them.

#![allow(dead_code)]

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use ocdl::transforms::{column_weight, half_width};
use ocdl::{Dictionary, Result, Signal, Spectrum, SpectrumSet, Surrogate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_array(dims: (usize, usize), rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(dims, || rng.sample(StandardNormal))
}

pub fn normal_array3(dims: (usize, usize, usize), rng: &mut impl Rng) -> Array3<f64> {
    Array3::from_shape_simple_fn(dims, || rng.sample(StandardNormal))
}

pub fn normal_signal(dims: (usize, usize), rng: &mut impl Rng) -> Signal {
    Signal::new(normal_array(dims, rng)).unwrap()
}

pub fn random_spectrum_set(m: usize, dims: (usize, usize), rng: &mut impl Rng) -> SpectrumSet {
    let h = half_width(dims.1);
    let data = Array3::from_shape_simple_fn((m, dims.0, h), || {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    SpectrumSet::from_half_planes(dims, data).unwrap()
}

/// Full-plane DFT by the defining double sum.
pub fn naive_dft(x: &Array2<f64>) -> Array2<Complex64> {
    let (n1, n2) = x.dim();
    Array2::from_shape_fn((n1, n2), |(k1, k2)| {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n1 {
            for j in 0..n2 {
                let phase = -2.0
                    * std::f64::consts::PI
                    * ((k1 * i) as f64 / n1 as f64 + (k2 * j) as f64 / n2 as f64);
                acc += Complex64::from_polar(x[(i, j)], phase);
            }
        }
        acc
    })
}

/// `(d * x)[i, j] = sum_{a, b} d[a, b] x[i - a, j - b]`, indices mod N.
pub fn circ_conv(d: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    let (n1, n2) = x.dim();
    let (l1, l2) = d.dim();
    Array2::from_shape_fn((n1, n2), |(i, j)| {
        let mut acc = 0.0;
        for a in 0..l1 {
            for b in 0..l2 {
                acc += d[(a, b)] * x[((i + n1 * l1 - a) % n1, (j + n2 * l2 - b) % n2)];
            }
        }
        acc
    })
}

/// Adjoint of `circ_conv(d, .)`: `sum_{a, b} d[a, b] r[i + a, j + b]`.
pub fn circ_corr(d: &Array2<f64>, r: &Array2<f64>) -> Array2<f64> {
    let (n1, n2) = r.dim();
    let (l1, l2) = d.dim();
    Array2::from_shape_fn((n1, n2), |(i, j)| {
        let mut acc = 0.0;
        for a in 0..l1 {
            for b in 0..l2 {
                acc += d[(a, b)] * r[((i + a) % n1, (j + b) % n2)];
            }
        }
        acc
    })
}

/// `sum_m d_m * x_m` with the direct loop.
pub fn synthesize(filters: &Array3<f64>, maps: &Array3<f64>) -> Array2<f64> {
    let (_, n1, n2) = maps.dim();
    let mut out = Array2::zeros((n1, n2));
    for (d, x) in filters.outer_iter().zip(maps.outer_iter()) {
        out += &circ_conv(&d.to_owned(), &x.to_owned());
    }
    out
}

pub fn spatial_objective(
    s: &Array2<f64>,
    filters: &Array3<f64>,
    maps: &Array3<f64>,
    lambda: f64,
) -> f64 {
    let r = synthesize(filters, maps) - s;
    0.5 * r.iter().map(|v| v * v).sum::<f64>() + lambda * maps.iter().map(|v| v.abs()).sum::<f64>()
}

/// Plain ISTA in the spatial domain with step `1 / sum_m ||d_m||_1^2`.
pub fn ista(
    s: &Array2<f64>,
    filters: &Array3<f64>,
    lambda: f64,
    iters: usize,
) -> (Array3<f64>, f64) {
    let (n1, n2) = s.dim();
    let m = filters.dim().0;
    let bound: f64 = filters
        .outer_iter()
        .map(|d| d.iter().map(|v| v.abs()).sum::<f64>().powi(2))
        .sum();
    let step = 1.0 / bound;
    let mut x = Array3::<f64>::zeros((m, n1, n2));
    for _ in 0..iters {
        let r = synthesize(filters, &x) - s;
        for (k, d) in filters.outer_iter().enumerate() {
            let g = circ_corr(&d.to_owned(), &r);
            let mut xm = x.index_axis_mut(ndarray::Axis(0), k);
            ndarray::Zip::from(&mut xm).and(&g).for_each(|xv, gv| {
                let v = *xv - step * gv;
                let t = step * lambda;
                *xv = if v > t {
                    v - t
                } else if v < -t {
                    v + t
                } else {
                    0.0
                };
            });
        }
    }
    let obj = spatial_objective(s, filters, &x, lambda);
    (x, obj)
}

/// Explicitly stored weighted history of `(x_hat, s_hat)` samples; the
/// surrogate is evaluated by unrolled summation over the samples.
pub struct History {
    pub dims: (usize, usize),
    pub count: usize,
    pub samples: Vec<(SpectrumSet, Spectrum)>,
    pub weights: Vec<f64>,
}

impl History {
    pub fn new(count: usize, dims: (usize, usize)) -> Self {
        History {
            dims,
            count,
            samples: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Appends a sample; all earlier weights are multiplied by `alpha`.
    pub fn push(&mut self, x_hat: SpectrumSet, s_hat: Spectrum, alpha: f64) {
        for w in &mut self.weights {
            *w *= alpha;
        }
        self.samples.push((x_hat, s_hat));
        self.weights.push(1.0);
    }

    /// `sum_tau w_tau x_n^H x_n` at half-plane frequency `(k1, k2)`.
    pub fn block(&self, k1: usize, k2: usize) -> Vec<Complex64> {
        let m = self.count;
        let mut out = vec![Complex64::new(0.0, 0.0); m * m];
        for ((x, _), w) in self.samples.iter().zip(&self.weights) {
            for i in 0..m {
                for j in 0..m {
                    out[i * m + j] += x.data()[(i, k1, k2)].conj() * x.data()[(j, k1, k2)] * *w;
                }
            }
        }
        out
    }
}

impl Surrogate for History {
    fn dims(&self) -> (usize, usize) {
        self.dims
    }

    fn count(&self) -> usize {
        self.count
    }

    fn samples(&self) -> u64 {
        self.samples.len() as u64
    }

    fn surrogate_value(&self, g: &SpectrumSet) -> Result<f64> {
        let (n1, h) = (self.dims.0, half_width(self.dims.1));
        let mut total = 0.0;
        for ((x, s), w) in self.samples.iter().zip(&self.weights) {
            for k1 in 0..n1 {
                for k2 in 0..h {
                    let mut r = -s.data()[(k1, k2)];
                    for m in 0..self.count {
                        r += g.data()[(m, k1, k2)] * x.data()[(m, k1, k2)];
                    }
                    total += w * column_weight(self.dims.1, k2) * r.norm_sqr();
                }
            }
        }
        Ok(0.5 * total)
    }

    fn surrogate_gradient(&self, g: &SpectrumSet) -> Result<SpectrumSet> {
        let (n1, h) = (self.dims.0, half_width(self.dims.1));
        let mut out = SpectrumSet::zeros(self.count, self.dims);
        for ((x, s), w) in self.samples.iter().zip(&self.weights) {
            for k1 in 0..n1 {
                for k2 in 0..h {
                    let mut r = -s.data()[(k1, k2)];
                    for m in 0..self.count {
                        r += g.data()[(m, k1, k2)] * x.data()[(m, k1, k2)];
                    }
                    for m in 0..self.count {
                        out.data_mut()[(m, k1, k2)] += x.data()[(m, k1, k2)].conj() * r * *w;
                    }
                }
            }
        }
        Ok(out)
    }

    fn lipschitz_estimate(&self, _power_iters: usize) -> Result<f64> {
        unimplemented!("history-driven runs use a fixed step")
    }
}

/// Spatial-domain weighted surrogate `1/2 sum w ||sum_m g_m * x_m - s||^2`.
pub fn spatial_surrogate(
    filters: &Array3<f64>,
    maps: &[Array3<f64>],
    signals: &[Array2<f64>],
    weights: &[f64],
) -> f64 {
    maps.iter()
        .zip(signals)
        .zip(weights)
        .map(|((x, s), w)| {
            let r = synthesize(filters, x) - s;
            0.5 * w * r.iter().map(|v| v * v).sum::<f64>()
        })
        .sum()
}

/// Projected gradient descent on the spatial surrogate with a fixed step.
pub fn projected_gradient_oracle(
    init: &Array3<f64>,
    maps: &[Array3<f64>],
    signals: &[Array2<f64>],
    weights: &[f64],
    step: f64,
    iters: usize,
) -> Array3<f64> {
    let (m, l1, l2) = init.dim();
    let mut g = init.clone();
    for _ in 0..iters {
        let mut grad = Array3::<f64>::zeros((m, l1, l2));
        for ((x, s), w) in maps.iter().zip(signals).zip(weights) {
            let r = synthesize(&g, x) - s;
            for k in 0..m {
                let full =
                    circ_corr_full(&x.index_axis(ndarray::Axis(0), k).to_owned(), &r, (l1, l2));
                let mut gk = grad.index_axis_mut(ndarray::Axis(0), k);
                gk.scaled_add(*w, &full);
            }
        }
        g.scaled_add(-step, &grad);
        for mut f in g.outer_iter_mut() {
            let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            f.mapv_inplace(|v| v / n);
        }
    }
    g
}

/// Gradient of `1/2 ||d * x - s||^2` w.r.t. the `L1 x L2` filter `d`:
/// `grad[a, b] = sum_{i, j} x[i - a, j - b] r[i, j]`.
fn circ_corr_full(x: &Array2<f64>, r: &Array2<f64>, support: (usize, usize)) -> Array2<f64> {
    let (n1, n2) = x.dim();
    Array2::from_shape_fn(support, |(a, b)| {
        let mut acc = 0.0;
        for i in 0..n1 {
            for j in 0..n2 {
                acc += x[((i + n1 - a) % n1, (j + n2 - b) % n2)] * r[(i, j)];
            }
        }
        acc
    })
}

/// Eigenvalues of a Hermitian `m x m` matrix via cyclic Jacobi on its real
/// `2m x 2m` embedding (each eigenvalue appears twice).
pub fn hermitian_eigenvalues(a: &[Complex64], m: usize) -> Vec<f64> {
    let n = 2 * m;
    let mut s = vec![0.0; n * n];
    for i in 0..m {
        for j in 0..m {
            let v = a[i * m + j];
            s[i * n + j] = v.re;
            s[(i + m) * n + (j + m)] = v.re;
            s[i * n + (j + m)] = -v.im;
            s[(i + m) * n + j] = v.im;
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| s[i * n + j] * s[i * n + j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = s[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (s[q * n + q] - s[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let skp = s[k * n + p];
                    let skq = s[k * n + q];
                    s[k * n + p] = c * skp - sn * skq;
                    s[k * n + q] = sn * skp + c * skq;
                }
                for k in 0..n {
                    let spk = s[p * n + k];
                    let sqk = s[q * n + k];
                    s[p * n + k] = c * spk - sn * sqk;
                    s[q * n + k] = sn * spk + c * sqk;
                }
            }
        }
    }
    (0..n).map(|i| s[i * n + i]).collect()
}

/// Gaussian elimination with partial pivoting on a dense complex system.
pub fn dense_solve(a: &[Complex64], b: &[Complex64], m: usize) -> Vec<Complex64> {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&i, &j| a[i * m + col].norm().total_cmp(&a[j * m + col].norm()))
            .unwrap();
        for k in 0..m {
            a.swap(col * m + k, piv * m + k);
        }
        b.swap(col, piv);
        for row in col + 1..m {
            let f = a[row * m + col] / a[col * m + col];
            for k in col..m {
                let v = a[col * m + k];
                a[row * m + k] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); m];
    for row in (0..m).rev() {
        let mut acc = b[row];
        for k in row + 1..m {
            acc -= a[row * m + k] * x[k];
        }
        x[row] = acc / a[row * m + row];
    }
    x
}

pub fn random_dictionary(m: usize, support: (usize, usize), seed: u64) -> Dictionary {
    Dictionary::random(m, support, &mut rng(seed)).unwrap()
}

pub fn max_abs_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
