//! Real 2-D arrays, half-plane spectra and the FFT machinery shared by the
//! sparse coder and the dictionary learner.
//!
//! Conventions: the forward transform is unnormalized, the inverse is scaled
//! by `1/(N1*N2)`. Real-input spectra keep only the non-redundant half plane,
//! `N1 x (N2/2 + 1)`, indexed `(k1, k2)`. Convolutions are circular.

use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2, ArrayViewMut2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Width of the stored half plane for a real signal of width `n2`.
pub fn half_width(n2: usize) -> usize {
    n2 / 2 + 1
}

/// Number of stored frequencies for a real `n1 x n2` signal.
pub fn freq_count(dims: (usize, usize)) -> usize {
    dims.0 * half_width(dims.1)
}

/// Multiplicity of half-plane column `k2` in the full spectrum: the DC column
/// (and the Nyquist column for even widths) are self-conjugate and count
/// once, every other column stands in for itself and its mirror.
#[inline]
pub fn column_weight(n2: usize, k2: usize) -> f64 {
    if k2 == 0 || (n2.is_multiple_of(2) && k2 == n2 / 2) {
        1.0
    } else {
        2.0
    }
}

/// A 2-D real-valued grayscale image with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    values: Array2<f64>,
}

impl Signal {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n1, n2) = values.dim();
        if n1 == 0 || n2 == 0 {
            return Err(Error::invalid("signal must be at least 1x1"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("signal entry {pos} is not finite")));
        }
        Ok(Signal { values })
    }

    pub fn zeros(dims: (usize, usize)) -> Self {
        Signal {
            values: Array2::zeros(dims),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Half-plane spectrum of a single real array.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    dims: (usize, usize),
    data: Array2<Complex64>,
}

impl Spectrum {
    pub fn zeros(dims: (usize, usize)) -> Self {
        Spectrum {
            dims,
            data: Array2::zeros((dims.0, half_width(dims.1))),
        }
    }

    /// Wraps a half-plane array for a real signal of size `dims`.
    pub fn from_half_plane(dims: (usize, usize), data: Array2<Complex64>) -> Result<Self> {
        if data.dim() != (dims.0, half_width(dims.1)) {
            return Err(Error::invalid(format!(
                "half-plane shape {:?} does not match signal dims {:?}",
                data.dim(),
                dims
            )));
        }
        Ok(Spectrum { dims, data })
    }

    /// Spatial dimensions of the signal this spectrum belongs to.
    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.data
    }

    /// `sum |v|^2` over the full, symmetry-expanded plane.
    pub fn full_plane_energy(&self) -> f64 {
        let n2 = self.dims.1;
        self.data
            .indexed_iter()
            .map(|((_, k2), v)| column_weight(n2, k2) * v.norm_sqr())
            .sum()
    }
}

/// `M` half-plane spectra sharing one frequency grid, stored `(m, k1, k2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumSet {
    dims: (usize, usize),
    data: Array3<Complex64>,
}

impl SpectrumSet {
    pub fn zeros(count: usize, dims: (usize, usize)) -> Self {
        SpectrumSet {
            dims,
            data: Array3::zeros((count, dims.0, half_width(dims.1))),
        }
    }

    pub fn from_half_planes(dims: (usize, usize), data: Array3<Complex64>) -> Result<Self> {
        let (_, h1, h2) = data.dim();
        if (h1, h2) != (dims.0, half_width(dims.1)) {
            return Err(Error::invalid(format!(
                "half-plane shape {:?} does not match signal dims {:?}",
                (h1, h2),
                dims
            )));
        }
        Ok(SpectrumSet { dims, data })
    }

    pub fn count(&self) -> usize {
        self.data.dim().0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn freq_count(&self) -> usize {
        freq_count(self.dims)
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.data
    }

    /// Contiguous `M x F` view, member-major.
    pub fn as_slice(&self) -> &[Complex64] {
        self.data
            .as_slice()
            .expect("spectrum sets are kept in standard layout")
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        self.data
            .as_slice_mut()
            .expect("spectrum sets are kept in standard layout")
    }

    pub fn member(&self, m: usize) -> Spectrum {
        Spectrum {
            dims: self.dims,
            data: self.data.index_axis(Axis(0), m).to_owned(),
        }
    }

    pub(crate) fn check_compatible(&self, other: &SpectrumSet, what: &str) -> Result<()> {
        if self.count() != other.count() || self.dims != other.dims {
            return Err(Error::invalid(format!(
                "{what}: spectrum sets differ in shape ({} x {:?} vs {} x {:?})",
                self.count(),
                self.dims,
                other.count(),
                other.dims
            )));
        }
        Ok(())
    }

    /// `self + scale * other`, elementwise.
    pub(crate) fn axpy(&self, scale: f64, other: &SpectrumSet) -> SpectrumSet {
        let mut out = self.clone();
        out.data.zip_mut_with(&other.data, |a, b| *a += b * scale);
        out
    }
}

/// Planned forward/inverse real 2-D DFT for one signal size.
#[derive(Clone)]
pub struct Fft2d {
    n1: usize,
    n2: usize,
    row_forward: Arc<dyn Fft<f64>>,
    row_inverse: Arc<dyn Fft<f64>>,
    col_forward: Arc<dyn Fft<f64>>,
    col_inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2d")
            .field("n1", &self.n1)
            .field("n2", &self.n2)
            .finish()
    }
}

impl Fft2d {
    pub fn new(dims: (usize, usize)) -> Result<Self> {
        let (n1, n2) = dims;
        if n1 == 0 || n2 == 0 {
            return Err(Error::invalid("transform dimensions must be at least 1x1"));
        }
        let mut complex = FftPlanner::<f64>::new();
        Ok(Fft2d {
            n1,
            n2,
            row_forward: complex.plan_fft_forward(n2),
            row_inverse: complex.plan_fft_inverse(n2),
            col_forward: complex.plan_fft_forward(n1),
            col_inverse: complex.plan_fft_inverse(n1),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    fn check_real(&self, input: &ArrayView2<'_, f64>) -> Result<()> {
        if input.dim() != (self.n1, self.n2) {
            return Err(Error::invalid(format!(
                "array is {:?}, transform planned for {:?}",
                input.dim(),
                (self.n1, self.n2)
            )));
        }
        Ok(())
    }

    /// Forward transform into a caller-provided half plane. No finiteness check.
    pub(crate) fn forward_into(
        &self,
        input: ArrayView2<'_, f64>,
        mut out: ArrayViewMut2<'_, Complex64>,
    ) {
        let h = half_width(self.n2);
        let mut row = vec![Complex64::new(0.0, 0.0); self.n2];
        let mut scratch =
            vec![Complex64::new(0.0, 0.0); self.row_forward.get_inplace_scratch_len()];
        for (k1, src) in input.outer_iter().enumerate() {
            for (dst, v) in row.iter_mut().zip(src.iter()) {
                *dst = Complex64::new(*v, 0.0);
            }
            self.row_forward
                .process_with_scratch(&mut row, &mut scratch);
            for k2 in 0..h {
                out[(k1, k2)] = row[k2];
            }
        }
        self.columns(&self.col_forward, &mut out, h);
    }

    /// Inverse transform of a half plane into a caller-provided real array.
    pub(crate) fn inverse_into(
        &self,
        spectrum: ArrayView2<'_, Complex64>,
        mut out: ArrayViewMut2<'_, f64>,
    ) {
        let n2 = self.n2;
        let h = half_width(n2);
        let mut work = spectrum.to_owned();
        self.columns(&self.col_inverse, &mut work.view_mut(), h);
        let scale = 1.0 / (self.n1 * n2) as f64;
        let mut row = vec![Complex64::new(0.0, 0.0); n2];
        let mut scratch =
            vec![Complex64::new(0.0, 0.0); self.row_inverse.get_inplace_scratch_len()];
        for (k1, src) in work.outer_iter().enumerate() {
            for k2 in 0..h {
                row[k2] = src[k2];
            }
            // The self-conjugate bins of a real row carry no imaginary part.
            row[0].im = 0.0;
            if n2.is_multiple_of(2) {
                row[h - 1].im = 0.0;
            }
            for k2 in h..n2 {
                row[k2] = row[n2 - k2].conj();
            }
            self.row_inverse
                .process_with_scratch(&mut row, &mut scratch);
            for (k2, v) in row.iter().enumerate() {
                out[(k1, k2)] = v.re * scale;
            }
        }
    }

    fn columns(&self, plan: &Arc<dyn Fft<f64>>, data: &mut ArrayViewMut2<'_, Complex64>, h: usize) {
        if self.n1 == 1 {
            return;
        }
        let mut col = vec![Complex64::new(0.0, 0.0); self.n1];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for k2 in 0..h {
            for (k1, c) in col.iter_mut().enumerate() {
                *c = data[(k1, k2)];
            }
            plan.process_with_scratch(&mut col, &mut scratch);
            for (k1, c) in col.iter().enumerate() {
                data[(k1, k2)] = *c;
            }
        }
    }

    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Result<Spectrum> {
        self.check_real(&input)?;
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("fft2 input contains non-finite values"));
        }
        let mut out = Spectrum::zeros((self.n1, self.n2));
        self.forward_into(input, out.data.view_mut());
        Ok(out)
    }

    pub fn inverse(&self, spectrum: &Spectrum) -> Result<Array2<f64>> {
        if spectrum.dims != (self.n1, self.n2) {
            return Err(Error::invalid(format!(
                "spectrum belongs to {:?}, transform planned for {:?}",
                spectrum.dims,
                (self.n1, self.n2)
            )));
        }
        let mut out = Array2::zeros((self.n1, self.n2));
        self.inverse_into(spectrum.data.view(), out.view_mut());
        Ok(out)
    }

    /// Transforms a stack of equally sized real arrays. No finiteness check.
    pub(crate) fn forward_set<'a, I>(&self, arrays: I) -> SpectrumSet
    where
        I: ExactSizeIterator<Item = ArrayView2<'a, f64>>,
    {
        let mut set = SpectrumSet::zeros(arrays.len(), (self.n1, self.n2));
        for (arr, out) in arrays.zip(set.data.outer_iter_mut()) {
            self.forward_into(arr, out);
        }
        set
    }

    /// Inverse of every member of a spectrum set, stacked `(m, n1, n2)`.
    pub(crate) fn inverse_set(&self, set: &SpectrumSet) -> Array3<f64> {
        let mut out = Array3::zeros((set.count(), self.n1, self.n2));
        for (spec, dst) in set.data.outer_iter().zip(out.outer_iter_mut()) {
            self.inverse_into(spec, dst);
        }
        out
    }
}

/// Unnormalized forward 2-D DFT of a real array, half plane only.
pub fn fft2(input: ArrayView2<'_, f64>) -> Result<Spectrum> {
    Fft2d::new(input.dim())?.forward(input)
}

/// Inverse 2-D DFT (scaled by `1/(N1*N2)`) of a half-plane spectrum.
pub fn ifft2(spectrum: &Spectrum, dims: (usize, usize)) -> Result<Array2<f64>> {
    if spectrum.dims() != dims {
        return Err(Error::invalid(format!(
            "spectrum belongs to {:?}, requested {:?}",
            spectrum.dims(),
            dims
        )));
    }
    Fft2d::new(dims)?.inverse(spectrum)
}

/// `sum_m d_hat[m] * x_hat[m]`, pointwise per frequency.
pub fn dict_apply(d_hat: &SpectrumSet, x_hat: &SpectrumSet) -> Result<Spectrum> {
    d_hat.check_compatible(x_hat, "dict_apply")?;
    let mut out = Spectrum::zeros(d_hat.dims);
    for (d, x) in d_hat.data.outer_iter().zip(x_hat.data.outer_iter()) {
        ndarray::Zip::from(&mut out.data)
            .and(&d)
            .and(&x)
            .for_each(|o, d, x| *o += d * x);
    }
    Ok(out)
}

/// Copies `filter` into the top-left corner of a zero `dims` array.
pub fn zero_pad(filter: ArrayView2<'_, f64>, dims: (usize, usize)) -> Result<Array2<f64>> {
    let (l1, l2) = filter.dim();
    if l1 > dims.0 || l2 > dims.1 {
        return Err(Error::invalid(format!(
            "filter {:?} does not fit in {:?}",
            (l1, l2),
            dims
        )));
    }
    let mut out = Array2::zeros(dims);
    out.slice_mut(ndarray::s![..l1, ..l2]).assign(&filter);
    Ok(out)
}
