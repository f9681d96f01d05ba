//! Convolutional dictionaries and projection onto the support/unit-norm set.

use ndarray::{s, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::transforms::{Fft2d, SpectrumSet};

/// Windows with an l2 norm below this are projected to the unit impulse.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Tolerance on `| ||d_m|| - 1 |` for any dictionary built in memory.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// `M` filters of size `L1 x L2`, each of unit l2 norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    filters: Array3<f64>,
}

impl Dictionary {
    /// Wraps `(M, L1, L2)` filters, checking finiteness and unit norms.
    pub fn new(filters: Array3<f64>) -> Result<Self> {
        Self::with_tolerance(filters, UNIT_NORM_TOL)
    }

    pub(crate) fn with_tolerance(filters: Array3<f64>, tol: f64) -> Result<Self> {
        let (m, l1, l2) = filters.dim();
        if m == 0 || l1 == 0 || l2 == 0 {
            return Err(Error::invalid("dictionary needs at least one 1x1 filter"));
        }
        for (idx, f) in filters.outer_iter().enumerate() {
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "filter {idx} has non-finite entries"
                )));
            }
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > tol {
                return Err(Error::invalid(format!(
                    "filter {idx} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Dictionary { filters })
    }

    /// i.i.d. standard normal entries in each window, then projected.
    pub fn random<R: Rng + ?Sized>(
        count: usize,
        support: (usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        let (l1, l2) = support;
        if count == 0 || l1 == 0 || l2 == 0 {
            return Err(Error::invalid("dictionary needs at least one 1x1 filter"));
        }
        let raw = Array3::from_shape_simple_fn((count, l1, l2), || rng.sample(StandardNormal));
        Ok(proj_cpn(raw.view(), support)?.dictionary)
    }

    pub fn count(&self) -> usize {
        self.filters.dim().0
    }

    pub fn filter_dims(&self) -> (usize, usize) {
        let (_, l1, l2) = self.filters.dim();
        (l1, l2)
    }

    pub fn filters(&self) -> &Array3<f64> {
        &self.filters
    }

    pub fn filter(&self, m: usize) -> ArrayView2<'_, f64> {
        self.filters.index_axis(Axis(0), m)
    }

    pub(crate) fn check_fits(&self, dims: (usize, usize)) -> Result<()> {
        let (l1, l2) = self.filter_dims();
        if l1 > dims.0 || l2 > dims.1 {
            return Err(Error::invalid(format!(
                "filters {:?} do not fit in signal {:?}",
                (l1, l2),
                dims
            )));
        }
        Ok(())
    }

    /// Filters zero-padded to `dims` with their support at the top-left.
    pub fn padded(&self, dims: (usize, usize)) -> Result<Array3<f64>> {
        self.check_fits(dims)?;
        let (l1, l2) = self.filter_dims();
        let mut out = Array3::zeros((self.count(), dims.0, dims.1));
        out.slice_mut(s![.., ..l1, ..l2]).assign(&self.filters);
        Ok(out)
    }

    /// Spectra of the zero-padded filters on `plan`'s grid.
    pub fn spectra(&self, plan: &Fft2d) -> Result<SpectrumSet> {
        let padded = self.padded(plan.dims())?;
        Ok(plan.forward_set(padded.outer_iter()))
    }

    /// Largest `| ||d_m|| - 1 |` over the filters.
    pub fn max_norm_error(&self) -> f64 {
        self.filters
            .outer_iter()
            .map(|f| (f.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Result of [`proj_cpn`]: the feasible dictionary and, per filter, whether
/// its window was degenerate and replaced by the unit impulse.
#[derive(Clone, Debug)]
pub struct Projection {
    pub dictionary: Dictionary,
    pub degenerate: Vec<bool>,
}

/// Projects `M` raw arrays onto the set of `L1 x L2`-supported unit-norm
/// filters: keep the top-left window, drop the rest, rescale to norm 1.
///
/// A window that already has unit norm (to within a few ulps) is returned
/// untouched, which makes the projection exactly idempotent.
pub fn proj_cpn(raw: ArrayView3<'_, f64>, support: (usize, usize)) -> Result<Projection> {
    let (m, n1, n2) = raw.dim();
    let (l1, l2) = support;
    if l1 == 0 || l2 == 0 || l1 > n1 || l2 > n2 {
        return Err(Error::invalid(format!(
            "support {:?} does not fit in {:?}",
            support,
            (n1, n2)
        )));
    }
    let mut filters = raw.slice(s![.., ..l1, ..l2]).to_owned();
    let mut degenerate = vec![false; m];
    for (mut f, flag) in filters.outer_iter_mut().zip(degenerate.iter_mut()) {
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm >= DEGENERATE_NORM) {
            f.fill(0.0);
            f[(0, 0)] = 1.0;
            *flag = true;
        } else if (norm - 1.0).abs() > 4.0 * f64::EPSILON {
            f.mapv_inplace(|v| v / norm);
        }
    }
    Ok(Projection {
        dictionary: Dictionary { filters },
        degenerate,
    })
}
