//! Cosine-basis spectral machinery for ergodic coverage.
//!
//! Every density and trajectory is projected onto the normalized cosine basis
//!
//! ```text
//! F_k(x) = (1 / h_k) * prod_i cos(k_i * pi * x_i / L_i)
//! ```
//!
//! over the multi-index set `{0, .., K-1}^v`. `h_k` makes each basis function
//! unit-norm in L2 over the domain box, so the constant term of any normalized
//! density is exactly `1 / sqrt(volume)`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Tolerance on the unit-mass check performed before decomposition.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SpectralConfig {
    coeffs_per_dim: usize,
    dims: usize,
    lengths: Vec<f64>,
    metric_weight: f64,
    // Flattened multi-indices, `dims` entries per basis function.
    indices: Vec<usize>,
    lambda: Vec<f64>,
    norm: Vec<f64>,
}

impl PartialEq for SpectralConfig {
    fn eq(&self, other: &Self) -> bool {
        self.coeffs_per_dim == other.coeffs_per_dim
            && self.dims == other.dims
            && self.lengths == other.lengths
            && self.metric_weight == other.metric_weight
    }
}

impl SpectralConfig {
    pub fn new(
        coeffs_per_dim: usize,
        dims: usize,
        lengths: Vec<f64>,
        metric_weight: f64,
    ) -> Result<Self> {
        if coeffs_per_dim == 0 {
            return Err(Error::InvalidConfig("coefficients per dimension must be >= 1".into()));
        }
        if dims == 0 {
            return Err(Error::InvalidConfig("exploration dimension must be >= 1".into()));
        }
        if lengths.len() != dims {
            return Err(Error::DimensionMismatch {
                what: "domain lengths",
                expected: dims,
                actual: lengths.len(),
            });
        }
        if lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidConfig("domain lengths must be positive".into()));
        }
        if !(metric_weight.is_finite() && metric_weight > 0.0) {
            return Err(Error::InvalidConfig("metric weight must be positive".into()));
        }
        let count = coeffs_per_dim
            .checked_pow(dims as u32)
            .ok_or_else(|| Error::InvalidConfig("basis size overflows".into()))?;

        let mut indices = Vec::with_capacity(count * dims);
        let mut lambda = Vec::with_capacity(count);
        let mut norm = Vec::with_capacity(count);
        let mut k = vec![0usize; dims];
        for _ in 0..count {
            indices.extend_from_slice(&k);
            lambda.push(lambda_closed_form(&k));
            norm.push(normalizer_closed_form(&k, &lengths));
            // Odometer increment, last dimension fastest.
            for d in (0..dims).rev() {
                k[d] += 1;
                if k[d] < coeffs_per_dim {
                    break;
                }
                k[d] = 0;
            }
        }

        Ok(Self {
            coeffs_per_dim,
            dims,
            lengths,
            metric_weight,
            indices,
            lambda,
            norm,
        })
    }

    /// Unit-box configuration with `q = 1`.
    pub fn unit(coeffs_per_dim: usize, dims: usize) -> Result<Self> {
        Self::new(coeffs_per_dim, dims, vec![1.0; dims], 1.0)
    }

    pub fn coeffs_per_dim(&self) -> usize {
        self.coeffs_per_dim
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn metric_weight(&self) -> f64 {
        self.metric_weight
    }

    /// Number of basis functions, `K^v`.
    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn multi_index(&self, flat: usize) -> &[usize] {
        &self.indices[flat * self.dims..(flat + 1) * self.dims]
    }

    pub fn flat_index(&self, k: &[usize]) -> Result<usize> {
        self.check_index(k)?;
        Ok(k.iter().fold(0, |acc, &ki| acc * self.coeffs_per_dim + ki))
    }

    pub fn lambda_at(&self, flat: usize) -> f64 {
        self.lambda[flat]
    }

    pub fn normalizer_at(&self, flat: usize) -> f64 {
        self.norm[flat]
    }

    fn check_index(&self, k: &[usize]) -> Result<()> {
        if k.len() != self.dims {
            return Err(Error::DimensionMismatch {
                what: "multi-index",
                expected: self.dims,
                actual: k.len(),
            });
        }
        if k.iter().any(|&ki| ki >= self.coeffs_per_dim) {
            return Err(Error::InvalidConfig(format!(
                "multi-index {k:?} outside {{0..{}}}^{}",
                self.coeffs_per_dim - 1,
                self.dims
            )));
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims {
            return Err(Error::DimensionMismatch {
                what: "point",
                expected: self.dims,
                actual: x.len(),
            });
        }
        if x.iter().any(|xi| !xi.is_finite()) {
            return Err(Error::NonFinite("point"));
        }
        Ok(())
    }

    /// Evaluates every basis function at `x` into `out` (length `len()`).
    ///
    /// Points are clamped to the domain box first.
    pub fn basis_row(&self, x: &[f64], out: &mut [f64]) {
        let tables = self.cos_tables(x);
        for (flat, slot) in out.iter_mut().enumerate() {
            let k = self.multi_index(flat);
            let mut prod = 1.0;
            for (d, &kd) in k.iter().enumerate() {
                prod *= tables.cos[d * self.coeffs_per_dim + kd];
            }
            *slot = prod / self.norm[flat];
        }
    }

    /// Evaluates every basis function and its gradient at `x`.
    ///
    /// `grads` is laid out row-major, `dims` entries per basis function.
    pub fn basis_row_with_grad(&self, x: &[f64], vals: &mut [f64], grads: &mut [f64]) {
        let tables = self.cos_tables(x);
        let kk = self.coeffs_per_dim;
        for flat in 0..self.len() {
            let k = self.multi_index(flat);
            let inv_h = 1.0 / self.norm[flat];
            let mut prod = 1.0;
            for (d, &kd) in k.iter().enumerate() {
                prod *= tables.cos[d * kk + kd];
            }
            vals[flat] = prod * inv_h;
            for i in 0..self.dims {
                let mut g = tables.dcos[i * kk + k[i]];
                for (d, &kd) in k.iter().enumerate() {
                    if d != i {
                        g *= tables.cos[d * kk + kd];
                    }
                }
                grads[flat * self.dims + i] = g * inv_h;
            }
        }
    }

    fn cos_tables(&self, x: &[f64]) -> CosTables {
        let kk = self.coeffs_per_dim;
        let mut cos = vec![0.0; self.dims * kk];
        let mut dcos = vec![0.0; self.dims * kk];
        for d in 0..self.dims {
            let l = self.lengths[d];
            let xd = x[d].clamp(0.0, l);
            for k in 0..kk {
                let w = k as f64 * PI / l;
                cos[d * kk + k] = libm::cos(w * xd);
                dcos[d * kk + k] = -w * libm::sin(w * xd);
            }
        }
        CosTables { cos, dcos }
    }
}

struct CosTables {
    cos: Vec<f64>,
    dcos: Vec<f64>,
}

fn lambda_closed_form(k: &[usize]) -> f64 {
    let norm_sq: f64 = k.iter().map(|&ki| (ki * ki) as f64).sum();
    libm::pow(1.0 + norm_sq, -(k.len() as f64 + 1.0) / 2.0)
}

fn normalizer_closed_form(k: &[usize], lengths: &[f64]) -> f64 {
    k.iter()
        .zip(lengths)
        .map(|(&ki, &l)| if ki == 0 { l } else { l / 2.0 })
        .product::<f64>()
        .sqrt()
}

/// `F_k(x)`; `x` is clamped to the domain box.
pub fn basis_eval(k: &[usize], x: &[f64], cfg: &SpectralConfig) -> Result<f64> {
    cfg.check_index(k)?;
    cfg.check_point(x)?;
    let flat = cfg.flat_index(k)?;
    let prod: f64 = k
        .iter()
        .zip(x)
        .zip(&cfg.lengths)
        .map(|((&ki, &xi), &l)| libm::cos(ki as f64 * PI * xi.clamp(0.0, l) / l))
        .product();
    Ok(prod / cfg.norm[flat])
}

/// Gradient of `F_k` with respect to `x`.
pub fn basis_grad(k: &[usize], x: &[f64], cfg: &SpectralConfig) -> Result<Vec<f64>> {
    cfg.check_index(k)?;
    cfg.check_point(x)?;
    let flat = cfg.flat_index(k)?;
    let inv_h = 1.0 / cfg.norm[flat];
    let args: Vec<f64> = k
        .iter()
        .zip(x)
        .zip(&cfg.lengths)
        .map(|((&ki, &xi), &l)| ki as f64 * PI * xi.clamp(0.0, l) / l)
        .collect();
    let grad = (0..cfg.dims)
        .map(|i| {
            let w = k[i] as f64 * PI / cfg.lengths[i];
            let mut g = -w * libm::sin(args[i]);
            for (d, a) in args.iter().enumerate() {
                if d != i {
                    g *= libm::cos(*a);
                }
            }
            g * inv_h
        })
        .collect();
    Ok(grad)
}

/// `h_k`, chosen so that `F_k` has unit L2 norm over the domain.
pub fn normalizer(k: &[usize], cfg: &SpectralConfig) -> Result<f64> {
    Ok(cfg.norm[cfg.flat_index(k)?])
}

/// Sobolev-type weight `(1 + |k|^2)^(-(v+1)/2)`.
pub fn lambda_weight(k: &[usize], cfg: &SpectralConfig) -> Result<f64> {
    Ok(cfg.lambda[cfg.flat_index(k)?])
}

/// Real coefficients indexed by the flat multi-index of a [`SpectralConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    config: Arc<SpectralConfig>,
    coeffs: Vec<f64>,
}

impl Spectrum {
    pub fn zeros(config: Arc<SpectralConfig>) -> Self {
        let coeffs = vec![0.0; config.len()];
        Self { config, coeffs }
    }

    pub fn from_coefficients(config: Arc<SpectralConfig>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != config.len() {
            return Err(Error::DimensionMismatch {
                what: "spectrum length",
                expected: config.len(),
                actual: coeffs.len(),
            });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("spectrum"));
        }
        Ok(Self { config, coeffs })
    }

    /// Spectrum of a single point: `F_k(p)` for every `k`.
    pub fn of_point(config: Arc<SpectralConfig>, p: &[f64]) -> Result<Self> {
        config.check_point(p)?;
        let mut coeffs = vec![0.0; config.len()];
        config.basis_row(p, &mut coeffs);
        Ok(Self { config, coeffs })
    }

    pub fn config(&self) -> &Arc<SpectralConfig> {
        &self.config
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub(crate) fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn get(&self, k: &[usize]) -> Result<f64> {
        Ok(self.coeffs[self.config.flat_index(k)?])
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn same_config(&self, other: &Spectrum) -> bool {
        Arc::ptr_eq(&self.config, &other.config) || *self.config == *other.config
    }

    /// Weighted average of spectra sharing one configuration.
    pub fn weighted_mean<'a, I>(items: I) -> Result<Spectrum>
    where
        I: IntoIterator<Item = (&'a Spectrum, f64)>,
    {
        let mut iter = items.into_iter();
        let (first, w0) = iter.next().ok_or(Error::EmptyTrajectory)?;
        let mut acc: Vec<f64> = first.coeffs.iter().map(|c| c * w0).collect();
        let mut total = w0;
        for (s, w) in iter {
            if !s.same_config(first) {
                return Err(Error::ConfigMismatch);
            }
            for (a, c) in acc.iter_mut().zip(&s.coeffs) {
                *a += c * w;
            }
            total += w;
        }
        if !(total > 0.0) {
            return Err(Error::ZeroDuration);
        }
        acc.iter_mut().for_each(|a| *a /= total);
        Ok(Spectrum {
            config: first.config.clone(),
            coeffs: acc,
        })
    }
}

/// Piecewise-constant density over the domain box, stored with dimension 0
/// varying fastest (row-major images for `v = 2`).
///
/// Values are nonnegative for compiled targets. Reconstructions may ring below
/// zero; [`decompose_density`] rejects such grids.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    resolution: Vec<usize>,
    lengths: Vec<f64>,
    values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(resolution: Vec<usize>, lengths: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if resolution.is_empty() || resolution.iter().any(|&r| r == 0) {
            return Err(Error::InvalidConfig("grid resolution must be positive".into()));
        }
        if lengths.len() != resolution.len() {
            return Err(Error::DimensionMismatch {
                what: "grid lengths",
                expected: resolution.len(),
                actual: lengths.len(),
            });
        }
        let cells: usize = resolution.iter().product();
        if values.len() != cells {
            return Err(Error::DimensionMismatch {
                what: "grid values",
                expected: cells,
                actual: values.len(),
            });
        }
        Ok(Self {
            resolution,
            lengths,
            values,
        })
    }

    /// Builds a grid by sampling `f` at cell centers.
    pub fn from_fn<F>(resolution: Vec<usize>, lengths: Vec<f64>, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> f64,
    {
        let cells: usize = resolution.iter().product();
        let mut grid = Self::new(resolution, lengths, vec![0.0; cells])?;
        let mut center = vec![0.0; grid.dims()];
        for i in 0..cells {
            grid.center_into(i, &mut center);
            grid.values[i] = f(&center);
        }
        Ok(grid)
    }

    /// Uniform unit-mass density on `[0,1]^2`.
    pub fn uniform_unit(nx: usize, ny: usize) -> Result<Self> {
        Self::new(vec![nx, ny], vec![1.0, 1.0], vec![1.0; nx * ny])
    }

    pub fn dims(&self) -> usize {
        self.resolution.len()
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell_measure(&self) -> f64 {
        self.resolution
            .iter()
            .zip(&self.lengths)
            .map(|(&r, &l)| l / r as f64)
            .product()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_measure()
    }

    /// Rescales to unit mass. Fails when the mass is not positive.
    pub fn normalize(&mut self) -> Result<()> {
        let mass = self.mass();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Unnormalized { mass });
        }
        self.values.iter_mut().for_each(|v| *v /= mass);
        Ok(())
    }

    pub fn cell_center(&self, index: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.dims()];
        self.center_into(index, &mut c);
        c
    }

    fn center_into(&self, mut index: usize, out: &mut [f64]) {
        for d in 0..self.dims() {
            let r = self.resolution[d];
            let i = index % r;
            index /= r;
            out[d] = (i as f64 + 0.5) * self.lengths[d] / r as f64;
        }
    }

    /// Index of the cell containing `p`, clamping to the box.
    pub fn cell_of(&self, p: &[f64]) -> usize {
        let mut index = 0;
        let mut stride = 1;
        for d in 0..self.dims() {
            let r = self.resolution[d];
            let i = ((p[d] / self.lengths[d]) * r as f64).floor();
            let i = (i.max(0.0) as usize).min(r - 1);
            index += i * stride;
            stride *= r;
        }
        index
    }

    pub fn value_at(&self, p: &[f64]) -> f64 {
        self.values[self.cell_of(p)]
    }

    /// Checks nonnegativity and unit mass.
    pub fn validate_normalized(&self) -> Result<()> {
        if let Some(index) = self.values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidDensity { index });
        }
        let mass = self.mass();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Unnormalized { mass });
        }
        Ok(())
    }

    /// Average-pools to at most `max_cells` per dimension.
    pub fn downsample(&self, max_cells: usize) -> DensityGrid {
        let factors: Vec<usize> = self
            .resolution
            .iter()
            .map(|&r| r.div_ceil(max_cells.max(1)))
            .collect();
        if factors.iter().all(|&f| f == 1) {
            return self.clone();
        }
        let new_res: Vec<usize> = self
            .resolution
            .iter()
            .zip(&factors)
            .map(|(&r, &f)| r.div_ceil(f))
            .collect();
        let cells: usize = new_res.iter().product();
        let mut sums = vec![0.0; cells];
        let mut counts = vec![0usize; cells];
        for (i, &v) in self.values.iter().enumerate() {
            let mut rem = i;
            let mut target = 0;
            let mut stride = 1;
            for d in 0..self.dims() {
                let idx = rem % self.resolution[d];
                rem /= self.resolution[d];
                target += (idx / factors[d]) * stride;
                stride *= new_res[d];
            }
            sums[target] += v;
            counts[target] += 1;
        }
        let values = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| s / c as f64)
            .collect();
        DensityGrid {
            resolution: new_res,
            lengths: self.lengths.clone(),
            values,
        }
    }
}

fn check_grid_matches(grid: &DensityGrid, cfg: &SpectralConfig) -> Result<()> {
    if grid.dims() != cfg.dims() {
        return Err(Error::DimensionMismatch {
            what: "grid dimension",
            expected: cfg.dims(),
            actual: grid.dims(),
        });
    }
    if grid.lengths != cfg.lengths {
        return Err(Error::ConfigMismatch);
    }
    Ok(())
}

/// `phi_k = integral phi(s) F_k(s) ds` by midpoint quadrature over grid cells.
pub fn decompose_density(grid: &DensityGrid, cfg: &Arc<SpectralConfig>) -> Result<Spectrum> {
    check_grid_matches(grid, cfg)?;
    grid.validate_normalized()?;
    let measure = grid.cell_measure();
    let mut coeffs = vec![0.0; cfg.len()];
    let mut row = vec![0.0; cfg.len()];
    let mut center = vec![0.0; grid.dims()];
    for (i, &v) in grid.values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        grid.center_into(i, &mut center);
        cfg.basis_row(&center, &mut row);
        let w = v * measure;
        for (c, f) in coeffs.iter_mut().zip(&row) {
            *c += w * f;
        }
    }
    Spectrum::from_coefficients(cfg.clone(), coeffs)
}

/// A state sample held for `dt` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedPoint {
    pub point: Vec<f64>,
    pub dt: f64,
}

impl TimedPoint {
    pub fn new(point: Vec<f64>, dt: f64) -> Self {
        Self { point, dt }
    }
}

/// Time-averaged statistics `c_k = (1/T) sum F_k(x_i) dt_i` (left Riemann sum).
pub fn trajectory_spectrum(traj: &[TimedPoint], cfg: &Arc<SpectralConfig>) -> Result<Spectrum> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let duration: f64 = traj.iter().map(|s| s.dt).sum();
    if traj.iter().any(|s| !(s.dt.is_finite() && s.dt >= 0.0)) {
        return Err(Error::NonFinite("sample duration"));
    }
    if !(duration > 0.0) {
        return Err(Error::ZeroDuration);
    }
    let mut coeffs = vec![0.0; cfg.len()];
    let mut row = vec![0.0; cfg.len()];
    for s in traj {
        cfg.check_point(&s.point)?;
        cfg.basis_row(&s.point, &mut row);
        for (c, f) in coeffs.iter_mut().zip(&row) {
            *c += f * s.dt;
        }
    }
    coeffs.iter_mut().for_each(|c| *c /= duration);
    Spectrum::from_coefficients(cfg.clone(), coeffs)
}

/// `q * sum_k Lambda_k (c_k - phi_k)^2`.
pub fn ergodic_metric(c: &Spectrum, phi: &Spectrum) -> Result<f64> {
    if !c.same_config(phi) {
        return Err(Error::ConfigMismatch);
    }
    let cfg = c.config();
    let sum: f64 = c
        .coeffs
        .iter()
        .zip(&phi.coeffs)
        .zip(&cfg.lambda)
        .map(|((ck, pk), lk)| lk * (ck - pk) * (ck - pk))
        .sum();
    Ok(cfg.metric_weight * sum)
}

/// Samples `sum_k s_k F_k(p)` at cell centers. The result is not clipped.
pub fn reconstruct(s: &Spectrum, resolution: &[usize]) -> Result<DensityGrid> {
    let cfg = s.config();
    if resolution.len() != cfg.dims() {
        return Err(Error::DimensionMismatch {
            what: "resolution",
            expected: cfg.dims(),
            actual: resolution.len(),
        });
    }
    let mut row = vec![0.0; cfg.len()];
    DensityGrid::from_fn(resolution.to_vec(), cfg.lengths.clone(), |p| {
        cfg.basis_row(p, &mut row);
        row.iter().zip(&s.coeffs).map(|(f, c)| f * c).sum()
    })
}

/// Reconstruction clipped at zero and renormalized, for display.
pub fn reconstruct_display(s: &Spectrum, resolution: &[usize]) -> Result<DensityGrid> {
    let mut grid = reconstruct(s, resolution)?;
    grid.values.iter_mut().for_each(|v| *v = v.max(0.0));
    if grid.normalize().is_err() {
        grid.values.iter_mut().for_each(|v| *v = 1.0);
        grid.normalize()?;
    }
    Ok(grid)
}
