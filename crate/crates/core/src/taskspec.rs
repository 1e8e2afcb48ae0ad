//! Task state compiled into target densities.
//!
//! A [`TaskSpec`] collects discovered attraction points (EE), repulsion points
//! (DD) and the operator's painted regions. [`compile_density`] turns it into a
//! unit-mass grid on `[0,1]^2` by mixing up to three layers, each normalized on
//! its own before an equal-weight sum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::DensityGrid;

pub const DEFAULT_VARIANCE: f64 = 0.01;
pub const DEFAULT_NOISE_BOUND: f64 = 0.001;
pub const DEFAULT_RESOLUTION: usize = 50;
/// Locations closer than this are treated as the same object.
pub const SAME_LOCATION_TOL: f64 = 1e-6;

pub type Point2 = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentRole {
    Regular,
    DdBlocker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Ee,
    Dd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandMode {
    /// A new command supersedes the previous one.
    Replace,
    /// Commands pile up into one user layer.
    Accumulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub location: Point2,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    ee_points: Vec<WeightedPoint>,
    dd_points: Vec<WeightedPoint>,
    user_points: Vec<Vec<Point2>>,
    user_seed: u64,
    variance: Point2,
    noise_bound: f64,
    role: AgentRole,
    command_mode: CommandMode,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self::new(AgentRole::Regular)
    }
}

fn in_unit(p: &Point2) -> bool {
    p.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
}

fn same_location(a: &Point2, b: &Point2) -> bool {
    (a[0] - b[0]).hypot(a[1] - b[1]) <= SAME_LOCATION_TOL
}

fn rebalance(points: &mut [WeightedPoint]) {
    let w = 1.0 / points.len() as f64;
    points.iter_mut().for_each(|p| p.weight = w);
}

impl TaskSpec {
    pub fn new(role: AgentRole) -> Self {
        Self {
            ee_points: Vec::new(),
            dd_points: Vec::new(),
            user_points: Vec::new(),
            user_seed: 0,
            variance: [DEFAULT_VARIANCE; 2],
            noise_bound: DEFAULT_NOISE_BOUND,
            role,
            command_mode: CommandMode::Replace,
        }
    }

    pub fn with_variance(mut self, variance: Point2) -> Result<Self> {
        if variance.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig("covariance diagonal must be positive".into()));
        }
        self.variance = variance;
        Ok(self)
    }

    pub fn with_noise_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::InvalidConfig("noise bound must be positive".into()));
        }
        self.noise_bound = bound;
        Ok(self)
    }

    pub fn with_command_mode(mut self, mode: CommandMode) -> Self {
        self.command_mode = mode;
        self
    }

    pub fn with_role(mut self, role: AgentRole) -> Self {
        self.role = role;
        self
    }

    pub fn role(&self) -> AgentRole {
        self.role
    }

    pub fn ee_points(&self) -> &[WeightedPoint] {
        &self.ee_points
    }

    pub fn dd_points(&self) -> &[WeightedPoint] {
        &self.dd_points
    }

    pub fn user_points(&self) -> &[Vec<Point2>] {
        &self.user_points
    }

    pub fn variance(&self) -> Point2 {
        self.variance
    }

    pub fn noise_bound(&self) -> f64 {
        self.noise_bound
    }

    pub fn knows(&self, kind: ObjectKind, location: &Point2) -> bool {
        let list = match kind {
            ObjectKind::Ee => &self.ee_points,
            ObjectKind::Dd => &self.dd_points,
        };
        list.iter().any(|p| same_location(&p.location, location))
    }

    /// Returns a spec with the operator command installed.
    ///
    /// In [`CommandMode::Replace`] the previous user layer is discarded.
    pub fn add_user_command(&self, points: &[Point2], rng_seed: u64) -> Result<TaskSpec> {
        if points.is_empty() {
            return Err(Error::EmptyCommand);
        }
        if let Some(index) = points.iter().position(|p| !in_unit(p)) {
            return Err(Error::PointOutOfRange { index });
        }
        let mut next = self.clone();
        if next.command_mode == CommandMode::Replace {
            next.user_points.clear();
        }
        next.user_points.push(points.to_vec());
        next.user_seed = rng_seed;
        Ok(next)
    }

    /// Returns a spec that includes a newly discovered object.
    ///
    /// Weights stay uniform within each kind. Registering a location that is
    /// already known is a no-op; registering it under the other kind replaces
    /// the old entry, which is how an EE that turns into a DD is expressed.
    pub fn register_discovery(&self, kind: ObjectKind, location: Point2) -> Result<TaskSpec> {
        if !in_unit(&location) {
            return Err(Error::PointOutOfRange { index: 0 });
        }
        if self.knows(kind, &location) {
            return Ok(self.clone());
        }
        let mut next = self.clone();
        let (same, other) = match kind {
            ObjectKind::Ee => (&mut next.ee_points, &mut next.dd_points),
            ObjectKind::Dd => (&mut next.dd_points, &mut next.ee_points),
        };
        let before = other.len();
        other.retain(|p| !same_location(&p.location, &location));
        if other.len() != before && !other.is_empty() {
            rebalance(other);
        }
        same.push(WeightedPoint {
            location,
            weight: 0.0,
        });
        rebalance(same);
        Ok(next)
    }

    /// Removes an object of the given kind at `location`, if present.
    pub fn remove_object(&self, kind: ObjectKind, location: Point2) -> TaskSpec {
        let mut next = self.clone();
        let list = match kind {
            ObjectKind::Ee => &mut next.ee_points,
            ObjectKind::Dd => &mut next.dd_points,
        };
        list.retain(|p| !same_location(&p.location, &location));
        if !list.is_empty() {
            rebalance(list);
        }
        next
    }
}

/// Affine map between a world bounding box and the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceTransform {
    min: Point2,
    max: Point2,
}

impl WorkspaceTransform {
    pub fn new(min: Point2, max: Point2) -> Result<Self> {
        for d in 0..2 {
            if !(min[d].is_finite() && max[d].is_finite() && max[d] > min[d]) {
                return Err(Error::InvalidConfig(format!(
                    "degenerate workspace box along axis {d}"
                )));
            }
        }
        Ok(Self { min, max })
    }

    pub fn unit() -> Self {
        Self {
            min: [0.0, 0.0],
            max: [1.0, 1.0],
        }
    }

    pub fn min(&self) -> Point2 {
        self.min
    }

    pub fn max(&self) -> Point2 {
        self.max
    }

    /// World to unit coordinates. Points outside the box are not clamped.
    pub fn world_to_unit(&self, p: Point2) -> Point2 {
        [
            (p[0] - self.min[0]) / (self.max[0] - self.min[0]),
            (p[1] - self.min[1]) / (self.max[1] - self.min[1]),
        ]
    }

    pub fn unit_to_world(&self, p: Point2) -> Point2 {
        [
            self.min[0] + p[0] * (self.max[0] - self.min[0]),
            self.min[1] + p[1] * (self.max[1] - self.min[1]),
        ]
    }
}

/// The individually normalized layers of a compiled target.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledLayers {
    pub attraction: Option<DensityGrid>,
    pub dd: Option<DensityGrid>,
    pub user: Option<DensityGrid>,
    /// Set when `dd` attracts instead of repels.
    pub dd_attracts: bool,
}

impl CompiledLayers {
    fn present(&self) -> impl Iterator<Item = &DensityGrid> {
        [&self.attraction, &self.dd, &self.user]
            .into_iter()
            .flatten()
    }
}

fn gaussian(p: &[f64], center: &Point2, var: &Point2) -> f64 {
    let dx = p[0] - center[0];
    let dy = p[1] - center[1];
    libm::exp(-0.5 * (dx * dx / var[0] + dy * dy / var[1]))
}

fn unit_grid<F: FnMut(&[f64]) -> f64>(resolution: usize, f: F) -> Result<DensityGrid> {
    DensityGrid::from_fn(vec![resolution, resolution], vec![1.0, 1.0], f)
}

fn normalized(mut grid: DensityGrid) -> Result<DensityGrid> {
    grid.normalize()?;
    Ok(grid)
}

/// Builds each layer on a `resolution x resolution` grid over `[0,1]^2`.
pub fn compile_layers(spec: &TaskSpec, resolution: usize, rng_seed: u64) -> Result<CompiledLayers> {
    if resolution == 0 {
        return Err(Error::InvalidConfig("grid resolution must be positive".into()));
    }
    let var = spec.variance;

    let attraction = if spec.ee_points.is_empty() {
        None
    } else {
        Some(normalized(unit_grid(resolution, |p| {
            spec.ee_points
                .iter()
                .map(|e| e.weight * gaussian(p, &e.location, &var))
                .sum()
        })?)?)
    };

    let dd_attracts = spec.role == AgentRole::DdBlocker;
    let dd = if spec.dd_points.is_empty() {
        None
    } else {
        Some(normalized(unit_grid(resolution, |p| {
            spec.dd_points
                .iter()
                .map(|d| {
                    let g = gaussian(p, &d.location, &var);
                    d.weight * if dd_attracts { g } else { 1.0 - g }
                })
                .sum()
        })?)?)
    };

    let user = if spec.user_points.is_empty() {
        None
    } else {
        let mut grid = unit_grid(resolution, |_| 0.0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ spec.user_seed.rotate_left(32));
        let bound = spec.noise_bound;
        for v in grid.values_mut() {
            *v = rng.random_range(0.0..bound);
        }
        for set in &spec.user_points {
            for p in set {
                let cell = grid.cell_of(p);
                grid.values_mut()[cell] = 1.0;
            }
        }
        Some(normalized(grid)?)
    };

    Ok(CompiledLayers {
        attraction,
        dd,
        user,
        dd_attracts,
    })
}

/// Equal-weight mix of the present layers, renormalized to unit mass.
/// An empty spec yields the uniform density.
pub fn mix_layers(layers: &CompiledLayers, resolution: usize) -> Result<DensityGrid> {
    let present: Vec<&DensityGrid> = layers.present().collect();
    if present.is_empty() {
        return DensityGrid::uniform_unit(resolution, resolution);
    }
    let mut out = unit_grid(resolution, |_| 0.0)?;
    let w = 1.0 / present.len() as f64;
    for layer in present {
        for (o, v) in out.values_mut().iter_mut().zip(layer.values()) {
            *o += w * v;
        }
    }
    out.normalize()?;
    Ok(out)
}

pub fn compile_density(spec: &TaskSpec, resolution: usize, rng_seed: u64) -> Result<DensityGrid> {
    let layers = compile_layers(spec, resolution, rng_seed)?;
    mix_layers(&layers, resolution)
}
