//! Control-affine agent models `x' = g(x) + h(x) u`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default per-channel bound for velocity/acceleration channels (units/s).
pub const DEFAULT_LINEAR_BOUND: f64 = 0.2;
/// Default turn-rate bound for differential drive (rad/s).
pub const DEFAULT_TURN_BOUND: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    SingleIntegrator,
    DoubleIntegrator,
    DifferentialDrive,
}

impl ModelKind {
    pub fn state_dim(self) -> usize {
        match self {
            ModelKind::SingleIntegrator => 2,
            ModelKind::DoubleIntegrator => 4,
            ModelKind::DifferentialDrive => 3,
        }
    }

    pub fn control_dim(self) -> usize {
        2
    }
}

/// Dense row-major matrix, sized for the small per-agent blocks used here.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `self * v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.get(r, c) * v[c]).sum())
            .collect()
    }

    /// `self^T * v`
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.get(r, c) * v[r]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    kind: ModelKind,
    bounds: Vec<Bound>,
    projection: Vec<usize>,
}

impl AgentModel {
    /// Model with the default control bounds and `(x, y)` as exploration coordinates.
    pub fn new(kind: ModelKind) -> Self {
        let lin = Bound {
            lo: -DEFAULT_LINEAR_BOUND,
            hi: DEFAULT_LINEAR_BOUND,
        };
        let bounds = match kind {
            ModelKind::SingleIntegrator | ModelKind::DoubleIntegrator => vec![lin, lin],
            ModelKind::DifferentialDrive => vec![
                lin,
                Bound {
                    lo: -DEFAULT_TURN_BOUND,
                    hi: DEFAULT_TURN_BOUND,
                },
            ],
        };
        Self {
            kind,
            bounds,
            projection: vec![0, 1],
        }
    }

    pub fn with_bounds(kind: ModelKind, bounds: Vec<Bound>) -> Result<Self> {
        if bounds.len() != kind.control_dim() {
            return Err(Error::DimensionMismatch {
                what: "control bounds",
                expected: kind.control_dim(),
                actual: bounds.len(),
            });
        }
        if bounds
            .iter()
            .any(|b| !(b.lo.is_finite() && b.hi.is_finite() && b.lo < b.hi))
        {
            return Err(Error::InvalidConfig("control bounds must be finite with lo < hi".into()));
        }
        Ok(Self {
            bounds,
            ..Self::new(kind)
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn state_dim(&self) -> usize {
        self.kind.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.kind.control_dim()
    }

    pub fn bounds(&self) -> &[Bound] {
        &self.bounds
    }

    /// State components that form the exploration-space coordinates.
    pub fn projection(&self) -> &[usize] {
        &self.projection
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.projection.iter().map(|&i| x[i]).collect()
    }

    pub fn clamp_control(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.bounds)
            .map(|(ui, b)| ui.clamp(b.lo, b.hi))
            .collect()
    }

    /// Free dynamics `g(x)`.
    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            ModelKind::SingleIntegrator => vec![0.0; 2],
            ModelKind::DoubleIntegrator => vec![x[2], x[3], 0.0, 0.0],
            ModelKind::DifferentialDrive => vec![0.0; 3],
        }
    }

    /// Control response `h(x)`, `n x m`.
    pub fn control_matrix(&self, x: &[f64]) -> Mat {
        let mut h = Mat::zeros(self.state_dim(), self.control_dim());
        match self.kind {
            ModelKind::SingleIntegrator => {
                h.set(0, 0, 1.0);
                h.set(1, 1, 1.0);
            }
            ModelKind::DoubleIntegrator => {
                h.set(2, 0, 1.0);
                h.set(3, 1, 1.0);
            }
            ModelKind::DifferentialDrive => {
                let th = x[2];
                h.set(0, 0, libm::cos(th));
                h.set(1, 0, libm::sin(th));
                h.set(2, 1, 1.0);
            }
        }
        h
    }

    /// `f(x, u) = g(x) + h(x) u`
    pub fn vector_field(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut f = self.drift(x);
        let hu = self.control_matrix(x).mul_vec(u);
        f.iter_mut().zip(hu).for_each(|(a, b)| *a += b);
        f
    }

    /// `df/dx` evaluated at `(x, u)`.
    pub fn dynamics_jacobian(&self, x: &[f64], u: &[f64]) -> Mat {
        let n = self.state_dim();
        let mut j = Mat::zeros(n, n);
        match self.kind {
            ModelKind::SingleIntegrator => {}
            ModelKind::DoubleIntegrator => {
                j.set(0, 2, 1.0);
                j.set(1, 3, 1.0);
            }
            ModelKind::DifferentialDrive => {
                let th = x[2];
                j.set(0, 2, -libm::sin(th) * u[0]);
                j.set(1, 2, libm::cos(th) * u[0]);
            }
        }
        j
    }

    pub fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                what: "state",
                expected: self.state_dim(),
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        Ok(())
    }

    /// One RK4 step with the control clamped to bounds and held constant.
    /// Exploration coordinates are clamped to `[0,1]` afterwards.
    pub fn step(&self, x: &AgentState, u: &[f64], dt: f64) -> Result<AgentState> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidConfig("step dt must be positive".into()));
        }
        self.check_state(&x.0)?;
        if u.len() != self.control_dim() {
            return Err(Error::DimensionMismatch {
                what: "control",
                expected: self.control_dim(),
                actual: u.len(),
            });
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control"));
        }
        let u = self.clamp_control(u);
        let mut next = rk4(|s| self.vector_field(s, &u), &x.0, dt);
        for &i in &self.projection {
            next[i] = next[i].clamp(0.0, 1.0);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        Ok(AgentState(next))
    }
}

/// Classic fourth-order Runge-Kutta step for an autonomous field.
pub fn rk4<F>(f: F, x: &[f64], dt: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(ai, bi)| ai + s * bi).collect()
    };
    let k1 = f(x);
    let k2 = f(&axpy(x, dt / 2.0, &k1));
    let k3 = f(&axpy(x, dt / 2.0, &k2));
    let k4 = f(&axpy(x, dt, &k3));
    x.iter()
        .enumerate()
        .map(|(i, xi)| xi + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentState(pub Vec<f64>);

impl AgentState {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn fd_jacobian(model: &AgentModel, x: &[f64], u: &[f64]) -> Mat {
        let n = x.len();
        let eps = 1e-6;
        let mut j = Mat::zeros(n, n);
        for c in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[c] += eps;
            xm[c] -= eps;
            let fp = model.vector_field(&xp, u);
            let fm = model.vector_field(&xm, u);
            for r in 0..n {
                j.set(r, c, (fp[r] - fm[r]) / (2.0 * eps));
            }
        }
        j
    }

    #[test]
    fn drift_examples() {
        let si = AgentModel::new(ModelKind::SingleIntegrator);
        assert_eq!(si.drift(&[0.3, 0.4]), vec![0.0, 0.0]);
        let di = AgentModel::new(ModelKind::DoubleIntegrator);
        assert_eq!(di.drift(&[0.1, 0.2, 1.0, -2.0]), vec![1.0, -2.0, 0.0, 0.0]);
        let dd = AgentModel::new(ModelKind::DifferentialDrive);
        assert_eq!(dd.drift(&[0.1, 0.2, 0.7]), vec![0.0; 3]);
    }

    #[test]
    fn control_matrix_examples() {
        let si = AgentModel::new(ModelKind::SingleIntegrator);
        assert_eq!(si.control_matrix(&[0.0, 0.0]).data, vec![1.0, 0.0, 0.0, 1.0]);
        let dd = AgentModel::new(ModelKind::DifferentialDrive);
        assert_eq!(
            dd.control_matrix(&[0.0, 0.0, 0.0]).data,
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        );
        let h = dd.control_matrix(&[0.0, 0.0, FRAC_PI_2]);
        assert!(h.get(0, 0).abs() < 1e-12);
        assert!((h.get(1, 0) - 1.0).abs() < 1e-12);
        assert_eq!(h.get(2, 0), 0.0);
        let di = AgentModel::new(ModelKind::DoubleIntegrator);
        let h = di.control_matrix(&[0.0; 4]);
        assert_eq!(h.data, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn step_examples() {
        let si = AgentModel::new(ModelKind::SingleIntegrator);
        let x = AgentState(vec![0.5, 0.5]);
        let next = si.step(&x, &[0.1, 0.0], 0.1).unwrap();
        assert!((next.0[0] - 0.51).abs() < 1e-12);
        assert!((next.0[1] - 0.5).abs() < 1e-12);

        let over = si.step(&x, &[5.0, -5.0], 0.1).unwrap();
        let clamped = si.step(&x, &[0.2, -0.2], 0.1).unwrap();
        assert_eq!(over, clamped);

        let dd = AgentModel::new(ModelKind::DifferentialDrive);
        let x = AgentState(vec![0.3, 0.6, 0.25]);
        let next = dd.step(&x, &[0.0, 1.0], 0.1).unwrap();
        assert_eq!(&next.0[..2], &[0.3, 0.6]);
        assert!((next.0[2] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn step_rejects_nonfinite() {
        let si = AgentModel::new(ModelKind::SingleIntegrator);
        let x = AgentState(vec![0.5, 0.5]);
        assert_eq!(
            si.step(&x, &[f64::NAN, 0.0], 0.1),
            Err(Error::NonFinite("control"))
        );
        assert_eq!(
            si.step(&AgentState(vec![f64::INFINITY, 0.0]), &[0.0, 0.0], 0.1),
            Err(Error::NonFinite("state"))
        );
    }

    #[test]
    fn jacobian_examples() {
        let si = AgentModel::new(ModelKind::SingleIntegrator);
        assert_eq!(si.dynamics_jacobian(&[0.2, 0.2], &[0.1, 0.1]).data, vec![0.0; 4]);
        let di = AgentModel::new(ModelKind::DoubleIntegrator);
        let j = di.dynamics_jacobian(&[0.0; 4], &[0.0; 2]);
        assert_eq!(j.get(0, 2), 1.0);
        assert_eq!(j.get(1, 3), 1.0);
        assert_eq!(j.data.iter().filter(|v| **v != 0.0).count(), 2);

        let dd = AgentModel::new(ModelKind::DifferentialDrive);
        let x = [0.4, 0.4, 0.0];
        let u = [1.0, 0.0];
        let j = dd.dynamics_jacobian(&x, &u);
        let fd = fd_jacobian(&dd, &x, &u);
        assert_eq!(j.get(0, 2), 0.0);
        assert_eq!(j.get(1, 2), 1.0);
        for (a, b) in j.data.iter().zip(&fd.data) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn bounds_validation() {
        let bad = AgentModel::with_bounds(
            ModelKind::SingleIntegrator,
            vec![Bound { lo: 1.0, hi: 0.0 }, Bound { lo: -1.0, hi: 1.0 }],
        );
        assert!(bad.is_err());
    }

    fn model_strategy() -> impl Strategy<Value = ModelKind> {
        prop_oneof![
            Just(ModelKind::SingleIntegrator),
            Just(ModelKind::DoubleIntegrator),
            Just(ModelKind::DifferentialDrive),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn jacobian_matches_finite_differences(
            kind in model_strategy(),
            x in prop::collection::vec(-2.0f64..2.0, 4),
            u in prop::collection::vec(-1.0f64..1.0, 2),
        ) {
            let model = AgentModel::new(kind);
            let x = &x[..model.state_dim()];
            let j = model.dynamics_jacobian(x, &u);
            let fd = fd_jacobian(&model, x, &u);
            for (a, b) in j.data.iter().zip(&fd.data) {
                let scale = a.abs().max(b.abs()).max(1.0);
                prop_assert!((a - b).abs() / scale < 1e-6);
            }
        }

        #[test]
        fn positions_stay_in_unit_box(
            kind in model_strategy(),
            x in prop::collection::vec(0.0f64..1.0, 4),
            u in prop::collection::vec(-1e3f64..1e3, 2),
            steps in 1usize..20,
        ) {
            let model = AgentModel::new(kind);
            let mut s = AgentState(x[..model.state_dim()].to_vec());
            for _ in 0..steps {
                s = model.step(&s, &u, 0.1).unwrap();
                prop_assert!(s.0[0] >= 0.0 && s.0[0] <= 1.0);
                prop_assert!(s.0[1] >= 0.0 && s.0[1] <= 1.0);
            }
        }

        #[test]
        fn zero_control_is_identity_without_drift(
            x in prop::collection::vec(0.0f64..1.0, 3),
            single in any::<bool>(),
        ) {
            let model = if single {
                AgentModel::new(ModelKind::SingleIntegrator)
            } else {
                AgentModel::new(ModelKind::DifferentialDrive)
            };
            let s = AgentState(x[..model.state_dim()].to_vec());
            let next = model.step(&s, &[0.0, 0.0], 0.1).unwrap();
            prop_assert_eq!(next, s);
        }
    }
}
