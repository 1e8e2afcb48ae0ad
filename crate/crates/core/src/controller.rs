//! Decentralized receding-horizon ergodic controller.
//!
//! Each agent keeps a running time-average of its own basis coefficients,
//! fuses the spectra it hears from peers, and integrates a per-agent costate
//! backwards over a short horizon:
//!
//! ```text
//! rho' = -2 q / (T N) * sum_k Lambda_k (c_k - phi_k) dF_k/dx - (df/dx)^T rho,  rho(T) = 0
//! u*   = clamp(-R^-1 h(x)^T rho)
//! ```
//!
//! The costate is integrated along a zero-control nominal rollout. `N` is the
//! number of spectra that went into the fused average.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::dynamics::{AgentModel, AgentState, Mat};
use crate::error::{Error, Result};
use crate::spectral::{SpectralConfig, Spectrum};

pub type AgentId = usize;

pub const DEFAULT_HORIZON: f64 = 2.0;
pub const DEFAULT_PLAN_DT: f64 = 0.1;
pub const DEFAULT_CONTROL_WEIGHT: f64 = 0.01;
pub const DEFAULT_STALENESS: f64 = 5.0;
pub const DEFAULT_METRIC_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerParams {
    /// Horizon length `T` in seconds.
    pub horizon: f64,
    pub plan_dt: f64,
    /// Diagonal of `R`, one entry per control channel.
    pub control_weight: Vec<f64>,
    pub metric_weight: f64,
    /// Ticks between replans; controls in between come from the last plan.
    pub replan_period: usize,
    /// Peer spectra older than this (seconds) are left out of the fusion.
    pub staleness: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            plan_dt: DEFAULT_PLAN_DT,
            control_weight: vec![DEFAULT_CONTROL_WEIGHT; 2],
            metric_weight: DEFAULT_METRIC_WEIGHT,
            replan_period: 1,
            staleness: DEFAULT_STALENESS,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        self.steps()?;
        if self.control_weight.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidConfig("R diagonal entries must be positive".into()));
        }
        if !(self.metric_weight.is_finite() && self.metric_weight > 0.0) {
            return Err(Error::InvalidConfig("metric weight must be positive".into()));
        }
        if self.replan_period == 0 {
            return Err(Error::InvalidConfig("replan period must be >= 1".into()));
        }
        if !(self.staleness.is_finite() && self.staleness >= 0.0) {
            return Err(Error::InvalidConfig("staleness window must be nonnegative".into()));
        }
        Ok(())
    }

    /// Number of `plan_dt` steps in the horizon.
    pub fn steps(&self) -> Result<usize> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        if !(self.plan_dt.is_finite() && self.plan_dt > 0.0) {
            return Err(Error::InvalidConfig("plan dt must be positive".into()));
        }
        let ratio = self.horizon / self.plan_dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 {
            return Err(Error::InvalidConfig(
                "horizon must be an integer multiple of plan dt".into(),
            ));
        }
        Ok(steps as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeerSpectrum {
    pub spectrum: Spectrum,
    pub elapsed: f64,
    /// Simulation time at which this copy arrived.
    pub received_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicMemory {
    own: Spectrum,
    elapsed: f64,
    peers: BTreeMap<AgentId, PeerSpectrum>,
}

/// Result of fusing own and peer statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub spectrum: Spectrum,
    /// Number of spectra that contributed.
    pub count: usize,
}

impl ErgodicMemory {
    pub fn new(config: Arc<SpectralConfig>) -> Self {
        Self {
            own: Spectrum::zeros(config),
            elapsed: 0.0,
            peers: BTreeMap::new(),
        }
    }

    pub fn own(&self) -> &Spectrum {
        &self.own
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    pub fn peers(&self) -> &BTreeMap<AgentId, PeerSpectrum> {
        &self.peers
    }

    pub fn config(&self) -> &Arc<SpectralConfig> {
        self.own.config()
    }

    /// Folds one more sample into the running average.
    pub fn accumulate_own(&mut self, point: &[f64], dt: f64) -> Result<()> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidConfig("accumulation dt must be positive".into()));
        }
        if point.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        let cfg = self.own.config().clone();
        if point.len() != cfg.dims() {
            return Err(Error::DimensionMismatch {
                what: "point",
                expected: cfg.dims(),
                actual: point.len(),
            });
        }
        let mut row = vec![0.0; cfg.len()];
        cfg.basis_row(point, &mut row);
        let t_old = self.elapsed;
        let t_new = t_old + dt;
        for (c, f) in self.own.coefficients_mut().iter_mut().zip(&row) {
            *c = (t_old * *c + dt * f) / t_new;
        }
        self.elapsed = t_new;
        Ok(())
    }

    /// Stores the latest spectrum heard from `peer`.
    pub fn receive(&mut self, peer: AgentId, spectrum: Spectrum, elapsed: f64, now: f64) -> Result<()> {
        if !spectrum.same_config(&self.own) {
            return Err(Error::ConfigMismatch);
        }
        self.peers.insert(
            peer,
            PeerSpectrum {
                spectrum,
                elapsed,
                received_at: now,
            },
        );
        Ok(())
    }

    /// Time-weighted average of own and fresh peer spectra.
    ///
    /// With no fresh peers this returns the own spectrum unchanged.
    pub fn fuse(&self, now: f64, window: f64) -> Fused {
        let fresh: Vec<&PeerSpectrum> = self
            .peers
            .values()
            .filter(|p| now - p.received_at <= window && p.elapsed > 0.0)
            .collect();
        if fresh.is_empty() {
            return Fused {
                spectrum: self.own.clone(),
                count: 1,
            };
        }
        let items = std::iter::once((&self.own, self.elapsed))
            .chain(fresh.iter().map(|p| (&p.spectrum, p.elapsed)));
        match Spectrum::weighted_mean(items) {
            Ok(spectrum) => Fused {
                spectrum,
                count: fresh.len() + 1,
            },
            Err(_) => Fused {
                spectrum: self.own.clone(),
                count: 1,
            },
        }
    }
}

/// Output of one planning call.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    /// Clamped controls, one per horizon step.
    pub controls: Vec<Vec<f64>>,
    /// `-R^-1 h^T rho` before clamping.
    pub unclamped: Vec<Vec<f64>>,
    /// Costate at the start of every step plus the terminal value.
    pub costate: Vec<Vec<f64>>,
    /// Forward rollout under `controls`, starting at `x0`.
    pub path: Vec<AgentState>,
    /// Number of spectra fused into the horizon coefficients.
    pub fused_count: usize,
}

impl Plan {
    pub fn first_control(&self) -> &[f64] {
        &self.controls[0]
    }
}

/// Horizon coefficients and the nominal rollout they were built from.
#[derive(Debug, Clone)]
pub struct HorizonSetup {
    /// States on a half-step grid: `2 * steps + 1` entries.
    pub nominal: Vec<AgentState>,
    pub coefficients: Spectrum,
    pub fused_count: usize,
}

fn zero_rollout(model: &AgentModel, x0: &AgentState, params: &PlannerParams) -> Result<Vec<AgentState>> {
    let steps = params.steps()?;
    let zero = vec![0.0; model.control_dim()];
    rollout_half_grid(model, x0, &vec![zero; steps], params.plan_dt)
}

/// Integrates piecewise-constant controls, recording states every half step.
fn rollout_half_grid(
    model: &AgentModel,
    x0: &AgentState,
    controls: &[Vec<f64>],
    dt: f64,
) -> Result<Vec<AgentState>> {
    let mut out = Vec::with_capacity(2 * controls.len() + 1);
    out.push(x0.clone());
    let mut x = x0.clone();
    for u in controls {
        for _ in 0..2 {
            x = model.step(&x, u, dt / 2.0)?;
            out.push(x.clone());
        }
    }
    Ok(out)
}

/// Simpson-rule horizon integral of `F_k` along a half-grid path, divided by `T`.
fn horizon_spectrum(
    model: &AgentModel,
    half_grid: &[AgentState],
    cfg: &Arc<SpectralConfig>,
    horizon: f64,
    dt: f64,
) -> Vec<f64> {
    let mut acc = vec![0.0; cfg.len()];
    let mut row = vec![0.0; cfg.len()];
    let steps = (half_grid.len() - 1) / 2;
    for i in 0..steps {
        for (j, w) in [(2 * i, 1.0), (2 * i + 1, 4.0), (2 * i + 2, 1.0)] {
            cfg.basis_row(&model.project(half_grid[j].as_slice()), &mut row);
            let scale = w * dt / 6.0;
            for (a, f) in acc.iter_mut().zip(&row) {
                *a += scale * f;
            }
        }
    }
    acc.iter_mut().for_each(|a| *a /= horizon);
    acc
}

/// Fuses memory, rolls out the nominal trajectory, and blends the two into
/// horizon coefficients weighted by elapsed time versus horizon length.
pub fn horizon_setup(
    model: &AgentModel,
    x0: &AgentState,
    mem: &ErgodicMemory,
    params: &PlannerParams,
    now: f64,
) -> Result<HorizonSetup> {
    params.validate()?;
    model.check_state(x0.as_slice())?;
    let cfg = mem.config().clone();
    let fused = mem.fuse(now, params.staleness);
    let nominal = zero_rollout(model, x0, params)?;
    let predicted = horizon_spectrum(model, &nominal, &cfg, params.horizon, params.plan_dt);

    let elapsed = mem.elapsed();
    let w_mem = elapsed / (elapsed + params.horizon);
    let w_hor = params.horizon / (elapsed + params.horizon);
    let coeffs = fused
        .spectrum
        .coefficients()
        .iter()
        .zip(&predicted)
        .map(|(m, p)| w_mem * m + w_hor * p)
        .collect();
    Ok(HorizonSetup {
        nominal,
        coefficients: Spectrum::from_coefficients(cfg, coeffs)?,
        fused_count: fused.count,
    })
}

fn check_phi(coefficients: &Spectrum, phi: &Spectrum) -> Result<()> {
    if !coefficients.same_config(phi) {
        return Err(Error::ConfigMismatch);
    }
    Ok(())
}

/// `dE/dx` source term of the costate equation at state `x`, already scaled
/// by `-2 q / (T N)`.
fn costate_source(
    model: &AgentModel,
    x: &[f64],
    weights: &[f64],
    cfg: &SpectralConfig,
    scale: f64,
    vals: &mut [f64],
    grads: &mut [f64],
) -> Vec<f64> {
    let p = model.project(x);
    cfg.basis_row_with_grad(&p, vals, grads);
    let v = cfg.dims();
    let mut g = vec![0.0; v];
    for (flat, w) in weights.iter().enumerate() {
        for d in 0..v {
            g[d] += w * grads[flat * v + d];
        }
    }
    let mut out = vec![0.0; model.state_dim()];
    for (d, &i) in model.projection().iter().enumerate() {
        out[i] = scale * g[d];
    }
    out
}

/// Backward RK4 integration of the per-agent costate along `nominal`
/// (half-step grid), from `rho(T) = 0`. Returns `rho` at each full step.
pub fn integrate_costate(
    model: &AgentModel,
    nominal: &[AgentState],
    coefficients: &Spectrum,
    phi: &Spectrum,
    fused_count: usize,
    params: &PlannerParams,
) -> Result<Vec<Vec<f64>>> {
    check_phi(coefficients, phi)?;
    let cfg = coefficients.config().clone();
    let steps = (nominal.len() - 1) / 2;
    let n = model.state_dim();
    let dt = params.plan_dt;
    let weights: Vec<f64> = (0..cfg.len())
        .map(|k| cfg.lambda_at(k) * (coefficients.coefficients()[k] - phi.coefficients()[k]))
        .collect();
    let scale = -2.0 * params.metric_weight / (params.horizon * fused_count as f64);
    let zero_u = vec![0.0; model.control_dim()];
    let mut vals = vec![0.0; cfg.len()];
    let mut grads = vec![0.0; cfg.len() * cfg.dims()];

    let sources: Vec<Vec<f64>> = nominal
        .iter()
        .map(|x| costate_source(model, x.as_slice(), &weights, &cfg, scale, &mut vals, &mut grads))
        .collect();
    let jacobians: Vec<Mat> = nominal
        .iter()
        .map(|x| model.dynamics_jacobian(x.as_slice(), &zero_u))
        .collect();
    let field = |j: usize, rho: &[f64]| -> Vec<f64> {
        let jt_rho = jacobians[j].tr_mul_vec(rho);
        (0..n).map(|i| sources[j][i] - jt_rho[i]).collect()
    };

    let mut rho = vec![vec![0.0; n]; steps + 1];
    for i in (0..steps).rev() {
        // Step backwards from t_{i+1} to t_i with step -dt.
        let (hi, mid, lo) = (2 * i + 2, 2 * i + 1, 2 * i);
        let r = &rho[i + 1];
        let h = -dt;
        let k1 = field(hi, r);
        let r2: Vec<f64> = r.iter().zip(&k1).map(|(a, b)| a + h / 2.0 * b).collect();
        let k2 = field(mid, &r2);
        let r3: Vec<f64> = r.iter().zip(&k2).map(|(a, b)| a + h / 2.0 * b).collect();
        let k3 = field(mid, &r3);
        let r4: Vec<f64> = r.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
        let k4 = field(lo, &r4);
        let next: Vec<f64> = (0..n)
            .map(|c| r[c] + h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]))
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: i });
        }
        rho[i] = next;
    }
    Ok(rho)
}

/// `-R^-1 h(x)^T rho`
pub fn costate_control(model: &AgentModel, x: &[f64], rho: &[f64], params: &PlannerParams) -> Vec<f64> {
    model
        .control_matrix(x)
        .tr_mul_vec(rho)
        .iter()
        .zip(&params.control_weight)
        .map(|(hr, r)| -hr / r)
        .collect()
}

/// Steps 3 to 5 of planning, given precomputed horizon coefficients.
pub fn plan_with_setup(
    model: &AgentModel,
    x0: &AgentState,
    setup: &HorizonSetup,
    phi: &Spectrum,
    params: &PlannerParams,
) -> Result<Plan> {
    if params.control_weight.len() != model.control_dim() {
        return Err(Error::DimensionMismatch {
            what: "control weight",
            expected: model.control_dim(),
            actual: params.control_weight.len(),
        });
    }
    let costate = integrate_costate(
        model,
        &setup.nominal,
        &setup.coefficients,
        phi,
        setup.fused_count,
        params,
    )?;
    let steps = costate.len() - 1;
    let mut unclamped = Vec::with_capacity(steps);
    let mut controls = Vec::with_capacity(steps);
    for i in 0..steps {
        let u = costate_control(model, setup.nominal[2 * i].as_slice(), &costate[i], params);
        controls.push(model.clamp_control(&u));
        unclamped.push(u);
    }
    let mut path = Vec::with_capacity(steps + 1);
    path.push(x0.clone());
    let mut x = x0.clone();
    for u in &controls {
        x = model.step(&x, u, params.plan_dt)?;
        path.push(x.clone());
    }
    Ok(Plan {
        controls,
        unclamped,
        costate,
        path,
        fused_count: setup.fused_count,
    })
}

/// Plans a receding-horizon control sequence for one agent.
pub fn plan(
    model: &AgentModel,
    x0: &AgentState,
    mem: &ErgodicMemory,
    phi: &Spectrum,
    params: &PlannerParams,
    now: f64,
) -> Result<Plan> {
    if !mem.own().same_config(phi) {
        return Err(Error::ConfigMismatch);
    }
    let setup = horizon_setup(model, x0, mem, params, now)?;
    plan_with_setup(model, x0, &setup, phi, params)
}

/// Horizon ergodic cost under controls `u` (held over each step).
///
/// The agent's own horizon contribution enters the fused statistics with
/// weight `1 / N`, linearized around the nominal rollout:
/// `c(u) = c_bar + 1/(T N) * integral (F_k(x_u) - F_k(x_nom)) dt`.
pub fn horizon_cost(
    model: &AgentModel,
    x0: &AgentState,
    mem: &ErgodicMemory,
    phi: &Spectrum,
    params: &PlannerParams,
    now: f64,
    controls: &[Vec<f64>],
) -> Result<f64> {
    let setup = horizon_setup(model, x0, mem, params, now)?;
    check_phi(&setup.coefficients, phi)?;
    if controls.len() != params.steps()? {
        return Err(Error::DimensionMismatch {
            what: "control sequence",
            expected: params.steps()?,
            actual: controls.len(),
        });
    }
    let cfg = setup.coefficients.config().clone();
    let path = rollout_half_grid(model, x0, controls, params.plan_dt)?;
    let actual = horizon_spectrum(model, &path, &cfg, params.horizon, params.plan_dt);
    let nominal = horizon_spectrum(model, &setup.nominal, &cfg, params.horizon, params.plan_dt);
    let n = setup.fused_count as f64;
    let cost = (0..cfg.len())
        .map(|k| {
            let c = setup.coefficients.coefficients()[k] + (actual[k] - nominal[k]) / n;
            let e = c - phi.coefficients()[k];
            cfg.lambda_at(k) * e * e
        })
        .sum::<f64>();
    Ok(params.metric_weight * cost)
}

/// Directional derivative of [`horizon_cost`] at the nominal (zero) control
/// along the perturbation `v`, computed from the costate:
/// `integral rho^T h(x) v dt` by the trapezoid rule on each step.
pub fn directional_cost_derivative(
    model: &AgentModel,
    x0: &AgentState,
    mem: &ErgodicMemory,
    phi: &Spectrum,
    params: &PlannerParams,
    now: f64,
    v: &[Vec<f64>],
) -> Result<f64> {
    let steps = params.steps()?;
    if v.len() != steps {
        return Err(Error::DimensionMismatch {
            what: "perturbation sequence",
            expected: steps,
            actual: v.len(),
        });
    }
    let setup = horizon_setup(model, x0, mem, params, now)?;
    let rho = integrate_costate(
        model,
        &setup.nominal,
        &setup.coefficients,
        phi,
        setup.fused_count,
        params,
    )?;
    let dt = params.plan_dt;
    let mut total = 0.0;
    for (i, vi) in v.iter().enumerate() {
        let g = |j: usize, r: &[f64]| -> f64 {
            let hv = model.control_matrix(setup.nominal[j].as_slice()).mul_vec(vi);
            r.iter().zip(&hv).map(|(a, b)| a * b).sum()
        };
        total += dt / 2.0 * (g(2 * i, &rho[i]) + g(2 * i + 2, &rho[i + 1]));
    }
    Ok(total)
}
