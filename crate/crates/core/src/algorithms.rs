//! Hybrid accelerated extremum seeking (HAES) systems and the gradient ES
//! baseline.
//!
//! Every system uses the flat state `(x1, x2, τ, μ)` and, when a probe
//! disturbance is attached, a trailing clock. The flows access the cost only
//! through [`probe`]. The dither is advanced by exact rotation unless the
//! numeric dither mode is selected.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::costs::{probe, ConstraintData, CostProblem};
use crate::dither::{default_kappas, renormalize, DitherParams, DitherState, Rational, Rotation};
use crate::hybrid::{ExactSubflow, HybridSystem, JumpPolicy, JumpWindow};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Constant restarting frequency; timer reset only.
    Case1,
    /// Momentum restarting at `τ = T_max`.
    Case2,
    /// Equality-constrained primal-dual dynamics.
    Case3,
    /// Inequality-constrained augmented primal-dual dynamics.
    Case4,
    /// Gradient-descent extremum seeking.
    GradEs,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Case1 => "case1",
            Algorithm::Case2 => "case2",
            Algorithm::Case3 => "case3",
            Algorithm::Case4 => "case4",
            Algorithm::GradEs => "grad_es",
        }
    }

    pub fn has_timer(self) -> bool {
        matches!(self, Algorithm::Case1 | Algorithm::Case2)
    }

    pub fn is_constrained(self) -> bool {
        matches!(self, Algorithm::Case3 | Algorithm::Case4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DitherMode {
    /// Closed-form rotation of `μ` at every integrator stage.
    #[default]
    Exact,
    /// `μ̇ = Rμ/ε` integrated with the flow; pairs renormalized at jumps.
    Numeric,
}

/// Tuning of a HAES or gradient ES system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HaesConfig {
    pub case: Algorithm,
    /// Probe amplitude.
    pub a: f64,
    /// Dither time scale in seconds.
    pub epsilon: f64,
    #[serde(default)]
    pub k1: f64,
    #[serde(default = "one")]
    pub k2: f64,
    #[serde(default = "one")]
    pub k: f64,
    #[serde(rename = "T_min", default = "default_t_min")]
    pub t_min: f64,
    #[serde(rename = "T_med", default = "default_t_max")]
    pub t_med: f64,
    #[serde(rename = "T_max", default = "default_t_max")]
    pub t_max: f64,
    #[serde(rename = "F_tau", default = "half")]
    pub f_tau: f64,
    /// Dither frequencies; one per primal coordinate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappas: Option<Vec<Rational>>,
    #[serde(default)]
    pub jump_policy: JumpPolicy,
    /// Dual dimension; defaults to the number of constraints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default)]
    pub dither_mode: DitherMode,
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn default_t_min() -> f64 {
    0.01
}
fn default_t_max() -> f64 {
    25.0
}

impl HaesConfig {
    pub fn new(case: Algorithm, a: f64, epsilon: f64) -> Self {
        Self {
            case,
            a,
            epsilon,
            k1: 0.0,
            k2: 1.0,
            k: 1.0,
            t_min: default_t_min(),
            t_med: default_t_max(),
            t_max: default_t_max(),
            f_tau: 0.5,
            kappas: None,
            jump_policy: JumpPolicy::Earliest,
            m: None,
            dither_mode: DitherMode::Exact,
        }
    }

    pub fn with_timer(mut self, t_min: f64, t_med: f64, t_max: f64) -> Self {
        self.t_min = t_min;
        self.t_med = t_med;
        self.t_max = t_max;
        self
    }

    pub fn with_kappas(mut self, kappas: Vec<Rational>) -> Self {
        self.kappas = Some(kappas);
        self
    }

    /// Frequencies for an `n`-dimensional problem.
    pub fn kappas_for(&self, n: usize) -> Vec<Rational> {
        self.kappas.clone().unwrap_or_else(|| default_kappas(n))
    }

    /// Checks the configuration against a problem of primal dimension `n`
    /// with `rows` constraints.
    pub fn validate(&self, n: usize, rows: Option<usize>) -> Result<()> {
        let fail = |msg: &str| Err(Error::config(format!("{} config violates {msg}", self.case.name())));
        if !(self.a > 0.0 && self.a.is_finite()) {
            return fail("a > 0");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail("epsilon > 0");
        }
        if !(self.t_min > 0.0) {
            return fail("T_min > 0");
        }
        let kappas = self.kappas_for(n);
        if kappas.len() != n {
            return fail(&format!("one dither frequency per coordinate ({n} expected, {} given)", kappas.len()));
        }
        DitherParams::new(kappas, self.epsilon)?;
        match self.case {
            Algorithm::Case1 | Algorithm::Case2 => {
                if !(self.t_med - self.t_min > 0.0) {
                    return fail("T_med − T_min > 0");
                }
                if !(self.t_med <= self.t_max) {
                    return fail("T_med ≤ T_max");
                }
                if !self.t_max.is_finite() {
                    return fail("T_max finite");
                }
            }
            _ => {}
        }
        match self.case {
            Algorithm::Case1 => {
                if !(self.k2 > 0.0) {
                    return fail("k2 > 0");
                }
                if !(self.k1 >= 0.0) {
                    return fail("k1 ≥ 0");
                }
                if self.f_tau == 0.5 {
                    if self.k1 != 0.0 {
                        return fail("k1 = 0 when F_tau = 1/2");
                    }
                } else if self.f_tau == 1.0 {
                    log::warn!("case1 with F_tau = 1 assumes a unique minimizer");
                } else {
                    return fail("F_tau ∈ {1/2, 1}");
                }
            }
            Algorithm::Case2 => {
                if !(self.k > 0.0) {
                    return fail("k > 0");
                }
                if self.f_tau != 0.5 {
                    return fail("F_tau = 1/2");
                }
                if self.k1 != 0.0 {
                    return fail("k1 = 0");
                }
                if self.t_med != self.t_max {
                    return fail("T_med = T_max");
                }
            }
            Algorithm::Case3 | Algorithm::Case4 => {
                if !(self.k > 0.0) {
                    return fail("k > 0");
                }
                let Some(rows) = rows else {
                    return fail("constraint data present");
                };
                if let Some(m) = self.m {
                    if m != rows {
                        return fail(&format!("m = number of constraints ({rows})"));
                    }
                }
            }
            Algorithm::GradEs => {
                if !(self.k > 0.0) {
                    return fail("k > 0");
                }
            }
        }
        Ok(())
    }
}

/// Offsets of the components of the flat state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n: usize,
    pub m: usize,
    pub clock: bool,
}

impl StateLayout {
    pub fn x1(&self) -> std::ops::Range<usize> {
        0..self.n
    }
    pub fn x2(&self) -> std::ops::Range<usize> {
        self.n..self.n + self.m
    }
    pub fn tau(&self) -> usize {
        self.n + self.m
    }
    pub fn mu(&self) -> std::ops::Range<usize> {
        self.tau() + 1..self.tau() + 1 + 2 * self.n
    }
    pub fn clock_index(&self) -> Option<usize> {
        self.clock.then(|| self.tau() + 1 + 2 * self.n)
    }
    pub fn dim(&self) -> usize {
        self.tau() + 1 + 2 * self.n + usize::from(self.clock)
    }
}

/// Structured view of a flat HAES state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsState {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub tau: f64,
    pub mu: DitherState,
}

impl EsState {
    pub fn from_flat(layout: &StateLayout, x: &[f64]) -> Self {
        Self {
            x1: x[layout.x1()].to_vec(),
            x2: x[layout.x2()].to_vec(),
            tau: x[layout.tau()],
            mu: DitherState { mu: x[layout.mu()].to_vec() },
        }
    }

    pub fn to_flat(&self, layout: &StateLayout) -> Vec<f64> {
        let mut x = vec![0.0; layout.dim()];
        x[layout.x1()].copy_from_slice(&self.x1);
        x[layout.x2()].copy_from_slice(&self.x2);
        x[layout.tau()] = self.tau;
        x[layout.mu()].copy_from_slice(&self.mu.mu);
        x
    }

    /// The probe point `z = x1 + aμ̃`.
    pub fn probe_point(&self, a: f64) -> Vec<f64> {
        self.x1.iter().zip(self.mu.mu.iter().step_by(2)).map(|(x, m)| x + a * m).collect()
    }
}

type Signal = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A HAES or gradient ES system ready for [`crate::hybrid::solve`].
#[derive(Clone)]
pub struct HaesSystem {
    cfg: HaesConfig,
    cost: CostProblem,
    con: Option<ConstraintData>,
    layout: StateLayout,
    dither: DitherParams,
    disturbance: Option<Signal>,
    /// Flat-state tolerance for `τ = T_max`.
    tau_tol: f64,
}

impl std::fmt::Debug for HaesSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HaesSystem")
            .field("cfg", &self.cfg)
            .field("cost", &self.cost.name)
            .field("layout", &self.layout)
            .field("disturbed", &self.disturbance.is_some())
            .finish()
    }
}

pub fn build_case1(cfg: &HaesConfig, cost: &CostProblem) -> Result<HaesSystem> {
    expect_case(cfg, Algorithm::Case1)?;
    HaesSystem::new(cfg, cost, None)
}

pub fn build_case2(cfg: &HaesConfig, cost: &CostProblem) -> Result<HaesSystem> {
    expect_case(cfg, Algorithm::Case2)?;
    let sys = HaesSystem::new(cfg, cost, None)?;
    if let Some(theta) = cost.theta {
        if !dwell_condition(cfg.t_min, cfg.t_max, cfg.k, theta) {
            log::warn!(
                "dwell condition fails: T_max² − T_min² = {} < 1/(2θk) = {}",
                cfg.t_max * cfg.t_max - cfg.t_min * cfg.t_min,
                1.0 / (2.0 * theta * cfg.k)
            );
        }
    }
    Ok(sys)
}

pub fn build_case3(cfg: &HaesConfig, cost: &CostProblem, con: &ConstraintData) -> Result<HaesSystem> {
    expect_case(cfg, Algorithm::Case3)?;
    HaesSystem::new(cfg, cost, Some(con))
}

pub fn build_case4(cfg: &HaesConfig, cost: &CostProblem, con: &ConstraintData) -> Result<HaesSystem> {
    expect_case(cfg, Algorithm::Case4)?;
    HaesSystem::new(cfg, cost, Some(con))
}

pub fn build_grad_es(cfg: &HaesConfig, cost: &CostProblem) -> Result<HaesSystem> {
    expect_case(cfg, Algorithm::GradEs)?;
    HaesSystem::new(cfg, cost, None)
}

/// Dispatches on `cfg.case`.
pub fn build(cfg: &HaesConfig, cost: &CostProblem, con: Option<&ConstraintData>) -> Result<HaesSystem> {
    match cfg.case {
        Algorithm::Case1 => build_case1(cfg, cost),
        Algorithm::Case2 => build_case2(cfg, cost),
        Algorithm::Case3 | Algorithm::Case4 => {
            let con = con.ok_or_else(|| Error::config(format!("{} needs constraint data", cfg.case.name())))?;
            HaesSystem::new(cfg, cost, Some(con))
        }
        Algorithm::GradEs => build_grad_es(cfg, cost),
    }
}

fn expect_case(cfg: &HaesConfig, case: Algorithm) -> Result<()> {
    if cfg.case != case {
        return Err(Error::config(format!("expected a {} config, got {}", case.name(), cfg.case.name())));
    }
    Ok(())
}

impl HaesSystem {
    fn new(cfg: &HaesConfig, cost: &CostProblem, con: Option<&ConstraintData>) -> Result<Self> {
        let n = cost.n;
        cfg.validate(n, con.map(ConstraintData::rows))?;
        if let Some(c) = con {
            if c.a.ncols() != n {
                return Err(Error::config(format!("constraint matrix has {} columns, cost dimension is {n}", c.a.ncols())));
            }
        }
        let m = match cfg.case {
            Algorithm::Case3 | Algorithm::Case4 => con.map(ConstraintData::rows).unwrap_or(0),
            _ => n,
        };
        Ok(Self {
            cfg: cfg.clone(),
            cost: cost.clone(),
            con: if cfg.case.is_constrained() { con.cloned() } else { None },
            layout: StateLayout { n, m, clock: false },
            dither: DitherParams::new(cfg.kappas_for(n), cfg.epsilon)?,
            disturbance: None,
            tau_tol: 1e-9 * cfg.t_max.abs().max(1.0),
        })
    }

    /// Adds `e(t)` to `φ(z)` in the probe term `φ(z)μ̃` and appends a clock
    /// component to the state.
    pub fn with_probe_disturbance(mut self, e: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.disturbance = Some(Arc::new(e));
        self.layout.clock = true;
        self
    }

    pub fn config(&self) -> &HaesConfig {
        &self.cfg
    }

    pub fn cost(&self) -> &CostProblem {
        &self.cost
    }

    pub fn constraints(&self) -> Option<&ConstraintData> {
        self.con.as_ref()
    }

    pub fn layout(&self) -> StateLayout {
        self.layout
    }

    pub fn dither(&self) -> &DitherParams {
        &self.dither
    }

    /// Flat initial state. `x2` defaults to `x1` (zeros for the dual
    /// variables of constrained cases) and `τ` to `T_min`; the dither starts
    /// with every pair at `(1, 0)` and the clock at 0.
    pub fn initial_state(&self, x1: &[f64], x2: Option<&[f64]>, tau: Option<f64>) -> Result<Vec<f64>> {
        let l = self.layout;
        if x1.len() != l.n {
            return Err(Error::config(format!("x1 has length {}, expected {}", x1.len(), l.n)));
        }
        let x2 = match x2 {
            Some(v) if v.len() != l.m => {
                return Err(Error::config(format!("x2 has length {}, expected {}", v.len(), l.m)))
            }
            Some(v) => v.to_vec(),
            None if self.cfg.case.is_constrained() => vec![0.0; l.m],
            None => x1.to_vec(),
        };
        let state = EsState { x1: x1.to_vec(), x2, tau: tau.unwrap_or(self.cfg.t_min), mu: DitherState::initial(l.n) };
        Ok(state.to_flat(&l))
    }

    /// Probe point `z = x1 + aμ̃` of a flat state.
    pub fn probe_point(&self, x: &[f64]) -> Vec<f64> {
        let l = self.layout;
        x[l.x1()].iter().zip(x[l.mu()].iter().step_by(2)).map(|(v, m)| v + self.cfg.a * m).collect()
    }

    /// `φ(z)` plus the disturbance, as seen by the probe term.
    fn measured(&self, x: &[f64]) -> f64 {
        let l = self.layout;
        let mu = &x[l.mu()];
        let probe_vec: SmallVec<[f64; 16]> = mu.iter().step_by(2).copied().collect();
        let mut v = probe(&self.cost, &x[l.x1()], &probe_vec, self.cfg.a);
        if let (Some(e), Some(c)) = (&self.disturbance, l.clock_index()) {
            v += e(x[c]);
        }
        v
    }
}

struct DitherStep {
    rot: Rotation,
    range: std::ops::Range<usize>,
}

impl ExactSubflow for DitherStep {
    fn apply(&self, from: &[f64], to: &mut [f64]) {
        self.rot.apply(&from[self.range.clone()], &mut to[self.range.clone()]);
    }
}

impl HybridSystem for HaesSystem {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn flow_map(&self, x: &[f64], dx: &mut [f64]) {
        let l = self.layout;
        let cfg = &self.cfg;
        let (n, m) = (l.n, l.m);
        let phi = self.measured(x);
        let x1 = &x[l.x1()];
        let x2 = &x[l.x2()];
        let tau = x[l.tau()];
        let mu = &x[l.mu()];
        // φ(z)μ̃, the only cost-dependent term.
        let pm = |i: usize| phi * mu[2 * i];
        let ia = 1.0 / cfg.a;
        match cfg.case {
            Algorithm::Case1 => {
                for i in 0..n {
                    dx[i] = 2.0 / tau * (x2[i] - x1[i]) - 2.0 * ia * cfg.k1 * pm(i);
                    dx[n + i] = -4.0 * ia * cfg.k2 * tau * pm(i);
                }
                dx[l.tau()] = cfg.f_tau;
            }
            Algorithm::Case2 => {
                for i in 0..n {
                    dx[i] = 2.0 / tau * (x2[i] - x1[i]);
                    dx[n + i] = -4.0 * ia * cfg.k * tau * pm(i);
                }
                dx[l.tau()] = 0.5;
            }
            Algorithm::Case3 => {
                let con = self.con.as_ref().expect("constrained case has constraints");
                for i in 0..n {
                    let at_x2: f64 = (0..m).map(|j| con.a[(j, i)] * x2[j]).sum();
                    dx[i] = -2.0 * ia * pm(i) - cfg.k * at_x2;
                }
                for j in 0..m {
                    let ax: f64 = (0..n).map(|i| con.a[(j, i)] * x1[i]).sum();
                    dx[n + j] = ax - con.b[j];
                }
                dx[l.tau()] = 0.0;
            }
            Algorithm::Case4 => {
                let con = self.con.as_ref().expect("constrained case has constraints");
                let h: SmallVec<[f64; 16]> = (0..m)
                    .map(|j| {
                        let ax: f64 = (0..n).map(|i| con.a[(j, i)] * x1[i]).sum();
                        (ax - con.b[j] + x2[j]).max(0.0)
                    })
                    .collect();
                for i in 0..n {
                    let sum: f64 = (0..m).map(|j| h[j] * con.a[(j, i)]).sum();
                    dx[i] = -2.0 * ia * pm(i) - cfg.k * sum;
                }
                for j in 0..m {
                    dx[n + j] = h[j] - x2[j];
                }
                dx[l.tau()] = 0.0;
            }
            Algorithm::GradEs => {
                for i in 0..n {
                    dx[i] = -cfg.k * 2.0 * ia * pm(i);
                }
                dx[l.x2()].fill(0.0);
                dx[l.tau()] = 0.0;
            }
        }
        match cfg.dither_mode {
            DitherMode::Exact => dx[l.mu()].fill(0.0),
            DitherMode::Numeric => self.dither.rhs(mu, &mut dx[l.mu()]),
        }
        if let Some(c) = l.clock_index() {
            dx[c] = 1.0;
        }
    }

    fn jump_map(&self, x: &[f64], out: &mut [f64]) {
        let l = self.layout;
        out.copy_from_slice(x);
        match self.cfg.case {
            Algorithm::Case1 => out[l.tau()] = self.cfg.t_min,
            Algorithm::Case2 => {
                out.copy_within(l.x1(), l.x2().start);
                out[l.tau()] = self.cfg.t_min;
            }
            _ => {}
        }
        if self.cfg.dither_mode == DitherMode::Numeric {
            renormalize(&mut out[l.mu()]);
        }
    }

    fn in_flow_set(&self, x: &[f64]) -> bool {
        if !self.cfg.case.has_timer() {
            return true;
        }
        let tau = x[self.layout.tau()];
        tau >= self.cfg.t_min && tau <= self.cfg.t_max
    }

    fn in_jump_set(&self, x: &[f64]) -> bool {
        let tau = x[self.layout.tau()];
        match self.cfg.case {
            Algorithm::Case1 => tau >= self.cfg.t_med,
            Algorithm::Case2 => tau >= self.cfg.t_max - self.tau_tol,
            _ => false,
        }
    }

    fn jump_window(&self, x: &[f64]) -> Option<JumpWindow> {
        (self.cfg.case == Algorithm::Case1).then(|| JumpWindow {
            value: x[self.layout.tau()],
            lo: self.cfg.t_med,
            hi: self.cfg.t_max,
        })
    }

    fn exact_subflow(&self, dt: f64) -> Option<Box<dyn ExactSubflow + '_>> {
        match self.cfg.dither_mode {
            DitherMode::Exact => Some(Box::new(DitherStep { rot: self.dither.rotation(dt), range: self.layout.mu() })),
            DitherMode::Numeric => None,
        }
    }
}

/// `T*_max = e·sqrt(1/(2kθ) + T_min²)`.
pub fn quasi_optimal_tmax(k: f64, theta: f64, t_min: f64) -> Result<f64> {
    if !(k > 0.0) || !(theta > 0.0) {
        return Err(Error::invalid(format!("k > 0 and theta > 0 required, got k = {k}, theta = {theta}")));
    }
    if !(t_min >= 0.0) {
        return Err(Error::invalid(format!("T_min >= 0 required, got {t_min}")));
    }
    Ok(std::f64::consts::E * (1.0 / (2.0 * k * theta) + t_min * t_min).sqrt())
}

/// `T_max² − T_min² ≥ 1/(2θk)`.
pub fn dwell_condition(t_min: f64, t_max: f64, k: f64, theta: f64) -> bool {
    t_max * t_max - t_min * t_min >= 1.0 / (2.0 * theta * k)
}

/// Per-restart contraction constants of momentum restarting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionFactors {
    /// `(1/(kT_max²))(1/(2θ) + kT_min²)`.
    pub gamma_tilde: f64,
    /// `T_max² / T_min²`.
    pub alpha0: f64,
    /// `1 − T_min²/T_max² − 1/(2kθT_max²)`.
    pub gamma: f64,
}

impl ContractionFactors {
    /// Whether `γ̃ ∈ (0, 1)`.
    pub fn contracts(&self) -> bool {
        self.gamma_tilde > 0.0 && self.gamma_tilde < 1.0
    }
}

pub fn contraction_factors(cfg: &HaesConfig, theta: f64) -> Result<ContractionFactors> {
    if !(theta > 0.0) {
        return Err(Error::invalid(format!("theta > 0 required, got {theta}")));
    }
    if cfg.t_min == 0.0 {
        return Err(Error::invalid("alpha0 is undefined for T_min = 0"));
    }
    if !(cfg.k > 0.0) || !(cfg.t_max > 0.0) {
        return Err(Error::invalid("k > 0 and T_max > 0 required"));
    }
    let (k, tmin2, tmax2) = (cfg.k, cfg.t_min * cfg.t_min, cfg.t_max * cfg.t_max);
    Ok(ContractionFactors {
        gamma_tilde: (1.0 / (2.0 * theta) + k * tmin2) / (k * tmax2),
        alpha0: tmax2 / tmin2,
        gamma: 1.0 - tmin2 / tmax2 - 1.0 / (2.0 * k * theta * tmax2),
    })
}
