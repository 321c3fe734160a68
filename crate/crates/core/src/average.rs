//! Average systems of the extremum seeking dynamics and Lyapunov functions
//! for checking their decrease.
//!
//! The average state is `(y1, y2, y3)` with `y3` the timer. The averaged
//! probe term replaces `(2/a)φ(z)μ̃` by `∇φ(y1)`. These systems need the
//! gradient oracle and serve as references for the zero-order dynamics.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::algorithms::{Algorithm, HaesConfig};
use crate::costs::{ConstraintData, CostProblem};
use crate::hybrid::{HybridSystem, JumpWindow};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageState {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub y3: f64,
}

impl AverageState {
    pub fn from_flat(n: usize, y: &[f64]) -> Self {
        let m = y.len() - n - 1;
        Self { y1: y[..n].to_vec(), y2: y[n..n + m].to_vec(), y3: y[n + m] }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.y1.clone();
        v.extend_from_slice(&self.y2);
        v.push(self.y3);
        v
    }
}

/// Average hybrid system over the flat state `(y1, y2, y3)`.
#[derive(Debug, Clone)]
pub struct AverageSystem {
    cfg: HaesConfig,
    cost: CostProblem,
    con: Option<ConstraintData>,
    n: usize,
    m: usize,
    tau_tol: f64,
}

/// The average system of the configured case. Requires a gradient oracle.
pub fn build_average(cfg: &HaesConfig, cost: &CostProblem, con: Option<&ConstraintData>) -> Result<AverageSystem> {
    if !cost.has_grad() {
        return Err(Error::config(format!("average system of '{}' needs a gradient oracle", cost.name)));
    }
    let rows = con.map(ConstraintData::rows);
    cfg.validate(cost.n, if cfg.case.is_constrained() { rows } else { None })?;
    let m = if cfg.case.is_constrained() { rows.unwrap_or(0) } else { cost.n };
    Ok(AverageSystem {
        cfg: cfg.clone(),
        cost: cost.clone(),
        con: if cfg.case.is_constrained() { con.cloned() } else { None },
        n: cost.n,
        m,
        tau_tol: 1e-9 * cfg.t_max.abs().max(1.0),
    })
}

impl AverageSystem {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Flat state with the same defaults as the zero-order system.
    pub fn initial_state(&self, y1: &[f64], y2: Option<&[f64]>, y3: Option<f64>) -> Vec<f64> {
        let y2 = match y2 {
            Some(v) => v.to_vec(),
            None if self.cfg.case.is_constrained() => vec![0.0; self.m],
            None => y1.to_vec(),
        };
        AverageState { y1: y1.to_vec(), y2, y3: y3.unwrap_or(self.cfg.t_min) }.to_flat()
    }
}

impl HybridSystem for AverageSystem {
    fn dim(&self) -> usize {
        self.n + self.m + 1
    }

    fn flow_map(&self, y: &[f64], dy: &mut [f64]) {
        let (n, m, cfg) = (self.n, self.m, &self.cfg);
        let (y1, y2, tau) = (&y[..n], &y[n..n + m], y[n + m]);
        let mut g: SmallVec<[f64; 16]> = SmallVec::from_elem(0.0, n);
        self.cost.grad_into(y1, &mut g).expect("gradient checked at build");
        match cfg.case {
            Algorithm::Case1 => {
                for i in 0..n {
                    dy[i] = 2.0 / tau * (y2[i] - y1[i]) - cfg.k1 * g[i];
                    dy[n + i] = -2.0 * cfg.k2 * tau * g[i];
                }
                dy[n + m] = cfg.f_tau;
            }
            Algorithm::Case2 => {
                for i in 0..n {
                    dy[i] = 2.0 / tau * (y2[i] - y1[i]);
                    dy[n + i] = -2.0 * cfg.k * tau * g[i];
                }
                dy[n + m] = 0.5;
            }
            Algorithm::Case3 => {
                let con = self.con.as_ref().expect("constrained case has constraints");
                for i in 0..n {
                    let at: f64 = (0..m).map(|j| con.a[(j, i)] * y2[j]).sum();
                    dy[i] = -g[i] - cfg.k * at;
                }
                for j in 0..m {
                    let ay: f64 = (0..n).map(|i| con.a[(j, i)] * y1[i]).sum();
                    dy[n + j] = ay - con.b[j];
                }
                dy[n + m] = 0.0;
            }
            Algorithm::Case4 => {
                let con = self.con.as_ref().expect("constrained case has constraints");
                let h: SmallVec<[f64; 16]> = (0..m)
                    .map(|j| {
                        let ay: f64 = (0..n).map(|i| con.a[(j, i)] * y1[i]).sum();
                        (ay - con.b[j] + y2[j]).max(0.0)
                    })
                    .collect();
                for i in 0..n {
                    let s: f64 = (0..m).map(|j| h[j] * con.a[(j, i)]).sum();
                    dy[i] = -g[i] - cfg.k * s;
                }
                for j in 0..m {
                    dy[n + j] = h[j] - y2[j];
                }
                dy[n + m] = 0.0;
            }
            Algorithm::GradEs => {
                for i in 0..n {
                    dy[i] = -cfg.k * g[i];
                }
                dy[n..].fill(0.0);
            }
        }
    }

    fn jump_map(&self, y: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.copy_from_slice(y);
        match self.cfg.case {
            Algorithm::Case1 => out[n + self.m] = self.cfg.t_min,
            Algorithm::Case2 => {
                out.copy_within(0..n, n);
                out[n + self.m] = self.cfg.t_min;
            }
            _ => {}
        }
    }

    fn in_flow_set(&self, y: &[f64]) -> bool {
        if !self.cfg.case.has_timer() {
            return true;
        }
        let tau = y[self.n + self.m];
        tau >= self.cfg.t_min && tau <= self.cfg.t_max
    }

    fn in_jump_set(&self, y: &[f64]) -> bool {
        let tau = y[self.n + self.m];
        match self.cfg.case {
            Algorithm::Case1 => tau >= self.cfg.t_med,
            Algorithm::Case2 => tau >= self.cfg.t_max - self.tau_tol,
            _ => false,
        }
    }

    fn jump_window(&self, y: &[f64]) -> Option<JumpWindow> {
        (self.cfg.case == Algorithm::Case1).then(|| JumpWindow {
            value: y[self.n + self.m],
            lo: self.cfg.t_med,
            hi: self.cfg.t_max,
        })
    }
}

/// Second derivative of `s` from
/// `s̈ + (2 + τ̇)ṡ/τ + 4k2∇φ(s) + k1(∇²φ(s)ṡ + (τ̇/τ)∇φ(s)) = 0`.
pub fn nesterov_rhs(
    s: &[f64],
    sdot: &[f64],
    tau: f64,
    taudot: f64,
    k1: f64,
    k2: f64,
    cost: &CostProblem,
) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau > 0 required, got {tau}")));
    }
    let g = cost.grad(s)?;
    let mut out: Vec<f64> = (0..s.len())
        .map(|i| -(2.0 + taudot) * sdot[i] / tau - 4.0 * k2 * g[i] - k1 * taudot / tau * g[i])
        .collect();
    if k1 != 0.0 {
        let hs = cost.hess(s)?.transpose() * nalgebra::DVector::from_column_slice(sdot);
        for (o, v) in out.iter_mut().zip(hs.iter()) {
            *o -= k1 * v;
        }
    }
    Ok(out)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lyapunov function of the constant-frequency restart average system.
///
/// For `F_τ = ½`: `¼|y2 − y1|² + ¼|y2 − z*|² + k2 y3² φ̃(y1)`.
/// For `F_τ = 1`: `½|y2 − z*|² + k2 y3² φ̃(y1)`.
pub fn lyapunov_case1(y: &AverageState, cfg: &HaesConfig, cost: &CostProblem) -> Result<f64> {
    let (zs, phi_star) = cost.require_optimum()?;
    let sub = cost.phi(&y.y1) - phi_star;
    let tail = cfg.k2 * y.y3 * y.y3 * sub;
    if cfg.f_tau == 1.0 {
        Ok(0.5 * dist2(&y.y2, zs) + tail)
    } else {
        Ok(0.25 * dist2(&y.y2, &y.y1) + 0.25 * dist2(&y.y2, zs) + tail)
    }
}

/// Change of [`lyapunov_case1`] across a timer reset:
/// `−k2 φ̃(y1)(y3² − T_min²)`.
pub fn lyapunov_case1_jump_delta(y: &AverageState, cfg: &HaesConfig, cost: &CostProblem) -> Result<f64> {
    let (_, phi_star) = cost.require_optimum()?;
    let sub = cost.phi(&y.y1) - phi_star;
    Ok(-cfg.k2 * sub * (y.y3 * y.y3 - cfg.t_min * cfg.t_min))
}

/// Value of the momentum restart Lyapunov function with its quadratic
/// sandwich `c̲d² ≤ V ≤ c̄d²`, `d² = |y1 − z*|² + |y2 − z*|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Case2Lyapunov {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn lyapunov_case2(y: &AverageState, cfg: &HaesConfig, cost: &CostProblem) -> Result<Case2Lyapunov> {
    let (zs, phi_star) = cost.require_optimum()?;
    let (theta, lips) = cost.require_constants()?;
    let sub = cost.phi(&y.y1) - phi_star;
    let value = 0.25 * dist2(&y.y2, &y.y1) + 0.25 * dist2(&y.y2, zs) + cfg.k * y.y3 * y.y3 * sub;
    let d2 = dist2(&y.y1, zs) + dist2(&y.y2, zs);
    let c_lo = 0.25 * (1.0f64).min(2.0 * cfg.k * cfg.t_min * cfg.t_min * theta);
    let c_hi = (3.0f64).max(6.0 * cfg.k * cfg.t_max * cfg.t_max * lips);
    Ok(Case2Lyapunov { value, lower: c_lo * d2, upper: c_hi * d2 })
}
