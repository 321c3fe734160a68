//! Generic hybrid dynamical systems `x ∈ C: ẋ = F(x)`, `x ∈ D: x⁺ = G(x)`.
//!
//! Systems implement [`HybridSystem`] over a flat state vector. [`solve`]
//! alternates fixed-step flows and jumps and returns a [`HybridArc`] on a
//! hybrid time domain. Flow steps that leave `C` are treated as members of
//! the inflated jump set and jump from the overshoot point.

mod arc;
mod integrate;
mod solve;

pub use arc::{closeness, inter_jump_times, ArcDefect, HybridArc, JumpRecord, Segment};
pub use integrate::{integrate_flow_step, Stepper};
pub use solve::{solve, solve_observed, SolveStatus};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A point `(t, j)` of a hybrid time domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridTime {
    pub t: f64,
    pub j: usize,
}

impl HybridTime {
    pub fn new(t: f64, j: usize) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::invalid(format!("hybrid time requires t >= 0, got {t}")));
        }
        Ok(Self { t, j })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    #[default]
    Rk4,
}

/// Which solution to follow when the state is in `C ∩ D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JumpPolicy {
    /// Jump as soon as the state enters `D`.
    #[default]
    Earliest,
    /// Keep flowing while possible; jump only from outside `C`.
    Latest,
    /// Draw a threshold uniformly inside the system's jump window once per
    /// flow interval and jump when the window coordinate crosses it.
    UniformRandom,
}

/// Position of the state inside a jump window `[lo, hi]` (e.g. a timer
/// between `T_med` and `T_max`). Used by [`JumpPolicy::UniformRandom`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpWindow {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Closed-form propagation of a subset of the state over a fixed time step.
///
/// `apply` overwrites the exactly-propagated components of `to` with their
/// values one step after `from`; all other components of `to` are left alone.
pub trait ExactSubflow {
    fn apply(&self, from: &[f64], to: &mut [f64]);
}

/// Data `(C, F, D, G)` of a hybrid system over a flat state vector.
pub trait HybridSystem {
    fn dim(&self) -> usize;

    /// Writes `F(x)` into `dx`.
    fn flow_map(&self, x: &[f64], dx: &mut [f64]);

    /// Writes `G(x)` into `out`.
    fn jump_map(&self, x: &[f64], out: &mut [f64]);

    fn in_flow_set(&self, x: &[f64]) -> bool;

    fn in_jump_set(&self, x: &[f64]) -> bool;

    fn jump_window(&self, _x: &[f64]) -> Option<JumpWindow> {
        None
    }

    /// Components that the integrator should not approximate, propagated
    /// in closed form over `dt` instead.
    fn exact_subflow(&self, _dt: f64) -> Option<Box<dyn ExactSubflow + '_>> {
        None
    }
}

impl<S: HybridSystem + ?Sized> HybridSystem for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn flow_map(&self, x: &[f64], dx: &mut [f64]) {
        (**self).flow_map(x, dx)
    }
    fn jump_map(&self, x: &[f64], out: &mut [f64]) {
        (**self).jump_map(x, out)
    }
    fn in_flow_set(&self, x: &[f64]) -> bool {
        (**self).in_flow_set(x)
    }
    fn in_jump_set(&self, x: &[f64]) -> bool {
        (**self).in_jump_set(x)
    }
    fn jump_window(&self, x: &[f64]) -> Option<JumpWindow> {
        (**self).jump_window(x)
    }
    fn exact_subflow(&self, dt: f64) -> Option<Box<dyn ExactSubflow + '_>> {
        (**self).exact_subflow(dt)
    }
}

type MapFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type SetFn = Box<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// A hybrid system assembled from closures.
pub struct HybridSystemDef {
    dim: usize,
    flow: MapFn,
    jump: MapFn,
    flow_set: SetFn,
    jump_set: SetFn,
}

impl HybridSystemDef {
    /// A pure flow on `C = Rⁿ` with an empty jump set.
    pub fn flow_only(dim: usize, flow: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self {
            dim,
            flow: Box::new(flow),
            jump: Box::new(|x, out| out.copy_from_slice(x)),
            flow_set: Box::new(|_| true),
            jump_set: Box::new(|_| false),
        }
    }

    pub fn new(
        dim: usize,
        flow: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        jump: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        flow_set: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
        jump_set: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            flow: Box::new(flow),
            jump: Box::new(jump),
            flow_set: Box::new(flow_set),
            jump_set: Box::new(jump_set),
        }
    }
}

impl HybridSystem for HybridSystemDef {
    fn dim(&self) -> usize {
        self.dim
    }
    fn flow_map(&self, x: &[f64], dx: &mut [f64]) {
        (self.flow)(x, dx)
    }
    fn jump_map(&self, x: &[f64], out: &mut [f64]) {
        (self.jump)(x, out)
    }
    fn in_flow_set(&self, x: &[f64]) -> bool {
        (self.flow_set)(x)
    }
    fn in_jump_set(&self, x: &[f64]) -> bool {
        (self.jump_set)(x)
    }
}

/// Numerical settings for [`solve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSpec {
    /// Step size in seconds.
    pub h: f64,
    /// Horizon in seconds.
    pub t_max: f64,
    /// Jump budget.
    #[serde(default = "unbounded")]
    pub j_max: usize,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub jump_policy: JumpPolicy,
    #[serde(default)]
    pub seed: u64,
    /// Keep every `record_stride`-th flow sample in the returned arc.
    /// Segment endpoints and jumps are always kept.
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

fn unbounded() -> usize {
    usize::MAX
}

fn default_stride() -> usize {
    1
}

impl SolveSpec {
    pub fn new(h: f64, t_max: f64) -> Self {
        Self {
            h,
            t_max,
            j_max: usize::MAX,
            method: Method::Rk4,
            jump_policy: JumpPolicy::Earliest,
            seed: 0,
            record_stride: 1,
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_policy(mut self, policy: JumpPolicy) -> Self {
        self.jump_policy = policy;
        self
    }

    pub fn with_jump_budget(mut self, j_max: usize) -> Self {
        self.j_max = j_max;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::invalid(format!("step size h > 0 required, got {}", self.h)));
        }
        if !(self.t_max > 0.0) || !self.t_max.is_finite() {
            return Err(Error::invalid(format!("horizon t_max > 0 required, got {}", self.t_max)));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid("record_stride >= 1 required"));
        }
        Ok(())
    }

    /// Number of flow steps that fit in the horizon.
    pub(crate) fn step_budget(&self) -> u64 {
        (self.t_max / self.h - 1e-9).ceil().max(0.0) as u64
    }
}
