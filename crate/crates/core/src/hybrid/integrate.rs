use super::{ExactSubflow, HybridSystem, Method};
use crate::{Error, Result};

/// One fixed step of forward Euler or classical RK4 for `ẋ = F(x)`.
///
/// A diverged step reports `t = h`, the time offset at which the non-finite
/// value appeared.
pub fn integrate_flow_step(
    flow_map: impl Fn(&[f64], &mut [f64]),
    x: &[f64],
    h: f64,
    method: Method,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step size h > 0 required, got {h}")));
    }
    let mut stepper = Stepper::new(method, x.len());
    let mut out = vec![0.0; x.len()];
    stepper.step_fn(&flow_map, x, h, &mut out, None);
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::Diverged { t: h })
    }
}

/// Reusable stage buffers for fixed-step integration.
pub struct Stepper {
    method: Method,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

/// Exact propagators for the half step and the full step.
pub(crate) struct ExactPair<'a> {
    pub half: Box<dyn ExactSubflow + 'a>,
    pub full: Box<dyn ExactSubflow + 'a>,
}

impl Stepper {
    pub fn new(method: Method, dim: usize) -> Self {
        Self {
            method,
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            stage: vec![0.0; dim],
        }
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// Advances `x` by one step of the system's flow map into `out`.
    pub fn step<S: HybridSystem + ?Sized>(&mut self, system: &S, x: &[f64], h: f64, out: &mut [f64]) {
        self.step_fn(&|x: &[f64], dx: &mut [f64]| system.flow_map(x, dx), x, h, out, None);
    }

    pub(crate) fn step_fn(
        &mut self,
        flow: &dyn Fn(&[f64], &mut [f64]),
        x: &[f64],
        h: f64,
        out: &mut [f64],
        exact: Option<&ExactPair<'_>>,
    ) {
        match self.method {
            Method::Euler => {
                flow(x, &mut self.k1);
                for ((o, xi), k) in out.iter_mut().zip(x).zip(&self.k1) {
                    *o = xi + h * k;
                }
                if let Some(e) = exact {
                    e.full.apply(x, out);
                }
            }
            Method::Rk4 => {
                let half = 0.5 * h;
                flow(x, &mut self.k1);

                for ((s, xi), k) in self.stage.iter_mut().zip(x).zip(&self.k1) {
                    *s = xi + half * k;
                }
                if let Some(e) = exact {
                    e.half.apply(x, &mut self.stage);
                }
                flow(&self.stage, &mut self.k2);

                for ((s, xi), k) in self.stage.iter_mut().zip(x).zip(&self.k2) {
                    *s = xi + half * k;
                }
                if let Some(e) = exact {
                    e.half.apply(x, &mut self.stage);
                }
                flow(&self.stage, &mut self.k3);

                for ((s, xi), k) in self.stage.iter_mut().zip(x).zip(&self.k3) {
                    *s = xi + h * k;
                }
                if let Some(e) = exact {
                    e.full.apply(x, &mut self.stage);
                }
                flow(&self.stage, &mut self.k4);

                let sixth = h / 6.0;
                for i in 0..x.len() {
                    out[i] = x[i]
                        + sixth * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
                }
                if let Some(e) = exact {
                    e.full.apply(x, out);
                }
            }
        }
    }
}
