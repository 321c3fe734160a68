use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arc::{HybridArc, JumpRecord, Segment};
use super::integrate::{ExactPair, Stepper};
use super::{HybridSystem, JumpPolicy, SolveSpec};
use crate::{Error, Result};

/// Why a solution stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// The flow horizon was reached.
    Horizon,
    /// A jump was due but the jump budget was exhausted.
    JumpBudget,
    /// The state left `C ∪ D` and the solution cannot be continued.
    Stopped,
}

/// Consecutive jumps without flow after which a solution is declared Zeno.
const MAX_CONSECUTIVE_JUMPS: usize = 100_000;

/// Simulates `system` from `x0` and records the arc.
pub fn solve<S: HybridSystem + ?Sized>(system: &S, x0: &[f64], spec: &SolveSpec) -> Result<HybridArc> {
    solve_observed(system, x0, spec, |_, _, _| {})
}

/// Like [`solve`], additionally calling `observer(t, j, x)` on every
/// computed point regardless of `record_stride`. Jumps produce two calls,
/// one before and one after.
pub fn solve_observed<S, O>(system: &S, x0: &[f64], spec: &SolveSpec, mut observer: O) -> Result<HybridArc>
where
    S: HybridSystem + ?Sized,
    O: FnMut(f64, usize, &[f64]),
{
    spec.validate()?;
    let dim = system.dim();
    if x0.len() != dim {
        return Err(Error::invalid(format!("initial state has length {}, system dimension is {dim}", x0.len())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial state must be finite"));
    }
    if !system.in_flow_set(x0) && !system.in_jump_set(x0) {
        return Err(Error::InvalidStart);
    }

    let h = spec.h;
    let budget = spec.step_budget();
    let exact = match (system.exact_subflow(0.5 * h), system.exact_subflow(h)) {
        (Some(half), Some(full)) => Some(ExactPair { half, full }),
        _ => None,
    };
    let flow = |x: &[f64], dx: &mut [f64]| system.flow_map(x, dx);
    let mut stepper = Stepper::new(spec.method, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut threshold: Option<f64> = None;

    let mut arc = HybridArc::new(dim, SolveStatus::Horizon);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; dim];
    let mut k: u64 = 0;
    let mut j: usize = 0;
    let mut seg_steps: usize = 0;
    let mut pending = false;
    let mut consecutive_jumps = 0usize;
    let mut overshoot = false;

    arc.segments[0].push(0.0, &x);
    observer(0.0, 0, &x);

    let status = loop {
        let t = k as f64 * h;
        let in_c = system.in_flow_set(&x);
        let in_d = system.in_jump_set(&x) || (overshoot && !in_c);
        if !in_c && !in_d {
            break SolveStatus::Stopped;
        }
        let jump = in_d
            && match spec.jump_policy {
                JumpPolicy::Earliest => true,
                JumpPolicy::Latest => !in_c,
                JumpPolicy::UniformRandom => {
                    !in_c
                        || match system.jump_window(&x) {
                            Some(w) => {
                                let thr = *threshold.get_or_insert_with(|| draw(&mut rng, w.lo, w.hi));
                                w.value >= thr
                            }
                            None => true,
                        }
                }
            };

        if jump {
            if j >= spec.j_max {
                break SolveStatus::JumpBudget;
            }
            consecutive_jumps += 1;
            if consecutive_jumps > MAX_CONSECUTIVE_JUMPS {
                log::warn!("solution stopped after {MAX_CONSECUTIVE_JUMPS} jumps without flow at t = {t}");
                break SolveStatus::Stopped;
            }
            let seg = arc.segments.last_mut().expect("arc has a segment");
            if pending {
                seg.push(t, &x);
            }
            system.jump_map(&x, &mut next);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { t });
            }
            arc.jumps.push(JumpRecord { t, j, before: x.clone(), after: next.clone() });
            j += 1;
            std::mem::swap(&mut x, &mut next);
            let mut seg = Segment::new(j);
            seg.push(t, &x);
            arc.segments.push(seg);
            observer(t, j, &x);
            seg_steps = 0;
            pending = false;
            overshoot = false;
            threshold = None;
            continue;
        }

        if k >= budget {
            break SolveStatus::Horizon;
        }
        consecutive_jumps = 0;
        stepper.step_fn(&flow, &x, h, &mut next, exact.as_ref());
        k += 1;
        let t = k as f64 * h;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { t });
        }
        // A step that leaves the flow set from inside the jump set lands in
        // the inflated jump set.
        overshoot = in_d;
        std::mem::swap(&mut x, &mut next);
        observer(t, j, &x);
        seg_steps += 1;
        if seg_steps.is_multiple_of(spec.record_stride) {
            arc.segments.last_mut().expect("arc has a segment").push(t, &x);
            pending = false;
        } else {
            pending = true;
        }
    };

    if pending {
        let t = k as f64 * h;
        arc.segments.last_mut().expect("arc has a segment").push(t, &x);
    }
    arc.status = status;
    Ok(arc)
}

fn draw(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}
