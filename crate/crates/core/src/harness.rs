//! Experiment orchestration: disturbance injection, baseline comparisons,
//! parameter sweeps and metric extraction.
//!
//! An [`ExperimentConfig`] names a cost, an initial condition, one or more
//! algorithm runs and the metrics to extract. Metrics are accumulated online
//! on every integration step, so long horizons never need the full arc in
//! memory. Named presets reproduce the benchmark comparisons.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use smallvec::SmallVec;

use crate::algorithms::{build, quasi_optimal_tmax, Algorithm, HaesConfig, HaesSystem, StateLayout};
use crate::costs::{active_set_inequality, builtin, kkt_equality, Builtin, ConstraintData, CostProblem};
use crate::hybrid::{solve_observed, HybridArc, SolveSpec, SolveStatus};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    Square,
    Sine,
    Constant,
    #[default]
    None,
}

/// Where a disturbance enters the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceTarget {
    /// Added to `φ(z)` inside the probe term `φ(z)μ̃`.
    #[default]
    ProbeTerm,
}

/// An additive disturbance signal `e(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub waveform: Waveform,
    #[serde(default)]
    pub amplitude: f64,
    /// Seconds; required for periodic waveforms.
    #[serde(default = "unit")]
    pub period: f64,
    /// Time shift in seconds.
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub target: DisturbanceTarget,
}

fn unit() -> f64 {
    1.0
}

impl DisturbanceSpec {
    pub fn none() -> Self {
        Self { waveform: Waveform::None, amplitude: 0.0, period: 1.0, phase: 0.0, target: DisturbanceTarget::ProbeTerm }
    }

    pub fn square(amplitude: f64, period: f64) -> Self {
        Self { waveform: Waveform::Square, amplitude, period, ..Self::none() }
    }

    pub fn sine(amplitude: f64, period: f64) -> Self {
        Self { waveform: Waveform::Sine, amplitude, period, ..Self::none() }
    }

    pub fn constant(amplitude: f64) -> Self {
        Self { waveform: Waveform::Constant, amplitude, ..Self::none() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::config(format!("disturbance amplitude >= 0 required, got {}", self.amplitude)));
        }
        if matches!(self.waveform, Waveform::Square | Waveform::Sine) && !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::config(format!("disturbance period > 0 required, got {}", self.period)));
        }
        if !self.phase.is_finite() {
            return Err(Error::config("disturbance phase must be finite"));
        }
        Ok(())
    }

    /// `e(t)`. The square wave is `+amplitude` on the first half of each period.
    pub fn value(&self, t: f64) -> f64 {
        let s = t + self.phase;
        match self.waveform {
            Waveform::Square => {
                if (s / self.period).rem_euclid(1.0) < 0.5 {
                    self.amplitude
                } else {
                    -self.amplitude
                }
            }
            Waveform::Sine => self.amplitude * (std::f64::consts::TAU * s / self.period).sin(),
            Waveform::Constant => self.amplitude,
            Waveform::None => 0.0,
        }
    }
}

/// Attaches `spec` to the probe term of `system`, adding a clock state.
pub fn perturb(system: HaesSystem, spec: &DisturbanceSpec) -> Result<HaesSystem> {
    spec.validate()?;
    match spec.target {
        DisturbanceTarget::ProbeTerm => {
            let spec = *spec;
            Ok(system.with_probe_disturbance(move |t| spec.value(t)))
        }
    }
}

/// Scalar error of a state, used for every metric.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ErrorMeasure {
    /// `φ(x1) − φ*`.
    #[default]
    Subopt,
    /// `φ(z) − φ*` at the probe point.
    ProbeSubopt,
    /// `|x1 − z*|²`.
    SquaredDistance,
    /// `|x1[index] − z*[index]|`.
    ComponentAbs { index: usize },
    /// `|(x1, x2) − (z*, λ/k)|` for the primal-dual cases.
    SaddleDistance,
}

impl ErrorMeasure {
    fn name(&self) -> String {
        match self {
            ErrorMeasure::Subopt => "subopt".into(),
            ErrorMeasure::ProbeSubopt => "probe_subopt".into(),
            ErrorMeasure::SquaredDistance => "squared_distance".into(),
            ErrorMeasure::ComponentAbs { index } => format!("component_abs[{index}]"),
            ErrorMeasure::SaddleDistance => "saddle_distance".into(),
        }
    }
}

/// Start of the rate-fit window.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowStart {
    #[default]
    FirstJump,
    Time(f64),
}

/// Least-squares fit of `log(error)` against `t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    #[serde(default)]
    pub start: WindowStart,
    /// Close the window when the error first drops to this level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_below: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    #[serde(default)]
    pub measure: ErrorMeasure,
    /// Levels `ν` for `time_to`.
    #[serde(default)]
    pub thresholds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateSpec>,
    /// Report the supremum of the error over `t > sup_after`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_after: Option<f64>,
    /// Evaluate the measure on the state averaged over this many seconds,
    /// typically one common dither period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Slope of `log(error)` per second.
    pub slope: f64,
    pub intercept: f64,
    pub points: u64,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimumSource {
    Exact,
    /// Smallest cost value seen during the run.
    Empirical,
}

/// Metrics of one run, computed on every integration step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub measure: String,
    /// First time after which the error stays at or below `ν`, keyed by `ν`.
    pub time_to: BTreeMap<String, Option<f64>>,
    pub rate_fit: Option<RateFit>,
    pub sup_after: Option<f64>,
    pub jump_count: usize,
    pub jump_times: Vec<f64>,
    /// Error just before each jump.
    pub errors_at_jumps: Vec<f64>,
    pub initial_error: f64,
    pub final_error: f64,
    pub final_time: f64,
    pub final_state: Vec<f64>,
    pub phi_star: f64,
    pub phi_star_source: OptimumSource,
    /// Smallest `φ(z) − φ*` seen.
    pub min_probe_subopt: f64,
    pub status: SolveStatus,
}

fn threshold_key(nu: f64) -> String {
    format!("{nu:e}")
}

impl RunMetrics {
    pub fn time_to(&self, nu: f64) -> Option<f64> {
        self.time_to.get(&threshold_key(nu)).copied().flatten()
    }

    /// Differences of consecutive jump times.
    pub fn inter_jump_times(&self) -> Vec<f64> {
        self.jump_times.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Targets and constants needed to evaluate an [`ErrorMeasure`].
#[derive(Debug, Clone)]
struct MeasureContext {
    layout: StateLayout,
    a: f64,
    zstar: Option<Vec<f64>>,
    dual: Option<Vec<f64>>,
    phi_star: f64,
}

impl MeasureContext {
    fn error(&self, measure: &ErrorMeasure, cost: &CostProblem, x: &[f64]) -> f64 {
        let l = self.layout;
        let x1 = &x[l.x1()];
        let zs = || self.zstar.as_deref().expect("minimizer checked at setup");
        match *measure {
            ErrorMeasure::Subopt => cost.phi(x1) - self.phi_star,
            ErrorMeasure::ProbeSubopt => cost.phi(&self.probe(x)) - self.phi_star,
            ErrorMeasure::SquaredDistance => x1.iter().zip(zs()).map(|(a, b)| (a - b) * (a - b)).sum(),
            ErrorMeasure::ComponentAbs { index } => (x1[index] - zs()[index]).abs(),
            ErrorMeasure::SaddleDistance => {
                let dual = self.dual.as_deref().expect("dual target checked at setup");
                let p: f64 = x1.iter().zip(zs()).map(|(a, b)| (a - b) * (a - b)).sum();
                let d: f64 = x[l.x2()].iter().zip(dual).map(|(a, b)| (a - b) * (a - b)).sum();
                (p + d).sqrt()
            }
        }
    }

    fn probe(&self, x: &[f64]) -> SmallVec<[f64; 16]> {
        let l = self.layout;
        x[l.x1()].iter().zip(x[l.mu()].iter().step_by(2)).map(|(v, m)| v + self.a * m).collect()
    }
}

/// Online least squares via running means.
#[derive(Debug, Default)]
struct OnlineFit {
    n: u64,
    mean_t: f64,
    mean_y: f64,
    m2_t: f64,
    c_ty: f64,
    t_start: f64,
    t_end: f64,
}

impl OnlineFit {
    fn push(&mut self, t: f64, y: f64) {
        if self.n == 0 {
            self.t_start = t;
        }
        self.t_end = t;
        self.n += 1;
        let n = self.n as f64;
        let dt = t - self.mean_t;
        self.mean_t += dt / n;
        self.mean_y += (y - self.mean_y) / n;
        self.m2_t += dt * (t - self.mean_t);
        self.c_ty += dt * (y - self.mean_y);
    }

    fn result(&self) -> Option<RateFit> {
        (self.n >= 2 && self.m2_t > 0.0).then(|| {
            let slope = self.c_ty / self.m2_t;
            RateFit {
                slope,
                intercept: self.mean_y - slope * self.mean_t,
                points: self.n,
                t_start: self.t_start,
                t_end: self.t_end,
            }
        })
    }
}

#[derive(Debug, PartialEq, Eq)]
enum FitPhase {
    Waiting,
    Active,
    Done,
}

/// Moving average of the state over a fixed time window.
struct Smoother {
    window: f64,
    buf: VecDeque<(f64, Vec<f64>)>,
    sum: Vec<f64>,
    mean: Vec<f64>,
}

impl Smoother {
    fn push(&mut self, t: f64, x: &[f64]) -> &[f64] {
        if self.sum.len() != x.len() {
            self.sum = vec![0.0; x.len()];
            self.mean = vec![0.0; x.len()];
        }
        for (s, v) in self.sum.iter_mut().zip(x) {
            *s += v;
        }
        self.buf.push_back((t, x.to_vec()));
        while let Some((t0, _)) = self.buf.front() {
            if *t0 >= t - self.window {
                break;
            }
            let (_, old) = self.buf.pop_front().expect("nonempty");
            for (s, v) in self.sum.iter_mut().zip(&old) {
                *s -= v;
            }
        }
        let n = self.buf.len() as f64;
        for (m, s) in self.mean.iter_mut().zip(&self.sum) {
            *m = s / n;
        }
        &self.mean
    }
}

struct Accumulator<'a> {
    spec: &'a MetricsSpec,
    ctx: &'a MeasureContext,
    cost: &'a CostProblem,
    time_to: Vec<(f64, Option<f64>)>,
    fit: OnlineFit,
    phase: FitPhase,
    sup: f64,
    last_j: usize,
    first_jump: Option<f64>,
    jump_times: Vec<f64>,
    errors_at_jumps: Vec<f64>,
    initial_error: Option<f64>,
    last_error: f64,
    last_t: f64,
    last_state: Vec<f64>,
    min_probe: f64,
    smoother: Option<Smoother>,
}

impl<'a> Accumulator<'a> {
    fn new(spec: &'a MetricsSpec, ctx: &'a MeasureContext, cost: &'a CostProblem) -> Self {
        Self {
            spec,
            ctx,
            cost,
            time_to: spec.thresholds.iter().map(|&nu| (nu, None)).collect(),
            fit: OnlineFit::default(),
            phase: if spec.rate.is_some() { FitPhase::Waiting } else { FitPhase::Done },
            sup: f64::NEG_INFINITY,
            last_j: 0,
            first_jump: None,
            jump_times: Vec::new(),
            errors_at_jumps: Vec::new(),
            initial_error: None,
            last_error: f64::NAN,
            last_t: 0.0,
            last_state: Vec::new(),
            min_probe: f64::INFINITY,
            smoother: spec.smoothing.filter(|w| *w > 0.0).map(|window| Smoother {
                window,
                buf: VecDeque::new(),
                sum: Vec::new(),
                mean: Vec::new(),
            }),
        }
    }

    fn observe(&mut self, t: f64, j: usize, x: &[f64]) {
        if j != self.last_j {
            self.jump_times.push(t);
            self.errors_at_jumps.push(self.last_error);
            self.first_jump.get_or_insert(t);
            self.last_j = j;
        }
        let probe = self.cost.phi(&self.ctx.probe(x)) - self.ctx.phi_star;
        self.min_probe = self.min_probe.min(probe);
        let e = match self.smoother.as_mut() {
            Some(s) => {
                let xs = s.push(t, x);
                self.ctx.error(&self.spec.measure, self.cost, xs)
            }
            None => self.ctx.error(&self.spec.measure, self.cost, x),
        };
        self.initial_error.get_or_insert(e);
        for (nu, hit) in &mut self.time_to {
            if e > *nu {
                *hit = None;
            } else if hit.is_none() {
                *hit = Some(t);
            }
        }
        if let Some(t0) = self.spec.sup_after {
            if t > t0 {
                self.sup = self.sup.max(e);
            }
        }
        if let Some(rate) = &self.spec.rate {
            if self.phase == FitPhase::Waiting {
                let started = match rate.start {
                    WindowStart::FirstJump => self.first_jump.is_some(),
                    WindowStart::Time(t0) => t >= t0,
                };
                if started {
                    self.phase = FitPhase::Active;
                }
            }
            if self.phase == FitPhase::Active {
                let past_end = rate.end_time.is_some_and(|te| t > te);
                let reached = rate.stop_below.is_some_and(|nu| e <= nu);
                if past_end || reached {
                    self.phase = FitPhase::Done;
                } else if e > 0.0 {
                    self.fit.push(t, e.ln());
                }
            }
        }
        self.last_error = e;
        self.last_t = t;
        if self.last_state.len() != x.len() {
            self.last_state = x.to_vec();
        } else {
            self.last_state.copy_from_slice(x);
        }
    }

    fn finish(self, status: SolveStatus, source: OptimumSource) -> RunMetrics {
        RunMetrics {
            measure: self.spec.measure.name(),
            time_to: self.time_to.iter().map(|(nu, hit)| (threshold_key(*nu), *hit)).collect(),
            rate_fit: self.fit.result(),
            sup_after: self.spec.sup_after.map(|_| self.sup.max(0.0)),
            jump_count: self.jump_times.len(),
            jump_times: self.jump_times,
            errors_at_jumps: self.errors_at_jumps,
            initial_error: self.initial_error.unwrap_or(f64::NAN),
            final_error: self.last_error,
            final_time: self.last_t,
            final_state: self.last_state,
            phi_star: self.ctx.phi_star,
            phi_star_source: source,
            min_probe_subopt: self.min_probe,
            status,
        }
    }
}

/// Cost selection by builtin name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub name: Builtin,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub x1: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x2: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

/// One algorithm run. `algorithm` is a [`HaesConfig`] document in which
/// `k` may be `"half_inverse_lipschitz"` (`1/(2L)`), `T_max` may be
/// `"quasi_optimal"` and `T_med` may be `"T_max"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub label: String,
    pub algorithm: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub cost: CostSpec,
    pub initial: InitialSpec,
    pub runs: Vec<RunSpec>,
    pub solve: SolveSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<DisturbanceSpec>,
    #[serde(default)]
    pub metrics: MetricsSpec,
    /// Keep the strided arcs in the result.
    #[serde(default = "yes")]
    pub keep_arcs: bool,
}

fn yes() -> bool {
    true
}

/// Fully resolved algorithm settings of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRun {
    pub label: String,
    pub config: HaesConfig,
}

fn resolve_algorithm(spec: &Value, cost: &CostProblem) -> Result<HaesConfig> {
    let mut v = spec.clone();
    let obj = v.as_object_mut().ok_or_else(|| Error::config("algorithm must be a JSON object"))?;
    let lips = || cost.lips.ok_or_else(|| Error::config(format!("rule needs L of '{}'", cost.name)));
    let theta = || cost.theta.ok_or_else(|| Error::config(format!("rule needs theta of '{}'", cost.name)));
    for key in ["k", "k2"] {
        match obj.get(key) {
            Some(Value::String(s)) if s == "half_inverse_lipschitz" => {
                obj.insert(key.into(), json!(1.0 / (2.0 * lips()?)));
            }
            Some(Value::String(s)) => return Err(Error::config(format!("unknown rule '{s}' for {key}"))),
            _ => {}
        }
    }
    match obj.get("T_max") {
        Some(Value::String(s)) if s == "quasi_optimal" => {
            let k = obj.get("k").and_then(Value::as_f64).unwrap_or(1.0);
            let t_min = obj.get("T_min").and_then(Value::as_f64).unwrap_or(0.01);
            obj.insert("T_max".into(), json!(quasi_optimal_tmax(k, theta()?, t_min)?));
        }
        Some(Value::String(s)) => return Err(Error::config(format!("unknown rule '{s}' for T_max"))),
        _ => {}
    }
    match obj.get("T_med") {
        Some(Value::String(s)) if s == "T_max" => {
            let t_max = obj.get("T_max").cloned().unwrap_or(json!(25.0));
            obj.insert("T_med".into(), t_max);
        }
        Some(Value::String(s)) => return Err(Error::config(format!("unknown rule '{s}' for T_med"))),
        _ => {}
    }
    serde_json::from_value(v).map_err(|e| Error::config(format!("algorithm config: {e}")))
}

/// RFC 7386 merge patch.
fn merge_patch(target: &mut Value, patch: &Value) {
    match patch {
        Value::Object(p) => {
            if !target.is_object() {
                *target = Value::Object(Default::default());
            }
            let t = target.as_object_mut().expect("object");
            for (k, v) in p {
                if v.is_null() {
                    t.remove(k);
                } else {
                    merge_patch(t.entry(k.clone()).or_insert(Value::Null), v);
                }
            }
        }
        other => *target = other.clone(),
    }
}

impl ExperimentConfig {
    /// Applies a JSON merge patch. An object under `runs` is keyed by run
    /// label and patches the matching run's `algorithm`; an array replaces
    /// all runs.
    pub fn with_overrides(&self, overrides: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(self).map_err(|e| Error::config(e.to_string()))?;
        let mut patch = overrides.clone();
        if let Some(obj) = patch.as_object_mut() {
            if let Some(Value::Object(per_run)) = obj.get("runs").cloned() {
                obj.remove("runs");
                let runs = base["runs"].as_array_mut().expect("runs array");
                for (label, p) in per_run {
                    let run = runs
                        .iter_mut()
                        .find(|r| r["label"] == Value::String(label.clone()))
                        .ok_or_else(|| Error::config(format!("override names unknown run '{label}'")))?;
                    merge_patch(&mut run["algorithm"], &p);
                }
            }
        }
        merge_patch(&mut base, &patch);
        serde_json::from_value(base).map_err(|e| Error::config(format!("config: {e}")))
    }

    fn problem(&self) -> Result<(CostProblem, Option<ConstraintData>)> {
        builtin(self.cost.name, self.cost.seed)
    }

    /// Resolves the tuning rules of every run and validates them against
    /// the cost.
    pub fn resolve(&self) -> Result<Vec<ResolvedRun>> {
        let (cost, con) = self.problem()?;
        self.solve.validate().map_err(|e| Error::config(e.to_string()))?;
        if let Some(d) = &self.disturbance {
            d.validate()?;
        }
        if self.runs.is_empty() {
            return Err(Error::config("experiment needs at least one run"));
        }
        if self.initial.x1.len() != cost.n {
            return Err(Error::config(format!("initial x1 has length {}, cost dimension is {}", self.initial.x1.len(), cost.n)));
        }
        self.runs
            .iter()
            .map(|r| {
                let config = resolve_algorithm(&r.algorithm, &cost)?;
                let rows = if config.case.is_constrained() { con.as_ref().map(ConstraintData::rows) } else { None };
                config.validate(cost.n, rows)?;
                Ok(ResolvedRun { label: r.label.clone(), config })
            })
            .collect()
    }

    /// The configuration with every rule replaced by its value.
    pub fn manifest(&self) -> Result<Value> {
        let resolved = self.resolve()?;
        let mut v = serde_json::to_value(self).map_err(|e| Error::config(e.to_string()))?;
        for (slot, run) in v["runs"].as_array_mut().expect("runs array").iter_mut().zip(&resolved) {
            slot["algorithm"] = serde_json::to_value(&run.config).map_err(|e| Error::config(e.to_string()))?;
        }
        Ok(v)
    }
}

/// A finished run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub label: String,
    pub config: HaesConfig,
    pub layout: StateLayout,
    pub metrics: RunMetrics,
    /// Strided arc, when requested.
    pub arc: Option<HybridArc>,
    cost: CostProblem,
}

/// One trajectory sample with derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow<'a> {
    pub t: f64,
    pub j: usize,
    pub tau: f64,
    pub x1: &'a [f64],
    pub x2: &'a [f64],
    pub mu: &'a [f64],
    pub z: Vec<f64>,
    pub phi: f64,
    pub subopt: f64,
}

impl RunResult {
    pub fn cost(&self) -> &CostProblem {
        &self.cost
    }

    /// Samples of the stored arc; empty when arcs were not kept.
    pub fn rows(&self) -> impl Iterator<Item = TrajectoryRow<'_>> + '_ {
        let l = self.layout;
        let a = self.config.a;
        let phi_star = self.metrics.phi_star;
        self.arc.iter().flat_map(move |arc| {
            arc.samples().map(move |(t, j, x)| {
                let mu = &x[l.mu()];
                let z: Vec<f64> = x[l.x1()].iter().zip(mu.iter().step_by(2)).map(|(v, m)| v + a * m).collect();
                let phi = self.cost.phi(&z);
                TrajectoryRow { t, j, tau: x[l.tau()], x1: &x[l.x1()], x2: &x[l.x2()], mu, z, phi, subopt: phi - phi_star }
            })
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub name: String,
    pub manifest: Value,
    pub runs: Vec<RunResult>,
}

impl ExperimentResult {
    pub fn run(&self, label: &str) -> Option<&RunResult> {
        self.runs.iter().find(|r| r.label == label)
    }
}

fn derive_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 step
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run_one(cfg: &ExperimentConfig, index: usize, run: &ResolvedRun, cost: &CostProblem, con: Option<&ConstraintData>) -> Result<RunResult> {
    let mut system = build(&run.config, cost, con)?;
    if let Some(d) = &cfg.disturbance {
        system = perturb(system, d)?;
    }
    let layout = system.layout();
    let x0 = system.initial_state(&cfg.initial.x1, cfg.initial.x2.as_deref(), cfg.initial.tau)?;
    let mut spec = cfg.solve.clone().with_policy(run.config.jump_policy).with_seed(derive_seed(cfg.solve.seed, index));
    let needs_target = !matches!(cfg.metrics.measure, ErrorMeasure::Subopt | ErrorMeasure::ProbeSubopt);
    if needs_target && cost.minimizer.is_none() {
        return Err(Error::OracleUnavailable(format!("minimizer of '{}'", cost.name)));
    }
    if let ErrorMeasure::ComponentAbs { index } = cfg.metrics.measure {
        if index >= cost.n {
            return Err(Error::config(format!("component index {index} out of range")));
        }
    }
    let dual = match (cfg.metrics.measure, run.config.case, con) {
        (ErrorMeasure::SaddleDistance, Algorithm::Case3, Some(c)) => Some(kkt_equality(cost, c)?.dual),
        (ErrorMeasure::SaddleDistance, Algorithm::Case4, Some(c)) => Some(active_set_inequality(cost, c)?.dual),
        (ErrorMeasure::SaddleDistance, _, _) => {
            return Err(Error::config("saddle_distance needs a constrained case"));
        }
        _ => None,
    }
    .map(|d| d.into_iter().map(|l| l / run.config.k).collect());

    let (phi_star, source) = match cost.phi_star {
        Some(p) => (p, OptimumSource::Exact),
        None => {
            let mut best = f64::INFINITY;
            let probe_spec = spec.clone().with_stride(usize::MAX);
            solve_observed(&system, &x0, &probe_spec, |_, _, x| best = best.min(cost.phi(&system.probe_point(x))))?;
            (best, OptimumSource::Empirical)
        }
    };
    let ctx = MeasureContext { layout, a: run.config.a, zstar: cost.minimizer.clone(), dual, phi_star };
    if !cfg.keep_arcs {
        spec = spec.with_stride(usize::MAX);
    }
    let mut acc = Accumulator::new(&cfg.metrics, &ctx, cost);
    let arc = solve_observed(&system, &x0, &spec, |t, j, x| acc.observe(t, j, x))?;
    let metrics = acc.finish(arc.status, source);
    log::info!("{}: {} jumps, final error {:e}", run.label, metrics.jump_count, metrics.final_error);
    Ok(RunResult {
        label: run.label.clone(),
        config: run.config.clone(),
        layout,
        metrics,
        arc: cfg.keep_arcs.then_some(arc),
        cost: cost.clone(),
    })
}

/// Runs every configured algorithm, in parallel.
pub fn run_config(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let resolved = cfg.resolve()?;
    let manifest = cfg.manifest()?;
    let (cost, con) = cfg.problem()?;
    let runs = resolved
        .par_iter()
        .enumerate()
        .map(|(i, r)| run_one(cfg, i, r, &cost, con.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult { name: cfg.name.clone(), manifest, runs })
}

/// Runs a named preset with a JSON merge patch applied.
pub fn run_experiment(name: Preset, overrides: &Value) -> Result<ExperimentResult> {
    run_config(&preset(name).with_overrides(overrides)?)
}

/// Parameter varied by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "T_max")]
    TMax,
    #[serde(rename = "T_med")]
    TMed,
    #[serde(rename = "k")]
    K,
    #[serde(rename = "a")]
    A,
    #[serde(rename = "epsilon")]
    Epsilon,
}

impl SweepParam {
    fn key(self) -> &'static str {
        match self {
            SweepParam::TMax => "T_max",
            SweepParam::TMed => "T_med",
            SweepParam::K => "k",
            SweepParam::A => "a",
            SweepParam::Epsilon => "epsilon",
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [SweepParam::TMax, SweepParam::TMed, SweepParam::K, SweepParam::A, SweepParam::Epsilon]
            .into_iter()
            .find(|p| p.key() == s)
            .ok_or_else(|| Error::invalid(format!("unknown sweep parameter '{s}'")))
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    /// Metrics per run label.
    pub runs: BTreeMap<String, RunMetrics>,
}

/// Sets `param` to `value` in every run that uses it.
///
/// `T_max` also moves `T_med` for momentum restarting, and clamps `T_med`
/// to the new `T_max` for timer restarting. `T_med` and `T_max` leave runs
/// without a timer untouched.
fn apply_param(cfg: &mut ExperimentConfig, param: SweepParam, value: f64) {
    for run in &mut cfg.runs {
        let alg = &mut run.algorithm;
        let case = alg.get("case").and_then(Value::as_str).unwrap_or("").to_string();
        let timed = case == "case1" || case == "case2";
        match param {
            SweepParam::TMax if timed => {
                alg["T_max"] = json!(value);
                if case == "case2" || alg.get("T_med").and_then(Value::as_f64).is_none_or(|m| m > value) {
                    alg["T_med"] = json!(value);
                }
            }
            SweepParam::TMed if timed => alg["T_med"] = json!(value),
            SweepParam::TMax | SweepParam::TMed => {}
            other => alg[other.key()] = json!(value),
        }
    }
}

/// One experiment per value, in parallel; arcs are not kept.
pub fn sweep(param: SweepParam, values: &[f64], base: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    values
        .par_iter()
        .map(|&value| {
            let mut cfg = base.clone();
            cfg.keep_arcs = false;
            apply_param(&mut cfg, param, value);
            let res = run_config(&cfg)?;
            Ok(SweepRow { value, runs: res.runs.into_iter().map(|r| (r.label, r.metrics)).collect() })
        })
        .collect()
}

/// Named experiment presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    QuarticComparison,
    Robustness,
    RobustnessNorestart,
    IllcondComparison,
    RandquadRate,
    SphereRestart,
    Eqcon,
    Ineqcon,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::QuarticComparison,
        Preset::Robustness,
        Preset::RobustnessNorestart,
        Preset::IllcondComparison,
        Preset::RandquadRate,
        Preset::SphereRestart,
        Preset::Eqcon,
        Preset::Ineqcon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::QuarticComparison => "quartic-comparison",
            Preset::Robustness => "robustness",
            Preset::RobustnessNorestart => "robustness-norestart",
            Preset::IllcondComparison => "illcond-comparison",
            Preset::RandquadRate => "randquad-rate",
            Preset::SphereRestart => "sphere-restart",
            Preset::Eqcon => "eqcon",
            Preset::Ineqcon => "ineqcon",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown experiment '{s}'")))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn quartic_haes(t_med: f64, t_max: f64) -> Value {
    json!({"case": "case1", "a": 0.01, "epsilon": 0.02, "k1": 0.0, "k2": 1.0,
           "T_min": 0.01, "T_med": t_med, "T_max": t_max, "F_tau": 0.5, "kappas": ["127/50"]})
}

/// The configuration of a preset.
pub fn preset(name: Preset) -> ExperimentConfig {
    let v = match name {
        Preset::QuarticComparison => json!({
            "name": name.name(),
            "cost": {"name": "quartic"},
            "initial": {"x1": [2.0], "x2": [2.0], "tau": 0.01},
            "runs": [
                {"label": "haes", "algorithm": quartic_haes(25.0, 25.0)},
                {"label": "grad_es", "algorithm": {"case": "grad_es", "a": 0.01, "epsilon": 0.02, "k": 1.0, "kappas": ["127/50"]}}
            ],
            "solve": {"h": 1e-3, "t_max": 2000.0, "record_stride": 100},
            "metrics": {"measure": {"kind": "squared_distance"}, "thresholds": [1e-2, 2.5e-4]}
        }),
        Preset::Robustness | Preset::RobustnessNorestart => {
            let t = if name == Preset::Robustness { 25.0 } else { 1e5 };
            json!({
                "name": name.name(),
                "cost": {"name": "quartic"},
                "initial": {"x1": [2.0], "x2": [2.0], "tau": 0.01},
                "runs": [{"label": "haes", "algorithm": quartic_haes(t, t)}],
                "solve": {"h": 1e-3, "t_max": 5e4, "record_stride": 1000},
                "disturbance": {"waveform": "square", "amplitude": 1e-2, "period": 1e4},
                "metrics": {"measure": {"kind": "component_abs", "index": 0}, "thresholds": [0.2, 0.5], "sup_after": 100.0}
            })
        }
        Preset::IllcondComparison => json!({
            "name": name.name(),
            "cost": {"name": "illcond2"},
            "initial": {"x1": [1.0, 1.0]},
            "runs": [
                {"label": "haes", "algorithm": {"case": "case2", "a": 0.01, "epsilon": 1e-3, "k": 0.25,
                                               "T_min": 0.1, "T_med": 27.0, "T_max": 27.0}},
                {"label": "grad_es", "algorithm": {"case": "grad_es", "a": 0.01, "epsilon": 1e-3, "k": 1.0}}
            ],
            "solve": {"h": 5e-5, "t_max": 400.0, "record_stride": 2000},
            "metrics": {"measure": {"kind": "component_abs", "index": 0}, "thresholds": [0.01], "smoothing": 0.012}
        }),
        Preset::RandquadRate => {
            let zeros = vec![0.0; 10];
            json!({
            "name": name.name(),
            "cost": {"name": "randquad10", "seed": 0},
            "initial": {"x1": zeros},
            "runs": [
                {"label": "haes", "algorithm": {"case": "case2", "a": 0.01, "epsilon": 1e-3, "k": "half_inverse_lipschitz",
                                               "T_min": 0.1, "T_max": "quasi_optimal", "T_med": "T_max"}},
                {"label": "grad_es", "algorithm": {"case": "grad_es", "a": 0.01, "epsilon": 1e-3, "k": "half_inverse_lipschitz"}}
            ],
            "solve": {"h": 5e-5, "t_max": 400.0, "record_stride": 2000},
            "metrics": {"measure": {"kind": "subopt"}, "thresholds": [0.01],
                        "rate": {"start": {"time": 0.0}, "stop_below": 0.01}, "smoothing": 0.01}
        })
        }
        Preset::SphereRestart => json!({
            "name": name.name(),
            "cost": {"name": "sphere2"},
            "initial": {"x1": [1.0, 1.0]},
            "runs": [
                {"label": "haes", "algorithm": {"case": "case2", "a": 0.01, "epsilon": 1e-3, "k": 0.25,
                                               "T_min": 0.1, "T_max": "quasi_optimal", "T_med": "T_max"}}
            ],
            "solve": {"h": 5e-5, "t_max": 100.0, "record_stride": 1000},
            "metrics": {"measure": {"kind": "subopt"}, "thresholds": [0.01, 0.05]}
        }),
        Preset::Eqcon | Preset::Ineqcon => {
            let case = if name == Preset::Eqcon { "case3" } else { "case4" };
            json!({
                "name": name.name(),
                "cost": {"name": name.name()},
                "initial": {"x1": [0.0, 0.0]},
                "runs": [{"label": "haes", "algorithm": {"case": case, "a": 5e-3, "epsilon": 1e-3, "k": 1.0}}],
                "solve": {"h": 5e-5, "t_max": 200.0, "record_stride": 2000},
                "metrics": {"measure": {"kind": "saddle_distance"}, "thresholds": [0.05],
                            "rate": {"start": {"time": 20.0}, "end_time": 200.0}}
            })
        }
    };
    serde_json::from_value(v).expect("presets are valid configs")
}
