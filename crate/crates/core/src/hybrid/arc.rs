use serde::{Deserialize, Serialize};

use super::solve::SolveStatus;

/// Flow samples recorded while the jump counter equals `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub j: usize,
    pub times: Vec<f64>,
    /// Row-major states, `times.len() * dim` entries.
    pub states: Vec<f64>,
}

impl Segment {
    pub(crate) fn new(j: usize) -> Self {
        Self { j, times: Vec::new(), states: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize, dim: usize) -> &[f64] {
        &self.states[i * dim..(i + 1) * dim]
    }

    pub fn first_time(&self) -> Option<f64> {
        self.times.first().copied()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    pub(crate) fn push(&mut self, t: f64, x: &[f64]) {
        self.times.push(t);
        self.states.extend_from_slice(x);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub t: f64,
    /// Jump count before the jump.
    pub j: usize,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

/// A solution sampled on a hybrid time domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridArc {
    pub dim: usize,
    pub segments: Vec<Segment>,
    pub jumps: Vec<JumpRecord>,
    pub status: SolveStatus,
}

/// A violated [`HybridArc`] invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum ArcDefect {
    EmptySegment { j: usize },
    SegmentIndex { position: usize, j: usize },
    NonIncreasingTime { j: usize, index: usize },
    NegativeTime,
    StateLength { j: usize },
    JumpCount { segments: usize, jumps: usize },
    JumpTime { k: usize },
    JumpContinuity { k: usize },
}

impl HybridArc {
    pub(crate) fn new(dim: usize, status: SolveStatus) -> Self {
        Self { dim, segments: vec![Segment::new(0)], jumps: Vec::new(), status }
    }

    /// Builds a single-segment arc from uniformly structured samples.
    pub fn from_samples(dim: usize, samples: impl IntoIterator<Item = (f64, Vec<f64>)>) -> Self {
        let mut arc = Self::new(dim, SolveStatus::Horizon);
        for (t, x) in samples {
            assert_eq!(x.len(), dim, "sample dimension mismatch");
            arc.segments[0].push(t, &x);
        }
        arc
    }

    pub fn jump_count(&self) -> usize {
        self.jumps.len()
    }

    pub fn sample_count(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_count() == 0
    }

    /// Every recorded sample as `(t, j, state)`, in hybrid-time order.
    pub fn samples(&self) -> impl Iterator<Item = (f64, usize, &[f64])> + '_ {
        self.segments.iter().flat_map(move |seg| {
            seg.times
                .iter()
                .enumerate()
                .map(move |(i, &t)| (t, seg.j, seg.state(i, self.dim)))
        })
    }

    pub fn initial_state(&self) -> Option<&[f64]> {
        self.segments.first().filter(|s| !s.is_empty()).map(|s| s.state(0, self.dim))
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.segments
            .iter()
            .rev()
            .find(|s| !s.is_empty())
            .map(|s| s.state(s.len() - 1, self.dim))
    }

    pub fn final_time(&self) -> Option<HybridTime> {
        self.segments
            .iter()
            .rev()
            .find(|s| !s.is_empty())
            .map(|s| HybridTime { t: s.times[s.len() - 1], j: s.j })
    }

    pub fn jump_times(&self) -> Vec<f64> {
        self.jumps.iter().map(|r| r.t).collect()
    }

    pub fn inter_jump_times(&self) -> Vec<f64> {
        inter_jump_times(self)
    }

    /// The arc restricted to the given state components.
    pub fn project(&self, components: &[usize]) -> HybridArc {
        let pick = |x: &[f64]| components.iter().map(|&c| x[c]).collect::<Vec<_>>();
        HybridArc {
            dim: components.len(),
            segments: self
                .segments
                .iter()
                .map(|seg| Segment {
                    j: seg.j,
                    times: seg.times.clone(),
                    states: (0..seg.len()).flat_map(|i| pick(seg.state(i, self.dim))).collect(),
                })
                .collect(),
            jumps: self
                .jumps
                .iter()
                .map(|r| JumpRecord { t: r.t, j: r.j, before: pick(&r.before), after: pick(&r.after) })
                .collect(),
            status: self.status,
        }
    }

    /// Checks the hybrid-time-domain invariants of the arc.
    pub fn validate(&self) -> Result<(), ArcDefect> {
        if self.segments.len() != self.jumps.len() + 1 {
            return Err(ArcDefect::JumpCount { segments: self.segments.len(), jumps: self.jumps.len() });
        }
        for (position, seg) in self.segments.iter().enumerate() {
            if seg.j != position {
                return Err(ArcDefect::SegmentIndex { position, j: seg.j });
            }
            if seg.is_empty() {
                return Err(ArcDefect::EmptySegment { j: seg.j });
            }
            if seg.states.len() != seg.len() * self.dim {
                return Err(ArcDefect::StateLength { j: seg.j });
            }
            if seg.times[0] < 0.0 {
                return Err(ArcDefect::NegativeTime);
            }
            if let Some(index) = seg.times.windows(2).position(|w| !(w[1] > w[0])) {
                return Err(ArcDefect::NonIncreasingTime { j: seg.j, index: index + 1 });
            }
        }
        for (k, rec) in self.jumps.iter().enumerate() {
            let (prev, next) = (&self.segments[k], &self.segments[k + 1]);
            if rec.j != k || prev.last_time() != Some(rec.t) || next.first_time() != Some(rec.t) {
                return Err(ArcDefect::JumpTime { k });
            }
            if prev.state(prev.len() - 1, self.dim) != rec.before.as_slice()
                || next.state(0, self.dim) != rec.after.as_slice()
            {
                return Err(ArcDefect::JumpContinuity { k });
            }
        }
        Ok(())
    }
}

use super::HybridTime;

/// Differences of consecutive jump times; empty with fewer than two jumps.
pub fn inter_jump_times(arc: &HybridArc) -> Vec<f64> {
    arc.jumps.windows(2).map(|w| w[1].t - w[0].t).collect()
}

/// Smallest `ρ` for which the two arcs are `(T, J, ρ)`-close over their
/// recorded samples.
///
/// For each sample `(t, j)` of one arc with `t + j ≤ T + J` there must be a
/// sample `(s, j)` of the other arc with `|t − s| ≤ ρ` and Euclidean state
/// distance at most `ρ`, and vice versa. Returns `+∞` when some sample has no
/// counterpart with the same jump index.
pub fn closeness(a: &HybridArc, b: &HybridArc, horizon: f64, jumps: usize) -> f64 {
    assert_eq!(a.dim, b.dim, "closeness requires arcs of equal dimension");
    directed_closeness(a, b, horizon, jumps).max(directed_closeness(b, a, horizon, jumps))
}

fn directed_closeness(a: &HybridArc, b: &HybridArc, horizon: f64, jumps: usize) -> f64 {
    let bound = horizon + jumps as f64;
    let mut worst: f64 = 0.0;
    for seg in &a.segments {
        for (i, &t) in seg.times.iter().enumerate() {
            if t + seg.j as f64 > bound {
                break;
            }
            let Some(other) = b.segments.get(seg.j).filter(|s| !s.is_empty()) else {
                return f64::INFINITY;
            };
            let rho = nearest_match(t, seg.state(i, a.dim), other, b.dim);
            worst = worst.max(rho);
        }
    }
    worst
}

/// `min_s max(|t − s|, |x − y(s)|)` over the samples of one segment.
fn nearest_match(t: f64, x: &[f64], seg: &Segment, dim: usize) -> f64 {
    let dist = |k: usize| {
        let y = seg.state(k, dim);
        let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
        (t - seg.times[k]).abs().max(d2.sqrt())
    };
    let start = seg.times.partition_point(|&s| s < t).min(seg.len() - 1);
    let mut best = dist(start);
    if start > 0 {
        best = best.min(dist(start - 1));
    }
    // Expand outwards while the time gap alone could still beat `best`.
    let mut k = start + 1;
    while k < seg.len() && seg.times[k] - t < best {
        best = best.min(dist(k));
        k += 1;
    }
    let mut k = start;
    while k > 0 && t - seg.times[k - 1] < best {
        best = best.min(dist(k - 1));
        k -= 1;
    }
    best
}
