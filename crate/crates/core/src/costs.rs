//! Cost functions, constraint data and benchmark problems.
//!
//! Algorithms only ever see the zero-order oracle through [`probe`].
//! Gradients and Hessians are optional and exist for average-system and
//! Lyapunov checks.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type HessFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// A cost `φ: Rⁿ → R` with optional derivative oracles and constants.
#[derive(Clone)]
pub struct CostProblem {
    pub name: String,
    pub n: usize,
    phi: ScalarFn,
    grad: Option<GradFn>,
    hess: Option<HessFn>,
    pub phi_star: Option<f64>,
    pub minimizer: Option<Vec<f64>>,
    /// Strong convexity modulus.
    pub theta: Option<f64>,
    /// Gradient Lipschitz constant.
    pub lips: Option<f64>,
}

impl fmt::Debug for CostProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostProblem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("has_grad", &self.grad.is_some())
            .field("has_hess", &self.hess.is_some())
            .field("phi_star", &self.phi_star)
            .field("minimizer", &self.minimizer)
            .field("theta", &self.theta)
            .field("lips", &self.lips)
            .finish()
    }
}

/// Call counts of an instrumented cost.
#[derive(Debug, Default)]
pub struct OracleCounts {
    pub phi: AtomicUsize,
    pub grad: AtomicUsize,
    pub hess: AtomicUsize,
}

impl OracleCounts {
    pub fn get(&self) -> (usize, usize, usize) {
        (
            self.phi.load(Ordering::Relaxed),
            self.grad.load(Ordering::Relaxed),
            self.hess.load(Ordering::Relaxed),
        )
    }
}

impl CostProblem {
    /// A zero-order cost without derivative oracles or constants.
    pub fn new(name: impl Into<String>, n: usize, phi: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            n,
            phi: Arc::new(phi),
            grad: None,
            hess: None,
            phi_star: None,
            minimizer: None,
            theta: None,
            lips: None,
        }
    }

    pub fn with_grad(mut self, grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn with_hess(mut self, hess: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.hess = Some(Arc::new(hess));
        self
    }

    pub fn with_optimum(mut self, minimizer: Vec<f64>, phi_star: f64) -> Self {
        self.minimizer = Some(minimizer);
        self.phi_star = Some(phi_star);
        self
    }

    pub fn with_constants(mut self, theta: f64, lips: f64) -> Self {
        self.theta = Some(theta);
        self.lips = Some(lips);
        self
    }

    /// `φ(z) = ½zᵀQz + bᵀz + d` with all oracles and constants filled in.
    pub fn quadratic(name: impl Into<String>, q: DMatrix<f64>, b: DVector<f64>, d: f64) -> Result<Self> {
        let n = q.nrows();
        if q.ncols() != n || b.len() != n {
            return Err(Error::invalid("quadratic cost needs square Q and matching b"));
        }
        let q = (&q + q.transpose()) * 0.5;
        let eig = SymmetricEigen::new(q.clone());
        let theta = eig.eigenvalues.min();
        let lips = eig.eigenvalues.max();
        if !(theta > 0.0) {
            return Err(Error::invalid("quadratic cost needs a positive definite Q"));
        }
        let chol = q.clone().cholesky().ok_or_else(|| Error::invalid("Q is not positive definite"))?;
        let qinv_b = chol.solve(&b);
        let minimizer = (-&qinv_b).as_slice().to_vec();
        let phi_star = d - 0.5 * b.dot(&qinv_b);

        let rows: Arc<Vec<f64>> = Arc::new(q.transpose().as_slice().to_vec());
        let lin: Arc<Vec<f64>> = Arc::new(b.as_slice().to_vec());
        let (qp, bp) = (rows.clone(), lin.clone());
        let qh = q;
        // Row-major loops keep the oracles allocation-free.
        Ok(Self::new(name, n, move |z| {
            let mut v = d;
            for i in 0..n {
                let row = &qp[i * n..(i + 1) * n];
                let qz: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
                v += z[i] * (0.5 * qz + bp[i]);
            }
            v
        })
        .with_grad(move |z, g| {
            for i in 0..n {
                let row = &rows[i * n..(i + 1) * n];
                g[i] = row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + lin[i];
            }
        })
        .with_hess(move |_| qh.clone())
        .with_optimum(minimizer, phi_star)
        .with_constants(theta, lips))
    }

    pub fn phi(&self, z: &[f64]) -> f64 {
        (self.phi)(z)
    }

    pub fn has_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn has_hess(&self) -> bool {
        self.hess.is_some()
    }

    pub fn grad_into(&self, z: &[f64], g: &mut [f64]) -> Result<()> {
        let grad = self
            .grad
            .as_ref()
            .ok_or_else(|| Error::OracleUnavailable(format!("gradient of '{}'", self.name)))?;
        grad(z, g);
        Ok(())
    }

    pub fn grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.n];
        self.grad_into(z, &mut g)?;
        Ok(g)
    }

    pub fn hess(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let hess = self
            .hess
            .as_ref()
            .ok_or_else(|| Error::OracleUnavailable(format!("Hessian of '{}'", self.name)))?;
        Ok(hess(z))
    }

    pub(crate) fn require_optimum(&self) -> Result<(&[f64], f64)> {
        match (&self.minimizer, self.phi_star) {
            (Some(m), Some(p)) => Ok((m.as_slice(), p)),
            _ => Err(Error::OracleUnavailable(format!("minimizer and optimal value of '{}'", self.name))),
        }
    }

    pub(crate) fn require_constants(&self) -> Result<(f64, f64)> {
        match (self.theta, self.lips) {
            (Some(t), Some(l)) => Ok((t, l)),
            _ => Err(Error::OracleUnavailable(format!("theta and L of '{}'", self.name))),
        }
    }

    /// A copy whose oracles count their calls.
    pub fn instrumented(&self) -> (Self, Arc<OracleCounts>) {
        let counts = Arc::new(OracleCounts::default());
        let mut out = self.clone();
        let (c, phi) = (counts.clone(), self.phi.clone());
        out.phi = Arc::new(move |z| {
            c.phi.fetch_add(1, Ordering::Relaxed);
            phi(z)
        });
        if let Some(grad) = self.grad.clone() {
            let c = counts.clone();
            out.grad = Some(Arc::new(move |z, g| {
                c.grad.fetch_add(1, Ordering::Relaxed);
                grad(z, g)
            }));
        }
        if let Some(hess) = self.hess.clone() {
            let c = counts.clone();
            out.hess = Some(Arc::new(move |z| {
                c.hess.fetch_add(1, Ordering::Relaxed);
                hess(z)
            }));
        }
        (out, counts)
    }

    /// Validates the stored constants and, when a gradient oracle exists,
    /// compares it against central differences at `samples` random points in
    /// a unit box around the minimizer (or the origin).
    pub fn validate(&self, seed: u64, samples: usize) -> Result<()> {
        if let (Some(t), Some(l)) = (self.theta, self.lips) {
            if !(t > 0.0 && t <= l) {
                return Err(Error::invalid(format!("constants must satisfy 0 < theta <= L, got {t}, {l}")));
            }
        }
        let Some(grad) = &self.grad else {
            return Ok(());
        };
        let center = self.minimizer.clone().unwrap_or_else(|| vec![0.0; self.n]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = vec![0.0; self.n];
        let step = 1e-5;
        for _ in 0..samples {
            let z: Vec<f64> = center.iter().map(|c| c + rng.random_range(-1.0..=1.0)).collect();
            grad(&z, &mut g);
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut zp = z.clone();
            let mut err2 = 0.0;
            for i in 0..self.n {
                zp[i] = z[i] + step;
                let up = self.phi(&zp);
                zp[i] = z[i] - step;
                let down = self.phi(&zp);
                zp[i] = z[i];
                let fd = (up - down) / (2.0 * step);
                err2 += (fd - g[i]) * (fd - g[i]);
            }
            if err2.sqrt() > 1e-4 * (1.0 + gnorm) {
                return Err(Error::invalid(format!(
                    "gradient of '{}' disagrees with central differences at {z:?}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// `φ(x1 + a μ̃)`, the only cost access of the extremum seeking flows.
pub fn probe(cost: &CostProblem, x1: &[f64], mu_probe: &[f64], a: f64) -> f64 {
    let z: SmallVec<[f64; 16]> = x1.iter().zip(mu_probe).map(|(x, m)| x + a * m).collect();
    cost.phi(&z)
}

/// Linear constraint data `A ∈ R^{m×n}`, `b ∈ Rᵐ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintData {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl ConstraintData {
    /// Checks dimensions and full row rank.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::config(format!("constraint matrix has {} rows but b has {}", a.nrows(), b.len())));
        }
        if a.nrows() == 0 || a.nrows() > a.ncols() {
            return Err(Error::config("constraint matrix A must be full row rank"));
        }
        let sv = a.clone().svd(false, false).singular_values;
        let smax = sv.max();
        if sv.iter().any(|s| *s <= 1e-10 * smax.max(1.0)) {
            return Err(Error::config("constraint matrix A must be full row rank"));
        }
        Ok(Self { a, b })
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    /// Extreme eigenvalues of `AAᵀ`.
    pub fn aat_spectrum(&self) -> (f64, f64) {
        let e = SymmetricEigen::new(&self.a * self.a.transpose()).eigenvalues;
        (e.min(), e.max())
    }

    /// Rejects `A` whose `AAᵀ` spectrum leaves `[lo, hi]`.
    pub fn check_spectrum(&self, lo: f64, hi: f64) -> Result<()> {
        let (emin, emax) = self.aat_spectrum();
        if emin < lo || emax > hi {
            return Err(Error::config(format!(
                "eigenvalues of A Aᵀ lie in [{emin}, {emax}], outside [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// Benchmark problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    Quartic,
    Illcond2,
    Sphere2,
    Randquad10,
    Eqcon,
    Ineqcon,
}

impl Builtin {
    pub const ALL: [Builtin; 6] = [
        Builtin::Quartic,
        Builtin::Illcond2,
        Builtin::Sphere2,
        Builtin::Randquad10,
        Builtin::Eqcon,
        Builtin::Ineqcon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Quartic => "quartic",
            Builtin::Illcond2 => "illcond2",
            Builtin::Sphere2 => "sphere2",
            Builtin::Randquad10 => "randquad10",
            Builtin::Eqcon => "eqcon",
            Builtin::Ineqcon => "ineqcon",
        }
    }
}

impl FromStr for Builtin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Builtin::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown cost '{s}'")))
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Builds a benchmark problem. `seed` only affects `randquad10`.
pub fn builtin(which: Builtin, seed: u64) -> Result<(CostProblem, Option<ConstraintData>)> {
    Ok(match which {
        Builtin::Quartic => (quartic(), None),
        Builtin::Illcond2 => (
            CostProblem::quadratic("illcond2", DMatrix::from_diagonal(&DVector::from_vec(vec![0.02, 1.0])), DVector::zeros(2), 10.0)?,
            None,
        ),
        Builtin::Sphere2 => (
            CostProblem::quadratic("sphere2", DMatrix::identity(2, 2) * 0.5, DVector::zeros(2), 0.0)?,
            None,
        ),
        Builtin::Randquad10 => (randquad(10, seed)?, None),
        Builtin::Eqcon => {
            let con = ConstraintData::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_vec(vec![1.0]))?;
            let mut cost = constrained_base("eqcon")?;
            let s = kkt_equality(&cost, &con)?;
            let star = cost.phi(&s.primal);
            cost = cost.with_optimum(s.primal, star);
            (cost, Some(con))
        }
        Builtin::Ineqcon => {
            let con = ConstraintData::new(DMatrix::identity(2, 2), DVector::from_vec(vec![0.5, 0.5]))?;
            let mut cost = constrained_base("ineqcon")?;
            let s = active_set_inequality(&cost, &con)?;
            let star = cost.phi(&s.primal);
            cost = cost.with_optimum(s.primal, star);
            (cost, Some(con))
        }
    })
}

fn quartic() -> CostProblem {
    CostProblem::new("quartic", 1, |z| 0.25 * (z[0] - 1.0).powi(4))
        .with_grad(|z, g| g[0] = (z[0] - 1.0).powi(3))
        .with_hess(|z| DMatrix::from_element(1, 1, 3.0 * (z[0] - 1.0).powi(2)))
        .with_optimum(vec![1.0], 0.0)
}

/// `½(z1 − 2)² + z2²`, shared by the constrained benchmarks.
fn constrained_base(name: &str) -> Result<CostProblem> {
    CostProblem::quadratic(
        name,
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])),
        DVector::from_vec(vec![-2.0, 0.0]),
        2.0,
    )
}

/// `½zᵀQz + bᵀz + 10` with `Q = MᵀM + ½I`, `M` standard normal from `seed`
/// and `b = (1, …, n)`.
pub fn randquad(n: usize, seed: u64) -> Result<CostProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let q = m.transpose() * &m + DMatrix::identity(n, n) * 0.5;
    let b = DVector::from_fn(n, |i, _| (i + 1) as f64);
    CostProblem::quadratic(format!("randquad{n}"), q, b, 10.0)
}

/// Primal-dual pair of a constrained problem. `dual` holds the Lagrange
/// multipliers `λ` of `∇φ + Aᵀλ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Saddle {
    pub primal: Vec<f64>,
    pub dual: Vec<f64>,
}

fn quadratic_data(cost: &CostProblem) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let zero = vec![0.0; cost.n];
    Ok((cost.hess(&zero)?, DVector::from_vec(cost.grad(&zero)?)))
}

fn solve_kkt(p: &DMatrix<f64>, q: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let (n, m) = (p.nrows(), a.nrows());
    let mut k = DMatrix::<f64>::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(p);
    k.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(a);
    let mut rhs = DVector::<f64>::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-q));
    rhs.rows_mut(n, m).copy_from(b);
    let sol = k.lu().solve(&rhs)?;
    Some((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

/// Saddle point of a quadratic cost under `Az = b`, from the KKT system.
pub fn kkt_equality(cost: &CostProblem, con: &ConstraintData) -> Result<Saddle> {
    let (p, q) = quadratic_data(cost)?;
    let (z, lam) = solve_kkt(&p, &q, &con.a, &con.b).ok_or_else(|| Error::invalid("singular KKT system"))?;
    Ok(Saddle { primal: z.as_slice().to_vec(), dual: lam.as_slice().to_vec() })
}

/// Solution of a quadratic cost under `Az ≤ b` by enumerating active sets.
pub fn active_set_inequality(cost: &CostProblem, con: &ConstraintData) -> Result<Saddle> {
    let (p, q) = quadratic_data(cost)?;
    let (m, n) = (con.rows(), cost.n);
    if m > 20 {
        return Err(Error::invalid("active-set enumeration limited to 20 constraints"));
    }
    let tol = 1e-10;
    let mut best: Option<(f64, Saddle)> = None;
    for mask in 0u32..(1 << m) {
        let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let (z, lam_active) = if active.is_empty() {
            match p.clone().lu().solve(&(-&q)) {
                Some(z) => (z, DVector::zeros(0)),
                None => continue,
            }
        } else {
            let a = DMatrix::from_fn(active.len(), n, |r, c| con.a[(active[r], c)]);
            let b = DVector::from_fn(active.len(), |r, _| con.b[active[r]]);
            match solve_kkt(&p, &q, &a, &b) {
                Some(s) => s,
                None => continue,
            }
        };
        let slack = &con.a * &z - &con.b;
        if slack.iter().any(|s| *s > tol) || lam_active.iter().any(|l| *l < -tol) {
            continue;
        }
        let mut dual = vec![0.0; m];
        for (k, &i) in active.iter().enumerate() {
            dual[i] = lam_active[k].max(0.0);
        }
        let value = cost.phi(z.as_slice());
        if best.as_ref().is_none_or(|(v, _)| value < *v - tol) {
            best = Some((value, Saddle { primal: z.as_slice().to_vec(), dual }));
        }
    }
    best.map(|(_, s)| s).ok_or_else(|| Error::invalid("no feasible active set"))
}
