//! Sinusoidal dither on the torus `𝕋ⁿ`.
//!
//! The dither is `n` uncoupled unit oscillators. Pair `ℓ` rotates with
//! frequency `κ_ℓ / ε`, so `μ̇ = Rμ / ε` with
//! `R = blockdiag(2πκ_ℓ [[0, 1], [−1, 0]])`. Frequencies are positive
//! rationals, which makes the dither periodic and lets the common period be
//! computed exactly.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// A positive rational number in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rational {
    num: u64,
    den: u64,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Rational {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::invalid(format!("rational {num}/{den} must be positive")));
        }
        let g = gcd(num as u128, den as u128) as u64;
        Ok(Self { num: num / g, den: den / g })
    }

    pub fn integer(n: u64) -> Result<Self> {
        Self::new(n, 1)
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Exact value of the shortest decimal representation of `x`.
    pub fn from_f64(x: f64) -> Result<Self> {
        if !x.is_finite() || x <= 0.0 {
            return Err(Error::invalid(format!("frequency {x} must be a positive finite number")));
        }
        format!("{x}").parse()
    }

    fn parse_decimal(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("cannot parse '{s}' as a positive rational"));
        let (mantissa, exp) = match s.find(['e', 'E']) {
            Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
            None => (s, 0),
        };
        let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let digits: String = format!("{int}{frac}");
        let mut num: u128 = digits.parse().map_err(|_| bad())?;
        let mut den: u128 = 1;
        let shift = exp - frac.len() as i32;
        let pow = 10u128.checked_pow(shift.unsigned_abs()).ok_or_else(bad)?;
        if shift >= 0 {
            num = num.checked_mul(pow).ok_or_else(bad)?;
        } else {
            den = pow;
        }
        let g = gcd(num, den).max(1);
        let (num, den) = (num / g, den / g);
        let num = u64::try_from(num).map_err(|_| bad())?;
        let den = u64::try_from(den).map_err(|_| bad())?;
        Self::new(num, den)
    }
}

impl FromStr for Rational {
    type Err = Error;

    /// Accepts `"p/q"`, integers and decimals such as `"2.54"`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.split_once('/') {
            Some((p, q)) => {
                let bad = || Error::invalid(format!("cannot parse '{s}' as a positive rational"));
                let p = p.trim().parse::<u64>().map_err(|_| bad())?;
                let q = q.trim().parse::<u64>().map_err(|_| bad())?;
                Self::new(p, q)
            }
            None => Self::parse_decimal(s),
        }
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u64),
            Float(f64),
            Text(String),
        }
        let r = match Repr::deserialize(d)? {
            Repr::Int(n) => Rational::integer(n),
            Repr::Float(x) => Rational::from_f64(x),
            Repr::Text(s) => s.parse(),
        };
        r.map_err(serde::de::Error::custom)
    }
}

/// Frequencies and time scale of the dither.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DitherParams {
    pub kappas: Vec<Rational>,
    pub epsilon: f64,
}

impl DitherParams {
    pub fn new(kappas: Vec<Rational>, epsilon: f64) -> Result<Self> {
        let p = Self { kappas, epsilon };
        p.validate()?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.kappas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kappas.is_empty() {
            return Err(Error::config("dither needs at least one frequency"));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config(format!("epsilon > 0 required, got {}", self.epsilon)));
        }
        for (i, a) in self.kappas.iter().enumerate() {
            if let Some(b) = self.kappas[i + 1..].iter().find(|b| *b == a) {
                return Err(Error::config(format!("dither frequencies must be distinct, {b} repeats")));
            }
        }
        Ok(())
    }

    /// Rotation over `dt` seconds for every pair.
    pub fn rotation(&self, dt: f64) -> Rotation {
        Rotation {
            cs: self
                .kappas
                .iter()
                .map(|k| {
                    // Reduce the number of turns exactly where possible so long
                    // steps stay accurate.
                    let turns = (k.num as f64 * (dt / self.epsilon) / k.den as f64).rem_euclid(1.0);
                    let angle = std::f64::consts::TAU * turns;
                    (angle.cos(), angle.sin())
                })
                .collect(),
        }
    }

    /// Writes `Rμ / ε` into `dmu`.
    pub fn rhs(&self, mu: &[f64], dmu: &mut [f64]) {
        for (l, k) in self.kappas.iter().enumerate() {
            let w = std::f64::consts::TAU * k.to_f64() / self.epsilon;
            dmu[2 * l] = w * mu[2 * l + 1];
            dmu[2 * l + 1] = -w * mu[2 * l];
        }
    }
}

/// Default frequencies for an `n`-dimensional problem: `1` for `n = 1`,
/// otherwise `1 + ℓ/n` for `ℓ = 1..=n`. All ratios stay below 2.
pub fn default_kappas(n: usize) -> Vec<Rational> {
    if n == 1 {
        return vec![Rational { num: 1, den: 1 }];
    }
    (1..=n as u64)
        .map(|l| Rational::new(n as u64 + l, n as u64).expect("positive"))
        .collect()
}

/// Precomputed per-pair rotation for a fixed time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    cs: Vec<(f64, f64)>,
}

impl Rotation {
    pub fn pairs(&self) -> usize {
        self.cs.len()
    }

    /// Rotates the pairs of `from` into `to`; both hold exactly `2n` entries.
    pub fn apply(&self, from: &[f64], to: &mut [f64]) {
        for (l, &(c, s)) in self.cs.iter().enumerate() {
            let (a, b) = (from[2 * l], from[2 * l + 1]);
            to[2 * l] = c * a + s * b;
            to[2 * l + 1] = -s * a + c * b;
        }
    }
}

/// Point on `𝕋ⁿ`, stored as consecutive pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DitherState {
    pub mu: Vec<f64>,
}

impl DitherState {
    /// Every pair at `(1, 0)`.
    pub fn initial(n: usize) -> Self {
        let mut mu = vec![0.0; 2 * n];
        for l in 0..n {
            mu[2 * l] = 1.0;
        }
        Self { mu }
    }

    pub fn new(mu: Vec<f64>, tol: f64) -> Result<Self> {
        if !mu.len().is_multiple_of(2) || mu.is_empty() {
            return Err(Error::invalid("dither state needs a positive even length"));
        }
        let s = Self { mu };
        if s.max_norm_defect() > tol {
            return Err(Error::invalid("dither pairs must have unit norm"));
        }
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.mu.len() / 2
    }

    /// Largest `| |μ_pair| − 1 |` over the pairs.
    pub fn max_norm_defect(&self) -> f64 {
        pair_norm_defect(&self.mu)
    }
}

pub(crate) fn pair_norm_defect(mu: &[f64]) -> f64 {
    mu.chunks_exact(2).map(|p| (p[0].hypot(p[1]) - 1.0).abs()).fold(0.0, f64::max)
}

/// Scales every pair back onto the unit circle.
pub fn renormalize(mu: &mut [f64]) {
    for p in mu.chunks_exact_mut(2) {
        let r = p[0].hypot(p[1]);
        if r > 0.0 {
            p[0] /= r;
            p[1] /= r;
        } else {
            p[0] = 1.0;
        }
    }
}

/// Exact dither state `dt` seconds after `state`.
pub fn dither_advance(state: &DitherState, dt: f64, params: &DitherParams) -> DitherState {
    let mut mu = state.mu.clone();
    params.rotation(dt).apply(&state.mu, &mut mu);
    DitherState { mu }
}

/// The probe vector: odd entries `(μ1, μ3, …)` of the dither.
pub fn extract_probe(state: &DitherState) -> Vec<f64> {
    probe_of(&state.mu).collect()
}

pub(crate) fn probe_of(mu: &[f64]) -> impl Iterator<Item = f64> + '_ {
    mu.iter().step_by(2).copied()
}

fn lcm(a: u128, b: u128) -> Result<u128> {
    (a / gcd(a, b))
        .checked_mul(b)
        .ok_or_else(|| Error::invalid("common dither period overflows"))
}

/// Integer common period `T̃` of the dither in `τ = t/ε` units.
///
/// `T̃ = LCM(T̃_1, …, T̃_n)` with `T̃_ℓ = den_ℓ · Π_{j≠ℓ} num_j`.
pub fn common_period_exact(kappas: &[Rational]) -> Result<u128> {
    if kappas.is_empty() {
        return Err(Error::invalid("common period of an empty frequency set"));
    }
    let overflow = || Error::invalid("common dither period overflows");
    let mut period: u128 = 1;
    for (l, k) in kappas.iter().enumerate() {
        let mut t = k.den as u128;
        for (j, other) in kappas.iter().enumerate() {
            if j != l {
                t = t.checked_mul(other.num as u128).ok_or_else(overflow)?;
            }
        }
        period = lcm(period, t)?;
    }
    Ok(period)
}

/// [`common_period_exact`] as a real number of `τ` units.
pub fn common_period(kappas: &[Rational]) -> Result<f64> {
    common_period_exact(kappas).map(|p| p as f64)
}

/// Quadrature residuals of the averaging identities over `N` common periods.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragingResidual {
    /// `(1/(N T̃)) ∫ μ̃μ̃ᵀ dτ − ½ I`.
    pub matrix: DMatrix<f64>,
    /// `(1/(N T̃)) ∫ μ̃ dτ`.
    pub vector: DVector<f64>,
}

impl AveragingResidual {
    pub fn matrix_max(&self) -> f64 {
        self.matrix.amax()
    }

    pub fn vector_max(&self) -> f64 {
        self.vector.amax()
    }

    pub fn off_diagonal_max(&self) -> f64 {
        let n = self.matrix.nrows();
        let mut m: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m = m.max(self.matrix[(i, j)].abs());
                }
            }
        }
        m
    }
}

/// Composite-Simpson check of the averaging identities.
///
/// Integrates over `[0, N T̃]` in `τ` with `grid_points` intervals per unit
/// of `τ`, starting from [`DitherState::initial`].
pub fn verify_average(params: &DitherParams, periods: usize, grid_points: usize) -> Result<AveragingResidual> {
    params.validate()?;
    if periods == 0 || grid_points == 0 {
        return Err(Error::invalid("periods and grid_points must be positive"));
    }
    let n = params.n();
    let span = common_period(&params.kappas)? * periods as f64;
    let mut intervals = (span * grid_points as f64).ceil() as usize;
    intervals += intervals % 2;
    let dtau = span / intervals as f64;
    let start = DitherState::initial(n);

    let mut mat = DMatrix::<f64>::zeros(n, n);
    let mut vec = DVector::<f64>::zeros(n);
    let mut mu = start.mu.clone();
    for i in 0..=intervals {
        let w = if i == 0 || i == intervals {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        // Fresh rotation from the start point keeps the quadrature free of
        // accumulated rounding.
        params.rotation(i as f64 * dtau * params.epsilon).apply(&start.mu, &mut mu);
        let p = DVector::from_iterator(n, probe_of(&mu));
        mat += (w * &p) * p.transpose();
        vec += w * p;
    }
    let scale = dtau / 3.0 / span;
    mat *= scale;
    vec *= scale;
    mat -= DMatrix::<f64>::identity(n, n) * 0.5;
    Ok(AveragingResidual { matrix: mat, vector: vec })
}
