//! Compact metric groups: SU(n), SL_n(Z/p^K), finite groups, the circle and
//! binary products with the max metric.

pub mod cloud;
pub mod finite;
pub mod unitary;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::padic::{PAdicMatrix, Zpk};
pub use cloud::SampleCloud;
pub use finite::FiniteGroup;
use unitary::CMat;

#[derive(Clone, Debug)]
pub enum CompactGroupSpec {
    SpecialUnitary(usize),
    PAdicSpecialLinear { n: usize, p: u64, k: u32 },
    FiniteGroup(Arc<FiniteGroup>),
    /// R/Z with d(x, y) = distance to the nearest integer of x - y.
    Circle,
    Product(Arc<CompactGroupSpec>, Arc<CompactGroupSpec>),
}

impl PartialEq for CompactGroupSpec {
    fn eq(&self, other: &Self) -> bool {
        use CompactGroupSpec::*;
        match (self, other) {
            (SpecialUnitary(a), SpecialUnitary(b)) => a == b,
            (PAdicSpecialLinear { n, p, k }, PAdicSpecialLinear { n: n2, p: p2, k: k2 }) => (n, p, k) == (n2, p2, k2),
            (FiniteGroup(a), FiniteGroup(b)) => Arc::ptr_eq(a, b) || a == b,
            (Circle, Circle) => true,
            (Product(a, b), Product(c, d)) => a == c && b == d,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GroupPoint {
    Unitary(CMat),
    PAdic(PAdicMatrix),
    Finite(usize),
    Circle(f64),
    Pair(Box<GroupPoint>, Box<GroupPoint>),
}

impl GroupPoint {
    pub fn pair(a: GroupPoint, b: GroupPoint) -> Self {
        GroupPoint::Pair(Box::new(a), Box::new(b))
    }

    pub fn as_unitary(&self) -> Option<&CMat> {
        match self {
            GroupPoint::Unitary(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_finite(&self) -> Option<usize> {
        match self {
            GroupPoint::Finite(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_padic(&self) -> Option<&PAdicMatrix> {
        match self {
            GroupPoint::PAdic(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_pair(&self) -> Option<(&GroupPoint, &GroupPoint)> {
        match self {
            GroupPoint::Pair(a, b) => Some((a, b)),
            _ => None,
        }
    }
}

/// Volume of the closed ball 1_η.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallVolume {
    pub value: f64,
    /// Standard error for Monte Carlo estimates, `None` when exact.
    pub std_err: Option<f64>,
    pub samples: usize,
}

impl BallVolume {
    fn exact(value: f64) -> Self {
        Self { value, std_err: None, samples: 0 }
    }

    pub fn is_exact(&self) -> bool {
        self.std_err.is_none()
    }
}

/// Normalized Haar volume of the SU(2) ball {‖g − I‖ ≤ η}: (θ₀ − sin θ₀ cos θ₀)/π with θ₀ = 2 asin(η/2).
pub fn su2_ball_volume(eta: f64) -> f64 {
    if eta >= 2.0 {
        return 1.0;
    }
    if eta <= 0.0 {
        return 0.0;
    }
    let t = 2.0 * (eta / 2.0).asin();
    (t - t.sin() * t.cos()) / PI
}

impl CompactGroupSpec {
    pub fn su(n: usize) -> Self {
        CompactGroupSpec::SpecialUnitary(n)
    }

    pub fn padic_sl(n: usize, p: u64, k: u32) -> Result<Self> {
        Zpk::new(p, k)?;
        if n == 0 || k == 0 {
            return Err(Error::InvalidParameter("SL_n(Z/p^K) needs n, K >= 1".into()));
        }
        Ok(CompactGroupSpec::PAdicSpecialLinear { n, p, k })
    }

    pub fn finite(g: FiniteGroup) -> Self {
        CompactGroupSpec::FiniteGroup(Arc::new(g))
    }

    pub fn product(a: CompactGroupSpec, b: CompactGroupSpec) -> Self {
        CompactGroupSpec::Product(Arc::new(a), Arc::new(b))
    }

    fn ring(&self) -> Option<Zpk> {
        match self {
            CompactGroupSpec::PAdicSpecialLinear { p, k, .. } => Zpk::new(*p, *k).ok(),
            _ => None,
        }
    }

    pub fn identity(&self) -> GroupPoint {
        match self {
            CompactGroupSpec::SpecialUnitary(n) => GroupPoint::Unitary(unitary::identity(*n)),
            CompactGroupSpec::PAdicSpecialLinear { n, .. } => {
                GroupPoint::PAdic(PAdicMatrix::identity(self.ring().unwrap(), *n).into_sl().unwrap())
            }
            CompactGroupSpec::FiniteGroup(g) => GroupPoint::Finite(g.identity()),
            CompactGroupSpec::Circle => GroupPoint::Circle(0.0),
            CompactGroupSpec::Product(a, b) => GroupPoint::pair(a.identity(), b.identity()),
        }
    }

    /// Group membership (unitarity to 1e-12, exact elsewhere).
    pub fn contains(&self, g: &GroupPoint) -> bool {
        match (self, g) {
            (CompactGroupSpec::SpecialUnitary(n), GroupPoint::Unitary(m)) => {
                m.nrows() == *n && unitary::is_special_unitary(m, 1e-12)
            }
            (CompactGroupSpec::PAdicSpecialLinear { n, .. }, GroupPoint::PAdic(m)) => {
                Some(m.ring()) == self.ring() && m.n() == *n && m.cols() == *n && m.det() == 1
            }
            (CompactGroupSpec::FiniteGroup(fg), GroupPoint::Finite(i)) => *i < fg.order(),
            (CompactGroupSpec::Circle, GroupPoint::Circle(x)) => (0.0..1.0).contains(x),
            (CompactGroupSpec::Product(a, b), GroupPoint::Pair(x, y)) => a.contains(x) && b.contains(y),
            _ => false,
        }
    }

    fn conforms(&self, g: &GroupPoint) -> bool {
        match (self, g) {
            (CompactGroupSpec::SpecialUnitary(n), GroupPoint::Unitary(m)) => m.nrows() == *n,
            (CompactGroupSpec::PAdicSpecialLinear { n, .. }, GroupPoint::PAdic(m)) => {
                Some(m.ring()) == self.ring() && m.n() == *n
            }
            (CompactGroupSpec::FiniteGroup(fg), GroupPoint::Finite(i)) => *i < fg.order(),
            (CompactGroupSpec::Circle, GroupPoint::Circle(_)) => true,
            (CompactGroupSpec::Product(a, b), GroupPoint::Pair(x, y)) => a.conforms(x) && b.conforms(y),
            _ => false,
        }
    }

    pub(crate) fn check(&self, g: &GroupPoint) -> Result<()> {
        if self.conforms(g) {
            Ok(())
        } else {
            Err(Error::SpecMismatch)
        }
    }

    pub fn mul(&self, a: &GroupPoint, b: &GroupPoint) -> Result<GroupPoint> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.mul_unchecked(a, b))
    }

    pub(crate) fn mul_unchecked(&self, a: &GroupPoint, b: &GroupPoint) -> GroupPoint {
        match (self, a, b) {
            (CompactGroupSpec::SpecialUnitary(_), GroupPoint::Unitary(x), GroupPoint::Unitary(y)) => {
                GroupPoint::Unitary(x * y)
            }
            (CompactGroupSpec::PAdicSpecialLinear { .. }, GroupPoint::PAdic(x), GroupPoint::PAdic(y)) => {
                GroupPoint::PAdic(x.mul(y))
            }
            (CompactGroupSpec::FiniteGroup(g), GroupPoint::Finite(x), GroupPoint::Finite(y)) => {
                GroupPoint::Finite(g.mul(*x, *y))
            }
            (CompactGroupSpec::Circle, GroupPoint::Circle(x), GroupPoint::Circle(y)) => {
                GroupPoint::Circle((x + y).rem_euclid(1.0) % 1.0)
            }
            (CompactGroupSpec::Product(s, t), GroupPoint::Pair(x1, y1), GroupPoint::Pair(x2, y2)) => {
                GroupPoint::pair(s.mul_unchecked(x1, x2), t.mul_unchecked(y1, y2))
            }
            _ => unreachable!("checked by caller"),
        }
    }

    pub fn inv(&self, a: &GroupPoint) -> Result<GroupPoint> {
        self.check(a)?;
        Ok(match (self, a) {
            (CompactGroupSpec::SpecialUnitary(_), GroupPoint::Unitary(x)) => GroupPoint::Unitary(x.adjoint()),
            (CompactGroupSpec::PAdicSpecialLinear { .. }, GroupPoint::PAdic(x)) => GroupPoint::PAdic(x.inverse()?),
            (CompactGroupSpec::FiniteGroup(g), GroupPoint::Finite(x)) => GroupPoint::Finite(g.inv(*x)),
            (CompactGroupSpec::Circle, GroupPoint::Circle(x)) => GroupPoint::Circle((1.0 - x).rem_euclid(1.0) % 1.0),
            (CompactGroupSpec::Product(s, t), GroupPoint::Pair(x, y)) => GroupPoint::pair(s.inv(x)?, t.inv(y)?),
            _ => unreachable!("checked above"),
        })
    }

    /// Bi-invariant distance: operator norm, p^-v, finite-group norm, circle or max on products.
    pub fn distance(&self, a: &GroupPoint, b: &GroupPoint) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.distance_unchecked(a, b))
    }

    pub(crate) fn distance_unchecked(&self, a: &GroupPoint, b: &GroupPoint) -> f64 {
        match (self, a, b) {
            (CompactGroupSpec::SpecialUnitary(_), GroupPoint::Unitary(x), GroupPoint::Unitary(y)) => {
                unitary::op_norm(&(x - y))
            }
            (CompactGroupSpec::PAdicSpecialLinear { .. }, GroupPoint::PAdic(x), GroupPoint::PAdic(y)) => x.sub(y).norm(),
            (CompactGroupSpec::FiniteGroup(g), GroupPoint::Finite(x), GroupPoint::Finite(y)) => g.distance(*x, *y),
            (CompactGroupSpec::Circle, GroupPoint::Circle(x), GroupPoint::Circle(y)) => {
                let d = (x - y).rem_euclid(1.0);
                d.min(1.0 - d)
            }
            (CompactGroupSpec::Product(s, t), GroupPoint::Pair(x1, y1), GroupPoint::Pair(x2, y2)) => {
                s.distance_unchecked(x1, x2).max(t.distance_unchecked(y1, y2))
            }
            _ => unreachable!("checked by caller"),
        }
    }

    pub fn norm(&self, a: &GroupPoint) -> Result<f64> {
        self.distance(&self.identity(), a)
    }

    pub fn diameter(&self) -> f64 {
        match self {
            CompactGroupSpec::SpecialUnitary(_) => 2.0,
            CompactGroupSpec::PAdicSpecialLinear { .. } => 1.0,
            CompactGroupSpec::FiniteGroup(g) => g.norms().iter().copied().fold(0.0, f64::max),
            CompactGroupSpec::Circle => 0.5,
            CompactGroupSpec::Product(a, b) => a.diameter().max(b.diameter()),
        }
    }

    pub fn is_abelian(&self) -> bool {
        match self {
            CompactGroupSpec::SpecialUnitary(n) => *n <= 1,
            CompactGroupSpec::PAdicSpecialLinear { n, .. } => *n <= 1,
            CompactGroupSpec::FiniteGroup(g) => g.is_abelian(),
            CompactGroupSpec::Circle => true,
            CompactGroupSpec::Product(a, b) => a.is_abelian() && b.is_abelian(),
        }
    }

    pub fn haar_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GroupPoint {
        match self {
            CompactGroupSpec::SpecialUnitary(n) => GroupPoint::Unitary(unitary::haar_sun(*n, rng)),
            CompactGroupSpec::PAdicSpecialLinear { n, .. } => GroupPoint::PAdic(haar_padic_sl(self.ring().unwrap(), *n, rng)),
            CompactGroupSpec::FiniteGroup(g) => GroupPoint::Finite(rng.random_range(0..g.order())),
            CompactGroupSpec::Circle => GroupPoint::Circle(rng.random::<f64>()),
            CompactGroupSpec::Product(a, b) => GroupPoint::pair(a.haar_sample(rng), b.haar_sample(rng)),
        }
    }

    /// Exact ball volume where available; SU(n) for n > 2 returns an error
    /// (use [`CompactGroupSpec::ball_volume_mc`]).
    pub fn ball_volume(&self, eta: f64) -> Result<BallVolume> {
        if eta <= 0.0 {
            return Err(Error::InvalidParameter("η must be positive".into()));
        }
        if eta >= self.diameter() {
            return Ok(BallVolume::exact(1.0));
        }
        match self {
            CompactGroupSpec::SpecialUnitary(2) => Ok(BallVolume::exact(su2_ball_volume(eta))),
            CompactGroupSpec::SpecialUnitary(1) => Ok(BallVolume::exact(1.0)),
            CompactGroupSpec::SpecialUnitary(_) => {
                Err(Error::Precondition("no closed form for SU(n), n > 2; use Monte Carlo".into()))
            }
            CompactGroupSpec::PAdicSpecialLinear { n, p, k } => Ok(BallVolume::exact(padic_ball_volume(*n, *p, *k, eta))),
            CompactGroupSpec::FiniteGroup(g) => Ok(BallVolume::exact(g.ball(eta).len() as f64 / g.order() as f64)),
            CompactGroupSpec::Circle => Ok(BallVolume::exact((2.0 * eta).min(1.0))),
            CompactGroupSpec::Product(a, b) => {
                let (x, y) = (a.ball_volume(eta)?, b.ball_volume(eta)?);
                Ok(BallVolume::exact(x.value * y.value))
            }
        }
    }

    /// Monte Carlo ball volume from Haar samples, with binomial standard error.
    pub fn ball_volume_mc<R: Rng + ?Sized>(&self, eta: f64, samples: usize, rng: &mut R) -> Result<BallVolume> {
        if samples == 0 {
            return Err(Error::Empty);
        }
        let id = self.identity();
        let hits = (0..samples)
            .filter(|_| self.distance_unchecked(&id, &self.haar_sample(rng)) <= eta)
            .count();
        let v = hits as f64 / samples as f64;
        Ok(BallVolume { value: v, std_err: Some((v * (1.0 - v) / samples as f64).sqrt()), samples })
    }

    /// Label of the coset g·1_η when 1_η is a subgroup (ultrametric and finite cases).
    pub fn coset_key(&self, g: &GroupPoint, eta: f64) -> Option<String> {
        match (self, g) {
            (CompactGroupSpec::PAdicSpecialLinear { p, k, .. }, GroupPoint::PAdic(m)) => {
                let l = padic_level_for(*p, *k, eta);
                if l == 0 {
                    return Some(String::new());
                }
                Some(key_of(&GroupPoint::PAdic(m.reduce_to(l.min(*k)).ok()?)))
            }
            (CompactGroupSpec::FiniteGroup(fg), GroupPoint::Finite(i)) => {
                let ball = fg.ball(eta);
                let labels = fg.left_coset_labels(&ball).ok()?;
                Some(labels[*i].to_string())
            }
            (CompactGroupSpec::Product(a, b), GroupPoint::Pair(x, y)) => {
                Some(format!("{}|{}", a.coset_key(x, eta)?, b.coset_key(y, eta)?))
            }
            _ => None,
        }
    }

    pub fn key(&self, g: &GroupPoint) -> String {
        key_of(g)
    }

    pub fn parse_point(&self, s: &str) -> Result<GroupPoint> {
        let g = cloud::parse_point(self, s)?;
        self.check(&g)?;
        Ok(g)
    }

    /// Group commutator ghg⁻¹h⁻¹.
    pub fn commutator(&self, g: &GroupPoint, h: &GroupPoint) -> Result<GroupPoint> {
        let gh = self.mul(g, h)?;
        let gi = self.inv(g)?;
        let hi = self.inv(h)?;
        Ok(self.mul_unchecked(&self.mul_unchecked(&gh, &gi), &hi))
    }
}

/// Smallest l with p^-l <= η (0 when η >= 1).
fn padic_level_for(p: u64, k: u32, eta: f64) -> u32 {
    if eta >= 1.0 {
        return 0;
    }
    let mut l = 0u32;
    let mut r = 1.0f64;
    while r > eta && l <= k {
        r /= p as f64;
        l += 1;
    }
    l
}

fn padic_ball_volume(n: usize, p: u64, k: u32, eta: f64) -> f64 {
    let l = padic_level_for(p, k, eta);
    let d = (n * n - 1) as i32;
    let base = finite::sl_order_mod_p(n, p);
    if l == 0 {
        1.0
    } else if l > k {
        1.0 / (base * (p as f64).powi(d * (k as i32 - 1)))
    } else {
        (p as f64).powi(-d * (l as i32 - 1)) / base
    }
}

/// Uniform element of SL_n(Z/p^K): a uniform matrix conditioned on det ≡ 1 mod p,
/// then the first row is divided by the determinant (a unit ≡ 1 mod p).
pub fn haar_padic_sl<R: Rng + ?Sized>(ring: Zpk, n: usize, rng: &mut R) -> PAdicMatrix {
    loop {
        let mut m = PAdicMatrix::random(ring, n, n, rng);
        let det = m.det();
        if det % ring.p() == 1 % ring.p() {
            let u = ring.inv(det).expect("det is a unit");
            m.scale_row(0, u);
            return m.into_sl().expect("normalized determinant");
        }
    }
}

pub(crate) fn key_of(g: &GroupPoint) -> String {
    match g {
        GroupPoint::Unitary(m) => {
            let parts: Vec<String> = (0..m.nrows())
                .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
                .map(|(i, j)| format!("{} {}", m[(i, j)].re, m[(i, j)].im))
                .collect();
            format!("U{}:{}", m.nrows(), parts.join(","))
        }
        GroupPoint::PAdic(m) => {
            let parts: Vec<String> = m.data().iter().map(|x| x.to_string()).collect();
            format!("P{}:{}", m.n(), parts.join(","))
        }
        GroupPoint::Finite(i) => format!("F:{i}"),
        GroupPoint::Circle(x) => format!("C:{x}"),
        GroupPoint::Pair(a, b) => format!("({};{})", key_of(a), key_of(b)),
    }
}

/// Metric entropy h(A; η): log of the size of a greedy maximal η-separated subset,
/// which is also an η-cover. Points are visited in the order of their serialized keys.
pub fn metric_entropy(spec: &CompactGroupSpec, cloud: &[GroupPoint], eta: f64) -> Result<f64> {
    Ok((separated_subset(spec, cloud, eta)?.len() as f64).ln())
}

pub fn separated_subset(spec: &CompactGroupSpec, cloud: &[GroupPoint], eta: f64) -> Result<Vec<GroupPoint>> {
    if cloud.is_empty() {
        return Err(Error::Empty);
    }
    for g in cloud {
        spec.check(g)?;
    }
    let mut order: Vec<(String, usize)> = cloud.iter().enumerate().map(|(i, g)| (key_of(g), i)).collect();
    order.sort();
    let mut chosen: Vec<GroupPoint> = Vec::new();
    for (_, i) in order {
        let g = &cloud[i];
        if chosen.iter().all(|c| spec.distance_unchecked(c, g) > eta) {
            chosen.push(g.clone());
        }
    }
    Ok(chosen)
}

/// Estimate of H₂(X; η) from i.i.d. samples.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RenyiEstimate {
    pub h2: f64,
    /// Estimated P(d(X, X') <= η) for independent copies.
    pub collision: f64,
    pub ball_volume: f64,
    /// Estimated ‖μ_η‖₂² = collision / |1_η|.
    pub norm_sq: f64,
    /// True when the estimate came from exact coset labels (1_η a subgroup).
    pub coset_exact: bool,
    pub samples: usize,
}

/// H₂(X; η) = log(1/|1_η|) − log ‖μ_η‖₂². When 1_η is a subgroup ‖μ_η‖₂² is the coset
/// collision probability divided by |1_η|; otherwise the indicator-ball collision
/// P(d(X,X') ≤ η)/|1_η| is used, which over-estimates ‖μ_η‖₂² by at most |1_{2η}|/|1_η|.
/// Both collision rates are unbiased pair counts.
pub fn renyi_entropy(spec: &CompactGroupSpec, samples: &[GroupPoint], eta: f64) -> Result<RenyiEstimate> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    for g in samples {
        spec.check(g)?;
    }
    let vol = match spec.ball_volume(eta) {
        Ok(v) => v.value,
        Err(_) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
            spec.ball_volume_mc(eta, 200_000, &mut rng)?.value
        }
    };
    let pairs = (n * (n - 1) / 2) as f64;
    let keys: Option<Vec<String>> = samples.iter().map(|g| spec.coset_key(g, eta)).collect();
    let (same, exact) = match keys {
        Some(keys) => {
            let mut counts: HashMap<String, usize> = HashMap::new();
            for k in keys {
                *counts.entry(k).or_default() += 1;
            }
            (counts.values().map(|&c| (c * (c - 1) / 2) as f64).sum::<f64>(), true)
        }
        None => {
            let mut s = 0usize;
            for i in 0..n {
                for j in i + 1..n {
                    if spec.distance_unchecked(&samples[i], &samples[j]) <= eta {
                        s += 1;
                    }
                }
            }
            (s as f64, false)
        }
    };
    let collision = same / pairs;
    Ok(RenyiEstimate {
        h2: -collision.ln(),
        collision,
        ball_volume: vol,
        norm_sq: collision / vol,
        coset_exact: exact,
        samples: n,
    })
}

/// Exact H₂ of a finitely supported measure: −log Σ μ(x)μ(y)·1[d(x,y) ≤ η].
/// Equal to the definition whenever 1_η is a subgroup.
pub fn renyi_entropy_exact(spec: &CompactGroupSpec, atoms: &[(GroupPoint, f64)], eta: f64) -> Result<f64> {
    if atoms.is_empty() {
        return Err(Error::Empty);
    }
    let mut s = 0.0;
    for (x, a) in atoms {
        for (y, b) in atoms {
            if spec.distance(x, y)? <= eta {
                s += a * b;
            }
        }
    }
    Ok(-s.ln())
}

/// g^{1/k} = exp(log(g)/k) for ‖g − I‖ < 1/3.
pub fn nth_root(g: &CMat, k: u32) -> Result<CMat> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    let d = unitary::dist_to_identity(g);
    if d >= 1.0 / 3.0 {
        return Err(Error::Precondition(format!("‖g − I‖ = {d} is not below 1/3")));
    }
    let x = unitary::unitary_log(g)?;
    Ok(unitary::expm(&(x * unitary::c(1.0 / k as f64, 0.0))))
}

/// Ball-volume exponent d₀ and constant C₁ with C₁⁻¹η^{d₀} ≤ |1_η| ≤ C₁η^{d₀}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionProfile {
    pub d0: f64,
    pub c1: f64,
}

impl DimensionProfile {
    pub fn new(d0: f64, c1: f64) -> Result<Self> {
        if !(d0 > 0.0) || !(c1 >= 1.0) {
            return Err(Error::InvalidParameter(format!("need d0 > 0 and C1 >= 1, got ({d0}, {c1})")));
        }
        Ok(Self { d0, c1 })
    }

    /// Smallest C₁ making the sandwich hold at the given (η, |1_η|) pairs for exponent d₀.
    pub fn fit_constant(d0: f64, data: &[(f64, f64)]) -> Result<Self> {
        let c1 = data
            .iter()
            .map(|&(eta, v)| {
                let r = v / eta.powf(d0);
                r.max(1.0 / r)
            })
            .fold(1.0, f64::max);
        Self::new(d0, c1)
    }

    /// Least-squares slope of log|1_η| against log η.
    pub fn fit_exponent(data: &[(f64, f64)]) -> Result<f64> {
        if data.len() < 2 {
            return Err(Error::InvalidParameter("need two scales".into()));
        }
        let pts: Vec<(f64, f64)> = data.iter().map(|&(e, v)| (e.ln(), v.ln())).collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Ok(sxy / sxx)
    }

    pub fn holds(&self, eta: f64, volume: f64) -> bool {
        let base = eta.powf(self.d0);
        volume >= base / self.c1 * (1.0 - 1e-12) && volume <= base * self.c1 * (1.0 + 1e-12)
    }
}

/// Irreducible representations are C₀(dim π)^L-Lipschitz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalRandomnessProfile {
    pub l: f64,
    pub c0: f64,
}

impl LocalRandomnessProfile {
    pub fn new(l: f64, c0: f64) -> Result<Self> {
        if !(l >= 1.0) || !(c0 >= 1.0) {
            return Err(Error::InvalidParameter(format!("need L >= 1 and C0 >= 1, got ({l}, {c0})")));
        }
        Ok(Self { l, c0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use unitary::c;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn distance_examples() {
        let su2 = CompactGroupSpec::su(2);
        let id = su2.identity();
        assert_eq!(su2.distance(&id, &id).unwrap(), 0.0);
        let th = 0.7f64;
        let d = CMat::from_row_slice(2, 2, &[c(th.cos(), th.sin()), c(0.0, 0.0), c(0.0, 0.0), c(th.cos(), -th.sin())]);
        let got = su2.distance(&id, &GroupPoint::Unitary(d)).unwrap();
        assert!((got - (c(th.cos(), th.sin()) - c(1.0, 0.0)).norm()).abs() < 1e-14);

        let sl = CompactGroupSpec::padic_sl(2, 5, 4).unwrap();
        let r = Zpk::new(5, 4).unwrap();
        let g = PAdicMatrix::from_i64(r, &[vec![1, 25], vec![0, 1]]).unwrap();
        assert_eq!(sl.distance(&sl.identity(), &GroupPoint::PAdic(g)).unwrap(), 1.0 / 25.0);
        assert!(matches!(sl.distance(&sl.identity(), &id), Err(Error::SpecMismatch)));
    }

    #[test]
    fn padic_haar_is_in_sl() {
        let spec = CompactGroupSpec::padic_sl(3, 3, 4).unwrap();
        let mut r = rng(1);
        for _ in 0..20 {
            assert!(spec.contains(&spec.haar_sample(&mut r)));
        }
    }

    #[test]
    fn ball_volume_examples() {
        for p in [3u64, 5, 7] {
            let spec = CompactGroupSpec::padic_sl(2, p, 3).unwrap();
            let v = spec.ball_volume(1.0 / p as f64).unwrap();
            assert!(v.is_exact());
            assert!((v.value - 1.0 / (p * (p * p - 1)) as f64).abs() < 1e-15);
            assert_eq!(spec.ball_volume(1.0).unwrap().value, 1.0);
        }
        assert_eq!(CompactGroupSpec::su(2).ball_volume(2.0).unwrap().value, 1.0);
        assert!((CompactGroupSpec::Circle.ball_volume(0.1).unwrap().value - 0.2).abs() < 1e-15);
    }

    #[test]
    fn su2_volume_formula_matches_monte_carlo() {
        let spec = CompactGroupSpec::su(2);
        let mc = spec.ball_volume_mc(0.8, 200_000, &mut rng(2)).unwrap();
        let exact = su2_ball_volume(0.8);
        assert!((mc.value - exact).abs() < 4.0 * mc.std_err.unwrap());
    }

    #[test]
    fn metric_entropy_examples() {
        let spec = CompactGroupSpec::Circle;
        assert_eq!(metric_entropy(&spec, &[GroupPoint::Circle(0.3)], 0.1).unwrap(), 0.0);
        let two = [GroupPoint::Circle(0.1), GroupPoint::Circle(0.4)];
        assert!((metric_entropy(&spec, &two, 0.2).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(metric_entropy(&spec, &[], 0.1).is_err());
    }

    #[test]
    fn renyi_examples() {
        let g = CompactGroupSpec::finite(FiniteGroup::cyclic(8).unwrap());
        let point = vec![(GroupPoint::Finite(3), 1.0)];
        assert_eq!(renyi_entropy_exact(&g, &point, 0.5).unwrap(), 0.0);
        let uniform: Vec<_> = (0..8).map(|i| (GroupPoint::Finite(i), 1.0 / 8.0)).collect();
        assert!((renyi_entropy_exact(&g, &uniform, 0.5).unwrap() - 8f64.ln()).abs() < 1e-12);
        let samples = vec![GroupPoint::Finite(2); 10];
        let est = renyi_entropy(&g, &samples, 0.5).unwrap();
        assert_eq!(est.h2, 0.0);
        assert!(est.coset_exact);
        assert!(renyi_entropy(&g, &samples[..1], 0.5).is_err());
    }

    #[test]
    fn renyi_estimator_on_haar_su2() {
        let spec = CompactGroupSpec::su(2);
        let mut r = rng(3);
        let samples: Vec<_> = (0..3000).map(|_| spec.haar_sample(&mut r)).collect();
        let est = renyi_entropy(&spec, &samples, 0.5).unwrap();
        let expected = -(su2_ball_volume(0.5)).ln();
        assert!((est.h2 - expected).abs() < 0.15, "{} vs {}", est.h2, expected);
    }

    #[test]
    fn nth_root_examples() {
        let id = unitary::identity(2);
        assert!(unitary::op_norm(&(nth_root(&id, 3).unwrap() - &id)) < 1e-15);
        let th = 0.2f64;
        let g = CMat::from_row_slice(2, 2, &[c(th.cos(), th.sin()), c(0.0, 0.0), c(0.0, 0.0), c(th.cos(), -th.sin())]);
        let h = th / 2.0;
        let want = CMat::from_row_slice(2, 2, &[c(h.cos(), h.sin()), c(0.0, 0.0), c(0.0, 0.0), c(h.cos(), -h.sin())]);
        assert!(unitary::op_norm(&(nth_root(&g, 2).unwrap() - want)) < 1e-14);
        let far = unitary::su2_from_quaternion([0.0, 1.0, 0.0, 0.0]);
        assert!(nth_root(&far, 2).is_err());
    }

    #[test]
    fn commutator_examples() {
        let spec = CompactGroupSpec::su(2);
        let mut r = rng(4);
        let g = spec.haar_sample(&mut r);
        let c1 = spec.commutator(&g, &spec.identity()).unwrap();
        assert!(spec.distance(&c1, &spec.identity()).unwrap() < 1e-14);
        let d1 = GroupPoint::Unitary(CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.6, 0.8), c(0.6, -0.8)])));
        let d2 = GroupPoint::Unitary(CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.0, 1.0), c(0.0, -1.0)])));
        let c2 = spec.commutator(&d1, &d2).unwrap();
        assert!(spec.distance(&c2, &spec.identity()).unwrap() < 1e-14);
    }

    #[test]
    fn dimension_profile_validation() {
        assert!(DimensionProfile::new(0.0, 2.0).is_err());
        assert!(DimensionProfile::new(3.0, 0.5).is_err());
        assert!(LocalRandomnessProfile::new(0.5, 1.0).is_err());
        let data = [(0.1, 2e-3), (0.05, 2.5e-4)];
        let d0 = DimensionProfile::fit_exponent(&data).unwrap();
        assert!((d0 - 3.0).abs() < 1e-12);
        let prof = DimensionProfile::fit_constant(d0, &data).unwrap();
        assert!(data.iter().all(|&(e, v)| prof.holds(e, v)));
    }

    #[test]
    fn product_and_circle_ops() {
        let spec = CompactGroupSpec::product(CompactGroupSpec::Circle, CompactGroupSpec::finite(FiniteGroup::cyclic(4).unwrap()));
        let a = GroupPoint::pair(GroupPoint::Circle(0.9), GroupPoint::Finite(3));
        let b = GroupPoint::pair(GroupPoint::Circle(0.2), GroupPoint::Finite(1));
        assert_eq!(spec.mul(&a, &b).unwrap(), GroupPoint::pair(GroupPoint::Circle((0.9f64 + 0.2).rem_euclid(1.0)), GroupPoint::Finite(0)));
        assert!((spec.distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let ai = spec.inv(&a).unwrap();
        assert!(spec.distance(&spec.mul(&a, &ai).unwrap(), &spec.identity()).unwrap() < 1e-15);
    }
}
