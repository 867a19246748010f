//! Random walks driven by finitely supported symmetric measures.
//!
//! Convolution works on any [`CompactGroupSpec`]; the spectral and displacement
//! computations need a finite group, where everything is done exactly on L²(G)
//! with the probability-normalized inner product.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{key_of, CompactGroupSpec, FiniteGroup, GroupPoint};

pub const WEIGHT_TOL: f64 = 1e-12;
/// Atoms of continuous specs closer than this are merged by [`convolve`].
pub const MERGE_TOL: f64 = 1e-10;
/// Orders above this are refused by the dense eigensolve.
pub const DENSE_MAX_ORDER: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteSupportMeasure {
    atoms: Vec<(GroupPoint, f64)>,
}

fn exact_payload(spec: &CompactGroupSpec) -> bool {
    match spec {
        CompactGroupSpec::PAdicSpecialLinear { .. } | CompactGroupSpec::FiniteGroup(_) => true,
        CompactGroupSpec::Product(a, b) => exact_payload(a) && exact_payload(b),
        _ => false,
    }
}

fn merge(spec: &CompactGroupSpec, atoms: impl IntoIterator<Item = (GroupPoint, f64)>) -> Vec<(GroupPoint, f64)> {
    let mut out: Vec<(GroupPoint, f64)> = Vec::new();
    if exact_payload(spec) {
        let mut index: HashMap<String, usize> = HashMap::new();
        for (g, w) in atoms {
            match index.get(&key_of(&g)) {
                Some(&i) => out[i].1 += w,
                None => {
                    index.insert(key_of(&g), out.len());
                    out.push((g, w));
                }
            }
        }
    } else {
        for (g, w) in atoms {
            match out.iter_mut().find(|(h, _)| spec.distance_unchecked(h, &g) <= MERGE_TOL) {
                Some(slot) => slot.1 += w,
                None => out.push((g, w)),
            }
        }
    }
    out.retain(|(_, w)| *w > 0.0);
    out
}

impl FiniteSupportMeasure {
    /// Validates membership and weights; repeated atoms are merged.
    pub fn new(spec: &CompactGroupSpec, atoms: Vec<(GroupPoint, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Empty);
        }
        for (g, w) in &atoms {
            spec.check(g)?;
            if !(*w >= 0.0) {
                return Err(Error::InvalidParameter(format!("negative weight {w}")));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidParameter(format!("weights sum to {total}")));
        }
        Ok(Self { atoms: merge(spec, atoms) })
    }

    pub fn uniform(spec: &CompactGroupSpec, points: &[GroupPoint]) -> Result<Self> {
        let w = 1.0 / points.len().max(1) as f64;
        Self::new(spec, points.iter().map(|g| (g.clone(), w)).collect())
    }

    pub fn dirac(spec: &CompactGroupSpec, g: GroupPoint) -> Result<Self> {
        Self::new(spec, vec![(g, 1.0)])
    }

    /// Measure on a finite group from a dense weight vector.
    pub fn from_dense(spec: &CompactGroupSpec, weights: &[f64]) -> Result<Self> {
        let g = finite_of(spec)?;
        if weights.len() != g.order() {
            return Err(Error::Dimension("one weight per group element".into()));
        }
        Self::new(
            spec,
            weights.iter().enumerate().filter(|(_, &w)| w != 0.0).map(|(i, &w)| (GroupPoint::Finite(i), w)).collect(),
        )
    }

    pub fn atoms(&self) -> &[(GroupPoint, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn weight_of(&self, spec: &CompactGroupSpec, g: &GroupPoint) -> f64 {
        if exact_payload(spec) {
            let k = key_of(g);
            self.atoms.iter().filter(|(h, _)| key_of(h) == k).map(|a| a.1).sum()
        } else {
            self.atoms.iter().filter(|(h, _)| spec.distance_unchecked(h, g) <= MERGE_TOL).map(|a| a.1).sum()
        }
    }

    /// μ(g) = μ(g⁻¹) for every atom, up to `tol`.
    pub fn is_symmetric(&self, spec: &CompactGroupSpec, tol: f64) -> bool {
        self.atoms.iter().all(|(g, w)| match spec.inv(g) {
            Ok(gi) => (self.weight_of(spec, &gi) - w).abs() <= tol,
            Err(_) => false,
        })
    }

    /// Dense weight vector on a finite group.
    pub fn dense(&self, group: &FiniteGroup) -> Result<Vec<f64>> {
        let mut w = vec![0.0; group.order()];
        for (g, x) in &self.atoms {
            let i = g.as_finite().filter(|&i| i < group.order()).ok_or(Error::SpecMismatch)?;
            w[i] += x;
        }
        Ok(w)
    }
}

fn finite_of(spec: &CompactGroupSpec) -> Result<&FiniteGroup> {
    match spec {
        CompactGroupSpec::FiniteGroup(g) => Ok(g),
        _ => Err(Error::InvalidParameter("a finite group spec is required".into())),
    }
}

/// μ ∗ ν: atoms xy with weight μ(x)ν(y).
pub fn convolve(spec: &CompactGroupSpec, mu: &FiniteSupportMeasure, nu: &FiniteSupportMeasure) -> Result<FiniteSupportMeasure> {
    for (g, _) in mu.atoms.iter().chain(&nu.atoms) {
        spec.check(g)?;
    }
    if let CompactGroupSpec::FiniteGroup(g) = spec {
        let (a, b) = (mu.dense(g)?, nu.dense(g)?);
        return FiniteSupportMeasure::from_dense(spec, &convolve_dense(g, &a, &b));
    }
    let prods = mu
        .atoms
        .iter()
        .flat_map(|(x, a)| nu.atoms.iter().map(move |(y, b)| (spec.mul_unchecked(x, y), a * b)));
    Ok(FiniteSupportMeasure { atoms: merge(spec, prods) })
}

pub fn convolve_dense(group: &FiniteGroup, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; group.order()];
    for (x, &wa) in a.iter().enumerate().filter(|(_, w)| **w != 0.0) {
        for (y, &wb) in b.iter().enumerate().filter(|(_, w)| **w != 0.0) {
            out[group.mul(x, y)] += wa * wb;
        }
    }
    out
}

/// Result of an ℓ-fold convolution with a support cap.
#[derive(Clone, Debug)]
pub struct ConvolutionPower {
    pub measure: FiniteSupportMeasure,
    /// Total mass discarded by the cap before renormalization, summed over steps.
    pub truncated_mass: f64,
}

/// μ^(ℓ). After each step only the `cap` heaviest atoms are kept and renormalized.
pub fn convolution_power(spec: &CompactGroupSpec, mu: &FiniteSupportMeasure, l: usize, cap: usize) -> Result<ConvolutionPower> {
    if cap == 0 {
        return Err(Error::InvalidParameter("cap must be positive".into()));
    }
    let mut acc = FiniteSupportMeasure::dirac(spec, spec.identity())?;
    let mut truncated = 0.0;
    for _ in 0..l {
        let mut next = convolve(spec, &acc, mu)?;
        if next.atoms.len() > cap {
            next.atoms.sort_by(|a, b| b.1.total_cmp(&a.1));
            let dropped: f64 = next.atoms[cap..].iter().map(|a| a.1).sum();
            next.atoms.truncate(cap);
            let keep = 1.0 - dropped;
            for a in &mut next.atoms {
                a.1 /= keep;
            }
            truncated += dropped;
        }
        acc = next;
    }
    Ok(ConvolutionPower { measure: acc, truncated_mass: truncated })
}

/// (μ ∗ f)(x) = Σ_y μ(y) f(y⁻¹x).
pub fn convolve_function(group: &FiniteGroup, mu: &[f64], f: &[Complex64]) -> Vec<Complex64> {
    let n = group.order();
    let supp: Vec<(usize, f64)> = mu.iter().copied().enumerate().filter(|(_, w)| *w != 0.0).collect();
    (0..n)
        .map(|x| supp.iter().map(|&(y, w)| f[group.mul(group.inv(y), x)] * w).sum())
        .collect()
}

/// Probability-normalized L² norm.
pub fn l2_norm(f: &[Complex64]) -> f64 {
    (f.iter().map(|z| z.norm_sqr()).sum::<f64>() / f.len() as f64).sqrt()
}

fn mean(f: &[Complex64]) -> Complex64 {
    f.iter().sum::<Complex64>() / f.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub lambda: f64,
    pub lyapunov: f64,
    pub method: String,
    pub dim: usize,
}

impl SpectralReport {
    fn new(lambda: f64, method: &str, dim: usize) -> Self {
        let lambda = lambda.clamp(0.0, 1.0);
        Self { lambda, lyapunov: -lambda.ln(), method: method.into(), dim }
    }

    /// L• = min(L, 1).
    pub fn lyapunov_bullet(&self) -> f64 {
        self.lyapunov.min(1.0)
    }
}

fn central_involution(g: &FiniteGroup) -> Option<usize> {
    let e = g.identity();
    (0..g.order()).find(|&z| z != e && g.mul(z, z) == e && (0..g.order()).all(|x| g.mul(z, x) == g.mul(x, z)))
}

/// Spectrum of T_μ on L²₀(G), T[x][y] = μ(x y⁻¹). Splits along a central
/// involution when one exists (both halves stay symmetric).
fn l2_zero_spectrum(group: &FiniteGroup, mu: &[f64]) -> (Vec<f64>, &'static str) {
    let n = group.order();
    let t = |x: usize, y: usize| mu[group.mul(x, group.inv(y))];
    let Some(z) = central_involution(group).filter(|_| n > 64) else {
        let mut m = DMatrix::from_fn(n, n, |x, y| t(x, y) - 1.0 / n as f64);
        m = (&m + m.transpose()) * 0.5;
        let ev = m.symmetric_eigenvalues();
        // drop the eigenvalue 0 that belongs to the constants
        let mut v: Vec<f64> = ev.iter().copied().collect();
        let i = (0..v.len()).min_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
        v.remove(i);
        return (v, "dense-symmetric");
    };
    let mut reps = Vec::with_capacity(n / 2);
    let mut seen = vec![false; n];
    for x in 0..n {
        if !seen[x] {
            seen[x] = true;
            seen[group.mul(z, x)] = true;
            reps.push(x);
        }
    }
    let r = reps.len();
    let mut out = Vec::with_capacity(n - 1);
    for sign in [1.0, -1.0] {
        let mut m = DMatrix::from_fn(r, r, |i, j| t(reps[i], reps[j]) + sign * t(reps[i], group.mul(z, reps[j])));
        if sign > 0.0 {
            m.add_scalar_mut(-1.0 / r as f64);
        }
        m = (&m + m.transpose()) * 0.5;
        let mut v: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        if sign > 0.0 {
            let i = (0..v.len()).min_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
            v.remove(i);
        }
        out.extend(v);
    }
    (out, "dense-symmetric-central-split")
}

fn symmetric_dense(spec: &CompactGroupSpec, mu: &FiniteSupportMeasure) -> Result<(std::sync::Arc<FiniteGroup>, Vec<f64>)> {
    let CompactGroupSpec::FiniteGroup(g) = spec else {
        return Err(Error::InvalidParameter("a finite group spec is required".into()));
    };
    if g.order() > DENSE_MAX_ORDER {
        return Err(Error::TooLarge(format!("order {} above {DENSE_MAX_ORDER}", g.order())));
    }
    if !mu.is_symmetric(spec, 1e-12) {
        return Err(Error::Precondition("μ is not symmetric".into()));
    }
    Ok((g.clone(), mu.dense(g)?))
}

/// λ(μ) = ‖T_μ‖ on L²₀(G) by a dense symmetric eigensolve.
pub fn spectral_gap_exact(spec: &CompactGroupSpec, mu: &FiniteSupportMeasure) -> Result<SpectralReport> {
    let (g, w) = symmetric_dense(spec, mu)?;
    if g.order() == 1 {
        return Ok(SpectralReport::new(0.0, "trivial", 0));
    }
    let (ev, method) = l2_zero_spectrum(&g, &w);
    let lambda = ev.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(SpectralReport::new(lambda, method, g.order() - 1))
}

/// Independent estimate of λ(μ) by power iteration of T_μ² on a random mean-zero vector.
pub fn spectral_gap_power(spec: &CompactGroupSpec, mu: &FiniteSupportMeasure, iters: usize, seed: u64) -> Result<SpectralReport> {
    let (g, w) = symmetric_dense(spec, mu)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f: Vec<Complex64> = (0..g.order()).map(|_| Complex64::new(rng.sample(StandardNormal), 0.0)).collect();
    let mut est = 0.0;
    for _ in 0..iters {
        let m = mean(&f);
        f.iter_mut().for_each(|z| *z -= m);
        let nf = l2_norm(&f);
        if nf == 0.0 {
            return Ok(SpectralReport::new(0.0, "power-iteration", g.order() - 1));
        }
        f.iter_mut().for_each(|z| *z /= nf);
        let g2 = convolve_function(&g, &w, &convolve_function(&g, &w, &f));
        est = l2_norm(&g2).sqrt();
        f = g2;
    }
    Ok(SpectralReport::new(est, "power-iteration", g.order() - 1))
}

/// sup over the supplied nontrivial characters γ of |μ̂(γ)|, μ̂(γ) = Σ μ(x) conj γ(x).
pub fn spectral_gap_abelian<F>(spec: &CompactGroupSpec, characters: &[F], mu: &FiniteSupportMeasure) -> Result<SpectralReport>
where
    F: Fn(&GroupPoint) -> Complex64,
{
    if !spec.is_abelian() {
        return Err(Error::InvalidParameter("spec is not abelian".into()));
    }
    let lambda = characters
        .iter()
        .map(|chi| mu.atoms.iter().map(|(x, w)| chi(x).conj() * *w).sum::<Complex64>().norm())
        .fold(0.0, f64::max);
    Ok(SpectralReport::new(lambda, "characters", characters.len()))
}

/// All characters of a finite abelian group as value tables; the trivial one comes first.
pub fn abelian_characters(group: &FiniteGroup) -> Result<Vec<Vec<Complex64>>> {
    if !group.is_abelian() {
        return Err(Error::InvalidParameter("group is not abelian".into()));
    }
    let n = group.order();
    let e = group.identity();
    // characters of the current subgroup H, as maps on its elements
    let mut members = vec![e];
    let mut in_h = vec![false; n];
    in_h[e] = true;
    let mut chars: Vec<HashMap<usize, Complex64>> = vec![HashMap::from([(e, Complex64::new(1.0, 0.0))])];
    while members.len() < n {
        let g = (0..n).find(|&x| !in_h[x]).unwrap();
        let mut m = 1;
        let mut gm = g;
        while !in_h[gm] {
            gm = group.mul(gm, g);
            m += 1;
        }
        let mut new_members = Vec::with_capacity(members.len() * m);
        let mut decomposition = Vec::with_capacity(members.len() * m);
        let mut gt = e;
        for t in 0..m {
            for &h in &members {
                let x = group.mul(h, gt);
                new_members.push(x);
                decomposition.push((h, t));
            }
            gt = group.mul(gt, g);
        }
        let mut next = Vec::with_capacity(chars.len() * m);
        for chi in &chars {
            let zeta = chi[&gm];
            let root = Complex64::from_polar(1.0, zeta.arg() / m as f64);
            for j in 0..m {
                let c = root * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / m as f64);
                let map: HashMap<usize, Complex64> =
                    new_members.iter().zip(&decomposition).map(|(&x, &(h, t))| (x, chi[&h] * c.powi(t as i32))).collect();
                next.push(map);
            }
        }
        for &x in &new_members {
            in_h[x] = true;
        }
        members = new_members;
        chars = next;
    }
    Ok(chars.into_iter().map(|m| (0..n).map(|x| m[&x]).collect()).collect())
}

/// Character k of Z/n evaluated at group element i (element i is the residue i).
pub fn cyclic_character(n: usize, k: usize) -> impl Fn(&GroupPoint) -> Complex64 {
    move |g| {
        let x = g.as_finite().unwrap_or(0);
        Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * ((k * x) % n) as f64 / n as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LivesAtScaleReport {
    /// ‖f_{η^{1/a}}‖₂/‖f‖₂ and its threshold η^{1/(2a)}.
    pub averaging_ratio: f64,
    pub averaging_threshold: f64,
    pub averaging_ok: bool,
    /// ‖f_{η^{a²}} − f‖₂/‖f‖₂ and its threshold η^{a/2}.
    pub invariance_ratio: f64,
    pub invariance_threshold: f64,
    pub invariance_ok: bool,
}

impl LivesAtScaleReport {
    pub fn lives_at_scale(&self) -> bool {
        self.averaging_ok && self.invariance_ok
    }
}

/// f_r(x) = mean of f(x b) over b in the ball 1_r.
pub fn ball_average(group: &FiniteGroup, f: &[Complex64], r: f64) -> Vec<Complex64> {
    let ball = group.ball(r);
    let k = ball.len() as f64;
    (0..group.order()).map(|x| ball.iter().map(|&b| f[group.mul(x, b)]).sum::<Complex64>() / k).collect()
}

pub fn lives_at_scale(spec: &CompactGroupSpec, f: &[Complex64], eta: f64, a: f64) -> Result<LivesAtScaleReport> {
    let g = finite_of(spec)?;
    if !(a > 0.0 && a < 1.0) || !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Range(format!("need 0 < a < 1 and 0 < η < 1, got a = {a}, η = {eta}")));
    }
    if f.len() != g.order() {
        return Err(Error::Dimension("f must have one value per element".into()));
    }
    let nf = l2_norm(f);
    if nf == 0.0 {
        return Err(Error::InvalidParameter("f is zero".into()));
    }
    let coarse = ball_average(g, f, eta.powf(1.0 / a));
    let fine = ball_average(g, f, eta.powf(a * a));
    let diff: Vec<Complex64> = fine.iter().zip(f).map(|(x, y)| x - y).collect();
    let (ar, at) = (l2_norm(&coarse) / nf, eta.powf(1.0 / (2.0 * a)));
    let (ir, it) = (l2_norm(&diff) / nf, eta.powf(a / 2.0));
    Ok(LivesAtScaleReport {
        averaging_ratio: ar,
        averaging_threshold: at,
        averaging_ok: ar <= at + 1e-12,
        invariance_ratio: ir,
        invariance_threshold: it,
        invariance_ok: ir <= it + 1e-12,
    })
}

/// Finite symmetric generating list without duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSet {
    points: Vec<GroupPoint>,
}

impl GeneratorSet {
    pub fn new(spec: &CompactGroupSpec, points: Vec<GroupPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty);
        }
        let mut keys = std::collections::HashSet::new();
        for g in &points {
            spec.check(g)?;
            if !keys.insert(key_of(g)) {
                return Err(Error::InvalidParameter(format!("duplicate generator {}", key_of(g))));
            }
        }
        for g in &points {
            if !keys.contains(&key_of(&spec.inv(g)?)) {
                return Err(Error::InvalidParameter(format!("{} has no inverse in the set", key_of(g))));
            }
        }
        Ok(Self { points })
    }

    /// Closes a finite-group list under inverses and removes duplicates.
    pub fn symmetric_closure(group: &FiniteGroup, elems: &[usize]) -> Self {
        let mut v: Vec<usize> = elems.iter().flat_map(|&x| [x, group.inv(x)]).collect();
        v.sort_unstable();
        v.dedup();
        Self { points: v.into_iter().map(GroupPoint::Finite).collect() }
    }

    pub fn points(&self) -> &[GroupPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn indices(&self) -> Result<Vec<usize>> {
        self.points.iter().map(|g| g.as_finite().ok_or(Error::SpecMismatch)).collect()
    }

    /// P_Ω, the uniform measure on Ω.
    pub fn uniform_measure(&self, spec: &CompactGroupSpec) -> Result<FiniteSupportMeasure> {
        FiniteSupportMeasure::uniform(spec, &self.points)
    }
}

/// Exact sandwich constants for c₁ δ(Ω)²/|Ω| ≤ L•(P_Ω) ≤ c₂ δ(Ω): the largest c₁ and
/// smallest c₂ consistent with the computed bracket on δ(Ω).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichCheck {
    pub lyapunov_bullet: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementReport {
    pub per_generator: Vec<f64>,
    pub delta_f: f64,
    /// Minimum of δ_Ω over the candidate family: an upper bound for δ(Ω).
    pub delta_candidate: f64,
    pub candidate_family: String,
    /// √(2(1 − λ₊)) with λ₊ the top eigenvalue of T_{P_Ω} on L²₀: a lower bound for δ(Ω).
    pub delta_lower: f64,
    pub sandwich: Option<SandwichCheck>,
}

/// (w·f)(x) = f(w⁻¹x).
pub fn translate(group: &FiniteGroup, w: usize, f: &[Complex64]) -> Vec<Complex64> {
    let wi = group.inv(w);
    (0..group.order()).map(|x| f[group.mul(wi, x)]).collect()
}

fn delta_of(group: &FiniteGroup, omega: &[usize], f: &[Complex64]) -> (Vec<f64>, f64) {
    let nf = l2_norm(f);
    let per: Vec<f64> = omega
        .iter()
        .map(|&w| {
            let d: Vec<Complex64> = translate(group, w, f).iter().zip(f).map(|(a, b)| a - b).collect();
            l2_norm(&d) / nf
        })
        .collect();
    let m = per.iter().copied().fold(0.0, f64::max);
    (per, m)
}

/// Candidate functions for δ(Ω): characters on abelian groups, otherwise seeded
/// Gaussian functions projected off the constants.
fn candidates(group: &FiniteGroup, count: usize, seed: u64) -> (Vec<Vec<Complex64>>, &'static str) {
    if let Ok(chars) = abelian_characters(group) {
        return (chars.into_iter().skip(1).collect(), "characters");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = (0..count)
        .map(|_| {
            let mut f: Vec<Complex64> = (0..group.order()).map(|_| Complex64::new(rng.sample(StandardNormal), 0.0)).collect();
            let m = mean(&f);
            f.iter_mut().for_each(|z| *z -= m);
            f
        })
        .collect();
    (fs, "gaussian")
}

/// δ_Ω(f) per generator, together with the bracket on δ(Ω) and, when a spectral
/// report for P_Ω is supplied, the realized sandwich constants.
pub fn displacement(
    spec: &CompactGroupSpec,
    omega: &GeneratorSet,
    f: &[Complex64],
    spectral: Option<&SpectralReport>,
) -> Result<DisplacementReport> {
    let g = finite_of(spec)?;
    if f.len() != g.order() {
        return Err(Error::Dimension("f must have one value per element".into()));
    }
    let nf = l2_norm(f);
    if nf == 0.0 || mean(f).norm() > 1e-12 * nf.max(1.0) {
        return Err(Error::Precondition("f must be nonzero and orthogonal to constants".into()));
    }
    let idx = omega.indices()?;
    let (per_generator, delta_f) = delta_of(g, &idx, f);
    let (delta_candidate, candidate_family, delta_lower) = delta_omega(spec, omega, 64, 0)?;
    let sandwich = spectral.map(|s| {
        let lb = s.lyapunov_bullet();
        SandwichCheck {
            lyapunov_bullet: lb,
            c1: lb * omega.len() as f64 / (delta_candidate * delta_candidate),
            c2: if delta_lower > 0.0 { lb / delta_lower } else { f64::INFINITY },
        }
    });
    Ok(DisplacementReport { per_generator, delta_f, delta_candidate, candidate_family, delta_lower, sandwich })
}

/// (candidate upper bound, family tag, eigenvalue lower bound) for δ(Ω).
pub fn delta_omega(spec: &CompactGroupSpec, omega: &GeneratorSet, count: usize, seed: u64) -> Result<(f64, String, f64)> {
    let g = finite_of(spec)?;
    if g.order() < 2 {
        return Err(Error::InvalidParameter("L²₀ of the trivial group is zero".into()));
    }
    let idx = omega.indices()?;
    let (fs, family) = candidates(g, count, seed);
    let upper = fs.iter().map(|f| delta_of(g, &idx, f).1).fold(f64::INFINITY, f64::min);
    let p = omega.uniform_measure(spec)?.dense(g)?;
    let (ev, _) = l2_zero_spectrum(g, &p);
    let top = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lower = (2.0 * (1.0 - top)).max(0.0).sqrt();
    Ok((upper, family.to_string(), lower))
}

/// Ω_H = {s(w₁w₂H)⁻¹w₁w₂ : w₁, w₂ ∈ Ω} closed under inverses. `section` maps an
/// element x to s(xH) and must be constant on cosets with values in Ω ∩ xH.
pub fn schreier_generators<P, S>(group: &FiniteGroup, omega: &[usize], in_h: P, section: S) -> Result<Vec<usize>>
where
    P: Fn(usize) -> bool,
    S: Fn(usize) -> usize,
{
    let h: Vec<usize> = (0..group.order()).filter(|&x| in_h(x)).collect();
    let labels = group.left_coset_labels(&h)?;
    let mut rep_of_coset: HashMap<usize, usize> = HashMap::new();
    for x in 0..group.order() {
        let s = section(x);
        if !omega.contains(&s) {
            return Err(Error::Precondition(format!("section value {s} is not in Ω")));
        }
        if !in_h(group.mul(group.inv(s), x)) {
            return Err(Error::Precondition(format!("section value {s} is not in the coset of {x}")));
        }
        if *rep_of_coset.entry(labels[x]).or_insert(s) != s {
            return Err(Error::Precondition("section is not constant on a coset".into()));
        }
    }
    let mut out: Vec<usize> = Vec::new();
    for &w1 in omega {
        for &w2 in omega {
            let w = group.mul(w1, w2);
            let y = group.mul(group.inv(section(w)), w);
            out.push(y);
            out.push(group.inv(y));
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Section picking the smallest element of Ω in each coset of H.
pub fn canonical_section(group: &FiniteGroup, omega: &[usize], h: &[usize]) -> Result<Vec<usize>> {
    let labels = group.left_coset_labels(h)?;
    let mut best: HashMap<usize, usize> = HashMap::new();
    for &w in omega {
        let e = best.entry(labels[w]).or_insert(w);
        *e = (*e).min(w);
    }
    (0..group.order())
        .map(|x| best.get(&labels[x]).copied().ok_or_else(|| Error::Precondition(format!("coset of {x} misses Ω"))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordLengthSandwich {
    pub checked: usize,
    pub violations: usize,
    /// Whether Ω_H reaches every element of Γ ∩ H.
    pub generates: bool,
}

/// Checks (1/3)ℓ_Ω(x) ≤ ℓ_{Ω_H}(x) ≤ ℓ_Ω(x) for every x ∈ H reachable from Ω.
pub fn word_length_sandwich(group: &FiniteGroup, omega: &[usize], omega_h: &[usize], h: &[usize]) -> WordLengthSandwich {
    let la = group.word_lengths(omega);
    let lh = group.word_lengths(omega_h);
    let mut checked = 0;
    let mut violations = 0;
    let mut generates = true;
    for &x in h {
        let Some(a) = la[x] else { continue };
        checked += 1;
        match lh[x] {
            Some(b) if 3 * b >= a && b <= a => {}
            Some(_) => violations += 1,
            None => {
                generates = false;
                violations += 1;
            }
        }
    }
    WordLengthSandwich { checked, violations, generates }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquidistributionReport {
    /// |σ_η(X) − |X||.
    pub lhs: f64,
    /// λ(σ)(|X|/|1_η|)^{1/2}.
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Both sides of |σ_η(X) − |X|| ≤ λ(σ)(|X|/|1_η|)^{1/2} for σ = μ^(ℓ), computed exactly.
/// `lambda` is λ(μ); it is computed by the dense eigensolve when absent.
pub fn equidistribution_check<X>(
    spec: &CompactGroupSpec,
    mu: &FiniteSupportMeasure,
    l: usize,
    eta: f64,
    in_x: X,
    lambda: Option<f64>,
) -> Result<EquidistributionReport>
where
    X: Fn(usize) -> bool,
{
    let g = finite_of(spec)?;
    let lam = match lambda {
        Some(x) => x,
        None => spectral_gap_exact(spec, mu)?.lambda,
    };
    let n = g.order();
    let w = mu.dense(g)?;
    let mut sigma = vec![0.0; n];
    sigma[g.identity()] = 1.0;
    for _ in 0..l {
        sigma = convolve_dense(g, &sigma, &w);
    }
    let ball = g.ball(eta);
    let mut p = vec![0.0; n];
    for &b in &ball {
        p[b] = 1.0 / ball.len() as f64;
    }
    let smoothed = convolve_dense(g, &sigma, &p);
    let xs: Vec<usize> = (0..n).filter(|&x| in_x(x)).collect();
    let vol_x = xs.len() as f64 / n as f64;
    let vol_ball = ball.len() as f64 / n as f64;
    let lhs = (xs.iter().map(|&x| smoothed[x]).sum::<f64>() - vol_x).abs();
    // λ(δ_e) = 1 on a nontrivial group
    let lam_sigma = if l == 0 { 1.0 } else { lam.powi(l as i32) };
    let rhs = lam_sigma * (vol_x / vol_ball).sqrt();
    Ok(EquidistributionReport { lhs, rhs, slack: rhs - lhs, holds: lhs <= rhs + 1e-12 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::finite::sl2_mod;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn zn(n: usize) -> CompactGroupSpec {
        CompactGroupSpec::finite(FiniteGroup::cyclic(n).unwrap())
    }

    fn pm1(n: usize) -> FiniteSupportMeasure {
        FiniteSupportMeasure::uniform(&zn(n), &[GroupPoint::Finite(1), GroupPoint::Finite(n - 1)]).unwrap()
    }

    fn sl2_walk(p: u64) -> (CompactGroupSpec, FiniteSupportMeasure) {
        let (g, _) = sl2_mod(p, 1).unwrap();
        // elements 1 and 2 are the generators A and B
        let g = Arc::new(g);
        let gens = GeneratorSet::symmetric_closure(&g, &[1, 2]);
        let spec = CompactGroupSpec::FiniteGroup(g);
        let mu = gens.uniform_measure(&spec).unwrap();
        (spec, mu)
    }

    #[test]
    fn convolution_on_z5() {
        let s = zn(5);
        let mu = pm1(5);
        let sq = convolve(&s, &mu, &mu).unwrap();
        let w = sq.dense(finite_of(&s).unwrap()).unwrap();
        assert_eq!(w, vec![0.5, 0.0, 0.25, 0.25, 0.0]);
        assert!(sq.is_symmetric(&s, 1e-15));
        let e = FiniteSupportMeasure::dirac(&s, GroupPoint::Finite(0)).unwrap();
        assert_eq!(convolve(&s, &e, &mu).unwrap(), mu);
    }

    #[test]
    fn convolution_on_su2_merges() {
        let s = CompactGroupSpec::su(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = s.haar_sample(&mut rng);
        let gi = s.inv(&g).unwrap();
        let mu = FiniteSupportMeasure::uniform(&s, &[g, gi]).unwrap();
        let sq = convolve(&s, &mu, &mu).unwrap();
        assert_eq!(sq.len(), 3);
        assert!((sq.weight_of(&s, &s.identity()) - 0.5).abs() < 1e-12);
        let pw = convolution_power(&s, &mu, 6, 4).unwrap();
        assert!(pw.truncated_mass > 0.0);
        assert!(pw.measure.len() <= 4);
        let total: f64 = pw.measure.atoms().iter().map(|a| a.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn measure_validation() {
        let s = zn(3);
        assert!(FiniteSupportMeasure::new(&s, vec![(GroupPoint::Finite(0), 0.5)]).is_err());
        assert!(FiniteSupportMeasure::new(&s, vec![(GroupPoint::Finite(5), 1.0)]).is_err());
        assert!(FiniteSupportMeasure::new(&s, vec![(GroupPoint::Circle(0.0), 1.0)]).is_err());
        let m = FiniteSupportMeasure::new(&s, vec![(GroupPoint::Finite(1), 1.0)]).unwrap();
        assert!(!m.is_symmetric(&s, 1e-12));
        assert!(spectral_gap_exact(&s, &m).is_err());
    }

    #[test]
    fn gaps_on_cyclic_groups() {
        let s = zn(7);
        let all: Vec<GroupPoint> = (0..7).map(GroupPoint::Finite).collect();
        let haar = FiniteSupportMeasure::uniform(&s, &all).unwrap();
        assert!(spectral_gap_exact(&s, &haar).unwrap().lambda < 1e-12);
        assert!((spectral_gap_exact(&zn(4), &pm1(4)).unwrap().lambda - 1.0).abs() < 1e-12);
        let chars: Vec<_> = (1..5).map(|k| cyclic_character(5, k)).collect();
        let r = spectral_gap_abelian(&zn(5), &chars, &pm1(5)).unwrap();
        assert!((r.lambda - (PI / 5.0).cos()).abs() < 1e-14);
        let k1 = spectral_gap_abelian(&zn(5), &chars[..1], &pm1(5)).unwrap();
        assert!((k1.lambda - (2.0 * PI / 5.0).cos()).abs() < 1e-14);
        let delta = FiniteSupportMeasure::dirac(&zn(5), GroupPoint::Finite(0)).unwrap();
        assert!((spectral_gap_abelian(&zn(5), &chars, &delta).unwrap().lambda - 1.0).abs() < 1e-15);
        assert!(spectral_gap_abelian(&CompactGroupSpec::su(2), &chars, &delta).is_err());
    }

    #[test]
    fn sl2_z3_gap_and_power_oracle() {
        let (s, mu) = sl2_walk(3);
        let exact = spectral_gap_exact(&s, &mu).unwrap();
        assert_eq!(exact.dim, 23);
        assert!(exact.lambda < 1.0 && exact.lambda > 0.0);
        let pw = spectral_gap_power(&s, &mu, 400, 3).unwrap();
        assert!((pw.lambda - exact.lambda).abs() < 1e-6, "{} vs {}", pw.lambda, exact.lambda);
    }

    #[test]
    fn central_split_matches_full_solve() {
        let (s, mu) = sl2_walk(5);
        let g = finite_of(&s).unwrap();
        let w = mu.dense(g).unwrap();
        let (mut split, method) = l2_zero_spectrum(g, &w);
        assert_eq!(method, "dense-symmetric-central-split");
        let n = g.order();
        let full = DMatrix::from_fn(n, n, |x, y| w[g.mul(x, g.inv(y))] - 1.0 / n as f64);
        let mut ev: Vec<f64> = full.symmetric_eigenvalues().iter().copied().collect();
        let i = (0..ev.len()).min_by(|&a, &b| ev[a].abs().total_cmp(&ev[b].abs())).unwrap();
        ev.remove(i);
        split.sort_by(f64::total_cmp);
        ev.sort_by(f64::total_cmp);
        for (a, b) in split.iter().zip(&ev) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn characters_of_product_group() {
        let g = FiniteGroup::direct_product(&FiniteGroup::cyclic(2).unwrap(), &FiniteGroup::cyclic(4).unwrap()).unwrap();
        let chars = abelian_characters(&g).unwrap();
        assert_eq!(chars.len(), 8);
        for (i, a) in chars.iter().enumerate() {
            for x in 0..8 {
                for y in 0..8 {
                    assert!((a[g.mul(x, y)] - a[x] * a[y]).norm() < 1e-12);
                }
            }
            for (j, b) in chars.iter().enumerate() {
                let ip: Complex64 = a.iter().zip(b).map(|(u, v)| u * v.conj()).sum::<Complex64>() / 8.0;
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ip - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn lives_at_scale_on_cyclic_padic() {
        let g = FiniteGroup::cyclic_padic(5, 3).unwrap();
        let s = CompactGroupSpec::finite(g.clone());
        // character of exact level 3: nontrivial on 5²Z/5³
        let f: Vec<Complex64> = (0..125).map(|x| Complex64::from_polar(1.0, 2.0 * PI * x as f64 / 125.0)).collect();
        let a = 0.5;
        let eta = 5f64.powf(-1.0);
        let r = lives_at_scale(&s, &f, eta, a).unwrap();
        // η^{1/a} = 5^-2: the averaging ball is 5²Z/5³, on which f is nontrivial
        assert!(r.averaging_ratio < 1e-12);
        assert!(r.averaging_ok);
        let c = vec![Complex64::new(1.0, 0.0); 125];
        let rc = lives_at_scale(&s, &c, eta, a).unwrap();
        assert!((rc.averaging_ratio - 1.0).abs() < 1e-12 && !rc.averaging_ok);
        assert!(lives_at_scale(&s, &f, eta, 1.5).is_err());
        assert!(lives_at_scale(&s, &f, 2.0, 0.5).is_err());
    }

    #[test]
    fn displacement_examples() {
        let s2 = zn(2);
        let omega = GeneratorSet::new(&s2, vec![GroupPoint::Finite(0), GroupPoint::Finite(1)]).unwrap();
        let f = vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)];
        let r = displacement(&s2, &omega, &f, None).unwrap();
        assert!((r.delta_f - 2.0).abs() < 1e-14);
        assert!(r.delta_lower >= 1.0);

        let s5 = zn(5);
        let omega = GeneratorSet::new(&s5, vec![GroupPoint::Finite(1), GroupPoint::Finite(4)]).unwrap();
        let chi: Vec<Complex64> = (0..5).map(|x| cyclic_character(5, 1)(&GroupPoint::Finite(x))).collect();
        let r = displacement(&s5, &omega, &chi, None).unwrap();
        let want = (Complex64::from_polar(1.0, 2.0 * PI / 5.0) - 1.0).norm();
        assert!((r.delta_f - want).abs() < 1e-12);
        assert!(r.delta_lower <= r.delta_candidate + 1e-12);
        assert!(displacement(&s5, &omega, &[Complex64::new(1.0, 0.0); 5], None).is_err());

        // Ω inside 2Z/6 and f lifted from Z/6 → Z/2
        let s6 = zn(6);
        let omega = GeneratorSet::new(&s6, vec![GroupPoint::Finite(2), GroupPoint::Finite(4)]).unwrap();
        let f: Vec<Complex64> = (0..6).map(|x| Complex64::new(if x % 2 == 0 { 1.0 } else { -1.0 }, 0.0)).collect();
        let r = displacement(&s6, &omega, &f, None).unwrap();
        assert!(r.per_generator.iter().all(|&d| d < 1e-15));
    }

    #[test]
    fn full_set_displacement_bound() {
        for n in 2..=24 {
            let s = zn(n);
            let omega = GeneratorSet::new(&s, (0..n).map(GroupPoint::Finite).collect()).unwrap();
            let (upper, _, lower) = delta_omega(&s, &omega, 0, 0).unwrap();
            assert!(lower >= (2.0 / n as f64).sqrt());
            assert!(lower <= upper + 1e-12);
        }
    }

    #[test]
    fn sandwich_constants_are_positive() {
        let (s, mu) = sl2_walk(3);
        let g = finite_of(&s).unwrap();
        let omega = GeneratorSet::symmetric_closure(g, &[1, 2]);
        let spec = spectral_gap_exact(&s, &mu).unwrap();
        let mut f = vec![Complex64::new(0.0, 0.0); g.order()];
        f[1] = Complex64::new(1.0, 0.0);
        f[2] = Complex64::new(-1.0, 0.0);
        let r = displacement(&s, &omega, &f, Some(&spec)).unwrap();
        let sw = r.sandwich.unwrap();
        assert!(sw.c1 > 0.0 && sw.c2 > 0.0 && sw.c2.is_finite());
        assert_eq!(r.candidate_family, "gaussian");
    }

    #[test]
    fn schreier_sandwich_s3_and_z6() {
        let (s3, _) = FiniteGroup::symmetric(3).unwrap();
        let omega: Vec<usize> = (0..6).collect();
        let a3: Vec<usize> = (0..6).filter(|&x| s3.mul(x, s3.mul(x, x)) == s3.identity()).collect();
        assert_eq!(a3.len(), 3);
        let sec = canonical_section(&s3, &omega, &a3).unwrap();
        let oh = schreier_generators(&s3, &omega, |x| a3.contains(&x), |x| sec[x]).unwrap();
        let w = word_length_sandwich(&s3, &omega, &oh, &a3);
        assert_eq!((w.checked, w.violations, w.generates), (3, 0, true));

        let z6 = FiniteGroup::cyclic(6).unwrap();
        let omega = vec![0, 1, 5];
        let h = vec![0, 2, 4];
        let sec = canonical_section(&z6, &omega, &h).unwrap();
        let oh = schreier_generators(&z6, &omega, |x| x % 2 == 0, |x| sec[x]).unwrap();
        let w = word_length_sandwich(&z6, &omega, &oh, &h);
        assert_eq!((w.checked, w.violations, w.generates), (3, 0, true));
        assert!(canonical_section(&z6, &[1, 5], &h).is_err());
        assert!(schreier_generators(&z6, &omega, |x| x % 2 == 0, |_| 1).is_err());
    }

    #[test]
    fn equidistribution_examples() {
        let s = zn(7);
        let mu = pm1(7);
        let x = |i: usize| i < 3;
        for l in [1, 20] {
            let r = equidistribution_check(&s, &mu, l, 0.5, x, None).unwrap();
            assert!(r.holds && r.slack > 0.0, "{r:?}");
        }
        let e = FiniteSupportMeasure::dirac(&s, GroupPoint::Finite(0)).unwrap();
        let r = equidistribution_check(&s, &e, 0, 0.5, |_| true, Some(1.0)).unwrap();
        assert!(r.lhs < 1e-15);
    }

    proptest! {
        #[test]
        fn young_inequality(n in 2usize..20, seed in 0u64..1000) {
            let g = FiniteGroup::cyclic(n).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut mu: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let t: f64 = mu.iter().sum();
            mu.iter_mut().for_each(|x| *x /= t);
            let f: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
            prop_assert!(l2_norm(&convolve_function(&g, &mu, &f)) <= l2_norm(&f) + 1e-10);
        }

        #[test]
        fn exact_gap_matches_characters(n in 2usize..16, k in 1usize..8) {
            let s = zn(n);
            let k = k % n;
            let mut pts = vec![GroupPoint::Finite(k), GroupPoint::Finite((n - k) % n), GroupPoint::Finite(1), GroupPoint::Finite(n - 1)];
            pts.sort_by_key(|p| p.as_finite());
            pts.dedup();
            let mu = FiniteSupportMeasure::uniform(&s, &pts).unwrap();
            let chars: Vec<_> = (1..n).map(|j| cyclic_character(n, j)).collect();
            let a = spectral_gap_abelian(&s, &chars, &mu).unwrap().lambda;
            let e = spectral_gap_exact(&s, &mu).unwrap().lambda;
            prop_assert!((a - e).abs() < 1e-10);
        }

        #[test]
        fn gap_of_power_is_power_of_gap(n in 3usize..12, l in 1usize..5) {
            let s = zn(n);
            let mu = pm1(n);
            let lam = spectral_gap_exact(&s, &mu).unwrap().lambda;
            let pw = convolution_power(&s, &mu, l, usize::MAX).unwrap();
            prop_assert!(pw.truncated_mass == 0.0);
            let lam_l = spectral_gap_exact(&s, &pw.measure).unwrap().lambda;
            prop_assert!((lam_l - lam.powi(l as i32)).abs() < 1e-8);
        }
    }
}
