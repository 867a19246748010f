//! The digit-space coupling of Haar measures on R/Z and Z_p obtained by
//! reversing dyadic blocks of digits, and the characters γ_j whose Fourier
//! coefficients tend to 1.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigitVector {
    p: u64,
    digits: Vec<u8>,
}

impl DigitVector {
    pub fn new(p: u64, digits: Vec<u8>) -> Result<Self> {
        if !(2..=255).contains(&p) {
            return Err(Error::InvalidParameter(format!("p must lie in 2..=255, got {p}")));
        }
        if digits.len() < 2 {
            return Err(Error::InvalidParameter("need at least two digits".into()));
        }
        if digits.iter().any(|&d| d as u64 >= p) {
            return Err(Error::InvalidParameter(format!("digit out of range for p={p}")));
        }
        Ok(Self { p, digits })
    }

    pub fn zeros(p: u64, m: usize) -> Result<Self> {
        Self::new(p, vec![0; m])
    }

    pub fn random<R: Rng + ?Sized>(p: u64, m: usize, rng: &mut R) -> Result<Self> {
        Self::new(p, (0..m).map(|_| rng.random_range(0..p) as u8).collect())
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    pub fn digits(&self) -> &[u8] {
        &self.digits
    }
}

/// Σ z_i p^{−i−1}, accumulated from the least significant digit.
pub fn f_infinity(z: &DigitVector) -> f64 {
    digits_to_fraction(z.p, &z.digits)
}

fn digits_to_fraction(p: u64, digits: &[u8]) -> f64 {
    let pf = p as f64;
    digits.iter().rev().fold(0.0, |acc, &d| (acc + d as f64) / pf)
}

/// Σ z_i p^i reduced mod p^k, for the k ≤ M with p^k ≤ 2^64.
pub fn f_p(z: &DigitVector, k: usize) -> Result<u64> {
    if k > z.len() {
        return Err(Error::Range(format!("only {} digits available", z.len())));
    }
    if (z.p as u128).checked_pow(k as u32).is_none_or(|q| q > 1u128 << 64) {
        return Err(Error::TooLarge(format!("{}^{k} exceeds 2^64", z.p)));
    }
    Ok(z.digits[..k].iter().rev().fold(0u128, |acc, &d| acc * z.p as u128 + d as u128) as u64)
}

/// σ(0) = 0, σ(1) = 1, σ(i + 2^j) = 2^{j+1} − i − 1 for 0 ≤ i < 2^j.
pub fn sigma_perm(i: i64) -> Result<i64> {
    if i < 0 {
        return Err(Error::InvalidParameter(format!("negative index {i}")));
    }
    if i < 2 {
        return Ok(i);
    }
    let j = 63 - i.leading_zeros() as i64;
    let block = 1i64 << j;
    Ok(2 * block - (i - block) - 1)
}

/// A point of the coupling: the base-p digits of x (most significant first)
/// and of y (least significant first).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingSample {
    pub x: DigitVector,
    pub y: DigitVector,
}

impl CouplingSample {
    pub fn x_value(&self) -> f64 {
        f_infinity(&self.x)
    }

    pub fn y_mod(&self, k: usize) -> Result<u64> {
        f_p(&self.y, k)
    }

    /// x_{i+2^j} = y_{2^{j+1}−i−1} on every complete block.
    pub fn support_relation_holds(&self) -> bool {
        let m = self.x.len();
        (2..m).all(|i| {
            let s = sigma_perm(i as i64).expect("non-negative") as usize;
            s >= m || self.x.digits[i] == self.y.digits[s]
        })
    }
}

fn check_block_aligned(m: usize) -> Result<()> {
    if m < 4 || !m.is_power_of_two() {
        return Err(Error::InvalidParameter(format!("M must be a power of two >= 4, got {m}")));
    }
    Ok(())
}

/// (f_∞(z), f_p(w)) with w_i = z_{σ(i)}.
pub fn coupling_from_digits(z: &DigitVector) -> Result<CouplingSample> {
    check_block_aligned(z.len())?;
    let w = (0..z.len()).map(|i| z.digits[sigma_perm(i as i64).expect("non-negative") as usize]).collect();
    Ok(CouplingSample { x: z.clone(), y: DigitVector::new(z.p, w)? })
}

pub fn sample_mu<R: Rng + ?Sized>(rng: &mut R, p: u64, m: usize) -> Result<CouplingSample> {
    check_block_aligned(m)?;
    coupling_from_digits(&DigitVector::random(p, m, rng)?)
}

/// Independent Haar samples on both factors.
pub fn sample_product<R: Rng + ?Sized>(rng: &mut R, p: u64, m: usize) -> Result<CouplingSample> {
    check_block_aligned(m)?;
    Ok(CouplingSample { x: DigitVector::random(p, m, rng)?, y: DigitVector::random(p, m, rng)? })
}

fn e(t: f64) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI * t)
}

/// Phase of α_j(x) = e(p^{2^j} x) minus the phase of β_j(y) = e_p(p^{−2^{j+1}} y), in (−1, 1).
pub fn gamma_phase(s: &CouplingSample, j: u32) -> Result<f64> {
    let m = s.x.len();
    let b = 1usize.checked_shl(j).filter(|b| 2 * b <= m).ok_or_else(|| Error::Range(format!("j={j} needs 2^(j+1) <= M={m}")))?;
    if s.y.len() != m || s.x.p != s.y.p {
        return Err(Error::Dimension("x and y digits disagree in length or prime".into()));
    }
    let alpha = digits_to_fraction(s.x.p, &s.x.digits[b..]);
    let low: Vec<u8> = s.y.digits[..2 * b].iter().rev().copied().collect();
    let beta = digits_to_fraction(s.y.p, &low);
    Ok(alpha - beta)
}

/// γ_j = α_j(x)/β_j(y).
pub fn gamma_j(s: &CouplingSample, j: u32) -> Result<Complex64> {
    Ok(e(gamma_phase(s, j)?))
}

/// e_{∞,1}(x)·conj(e_{p,1/p}(y)).
pub fn control_character(s: &CouplingSample) -> Complex64 {
    e(s.x_value() - s.y.digits[0] as f64 / s.y.p as f64)
}

/// C with |γ_j − 1| ≤ C p^{−2^j} on the support, from an exhaustive
/// enumeration of one block at j = 1 plus the allowance for the digits
/// beyond it.
pub fn calibrate_decay_constant(p: u64) -> Result<f64> {
    // j = 1: the phase depends on x_4..x_7 and y_0, y_1; later digits move it by < p^{-4}.
    let j = 1u32;
    let m = 8usize;
    let free: Vec<usize> = vec![0, 1, 4, 5, 6, 7];
    let count = (p as usize).checked_pow(free.len() as u32).filter(|&c| c <= 1 << 24).ok_or_else(|| Error::TooLarge(format!("p={p}")))?;
    let mut worst = 0.0f64;
    for code in 0..count {
        let mut z = vec![0u8; m];
        let mut c = code;
        for &pos in &free {
            // y_0 = z_0 and y_1 = z_1 since σ fixes 0 and 1
            z[pos] = (c % p as usize) as u8;
            c /= p as usize;
        }
        let s = coupling_from_digits(&DigitVector::new(p, z)?)?;
        worst = worst.max(gamma_phase(&s, j)?.abs());
    }
    let scale = (p as f64).powi(1 << j);
    let tail = (p as f64).powi(-(1 << (j + 1)));
    Ok(2.0 * PI * (worst * scale + tail))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CouplingKind {
    BlockReversal,
    Product,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub j: u32,
    pub max_deviation: f64,
    pub bound: f64,
    pub fourier_abs: f64,
    pub fourier: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub p: u64,
    pub m: usize,
    pub n: usize,
    pub coupling: CouplingKind,
    pub constant: f64,
    pub rows: Vec<DecayRow>,
    pub control_fourier_abs: f64,
    pub support_violations: usize,
}

impl DecayReport {
    pub fn decay_holds(&self) -> bool {
        self.rows.iter().all(|r| r.max_deviation <= r.bound)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["j", "max_abs_gamma_minus_1", "bound", "abs_mu_hat"]).map_err(|e| Error::Io(e.to_string()))?;
        for r in &self.rows {
            wr.write_record([r.j.to_string(), format!("{:e}", r.max_deviation), format!("{:e}", r.bound), format!("{}", r.fourier_abs)]).map_err(|e| Error::Io(e.to_string()))?;
        }
        wr.flush().map_err(|e| Error::Io(e.to_string()))
    }
}

fn check_decay_params(p: u64, m: usize, j_max: u32, n: usize) -> Result<()> {
    check_block_aligned(m)?;
    if j_max == 0 || j_max >= 60 || (1usize << (j_max + 1)) > m {
        return Err(Error::Range(format!("need 1 <= j_max and 2^(j_max+1) <= M, got j_max={j_max}, M={m}")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("N must be positive".into()));
    }
    if !(2..=255).contains(&p) {
        return Err(Error::InvalidParameter(format!("p={p}")));
    }
    Ok(())
}

/// Samples drawn in chunks of this size use independent ChaCha streams.
pub const STREAM_CHUNK: usize = 4096;

fn for_each_sample(seed: u64, p: u64, m: usize, n: usize, kind: CouplingKind, mut f: impl FnMut(&CouplingSample)) -> Result<()> {
    for (chunk, start) in (0..n).step_by(STREAM_CHUNK).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chunk as u64);
        for _ in start..(start + STREAM_CHUNK).min(n) {
            let s = match kind {
                CouplingKind::BlockReversal => sample_mu(&mut rng, p, m)?,
                CouplingKind::Product => sample_product(&mut rng, p, m)?,
            };
            f(&s);
        }
    }
    Ok(())
}

pub fn decay_report(seed: u64, p: u64, m: usize, j_max: u32, n: usize, kind: CouplingKind) -> Result<DecayReport> {
    check_decay_params(p, m, j_max, n)?;
    let constant = calibrate_decay_constant(p)?;
    let js: Vec<u32> = (1..=j_max).collect();
    let mut maxdev = vec![0.0f64; js.len()];
    let mut sums = vec![Complex64::new(0.0, 0.0); js.len()];
    let mut control = Complex64::new(0.0, 0.0);
    let mut support_violations = 0;
    let mut err = None;
    for_each_sample(seed, p, m, n, kind, |s| {
        for (idx, &j) in js.iter().enumerate() {
            match gamma_j(s, j) {
                Ok(g) => {
                    maxdev[idx] = maxdev[idx].max((g - 1.0).norm());
                    sums[idx] += g;
                }
                Err(e) => err = Some(e),
            }
        }
        control += control_character(s);
        support_violations += usize::from(!s.support_relation_holds());
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let nf = n as f64;
    let rows = js
        .iter()
        .enumerate()
        .map(|(idx, &j)| {
            let mean = sums[idx] / nf;
            DecayRow { j, max_deviation: maxdev[idx], bound: constant * (p as f64).powi(-(1 << j)), fourier_abs: mean.norm(), fourier: (mean.re, mean.im) }
        })
        .collect();
    Ok(DecayReport { p, m, n, coupling: kind, constant, rows, control_fourier_abs: (control / nf).norm(), support_violations })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// |μ̂(γ_j)| ≥ 1 − C′p^{−2^j} − 4/√N for every j.
    NoGapWitnessed,
    Refuted,
    /// 4/√N is too wide to separate anything.
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub verdict: Verdict,
    pub band: f64,
    pub thresholds: Vec<f64>,
    pub report: DecayReport,
}

pub const WITNESS_CONSTANT: f64 = 10.0;

pub fn no_gap_witness(seed: u64, p: u64, m: usize, j_max: u32, n: usize, kind: CouplingKind) -> Result<WitnessReport> {
    let report = decay_report(seed, p, m, j_max, n, kind)?;
    let band = 4.0 / (n as f64).sqrt();
    let thresholds: Vec<f64> = report.rows.iter().map(|r| 1.0 - WITNESS_CONSTANT * (p as f64).powi(-(1 << r.j)) - band).collect();
    let verdict = if band >= 0.5 {
        Verdict::Inconclusive
    } else if report.rows.iter().zip(&thresholds).all(|(r, t)| r.fourier_abs >= *t) {
        Verdict::NoGapWitnessed
    } else {
        Verdict::Refuted
    };
    Ok(WitnessReport { verdict, band, thresholds, report })
}

/// Kolmogorov survival function Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let s: f64 = (1..=100).map(|k| {
        let kf = k as f64;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        sign * (-2.0 * kf * kf * lambda * lambda).exp()
    }).sum();
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformityTest {
    pub statistic: f64,
    pub p_value: f64,
}

impl UniformityTest {
    pub fn passes(&self, level: f64) -> bool {
        self.p_value > level
    }
}

/// One-sample Kolmogorov–Smirnov test against U[0, 1) with the asymptotic
/// distribution of √N·D (Stephens' small-sample correction).
pub fn ks_uniform(samples: &[f64]) -> Result<UniformityTest> {
    if samples.is_empty() {
        return Err(Error::Empty);
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs.iter().enumerate().map(|(i, &x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n)).fold(0.0, f64::max);
    let sn = n.sqrt();
    Ok(UniformityTest { statistic: d, p_value: kolmogorov_q((sn + 0.12 + 0.11 / sn) * d) })
}

/// Pearson chi-square test of uniformity over `bins` categories.
pub fn chi_square_uniform(counts: &[u64]) -> Result<UniformityTest> {
    if counts.len() < 2 {
        return Err(Error::InvalidParameter("need at least two bins".into()));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Empty);
    }
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(UniformityTest { statistic: stat, p_value: dist.sf(stat) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub circle: UniformityTest,
    pub padic: UniformityTest,
}

/// KS on x and chi-square on y mod p³ for N samples of the coupling.
pub fn marginal_tests(seed: u64, p: u64, m: usize, n: usize) -> Result<MarginalReport> {
    check_block_aligned(m)?;
    let bins = (p as usize).pow(3);
    let mut xs = Vec::with_capacity(n);
    let mut counts = vec![0u64; bins];
    let mut err = None;
    for_each_sample(seed, p, m, n, CouplingKind::BlockReversal, |s| {
        xs.push(s.x_value());
        match s.y_mod(3) {
            Ok(y) => counts[y as usize] += 1,
            Err(e) => err = Some(e),
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(MarginalReport { circle: ks_uniform(&xs)?, padic: chi_square_uniform(&counts)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn digits(p: u64, d: &[u8]) -> DigitVector {
        DigitVector::new(p, d.to_vec()).unwrap()
    }

    #[test]
    fn digit_maps() {
        assert_eq!(f_infinity(&DigitVector::zeros(2, 8).unwrap()), 0.0);
        assert_eq!(f_infinity(&digits(2, &[1, 0, 0, 0])), 0.5);
        assert_eq!(f_p(&digits(2, &[1, 1, 0, 0]), 4).unwrap(), 3);
        assert_eq!(f_p(&DigitVector::zeros(5, 8).unwrap(), 8).unwrap(), 0);
        assert!(f_p(&DigitVector::zeros(5, 64).unwrap(), 64).is_err());
        assert!(DigitVector::new(3, vec![0, 3]).is_err());
    }

    #[test]
    fn sigma_values() {
        assert_eq!(sigma_perm(0).unwrap(), 0);
        assert_eq!(sigma_perm(1).unwrap(), 1);
        assert_eq!((sigma_perm(2).unwrap(), sigma_perm(3).unwrap()), (3, 2));
        assert_eq!((sigma_perm(4).unwrap(), sigma_perm(7).unwrap()), (7, 4));
        assert!(sigma_perm(-1).is_err());
        for i in 0..1 << 10 {
            let s = sigma_perm(i).unwrap();
            assert!(s < 1 << 10);
            assert_eq!(sigma_perm(s).unwrap(), i);
        }
    }

    #[test]
    fn coupling_examples() {
        let s = coupling_from_digits(&DigitVector::zeros(2, 8).unwrap()).unwrap();
        assert_eq!((s.x_value(), s.y_mod(8).unwrap()), (0.0, 0));
        let mut z = vec![0u8; 8];
        z[2] = 1;
        let s = coupling_from_digits(&digits(2, &z)).unwrap();
        assert_eq!((s.x_value(), s.y_mod(8).unwrap()), (0.125, 8));
        assert!((gamma_j(&s, 1).unwrap() - 1.0).norm() < 1e-15);
        assert!(coupling_from_digits(&DigitVector::zeros(2, 6).unwrap()).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            assert!(sample_mu(&mut rng, 3, 16).unwrap().support_relation_holds());
        }
    }

    #[test]
    fn gamma_is_nontrivial_off_support() {
        for j in 1..3u32 {
            let m = 16;
            let mut xd = vec![0u8; m];
            xd[1 << j] = 1;
            let s = CouplingSample { x: digits(2, &xd), y: DigitVector::zeros(2, m).unwrap() };
            assert!((gamma_j(&s, j).unwrap() - 1.0).norm() > 1.0);
        }
        let s = coupling_from_digits(&DigitVector::zeros(2, 8).unwrap()).unwrap();
        assert_eq!(gamma_j(&s, 1).unwrap(), Complex64::new(1.0, 0.0));
        assert!(gamma_j(&s, 3).is_err());
    }

    #[test]
    fn decay_constant_is_two_pi_at_p2() {
        let c = calibrate_decay_constant(2).unwrap();
        assert!((c - 2.0 * PI).abs() < 1e-12, "{c}");
    }

    #[test]
    fn decay_and_witness() {
        let rep = decay_report(1, 2, 64, 4, 20_000, CouplingKind::BlockReversal).unwrap();
        assert!(rep.decay_holds());
        assert_eq!(rep.support_violations, 0);
        for w in rep.rows.windows(2) {
            assert!(w[1].fourier_abs > w[0].fourier_abs);
        }
        assert!(rep.control_fourier_abs <= 0.9);
        let full = no_gap_witness(1, 2, 8, 2, 20_000, CouplingKind::BlockReversal).unwrap();
        assert_eq!(full.report.rows.last().unwrap().j, 2);
        assert_eq!(full.verdict, Verdict::NoGapWitnessed);
        assert_eq!(no_gap_witness(2, 2, 64, 1, 20_000, CouplingKind::BlockReversal).unwrap().verdict, Verdict::NoGapWitnessed);
        let prod = no_gap_witness(3, 2, 64, 4, 20_000, CouplingKind::Product).unwrap();
        assert_eq!(prod.verdict, Verdict::Refuted);
        assert!(prod.report.rows.iter().all(|r| r.fourier_abs < 0.05));
        assert_eq!(no_gap_witness(4, 2, 64, 2, 10, CouplingKind::BlockReversal).unwrap().verdict, Verdict::Inconclusive);
        assert!(decay_report(1, 2, 8, 3, 10, CouplingKind::BlockReversal).is_err());
    }

    #[test]
    fn decay_report_is_deterministic() {
        let a = decay_report(9, 3, 16, 2, 5000, CouplingKind::BlockReversal).unwrap();
        let b = decay_report(9, 3, 16, 2, 5000, CouplingKind::BlockReversal).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("j,max_abs_gamma_minus_1,bound,abs_mu_hat\n1,"));
    }

    #[test]
    fn uniformity_tests_reject_biased_data() {
        let skewed: Vec<f64> = (0..1000).map(|i| (i as f64 / 1000.0).powi(2)).collect();
        assert!(!ks_uniform(&skewed).unwrap().passes(0.01));
        let grid: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_uniform(&grid).unwrap().passes(0.01));
        assert!(!chi_square_uniform(&[100, 100, 100, 200]).unwrap().passes(0.01));
        assert!(chi_square_uniform(&[100, 101, 99, 100]).unwrap().passes(0.01));
    }

    #[test]
    fn marginals_are_uniform() {
        for p in [2, 3, 5] {
            let rep = marginal_tests(11, p, 64, 20_000).unwrap();
            assert!(rep.circle.passes(0.01) && rep.padic.passes(0.01), "p={p}: {rep:?}");
        }
    }

    proptest! {
        #[test]
        fn sigma_is_an_involution_on_initial_segments(k in 1u32..20, i in 0i64..1 << 20) {
            let i = i % (1 << k);
            let s = sigma_perm(i).unwrap();
            prop_assert!(s < 1 << k.max(1));
            prop_assert_eq!(sigma_perm(s).unwrap(), i);
        }

        #[test]
        fn pointwise_decay_on_support(seed in 0u64..1_000_000, p in prop::sample::select(vec![2u64, 3, 5])) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = sample_mu(&mut rng, p, 32).unwrap();
            let c = calibrate_decay_constant(p).unwrap();
            for j in 1..=4u32 {
                prop_assert!((gamma_j(&s, j).unwrap() - 1.0).norm() <= c * (p as f64).powi(-(1 << j)));
            }
        }
    }
}
