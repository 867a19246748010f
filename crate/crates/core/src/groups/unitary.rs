//! SU(n) helpers: Haar sampling, operator norm, principal log/exp and su(2) coordinates.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// a + b iσz + c iσy + d iσx.
pub fn su2_from_quaternion(q: [f64; 4]) -> CMat {
    let [a, b, cq, d] = q;
    CMat::from_row_slice(2, 2, &[c(a, b), c(cq, d), c(-cq, d), c(a, -b)])
}

pub fn quaternion(g: &CMat) -> [f64; 4] {
    [g[(0, 0)].re, g[(0, 0)].im, g[(0, 1)].re, g[(0, 1)].im]
}

pub fn haar_su2<R: Rng + ?Sized>(rng: &mut R) -> CMat {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return su2_from_quaternion(q.map(|x| x / n));
        }
    }
}

/// Haar on SU(n): QR of a complex Ginibre matrix with phase correction, then the
/// first column is divided by the determinant.
pub fn haar_sun<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMat {
    if n == 2 {
        return haar_su2(rng);
    }
    let z = CMat::from_fn(n, n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c(re, im) / 2f64.sqrt()
    });
    let qr = z.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { c(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= ph;
        }
    }
    let det = q.determinant();
    let fix = det.conj() / det.norm();
    for i in 0..n {
        q[(i, 0)] *= fix;
    }
    q
}

/// Largest singular value.
pub fn op_norm(m: &CMat) -> f64 {
    if m.nrows() == 2 && m.ncols() == 2 {
        let f2: f64 = m.iter().map(|z| z.norm_sqr()).sum();
        let det = (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]).norm();
        let disc = (f2 * f2 - 4.0 * det * det).max(0.0);
        return ((f2 + disc.sqrt()) / 2.0).sqrt();
    }
    m.clone().singular_values().max()
}

pub fn dagger(m: &CMat) -> CMat {
    m.adjoint()
}

pub fn is_special_unitary(m: &CMat, tol: f64) -> bool {
    let n = m.nrows();
    m.ncols() == n && op_norm(&(m * m.adjoint() - identity(n))) <= tol && (m.determinant() - c(1.0, 0.0)).norm() <= tol
}

/// Principal logarithm of a unitary matrix (eigenvalues off the negative axis).
pub fn unitary_log(g: &CMat) -> Result<CMat> {
    let n = g.nrows();
    if n == 2 {
        let [a, b, cq, d] = quaternion(g);
        let s = (b * b + cq * cq + d * d).sqrt();
        if a <= -1.0 + 1e-12 {
            return Err(Error::Precondition("eigenvalue -1: principal log undefined".into()));
        }
        let theta = s.atan2(a);
        let f = if s < 1e-300 { 1.0 } else { theta / s };
        let x = g - identity(2) * c(a, 0.0);
        return Ok(x * c(f, 0.0));
    }
    let schur = nalgebra::Schur::new(g.clone());
    let (q, t) = schur.unpack();
    let mut d = CMat::zeros(n, n);
    for i in 0..n {
        let z = t[(i, i)];
        if (z + c(1.0, 0.0)).norm() < 1e-12 {
            return Err(Error::Precondition("eigenvalue -1: principal log undefined".into()));
        }
        d[(i, i)] = c(z.norm().ln(), z.arg());
    }
    Ok(&q * d * q.adjoint())
}

/// Matrix exponential; closed form on su(2).
pub fn expm(x: &CMat) -> CMat {
    if x.nrows() == 2 {
        let skew = (x + x.adjoint()).iter().map(|z| z.norm()).sum::<f64>() < 1e-13
            && (x[(0, 0)] + x[(1, 1)]).norm() < 1e-13;
        if skew {
            let s = (x[(0, 0)].norm_sqr() + x[(0, 1)].norm_sqr()).sqrt();
            let sinc = if s < 1e-8 { 1.0 - s * s / 6.0 } else { s.sin() / s };
            return identity(2) * c(s.cos(), 0.0) + x * c(sinc, 0.0);
        }
    }
    x.clone().exp()
}

/// Basis e_k = -i σ_k of su(2) (k = x, y, z), so [e_j, e_k] = 2 ε_jkl e_l.
pub fn su2_basis() -> [CMat; 3] {
    let sx = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
    let sy = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)]);
    let sz = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]);
    [sx * -I, sy * -I, sz * -I]
}

pub fn su2_from_coords(v: &[f64; 3]) -> CMat {
    let b = su2_basis();
    &b[0] * c(v[0], 0.0) + &b[1] * c(v[1], 0.0) + &b[2] * c(v[2], 0.0)
}

/// Coordinates c_k = Re tr(i σ_k X) / 2.
pub fn su2_coords(x: &CMat) -> [f64; 3] {
    let b = su2_basis();
    // i σ_k = -e_k
    std::array::from_fn(|k| -(&b[k] * x).trace().re / 2.0)
}

pub fn bracket(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

/// ‖g − I‖ on SU(2) equals the chord 2 sin(θ/2) of the rotation angle θ.
pub fn dist_to_identity(g: &CMat) -> f64 {
    op_norm(&(g - identity(g.nrows())))
}

/// Uniform point of the SU(2) ball {‖g − I‖ ≤ r} by rejection from Haar
/// restricted to the polar cap (uniform direction, angle density ∝ sin²).
pub fn su2_ball_sample<R: Rng + ?Sized>(r: f64, rng: &mut R) -> CMat {
    let theta0 = if r >= 2.0 { std::f64::consts::PI } else { 2.0 * (r / 2.0).asin() };
    let peak = if theta0 > std::f64::consts::FRAC_PI_2 { 1.0 } else { theta0.sin().powi(2) };
    let th = loop {
        let t = rng.random::<f64>() * theta0;
        if rng.random::<f64>() * peak <= t.sin().powi(2) {
            break t;
        }
    };
    let dir: [f64; 3] = loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            break v.map(|x| x / n);
        }
    };
    su2_from_quaternion([th.cos(), th.sin() * dir[0], th.sin() * dir[1], th.sin() * dir[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn su2_bracket_constants() {
        let e = su2_basis();
        let br = bracket(&e[0], &e[1]);
        let diff = &br - &e[2] * c(2.0, 0.0);
        assert!(op_norm(&diff) < 1e-14);
        let v = [0.3, -0.2, 0.7];
        let back = su2_coords(&su2_from_coords(&v));
        for k in 0..3 {
            assert!((back[k] - v[k]).abs() < 1e-14);
        }
        assert!((op_norm(&su2_from_coords(&v)) - (0.09f64 + 0.04 + 0.49).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn haar_samples_are_special_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [2, 3, 4] {
            for _ in 0..20 {
                assert!(is_special_unitary(&haar_sun(n, &mut rng), 1e-12));
            }
        }
    }

    #[test]
    fn op_norm_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = haar_su2(&mut rng) * c(0.7, 0.1) + haar_su2(&mut rng);
            let svd = a.clone().singular_values().max();
            assert!((op_norm(&a) - svd).abs() < 1e-12);
        }
    }

    #[test]
    fn log_exp_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 3] {
            for _ in 0..20 {
                let g = haar_sun(n, &mut rng);
                let x = unitary_log(&g).unwrap();
                let back = expm(&x);
                assert!(op_norm(&(back - &g)) < 1e-10);
            }
        }
    }

    #[test]
    fn ball_samples_stay_in_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let g = su2_ball_sample(0.1, &mut rng);
            assert!(dist_to_identity(&g) <= 0.1 + 1e-12);
        }
    }
}
