//! Dense 3x3 kernels shared by every other module.
//!
//! The SVD is a one-sided Jacobi eigen-solve on `mᵀm` followed by a
//! Gram-Schmidt pass over `m·v`, which keeps reconstruction accurate even
//! when a singular value collapses.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

#[derive(Debug, Clone, Copy)]
pub struct Svd3 {
    pub u: Mat3,
    pub sigma: Vec3,
    pub v: Mat3,
}

#[derive(Debug, Clone, Copy)]
pub struct Polar {
    pub r: Mat3,
    pub s: Mat3,
}

/// A proper rigid motion `x -> r·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub r: Mat3,
    pub t: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { r: Mat3::identity(), t: Vec3::zeros() }
    }

    pub fn new(r: Mat3, t: Vec3) -> Self {
        Self { r, t }
    }

    /// Rotation by `angle` about `axis` through `pivot`.
    pub fn about_pivot(axis: &Vec3, angle: f64, pivot: &Vec3) -> Self {
        let r = rotation(axis, angle);
        Self { r, t: pivot - r * pivot }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.r * x + self.t
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform { r: self.r * other.r, t: self.r * other.t + self.t }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.r.transpose();
        RigidTransform { r: rt, t: -(rt * self.t) }
    }

    pub fn is_identity(&self) -> bool {
        self.r == Mat3::identity() && self.t == Vec3::zeros()
    }

    /// Row-major rotation followed by translation.
    pub fn to_array(&self) -> [f64; 12] {
        let mut a = [0.0; 12];
        for i in 0..3 {
            for j in 0..3 {
                a[3 * i + j] = self.r[(i, j)];
            }
            a[9 + i] = self.t[i];
        }
        a
    }

    pub fn from_array(a: &[f64]) -> Result<Self> {
        if a.len() != 12 {
            return Err(Error::InvalidInput(format!("rigid transform needs 12 values, got {}", a.len())));
        }
        let r = Mat3::from_row_slice(&a[..9]);
        let t = Vec3::new(a[9], a[10], a[11]);
        Ok(Self { r, t })
    }
}

/// Rodrigues rotation; `axis` need not be normalised.
pub fn rotation(axis: &Vec3, angle: f64) -> Mat3 {
    let n = axis.norm();
    if n == 0.0 || angle == 0.0 {
        return Mat3::identity();
    }
    let k = axis / n;
    let kx = skew(&k);
    Mat3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Symmetric eigen-decomposition by cyclic Jacobi. Eigenvalues unsorted.
pub fn sym_eigen3(a: &Mat3) -> (Vec3, Mat3) {
    let mut m = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = 0.5 * (a[(i, j)] + a[(j, i)]);
        }
    }
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _sweep in 0..32 {
        let off = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
        let diag = m[0][0] * m[0][0] + m[1][1] * m[1][1] + m[2][2] * m[2][2];
        if off <= 1e-32 * diag || off < 1e-300 {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = m[p][q];
            if apq.abs() < 1e-300 {
                continue;
            }
            let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            m[p][p] -= t * apq;
            m[q][q] += t * apq;
            m[p][q] = 0.0;
            m[q][p] = 0.0;
            let r = 3 - p - q;
            let arp = m[r][p];
            let arq = m[r][q];
            m[r][p] = c * arp - s * arq;
            m[p][r] = m[r][p];
            m[r][q] = s * arp + c * arq;
            m[q][r] = m[r][q];
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let vals = Vec3::new(m[0][0], m[1][1], m[2][2]);
    let vecs = Mat3::new(v[0][0], v[0][1], v[0][2], v[1][0], v[1][1], v[1][2], v[2][0], v[2][1], v[2][2]);
    (vals, vecs)
}

fn any_orthogonal(a: &Vec3) -> Vec3 {
    let trial = if a.x.abs() < 0.6 { Vec3::x() } else { Vec3::y() };
    (trial - a * a.dot(&trial)).normalize()
}

/// Singular value decomposition `m = u·diag(sigma)·vᵀ`, sigma descending and
/// non-negative.
pub fn svd3(m: &Mat3) -> Svd3 {
    let (lam, vecs) = sym_eigen3(&(m.transpose() * m));
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| lam[b].partial_cmp(&lam[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut v = Mat3::zeros();
    for (k, &i) in order.iter().enumerate() {
        let mut col = vecs.column(i).into_owned();
        // deterministic sign: largest-magnitude component positive
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col = -col;
        }
        v.set_column(k, &col);
    }
    let b = m * v;
    let b0 = b.column(0).into_owned();
    let b1 = b.column(1).into_owned();
    let b2 = b.column(2).into_owned();
    let n0 = b0.norm();
    let scale = m.abs().max().max(1e-300);
    let u0 = if n0 > 1e-300 * scale && n0 > 0.0 { b0 / n0 } else { Vec3::x() };
    let b1p = b1 - u0 * u0.dot(&b1);
    let n1 = b1p.norm();
    let u1 = if n1 > 1e-15 * n0.max(1e-300) { b1p / n1 } else { any_orthogonal(&u0) };
    let mut u2 = u0.cross(&u1);
    let mut s2 = u2.dot(&b2);
    if s2 < 0.0 {
        u2 = -u2;
        s2 = -s2;
    }
    let u = Mat3::from_columns(&[u0, u1, u2]);
    Svd3 { u, sigma: Vec3::new(n0, u1.dot(&b1).max(0.0), s2), v }
}

/// Polar decomposition `f = r·s` with `r` a proper rotation.
///
/// When `det f < 0` the sign of the smallest singular direction is flipped so
/// that `r` stays in SO(3); `s` is then symmetric but indefinite.
pub fn polar3(f: &Mat3) -> Result<Polar> {
    let svd = svd3(f);
    let tol = 1e-12 * svd.sigma[0].max(1e-300);
    if svd.sigma[0] == 0.0 || svd.sigma[1] <= tol {
        return Err(Error::Ambiguous(format!(
            "rotation not unique: singular values {:.3e} {:.3e} {:.3e}",
            svd.sigma[0], svd.sigma[1], svd.sigma[2]
        )));
    }
    Ok(polar_from_svd(svd))
}

fn polar_from_svd(svd: Svd3) -> Polar {
    let Svd3 { mut u, mut sigma, v } = svd;
    let vt = v.transpose();
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let c = -u.column(2).into_owned();
        u.set_column(2, &c);
        sigma[2] = -sigma[2];
        r = u * vt;
    }
    let s = v * Mat3::from_diagonal(&sigma) * vt;
    let s = 0.5 * (s + s.transpose());
    Polar { r, s }
}

/// Rotation factor of `m`, never failing: scaled Newton iteration when `m`
/// is safely non-inverted, SVD otherwise. For singular input any minimiser
/// of ‖m − R‖ is returned.
pub fn polar_rotation(m: &Mat3) -> Mat3 {
    let scale = m.norm();
    if scale == 0.0 || !scale.is_finite() {
        return Mat3::identity();
    }
    let mut x = m / scale;
    if x.determinant() > 1e-6 {
        for _ in 0..30 {
            let det = x.determinant();
            let Some(inv) = x.try_inverse() else { break };
            let zeta = det.abs().powf(-1.0 / 3.0);
            let next = (x * zeta + inv.transpose() / zeta) * 0.5;
            let step = (next - x).norm();
            x = next;
            if step < 1e-14 {
                return x;
            }
        }
        if (x.transpose() * x - Mat3::identity()).norm() < 1e-12 {
            return x;
        }
    }
    polar_from_svd(svd3(m)).r
}

/// Weighted least-squares rigid fit `q ≈ r·p + t`.
pub fn kabsch(p: &[Vec3], q: &[Vec3], w: Option<&[f64]>) -> Result<RigidTransform> {
    if p.len() != q.len() {
        return Err(Error::InvalidInput(format!("point count mismatch {} vs {}", p.len(), q.len())));
    }
    if p.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 points, got {}", p.len())));
    }
    if let Some(w) = w {
        if w.len() != p.len() {
            return Err(Error::InvalidInput("weight count mismatch".into()));
        }
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::InvalidInput("weights must be non-negative".into()));
        }
    }
    let weight = |i: usize| w.map_or(1.0, |w| w[i]);
    let total: f64 = (0..p.len()).map(weight).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("weights sum to zero".into()));
    }
    let mut pc = Vec3::zeros();
    let mut qc = Vec3::zeros();
    for i in 0..p.len() {
        pc += p[i] * weight(i);
        qc += q[i] * weight(i);
    }
    pc /= total;
    qc /= total;
    let mut h = Mat3::zeros();
    let mut cov = Mat3::zeros();
    for i in 0..p.len() {
        let a = p[i] - pc;
        let b = q[i] - qc;
        h += weight(i) * b * a.transpose();
        cov += weight(i) * a * a.transpose();
    }
    let (spread, _) = sym_eigen3(&cov);
    let mut spread: Vec<f64> = spread.iter().copied().collect();
    spread.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if spread[0] <= 0.0 || spread[1] <= 1e-12 * spread[0] {
        return Err(Error::Degenerate("source points are collinear".into()));
    }
    let svd = svd3(&h);
    if svd.sigma[0] == 0.0 || svd.sigma[1] <= 1e-12 * svd.sigma[0] {
        return Err(Error::Degenerate("cross-covariance has rank < 2".into()));
    }
    let r = polar_from_svd(svd).r;
    Ok(RigidTransform { r, t: qc - r * pc })
}

/// Mean squared residual of `q` against the best rigid image of `p`.
pub fn kabsch_residual(p: &[Vec3], q: &[Vec3], fit: &RigidTransform) -> f64 {
    let n = p.len().max(1) as f64;
    p.iter().zip(q).map(|(a, b)| (b - fit.apply(a)).norm_squared()).sum::<f64>() / n
}

/// Closest matrix with unit determinant in the Frobenius norm.
///
/// Works in the singular basis with `d = exp(y)`, `y₃ = −y₁ − y₂`, so the
/// constraint `Π d_i = 1` holds exactly. Damped Newton on the reduced
/// objective `Σ (σ_i − d_i)²` from `y = log(σ·det^(-1/3))`; its stationary
/// points are the Lagrange points `(σ_i − d_i) d_i = κ`.
pub fn project_det1(f: &Mat3) -> Result<Mat3> {
    let det = f.determinant();
    if !(det > 0.0) {
        return Err(Error::Inverted(det));
    }
    let svd = svd3(f);
    let s = svd.sigma;
    if !(s[2] > 0.0) {
        return Err(Error::Inverted(det));
    }
    let shift = (s[0] * s[1] * s[2]).ln() / 3.0;
    let mut y = [s[0].ln() - shift, s[1].ln() - shift];
    let dvec = |y: &[f64; 2]| Vec3::new(y[0].exp(), y[1].exp(), (-y[0] - y[1]).exp());
    let cost = |y: &[f64; 2]| (s - dvec(y)).norm_squared();
    let tol = 1e-14 * (1.0 + s[0] * s[0]);
    let mut c = cost(&y);
    let mut converged = false;
    for _ in 0..50 {
        let d = dvec(&y);
        // per-coordinate first and second derivatives of (σ − e^y)²
        let g = Vec3::from_fn(|i, _| -2.0 * (s[i] - d[i]) * d[i]);
        let h = Vec3::from_fn(|i, _| 4.0 * d[i] * d[i] - 2.0 * s[i] * d[i]);
        let grad = [g[0] - g[2], g[1] - g[2]];
        if grad[0].abs().max(grad[1].abs()) <= tol {
            converged = true;
            break;
        }
        let (a, b, e) = (h[0] + h[2], h[2], h[1] + h[2]);
        let hdet = a * e - b * b;
        let newton = a > 0.0 && hdet > 1e-300;
        let mut dir = if newton {
            [-(e * grad[0] - b * grad[1]) / hdet, -(a * grad[1] - b * grad[0]) / hdet]
        } else {
            [-grad[0], -grad[1]]
        };
        let step = dir[0].abs().max(dir[1].abs());
        if newton && step <= 1e-6 {
            // inside the quadratic basin cost decreases fall below rounding, so skip the line search
            y = [y[0] + dir[0], y[1] + dir[1]];
            c = cost(&y);
            if step <= 1e-12 {
                converged = true;
                break;
            }
            continue;
        }
        let mut slope = dir[0] * grad[0] + dir[1] * grad[1];
        if !(slope < 0.0) {
            dir = [-grad[0], -grad[1]];
            slope = -(grad[0] * grad[0] + grad[1] * grad[1]);
        }
        let mut alpha = 1.0;
        loop {
            let t = [y[0] + alpha * dir[0], y[1] + alpha * dir[1]];
            let ct = cost(&t);
            if ct <= c + 1e-4 * alpha * slope {
                y = t;
                c = ct;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                // no further decrease representable: at the minimum up to rounding
                converged = true;
                break;
            }
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric("det projection did not converge".into()));
    }
    Ok(svd.u * Mat3::from_diagonal(&dvec(&y)) * svd.v.transpose())
}

/// Trilinear weights and world-space gradients on a cube of edge `h`.
///
/// Corner `c = i + 2j + 4k` sits at local offset `(i, j, k)`.
pub fn trilinear_basis(local: &Vec3, h: f64) -> Result<([f64; 8], [Vec3; 8])> {
    const SLACK: f64 = 1e-9;
    if local.iter().any(|x| !(*x >= -SLACK && *x <= 1.0 + SLACK)) {
        return Err(Error::Domain(format!("local coordinate {:?} outside the unit cube", local.as_slice())));
    }
    Ok(trilinear_unchecked(local, h))
}

pub(crate) fn trilinear_unchecked(local: &Vec3, h: f64) -> ([f64; 8], [Vec3; 8]) {
    let (x, y, z) = (local.x, local.y, local.z);
    let fx = [1.0 - x, x];
    let fy = [1.0 - y, y];
    let fz = [1.0 - z, z];
    let dx = [-1.0, 1.0];
    let mut w = [0.0; 8];
    let mut g = [Vec3::zeros(); 8];
    for c in 0..8 {
        let (i, j, k) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
        w[c] = fx[i] * fy[j] * fz[k];
        g[c] = Vec3::new(dx[i] * fy[j] * fz[k], fx[i] * dx[j] * fz[k], fx[i] * fy[j] * dx[k]) / h;
    }
    (w, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng) -> Mat3 {
        Mat3::from_fn(|_, _| rng.random_range(-2.0..2.0))
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        rotation(&axis, rng.random_range(0.0..std::f64::consts::PI))
    }

    #[test]
    fn svd_reconstructs_and_orders() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let m = random_mat(&mut rng);
            let s = svd3(&m);
            let back = s.u * Mat3::from_diagonal(&s.sigma) * s.v.transpose();
            assert!((back - m).norm() < 1e-10 * m.norm().max(1.0));
            assert!((s.u.transpose() * s.u - Mat3::identity()).norm() < 1e-10);
            assert!((s.v.transpose() * s.v - Mat3::identity()).norm() < 1e-10);
            assert!(s.sigma[0] >= s.sigma[1] && s.sigma[1] >= s.sigma[2] && s.sigma[2] >= 0.0);
        }
    }

    #[test]
    fn svd_rank_deficient() {
        let a = Vec3::new(1.0, 2.0, 3.0);
        let b = Vec3::new(-1.0, 0.5, 0.0);
        let m = a * b.transpose();
        let s = svd3(&m);
        let back = s.u * Mat3::from_diagonal(&s.sigma) * s.v.transpose();
        assert!((back - m).norm() < 1e-12);
        assert!(s.sigma[1] < 1e-7);
    }

    #[test]
    fn polar_reflection_matches_brute_force() {
        let f = Mat3::new(1.0, 0.2, 0.0, 0.1, 0.8, 0.3, 0.0, 0.1, -0.6);
        assert!(f.determinant() < 0.0);
        let p = polar3(&f).unwrap();
        assert!((p.r.determinant() - 1.0).abs() < 1e-12);
        let best = (p.r.transpose() * f).trace();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut brute = f64::NEG_INFINITY;
        for _ in 0..1_000_000 {
            let q = random_rotation(&mut rng);
            brute = brute.max((q.transpose() * f).trace());
        }
        assert!(best >= brute - 1e-12);
        assert!(best - brute < 5e-3);
    }

    #[test]
    fn polar_of_reflection_flips_smallest() {
        let f = Mat3::from_diagonal(&Vec3::new(3.0, 2.0, -1.0));
        let p = polar3(&f).unwrap();
        assert!((p.r - Mat3::identity()).norm() < 1e-12);
        assert!((p.s - f).norm() < 1e-12);
    }

    #[test]
    fn polar_ambiguous_when_two_zero_singular_values() {
        let f = Vec3::new(1.0, 0.0, 0.0) * Vec3::new(0.0, 1.0, 0.0).transpose();
        assert!(matches!(polar3(&f), Err(Error::Ambiguous(_))));
        assert!(matches!(polar3(&Mat3::zeros()), Err(Error::Ambiguous(_))));
    }

    #[test]
    fn kabsch_recovers_motion_and_rejects_lines() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_rotation(&mut rng);
        let t = Vec3::new(1.0, -2.0, 0.5);
        let p: Vec<Vec3> = (0..20).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let q: Vec<Vec3> = p.iter().map(|x| r * x + t).collect();
        let fit = kabsch(&p, &q, None).unwrap();
        assert!((fit.r - r).norm() < 1e-10);
        assert!((fit.t - t).norm() < 1e-10);
        let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(kabsch(&line, &line, None), Err(Error::Degenerate(_))));
    }

    #[test]
    fn det1_diagonal_matches_scalar_search() {
        let f = Mat3::from_diagonal(&Vec3::new(2.0, 1.0, 1.0));
        let d = project_det1(&f).unwrap();
        // by symmetry d = diag(1/t², t, t); search t
        // stationary point of (2 - t^-2)^2 + 2(1 - t)^2, bisected on the derivative
        let slope = |t: f64| 4.0 * (2.0 - 1.0 / (t * t)) / (t * t * t) - 4.0 * (1.0 - t);
        let (mut lo, mut hi) = (0.5f64, 1.0f64);
        assert!(slope(lo) < 0.0 && slope(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        let expect = Mat3::from_diagonal(&Vec3::new(1.0 / (t * t), t, t));
        assert!((d - expect).norm() < 1e-9, "{d} vs {expect}");
        assert!((d.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn det1_rejects_inverted() {
        let f = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(matches!(project_det1(&f), Err(Error::Inverted(_))));
    }

    #[test]
    fn trilinear_partition_and_domain() {
        let (w, g) = trilinear_basis(&Vec3::new(0.2, 0.7, 0.4), 2.0).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let gs: Vec3 = g.iter().sum();
        assert!(gs.norm() < 1e-15);
        assert!(matches!(trilinear_basis(&Vec3::new(1.2, 0.0, 0.0), 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn rigid_transform_roundtrip() {
        let tr = RigidTransform::about_pivot(&Vec3::x(), 0.3, &Vec3::new(0.0, 1.0, 2.0));
        let x = Vec3::new(1.0, 2.0, 3.0);
        assert!((tr.inverse().apply(&tr.apply(&x)) - x).norm() < 1e-14);
        let back = RigidTransform::from_array(&tr.to_array()).unwrap();
        assert_eq!(back, tr);
    }

    #[test]
    fn fast_rotation_matches_polar() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5000 {
            let m = random_mat(&mut rng);
            let r = polar_rotation(&m);
            assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-10);
            assert!((r.determinant() - 1.0).abs() < 1e-10);
            if let Ok(p) = polar3(&m) {
                assert!((p.r - r).norm() < 1e-8, "{m}");
            }
        }
        let q = random_rotation(&mut rng);
        assert!((polar_rotation(&(q * 1e-3)) - q).norm() < 1e-12);
        let singular = Mat3::from_diagonal(&Vec3::new(2.0, 1.0, 0.0));
        let r = polar_rotation(&singular);
        assert!((r.determinant() - 1.0).abs() < 1e-10);
        assert_eq!(polar_rotation(&Mat3::zeros()), Mat3::identity());
    }

    #[test]
    fn det_projection_is_global_minimum() {
        // Multi-start coordinate search over log singular values with Π d = 1.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut checked = 0;
        while checked < 300 {
            let f = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0)) * 0.9 + Mat3::identity() * rng.random_range(0.3..1.8);
            let det = f.determinant();
            if !(0.2..=5.0).contains(&det) {
                continue;
            }
            checked += 1;
            let sigma = svd3(&f).sigma;
            let cost = |y: &[f64; 2]| {
                let d = [y[0].exp(), y[1].exp(), (-y[0] - y[1]).exp()];
                (0..3).map(|i| (sigma[i] - d[i]).powi(2)).sum::<f64>()
            };
            let mut best = f64::INFINITY;
            for start in [[0.0, 0.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [-1.0, -1.0]] {
                let mut y = start;
                let mut c = cost(&y);
                let mut step = 0.5;
                while step > 1e-12 {
                    let mut moved = false;
                    for (a, b) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step), (step, -step), (-step, step)] {
                        let t = [y[0] + a, y[1] + b];
                        let ct = cost(&t);
                        if ct < c {
                            (c, y, moved) = (ct, t, true);
                        }
                    }
                    if !moved {
                        step *= 0.5;
                    }
                }
                best = best.min(c);
            }
            let d = project_det1(&f).unwrap();
            assert!((d.determinant() - 1.0).abs() < 1e-8);
            let ours = (f - d).norm_squared();
            assert!(ours <= best + 1e-9 * (1.0 + best), "det {det}: {ours} vs {best}");
        }
    }
}
