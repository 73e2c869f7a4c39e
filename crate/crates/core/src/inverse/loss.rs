//! Pointwise physical and data losses. Each returns its value together with
//! per-sample cotangents on the mapped point, its Jacobian, and the input
//! point, so callers can route them into a [`GradientTape`].
//!
//! [`GradientTape`]: crate::field::GradientTape

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SpatialMap;
use crate::numerics::{kabsch, polar3, project_det1, Mat3, Vec3};
use crate::phantom::BoneOracle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialParams {
    /// Young's modulus (kPa).
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    /// g/ml.
    pub density: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self { young_modulus: 5.0, poisson_ratio: 0.47, density: 0.9 }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.young_modulus > 0.0) || !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) || !(self.density > 0.0) {
            return Err(Error::InvalidInput("material needs E > 0, 0 < ν < 0.5, density > 0".into()));
        }
        Ok(())
    }

    pub fn mu(&self) -> f64 {
        self.young_modulus / (2.0 * (1.0 + self.poisson_ratio))
    }

    pub fn lambda(&self) -> f64 {
        let (e, nu) = (self.young_modulus, self.poisson_ratio);
        e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    }
}

/// Cotangents for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointGrad {
    pub g_x: Vec3,
    pub g_j: Option<Mat3>,
    /// Explicit dependence on the input point.
    pub g_input: Vec3,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossEval {
    pub value: f64,
    pub grads: Vec<PointGrad>,
    /// Samples with `det J ≤ 0` (soft loss fallback).
    pub inverted: usize,
    /// Samples dropped (behind the camera).
    pub excluded: usize,
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::InvalidInput(format!("{what}: {a} samples but {b} targets")));
    }
    Ok(())
}

fn map_all(map: &dyn SpatialMap, xs: &[Vec3]) -> Result<Vec<Vec3>> {
    xs.iter().map(|x| map.map_point(x)).collect()
}

/// `(1/n) Σ w_i ‖φ(X_i) − x̂_i‖²`; `weights` defaults to 1.
pub fn loss_skin(map: &dyn SpatialMap, samples: &[Vec3], targets: &[Vec3], weights: Option<&[f64]>) -> Result<LossEval> {
    check_len(samples.len(), targets.len(), "loss_skin")?;
    if let Some(w) = weights {
        check_len(samples.len(), w.len(), "loss_skin weights")?;
    }
    if samples.is_empty() {
        return Ok(LossEval::default());
    }
    let n = samples.len() as f64;
    let ys = map_all(map, samples)?;
    let mut out = LossEval { grads: Vec::with_capacity(ys.len()), ..Default::default() };
    for (i, (y, t)) in ys.iter().zip(targets).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let r = y - t;
        out.value += w * r.norm_squared() / n;
        out.grads.push(PointGrad { g_x: r * (2.0 * w / n), ..Default::default() });
    }
    Ok(out)
}

/// Identity-field data term; same form as [`loss_skin`].
pub fn loss_id(map: &dyn SpatialMap, samples: &[Vec3], targets: &[Vec3], weights: Option<&[f64]>) -> Result<LossEval> {
    loss_skin(map, samples, targets, weights)
}

/// Mean squared distance of mapped canonical bone points to oracle positions.
pub fn loss_bone(map: &dyn SpatialMap, samples: &[Vec3], oracle: &[Vec3]) -> Result<LossEval> {
    loss_skin(map, samples, oracle, None)
}

/// Sum over regions of the mean squared residual after the best rigid fit.
/// The fit is held fixed under differentiation.
pub fn loss_rigid(map: &dyn SpatialMap, regions: &[&[Vec3]]) -> Result<Vec<LossEval>> {
    regions
        .iter()
        .map(|xs| {
            if xs.len() < 3 {
                return Err(Error::Degenerate("rigid loss needs at least three samples per region".into()));
            }
            let ys = map_all(map, xs)?;
            let fit = kabsch(xs, &ys, None)?;
            let n = xs.len() as f64;
            let mut out = LossEval { grads: Vec::with_capacity(xs.len()), ..Default::default() };
            for (x, y) in xs.iter().zip(&ys) {
                let r = y - fit.apply(x);
                out.value += r.norm_squared() / n;
                let g = r * (2.0 / n);
                out.grads.push(PointGrad { g_x: g, g_j: None, g_input: -(fit.r.transpose() * g) });
            }
            Ok(out)
        })
        .collect()
}

/// `(1/n) Σ ‖φ(X_i) − X_i‖²`.
pub fn loss_fix(map: &dyn SpatialMap, samples: &[Vec3]) -> Result<LossEval> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("loss_fix needs samples".into()));
    }
    let n = samples.len() as f64;
    let ys = map_all(map, samples)?;
    let mut out = LossEval { grads: Vec::with_capacity(ys.len()), ..Default::default() };
    for (x, y) in samples.iter().zip(&ys) {
        let r = y - x;
        out.value += r.norm_squared() / n;
        let g = r * (2.0 / n);
        out.grads.push(PointGrad { g_x: g, g_j: None, g_input: -g });
    }
    Ok(out)
}

/// `μ‖J − R*‖² + λ‖J − D*‖²` for one Jacobian, with its `J` cotangent.
/// Falls back to `(μ + λ)‖J − R*‖²` when `det J ≤ 0`.
pub fn soft_energy(j: &Mat3, mu: f64, lambda: f64) -> (f64, Mat3, bool) {
    let r = match polar3(j) {
        Ok(p) => p.r,
        Err(_) => Mat3::identity(),
    };
    let er = j - r;
    match project_det1(j) {
        Ok(d) => {
            let ed = j - d;
            (mu * er.norm_squared() + lambda * ed.norm_squared(), er * (2.0 * mu) + ed * (2.0 * lambda), false)
        }
        Err(_) => ((mu + lambda) * er.norm_squared(), er * (2.0 * (mu + lambda)), true),
    }
}

pub fn loss_soft(map: &dyn SpatialMap, samples: &[Vec3], material: &MaterialParams) -> Result<LossEval> {
    if samples.is_empty() {
        return Ok(LossEval::default());
    }
    let (mu, lambda) = (material.mu(), material.lambda());
    let n = samples.len() as f64;
    let mut out = LossEval { grads: Vec::with_capacity(samples.len()), ..Default::default() };
    for x in samples {
        let (_, j) = map.map_with_jacobian(x)?;
        let (e, g, inv) = soft_energy(&j, mu, lambda);
        out.value += e / n;
        out.inverted += inv as usize;
        out.grads.push(PointGrad { g_x: Vec3::zeros(), g_j: Some(g / n), g_input: Vec3::zeros() });
    }
    Ok(out)
}

/// Mean `‖J − polar(J).r‖²`.
pub fn loss_ereg(map: &dyn SpatialMap, samples: &[Vec3]) -> Result<LossEval> {
    if samples.is_empty() {
        return Ok(LossEval::default());
    }
    let n = samples.len() as f64;
    let mut out = LossEval { grads: Vec::with_capacity(samples.len()), ..Default::default() };
    for x in samples {
        let (_, j) = map.map_with_jacobian(x)?;
        let r = polar3(&j).map(|p| p.r).unwrap_or_else(|_| Mat3::identity());
        let e = j - r;
        out.value += e.norm_squared() / n;
        out.grads.push(PointGrad { g_x: Vec3::zeros(), g_j: Some(e * (2.0 / n)), g_input: Vec3::zeros() });
    }
    Ok(out)
}

/// Pinhole camera as a 3×4 projection matrix (row-major).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub p: [[f64; 4]; 3],
}

impl Camera {
    /// Camera at `eye` looking along −z of its own frame toward `target`.
    pub fn look_at(eye: Vec3, target: Vec3, focal_px: f64, center_px: [f64; 2]) -> Result<Self> {
        let fwd = (target - eye).normalize();
        let up0 = if fwd.y.abs() > 0.95 { Vec3::z() } else { Vec3::y() };
        let right = fwd.cross(&up0).normalize();
        let up = right.cross(&fwd);
        // rows of the world→camera rotation, camera looks along +z
        let r = Mat3::from_rows(&[right.transpose(), (-up).transpose(), fwd.transpose()]);
        let t = -(r * eye);
        let k = Mat3::new(focal_px, 0.0, center_px[0], 0.0, focal_px, center_px[1], 0.0, 0.0, 1.0);
        let kr = k * r;
        let kt = k * t;
        let mut p = [[0.0; 4]; 3];
        for i in 0..3 {
            for j in 0..3 {
                p[i][j] = kr[(i, j)];
            }
            p[i][3] = kt[i];
        }
        let cam = Self { p };
        if p.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("camera has non-finite entries".into()));
        }
        Ok(cam)
    }

    /// Homogeneous image coordinates `(u·w, v·w, w)`.
    pub fn homogeneous(&self, x: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| self.p[i][0] * x.x + self.p[i][1] * x.y + self.p[i][2] * x.z + self.p[i][3])
    }

    /// Pixel coordinates, `None` behind the camera.
    pub fn project(&self, x: &Vec3) -> Option<[f64; 2]> {
        let h = self.homogeneous(x);
        (h.z > 0.0).then(|| [h.x / h.z, h.y / h.z])
    }
}

/// Mean squared pixel distance between projected mapped landmarks and targets.
pub fn loss_landmark(map: &dyn SpatialMap, landmarks: &[Vec3], camera: &Camera, targets: &[[f64; 2]]) -> Result<LossEval> {
    check_len(landmarks.len(), targets.len(), "loss_landmark")?;
    if camera.p.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("camera has non-finite entries".into()));
    }
    let ys = map_all(map, landmarks)?;
    let mut out = LossEval { grads: vec![PointGrad::default(); ys.len()], ..Default::default() };
    let valid: Vec<usize> = (0..ys.len()).filter(|&i| camera.homogeneous(&ys[i]).z > 0.0).collect();
    out.excluded = ys.len() - valid.len();
    if valid.is_empty() {
        return Ok(out);
    }
    let n = valid.len() as f64;
    let rows = |i: usize| Vec3::new(camera.p[i][0], camera.p[i][1], camera.p[i][2]);
    for &i in &valid {
        let h = camera.homogeneous(&ys[i]);
        let (u, v) = (h.x / h.z, h.y / h.z);
        let (du, dv) = (u - targets[i][0], v - targets[i][1]);
        out.value += (du * du + dv * dv) / n;
        let gu = (rows(0) - rows(2) * u) / h.z;
        let gv = (rows(1) - rows(2) * v) / h.z;
        out.grads[i].g_x = (gu * du + gv * dv) * (2.0 / n);
    }
    Ok(out)
}

/// Bone loss against targets regressed by the skin→bone oracle from the
/// current neutral skin. Targets are treated as constants.
pub fn loss_bone_selfsup(
    map: &dyn SpatialMap,
    canonical_skull: &[Vec3],
    canonical_jaw: &[Vec3],
    regressed_skin: &[Vec3],
    oracle: &BoneOracle,
) -> Result<LossEval> {
    let (skull, jaw) = oracle.predict(regressed_skin)?;
    let samples: Vec<Vec3> = canonical_skull.iter().chain(canonical_jaw).copied().collect();
    let targets: Vec<Vec3> = skull.vertices.iter().chain(&jaw.vertices).copied().collect();
    loss_bone(map, &samples, &targets)
}

/// Per-component values of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub skin: f64,
    pub rigid: f64,
    pub fix: f64,
    pub soft: f64,
    pub id: f64,
    pub bone: f64,
    pub ereg: f64,
    pub lreg: f64,
    pub lip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub skin: f64,
    pub rigid: f64,
    pub fix: f64,
    pub soft: f64,
    pub id: f64,
    pub bone: f64,
    pub ereg: f64,
    pub lreg: f64,
    pub lip: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { skin: 20.0, rigid: 20.0, fix: 20.0, soft: 0.1, id: 1.0, bone: 0.1, ereg: 0.1, lreg: 1e-4, lip: 2e-6 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self { skin: 0.0, rigid: 0.0, fix: 0.0, soft: 0.0, id: 0.0, bone: 0.0, ereg: 0.0, lreg: 0.0, lip: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.skin, self.rigid, self.fix, self.soft, self.id, self.bone, self.ereg, self.lreg, self.lip];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Weights of the fitting objective: no identity or Lipschitz terms.
    pub fn for_test(&self) -> Self {
        Self { id: 0.0, lip: 0.0, ..*self }
    }
}

pub fn train_objective(b: &LossBreakdown, w: &LossWeights) -> f64 {
    w.skin * b.skin
        + w.rigid * b.rigid
        + w.fix * b.fix
        + w.soft * b.soft
        + w.id * b.id
        + w.bone * b.bone
        + w.ereg * b.ereg
        + w.lreg * b.lreg
        + w.lip * b.lip
}

pub fn test_objective(b: &LossBreakdown, w: &LossWeights) -> f64 {
    train_objective(b, &w.for_test())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::AffineMap;
    use crate::numerics::rotation;
    use crate::phantom::{make_canonical, make_identity};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `x -> M x + t + k ⊙ sin(x / s)`, smooth with a varying Jacobian.
    #[derive(Clone)]
    struct Wavy {
        p: [f64; 15],
    }

    const S: [f64; 3] = [5.0, 7.0, 6.0];

    impl Wavy {
        fn m(&self) -> Mat3 {
            Mat3::from_row_slice(&self.p[..9])
        }
        fn random(rng: &mut ChaCha8Rng, amp: f64) -> Self {
            let mut p = [0.0; 15];
            for (i, v) in p.iter_mut().enumerate() {
                *v = rng.random_range(-amp..amp) + if matches!(i, 0 | 4 | 8) { 1.0 } else { 0.0 };
            }
            Self { p }
        }
        /// Directional derivative of a loss along `dir` from its cotangents.
        fn pullback(&self, xs: &[Vec3], e: &LossEval, dir: &[f64; 15]) -> f64 {
            let dm = Mat3::from_row_slice(&dir[..9]);
            let mut out = 0.0;
            for (x, g) in xs.iter().zip(&e.grads) {
                let s = Vec3::from_fn(|a, _| (x[a] / S[a]).sin());
                let c = Vec3::from_fn(|a, _| (x[a] / S[a]).cos() / S[a]);
                let dy = dm * x + Vec3::new(dir[9], dir[10], dir[11]) + Vec3::new(dir[12], dir[13], dir[14]).component_mul(&s);
                out += g.g_x.dot(&dy);
                if let Some(gj) = g.g_j {
                    let dj = dm + Mat3::from_diagonal(&Vec3::new(dir[12], dir[13], dir[14]).component_mul(&c));
                    out += gj.component_mul(&dj).sum();
                }
            }
            out
        }
    }

    impl SpatialMap for Wavy {
        fn map_with_jacobian(&self, x: &Vec3) -> Result<(Vec3, Mat3)> {
            let k = Vec3::new(self.p[12], self.p[13], self.p[14]);
            let s = Vec3::from_fn(|a, _| (x[a] / S[a]).sin());
            let c = Vec3::from_fn(|a, _| (x[a] / S[a]).cos() / S[a]);
            let y = self.m() * x + Vec3::new(self.p[9], self.p[10], self.p[11]) + k.component_mul(&s);
            Ok((y, self.m() + Mat3::from_diagonal(&k.component_mul(&c))))
        }
    }

    fn points(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::from_fn(|_, _| rng.random_range(-r..r))).collect()
    }

    /// Central differences of `f` along random parameter directions vs the
    /// analytic pullback, on `probes` random maps.
    fn fd_check(probes: usize, amp: f64, seed: u64, f: impl Fn(&Wavy, &mut ChaCha8Rng) -> (Vec<Vec3>, Box<dyn Fn(&Wavy) -> LossEval>)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for probe in 0..probes {
            let map = Wavy::random(&mut rng, amp);
            let (xs, loss) = f(&map, &mut rng);
            let mut dir = [0.0; 15];
            dir.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            let analytic = map.pullback(&xs, &loss(&map), &dir);
            let eps = 1e-6;
            let shifted = |s: f64| {
                let mut m = map.clone();
                m.p.iter_mut().zip(&dir).for_each(|(p, d)| *p += s * d);
                loss(&m).value
            };
            let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            let scale = analytic.abs().max(fd.abs()).max(1e-8);
            assert!((fd - analytic).abs() <= 1e-4 * scale, "probe {probe}: fd {fd} analytic {analytic}");
        }
    }

    fn identity_map() -> AffineMap {
        AffineMap { m: Mat3::identity(), t: Vec3::zeros() }
    }

    #[test]
    fn lame_parameters() {
        let m = MaterialParams::default();
        assert!((m.mu() - 1.700680272).abs() < 1e-6);
        assert!((m.lambda() - 26.644011).abs() < 1e-4);
    }

    #[test]
    fn skin_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs = points(&mut rng, 40, 50.0);
        assert_eq!(loss_skin(&identity_map(), &xs, &xs, None).unwrap().value, 0.0);
        let shifted: Vec<Vec3> = xs.iter().map(|x| x + Vec3::x()).collect();
        assert!((loss_skin(&identity_map(), &xs, &shifted, None).unwrap().value - 1.0).abs() < 1e-12);
        let map = Wavy::random(&mut rng, 0.3);
        let tg = points(&mut rng, 40, 50.0);
        let direct = xs.iter().zip(&tg).map(|(x, t)| (map.map_point(x).unwrap() - t).norm_squared()).sum::<f64>() / 40.0;
        assert!((loss_skin(&map, &xs, &tg, None).unwrap().value - direct).abs() < 1e-12 * direct.max(1.0));
        assert!(loss_skin(&map, &xs, &tg[..3], None).is_err());
        assert_eq!(loss_id(&map, &xs, &tg, None).unwrap(), loss_skin(&map, &xs, &tg, None).unwrap());
        assert_eq!(loss_bone(&map, &xs, &tg).unwrap(), loss_skin(&map, &xs, &tg, None).unwrap());
    }

    #[test]
    fn fix_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs = points(&mut rng, 30, 40.0);
        assert_eq!(loss_fix(&identity_map(), &xs).unwrap().value, 0.0);
        let shift = AffineMap { m: Mat3::identity(), t: Vec3::new(0.0, 2.0, 0.0) };
        assert!((loss_fix(&shift, &xs).unwrap().value - 4.0).abs() < 1e-12);
        assert!(loss_fix(&shift, &[]).is_err());
    }

    #[test]
    fn rigid_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs = points(&mut rng, 50, 30.0);
        let rot = AffineMap { m: rotation(&Vec3::new(1.0, 2.0, -1.0).normalize(), 0.4), t: Vec3::new(1.0, -3.0, 2.0) };
        let out = loss_rigid(&rot, &[&xs, &xs[..10]]).unwrap();
        assert!(out.iter().all(|e| e.value < 1e-20));
        assert!(loss_rigid(&identity_map(), &[&xs]).unwrap()[0].value < 1e-20);
        assert!(loss_rigid(&identity_map(), &[&xs[..2]]).is_err());
    }

    /// Numeric rigid fit by coordinate descent over axis-angle and translation.
    fn brute_rigid(xs: &[Vec3], ys: &[Vec3]) -> f64 {
        let cost = |p: &[f64; 6]| {
            let w = Vec3::new(p[0], p[1], p[2]);
            let r = if w.norm() > 0.0 { rotation(&w.normalize(), w.norm()) } else { Mat3::identity() };
            let t = Vec3::new(p[3], p[4], p[5]);
            xs.iter().zip(ys).map(|(x, y)| (y - (r * x + t)).norm_squared()).sum::<f64>() / xs.len() as f64
        };
        let mut p = [0.0; 6];
        let mut best = cost(&p);
        let mut step = 0.5;
        while step > 1e-9 {
            let mut improved = false;
            for i in 0..6 {
                for s in [step, -step] {
                    let mut q = p;
                    q[i] += if i < 3 { s * 0.1 } else { s * 5.0 };
                    let c = cost(&q);
                    if c < best {
                        (best, p, improved) = (c, q, true);
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        best
    }

    #[test]
    fn rigid_matches_brute_force_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs = points(&mut rng, 40, 30.0);
        let r = rotation(&Vec3::new(0.3, 1.0, 0.2).normalize(), 0.25);
        let t = Vec3::new(2.0, 0.5, -1.0);
        let eps = 0.2;
        let noisy: Vec<Vec3> = xs
            .iter()
            .map(|x| {
                let y = r * x + t;
                y + (y - t).normalize() * rng.random_range(-eps..eps)
            })
            .collect();
        let noise = xs.iter().zip(&noisy).map(|(x, y)| (y - (r * x + t)).norm_squared()).sum::<f64>() / 40.0;
        struct Table<'a>(&'a [Vec3], &'a [Vec3]);
        impl SpatialMap for Table<'_> {
            fn map_with_jacobian(&self, x: &Vec3) -> Result<(Vec3, Mat3)> {
                let i = self.0.iter().position(|p| p == x).unwrap();
                Ok((self.1[i], Mat3::identity()))
            }
        }
        let v = loss_rigid(&Table(&xs, &noisy), &[&xs]).unwrap()[0].value;
        assert!(v <= noise + 1e-12);
        let brute = brute_rigid(&xs, &noisy);
        assert!((v - brute).abs() < 1e-6 * noise, "{v} vs {brute}");
        assert!(v > 0.5 * noise);
    }

    #[test]
    fn soft_examples() {
        let m = MaterialParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs = points(&mut rng, 20, 30.0);
        assert!(loss_soft(&identity_map(), &xs, &m).unwrap().value < 1e-24);
        let rot = AffineMap { m: rotation(&Vec3::new(1.0, 1.0, 0.0).normalize(), 1.1), t: Vec3::zeros() };
        assert!(loss_soft(&rot, &xs, &m).unwrap().value < 1e-20);
        let scale = AffineMap { m: Mat3::identity() * 1.2, t: Vec3::zeros() };
        let v = loss_soft(&scale, &xs, &m).unwrap().value;
        assert!((v - (m.mu() + m.lambda()) * 3.0 * 0.04).abs() < 1e-10);

        // nearest unit-determinant diagonal by direct search over two free entries
        let mut best = f64::INFINITY;
        let mut d = (1.1, 0.9);
        let mut step = 0.1;
        let cost = |a: f64, b: f64| (1.2 - a).powi(2) + (1.2 - b).powi(2) + (1.2 - 1.0 / (a * b)).powi(2);
        while step > 1e-10 {
            let mut moved = false;
            for (da, db) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
                let c = cost(d.0 + da, d.1 + db);
                if c < best {
                    (best, d, moved) = (c, (d.0 + da, d.1 + db), true);
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        assert!((best - 0.12).abs() < 1e-9);
        assert!((v - (m.mu() * 0.12 + m.lambda() * best)).abs() < 1e-7);
    }

    #[test]
    fn soft_inversion_falls_back_and_counts() {
        let m = MaterialParams::default();
        let flip = AffineMap { m: Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0)), t: Vec3::zeros() };
        let xs = [Vec3::zeros(), Vec3::x()];
        let e = loss_soft(&flip, &xs, &m).unwrap();
        assert_eq!(e.inverted, 2);
        let r = polar3(&flip.m).unwrap().r;
        let expected = (m.mu() + m.lambda()) * (flip.m - r).norm_squared();
        assert!((e.value - expected).abs() < 1e-10 && e.value.is_finite());
    }

    #[test]
    fn ereg_matches_rotation_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs = [Vec3::zeros()];
        assert!(loss_ereg(&identity_map(), &xs).unwrap().value < 1e-24);
        let rot = AffineMap { m: rotation(&Vec3::y(), 0.7), t: Vec3::zeros() };
        assert!(loss_ereg(&rot, &xs).unwrap().value < 1e-20);
        for _ in 0..5 {
            let j = Mat3::identity() + Mat3::from_fn(|_, _| rng.random_range(-0.4..0.4));
            let v = loss_ereg(&AffineMap { m: j, t: Vec3::zeros() }, &xs).unwrap().value;
            let mut best = f64::INFINITY;
            let mut w = Vec3::zeros();
            for _ in 0..3000 {
                let c = Vec3::from_fn(|_, _| rng.random_range(-1.5..1.5));
                let r = rotation(&c.normalize(), c.norm());
                let e = (j - r).norm_squared();
                if e < best {
                    (best, w) = (e, c);
                }
            }
            let mut step = 0.05;
            while step > 1e-10 {
                let mut moved = false;
                for a in 0..3 {
                    for s in [step, -step] {
                        let mut c = w;
                        c[a] += s;
                        let e = (j - rotation(&c.normalize(), c.norm())).norm_squared();
                        if e < best {
                            (best, w, moved) = (e, c, true);
                        }
                    }
                }
                if !moved {
                    step *= 0.5;
                }
            }
            assert!(v <= best + 1e-12);
            assert!((v - best).abs() < 1e-8, "{v} vs {best}");
        }
    }

    #[test]
    fn landmark_examples() {
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, 600.0), Vec3::zeros(), 1500.0, [512.0, 512.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs = points(&mut rng, 15, 60.0);
        let proj: Vec<[f64; 2]> = xs.iter().map(|x| cam.project(x).unwrap()).collect();
        assert!(loss_landmark(&identity_map(), &xs, &cam, &proj).unwrap().value < 1e-20);
        let shifted: Vec<[f64; 2]> = proj.iter().map(|p| [p[0] + 3.0, p[1] + 4.0]).collect();
        assert!((loss_landmark(&identity_map(), &xs, &cam, &shifted).unwrap().value - 25.0).abs() < 1e-9);
        let mut behind = xs.clone();
        behind[0] = Vec3::new(0.0, 0.0, 900.0);
        let e = loss_landmark(&identity_map(), &behind, &cam, &shifted).unwrap();
        assert_eq!(e.excluded, 1);
        assert!((e.value - 25.0).abs() < 1e-9);
        let map = Wavy::random(&mut rng, 0.2);
        let direct = xs
            .iter()
            .zip(&proj)
            .map(|(x, t)| {
                let p = cam.project(&map.map_point(x).unwrap()).unwrap();
                (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)
            })
            .sum::<f64>()
            / 15.0;
        assert!((loss_landmark(&map, &xs, &cam, &proj).unwrap().value - direct).abs() < 1e-10 * direct);
        let bad = Camera { p: [[f64::NAN; 4]; 3] };
        assert!(loss_landmark(&identity_map(), &xs, &bad, &proj).is_err());
    }

    #[test]
    fn selfsup_bone_consistency() {
        let canonical = make_canonical();
        let oracle = BoneOracle::new(&canonical);
        let (cs, cj) = (&canonical.skull.vertices, &canonical.jaw.vertices);
        let e = loss_bone_selfsup(&identity_map(), cs, cj, &canonical.skin.vertices, &oracle).unwrap();
        assert!(e.value < 1e-12, "{}", e.value);

        let ident = make_identity(&[0.5, -0.3, 0.2, 0.1, -0.4], &canonical).unwrap();
        let samples: Vec<Vec3> = cs.iter().chain(cj).copied().collect();
        let truth: Vec<Vec3> = ident.skull.vertices.iter().chain(&ident.jaw.vertices).copied().collect();
        let shift = AffineMap { m: Mat3::identity(), t: Vec3::new(0.5, 0.0, -0.2) };
        let a = loss_bone_selfsup(&shift, cs, cj, &ident.skin.vertices, &oracle).unwrap().value;
        let b = loss_bone(&shift, &samples, &truth).unwrap().value;
        assert!((a - b).abs() < 1e-6 * b.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn objectives_are_weighted_sums() {
        let b = LossBreakdown { skin: 1.0, rigid: 2.0, fix: 3.0, soft: 4.0, id: 5.0, bone: 6.0, ereg: 7.0, lreg: 8.0, lip: 9.0 };
        assert_eq!(train_objective(&b, &LossWeights::zero()), 0.0);
        let only_soft = LossWeights { soft: 2.5, ..LossWeights::zero() };
        assert_eq!(train_objective(&b, &only_soft), 10.0);
        let w = LossWeights::default();
        let hand = 20.0 * 1.0 + 20.0 * 2.0 + 20.0 * 3.0 + 0.1 * 4.0 + 1.0 * 5.0 + 0.1 * 6.0 + 0.1 * 7.0 + 1e-4 * 8.0 + 2e-6 * 9.0;
        assert!((train_objective(&b, &w) - hand).abs() < 1e-12);
        let test_hand = hand - 5.0 - 2e-6 * 9.0;
        assert!((test_objective(&b, &w) - test_hand).abs() < 1e-12);
        assert!(LossWeights { rigid: -1.0, ..w }.validate().is_err());
    }

    #[test]
    fn permuting_samples_keeps_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let map = Wavy::random(&mut rng, 0.2);
        let xs = points(&mut rng, 25, 30.0);
        let mut ys = xs.clone();
        ys.reverse();
        let m = MaterialParams::default();
        let a = loss_soft(&map, &xs, &m).unwrap().value;
        let b = loss_soft(&map, &ys, &m).unwrap().value;
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let probes = 20;
        fd_check(probes, 0.2, 10, |_, rng| {
            let xs = points(rng, 12, 20.0);
            let tg = points(rng, 12, 20.0);
            let w: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..1.0)).collect();
            let xs2 = xs.clone();
            (xs, Box::new(move |m: &Wavy| loss_skin(m, &xs2, &tg, Some(&w)).unwrap()))
        });
        fd_check(probes, 0.2, 11, |_, rng| {
            let xs = points(rng, 12, 20.0);
            let xs2 = xs.clone();
            (xs, Box::new(move |m: &Wavy| loss_fix(m, &xs2).unwrap()))
        });
        fd_check(probes, 0.2, 12, |_, rng| {
            let xs = points(rng, 15, 20.0);
            let xs2 = xs.clone();
            (xs, Box::new(move |m: &Wavy| loss_rigid(m, &[&xs2]).unwrap().remove(0)))
        });
        fd_check(probes, 0.2, 13, |_, rng| {
            let xs = points(rng, 10, 20.0);
            let xs2 = xs.clone();
            let mat = MaterialParams::default();
            (xs, Box::new(move |m: &Wavy| loss_soft(m, &xs2, &mat).unwrap()))
        });
        fd_check(probes, 0.2, 14, |_, rng| {
            let xs = points(rng, 10, 20.0);
            let xs2 = xs.clone();
            (xs, Box::new(move |m: &Wavy| loss_ereg(m, &xs2).unwrap()))
        });
        fd_check(probes, 0.2, 15, |_, rng| {
            let cam = Camera::look_at(Vec3::new(30.0, -20.0, 500.0), Vec3::zeros(), 1200.0, [400.0, 300.0]).unwrap();
            let xs = points(rng, 10, 40.0);
            let tg: Vec<[f64; 2]> = (0..10).map(|_| [rng.random_range(200.0..600.0), rng.random_range(100.0..500.0)]).collect();
            let xs2 = xs.clone();
            (xs, Box::new(move |m: &Wavy| loss_landmark(m, &xs2, &cam, &tg).unwrap()))
        });
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        // Total derivative with respect to the sample points: Jᵀ g_x + g_input.
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for probe in 0..20 {
            let map = Wavy::random(&mut rng, 0.2);
            let xs = points(&mut rng, 12, 20.0);
            let dirs = points(&mut rng, 12, 1.0);
            type L = fn(&Wavy, &[Vec3]) -> LossEval;
            let losses: [L; 2] = [|m, x| loss_fix(m, x).unwrap(), |m, x| loss_rigid(m, &[x]).unwrap().remove(0)];
            for f in losses {
                let e = f(&map, &xs);
                let analytic: f64 = xs
                    .iter()
                    .zip(&e.grads)
                    .zip(&dirs)
                    .map(|((x, g), d)| {
                        let (_, j) = map.map_with_jacobian(x).unwrap();
                        (j.transpose() * g.g_x + g.g_input).dot(d)
                    })
                    .sum();
                let eps = 1e-6;
                let at = |s: f64| {
                    let moved: Vec<Vec3> = xs.iter().zip(&dirs).map(|(x, d)| x + d * s).collect();
                    f(&map, &moved).value
                };
                let fd = (at(eps) - at(-eps)) / (2.0 * eps);
                let scale = analytic.abs().max(fd.abs()).max(1e-8);
                assert!((fd - analytic).abs() <= 1e-4 * scale, "probe {probe}: {fd} vs {analytic}");
            }
        }
    }
}
