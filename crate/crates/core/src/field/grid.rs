//! Control-lattice displacement field.
//!
//! Each control carries a base displacement `b` and a 3×m projection `P`;
//! its effective value is `b + P·z` for latent `z`. Values are blended with
//! trilinear or quadratic B-spline weights.

use serde::{Deserialize, Serialize};

use crate::numerics::{Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    Trilinear,
    QuadraticBspline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub origin: [f64; 3],
    pub spacing: f64,
    /// Cells per axis; the domain is `origin + [0, cells·spacing]`.
    pub cells: [usize; 3],
    pub interpolation: Interpolation,
    pub latent_dim: usize,
    pub theta: Vec<f64>,
}

/// Up to 27 (control, weight, gradient) triples.
pub(crate) struct Support {
    pub ids: [usize; 27],
    pub w: [f64; 27],
    pub g: [Vec3; 27],
    pub n: usize,
}

fn bspline2(d: f64) -> (f64, f64) {
    let a = d.abs();
    if a <= 0.5 {
        (0.75 - d * d, -2.0 * d)
    } else if a < 1.5 {
        let r = 1.5 - a;
        (0.5 * r * r, -d.signum() * r)
    } else {
        (0.0, 0.0)
    }
}

impl GridField {
    pub fn new(origin: Vec3, spacing: f64, cells: [usize; 3], interpolation: Interpolation, latent_dim: usize) -> Self {
        let mut f = Self { origin: origin.into(), spacing, cells, interpolation, latent_dim, theta: Vec::new() };
        f.theta = vec![0.0; f.n_controls() * f.stride()];
        f
    }

    pub fn control_dims(&self) -> [usize; 3] {
        let extra = match self.interpolation {
            Interpolation::Trilinear => 1,
            Interpolation::QuadraticBspline => 2,
        };
        self.cells.map(|c| c + extra)
    }

    pub fn n_controls(&self) -> usize {
        let d = self.control_dims();
        d[0] * d[1] * d[2]
    }

    pub fn stride(&self) -> usize {
        3 * (1 + self.latent_dim)
    }

    /// Rest position of control `(i, j, k)`.
    pub fn control_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let shift = match self.interpolation {
            Interpolation::Trilinear => 0.0,
            Interpolation::QuadraticBspline => -0.5,
        };
        Vec3::from(self.origin) + Vec3::new(i as f64 + shift, j as f64 + shift, k as f64 + shift) * self.spacing
    }

    pub fn control_index(&self, i: usize, j: usize, k: usize) -> usize {
        let d = self.control_dims();
        i + d[0] * (j + d[1] * k)
    }

    pub(crate) fn support(&self, x: &Vec3) -> Support {
        let t = (x - Vec3::from(self.origin)) / self.spacing;
        let dims = self.control_dims();
        let mut s = Support { ids: [0; 27], w: [0.0; 27], g: [Vec3::zeros(); 27], n: 0 };
        match self.interpolation {
            Interpolation::Trilinear => {
                let mut base = [0usize; 3];
                let mut f = [0.0; 3];
                for a in 0..3 {
                    let i = (t[a].floor().max(0.0) as usize).min(self.cells[a] - 1);
                    base[a] = i;
                    f[a] = t[a] - i as f64;
                }
                for c in 0..8 {
                    let o = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
                    let mut w = 1.0;
                    let mut g = Vec3::repeat(1.0);
                    for a in 0..3 {
                        let (wa, da) = if o[a] == 1 { (f[a], 1.0) } else { (1.0 - f[a], -1.0) };
                        w *= wa;
                        for b in 0..3 {
                            g[b] *= if a == b { da } else { wa };
                        }
                    }
                    s.ids[c] = (base[0] + o[0]) + dims[0] * ((base[1] + o[1]) + dims[1] * (base[2] + o[2]));
                    s.w[c] = w;
                    s.g[c] = g / self.spacing;
                }
                s.n = 8;
            }
            Interpolation::QuadraticBspline => {
                let mut base = [0usize; 3];
                let mut wd = [[(0.0, 0.0); 3]; 3];
                for a in 0..3 {
                    let u = t[a] + 0.5;
                    let c0 = ((u + 0.5).floor() - 1.0).clamp(0.0, (self.cells[a] - 1) as f64) as usize;
                    base[a] = c0;
                    for m in 0..3 {
                        wd[a][m] = bspline2(u - (c0 + m) as f64);
                    }
                }
                let mut n = 0;
                for mk in 0..3 {
                    for mj in 0..3 {
                        for mi in 0..3 {
                            let (wx, dx) = wd[0][mi];
                            let (wy, dy) = wd[1][mj];
                            let (wz, dz) = wd[2][mk];
                            s.ids[n] = (base[0] + mi) + dims[0] * ((base[1] + mj) + dims[1] * (base[2] + mk));
                            s.w[n] = wx * wy * wz;
                            s.g[n] = Vec3::new(dx * wy * wz, wx * dy * wz, wx * wy * dz) / self.spacing;
                            n += 1;
                        }
                    }
                }
                s.n = n;
            }
        }
        s
    }

    #[inline]
    fn control_value(&self, c: usize, z: &[f64]) -> Vec3 {
        let m = self.latent_dim;
        let base = c * self.stride();
        let th = &self.theta[base..base + self.stride()];
        let mut v = Vec3::new(th[0], th[1], th[2]);
        for i in 0..3 {
            let row = &th[3 + i * m..3 + (i + 1) * m];
            v[i] += row.iter().zip(z).map(|(p, z)| p * z).sum::<f64>();
        }
        v
    }

    /// Displacement and its spatial Jacobian.
    pub fn displacement(&self, x: &Vec3, z: &[f64]) -> (Vec3, Mat3) {
        let s = self.support(x);
        let mut d = Vec3::zeros();
        let mut j = Mat3::zeros();
        for k in 0..s.n {
            let v = self.control_value(s.ids[k], z);
            d += v * s.w[k];
            j += v * s.g[k].transpose();
        }
        (d, j)
    }

    /// Accumulate parameter and latent gradients for cotangents on the
    /// displacement (`gd`) and its Jacobian (`gj`).
    pub fn backward(&self, x: &Vec3, z: &[f64], gd: &Vec3, gj: Option<&Mat3>, grad: &mut [f64], grad_z: &mut [f64]) {
        let s = self.support(x);
        let m = self.latent_dim;
        let stride = self.stride();
        for k in 0..s.n {
            let mut a = gd * s.w[k];
            if let Some(gj) = gj {
                a += gj * s.g[k];
            }
            let base = s.ids[k] * stride;
            for i in 0..3 {
                grad[base + i] += a[i];
                if m > 0 && a[i] != 0.0 {
                    let row = base + 3 + i * m;
                    for q in 0..m {
                        grad[row + q] += a[i] * z[q];
                        grad_z[q] += self.theta[row + q] * a[i];
                    }
                }
            }
        }
    }

    /// Set controls so the field reproduces `x -> M·x + t` (latent-free part).
    pub fn fit_affine(&mut self, m: &Mat3, t: &Vec3) {
        let dims = self.control_dims();
        let stride = self.stride();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = self.control_position(i, j, k);
                    let d = m * p + t;
                    let base = self.control_index(i, j, k) * stride;
                    self.theta[base..base + 3].copy_from_slice(d.as_slice());
                }
            }
        }
    }
}
