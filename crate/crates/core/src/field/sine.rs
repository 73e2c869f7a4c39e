//! Sine-activated MLP displacement field with per-layer scale-shift
//! conditioning: `m = (W·h + b) ⊙ (1 + S·z) + T·z`, `h' = sin(ω₀·m)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineField {
    pub layers: usize,
    pub width: usize,
    pub omega: f64,
    pub latent_dim: usize,
    /// Input normalisation: `ξ = (X − center) ⊙ inv_half`.
    pub center: [f64; 3],
    pub inv_half: [f64; 3],
    pub theta: Vec<f64>,
}

#[derive(Clone, Copy)]
struct LayerOffsets {
    w: usize,
    b: usize,
    s: usize,
    t: usize,
    fan_in: usize,
}

/// Forward state kept for the reverse pass.
struct Trace {
    /// Per layer: pre-activation `a`, scale `s`, phase `m`, output `h`,
    /// and tangents `ȧ`, `ḣ` (width × 3, row-major).
    a: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    cos: Vec<Vec<f64>>,
    a_dot: Vec<Vec<f64>>,
    m_dot: Vec<Vec<f64>>,
    h_dot: Vec<Vec<f64>>,
    xi: [f64; 3],
}

impl SineField {
    pub fn new(layers: usize, width: usize, omega: f64, latent_dim: usize, lo: Vec3, hi: Vec3, seed: u64) -> Self {
        let center = (lo + hi) * 0.5;
        let half = (hi - lo) * 0.5;
        let mut f = Self {
            layers,
            width,
            omega,
            latent_dim,
            center: center.into(),
            inv_half: [1.0 / half.x, 1.0 / half.y, 1.0 / half.z],
            theta: Vec::new(),
        };
        f.theta = vec![0.0; f.n_params()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..layers {
            let o = f.offsets(l);
            let bound = if l == 0 { 1.0 / o.fan_in as f64 } else { (6.0 / width as f64).sqrt() / omega };
            for v in &mut f.theta[o.w..o.w + width * o.fan_in] {
                *v = rng.random_range(-bound..bound);
            }
        }
        f
    }

    fn offsets(&self, l: usize) -> LayerOffsets {
        let w = self.width;
        let m = self.latent_dim;
        let first = w * 3 + w + 2 * w * m;
        let hidden = w * w + w + 2 * w * m;
        let start = if l == 0 { 0 } else { first + (l - 1) * hidden };
        let fan_in = if l == 0 { 3 } else { w };
        LayerOffsets { w: start, b: start + w * fan_in, s: start + w * fan_in + w, t: start + w * fan_in + w + w * m, fan_in }
    }

    fn output_offset(&self) -> usize {
        let o = self.offsets(self.layers - 1);
        o.t + self.width * self.latent_dim
    }

    pub fn n_params(&self) -> usize {
        self.output_offset() + 3 * self.width + 3
    }

    fn forward(&self, x: &Vec3, z: &[f64]) -> Trace {
        let w = self.width;
        let m = self.latent_dim;
        let th = &self.theta;
        let xi = [
            (x.x - self.center[0]) * self.inv_half[0],
            (x.y - self.center[1]) * self.inv_half[1],
            (x.z - self.center[2]) * self.inv_half[2],
        ];
        let mut tr = Trace {
            a: Vec::with_capacity(self.layers),
            s: Vec::with_capacity(self.layers),
            h: Vec::with_capacity(self.layers),
            cos: Vec::with_capacity(self.layers),
            a_dot: Vec::with_capacity(self.layers),
            m_dot: Vec::with_capacity(self.layers),
            h_dot: Vec::with_capacity(self.layers),
            xi,
        };
        let mut prev: Vec<f64> = xi.to_vec();
        // tangent of the previous layer w.r.t. ξ, fan_in × 3
        let mut prev_dot: Vec<f64> = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        for l in 0..self.layers {
            let o = self.offsets(l);
            let mut a = vec![0.0; w];
            let mut a_dot = vec![0.0; w * 3];
            let mut s = vec![1.0; w];
            let mut h = vec![0.0; w];
            let mut c = vec![0.0; w];
            let mut m_dot = vec![0.0; w * 3];
            let mut h_dot = vec![0.0; w * 3];
            for i in 0..w {
                let row = &th[o.w + i * o.fan_in..o.w + (i + 1) * o.fan_in];
                let mut acc = th[o.b + i];
                let mut d = [0.0; 3];
                for (j, wij) in row.iter().enumerate() {
                    acc += wij * prev[j];
                    for k in 0..3 {
                        d[k] += wij * prev_dot[j * 3 + k];
                    }
                }
                let mut shift = 0.0;
                for q in 0..m {
                    s[i] += th[o.s + i * m + q] * z[q];
                    shift += th[o.t + i * m + q] * z[q];
                }
                a[i] = acc;
                let phase = acc * s[i] + shift;
                let (sn, cs) = (self.omega * phase).sin_cos();
                h[i] = sn;
                c[i] = cs;
                for k in 0..3 {
                    a_dot[i * 3 + k] = d[k];
                    m_dot[i * 3 + k] = s[i] * d[k];
                    h_dot[i * 3 + k] = self.omega * cs * m_dot[i * 3 + k];
                }
            }
            prev = h.clone();
            prev_dot = h_dot.clone();
            tr.a.push(a);
            tr.s.push(s);
            tr.h.push(h);
            tr.cos.push(c);
            tr.a_dot.push(a_dot);
            tr.m_dot.push(m_dot);
            tr.h_dot.push(h_dot);
        }
        tr
    }

    /// Displacement and its spatial Jacobian.
    pub fn displacement(&self, x: &Vec3, z: &[f64]) -> (Vec3, Mat3) {
        let tr = self.forward(x, z);
        let w = self.width;
        let oo = self.output_offset();
        let th = &self.theta;
        let h = &tr.h[self.layers - 1];
        let hd = &tr.h_dot[self.layers - 1];
        let mut d = Vec3::zeros();
        let mut j = Mat3::zeros();
        for r in 0..3 {
            let mut acc = th[oo + 3 * w + r];
            for i in 0..w {
                let wo = th[oo + r * w + i];
                acc += wo * h[i];
                for k in 0..3 {
                    j[(r, k)] += wo * hd[i * 3 + k] * self.inv_half[k];
                }
            }
            d[r] = acc;
        }
        (d, j)
    }

    pub fn backward(&self, x: &Vec3, z: &[f64], gd: &Vec3, gj: Option<&Mat3>, grad: &mut [f64], grad_z: &mut [f64]) {
        let tr = self.forward(x, z);
        let w = self.width;
        let m = self.latent_dim;
        let om = self.omega;
        let th = &self.theta;
        let oo = self.output_offset();
        let last = self.layers - 1;
        // cotangent on the output tangent (3 × 3, w.r.t. ξ)
        let mut gdd = [[0.0; 3]; 3];
        if let Some(gj) = gj {
            for r in 0..3 {
                for k in 0..3 {
                    gdd[r][k] = gj[(r, k)] * self.inv_half[k];
                }
            }
        }
        let mut gh = vec![0.0; w];
        let mut gh_dot = vec![0.0; w * 3];
        for r in 0..3 {
            grad[oo + 3 * w + r] += gd[r];
            for i in 0..w {
                let wo = th[oo + r * w + i];
                let mut gw = gd[r] * tr.h[last][i];
                gh[i] += wo * gd[r];
                for k in 0..3 {
                    gw += gdd[r][k] * tr.h_dot[last][i * 3 + k];
                    gh_dot[i * 3 + k] += wo * gdd[r][k];
                }
                grad[oo + r * w + i] += gw;
            }
        }
        for l in (0..self.layers).rev() {
            let o = self.offsets(l);
            let (prev, prev_dot): (&[f64], Vec<f64>) = if l == 0 {
                (&tr.xi[..], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            } else {
                (&tr.h[l - 1][..], tr.h_dot[l - 1].clone())
            };
            let mut g_prev = vec![0.0; o.fan_in];
            let mut g_prev_dot = vec![0.0; o.fan_in * 3];
            for i in 0..w {
                let c = tr.cos[l][i];
                let h = tr.h[l][i];
                let s = tr.s[l][i];
                let mut g_cos = 0.0;
                let mut g_mdot = [0.0; 3];
                for k in 0..3 {
                    g_mdot[k] = om * c * gh_dot[i * 3 + k];
                    g_cos += om * gh_dot[i * 3 + k] * tr.m_dot[l][i * 3 + k];
                }
                let gm = om * c * gh[i] - om * h * g_cos;
                let mut g_adot = [0.0; 3];
                let mut gs = tr.a[l][i] * gm;
                for k in 0..3 {
                    g_adot[k] = s * g_mdot[k];
                    gs += g_mdot[k] * tr.a_dot[l][i * 3 + k];
                }
                let ga = s * gm;
                for q in 0..m {
                    grad[o.t + i * m + q] += gm * z[q];
                    grad[o.s + i * m + q] += gs * z[q];
                    grad_z[q] += th[o.t + i * m + q] * gm + th[o.s + i * m + q] * gs;
                }
                grad[o.b + i] += ga;
                for j in 0..o.fan_in {
                    let wij = th[o.w + i * o.fan_in + j];
                    let mut gw = ga * prev[j];
                    g_prev[j] += wij * ga;
                    for k in 0..3 {
                        gw += g_adot[k] * prev_dot[j * 3 + k];
                        g_prev_dot[j * 3 + k] += wij * g_adot[k];
                    }
                    grad[o.w + i * o.fan_in + j] += gw;
                }
            }
            gh = g_prev;
            gh_dot = g_prev_dot;
        }
    }
}
