use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TriMesh;
use crate::error::{Error, Result};
use crate::numerics::Vec3;

/// A point on a triangle in barycentric form, so it can be re-evaluated on
/// any mesh sharing the connectivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub triangle: usize,
    pub bary: [f64; 3],
    pub point: Vec3,
}

impl SurfaceSample {
    pub fn evaluate(&self, mesh: &TriMesh) -> Vec3 {
        let [a, b, c] = mesh.corners(self.triangle);
        a * self.bary[0] + b * self.bary[1] + c * self.bary[2]
    }
}

/// Area-weighted uniform samples.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut acc = 0.0;
    for t in 0..mesh.triangles.len() {
        acc += mesh.triangle_area(t);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::Degenerate("mesh has zero area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.random::<f64>() * acc;
        let t = cdf.partition_point(|&c| c < r).min(cdf.len() - 1);
        let s = rng.random::<f64>().sqrt();
        let u = rng.random::<f64>();
        let bary = [1.0 - s, s * (1.0 - u), s * u];
        let mut smp = SurfaceSample { triangle: t, bary, point: Vec3::zeros() };
        smp.point = smp.evaluate(mesh);
        out.push(smp);
    }
    Ok(out)
}

/// `n` vertex indices drawn without replacement from `pool` (all vertices if
/// `None`). Returns the whole pool when it is smaller than `n`.
pub fn sample_vertices(mesh: &TriMesh, n: usize, seed: u64, pool: Option<&[usize]>) -> Vec<usize> {
    let mut idx: Vec<usize> = match pool {
        Some(p) => p.to_vec(),
        None => (0..mesh.vertices.len()).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = n.min(idx.len());
    for i in 0..take {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    idx.truncate(take);
    idx
}
