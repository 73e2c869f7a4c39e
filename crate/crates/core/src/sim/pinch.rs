//! A block with a horizontal slit whose two lips are actuated to swell into
//! each other.

use std::collections::HashMap;

use crate::error::Result;
use crate::geometry::TriMesh;
use crate::inverse::ConstraintBundle;
use crate::lattice::HexLattice;
use crate::numerics::{Mat3, Vec3};

use super::effects::Collision;
use super::{assemble, SolverOptions, SolverSetup};

const NX: usize = 12;
const NY: usize = 11;
const NZ: usize = 8;
/// Slit occupies cell row `SLIT_Y` from `SLIT_Z` to the front.
const SLIT_Y: usize = 5;
const SLIT_Z: usize = 3;
const LIP_ROWS: usize = 2;

pub struct PinchScenario {
    pub setup: SolverSetup,
    pub bundle: ConstraintBundle,
    /// Upper and lower slit faces, barrier enabled.
    pub collision: Collision,
}

/// Outer surface of a union of unit cells, outward oriented.
pub(crate) fn cell_union_surface(origin: Vec3, h: f64, cells: &[[usize; 3]], dims: [usize; 3]) -> Result<TriMesh> {
    let occupied = |c: [i64; 3]| -> bool {
        (0..3).all(|i| c[i] >= 0 && (c[i] as usize) < dims[i])
            && cells.binary_search(&[c[0] as usize, c[1] as usize, c[2] as usize]).is_ok()
    };
    let mut ids: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut vid = |p: [usize; 3], vertices: &mut Vec<Vec3>| -> usize {
        *ids.entry(p).or_insert_with(|| {
            vertices.push(origin + Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64) * h);
            vertices.len() - 1
        })
    };
    for c in cells {
        for (a, b, cc) in [(0usize, 1usize, 2usize), (1, 2, 0), (2, 0, 1)] {
            for s in [-1i64, 1] {
                let mut n = [c[0] as i64, c[1] as i64, c[2] as i64];
                n[a] += s;
                if occupied(n) {
                    continue;
                }
                let mut base = *c;
                if s > 0 {
                    base[a] += 1;
                }
                let mut pb = base;
                pb[b] += 1;
                let mut pbc = pb;
                pbc[cc] += 1;
                let mut pc = base;
                pc[cc] += 1;
                let q = [base, pb, pbc, pc].map(|p| vid(p, &mut vertices));
                if s > 0 {
                    triangles.push([q[0], q[1], q[2]]);
                    triangles.push([q[0], q[2], q[3]]);
                } else {
                    triangles.push([q[0], q[2], q[1]]);
                    triangles.push([q[0], q[3], q[2]]);
                }
            }
        }
    }
    TriMesh::new(vertices, triangles)
}

fn slab(lo: Vec3, hi: Vec3) -> Result<TriMesh> {
    let v: Vec<Vec3> = (0..8)
        .map(|c| {
            Vec3::new(
                if c & 1 == 0 { lo.x } else { hi.x },
                if c & 2 == 0 { lo.y } else { hi.y },
                if c & 4 == 0 { lo.z } else { hi.z },
            )
        })
        .collect();
    let t = vec![
        [0, 2, 1],
        [1, 2, 3],
        [4, 5, 6],
        [5, 7, 6],
        [0, 1, 4],
        [1, 5, 4],
        [2, 6, 3],
        [3, 6, 7],
        [0, 4, 2],
        [2, 4, 6],
        [1, 3, 5],
        [3, 7, 5],
    ];
    TriMesh::new(v, t)
}

/// Build the scenario at cell size `h` with lip stretch `swell` across the
/// slit; bones are thin plates in the back layer of cells.
pub fn pinch_scenario(h: f64, swell: f64) -> Result<PinchScenario> {
    let dims = [NX, NY, NZ];
    let in_slit = |c: &[usize; 3]| c[1] == SLIT_Y && c[2] >= SLIT_Z;
    let mut cells = Vec::new();
    for k in 0..NZ {
        for j in 0..NY {
            for i in 0..NX {
                let c = [i, j, k];
                if !in_slit(&c) {
                    cells.push(c);
                }
            }
        }
    }
    let lattice = HexLattice::from_cells(Vec3::zeros(), h, dims, cells.clone())?;
    cells.sort_unstable();
    let skin = cell_union_surface(Vec3::zeros(), h, &cells, dims)?;
    let w = NX as f64 * h;
    let top = NY as f64 * h;
    let skull = slab(Vec3::new(0.5 * h, (SLIT_Y as f64 + 3.5) * h, 0.25 * h), Vec3::new(w - 0.5 * h, top - 0.5 * h, 0.75 * h))?;
    let jaw = slab(Vec3::new(0.5 * h, 0.5 * h, 0.25 * h), Vec3::new(w - 0.5 * h, (SLIT_Y as f64 - 2.5) * h, 0.75 * h))?;
    let setup = assemble(lattice, skin, skull, jaw, SolverOptions::default())?;

    let stretch = Mat3::from_diagonal(&Vec3::new(1.0, swell, 1.0));
    let mut bundle = ConstraintBundle::identity(setup.n_elements());
    bundle.provenance = "pinch".into();
    for (e, c) in setup.lattice.cells.iter().enumerate() {
        let lip = c[2] >= SLIT_Z
            && ((c[1] > SLIT_Y && c[1] <= SLIT_Y + LIP_ROWS) || (c[1] < SLIT_Y && c[1] + LIP_ROWS >= SLIT_Y));
        if lip {
            bundle.actuation[e] = stretch;
        }
    }

    let y_up = (SLIT_Y + 1) as f64 * h;
    let y_lo = SLIT_Y as f64 * h;
    let z0 = SLIT_Z as f64 * h;
    let on = |v: &Vec3, y: f64| (v.y - y).abs() < 1e-9 * h && v.z >= z0 - 1e-9 * h;
    let upper = (0..setup.skin_mesh.vertices.len()).filter(|&i| on(&setup.skin_mesh.vertices[i], y_up)).collect();
    let lower = (0..setup.skin_mesh.vertices.len()).filter(|&i| on(&setup.skin_mesh.vertices[i], y_lo)).collect();
    let collision = Collision { upper, lower, d_hat: 0.5 * h, stiffness: 50.0, enabled: true };
    Ok(PinchScenario { setup, bundle, collision })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{solve_quasistatic, SimEffects};

    #[test]
    fn union_surface_is_closed() {
        let s = pinch_scenario(2.0, 1.8).unwrap();
        s.setup.skin_mesh.check_watertight().unwrap();
        let vol = s.setup.skin_mesh.signed_volume();
        let expect = s.setup.n_elements() as f64 * 8.0;
        assert!((vol - expect).abs() < 1e-9 * expect, "{vol} vs {expect}");
        assert!(!s.collision.upper.is_empty() && !s.collision.lower.is_empty());
    }

    #[test]
    fn barrier_prevents_lip_crossing() {
        let s = pinch_scenario(2.0, 1.8).unwrap();
        let mut off = s.collision.clone();
        off.enabled = false;
        let free = solve_quasistatic(&s.setup, &s.bundle, &SimEffects { collision: Some(off), ..Default::default() }, None)
            .unwrap();
        assert!(free.penetration_pairs > 0);
        let on = SimEffects { collision: Some(s.collision.clone()), ..Default::default() };
        let r = solve_quasistatic(&s.setup, &s.bundle, &on, None).unwrap();
        assert_eq!(r.penetration_pairs, 0);
        assert!(r.energy_trace.iter().all(|e| e.is_finite()));
        assert!(r.barrier_energy > 0.0);
    }
}
