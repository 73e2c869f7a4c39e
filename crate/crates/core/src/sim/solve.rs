use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{edge_triangle_penetrations, self_penetrations, TriMesh};
use crate::inverse::ConstraintBundle;
use crate::lattice::gradient_from;
use crate::numerics::{polar_rotation, Mat3, Vec3};

use super::effects::{collision_barrier, gravity_force, jaw_edit, paralysis, Collision, SimEffects};
use super::{NodeRole, SolverSetup};

#[derive(Debug, Clone)]
pub struct SimResult {
    pub u: Vec<Vec3>,
    pub skin: TriMesh,
    pub skull: TriMesh,
    pub jaw: TriMesh,
    /// Total energy at the start of each iteration, in mN·mm.
    pub energy_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Quadrature points with det F <= 0 in the final state.
    pub inversions: usize,
    /// Edge-triangle crossings between the collision regions, or of the skin
    /// with itself when no regions are tagged.
    pub penetration_pairs: usize,
    /// Largest distance of embedded bone vertices from their prescribed positions.
    pub skull_residual: f64,
    pub jaw_residual: f64,
    pub barrier_energy: f64,
}

struct Local {
    elastic: f64,
    rhs: Vec<Vec3>,
}

fn local_step(setup: &SolverSetup, u: &[Vec3], actuation: &[Mat3]) -> Local {
    let k = setup.options.stiffness;
    let vol = setup.lattice.element_volume();
    let mut rhs = vec![Vec3::zeros(); u.len()];
    let mut elastic = 0.0;
    for (el, a) in setup.lattice.elements.iter().zip(actuation) {
        for (g, w) in setup.grads.iter().zip(&setup.weights) {
            let f = gradient_from(el, u, g);
            let target = polar_rotation(&(f * a)) * a;
            let c = k * vol * w;
            elastic += c * (f - target).norm_squared();
            for (node, ga) in el.iter().zip(g) {
                rhs[*node] += target * ga * (2.0 * c);
            }
        }
    }
    Local { elastic, rhs }
}

fn count_inversions(setup: &SolverSetup, u: &[Vec3]) -> usize {
    let mut n = 0;
    for el in &setup.lattice.elements {
        for g in &setup.grads {
            if gradient_from(el, u, g).determinant() <= 0.0 {
                n += 1;
            }
        }
    }
    n
}

fn region_penetrations(skin: &TriMesh, c: &Collision) -> usize {
    let mut up = vec![false; skin.vertices.len()];
    let mut lo = vec![false; skin.vertices.len()];
    c.upper.iter().for_each(|&i| up[i] = true);
    c.lower.iter().for_each(|&i| lo[i] = true);
    edge_triangle_penetrations(&skin.sub_mesh(|i| up[i]), &skin.sub_mesh(|i| lo[i]))
}

struct State {
    u: Vec<Vec3>,
    local: Local,
    barrier: f64,
    barrier_grad: Option<Vec<Vec3>>,
    total: f64,
}

struct Problem<'a> {
    setup: &'a SolverSetup,
    actuation: &'a [Mat3],
    force: Option<Vec<Vec3>>,
    collision: Option<&'a Collision>,
}

impl Problem<'_> {
    fn evaluate(&self, u: Vec<Vec3>) -> Result<State> {
        let local = local_step(self.setup, &u, self.actuation);
        let mut total = local.elastic;
        if let Some(f) = &self.force {
            total -= f.iter().zip(&u).zip(&self.setup.rest).map(|((f, x), x0)| f.dot(&(x - x0))).sum::<f64>();
        }
        let (barrier, barrier_grad) = match self.collision {
            Some(c) if c.enabled => {
                let ev = collision_barrier(self.setup, &u, c)?;
                (ev.energy, Some(ev.grad))
            }
            _ => (0.0, None),
        };
        total += barrier;
        Ok(State { u, local, barrier, barrier_grad, total })
    }
}

/// Local-global minimisation of the shape-targeting energy under hard bone
/// constraints. `u_init` warm-starts the free nodes.
pub fn solve_quasistatic(
    setup: &SolverSetup,
    bundle: &ConstraintBundle,
    effects: &SimEffects,
    u_init: Option<&[Vec3]>,
) -> Result<SimResult> {
    let prescribed = setup.prescribed_positions(bundle);
    let skull_goal: Vec<Vec3> = setup.skull_mesh.vertices.iter().map(|x| bundle.skull.apply(x)).collect();
    let jaw_goal: Vec<Vec3> = setup.jaw_mesh.vertices.iter().map(|x| bundle.jaw.apply(x)).collect();
    solve_core(setup, bundle, effects, u_init, prescribed, skull_goal, jaw_goal)
}

/// As [`solve_quasistatic`] but with explicit positions for the constrained
/// nodes (entries of free nodes are ignored); bone transforms are unused.
pub fn solve_prescribed(
    setup: &SolverSetup,
    bundle: &ConstraintBundle,
    prescribed: &[Vec3],
    effects: &SimEffects,
    u_init: Option<&[Vec3]>,
) -> Result<SimResult> {
    if prescribed.len() != setup.n_nodes() {
        return Err(Error::InvalidInput(format!(
            "{} prescribed positions for {} nodes",
            prescribed.len(),
            setup.n_nodes()
        )));
    }
    let skull_goal = setup.skull.apply(prescribed);
    let jaw_goal = setup.jaw.apply(prescribed);
    solve_core(setup, bundle, effects, u_init, prescribed.to_vec(), skull_goal, jaw_goal)
}

fn solve_core(
    setup: &SolverSetup,
    bundle: &ConstraintBundle,
    effects: &SimEffects,
    u_init: Option<&[Vec3]>,
    prescribed: Vec<Vec3>,
    skull_goal: Vec<Vec3>,
    jaw_goal: Vec<Vec3>,
) -> Result<SimResult> {
    if bundle.n_elements() != setup.n_elements() {
        return Err(Error::InvalidInput(format!(
            "bundle has {} actuations but the lattice has {} elements",
            bundle.n_elements(),
            setup.n_elements()
        )));
    }
    bundle.validate()?;
    effects.validate()?;
    let n = setup.n_nodes();
    let mut u0 = match u_init {
        Some(u) if u.len() == n => u.to_vec(),
        Some(u) => return Err(Error::InvalidInput(format!("initial state has {} nodes, expected {n}", u.len()))),
        None => setup.rest.clone(),
    };
    for i in 0..n {
        if !matches!(setup.roles[i], NodeRole::Free(_)) {
            u0[i] = prescribed[i];
        }
    }
    let force = effects.gravity.map(|g| gravity_force(setup, &g.accel, g.density));
    let collision = effects.collision.as_ref();
    let problem = Problem { setup, actuation: &bundle.actuation, force, collision };

    // constant part of the reduced right-hand side: -L_fp·p (+ body force)
    let mut pinned = prescribed.clone();
    for &i in &setup.free {
        pinned[i] = Vec3::zeros();
    }
    let lp = setup.apply_full(&pinned);
    let fixed: Vec<Vec3> = setup
        .free
        .iter()
        .map(|&i| -lp[i] + problem.force.as_ref().map_or(Vec3::zeros(), |f| f[i]))
        .collect();

    let mut state = problem.evaluate(u0)?;
    if let Some(c) = collision {
        let skin = setup.skin_surface(&state.u)?;
        if region_penetrations(&skin, c) > 0 {
            return Err(Error::Infeasible("collision regions interpenetrate in the initial state".into()));
        }
    }
    let line_search = collision.is_some_and(|c| c.enabled);
    let monotone = !effects.has_forces();
    let tol = setup.options.tolerance;
    // energies below this are round-off for the given stiffness and volume
    let floor = 1e-13 * setup.options.stiffness * setup.lattice.element_volume() * setup.n_elements() as f64;
    let mut trace = vec![state.total];
    let mut increases = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < setup.options.max_iterations {
        iterations += 1;
        let rhs: Vec<Vec3> = setup
            .free
            .iter()
            .zip(&fixed)
            .map(|(&i, c)| {
                let g = state.barrier_grad.as_ref().map_or(Vec3::zeros(), |g| g[i]);
                state.local.rhs[i] + c - g
            })
            .collect();
        let x = setup.solve_reduced(&rhs);
        if x.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Numeric("global solve produced non-finite positions".into()));
        }
        let mut target = state.u.clone();
        for (&i, xi) in setup.free.iter().zip(&x) {
            target[i] = *xi;
        }
        let next = if line_search {
            match search(&problem, &state, &target)? {
                Some(s) => s,
                None => {
                    converged = true;
                    break;
                }
            }
        } else {
            problem.evaluate(target)?
        };
        let prev = state.total;
        state = next;
        trace.push(state.total);
        if !state.total.is_finite() {
            return Err(Error::Numeric(format!("energy became non-finite at iteration {iterations}")));
        }
        let scale = prev.abs().max(state.total.abs()).max(floor);
        if monotone && state.total > prev + 1e-10 * scale {
            increases += 1;
            if increases >= 2 {
                return Err(Error::Numeric(format!(
                    "energy increased on two consecutive iterations ({prev:.6e} -> {:.6e})",
                    state.total
                )));
            }
            continue;
        }
        increases = 0;
        if prev - state.total <= tol * scale {
            converged = true;
            break;
        }
    }

    let u = state.u;
    let skin = setup.skin_surface(&u)?;
    let skull = setup.skull_surface(&u)?;
    let jaw = setup.jaw_surface(&u)?;
    let max_gap = |a: &[Vec3], b: &[Vec3]| a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    let skull_residual = max_gap(&skull.vertices, &skull_goal);
    let jaw_residual = max_gap(&jaw.vertices, &jaw_goal);
    let penetration_pairs = match collision {
        Some(c) => region_penetrations(&skin, c),
        None => self_penetrations(&skin),
    };
    Ok(SimResult {
        inversions: count_inversions(setup, &u),
        u,
        skin,
        skull,
        jaw,
        energy_trace: trace,
        iterations,
        converged,
        penetration_pairs,
        skull_residual,
        jaw_residual,
        barrier_energy: state.barrier,
    })
}

/// Backtrack along the global-step direction until the energy drops and the
/// regions stay separated. `None` when no admissible step exists.
fn search(problem: &Problem<'_>, state: &State, target: &[Vec3]) -> Result<Option<State>> {
    let c = problem.collision.expect("line search needs a collision model");
    let mut alpha = 1.0;
    for _ in 0..30 {
        let trial: Vec<Vec3> = state.u.iter().zip(target).map(|(a, b)| a + (b - a) * alpha).collect();
        let skin = problem.setup.skin_surface(&trial)?;
        if region_penetrations(&skin, c) == 0 {
            match problem.evaluate(trial) {
                Ok(s) if s.total.is_finite() && s.total < state.total => return Ok(Some(s)),
                Ok(_) | Err(Error::Infeasible(_)) => {}
                Err(e) => return Err(e),
            }
        }
        alpha *= 0.5;
    }
    Ok(None)
}

/// Apply paralysis and jaw reshaping, then solve.
pub fn simulate(
    setup: &SolverSetup,
    bundle: &ConstraintBundle,
    effects: &SimEffects,
    u_init: Option<&[Vec3]>,
) -> Result<SimResult> {
    effects.validate()?;
    let mut b = bundle.clone();
    if let Some(p) = &effects.paralysis {
        b = paralysis(&b, &p.elements, p.alpha)?;
    }
    match &effects.jaw_edit {
        Some(edit) => {
            let (edited, b) = jaw_edit(setup, &b, edit)?;
            solve_quasistatic(&edited, &b, effects, u_init)
        }
        None => solve_quasistatic(setup, &b, effects, u_init),
    }
}

pub fn format_report(r: &SimResult) -> String {
    let mut s = String::from("solve-report v1\n");
    writeln!(s, "iterations {}", r.iterations).unwrap();
    writeln!(s, "converged {}", r.converged).unwrap();
    writeln!(s, "energy_final {:.9e}", r.energy_trace.last().copied().unwrap_or(0.0)).unwrap();
    writeln!(s, "skull_residual {:.3e}", r.skull_residual).unwrap();
    writeln!(s, "jaw_residual {:.3e}", r.jaw_residual).unwrap();
    writeln!(s, "inversions {}", r.inversions).unwrap();
    writeln!(s, "penetration_pairs {}", r.penetration_pairs).unwrap();
    writeln!(s, "barrier_energy {:.9e}", r.barrier_energy).unwrap();
    writeln!(s, "energy_trace {}", r.energy_trace.len()).unwrap();
    for (i, e) in r.energy_trace.iter().enumerate() {
        writeln!(s, "{i} {e:.12e}").unwrap();
    }
    s
}

pub fn write_report(path: impl AsRef<Path>, r: &SimResult) -> Result<()> {
    std::fs::write(path, format_report(r))?;
    Ok(())
}
