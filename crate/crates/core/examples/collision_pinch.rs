//! Two lips actuated into each other, with and without the contact barrier.

use physface::sim::{pinch_scenario, solve_quasistatic, SimEffects};

fn main() -> physface::Result<()> {
    let s = pinch_scenario(2.0, 1.8)?;
    println!("pinch block: {} elements, {} + {} tagged lip vertices", s.setup.n_elements(), s.collision.upper.len(), s.collision.lower.len());
    for enabled in [false, true] {
        let mut c = s.collision.clone();
        c.enabled = enabled;
        let r = solve_quasistatic(&s.setup, &s.bundle, &SimEffects { collision: Some(c), ..Default::default() }, None)?;
        println!(
            "barrier {}: {} penetrating pairs, barrier energy {:.3e}, final energy {:.4e}, {} iterations",
            if enabled { "on " } else { "off" },
            r.penetration_pairs,
            r.barrier_energy,
            r.energy_trace.last().copied().unwrap_or(0.0),
            r.iterations
        );
    }
    Ok(())
}
