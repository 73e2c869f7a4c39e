//! Replay ground-truth actuations with gravity, one-sided paralysis and a
//! shrunken jaw.

use physface::inverse::extract_from_map;
use physface::numerics::Vec3;
use physface::phantom::Corpus;
use physface::pipeline::penetration_pairs;
use physface::sim::{setup_for_anatomy, simulate, Gravity, JawEdit, Paralysis, SimEffects, SolverOptions};

fn main() -> physface::Result<()> {
    let corpus = Corpus::synthesize(1, 4, 0)?;
    let anat = &corpus.identities[0];
    let ex = (0..4).find(|&e| corpus.spec(0, e).jaw_angle.abs() > 1e-3).unwrap_or(1);
    let setup = setup_for_anatomy(anat, 9.9, SolverOptions::default())?;
    let (bundle, _) = extract_from_map(&corpus.ground_truth(0, ex)?, &setup.lattice, &anat.jaw.vertices, &anat.skull.vertices, "truth")?;
    let base = simulate(&setup, &bundle, &SimEffects::default(), None)?;
    let left: Vec<usize> = (0..setup.n_elements()).filter(|&e| setup.lattice.element_center(e).x > 0.0).collect();

    let cases = [
        ("gravity, face down", SimEffects { gravity: Some(Gravity { accel: Vec3::new(0.0, 0.0, -9.81), density: 0.9 }), ..Default::default() }),
        ("left paralysis", SimEffects { paralysis: Some(Paralysis { elements: left, alpha: 1.0 }), ..Default::default() }),
        ("jaw scaled 0.9", SimEffects { jaw_edit: Some(JawEdit::scale(0.9, anat.hinge.pivot())), ..Default::default() }),
    ];
    println!("baseline: {} iterations, skin penetrations {}", base.iterations, penetration_pairs(&base.skin, &base.skull, &base.jaw));
    for (name, fx) in cases {
        let r = simulate(&setup, &bundle, &fx, Some(&base.u))?;
        let moved: Vec<f64> = r.skin.vertices.iter().zip(&base.skin.vertices).map(|(a, b)| (a - b).norm()).collect();
        let mean = moved.iter().sum::<f64>() / moved.len() as f64;
        let max = moved.iter().copied().fold(0.0, f64::max);
        println!("{name:>20}: skin moves {mean:.3} mm on average, {max:.3} mm at most; {} iterations, {} inversions", r.iterations, r.inversions);
    }
    Ok(())
}
