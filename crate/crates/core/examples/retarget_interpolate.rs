//! Transfer an expression code from one identity to another and blend
//! between two expressions, simulating each frame.

use physface::field::{BoundField, FaceModel};
use physface::inverse::extract_constraints;
use physface::pipeline::{field_output, load_corpus, metric_v2v, sim_options, train_model, RunConfig};
use physface::sim::{setup_for_anatomy, simulate, warm_start, SimEffects};

fn main() -> physface::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.corpus.identities = 2;
    cfg.corpus.expressions = 4;
    cfg.train.schedule.epochs = 60;
    cfg.train.schedule.decay_start = 30;
    let corpus = load_corpus(&cfg.corpus)?;
    let ck = train_model(&corpus, &cfg)?.checkpoint;
    let model = &ck.model;
    let latent = |id, ex| ck.latent(id, ex).expect("trained pair").clone();
    let (source, target) = (latent(0, 2), latent(1, 0));
    let rest = latent(1, 1);

    let anatomy = field_output(model, &corpus.canonical, &target.beta, &target.gamma)?.anatomy;
    let setup = setup_for_anatomy(&anatomy, 9.9, sim_options(&cfg))?;
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        // identity 1 wearing a blend of its own expression and identity 0's
        let gamma: Vec<f64> = rest.gamma.iter().zip(&source.gamma).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        let out = field_output(model, &corpus.canonical, &target.beta, &gamma)?;
        let (bundle, _) =
            extract_constraints(model, &target.beta, &gamma, &setup.lattice, &anatomy.jaw.vertices, &anatomy.skull.vertices, "retarget")?;
        let z = FaceModel::joint_latent(&target.beta, &gamma);
        let init = warm_start(&BoundField { field: &model.expression, latent: &z }, &setup.rest);
        let sim = simulate(&setup, &bundle, &SimEffects::default(), Some(&init))?;
        let angle = ((bundle.jaw.r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos();
        println!(
            "t {t:.2}: jaw rotation {:.4} rad, simulated vs field {:.4} mm, {} inversions",
            angle,
            metric_v2v(&out.skin, &sim.skin, None)?,
            sim.inversions
        );
    }
    Ok(())
}
