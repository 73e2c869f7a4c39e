//! The simulation-free round trip: extract actuations and a jaw transform
//! from a trained field, then simulate them and compare with the field.

use physface::field::{BoundField, FaceModel};
use physface::inverse::{extract_constraints, format_bundle};
use physface::pipeline::{field_output, load_corpus, metric_v2v, sim_options, train_model, RunConfig};
use physface::sim::{format_report, setup_for_anatomy, simulate, warm_start, SimEffects};

fn main() -> physface::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.corpus.identities = 2;
    cfg.corpus.expressions = 4;
    cfg.train.schedule.epochs = 60;
    cfg.train.schedule.decay_start = 30;
    let corpus = load_corpus(&cfg.corpus)?;
    let ck = train_model(&corpus, &cfg)?.checkpoint;
    let model = &ck.model;
    let (id, ex) = (0, 1);
    let l = ck.latent(id, ex).expect("trained pair");
    let out = field_output(model, &corpus.canonical, &l.beta, &l.gamma)?;
    let anatomy = &out.anatomy;

    for h in [14.85, 9.9, 6.6] {
        let setup = setup_for_anatomy(anatomy, h, sim_options(&cfg))?;
        let (bundle, report) = extract_constraints(
            model,
            &l.beta,
            &l.gamma,
            &setup.lattice,
            &anatomy.jaw.vertices,
            &anatomy.skull.vertices,
            "example",
        )?;
        let z = FaceModel::joint_latent(&l.beta, &l.gamma);
        let init = warm_start(&BoundField { field: &model.expression, latent: &z }, &setup.rest);
        let sim = simulate(&setup, &bundle, &SimEffects::default(), Some(&init))?;
        println!(
            "h {h:>5}: {} elements, {} flagged, v2v to field {:.4} mm, jaw residual {:.1e}, {} iterations",
            setup.n_elements(),
            report.flagged.len(),
            metric_v2v(&out.skin, &sim.skin, None)?,
            sim.jaw_residual,
            sim.iterations
        );
        if h == 9.9 {
            print!("{}", format_report(&sim));
            let text = format_bundle(&bundle);
            println!("bundle: {} lines, header {:?}", text.lines().count(), text.lines().next().unwrap_or(""));
        }
    }
    Ok(())
}
