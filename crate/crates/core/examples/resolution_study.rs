//! Simulated-vs-field skin error across lattice spacings, coarse to fine.

use physface::pipeline::{format_study_csv, load_corpus, resolution_study, train_model, RunConfig};

fn main() -> physface::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.corpus.identities = 2;
    cfg.corpus.expressions = 4;
    cfg.train.schedule.epochs = 60;
    cfg.train.schedule.decay_start = 30;
    cfg.sim.ladder = vec![22.44, 14.85, 9.9, 6.6];
    cfg.study.expressions_per_identity = 1;
    let corpus = load_corpus(&cfg.corpus)?;
    let ck = train_model(&corpus, &cfg)?.checkpoint;
    let study = resolution_study(&ck, &corpus, &cfg)?;
    print!("{}", format_study_csv(&study));
    println!(
        "strictly decreasing {}, finest below {:.2} mm {}",
        study.strictly_decreasing,
        cfg.study.max_relative_v2v * study.head_diameter,
        study.finest_within_bound
    );
    Ok(())
}
