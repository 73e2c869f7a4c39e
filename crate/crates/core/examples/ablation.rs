//! Retrain with single losses switched off and compare constraint metrics.

use physface::pipeline::{ablation_study, format_ablation_csv, load_corpus, RunConfig, Variant};

fn main() -> physface::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.corpus.identities = 2;
    cfg.corpus.expressions = 4;
    cfg.train.schedule.epochs = 60;
    cfg.train.schedule.decay_start = 30;
    cfg.ablate.variants = vec![Variant::Full, Variant::NoRigid, Variant::NoSoft, Variant::NoBone];
    let corpus = load_corpus(&cfg.corpus)?;
    let rows = ablation_study(&corpus, &cfg)?;
    print!("{}", format_ablation_csv(&rows));
    Ok(())
}
