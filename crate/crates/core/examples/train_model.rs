//! Train the identity and expression fields on a small phantom corpus and
//! save the checkpoint. First argument: epochs (default 60).

use physface::field::Checkpoint;
use physface::inverse::format_loss_csv;
use physface::pipeline::{evaluate_checkpoint, load_corpus, mean_jaw_recovery, train_model, MetricReport, RunConfig};

fn main() -> physface::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.corpus.identities = 2;
    cfg.corpus.expressions = 4;
    cfg.train.schedule.epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    cfg.train.schedule.decay_start = cfg.train.schedule.epochs / 2;
    let corpus = load_corpus(&cfg.corpus)?;
    let result = train_model(&corpus, &cfg)?;
    let csv = format_loss_csv(&result.log);
    let lines: Vec<&str> = csv.lines().collect();
    println!("{}", lines[0]);
    for l in lines.iter().skip(1).step_by((lines.len() / 8).max(1)) {
        println!("{l}");
    }
    if let Some(step) = result.diverged_at {
        println!("diverged at step {step}");
    }
    let evals = evaluate_checkpoint(&result.checkpoint, &corpus, &cfg.eval, cfg.seed)?;
    let mean = MetricReport::mean(&evals.iter().map(|e| e.report).collect::<Vec<_>>());
    println!(
        "v2v {:.3} mm, jaw rigidity {:.4} mm, skull fixation {:.4} mm, jaw recovery {:.3} mm",
        mean.v2v,
        mean.jaw_rigidity,
        mean.skull_fixation,
        mean_jaw_recovery(&corpus, &evals)
    );
    let path = std::env::temp_dir().join("physface_checkpoint.json");
    result.checkpoint.save(&path)?;
    let back = Checkpoint::load(&path)?;
    println!("saved {} (id {})", path.display(), back.id());
    Ok(())
}
