//! Library-level workflows shared by the commands: field evaluation, the
//! resolution study and loss ablations.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::field::{BoundField, Checkpoint, FaceModel};
use crate::geometry::TriMesh;
use crate::inverse::{extract_constraints, train, TrainResult, TrainingSet};
use crate::phantom::{Anatomy, Corpus};
use crate::sim::{setup_for_anatomy, simulate, warm_start, SimEffects, SolverOptions};

use super::config::{CorpusConfig, RunConfig, Variant};
use super::metrics::{evaluate_outcome, jaw_fit, jaw_recovery_error, metric_csv_row, metric_v2v, MetricOptions, MetricReport, Outcome, METRIC_CSV_HEADER};

pub fn load_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    match &cfg.path {
        Some(p) => Corpus::load(p),
        None => Corpus::synthesize(cfg.identities, cfg.expressions, cfg.seed),
    }
}

pub fn sim_options(cfg: &RunConfig) -> SolverOptions {
    SolverOptions {
        quadrature: cfg.sim.quadrature,
        tolerance: cfg.sim.tolerance,
        max_iterations: cfg.sim.max_iterations,
        stiffness: cfg.train.material.mu(),
    }
}

/// Canonical anatomy carried into an identity's material space by the identity field.
pub fn model_anatomy(model: &FaceModel, canonical: &Anatomy, beta: &[f64]) -> Result<Anatomy> {
    let map = |m: &TriMesh| m.vertices.iter().map(|x| model.identity_point(x, beta)).collect::<Result<Vec<_>>>();
    canonical.with_surfaces(map(&canonical.skin)?, map(&canonical.skull)?, map(&canonical.jaw)?)
}

/// Field output for one latent pair, with the material-space anatomy it deforms.
#[derive(Debug, Clone)]
pub struct FieldOutput {
    pub anatomy: Anatomy,
    pub skin: TriMesh,
    pub skull: TriMesh,
    pub jaw: TriMesh,
}

impl FieldOutput {
    pub fn outcome(&self) -> Outcome<'_> {
        Outcome { skin: &self.skin, skull: &self.skull, jaw: &self.jaw, rest_skull: &self.anatomy.skull, rest_jaw: &self.anatomy.jaw }
    }
}

pub fn field_output(model: &FaceModel, canonical: &Anatomy, beta: &[f64], gamma: &[f64]) -> Result<FieldOutput> {
    let anatomy = model_anatomy(model, canonical, beta)?;
    Ok(FieldOutput {
        skin: model.map_expression_mesh(&anatomy.skin, beta, gamma)?,
        skull: model.map_expression_mesh(&anatomy.skull, beta, gamma)?,
        jaw: model.map_expression_mesh(&anatomy.jaw, beta, gamma)?,
        anatomy,
    })
}

pub fn eval_mask<'a>(corpus: &'a Corpus, opts: &MetricOptions) -> Option<&'a [usize]> {
    opts.frontal_only.then_some(corpus.manifest.eval_mask.as_slice())
}

/// Expressions whose ground truth moves the jaw.
pub fn jaw_open(corpus: &Corpus, id: usize, ex: usize) -> bool {
    let s = corpus.spec(id, ex);
    s.jaw_angle.abs() > 1e-3 || s.jaw_slide.abs() > 1e-3
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEval {
    pub identity: usize,
    pub expression: usize,
    pub report: MetricReport,
    /// Neutral-jaw distance between the field's fitted jaw motion and the true one (mm).
    pub jaw_recovery: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_field_pair(
    model: &FaceModel,
    corpus: &Corpus,
    id: usize,
    ex: usize,
    beta: &[f64],
    gamma: &[f64],
    opts: &MetricOptions,
    seed: u64,
) -> Result<PairEval> {
    let out = field_output(model, &corpus.canonical, beta, gamma)?;
    let truth = &corpus.identities[id];
    let report = evaluate_outcome(
        &out.outcome(),
        &corpus.expression_skins[id][ex],
        Some((&truth.skull, &truth.jaw)),
        eval_mask(corpus, opts),
        opts,
        seed,
    )?;
    let (fit, _) = jaw_fit(&out.anatomy.jaw.vertices, &out.jaw.vertices)?;
    let jaw_recovery = jaw_recovery_error(&truth.jaw.vertices, &fit, &corpus.ground_truth(id, ex)?.jaw_transform());
    Ok(PairEval { identity: id, expression: ex, report, jaw_recovery })
}

/// Every corpus pair evaluated with the checkpoint's latent table.
pub fn evaluate_checkpoint(ck: &Checkpoint, corpus: &Corpus, opts: &MetricOptions, seed: u64) -> Result<Vec<PairEval>> {
    let mut out = Vec::new();
    for id in 0..corpus.n_ids() {
        for ex in 0..corpus.expression_skins[id].len() {
            let l = ck
                .latent(id, ex)
                .ok_or_else(|| Error::InvalidInput(format!("checkpoint has no latent for pair ({id}, {ex})")))?;
            out.push(evaluate_field_pair(&ck.model, corpus, id, ex, &l.beta, &l.gamma, opts, seed)?);
        }
    }
    Ok(out)
}

/// Mean jaw recovery over jaw-open pairs.
pub fn mean_jaw_recovery(corpus: &Corpus, evals: &[PairEval]) -> f64 {
    let open: Vec<f64> = evals.iter().filter(|e| jaw_open(corpus, e.identity, e.expression)).map(|e| e.jaw_recovery).collect();
    if open.is_empty() {
        0.0
    } else {
        open.iter().sum::<f64>() / open.len() as f64
    }
}

pub fn train_model(corpus: &Corpus, cfg: &RunConfig) -> Result<TrainResult> {
    let data = TrainingSet::from_corpus(corpus, cfg.train.pool_spacing)?;
    train(&data, &cfg.train, &cfg.field, cfg.seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub label: String,
    pub h: Option<f64>,
    /// Skin V2V between simulation and the field's own output (mm).
    pub v2v_to_field: f64,
    /// Metrics against the corpus ground truth.
    pub report: MetricReport,
    pub inversions: usize,
    pub max_jaw_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionStudy {
    /// Ladder rows coarse to fine, then the network row.
    pub rows: Vec<StudyRow>,
    pub pairs: Vec<(usize, usize)>,
    pub head_diameter: f64,
    pub strictly_decreasing: bool,
    pub finest_within_bound: bool,
}

impl ResolutionStudy {
    pub fn trend_holds(&self) -> bool {
        self.strictly_decreasing && self.finest_within_bound
    }
}

/// Pairs entering the resolution study.
pub fn study_pairs(corpus: &Corpus, cfg: &RunConfig) -> Vec<(usize, usize)> {
    let n_ids = if cfg.study.identities == 0 { corpus.n_ids() } else { cfg.study.identities.min(corpus.n_ids()) };
    let mut pairs = Vec::new();
    for id in 0..n_ids {
        let exprs = (0..corpus.expression_skins[id].len()).filter(|&ex| jaw_open(corpus, id, ex));
        pairs.extend(exprs.take(cfg.study.expressions_per_identity).map(|ex| (id, ex)));
    }
    pairs
}

/// Extract and simulate each study pair at every ladder spacing.
pub fn resolution_study(ck: &Checkpoint, corpus: &Corpus, cfg: &RunConfig) -> Result<ResolutionStudy> {
    let model = &ck.model;
    let opts = &cfg.eval;
    let mask = eval_mask(corpus, opts);
    let pairs = study_pairs(corpus, cfg);
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no jaw-open expressions to study".into()));
    }
    let n_h = cfg.sim.ladder.len();
    let mut per_h: Vec<Vec<(f64, MetricReport)>> = vec![Vec::new(); n_h];
    let mut inversions = vec![0usize; n_h];
    let mut residual = vec![0.0f64; n_h];
    let mut network = Vec::new();
    let mut by_id: Vec<(usize, Vec<usize>)> = Vec::new();
    for &(id, ex) in &pairs {
        match by_id.last_mut() {
            Some((last, exs)) if *last == id => exs.push(ex),
            _ => by_id.push((id, vec![ex])),
        }
    }
    let latent = |id: usize, ex: usize| {
        ck.latent(id, ex).ok_or_else(|| Error::InvalidInput(format!("checkpoint has no latent for pair ({id}, {ex})")))
    };
    for (id, exs) in &by_id {
        let truth = &corpus.identities[*id];
        let outputs = exs
            .iter()
            .map(|&ex| {
                let l = latent(*id, ex)?;
                Ok((ex, l, field_output(model, &corpus.canonical, &l.beta, &l.gamma)?))
            })
            .collect::<Result<Vec<_>>>()?;
        for (ex, _, out) in &outputs {
            let r = evaluate_outcome(&out.outcome(), &corpus.expression_skins[*id][*ex], Some((&truth.skull, &truth.jaw)), mask, opts, cfg.seed)?;
            network.push((0.0, r));
        }
        let anatomy = &outputs[0].2.anatomy;
        for (k, &h) in cfg.sim.ladder.iter().enumerate() {
            let setup = setup_for_anatomy(anatomy, h, sim_options(cfg))?;
            for (ex, l, out) in &outputs {
                let provenance = format!("{}:{id}:{ex}", ck.id());
                let (bundle, _) =
                    extract_constraints(model, &l.beta, &l.gamma, &setup.lattice, &anatomy.jaw.vertices, &anatomy.skull.vertices, &provenance)?;
                let z = FaceModel::joint_latent(&l.beta, &l.gamma);
                let init = warm_start(&BoundField { field: &model.expression, latent: &z }, &setup.rest);
                let sim = simulate(&setup, &bundle, &SimEffects::default(), Some(&init))?;
                let to_field = metric_v2v(&out.skin, &sim.skin, mask)?;
                let outcome = Outcome { skin: &sim.skin, skull: &sim.skull, jaw: &sim.jaw, rest_skull: &anatomy.skull, rest_jaw: &anatomy.jaw };
                let r = evaluate_outcome(&outcome, &corpus.expression_skins[*id][*ex], Some((&truth.skull, &truth.jaw)), mask, opts, cfg.seed)?;
                per_h[k].push((to_field, r));
                inversions[k] += sim.inversions;
                residual[k] = residual[k].max(sim.jaw_residual);
            }
        }
    }
    let summarise = |rows: &[(f64, MetricReport)]| {
        let v = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
        let reports: Vec<MetricReport> = rows.iter().map(|r| r.1).collect();
        (v, MetricReport::mean(&reports))
    };
    let mut rows: Vec<StudyRow> = cfg
        .sim
        .ladder
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let (v, report) = summarise(&per_h[k]);
            StudyRow { label: format!("h={h}"), h: Some(h), v2v_to_field: v, report, inversions: inversions[k], max_jaw_residual: residual[k] }
        })
        .collect();
    let (_, net) = summarise(&network);
    rows.push(StudyRow { label: "network".into(), h: None, v2v_to_field: 0.0, report: net, inversions: 0, max_jaw_residual: 0.0 });
    let head_diameter = corpus.canonical.skin.bbox().extent().max();
    let ladder_rows = &rows[..n_h];
    let strictly_decreasing = ladder_rows.windows(2).all(|w| w[1].v2v_to_field < w[0].v2v_to_field);
    let finest_within_bound = ladder_rows[n_h - 1].v2v_to_field < cfg.study.max_relative_v2v * head_diameter;
    Ok(ResolutionStudy { rows, pairs, head_diameter, strictly_decreasing, finest_within_bound })
}

pub fn format_study_csv(s: &ResolutionStudy) -> String {
    let mut out = format!("h,v2v_to_field,inversions,max_jaw_residual,{METRIC_CSV_HEADER}\n");
    for r in &s.rows {
        let h = r.h.map_or("network".to_string(), |h| format!("{h}"));
        writeln!(out, "{h},{:.9e},{},{:.3e},{}", r.v2v_to_field, r.inversions, r.max_jaw_residual, metric_csv_row(&r.label, &r.report)).unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: MetricReport,
    /// Over jaw-open pairs (mm).
    pub jaw_recovery: f64,
    pub diverged_at: Option<usize>,
}

pub fn variant_config(cfg: &RunConfig, v: Variant) -> RunConfig {
    let mut c = cfg.clone();
    let w = &mut c.train.weights;
    match v {
        Variant::Full => {}
        Variant::NoBone => w.bone = 0.0,
        Variant::NoRigid => w.rigid = 0.0,
        Variant::NoSoft => w.soft = 0.0,
        Variant::NoLip => w.lip = 0.0,
    }
    c
}

/// Retrain once per variant with one loss switched off and evaluate on the corpus.
pub fn ablation_study(corpus: &Corpus, cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let data = TrainingSet::from_corpus(corpus, cfg.train.pool_spacing)?;
    let mut rows = Vec::new();
    for &v in &cfg.ablate.variants {
        let vc = variant_config(cfg, v);
        let res = train(&data, &vc.train, &vc.field, vc.seed)?;
        let evals = evaluate_checkpoint(&res.checkpoint, corpus, &vc.eval, vc.seed)?;
        let reports: Vec<MetricReport> = evals.iter().map(|e| e.report).collect();
        rows.push(AblationRow {
            variant: v,
            report: MetricReport::mean(&reports),
            jaw_recovery: mean_jaw_recovery(corpus, &evals),
            diverged_at: res.diverged_at,
        });
    }
    Ok(rows)
}

pub fn format_ablation_csv(rows: &[AblationRow]) -> String {
    let (first, rest) = METRIC_CSV_HEADER.split_once(',').unwrap();
    let mut out = format!("{first},jaw_recovery,{rest}\n");
    for r in rows {
        let row = metric_csv_row(r.variant.name(), &r.report);
        let (label, metrics) = row.split_once(',').unwrap();
        writeln!(out, "{label},{:.9e},{metrics}", r.jaw_recovery).unwrap();
    }
    out
}
