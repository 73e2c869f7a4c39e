//! The eight run-directory workflows behind the command-line tool.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{BoundField, Checkpoint, FaceModel};
use crate::geometry::{load_obj, save_obj, self_penetrations, TriMesh};
use crate::inverse::{
    extract_constraints, fit_latents, format_loss_csv, read_bundle, write_bundle, Camera, FitResult, Observation, TrainingSet,
};
use crate::lattice::{embed, read_lattice, voxelize, write_lattice, SurfaceTag};
use crate::numerics::{Mat3, RigidTransform, Vec3};
use crate::phantom::{gen_corpus, hex_digest, Anatomy, BoneOracle};
use crate::sim::{assemble_embedded, simulate, warm_start, write_report, Gravity, JawEdit, Paralysis, SimEffects, SolverSetup};

use super::config::{RunConfig, Side};
use super::metrics::{
    evaluate_outcome, format_metric_csv, metric_fscore, metric_normal_error, metric_s2m, metric_v2v, MetricReport, Outcome,
};
use super::study::{
    ablation_study, evaluate_checkpoint, evaluate_field_pair, field_output, format_ablation_csv, format_study_csv, load_corpus,
    mean_jaw_recovery, model_anatomy, resolution_study, sim_options, train_model,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenCorpus,
    Train,
    Fit,
    Extract,
    Simulate,
    Evaluate,
    StudyResolution,
    Ablate,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::GenCorpus,
        Command::Train,
        Command::Fit,
        Command::Extract,
        Command::Simulate,
        Command::Evaluate,
        Command::StudyResolution,
        Command::Ablate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::GenCorpus => "gen-corpus",
            Command::Train => "train",
            Command::Fit => "fit",
            Command::Extract => "extract",
            Command::Simulate => "simulate",
            Command::Evaluate => "evaluate",
            Command::StudyResolution => "study-resolution",
            Command::Ablate => "ablate",
        }
    }
}

/// What a command reports back: printable summary lines and the files it wrote.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub lines: Vec<String>,
    pub files: Vec<String>,
}

pub const MANIFEST_FILE: &str = "run_manifest.txt";
pub const METRICS_FILE: &str = "metrics.csv";

struct RunDir {
    root: PathBuf,
    summary: RunSummary,
}

impl RunDir {
    fn new(out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out)?;
        Ok(Self { root: out.to_path_buf(), summary: RunSummary::default() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn write(&mut self, name: &str, content: &str) -> Result<()> {
        std::fs::write(self.path(name), content)?;
        self.record(name);
        Ok(())
    }

    fn save_mesh(&mut self, name: &str, mesh: &TriMesh) -> Result<()> {
        save_obj(mesh, self.path(name))?;
        self.record(name);
        Ok(())
    }

    fn record(&mut self, name: &str) {
        if !self.summary.files.iter().any(|f| f == name) {
            self.summary.files.push(name.to_string());
        }
    }

    fn say(&mut self, line: String) {
        self.summary.lines.push(line);
    }

    /// Config, seeds, version and a digest of every output.
    fn finish(mut self, command: Command, cfg: &RunConfig, extra: &[(&str, String)]) -> Result<RunSummary> {
        self.write("config.toml", &cfg.to_toml())?;
        let mut m = String::from("run-manifest v1\n");
        writeln!(m, "command {}", command.name()).unwrap();
        writeln!(m, "version {} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")).unwrap();
        writeln!(m, "config_hash {}", cfg.hash()).unwrap();
        writeln!(m, "seed {}", cfg.seed).unwrap();
        writeln!(m, "corpus_seed {}", cfg.corpus.seed).unwrap();
        for (k, v) in extra {
            writeln!(m, "{k} {v}").unwrap();
        }
        let mut files = self.summary.files.clone();
        files.sort();
        for f in &files {
            let bytes = std::fs::read(self.path(f))?;
            writeln!(m, "file {f} {}", hex_digest(&bytes)).unwrap();
        }
        std::fs::write(self.path(MANIFEST_FILE), m)?;
        self.record(MANIFEST_FILE);
        Ok(self.summary)
    }
}

fn require<'a>(v: &'a Option<String>, key: &str) -> Result<&'a str> {
    v.as_deref().ok_or_else(|| Error::Config { key: key.into(), msg: "required by this command".into() })
}

pub fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    let path = require(&cfg.io.checkpoint, "io.checkpoint")?;
    Checkpoint::load(path)
}

/// Latents written by `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentFile {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub pose_rotation: Option<[[f64; 3]; 3]>,
    pub pose_translation: Option<[f64; 3]>,
}

impl LatentFile {
    fn from_fit(f: &FitResult) -> Self {
        Self {
            beta: f.beta.clone(),
            gamma: f.gamma.clone(),
            pose_rotation: f.pose.map(|p| std::array::from_fn(|i| std::array::from_fn(|j| p.r[(i, j)]))),
            pose_translation: f.pose.map(|p| [p.t.x, p.t.y, p.t.z]),
        }
    }

    pub fn pose(&self) -> Option<RigidTransform> {
        match (self.pose_rotation, self.pose_translation) {
            (Some(r), Some(t)) => Some(RigidTransform { r: Mat3::from_fn(|i, j| r[i][j]), t: Vec3::from(t) }),
            _ => None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), msg: format!("latents: {e}") })
    }
}

/// Latents from `io.latents` when given, else the checkpoint's table entry.
fn pair_latents(cfg: &RunConfig, ck: &Checkpoint) -> Result<(Vec<f64>, Vec<f64>, String)> {
    if let Some(p) = &cfg.io.latents {
        let f = LatentFile::load(p)?;
        return Ok((f.beta, f.gamma, format!("latents:{}", hex_digest(&std::fs::read(p)?))));
    }
    let (id, ex) = (cfg.io.identity, cfg.io.expression);
    let l = ck
        .latent(id, ex)
        .ok_or_else(|| Error::Config { key: "io.identity".into(), msg: format!("checkpoint has no latent for pair ({id}, {ex})") })?;
    Ok((l.beta.clone(), l.gamma.clone(), format!("{}:{id}:{ex}", ck.id())))
}

fn check_pair(cfg: &RunConfig, n_ids: usize, n_exprs: impl Fn(usize) -> usize) -> Result<(usize, usize)> {
    let (id, ex) = (cfg.io.identity, cfg.io.expression);
    if id >= n_ids {
        return Err(Error::Config { key: "io.identity".into(), msg: format!("corpus has {n_ids} identities") });
    }
    if ex >= n_exprs(id) {
        return Err(Error::Config { key: "io.expression".into(), msg: format!("identity has {} expressions", n_exprs(id)) });
    }
    Ok((id, ex))
}

pub fn run_command(command: Command, cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    match command {
        Command::GenCorpus => cmd_gen_corpus(cfg, out),
        Command::Train => cmd_train(cfg, out),
        Command::Fit => cmd_fit(cfg, out),
        Command::Extract => cmd_extract(cfg, out),
        Command::Simulate => cmd_simulate(cfg, out),
        Command::Evaluate => cmd_evaluate(cfg, out),
        Command::StudyResolution => cmd_study_resolution(cfg, out),
        Command::Ablate => cmd_ablate(cfg, out),
    }
}

/// Writes the corpus into the run directory; per-identity rows carry the
/// bone-skin penetration count.
pub fn cmd_gen_corpus(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let mut run = RunDir::new(out)?;
    let c = &cfg.corpus;
    let manifest = gen_corpus(c.identities, c.expressions, c.seed, out)?;
    let corpus = crate::phantom::Corpus::load(out)?;
    let mut rows = Vec::new();
    for (k, a) in corpus.identities.iter().enumerate() {
        let r = MetricReport { penetration_pairs: super::metrics::penetration_pairs(&a.skin, &a.skull, &a.jaw), ..Default::default() };
        rows.push((format!("id{k}"), r));
    }
    run.write(METRICS_FILE, &format_metric_csv(&rows))?;
    run.say(format!("identities {} expressions {}", c.identities, c.expressions));
    run.say(format!("mean jaw displacement {:.3} mm", corpus.mean_jaw_displacement()?));
    run.say(format!("corpus hash {}", manifest.hash()));
    run.finish(Command::GenCorpus, cfg, &[("corpus_hash", manifest.hash())])
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let mut run = RunDir::new(out)?;
    let corpus = load_corpus(&cfg.corpus)?;
    let res = train_model(&corpus, cfg)?;
    res.checkpoint.save(run.path("checkpoint.json"))?;
    run.record("checkpoint.json");
    run.write("loss.csv", &format_loss_csv(&res.log))?;
    let evals = evaluate_checkpoint(&res.checkpoint, &corpus, &cfg.eval, cfg.seed)?;
    let mut rows: Vec<(String, MetricReport)> =
        evals.iter().map(|e| (format!("id{}_ex{}", e.identity, e.expression), e.report)).collect();
    let mean = MetricReport::mean(&evals.iter().map(|e| e.report).collect::<Vec<_>>());
    rows.push(("mean".into(), mean));
    run.write(METRICS_FILE, &format_metric_csv(&rows))?;
    run.say(format!("steps {} checkpoint {}", res.checkpoint.steps, res.checkpoint.id()));
    run.say(format!(
        "mean v2v {:.4} mm, jaw rigidity {:.4} mm, skull fixation {:.4} mm, jaw recovery {:.3} mm",
        mean.v2v,
        mean.jaw_rigidity,
        mean.skull_fixation,
        mean_jaw_recovery(&corpus, &evals)
    ));
    let extra = [("corpus_hash", corpus.manifest.hash()), ("checkpoint", res.checkpoint.id())];
    if let Some(step) = res.diverged_at {
        run.finish(Command::Train, cfg, &extra)?;
        return Err(Error::Numeric(format!("training diverged at step {step}; last finite state saved")));
    }
    run.finish(Command::Train, cfg, &extra)
}

fn front_camera() -> Result<Camera> {
    Camera::look_at(Vec3::new(0.0, 0.0, 600.0), Vec3::zeros(), 1500.0, [512.0, 512.0])
}

/// Fits free latents to a scan (or its projected landmarks).
pub fn cmd_fit(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let mut run = RunDir::new(out)?;
    let ck = load_checkpoint(cfg)?;
    let corpus = load_corpus(&cfg.corpus)?;
    let (id, ex) = check_pair(cfg, corpus.n_ids(), |i| corpus.expression_skins[i].len())?;
    let target = match &cfg.io.scan {
        Some(p) => load_obj(p)?.mesh,
        None => corpus.expression_skins[id][ex].clone(),
    };
    let data = TrainingSet::from_corpus(&corpus, cfg.train.pool_spacing)?;
    let observation = if cfg.io.landmarks {
        let camera = front_camera()?;
        let ids = corpus.canonical.landmark_ids.clone();
        let targets = ids
            .iter()
            .map(|&i| camera.project(&target.vertices[i]).ok_or_else(|| Error::InvalidInput(format!("landmark {i} is behind the camera"))))
            .collect::<Result<Vec<_>>>()?;
        Observation::Landmarks { ids, camera, targets }
    } else {
        Observation::Scan { skin: target.vertices.clone(), confidence: target.confidence.clone() }
    };
    let m = &ck.model;
    let init = (vec![0.0; m.config.id_dim], vec![0.0; m.config.expr_dim]);
    let oracle = BoneOracle::new(&corpus.canonical);
    let res = fit_latents(m, &data, &observation, &cfg.fit, init, Some(&oracle), cfg.seed)?;
    let latents = LatentFile::from_fit(&res);
    run.write("latents.json", &serde_json::to_string_pretty(&latents).expect("serialise"))?;
    let mut fo = field_output(m, &corpus.canonical, &res.beta, &res.gamma)?;
    if let Some(p) = res.pose {
        for mesh in [&mut fo.skin, &mut fo.skull, &mut fo.jaw] {
            for v in &mut mesh.vertices {
                *v = p.apply(v);
            }
        }
    }
    run.save_mesh("fitted_skin.obj", &fo.skin)?;
    let history: String = res.history.iter().enumerate().map(|(i, v)| format!("{i},{v:e}\n")).collect();
    run.write("fit_history.csv", &format!("step,objective\n{history}"))?;
    let mask = super::study::eval_mask(&corpus, &cfg.eval);
    let outcome = Outcome { rest_skull: &fo.anatomy.skull, rest_jaw: &fo.anatomy.jaw, ..fo.outcome() };
    let truth = &corpus.identities[id];
    let r = evaluate_outcome(&outcome, &target, Some((&truth.skull, &truth.jaw)), mask, &cfg.eval, cfg.seed)?;
    run.write(METRICS_FILE, &format_metric_csv(&[(format!("fit_id{id}_ex{ex}"), r)]))?;
    run.say(format!("data loss {:.4e} -> {:.4e} ({} steps)", res.initial_data_loss, res.data_loss, res.history.len()));
    run.say(format!("v2v {:.4} mm", r.v2v));
    run.finish(Command::Fit, cfg, &[("checkpoint", ck.id())])
}

/// Lattice, constraint bundle and material-space surfaces for one latent pair.
pub fn cmd_extract(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let mut run = RunDir::new(out)?;
    let ck = load_checkpoint(cfg)?;
    let corpus = load_corpus(&cfg.corpus)?;
    let (beta, gamma, provenance) = pair_latents(cfg, &ck)?;
    let anatomy = model_anatomy(&ck.model, &corpus.canonical, &beta)?;
    let lattice = voxelize(&anatomy, cfg.sim.h)?;
    let embeddings = [
        embed(&lattice, &anatomy.skin, SurfaceTag::Skin)?,
        embed(&lattice, &anatomy.skull, SurfaceTag::Skull)?,
        embed(&lattice, &anatomy.jaw, SurfaceTag::Jaw)?,
    ];
    let (bundle, report) =
        extract_constraints(&ck.model, &beta, &gamma, &lattice, &anatomy.jaw.vertices, &anatomy.skull.vertices, &provenance)?;
    write_lattice(run.path("lattice.latv1"), &lattice, &[&embeddings[0], &embeddings[1], &embeddings[2]])?;
    run.record("lattice.latv1");
    write_bundle(run.path("bundle.cbv1"), &bundle)?;
    run.record("bundle.cbv1");
    run.save_mesh("neutral_skin.obj", &anatomy.skin)?;
    run.save_mesh("neutral_skull.obj", &anatomy.skull)?;
    run.save_mesh("neutral_jaw.obj", &anatomy.jaw)?;
    let fo = field_output(&ck.model, &corpus.canonical, &beta, &gamma)?;
    run.save_mesh("field_skin.obj", &fo.skin)?;
    let mut rep = String::from("extract-report v1\n");
    writeln!(rep, "elements {}", lattice.n_elements()).unwrap();
    writeln!(rep, "flagged {}", report.flagged.len()).unwrap();
    writeln!(rep, "jaw_residual {:.6e}", report.jaw_residual).unwrap();
    writeln!(rep, "skull_residual {:.6e}", report.skull_residual).unwrap();
    run.write("extract_report.txt", &rep)?;
    let mut lines = Vec::new();
    if cfg.io.latents.is_none() {
        let (id, ex) = check_pair(cfg, corpus.n_ids(), |i| corpus.expression_skins[i].len())?;
        let e = evaluate_field_pair(&ck.model, &corpus, id, ex, &beta, &gamma, &cfg.eval, cfg.seed)?;
        run.write(METRICS_FILE, &format_metric_csv(&[(format!("field_id{id}_ex{ex}"), e.report)]))?;
        lines.push(format!("field v2v {:.4} mm", e.report.v2v));
    }
    run.say(format!("h {} elements {} flagged {}", cfg.sim.h, lattice.n_elements(), report.flagged.len()));
    run.say(format!("jaw fit residual {:.4e} mm", report.jaw_residual));
    for l in lines {
        run.say(l);
    }
    run.finish(Command::Extract, cfg, &[("checkpoint", ck.id()), ("provenance", provenance)])
}

/// Effects selected in the config, in the setup's frame.
pub fn configured_effects(cfg: &RunConfig, setup: &SolverSetup, anatomy: &Anatomy) -> SimEffects {
    let s = &cfg.sim;
    let mut fx = SimEffects::default();
    if s.gravity {
        fx.gravity = Some(Gravity { accel: Vec3::new(0.0, -s.gravity_accel, 0.0), density: cfg.train.material.density });
    }
    if s.paralysis > 0.0 {
        let elements = (0..setup.n_elements())
            .filter(|&e| {
                let x = setup.lattice.element_center(e).x;
                match s.paralysis_side {
                    Side::Left => x > 0.0,
                    Side::Right => x < 0.0,
                    Side::Both => true,
                }
            })
            .collect();
        fx.paralysis = Some(Paralysis { elements, alpha: s.paralysis });
    }
    if s.jaw_scale != 1.0 {
        fx.jaw_edit = Some(JawEdit::scale(s.jaw_scale, anatomy.hinge.pivot()));
    }
    fx
}

fn failure_report(path: &Path, e: &Error) -> Result<()> {
    std::fs::write(path, format!("solve-report v1\nstatus failed\nerror {e}\n"))?;
    Ok(())
}

/// Solves the extracted bundle; numerical failures leave a report behind.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let mut run = RunDir::new(out)?;
    let dir = PathBuf::from(require(&cfg.io.extract, "io.extract")?);
    let (lattice, embeddings) = read_lattice(dir.join("lattice.latv1"))?;
    let bundle = read_bundle(dir.join("bundle.cbv1"))?;
    let mesh = |n: &str| load_obj(dir.join(n)).map(|o| o.mesh);
    let (skin, skull, jaw) = (mesh("neutral_skin.obj")?, mesh("neutral_skull.obj")?, mesh("neutral_jaw.obj")?);
    let mut by_tag = embeddings;
    by_tag.sort_by_key(|e| e.tag);
    let [es, ek, ej]: [_; 3] =
        by_tag.try_into().map_err(|_| Error::InvalidInput("lattice file must embed skin, skull and jaw".into()))?;
    let report_path = run.path("solve_report.txt");
    let numeric = |e: Error, run: &mut RunDir| -> Error {
        if e.is_config() {
            return e;
        }
        if failure_report(&report_path, &e).is_ok() {
            run.record("solve_report.txt");
        }
        Error::Numeric(format!("{e}; solve report at {}", report_path.display()))
    };
    let setup = match assemble_embedded(lattice, [es, ek, ej], [skin.clone(), skull.clone(), jaw.clone()], sim_options(cfg)) {
        Ok(s) => s,
        Err(e) => return Err(numeric(e, &mut run)),
    };
    let corpus_canonical = crate::phantom::make_canonical();
    let anatomy = corpus_canonical.with_surfaces(skin.vertices.clone(), skull.vertices.clone(), jaw.vertices.clone())?;
    let effects = configured_effects(cfg, &setup, &anatomy);
    // warm start from the field when the checkpoint is at hand
    let init = match cfg.io.checkpoint {
        Some(_) => {
            let ck = load_checkpoint(cfg)?;
            let (beta, gamma, _) = pair_latents(cfg, &ck)?;
            let z = FaceModel::joint_latent(&beta, &gamma);
            Some(warm_start(&BoundField { field: &ck.model.expression, latent: &z }, &setup.rest))
        }
        None => None,
    };
    let r = match simulate(&setup, &bundle, &effects, init.as_deref()) {
        Ok(r) => r,
        Err(e) => return Err(numeric(e, &mut run)),
    };
    write_report(&report_path, &r)?;
    run.record("solve_report.txt");
    run.save_mesh("skin.obj", &r.skin)?;
    run.save_mesh("skull.obj", &r.skull)?;
    run.save_mesh("jaw.obj", &r.jaw)?;
    let field_skin = dir.join("field_skin.obj");
    let reference = if field_skin.exists() { load_obj(&field_skin)?.mesh } else { r.skin.clone() };
    let outcome = Outcome { skin: &r.skin, skull: &r.skull, jaw: &r.jaw, rest_skull: &skull, rest_jaw: &jaw };
    let metrics = evaluate_outcome(&outcome, &reference, None, None, &cfg.eval, cfg.seed)?;
    run.write(METRICS_FILE, &format_metric_csv(&[("simulated_vs_field".into(), metrics)]))?;
    run.say(format!("iterations {} converged {} inversions {}", r.iterations, r.converged, r.inversions));
    run.say(format!("v2v to field {:.4} mm, jaw rigidity {:.3e} mm, skull fixation {:.3e} mm", metrics.v2v, metrics.jaw_rigidity, metrics.skull_fixation));
    if !r.converged {
        run.say(format!("warning: not converged after {} iterations", r.iterations));
    }
    run.finish(Command::Simulate, cfg, &[("bundle", bundle.provenance.clone())])
}

/// A mesh pair when `io.result`/`io.reference` are set, otherwise every corpus pair of a checkpoint.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let mut run = RunDir::new(out)?;
    if let (Some(res), Some(refp)) = (&cfg.io.result, &cfg.io.reference) {
        let (result, reference) = (load_obj(res)?.mesh, load_obj(refp)?.mesh);
        let e = &cfg.eval;
        let r = MetricReport {
            v2v: metric_v2v(&reference, &result, None)?,
            s2m: metric_s2m(&reference, &result, None)?,
            fscore: metric_fscore(&reference, &result, None, e.fscore_samples, e.fscore_tau, cfg.seed)?,
            normal_error: metric_normal_error(&reference, &result, None)?,
            penetration_pairs: self_penetrations(&result),
            ..Default::default()
        };
        r.validate()?;
        run.write(METRICS_FILE, &format_metric_csv(&[("result_vs_reference".into(), r)]))?;
        run.say(format!("v2v {:.4} s2m {:.4} fscore {:.4} normal {:.4}", r.v2v, r.s2m, r.fscore, r.normal_error));
        return run.finish(Command::Evaluate, cfg, &[]);
    }
    let ck = load_checkpoint(cfg)?;
    let corpus = load_corpus(&cfg.corpus)?;
    let evals = evaluate_checkpoint(&ck, &corpus, &cfg.eval, cfg.seed)?;
    let mut rows: Vec<(String, MetricReport)> =
        evals.iter().map(|e| (format!("id{}_ex{}", e.identity, e.expression), e.report)).collect();
    let mean = MetricReport::mean(&evals.iter().map(|e| e.report).collect::<Vec<_>>());
    rows.push(("mean".into(), mean));
    run.write(METRICS_FILE, &format_metric_csv(&rows))?;
    let recovery: String =
        evals.iter().map(|e| format!("{},{},{:.9e}\n", e.identity, e.expression, e.jaw_recovery)).collect();
    run.write("jaw_recovery.csv", &format!("identity,expression,jaw_recovery\n{recovery}"))?;
    run.say(format!("mean v2v {:.4} mm fscore {:.4}", mean.v2v, mean.fscore));
    run.say(format!("jaw recovery (jaw-open) {:.3} mm", mean_jaw_recovery(&corpus, &evals)));
    run.finish(Command::Evaluate, cfg, &[("checkpoint", ck.id())])
}

pub fn cmd_study_resolution(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let mut run = RunDir::new(out)?;
    let ck = load_checkpoint(cfg)?;
    let corpus = load_corpus(&cfg.corpus)?;
    let study = resolution_study(&ck, &corpus, cfg)?;
    run.write("resolution.csv", &format_study_csv(&study))?;
    for r in &study.rows {
        run.say(format!("{:>10}  v2v-to-field {:.4} mm  v2v-to-truth {:.4} mm", r.label, r.v2v_to_field, r.report.v2v));
    }
    run.say(format!(
        "trend {}: strictly decreasing {}, finest below {:.2} mm {}",
        if study.trend_holds() { "holds" } else { "VIOLATED" },
        study.strictly_decreasing,
        cfg.study.max_relative_v2v * study.head_diameter,
        study.finest_within_bound
    ));
    run.finish(Command::StudyResolution, cfg, &[("checkpoint", ck.id()), ("trend_holds", study.trend_holds().to_string())])
}

pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let mut run = RunDir::new(out)?;
    let corpus = load_corpus(&cfg.corpus)?;
    let rows = ablation_study(&corpus, cfg)?;
    run.write("ablation.csv", &format_ablation_csv(&rows))?;
    for r in &rows {
        run.say(format!(
            "{:>9}  v2v {:.4}  jaw rigidity {:.4}  skull fixation {:.4}  bone {:.4}  jaw recovery {:.3}",
            r.variant.name(),
            r.report.v2v,
            r.report.jaw_rigidity,
            r.report.skull_fixation,
            r.report.bone_fidelity,
            r.jaw_recovery
        ));
    }
    run.finish(Command::Ablate, cfg, &[("corpus_hash", corpus.manifest.hash())])
}
