use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use serde::Serialize;

use guide_core::dataset::read_manifest;
use guide_core::evaluation::{evaluate_designs, feasibility_flags, MetricsReport, DEFAULT_KNN};
use guide_core::initsearch::constraint_for;
use guide_core::io::{read_designs_csv, write_designs_csv, write_json, write_trace_jsonl, RefusalReport};
use guide_core::oracle::generate_dataset_with_stats;
use guide_core::pipeline::{benchmark_csv, benchmark_detailed, design_for_target, DesignOutcome};
use guide_core::sampler::acceptance_rate;
use guide_core::{rng, Dataset, EnsembleModel, Error, RunConfig, TargetSpec};

pub enum CliError {
    /// Support search found nothing; not a failure.
    Refused,
    Failed { code: u8, error: anyhow::Error },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Failed {
            code: 2,
            error: anyhow!(msg.into()),
        }
    }

    fn with_code(code: u8, e: Error) -> Self {
        CliError::Failed { code, error: e.into() }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) | Error::InvalidDimension { .. } => 2,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => 2,
        Error::RangesInfeasible { .. } => 3,
        Error::TrainingFailed(_) => 4,
        _ => 1,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = exit_code(&e);
        CliError::with_code(code, e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type CmdResult = Result<(), CliError>;

pub struct Context {
    cfg: RunConfig,
    out: Option<PathBuf>,
    quiet: bool,
}

impl Context {
    pub fn load(path: &Path, seed_overrides: &[String], out: Option<PathBuf>, quiet: bool) -> Result<Self, CliError> {
        let mut cfg = RunConfig::load(path).map_err(|e| {
            CliError::Failed {
                code: 2,
                error: anyhow::Error::from(e).context(format!("reading config {}", path.display())),
            }
        })?;
        for spec in seed_overrides {
            cfg.seeds.apply_override(spec)?;
        }
        Ok(Self { cfg, out, quiet })
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self.out.clone().unwrap_or_else(|| self.cfg.paths.out_dir.clone());
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn dataset_dir(&self) -> &Path {
        &self.cfg.paths.dataset
    }

    fn load_split(&self, csv: &Path) -> Result<Dataset, CliError> {
        let manifest = read_manifest(&self.dataset_dir().join("manifest.json")).map_err(|e| missing(e, "manifest"))?;
        let constraint = constraint_for(self.cfg.data.ranges.low.len());
        Dataset::read_csv(csv, &manifest, constraint.as_ref()).map_err(|e| missing(e, &csv.display().to_string()))
    }

    fn train_split(&self) -> Result<Dataset, CliError> {
        self.load_split(&self.cfg.paths.train_csv())
    }

    fn test_split(&self) -> Result<Dataset, CliError> {
        self.load_split(&self.cfg.paths.test_csv())
    }

    fn model(&self) -> Result<EnsembleModel, CliError> {
        let p = &self.cfg.paths.model;
        EnsembleModel::load(p).map_err(|e| missing(e, &format!("model {}", p.display())))
    }

    fn target(&self, arg: Option<PathBuf>) -> Result<TargetSpec, CliError> {
        let path = arg
            .or_else(|| self.cfg.paths.target.clone())
            .ok_or_else(|| CliError::usage("no target given (use --target or paths.target)"))?;
        let text = fs::read_to_string(&path).map_err(|e| missing(e.into(), &format!("target {}", path.display())))?;
        Ok(TargetSpec::from_json(&text)?)
    }
}

/// Missing or unreadable inputs are usage errors.
fn missing(e: Error, what: &str) -> CliError {
    let code = exit_code(&e);
    CliError::Failed {
        code,
        error: anyhow::Error::from(e).context(format!("loading {what}")),
    }
}

fn remove_if_present(path: &Path) -> std::io::Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct DataSummary {
    config_hash: String,
    n_train: usize,
    n_test: usize,
    draws: usize,
    accepted: usize,
    rejection_rate: f64,
}

pub fn gen_data(ctx: &Context) -> CmdResult {
    let cfg = &ctx.cfg;
    if cfg.data.n_train == 0 || cfg.data.n_test == 0 {
        return Err(CliError::usage("data.n_train and data.n_test must be positive"));
    }
    let dir = ctx.out.clone().unwrap_or_else(|| cfg.paths.dataset.clone());
    fs::create_dir_all(&dir)?;
    let seed = cfg.seeds.data;
    let (train, s1) = generate_dataset_with_stats(cfg.data.n_train, &cfg.data.ranges, &cfg.data.oracle, seed)?;
    let (test, s2) =
        generate_dataset_with_stats(cfg.data.n_test, &cfg.data.ranges, &cfg.data.oracle, rng::derive(seed, 1))?;
    train.write_csv(&dir.join("train.csv"))?;
    test.write_csv(&dir.join("test.csv"))?;
    train.write_manifest(&dir.join("manifest.json"))?;

    let draws = s1.draws + s2.draws;
    let accepted = s1.accepted + s2.accepted;
    let summary = DataSummary {
        config_hash: cfg.hash(),
        n_train: train.len(),
        n_test: test.len(),
        draws,
        accepted,
        rejection_rate: 1.0 - accepted as f64 / draws as f64,
    };
    write_json(&dir.join("run.json"), &summary)?;
    ctx.say(format!(
        "wrote {} training and {} test rows to {}",
        train.len(),
        test.len(),
        dir.display()
    ));
    ctx.say(format!(
        "constraint rejection: {} of {} draws rejected ({:.1}%)",
        draws - accepted,
        draws,
        100.0 * summary.rejection_rate
    ));
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    config_hash: String,
    validation_rmse: f64,
    gamma: f64,
    members: usize,
}

pub fn train(ctx: &Context) -> CmdResult {
    let cfg = &ctx.cfg;
    let train = ctx.train_split()?;
    let test = ctx.test_split()?;
    let model = guide_core::train(&train, &cfg.surrogate, cfg.seeds.train).map_err(|e| match e {
        Error::Config(_) => CliError::from(e),
        other => CliError::with_code(4, other),
    })?;
    let path = match &ctx.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            dir.join(cfg.paths.model.file_name().unwrap_or("model.json".as_ref()))
        }
        None => cfg.paths.model.clone(),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    model.save(&path)?;
    let rmse = model.rmse(&test)?;
    write_json(
        &path.with_extension("run.json"),
        &TrainSummary {
            config_hash: cfg.hash(),
            validation_rmse: rmse,
            gamma: model.gamma,
            members: model.members.len(),
        },
    )?;
    ctx.say(format!("trained {} members, model written to {}", model.members.len(), path.display()));
    ctx.say(format!("validation RMSE {rmse:.4}"));
    ctx.say(format!("gamma {}", model.gamma));
    Ok(())
}

#[derive(Serialize)]
struct DesignSummary {
    config_hash: String,
    support_iterations: usize,
    likelihood0: f64,
    acceptance_rate: f64,
    n_records: usize,
    n_unique: usize,
    stuck_proposals: usize,
}

/// Writes the trace, ranked designs and a summary for a successful run, or
/// the refusal report otherwise. Stale artifacts of the other kind are
/// removed so a directory never mixes the two.
fn write_outcome(dir: &Path, outcome: &DesignOutcome, hash: &str) -> Result<Option<DesignSummary>, CliError> {
    fs::create_dir_all(dir)?;
    let (trace, designs, refusal) = (dir.join("trace.jsonl"), dir.join("designs.csv"), dir.join("refusal.json"));
    match outcome {
        DesignOutcome::Refused(support) => {
            remove_if_present(&trace)?;
            remove_if_present(&designs)?;
            remove_if_present(&dir.join("run.json"))?;
            write_json(&refusal, &RefusalReport::from_support(support, hash))?;
            Ok(None)
        }
        DesignOutcome::Designed { support, run, unique } => {
            remove_if_present(&refusal)?;
            write_trace_jsonl(&trace, &run.records)?;
            write_designs_csv(&designs, unique, hash)?;
            let summary = DesignSummary {
                config_hash: hash.to_string(),
                support_iterations: support.iterations_used,
                likelihood0: support.likelihood0.unwrap_or(0.0),
                acceptance_rate: acceptance_rate(&run.records),
                n_records: run.records.len(),
                n_unique: unique.len(),
                stuck_proposals: run.stuck,
            };
            write_json(&dir.join("run.json"), &summary)?;
            Ok(Some(summary))
        }
    }
}

pub fn design(ctx: &Context, target: Option<PathBuf>) -> CmdResult {
    let cfg = &ctx.cfg;
    let target = ctx.target(target)?;
    let model = ctx.model()?;
    if target.len() != model.response_dim() {
        return Err(Error::InvalidDimension {
            expected: model.response_dim(),
            got: target.len(),
        }
        .into());
    }
    let chain = cfg.chain.resolve(&model.norm)?;
    let outcome = design_for_target(
        &model,
        &target,
        &model.norm,
        &cfg.pso,
        &chain,
        cfg.likelihood.n_mc,
        cfg.seeds.design,
    )?;
    let dir = ctx.out_dir()?;
    match write_outcome(&dir, &outcome, &cfg.hash())? {
        None => {
            let s = outcome.support();
            if !ctx.quiet {
                eprintln!(
                    "refused: no design with nonzero likelihood after {} iterations (best objective {:.4}); see {}",
                    s.iterations_used,
                    s.best_objective,
                    dir.join("refusal.json").display()
                );
            }
            Err(CliError::Refused)
        }
        Some(s) => {
            ctx.say(format!(
                "support found after {} iterations (likelihood {:.3e})",
                s.support_iterations, s.likelihood0
            ));
            ctx.say(format!(
                "{} retained states, {} unique designs, acceptance rate {:.2}",
                s.n_records, s.n_unique, s.acceptance_rate
            ));
            ctx.say(format!("designs written to {}", dir.join("designs.csv").display()));
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    config_hash: String,
    #[serde(flatten)]
    report: &'a MetricsReport,
}

pub fn evaluate(ctx: &Context, designs: &Path, target: Option<PathBuf>) -> CmdResult {
    let cfg = &ctx.cfg;
    let xs = read_designs_csv(designs).map_err(|e| missing(e, &format!("designs {}", designs.display())))?;
    if xs.is_empty() {
        return Err(CliError::usage(format!("{} contains no designs", designs.display())));
    }
    let target = ctx.target(target)?;
    let train = ctx.train_split()?;
    if let Some(x) = xs.iter().find(|x| x.dim() != train.design_dim()) {
        return Err(Error::InvalidDimension {
            expected: train.design_dim(),
            got: x.dim(),
        }
        .into());
    }
    let k = DEFAULT_KNN.min(train.len());
    let report = evaluate_designs(&xs, &train.designs, &train.norm, &target, &cfg.data.oracle, k, None)?;
    let flags = feasibility_flags(&xs, &target, &cfg.data.oracle)?;

    let dir = ctx.out_dir()?;
    write_json(
        &dir.join("metrics.json"),
        &MetricsFile {
            config_hash: cfg.hash(),
            report: &report,
        },
    )?;
    let mut text = String::from("design,feasible\n");
    for (i, ok) in flags.iter().enumerate() {
        text.push_str(&format!("{},{}\n", i + 1, ok));
    }
    fs::write(dir.join("evaluation.csv"), text)?;

    ctx.say(format!(
        "{} designs: feasibility {:.3}, vendi {:.3}, {}-NN novelty {:.3}",
        report.n_designs, report.feasibility_rate, report.vendi, k, report.knn_novelty
    ));
    Ok(())
}

pub fn benchmark(ctx: &Context) -> CmdResult {
    let cfg = &ctx.cfg;
    let train = ctx.train_split()?;
    let test = ctx.test_split()?;
    let model = ctx.model()?;
    let (report, outcomes) = benchmark_detailed(&model, &train, &test, cfg)?;

    let dir = ctx.out_dir()?;
    fs::write(dir.join("benchmark.csv"), benchmark_csv(&report)?)?;
    write_json(&dir.join("benchmark.json"), &report)?;
    let hash = cfg.hash();
    for (t, (row, outcome)) in report.target_rows.iter().zip(&outcomes).enumerate() {
        write_outcome(&dir.join(format!("target_{t:02}_row_{row}")), outcome, &hash)?;
    }

    let refusals = outcomes.iter().filter(|o| o.is_refusal()).count();
    ctx.say(format!(
        "{} targets ({} refused), {} GUIDe records",
        report.target_rows.len(),
        refusals,
        report.records.len()
    ));
    ctx.say(format!(
        "mean feasibility: guide {:.3}, ga {:.3}",
        report.guide_mean_feasibility, report.ga_mean_feasibility
    ));
    match report.pearson_r {
        Some(r) => ctx.say(format!("likelihood-feasibility binned r = {r:.3}")),
        None => ctx.say("likelihood-feasibility binned r: too few populated bins"),
    }
    ctx.say(format!("tables written to {}", dir.display()));
    Ok(())
}
