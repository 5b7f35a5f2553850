use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use log::{info, warn};
use playlist_attrs::cluster::{alpha_grid, analyze_clusters, write_sweep_csv, ClusterConfig, KRange, PcaOptions, PriorLevel};
use playlist_attrs::domain::{corpus_summary, AttributeTask, FeatureDataset, Provenance};
use playlist_attrs::eval::{
    evaluate_users, grid_search, partition_samples, report_table, run_experiment, split_dataset, write_report,
    ConfigScore, ExperimentConfig, ExperimentMetadata, ExperimentReport, GridSpec, ModelResult, Repetition, SplitPlan,
};
use playlist_attrs::features::write_feature_csv;
use playlist_attrs::ingest::{
    ingest_corpus, load_survey, save_corpus, ApiCredentials, ClientOptions, FixtureTransport, MockSpotify,
    ResponseCache, SpotifyClient, Transport,
};
use playlist_attrs::learn::{FitOptions, ModelKind, TrainedModel};
use playlist_attrs::stats::{
    age_correlations, class_distributions, significance_matrix, write_significance_csv, write_test_results_csv,
    Correction, SignificanceOptions,
};
use playlist_attrs::synth::{generate_corpus, write_synthetic, GenerationSpec};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::output::{featurizer, load_dataset, read_corpus, read_json, require, Run};
use crate::{
    Analysis, AnalysisInput, Cli, Command, CorrectionArg, EvaluateArgs, FeaturizeArgs, FixtureMode, IngestArgs, ModelArgs,
    PriorArg, ReportArgs, SynthArgs, TrainArgs,
};

const SPLIT_FILE: &str = "split.json";
const SCORES_FILE: &str = "grid_scores.json";

pub fn run(cli: Cli) -> CliResult<()> {
    if cli.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let jobs = cli.jobs;
    match cli.command {
        Command::Ingest(a) => ingest(a, jobs),
        Command::Featurize(a) => featurize(a, jobs),
        Command::Analyze(a) => match a.question {
            Analysis::Rq1 { input, significance, correction, welch, out } => {
                rq1(&input, significance, correction, welch, &out, jobs)
            }
            Analysis::Rq2 { input, selected, out } => rq2(&input, &selected, &out, jobs),
            Analysis::Rq3 { input, alpha_step, seed, k_min, k_max, k_step, variance, min_diversity, min_size, prior, out } => {
                let config = ClusterConfig {
                    pca: PcaOptions { variance_target: variance, standardize: true },
                    k_range: KRange { start: k_min, end: k_max, step: k_step },
                    seed,
                    min_diversity,
                    min_size,
                    alphas: alpha_grid(alpha_step)?,
                    prior_level: match prior {
                        PriorArg::Playlist => PriorLevel::Playlist,
                        PriorArg::User => PriorLevel::User,
                    },
                    ..ClusterConfig::default()
                };
                if k_min < 2 || k_min > k_max || k_step == 0 {
                    return Err(CliError::Usage(format!("bad k range {k_min}..={k_max} step {k_step}")));
                }
                rq3(&input, config, &out, jobs)
            }
        },
        Command::Train(a) => train(a, jobs),
        Command::Evaluate(a) => evaluate(a, jobs),
        Command::Report(a) => report(a, jobs),
        Command::Synth(a) => synth(a, jobs),
    }
}

fn ingest(a: IngestArgs, jobs: usize) -> CliResult<()> {
    let mut run = Run::start("ingest", &a.out, jobs)?;
    require(&a.survey)?;
    run.input(&a.survey)?;
    let survey = load_survey(&a.survey)?;
    if !(a.rps > 0.0) {
        return Err(CliError::Usage("--rps must be positive".into()));
    }
    let (transport, credentials, provenance): (Arc<dyn Transport>, Option<ApiCredentials>, Provenance) = match a.fixture_mode {
        FixtureMode::Off => (live_transport()?, Some(ApiCredentials::from_env()?), Provenance::LiveApi),
        FixtureMode::Mock => {
            let path = a.corpus.as_ref().ok_or_else(|| CliError::Usage("--fixture-mode mock needs --corpus".into()))?;
            let corpus = read_corpus(path, &mut run)?;
            let creds = ApiCredentials::from_env().unwrap_or_else(|_| ApiCredentials::new("fixture", "fixture"));
            (Arc::new(MockSpotify::new(corpus)), Some(creds), Provenance::Fixture)
        }
        FixtureMode::Replay => {
            let path = a.fixture.as_ref().ok_or_else(|| CliError::Usage("--fixture-mode replay needs --fixture".into()))?;
            require(path)?;
            run.input(path)?;
            (Arc::new(FixtureTransport::load(path)?), None, Provenance::Fixture)
        }
    };
    let mut client = SpotifyClient::new(transport)
        .with_options(ClientOptions { requests_per_second: a.rps, parallel: jobs > 1, ..ClientOptions::default() });
    if let Some(c) = credentials {
        client = client.with_credentials(c);
    }
    if let Some(dir) = &a.cache {
        client = client.with_cache(ResponseCache::open(dir)?);
    }
    let (corpus, report) = ingest_corpus(&client, &survey, provenance)?;
    let path = run.file("corpus.json");
    save_corpus(&corpus, &path)?;
    run.write_json("ingest_report.json", &report)?;
    run.settings(&json!({
        "fixture_mode": format!("{:?}", a.fixture_mode).to_lowercase(),
        "requests_per_second": a.rps,
        "cache": a.cache.as_ref().map(|p| p.display().to_string()),
    }));
    info!("{} users ingested", report.users_ingested);
    run.finish()
}

#[cfg(feature = "live")]
fn live_transport() -> CliResult<Arc<dyn Transport>> {
    Ok(Arc::new(playlist_attrs::ingest::UreqTransport::default()))
}

#[cfg(not(feature = "live"))]
fn live_transport() -> CliResult<Arc<dyn Transport>> {
    Err(CliError::Usage("built without the `live` feature; use --fixture-mode".into()))
}

fn featurize(a: FeaturizeArgs, jobs: usize) -> CliResult<()> {
    let mut run = Run::start("featurize", &a.out, jobs)?;
    let fz = featurizer(a.lexicon.as_deref(), &mut run)?;
    let corpus = read_corpus(&a.corpus, &mut run)?;
    let (ds, skipped) = fz.featurize_corpus(&corpus);
    let vectors: Vec<_> = ds.users.iter().flat_map(|u| u.playlists.iter()).collect();
    let path = run.file("features.csv");
    let file = fs::File::create(&path).map_err(|e| CliError::output(&path, e))?;
    write_feature_csv(&ds.schema, &vectors, file)?;
    run.write_json("dataset.json", &ds)?;
    run.write_json("skipped.json", &skipped)?;
    run.write_json("corpus_summary.json", &corpus_summary(&corpus)?)?;
    run.settings(&json!({
        "lexicon": a.lexicon.as_ref().map_or("built-in".to_string(), |p| p.display().to_string()),
        "schema_version": ds.schema.version,
        "features": ds.schema.len(),
        "playlists": vectors.len(),
        "skipped_playlists": skipped.len(),
    }));
    run.finish()
}

/// Named tasks: survey attributes by name, anything else from the labels
/// present in the data. With no names, every attribute with labels.
fn resolve_tasks(ds: &FeatureDataset, names: &[String]) -> CliResult<Vec<AttributeTask>> {
    let mut labels: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for u in &ds.users {
        for (k, v) in &u.attributes {
            labels.entry(k).or_default().insert(v);
        }
    }
    let explicit = !names.is_empty();
    let wanted: Vec<String> = if explicit {
        names.to_vec()
    } else {
        let mut all: Vec<String> = AttributeTask::standard().into_iter().map(|t| t.name).collect();
        all.extend(labels.keys().map(|k| k.to_string()).filter(|k| AttributeTask::by_name(k).is_err()));
        all
    };
    let mut tasks = Vec::new();
    for name in wanted {
        let task = match AttributeTask::by_name(&name) {
            Ok(t) => t,
            Err(_) => match labels.get(name.as_str()) {
                Some(classes) => {
                    let classes: Vec<&str> = classes.iter().copied().collect();
                    AttributeTask::custom(&name, &classes)?
                }
                None => return Err(CliError::Usage(format!("unknown task {name:?}"))),
            },
        };
        if ds.labeled(&task).is_empty() {
            if explicit {
                return Err(CliError::Precondition(format!("no user carries a label for {name:?}")));
            }
            continue;
        }
        tasks.push(task);
    }
    if tasks.is_empty() {
        return Err(CliError::Precondition("no labeled attribute to analyze".into()));
    }
    Ok(tasks)
}

fn prepare(input: &AnalysisInput, run: &mut Run) -> CliResult<(FeatureDataset, Vec<AttributeTask>)> {
    let (ds, skipped) = load_dataset(&input.data, input.lexicon.as_deref(), run)?;
    if !skipped.is_empty() {
        warn!("{} playlist(s) could not be featurized", skipped.len());
    }
    if ds.users.is_empty() {
        return Err(CliError::Precondition("dataset has no users".into()));
    }
    let tasks = resolve_tasks(&ds, &input.tasks)?;
    Ok((ds, tasks))
}

fn task_names(tasks: &[AttributeTask]) -> Vec<&str> {
    tasks.iter().map(|t| t.name.as_str()).collect()
}

fn rq1(input: &AnalysisInput, alpha: f64, correction: CorrectionArg, welch: bool, out: &Path, jobs: usize) -> CliResult<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CliError::Usage(format!("--significance {alpha} outside [0, 1]")));
    }
    let mut run = Run::start("analyze rq1", out, jobs)?;
    let (ds, tasks) = prepare(input, &mut run)?;
    let correction = match correction {
        CorrectionArg::None => Correction::None,
        CorrectionArg::Bh => Correction::BenjaminiHochberg,
    };
    let opts = SignificanceOptions { alpha, correction, welch };
    let (matrix, results) = significance_matrix(&ds, &tasks, &opts)?;
    let csv_err = |p: &Path, e: csv::Error| CliError::output(p, e);
    let path = run.file("significance_matrix.csv");
    write_significance_csv(&matrix, fs::File::create(&path).map_err(|e| CliError::output(&path, e))?)
        .map_err(|e| csv_err(&path, e))?;
    let path = run.file("test_results.csv");
    write_test_results_csv(&results, fs::File::create(&path).map_err(|e| CliError::output(&path, e))?)
        .map_err(|e| csv_err(&path, e))?;
    run.write_json("significance.json", &matrix)?;
    run.settings(&json!({ "significance": alpha, "correction": correction, "welch": welch, "tasks": task_names(&tasks) }));
    run.finish()
}

fn rq2(input: &AnalysisInput, features: &[String], out: &Path, jobs: usize) -> CliResult<()> {
    let mut run = Run::start("analyze rq2", out, jobs)?;
    let (ds, tasks) = prepare(input, &mut run)?;
    let names: Vec<String> = if features.is_empty() { ds.schema.names.clone() } else { features.to_vec() };
    if let Some(f) = names.iter().find(|f| ds.schema.index_of(f).is_none()) {
        return Err(CliError::Usage(format!("unknown feature {f:?}")));
    }
    let mut all = Vec::new();
    let mut skipped = Vec::new();
    for task in &tasks {
        for f in &names {
            match class_distributions(&ds, task, f) {
                Ok(d) => all.push(d),
                Err(e) => {
                    warn!("{} / {f}: {e}", task.name);
                    skipped.push(json!({"attribute": task.name, "feature": f, "reason": e.to_string()}));
                }
            }
        }
    }
    let path = run.file("class_distributions.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::output(&path, e))?;
    w.write_record(["attribute", "feature", "class", "n", "mean", "std", "min", "q1", "median", "q3", "max", "p_value"])
        .map_err(|e| CliError::output(&path, e))?;
    for d in &all {
        for c in &d.classes {
            w.write_record([
                d.attribute.clone(),
                d.feature.clone(),
                c.class.clone(),
                c.n.to_string(),
                c.mean.to_string(),
                c.std.to_string(),
                c.min.to_string(),
                c.q1.to_string(),
                c.median.to_string(),
                c.q3.to_string(),
                c.max.to_string(),
                d.test.p_value.to_string(),
            ])
            .map_err(|e| CliError::output(&path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::output(&path, e))?;
    run.write_json("class_distributions.json", &all)?;
    let path = run.file("age_correlations.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::output(&path, e))?;
    w.write_record(["feature", "r", "p_value", "n"]).map_err(|e| CliError::output(&path, e))?;
    for c in age_correlations(&ds) {
        let (r, p, n) = c.correlation.map_or((String::new(), String::new(), String::new()), |c| {
            (c.r.to_string(), c.p.to_string(), c.n.to_string())
        });
        w.write_record([c.feature, r, p, n]).map_err(|e| CliError::output(&path, e))?;
    }
    w.flush().map_err(|e| CliError::output(&path, e))?;
    run.settings(&json!({ "tasks": task_names(&tasks), "features": names.len(), "skipped": skipped }));
    run.finish()
}

fn rq3(input: &AnalysisInput, config: ClusterConfig, out: &Path, jobs: usize) -> CliResult<()> {
    let mut run = Run::start("analyze rq3", out, jobs)?;
    let (ds, tasks) = prepare(input, &mut run)?;
    run.seeds(&[config.seed]);
    let analysis = analyze_clusters(&ds, &tasks, &config)?;
    write_sweep_csv(&run.file("sweep.csv"), &analysis.sweeps)?;
    run.write_json("clusters.json", &analysis.clusters)?;
    run.write_json("analysis.json", &analysis)?;
    run.settings(&json!({
        "config": config,
        "selected_k": analysis.selected_k,
        "range_clipped": analysis.range_clipped,
        "tasks": task_names(&tasks),
    }));
    run.finish()
}

struct ModelSetup {
    kinds: Vec<ModelKind>,
    grid: GridSpec,
    options: FitOptions,
}

fn model_setup(a: &ModelArgs, n_features: usize, run: &mut Run) -> CliResult<ModelSetup> {
    let kinds: Vec<ModelKind> = if a.codes.is_empty() {
        ModelKind::ALL.to_vec()
    } else {
        let mut k = a.codes.iter().map(|m| m.parse::<ModelKind>()).collect::<Result<Vec<_>, _>>()?;
        k.sort();
        k.dedup();
        k
    };
    let grid = match a.grid.as_str() {
        "full" => GridSpec::full(n_features),
        "quick" => GridSpec::quick(n_features),
        path => {
            let p = Path::new(path);
            require(p)?;
            run.input(p)?;
            GridSpec::load(p)?
        }
    };
    if let Some(k) = kinds.iter().find(|&&k| grid.get(k).is_none()) {
        return Err(CliError::Invalid(format!("grid has no entry for {k}")));
    }
    if a.max_epochs == 0 {
        return Err(CliError::Usage("--max-epochs must be at least 1".into()));
    }
    let options = FitOptions { max_epochs: a.max_epochs, patience: a.patience, ..FitOptions::default() };
    Ok(ModelSetup { grid: grid.restrict(&kinds), kinds, options })
}

fn train(a: TrainArgs, jobs: usize) -> CliResult<()> {
    let mut run = Run::start("train", &a.out, jobs)?;
    let (ds, tasks) = prepare(&a.input, &mut run)?;
    let setup = model_setup(&a.models, ds.schema.len(), &mut run)?;
    run.seeds(&[a.seed]);
    let mut summary = Vec::new();
    for task in &tasks {
        let plan = split_dataset(&ds, task, a.seed)?;
        let train = partition_samples(&ds, task, &plan.train);
        let val = partition_samples(&ds, task, &plan.validation);
        let dir = a.out.join(&task.name);
        fs::create_dir_all(&dir).map_err(|e| CliError::output(&dir, e))?;
        let mut scores: BTreeMap<ModelKind, Vec<ConfigScore>> = BTreeMap::new();
        for &kind in &setup.kinds {
            let grid = setup.grid.get(kind).expect("checked in model_setup");
            let outcome = grid_search(grid, &train, &val, task.n_classes(), a.seed, &setup.options)?;
            let name = format!("{}/{}.json", task.name, kind.code());
            outcome.model.clone().with_task(task).save(&run.file(&name))?;
            info!("{} {kind}: validation F1 {:.4}", task.name, outcome.best_score);
            summary.push(json!({"task": task.name, "model": kind, "validation_f1": outcome.best_score}));
            scores.insert(kind, outcome.scores);
        }
        run.write_json(&format!("{}/{SPLIT_FILE}", task.name), &plan)?;
        run.write_json(&format!("{}/{SCORES_FILE}", task.name), &scores)?;
    }
    run.write_json("training_summary.json", &summary)?;
    run.settings(&json!({ "grid": a.models.grid, "options": setup.options, "tasks": task_names(&tasks) }));
    run.finish()
}

fn evaluate(a: EvaluateArgs, jobs: usize) -> CliResult<()> {
    if a.models.is_none() && !a.train {
        return Err(CliError::Precondition(
            "no trained models: pass --models DIR (written by `train`) or --train to fit them here".into(),
        ));
    }
    if let Some(dir) = &a.models {
        require(dir)?;
    }
    let mut run = Run::start("evaluate", &a.out, jobs)?;
    let (ds, tasks) = prepare(&a.input, &mut run)?;
    let reports = match &a.models {
        Some(dir) => evaluate_saved(&ds, &tasks, dir, &mut run)?,
        None => {
            if a.seeds.is_empty() {
                return Err(CliError::Usage("--seeds is empty".into()));
            }
            let setup = model_setup(&a.model_args, ds.schema.len(), &mut run)?;
            run.seeds(&a.seeds);
            let config = ExperimentConfig { kinds: setup.kinds, grid: setup.grid, seeds: a.seeds.clone(), options: setup.options };
            tasks.iter().map(|t| run_experiment(&ds, t, &config)).collect::<Result<Vec<_>, _>>()?
        }
    };
    write_report(&a.out, &reports)?;
    run.file("report.csv");
    run.file("report.json");
    run.settings(&json!({ "mode": if a.train { "train" } else { "saved-models" }, "tasks": task_names(&tasks) }));
    run.finish()
}

fn evaluate_saved(ds: &FeatureDataset, tasks: &[AttributeTask], dir: &Path, run: &mut Run) -> CliResult<Vec<ExperimentReport>> {
    let mut reports = Vec::new();
    let mut seeds = BTreeSet::new();
    for task in tasks {
        let tdir = dir.join(&task.name);
        let split_path = tdir.join(SPLIT_FILE);
        if !split_path.exists() {
            return Err(CliError::Precondition(format!("no trained models for {:?} under {}", task.name, dir.display())));
        }
        let plan: SplitPlan = read_json(&split_path)?;
        run.input(&split_path)?;
        let scores: BTreeMap<ModelKind, Vec<ConfigScore>> = read_json(&tdir.join(SCORES_FILE)).unwrap_or_default();
        let test = partition_samples(ds, task, &plan.test);
        let mut models = Vec::new();
        for kind in ModelKind::ALL {
            let path = tdir.join(format!("{}.json", kind.code()));
            if !path.exists() {
                continue;
            }
            run.input(&path)?;
            let model = TrainedModel::load(&path)?;
            if model.task.as_deref() != Some(task.name.as_str()) || model.n_features != ds.schema.len() {
                return Err(CliError::Invalid(format!("{} does not fit task {:?} on this dataset", path.display(), task.name)));
            }
            let f1 = evaluate_users(&model, &test, plan.seed)?;
            let validation_f1 = scores
                .get(&kind)
                .and_then(|s| s.iter().find(|c| c.hyperparameters == model.hyperparameters))
                .and_then(|c| c.validation_f1);
            let rep = Repetition { seed: plan.seed, test_f1: Some(f1), validation_f1, best: Some(model.hyperparameters), error: None };
            models.push(ModelResult { kind, repetitions: vec![rep], mean: Some(f1), std: Some(0.0) });
        }
        if models.is_empty() {
            return Err(CliError::Precondition(format!("no model checkpoints in {}", tdir.display())));
        }
        seeds.insert(plan.seed);
        reports.push(ExperimentReport {
            task: task.name.clone(),
            metadata: ExperimentMetadata {
                seeds: vec![plan.seed],
                split: "saved split".into(),
                evaluation: "user-level weighted F1 on the saved test partition".into(),
                options: FitOptions::default(),
                grid_sizes: models.iter().map(|m| (m.kind, 1)).collect(),
            },
            models,
            splits: vec![plan],
        });
    }
    run.seeds(&seeds.into_iter().collect::<Vec<_>>());
    Ok(reports)
}

fn report(a: ReportArgs, jobs: usize) -> CliResult<()> {
    let mut run = Run::start("report", &a.out, jobs)?;
    let mut reports: Vec<ExperimentReport> = Vec::new();
    for dir in &a.inputs {
        let path = dir.join("report.json");
        let part: Vec<ExperimentReport> = read_json(&path)?;
        run.input(&path)?;
        for r in part {
            if reports.iter().any(|x| x.task == r.task) {
                return Err(CliError::Invalid(format!("task {:?} appears in more than one input", r.task)));
            }
            reports.push(r);
        }
    }
    write_report(&a.out, &reports)?;
    run.file("report.csv");
    run.file("report.json");
    run.write_text("report.md", &markdown(&report_table(&reports)))?;
    let seeds: BTreeSet<u64> = reports.iter().flat_map(|r| r.metadata.seeds.iter().copied()).collect();
    run.seeds(&seeds.into_iter().collect::<Vec<_>>());
    run.settings(&json!({ "tasks": reports.iter().map(|r| r.task.as_str()).collect::<Vec<_>>() }));
    run.finish()
}

fn markdown(table: &str) -> String {
    let mut out = String::new();
    for (i, line) in table.lines().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
        if i == 0 {
            out.push_str(&format!("|{}\n", " --- |".repeat(cells.len())));
        }
    }
    out
}

fn synth(a: SynthArgs, jobs: usize) -> CliResult<()> {
    let mut run = Run::start("synth", &a.out, jobs)?;
    let mut spec = match &a.spec {
        Some(p) => {
            let s: GenerationSpec = read_json(p)?;
            run.input(p)?;
            s
        }
        None => GenerationSpec::null(300, 0),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(u) = a.users {
        spec.users = u;
    }
    run.seeds(&[spec.seed]);
    let (corpus, truth) = generate_corpus(&spec)?;
    write_synthetic(&a.out, &corpus, &truth)?;
    run.file("corpus.json");
    run.file("ground_truth.json");
    run.write_json("corpus_summary.json", &corpus_summary(&corpus)?)?;
    run.settings(&spec);
    run.finish()
}
