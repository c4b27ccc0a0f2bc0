use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use shuttle_eta::eval::{
    accumulated_error_profile, decompose_accumulated_error, evaluate, lag_scope_experiment, sample_journeys,
    split_dataset, split_by_date, AbsMode, Decomposition, ExperimentConfig, MetricsReport,
};
use shuttle_eta::features::{assemble_dataset, FeatureEncoder, LagScope};
use shuttle_eta::graph::build_graph;
use shuttle_eta::io;
use shuttle_eta::journey::{extract_journeys, ModelPredictor, OraclePredictor, SegmentPredictor};
use shuttle_eta::models::{train, Hyperparams, ModelArtifact, ModelKind};
use shuttle_eta::preprocess::{run_pipeline, EventStream, PreprocessConfig};
use shuttle_eta::synth::{generate_site, preset, SiteSpec};
use shuttle_eta::{Error, Result, Route, Site, Target};

#[derive(Parser)]
#[command(name = "shuttle-eta", version, about = "Arrival-time prediction for fixed-route shuttles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic site with exact ground truth
    Synth(SynthArgs),
    /// Extract dwell/run events from raw traces
    Preprocess(PreprocessArgs),
    /// Build a lagged feature dataset from events
    Features(FeaturesArgs),
    /// Train a segment model
    Train(TrainArgs),
    /// Score a model on a dataset
    Evaluate(EvaluateArgs),
    /// Accumulated arrival-time error along sampled journeys
    Journey(JourneyArgs),
    /// Model comparison experiments
    #[command(subcommand)]
    Experiment(Experiment),
    /// Collect metrics files into summary tables
    Report(ReportArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "source")]
struct SpecSource {
    #[arg(long)]
    preset: Option<String>,
    /// SiteSpec JSON; missing fields default to linkoping_like
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    source: SpecSource,
    /// overrides the spec's seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    /// directory of per-vehicle trace CSVs
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    stops: PathBuf,
    #[arg(long)]
    routes: PathBuf,
    #[arg(long)]
    weather: PathBuf,
    /// PreprocessConfig JSON; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    target: Target,
    #[arg(long, default_value = "per-vehicle")]
    scope: LagScope,
    /// add every graph node to the key vocabulary (needed by graph models)
    #[arg(long)]
    routes: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: ModelKind,
    /// Hyperparams JSON; missing fields take the defaults
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// route file, required by gcn and rf-gcn
    #[arg(long)]
    routes: Option<PathBuf>,
    /// train only on rows before the last N days
    #[arg(long)]
    holdout_days: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// score only the rows of the last N days
    #[arg(long)]
    holdout_days: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct JourneyArgs {
    /// model file, or `oracle` for the observed durations
    #[arg(long)]
    dwell_model: String,
    #[arg(long)]
    run_model: String,
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    routes: PathBuf,
    /// defaults to the first route in the file
    #[arg(long)]
    route_id: Option<String>,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// sample only journeys departing in the last N days
    #[arg(long)]
    holdout_days: Option<f64>,
    /// also write the dwell/run error decomposition as JSON
    #[arg(long)]
    decomposition: Option<PathBuf>,
    /// fold per-event errors as sum_of_abs or abs_of_sum
    #[arg(long, default_value = "sum_of_abs")]
    decomposition_mode: AbsMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Experiment {
    /// Per-vehicle versus fleet lags for every model
    LagScope(LagScopeArgs),
}

#[derive(Args)]
struct LagScopeArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long, default_value = "dwell")]
    target: Target,
    #[arg(long, value_delimiter = ',', default_value = "lag,mean,linreg,rf,gbt,mlp")]
    models: Vec<ModelKind>,
    #[arg(long, default_value_t = 1.0)]
    holdout_days: f64,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    routes: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// directory of metrics / decomposition JSON files
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    config_digest: String,
    config: Value,
    inputs: BTreeMap<String, String>,
    seed: Option<u64>,
    tool_version: &'static str,
    created_at: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_inputs(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
            files.sort();
            for f in files.into_iter().filter(|f| f.is_file()) {
                out.insert(f.display().to_string(), sha256_hex(&std::fs::read(&f)?));
            }
        } else {
            out.insert(p.display().to_string(), sha256_hex(&std::fs::read(p)?));
        }
    }
    Ok(out)
}

fn write_manifest(
    at: &Path,
    command: &str,
    config: Value,
    inputs: &[&Path],
    seed: Option<u64>,
) -> Result<()> {
    let manifest = Manifest {
        command: command.into(),
        config_digest: sha256_hex(serde_json::to_string(&config)?.as_bytes()),
        config,
        inputs: digest_inputs(inputs)?,
        seed,
        tool_version: env!("CARGO_PKG_VERSION"),
        created_at: io::format_time(chrono::Utc::now()),
    };
    io::write_json(at, &manifest)
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn load_site(stops: &Path, routes: &Path) -> Result<Site> {
    Site::new(io::read_stops(stops)?, io::read_routes(routes)?)
}

fn load_params(path: Option<&Path>) -> Result<Hyperparams> {
    path.map(io::read_json).transpose().map(Option::unwrap_or_default)
}

fn pick_route(routes: &[Route], id: Option<&str>) -> Result<Route> {
    match id {
        Some(id) => routes
            .iter()
            .find(|r| r.route_id == id)
            .cloned()
            .ok_or_else(|| Error::Config(format!("route {id} not in the routes file"))),
        None => routes
            .first()
            .cloned()
            .ok_or_else(|| Error::Config("routes file is empty".into())),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match (&a.source.preset, &a.source.spec) {
        (Some(name), _) => preset(name)?,
        (None, Some(path)) => io::read_json::<SiteSpec>(path)?,
        (None, None) => unreachable!("clap enforces one source"),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let g = generate_site(&spec)?;
    std::fs::create_dir_all(&a.out)?;
    io::write_trace_dir(&a.out.join("traces"), &g.traces)?;
    io::write_events(&a.out.join("truth.csv"), &g.truth.stream_with_weather(&g.weather)?)?;
    io::write_stops(&a.out.join("stops.csv"), &g.site.stops)?;
    io::write_routes(&a.out.join("routes.json"), &g.site.routes)?;
    io::write_weather(&a.out.join("weather.csv"), &g.weather)?;
    io::write_json(&a.out.join("spec.json"), &spec)?;
    let inputs: Vec<&Path> = a.source.spec.iter().map(PathBuf::as_path).collect();
    write_manifest(
        &a.out.join("manifest.json"),
        "synth",
        serde_json::to_value(&spec)?,
        &inputs,
        Some(spec.seed),
    )?;
    eprintln!(
        "synth: {} fixes, {} truth events -> {}",
        g.traces.len(),
        g.truth.events.len(),
        a.out.display()
    );
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let config: PreprocessConfig = a.config.as_deref().map(io::read_json).transpose()?.unwrap_or_default();
    let site = load_site(&a.stops, &a.routes)?;
    let fixes = io::read_trace_dir(&a.traces)?;
    let weather = io::read_weather(&a.weather)?;
    let out = run_pipeline(&fixes, &site, &weather, &config)?;
    io::write_events(&a.out, &out.stream)?;
    for d in &out.diagnostics {
        eprintln!("preprocess: {d}");
    }
    let mut inputs = vec![a.traces.as_path(), &a.stops, &a.routes, &a.weather];
    if let Some(c) = &a.config {
        inputs.push(c);
    }
    write_manifest(&manifest_path(&a.out), "preprocess", serde_json::to_value(&config)?, &inputs, None)
}

fn features(a: FeaturesArgs) -> Result<()> {
    let stream = io::read_events(&a.events)?;
    let extra = match &a.routes {
        Some(r) => build_graph(&io::read_routes(r)?, a.target).nodes,
        None => Vec::new(),
    };
    let enc = FeatureEncoder::from_stream(&stream, a.target, &extra);
    let ds = assemble_dataset(&stream, a.target, a.scope, &enc)?;
    io::write_dataset(&a.out, &ds)?;
    let mut inputs = vec![a.events.as_path()];
    if let Some(r) = &a.routes {
        inputs.push(r);
    }
    write_manifest(
        &manifest_path(&a.out),
        "features",
        json!({"target": a.target, "scope": a.scope, "with_graph_nodes": a.routes.is_some()}),
        &inputs,
        None,
    )
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let hp = load_params(a.params.as_deref())?;
    let ds = io::read_dataset(&a.dataset)?;
    let ds = match a.holdout_days {
        Some(days) => split_dataset(&ds, days)?.0,
        None => ds,
    };
    let graph = match (&a.routes, a.model.needs_graph()) {
        (Some(r), true) => Some(build_graph(&io::read_routes(r)?, ds.target)),
        (None, true) => return Err(Error::Config(format!("{} needs --routes", a.model))),
        _ => None,
    };
    let model = train(a.model, &ds, graph.as_ref(), &hp, a.seed)?;
    model.save(&a.out)?;
    let mut inputs = vec![a.dataset.as_path()];
    inputs.extend(a.params.as_deref());
    inputs.extend(a.routes.as_deref());
    write_manifest(
        &manifest_path(&a.out),
        "train",
        json!({"model": a.model, "hyperparameters": hp, "holdout_days": a.holdout_days}),
        &inputs,
        Some(a.seed),
    )
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let model = ModelArtifact::load(&a.model)?;
    let ds = io::read_dataset(&a.dataset)?;
    let ds = match a.holdout_days {
        Some(days) => split_dataset(&ds, days)?.1,
        None => ds,
    };
    let report = evaluate(&model, &ds)?;
    io::write_json(&a.out, &report)?;
    write_manifest(
        &manifest_path(&a.out),
        "evaluate",
        json!({"holdout_days": a.holdout_days}),
        &[&a.model, &a.dataset],
        Some(model.seed),
    )
}

enum Predictor {
    Oracle,
    Model(ModelArtifact),
}

fn load_predictor(spec: &str, target: Target) -> Result<Predictor> {
    if spec == "oracle" {
        return Ok(Predictor::Oracle);
    }
    let m = ModelArtifact::load(Path::new(spec))?;
    if m.target != target {
        return Err(Error::Config(format!("{spec} predicts {} but is used for {target}", m.target)));
    }
    Ok(Predictor::Model(m))
}

#[derive(Serialize)]
struct DecompositionReport {
    dwell_model: String,
    run_model: String,
    #[serde(flatten)]
    decomposition: Decomposition,
}

fn journey(a: JourneyArgs) -> Result<()> {
    let stream = io::read_events(&a.events)?;
    let route = pick_route(&io::read_routes(&a.routes)?, a.route_id.as_deref())?;
    let extraction = extract_journeys(&stream, &route);
    if extraction.journeys.is_empty() {
        return Err(Error::invalid(format!("no complete journey over route {}", route.route_id)));
    }
    let pool = match a.holdout_days {
        Some(days) => split_by_date(&extraction.journeys, |j| j.departure, days)?.1,
        None => extraction.journeys.clone(),
    };
    let sampled = sample_journeys(&pool, a.samples, a.seed);
    let dwell = load_predictor(&a.dwell_model, Target::Dwell)?;
    let run = load_predictor(&a.run_model, Target::Run)?;
    fn wrap<'a>(p: &'a Predictor, journeys: &[shuttle_eta::journey::Journey], stream: &EventStream) -> Box<dyn SegmentPredictor + 'a> {
        match p {
            Predictor::Oracle => Box::new(OraclePredictor::new(journeys)),
            Predictor::Model(m) => Box::new(ModelPredictor::from_stream(m, stream)),
        }
    }
    let (dp, rp) = (
        wrap(&dwell, &extraction.journeys, &stream),
        wrap(&run, &extraction.journeys, &stream),
    );
    let profile = accumulated_error_profile(&sampled, dp.as_ref(), rp.as_ref())?;
    io::write_profile(&a.out, &profile.rows)?;
    if let Some(path) = &a.decomposition {
        let d = decompose_accumulated_error(&sampled, dp.as_ref(), rp.as_ref(), a.decomposition_mode)?;
        io::write_json(
            path,
            &DecompositionReport {
                dwell_model: a.dwell_model.clone(),
                run_model: a.run_model.clone(),
                decomposition: d,
            },
        )?;
    }
    eprintln!(
        "journey: {} of {} journeys sampled, {} skipped passes",
        sampled.len(),
        pool.len(),
        extraction.diagnostics.len()
    );
    let mut inputs = vec![a.events.as_path(), &a.routes];
    for m in [&a.dwell_model, &a.run_model] {
        if m != "oracle" {
            inputs.push(Path::new(m));
        }
    }
    write_manifest(
        &manifest_path(&a.out),
        "journey",
        json!({
            "route": route.route_id,
            "samples": a.samples,
            "holdout_days": a.holdout_days,
            "dwell_model": a.dwell_model,
            "run_model": a.run_model,
            "decomposition_mode": a.decomposition_mode,
        }),
        &inputs,
        Some(a.seed),
    )
}

fn lag_scope(a: LagScopeArgs) -> Result<()> {
    let hp = load_params(a.params.as_deref())?;
    let stream = io::read_events(&a.events)?;
    let graph = a
        .routes
        .as_deref()
        .map(|r| io::read_routes(r).map(|routes| build_graph(&routes, a.target)))
        .transpose()?;
    let table = lag_scope_experiment(
        &stream,
        &ExperimentConfig {
            target: a.target,
            models: &a.models,
            holdout_days: a.holdout_days,
            hyperparams: &hp,
            seed: a.seed,
            graph: graph.as_ref(),
        },
    )?;
    if let Some(note) = &table.note {
        eprintln!("experiment: {note}");
    }
    let mut w = csv_writer(&a.out)?;
    w.write_record(["model", "scope", "rmse", "mae", "n"]).map_err(csv_err)?;
    for r in &table.rows {
        w.write_record([
            r.model.to_string(),
            r.scope.as_str().to_string(),
            r.rmse.to_string(),
            r.mae.to_string(),
            r.n.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    let mut inputs = vec![a.events.as_path()];
    inputs.extend(a.params.as_deref());
    inputs.extend(a.routes.as_deref());
    write_manifest(
        &manifest_path(&a.out),
        "experiment lag-scope",
        json!({"target": a.target, "models": a.models, "holdout_days": a.holdout_days, "hyperparameters": hp}),
        &inputs,
        Some(a.seed),
    )
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(e.to_string())
}

fn stats(v: &[f64]) -> (f64, f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

fn report(a: ReportArgs) -> Result<()> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(&a.metrics)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    files.sort();
    let mut metrics: BTreeMap<(Target, ModelKind), Vec<MetricsReport>> = BTreeMap::new();
    let mut decompositions: Vec<(String, String, Decomposition)> = Vec::new();
    for f in &files {
        let v: Value = io::read_json(f)?;
        if v.get("rmse").is_some() {
            let m: MetricsReport = serde_json::from_value(v).map_err(|e| Error::Parse {
                path: f.clone(),
                line: 0,
                msg: e.to_string(),
            })?;
            metrics.entry((m.target, m.model)).or_default().push(m);
        } else if v.get("dwell_abs").is_some() {
            let d: Decomposition = serde_json::from_value(v.clone())?;
            let name = |k: &str| v.get(k).and_then(Value::as_str).unwrap_or("").to_string();
            decompositions.push((name("dwell_model"), name("run_model"), d));
        }
    }
    if metrics.is_empty() && decompositions.is_empty() {
        return Err(Error::invalid(format!("no metrics files in {}", a.metrics.display())));
    }
    let mut w = csv_writer(&a.out)?;
    w.write_record([
        "table", "target", "model", "runs", "rmse_mean", "rmse_min", "rmse_max", "mae_mean", "mae_min", "mae_max",
        "dwell_abs_s", "run_abs_s",
    ])
    .map_err(csv_err)?;
    for ((target, model), runs) in &metrics {
        let (rm, rlo, rhi) = stats(&runs.iter().map(|r| r.rmse).collect::<Vec<_>>());
        let (mm, mlo, mhi) = stats(&runs.iter().map(|r| r.mae).collect::<Vec<_>>());
        let cells: Vec<String> = vec![
            "metrics".into(),
            target.to_string(),
            model.to_string(),
            runs.len().to_string(),
            rm.to_string(),
            rlo.to_string(),
            rhi.to_string(),
            mm.to_string(),
            mlo.to_string(),
            mhi.to_string(),
            String::new(),
            String::new(),
        ];
        w.write_record(&cells).map_err(csv_err)?;
    }
    for (dm, rm, d) in &decompositions {
        let mut cells = vec![format!("decomposition_{}", d.mode.as_str()), String::new(), format!("{dm}+{rm}"), d.n_journeys.to_string()];
        cells.extend(std::iter::repeat_n(String::new(), 6));
        cells.push(d.dwell_abs.to_string());
        cells.push(d.run_abs.to_string());
        w.write_record(&cells).map_err(csv_err)?;
    }
    w.flush()?;
    let inputs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    write_manifest(&manifest_path(&a.out), "report", json!({}), &inputs, None)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Journey(a) => journey(a),
        Command::Experiment(Experiment::LagScope(a)) => lag_scope(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut line = json!({"error": e.kind(), "message": e.to_string()});
            if let Error::Parse { path, line: l, .. } = &e {
                line["path"] = json!(path.display().to_string());
                line["line"] = json!(l);
            }
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
