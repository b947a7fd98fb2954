use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use misalign::collector::{
    collect, cross_targets, read_responses, responses_to_dataset, ChatClient, CollectOptions, CollectorConfig,
    MockScript, MockServer, PromptTemplates,
};
use misalign::metrics::{entropy_correlation, CorrelationTarget, MisalignmentReport, REPORT_JSON};
use misalign::perm::{DecisionKind, PermutationConfig};
use misalign::pipeline::{check_question_sets, run_tests, TestConfig};
use misalign::run::{now_rfc3339, InputDigest, RunManifest};
use misalign::sim::{
    entropy_sweep, mixture_grid, rejection_rate, write_sweep_csv, GridSpacing, Responder, SweepConfig,
    SyntheticScenario,
};
use misalign::stats::LogBase;
use misalign::survey::{load_dataset, load_manifest, DataFormat, RefusedPolicy, Source, Subgroup};
use misalign::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "misalign", version, about = "Test whether LLM survey answers match human answer distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the two-sample tests on human vs. LLM data and write a report directory.
    Test(TestArgs),
    /// Summarize an existing report: entropy vs. Q (and Wasserstein) correlations.
    Report(ReportArgs),
    /// Collect steered LLM answers into a JSONL file.
    Collect(CollectArgs),
    /// Convert collected JSONL responses into the aggregated CSV format.
    Convert(ConvertArgs),
    /// Run calibration scenarios and entropy sweeps on synthetic data.
    Simulate(SimulateArgs),
}

fn parse_statistics(s: &str) -> std::result::Result<Vec<DecisionKind>, String> {
    let mut out = Vec::new();
    for part in s.split(',') {
        match part.trim() {
            "all" => out.extend(DecisionKind::ALL),
            p => out.push(p.parse::<DecisionKind>()?),
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Args)]
struct TestArgs {
    /// Human responses (aggregated or respondent-level CSV).
    #[arg(long)]
    human: PathBuf,
    /// LLM responses (aggregated or respondent-level CSV).
    #[arg(long)]
    llm: PathBuf,
    /// Question manifest (JSON).
    #[arg(long)]
    questions: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Optional TOML file with test settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Significance level (0.05 corresponds to "95% significance").
    #[arg(long)]
    alpha: Option<f64>,
    /// t1, ks-perm, ks-critical or all (comma-separated).
    #[arg(long, value_parser = parse_statistics)]
    statistic: Option<Vec<DecisionKind>>,
    /// Monte-Carlo resamples per pair.
    #[arg(long)]
    permutations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Enumerate exactly when a pair has at most this many count-splits (0 = never).
    #[arg(long)]
    exact_threshold: Option<u64>,
    /// Keep (include) or remove (drop) the refused option.
    #[arg(long)]
    refused: Option<RefusedPolicy>,
    /// Entropy logarithm base: 2 or e.
    #[arg(long)]
    entropy_base: Option<LogBase>,
    /// Also report the 1-D Wasserstein distance per question.
    #[arg(long)]
    wasserstein: bool,
    /// Input format: aggregated, respondent or auto.
    #[arg(long, default_value = "auto")]
    format: DataFormat,
    /// Worker threads for the tests.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// A directory written by `misalign test`.
    #[arg(long)]
    dir: PathBuf,
}

#[derive(Args)]
struct CollectArgs {
    /// Question manifest (JSON).
    #[arg(long)]
    questions: PathBuf,
    /// TOML with `subgroups = ["dimension:value", ...]`, optional
    /// `[templates]` and optional `[collector]` settings.
    #[arg(long)]
    subgroups: PathBuf,
    /// Output directory (responses.jsonl + manifest.json). Existing
    /// responses are resumed, not overwritten.
    #[arg(long)]
    out: PathBuf,
    /// Serve replies from a scripted local endpoint instead of the network.
    #[arg(long)]
    mock: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    samples: Option<u32>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    requests_per_second: Option<f64>,
    #[arg(long)]
    concurrency: Option<usize>,
    /// Stop after this many HTTP requests (resume later).
    #[arg(long)]
    request_budget: Option<u64>,
}

#[derive(Args)]
struct ConvertArgs {
    /// JSONL written by `misalign collect`.
    #[arg(long)]
    responses: PathBuf,
    /// Question manifest (JSON).
    #[arg(long)]
    questions: PathBuf,
    /// Aggregated CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
}

const RESPONSES_JSONL: &str = "responses.jsonl";
const REJECTION_RATES_CSV: &str = "rejection_rates.csv";
const ENTROPY_SWEEP_CSV: &str = "entropy_sweep.csv";

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Report(a) => cmd_report(a),
        Command::Collect(a) => cmd_collect(a),
        Command::Convert(a) => cmd_convert(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Upstream => 3,
            })
        }
    }
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_test(a: TestArgs) -> Result<()> {
    let started = now_rfc3339();
    let mut config: TestConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => TestConfig::default(),
    };
    if let Some(v) = a.alpha {
        config.alpha = v;
    }
    if let Some(v) = a.statistic {
        config.statistics = v;
    }
    if let Some(v) = a.permutations {
        config.num_permutations = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.exact_threshold {
        config.exact_threshold = v;
    }
    if let Some(v) = a.refused {
        config.refused = v;
    }
    if let Some(v) = a.entropy_base {
        config.entropy_base = v;
    }
    config.wasserstein |= a.wasserstein;
    config.jobs = a.jobs;

    let questions = load_manifest(&a.questions)?;
    let human = load_dataset(&a.human, a.format, &questions)?;
    let llm = load_dataset(&a.llm, a.format, &questions)?;
    expect_single_source(&human, Source::Human, &a.human)?;
    expect_single_source(&llm, Source::Llm, &a.llm)?;
    check_question_sets(&human, &llm)?;
    let report = run_tests(&human.merge(llm)?, &config)?;
    for ex in &report.exclusions {
        eprintln!(
            "warning: {} / {} ({}) excluded: {}",
            ex.question, ex.subgroup, ex.statistic, ex.reason
        );
    }

    let mut manifest = RunManifest::new("test", &config, Some(config.seed), started)?;
    manifest.inputs = vec![
        InputDigest::of_file("questions", &a.questions)?,
        InputDigest::of_file("human", &a.human)?,
        InputDigest::of_file("llm", &a.llm)?,
    ];
    report.write_dir(&a.out)?;
    manifest.write(&a.out)?;
    Ok(())
}

fn expect_single_source(d: &misalign::survey::Dataset, source: Source, path: &Path) -> Result<()> {
    let other = match source {
        Source::Human => Source::Llm,
        Source::Llm => Source::Human,
    };
    if d.question_ids_with(other).is_empty() {
        return Ok(());
    }
    Err(Error::Malformed {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("expected only {} rows, found {} rows", source.as_str(), other.as_str()),
    })
}

#[derive(Serialize)]
struct CorrelationSummary {
    target: String,
    points: usize,
    pearson: f64,
    spearman: f64,
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let path = a.dir.join(REPORT_JSON);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let report: MisalignmentReport = serde_json::from_str(&text)?;
    let mut targets: Vec<(String, CorrelationTarget)> = report
        .config
        .statistics
        .iter()
        .map(|&k| (format!("Q[{k}]"), CorrelationTarget::Q(k)))
        .collect();
    if report.wasserstein_by_question.is_some() {
        targets.push(("wasserstein".into(), CorrelationTarget::Wasserstein));
    }
    let mut rows = Vec::new();
    for (name, target) in targets {
        match entropy_correlation(&report, target) {
            Ok(c) => rows.push(CorrelationSummary {
                target: name,
                points: c.points.len(),
                pearson: c.pearson,
                spearman: c.spearman,
            }),
            Err(e) => eprintln!("warning: entropy vs {name}: {e}"),
        }
    }
    println!("{}", serde_json::to_string_pretty(&rows)?);
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubgroupFile {
    subgroups: Vec<Subgroup>,
    #[serde(default)]
    templates: BTreeMap<String, String>,
    #[serde(default)]
    collector: Option<CollectorConfig>,
}

fn cmd_collect(a: CollectArgs) -> Result<()> {
    let started = now_rfc3339();
    let questions = load_manifest(&a.questions)?;
    let file: SubgroupFile = read_config(&a.subgroups)?;
    if file.subgroups.is_empty() {
        return Err(Error::Config("subgroup file lists no subgroups".into()));
    }
    let mut templates = PromptTemplates::default();
    for (d, t) in &file.templates {
        templates.register(d.clone(), t.clone())?;
    }
    let mut config = file.collector.unwrap_or_default();
    if let Some(v) = a.endpoint {
        config.endpoint_url = v;
    }
    if let Some(v) = a.api_key_env {
        config.api_key_env = v;
    }
    if let Some(v) = a.model {
        config.model = v;
    }
    if let Some(v) = a.samples {
        config.samples_per_pair = v;
    }
    if let Some(v) = a.temperature {
        config.temperature = v;
    }
    if let Some(v) = a.max_retries {
        config.max_retries = v;
    }
    if let Some(v) = a.requests_per_second {
        config.requests_per_second = v;
    }
    if let Some(v) = a.concurrency {
        config.concurrency = v;
    }
    config.validate()?;

    let mut inputs = vec![
        InputDigest::of_file("questions", &a.questions)?,
        InputDigest::of_file("subgroups", &a.subgroups)?,
    ];
    // Keep the server alive for the whole collection.
    let mock = match &a.mock {
        Some(p) => {
            inputs.push(InputDigest::of_file("mock_script", p)?);
            Some(MockServer::start(MockScript::load(p)?)?)
        }
        None => None,
    };
    let client = match &mock {
        Some(server) => {
            config.endpoint_url = server.url().to_string();
            config.http_client_with_key(None)
        }
        None => config.http_client()?,
    };
    let targets = cross_targets(&questions, &file.subgroups);
    create_dir(&a.out)?;
    let options = CollectOptions {
        request_budget: a.request_budget,
    };
    let summary = collect(
        &targets,
        &config,
        &templates,
        &client as &dyn ChatClient,
        a.out.join(RESPONSES_JSONL),
        &options,
    )?;
    eprintln!(
        "requests {} | parsed {} | unparsed {} | rate-limited {} | exhausted slots {} | remaining slots {}{}",
        summary.requests,
        summary.parsed,
        summary.unparsed,
        summary.rate_limited,
        summary.exhausted_slots,
        summary.remaining_slots,
        if summary.interrupted { " | stopped at request budget" } else { "" }
    );
    let mut manifest = RunManifest::new("collect", &config, None, started)?;
    manifest.inputs = inputs;
    manifest.summary = serde_json::to_value(&summary)?;
    manifest.write(&a.out)
}

fn cmd_convert(a: ConvertArgs) -> Result<()> {
    let questions = load_manifest(&a.questions)?;
    let responses = read_responses(&a.responses)?;
    let unparsed = responses.iter().filter(|r| r.parsed_option.is_none()).count();
    let dataset = responses_to_dataset(&responses, &questions)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let f = File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    dataset.write_aggregated(BufWriter::new(f))?;
    eprintln!(
        "{} answers written; {unparsed} unparsable replies excluded",
        dataset.num_samples()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    #[serde(default = "default_sim_statistics")]
    statistics: Vec<DecisionKind>,
    #[serde(default = "default_alphas")]
    alphas: Vec<f64>,
    #[serde(default)]
    permutation: PermutationConfig,
    #[serde(default)]
    scenario: Vec<SyntheticScenario>,
    #[serde(default)]
    sweep: Option<SweepSpec>,
}

fn default_sim_statistics() -> Vec<DecisionKind> {
    vec![DecisionKind::T1, DecisionKind::KsPermutation]
}

fn default_alphas() -> Vec<f64> {
    vec![0.05, 0.01]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSpec {
    k: usize,
    points: usize,
    #[serde(default)]
    spacing: GridSpacing,
    subgroups: usize,
    n1: u64,
    n2: u64,
    #[serde(default = "one")]
    replicates: u64,
    #[serde(default)]
    responder: Responder,
}

fn one() -> u64 {
    1
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let started = now_rfc3339();
    let config: SimulateConfig = read_config(&a.config)?;
    if config.scenario.is_empty() && config.sweep.is_none() {
        return Err(Error::Config("config has neither [[scenario]] entries nor a [sweep]".into()));
    }
    let work = || -> Result<(Vec<u8>, Option<Vec<u8>>)> {
        let mut rates = csv::Writer::from_writer(Vec::new());
        rates.write_record(["scenario", "statistic", "alpha", "trials", "rejections", "rate", "se"])?;
        for s in &config.scenario {
            for &kind in &config.statistics {
                for &alpha in &config.alphas {
                    let r = rejection_rate(s, kind, &PermutationConfig { alpha, ..config.permutation })?;
                    rates.write_record([
                        s.name.clone(),
                        kind.to_string(),
                        alpha.to_string(),
                        r.trials.to_string(),
                        r.rejections.to_string(),
                        r.rate.to_string(),
                        r.se.to_string(),
                    ])?;
                }
            }
        }
        let rates = rates.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        let sweep = match &config.sweep {
            Some(sw) => {
                let points = entropy_sweep(&SweepConfig {
                    grid: mixture_grid(sw.k, sw.points, sw.spacing),
                    subgroups: sw.subgroups,
                    n1: sw.n1,
                    n2: sw.n2,
                    replicates: sw.replicates,
                    statistics: config.statistics.clone(),
                    responder: sw.responder,
                    permutation: config.permutation,
                })?;
                let mut buf = Vec::new();
                write_sweep_csv(&points, &mut buf)?;
                Some(buf)
            }
            None => None,
        };
        Ok((rates, sweep))
    };
    let (rates, sweep) = match a.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work)?,
        None => work()?,
    };

    create_dir(&a.out)?;
    if !config.scenario.is_empty() {
        let p = a.out.join(REJECTION_RATES_CSV);
        std::fs::write(&p, rates).map_err(|e| Error::io(p, e))?;
    }
    if let Some(sweep) = sweep {
        let p = a.out.join(ENTROPY_SWEEP_CSV);
        std::fs::write(&p, sweep).map_err(|e| Error::io(p, e))?;
    }
    let mut manifest = RunManifest::new("simulate", &config, Some(config.permutation.seed), started)?;
    manifest.inputs = vec![InputDigest::of_file("config", &a.config)?];
    manifest.write(&a.out)
}
