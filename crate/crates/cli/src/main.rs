//! `nept`: run reasoning programs, generate benchmark corpora and evaluate
//! them.
//!
//! Exit codes: 0 success, 2 parse error, 3 execution error, 4 grounding
//! error, 5 configuration or usage error, 1 anything else.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use nept_core::exec::{self, ExecOptions, Task};
use nept_core::grounding::{
    propose_objects, GeometricGrounder, Grounder, OracleGrounder, RemoteConfig, RemoteGrounder,
    Scene,
};
use nept_core::harness::{self, EvalConfig};
use nept_core::lang::parse_program;
use nept_core::tensor::SmoothingParams;
use nept_core::verify::GateParams;

const EXIT_PARSE: u8 = 2;
const EXIT_EXEC: u8 = 3;
const EXIT_GROUNDING: u8 = 4;
const EXIT_CONFIG: u8 = 5;

/// An error carrying the process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn fail(code: u8, message: impl Into<String>) -> anyhow::Error {
    Failure {
        code,
        message: message.into(),
    }
    .into()
}

fn config_error(message: impl Into<String>) -> anyhow::Error {
    fail(EXIT_CONFIG, message)
}

#[derive(Debug, Parser)]
#[command(
    name = "nept",
    version,
    about = "Soft-logic executor for visual reasoning programs"
)]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one program against one scene.
    Run {
        program: PathBuf,
        scene: PathBuf,
        /// Restrict the scene to objects of these classes first (comma separated).
        #[arg(long, value_delimiter = ',')]
        names: Vec<String>,
        /// Print the full outcome as JSON instead of a summary.
        #[arg(long)]
        json: bool,
    },
    /// Generate a question corpus (JSON lines).
    Gen {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        scenes: u64,
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
        per_category: u64,
        /// Attach a simulated backbone answer that is right with this probability.
        #[arg(long)]
        backbone_accuracy: Option<f64>,
    },
    /// Evaluate a corpus and print a metrics table.
    Eval { corpus: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum GrounderKind {
    Oracle,
    Geometric,
    Remote,
}

#[derive(Debug, Args)]
struct Opts {
    /// TOML file with defaults for any of the options below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    grounder: Option<GrounderKind>,
    #[arg(long, global = true, env = "NEPT_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    task: Option<Task>,
    /// Temperature of the soft comparisons.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Margin of the soft comparisons.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    gate_preset: Option<String>,
    /// Confidence-gate threshold.
    #[arg(long, global = true)]
    gate_tau: Option<f64>,
    /// Confidence-gate softmax temperature.
    #[arg(long, global = true)]
    gate_temp: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Evaluation workers (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    gradients: bool,
    #[arg(long, global = true)]
    relate_literal: bool,
    #[arg(long, global = true)]
    verify: bool,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    step_budget: Option<usize>,
    #[arg(long, global = true)]
    call_budget: Option<usize>,
    /// Per-request timeout of the remote grounder, in seconds.
    #[arg(long, global = true)]
    timeout: Option<f64>,
    /// Extra attempts after a failed remote request.
    #[arg(long, global = true)]
    retries: Option<u32>,
}

/// Settings read from `--config`; flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    grounder: Option<GrounderKind>,
    endpoint: Option<String>,
    task: Option<Task>,
    tau: Option<f64>,
    gamma: Option<f64>,
    gate_preset: Option<String>,
    gate_tau: Option<f64>,
    gate_temp: Option<f64>,
    seed: Option<u64>,
    jobs: Option<usize>,
    gradients: Option<bool>,
    relate_literal: Option<bool>,
    verify: Option<bool>,
    out: Option<PathBuf>,
    step_budget: Option<usize>,
    call_budget: Option<usize>,
    timeout: Option<f64>,
    retries: Option<u32>,
}

#[derive(Debug)]
struct Config {
    grounder: GrounderKind,
    remote: Option<RemoteConfig>,
    exec: ExecOptions,
    gate: Option<GateParams>,
    seed: u64,
    jobs: usize,
    out: Option<PathBuf>,
}

impl Config {
    fn resolve(opts: Opts) -> Result<Config> {
        let file = match &opts.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| config_error(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let grounder = opts
            .grounder
            .or(file.grounder)
            .unwrap_or(GrounderKind::Oracle);
        let endpoint = opts.endpoint.or(file.endpoint);
        let remote = match (grounder, endpoint) {
            (GrounderKind::Remote, None) => {
                return Err(config_error(
                    "the remote grounder needs --endpoint or NEPT_ENDPOINT",
                ))
            }
            (GrounderKind::Remote, Some(endpoint)) => {
                let mut rc = RemoteConfig::new(endpoint);
                if let Some(t) = opts.timeout.or(file.timeout) {
                    if !(t.is_finite() && t > 0.0) {
                        return Err(config_error(format!("timeout must be positive, got {t}")));
                    }
                    rc.timeout = Duration::from_secs_f64(t);
                }
                if let Some(r) = opts.retries.or(file.retries) {
                    rc.retries = r;
                }
                Some(rc)
            }
            _ => None,
        };
        let defaults = SmoothingParams::default();
        let smoothing = SmoothingParams::new(
            opts.tau.or(file.tau).unwrap_or(defaults.tau),
            opts.gamma.or(file.gamma).unwrap_or(defaults.gamma),
        )
        .map_err(|e| config_error(e.to_string()))?;
        let base = ExecOptions::default();
        let exec = ExecOptions {
            task: opts.task.or(file.task).unwrap_or_default(),
            gradients: opts.gradients || file.gradients.unwrap_or(false),
            relate_literal: opts.relate_literal || file.relate_literal.unwrap_or(false),
            step_budget: opts
                .step_budget
                .or(file.step_budget)
                .unwrap_or(base.step_budget),
            call_budget: opts
                .call_budget
                .or(file.call_budget)
                .unwrap_or(base.call_budget),
            smoothing,
        };
        let verify = opts.verify || file.verify.unwrap_or(false);
        let gate = if verify {
            let preset = opts.gate_preset.or(file.gate_preset);
            let mut params = match &preset {
                Some(name) => GateParams::preset(name).map_err(|e| config_error(e.to_string()))?,
                None => GateParams::preset("qwen2vl").expect("built-in preset"),
            };
            if let Some(t) = opts.gate_tau.or(file.gate_tau) {
                params.threshold = t;
            }
            if let Some(t) = opts.gate_temp.or(file.gate_temp) {
                params.temperature = t;
            }
            params.validate().map_err(|e| config_error(e.to_string()))?;
            Some(params)
        } else {
            None
        };
        Ok(Config {
            grounder,
            remote,
            exec,
            gate,
            seed: opts.seed.or(file.seed).unwrap_or(0),
            jobs: opts.jobs.or(file.jobs).unwrap_or(0),
            out: opts.out.or(file.out),
        })
    }
}

fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn cmd_run(
    config: &Config,
    program: &Path,
    scene: &Path,
    names: &[String],
    json: bool,
) -> Result<()> {
    let source = read_input(program)?;
    let parsed = parse_program(&source)
        .map_err(|e| fail(EXIT_PARSE, format!("{}:{e}", program.display())))?;
    let scene_text = read_input(scene)?;
    let mut scene = Scene::from_json(&scene_text)
        .and_then(|s| s.validate().map(|_| s))
        .map_err(|e| config_error(format!("{}: {e}", scene.display())))?;
    let grounder: Box<dyn Grounder> = match config.grounder {
        GrounderKind::Remote => {
            let mut rc = config.remote.clone().expect("validated with the grounder");
            rc.image_ref = scene.image_ref.clone();
            let client = RemoteGrounder::new(rc, scene.len());
            if !names.is_empty() {
                scene = client
                    .propose(names)
                    .map_err(|e| fail(EXIT_GROUNDING, format!("object proposal failed: {e}")))?;
            }
            Box::new(client.with_object_count(scene.len()))
        }
        kind => {
            if !names.is_empty() {
                scene = propose_objects(&scene, names)
                    .map_err(|e| fail(EXIT_GROUNDING, e.to_string()))?
                    .scene;
            }
            local_grounder(kind, Arc::new(scene))
        }
    };
    let outcome = exec::run(&parsed, grounder.as_ref(), &config.exec).map_err(|e| {
        let code = if e.is_grounding() {
            EXIT_GROUNDING
        } else {
            EXIT_EXEC
        };
        fail(code, format!("{}:{}", program.display(), e.render(&source)))
    })?;
    let text = if json {
        serde_json::to_string_pretty(&outcome)? + "\n"
    } else {
        let mut s = format!("{}\n", outcome.answer);
        s.push_str(&format!("grounding calls: {}\n", outcome.trace.len()));
        for call in &outcome.trace {
            let result = match (&call.shape, &call.text) {
                (_, Some(t)) => format!("{t:?}"),
                (Some(shape), None) => format!("{shape:?}").to_lowercase(),
                (None, None) => String::new(),
            };
            s.push_str(
                &format!("  {:?} {:?} -> {result}\n", call.kind, call.question).to_lowercase(),
            );
        }
        if outcome.soft_branch {
            s.push_str("note: control flow branched on a soft value\n");
        }
        if let Some(grads) = &outcome.gradients {
            for g in grads {
                let adj: Vec<String> = g.adjoints.iter().map(|a| format!("{a:.4}")).collect();
                s.push_str(&format!(
                    "  d answer / d {:?} = [{}]\n",
                    g.question,
                    adj.join(", ")
                ));
            }
        }
        s
    };
    match &config.out {
        Some(path) => {
            emit(
                Some(path),
                &(serde_json::to_string_pretty(&outcome)? + "\n"),
            )?;
            emit(None, &text)
        }
        None => emit(None, &text),
    }
}

fn local_grounder(kind: GrounderKind, scene: Arc<Scene>) -> Box<dyn Grounder> {
    match kind {
        GrounderKind::Geometric => Box::new(GeometricGrounder::new(scene)),
        _ => Box::new(OracleGrounder::new(scene)),
    }
}

fn cmd_gen(config: &Config, scenes: u64, per_category: u64, backbone: Option<f64>) -> Result<()> {
    if let Some(p) = backbone {
        if !(0.0..=1.0).contains(&p) {
            return Err(config_error(format!(
                "--backbone-accuracy must lie in [0, 1], got {p}"
            )));
        }
    }
    let (records, failures) = harness::gen_corpus(
        config.seed,
        scenes as usize,
        per_category as usize,
        backbone,
    );
    for (index, e) in &failures {
        eprintln!("scene {index}: {e}");
    }
    let mut buf = Vec::new();
    harness::write_corpus(&records, &mut buf)?;
    emit(config.out.as_deref(), std::str::from_utf8(&buf)?)?;
    eprintln!("{} questions over {scenes} scenes", records.len());
    Ok(())
}

fn cmd_eval(config: &Config, corpus: &Path) -> Result<()> {
    let records = harness::read_corpus(corpus)
        .map_err(|e| config_error(format!("{}: {e}", corpus.display())))?;
    if records.is_empty() {
        return Err(config_error(format!(
            "{} holds no questions",
            corpus.display()
        )));
    }
    let eval_config = EvalConfig {
        exec: config.exec,
        jobs: config.jobs,
        gate: config.gate,
        arbiter: config.gate.is_some() && config.grounder == GrounderKind::Remote,
    };
    let report = match config.grounder {
        GrounderKind::Remote => {
            let client = RemoteGrounder::new(config.remote.clone().expect("validated"), 0);
            let factory = move |s: &Scene| -> Box<dyn Grounder> {
                Box::new(client.for_image(s.image_ref.clone(), s.len()))
            };
            harness::evaluate(&records, &factory, &eval_config)
        }
        kind => {
            let factory = move |s: &Scene| local_grounder(kind, Arc::new(s.clone()));
            harness::evaluate(&records, &factory, &eval_config)
        }
    };
    if let Some(path) = &config.out {
        emit(Some(path), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    for item in report.items.iter().filter(|i| i.error.is_some()) {
        eprintln!(
            "item {}: {}",
            item.index,
            item.error.as_deref().unwrap_or_default()
        );
    }
    emit(None, &report.to_table())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = Config::resolve(cli.opts).and_then(|config| match &cli.command {
        Command::Run {
            program,
            scene,
            names,
            json,
        } => cmd_run(&config, program, scene, names, *json),
        Command::Gen {
            scenes,
            per_category,
            backbone_accuracy,
        } => cmd_gen(&config, *scenes, *per_category, *backbone_accuracy),
        Command::Eval { corpus } => cmd_eval(&config, corpus),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<Failure>().map_or(1, |f| f.code))
        }
    }
}
