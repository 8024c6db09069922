use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use scene_ground::eval::{build_benchmark, run_eval, EvalBackend, EvalConfig, Layout, Lexicon};
use scene_ground::llm::{ChatBackend, LiveClient, LlmError, MockBackend, OracleBackend, ENV_API_KEY};
use scene_ground::prompt::{format_examples, ExampleLibrary, PromptBuilder, PromptError, PromptTemplate};
use scene_ground::response::{parse_response_with, render_response, ParseOptions};
use scene_ground::scene::{serialize_scene, validate_scene_json, SerializeOptions};
use scene_ground::{
    derive_edges, estimate_tokens, interpret_query, parse_scene, validate_grounding, GroundingIssueKind,
    SceneGraph,
};

mod config;

use config::{CliConfig, ConfigError, Format, Overrides};

const EXIT_OK: u8 = 0;
const EXIT_INVALID: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_UNPARSEABLE: u8 = 3;

#[derive(Parser)]
#[command(name = "scene-ground", version, about = "Ask spatial questions about 3D scene graphs")]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// JSON config file (default: ./scene-ground.json if present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Prompt token budget.
    #[arg(long, global = true)]
    budget: Option<usize>,
    /// Require canonical step headers in model responses.
    #[arg(long, global = true)]
    strict: bool,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    base_url: Option<String>,
    /// Distance below which two objects count as near.
    #[arg(long, global = true)]
    near_threshold: Option<f64>,
    /// Concurrent model requests.
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Live,
    Mock,
    Oracle,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "live")]
    backend: BackendKind,
    /// Canned responses for the mock backend.
    #[arg(long)]
    mock_script: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scene file and list every problem.
    Validate { scene: PathBuf },
    /// List the nodes of a scene, optionally with derived relations.
    Describe {
        scene: PathBuf,
        #[arg(long)]
        relations: bool,
    },
    /// Answer one question about a scene.
    Ask {
        scene: PathBuf,
        query: String,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Answer questions read line by line from stdin.
    Repl {
        scene: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Score a backend on generated scenes.
    Eval {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        scenes: usize,
        /// Nodes per scene.
        #[arg(long, default_value_t = 12)]
        nodes: usize,
        #[arg(long, default_value = "mixed")]
        layout: Layout,
        #[arg(long, value_enum, default_value = "oracle")]
        backend: BackendKind,
        #[arg(long)]
        mock_script: Option<PathBuf>,
        /// Tag vocabulary for generated scenes.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Directory for report.json, report.txt and records.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show how a scene is reduced to fit the token budget.
    Compact {
        scene: PathBuf,
        #[arg(long, default_value = "")]
        query: String,
    },
    /// Write a synthetic scene.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        nodes: usize,
        #[arg(long, default_value = "mixed")]
        layout: Layout,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A command result: exit code plus both renderings.
struct Outcome {
    code: u8,
    text: String,
    json: Value,
}

impl Outcome {
    fn ok(text: String, json: Value) -> Self {
        Self { code: EXIT_OK, text, json }
    }
}

#[derive(Debug)]
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(code: u8, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            kind,
            message: message.into(),
        }
    }

    fn to_json(&self) -> Value {
        json!({ "error": { "kind": self.kind, "message": self.message }, "exit_code": self.code })
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(m) => Failure::new(EXIT_IO, "io", m),
            ConfigError::Invalid(m) => Failure::new(EXIT_INVALID, "config", m),
        }
    }
}

impl From<PromptError> for Failure {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::BudgetInfeasible { .. } => Failure::new(EXIT_INVALID, "budget_infeasible", e.to_string()),
            PromptError::Io { .. } => Failure::new(EXIT_IO, "io", e.to_string()),
            _ => Failure::new(EXIT_INVALID, "prompt", e.to_string()),
        }
    }
}

fn llm_failure(e: LlmError) -> Failure {
    let (code, kind) = match &e {
        LlmError::AuthMissing => (EXIT_IO, "auth_missing"),
        LlmError::Network(_) => (EXIT_IO, "network"),
        LlmError::Timeout => (EXIT_IO, "timeout"),
        LlmError::Http { .. } => (EXIT_IO, "http"),
        LlmError::InvalidResponse(_) => (EXIT_IO, "invalid_response"),
        LlmError::ContextOverflow(_) => (EXIT_INVALID, "context_overflow"),
        LlmError::UnsupportedCategory(_) => (EXIT_INVALID, "unsupported_category"),
        LlmError::Oracle(_) => (EXIT_INVALID, "oracle"),
        LlmError::Mock(_) => (EXIT_INVALID, "mock"),
    };
    Failure::new(code, kind, e.to_string())
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_IO, "io", format!("cannot read {}: {e}", path.display())))
}

fn load_scene(path: &Path) -> Result<SceneGraph, Failure> {
    let text = read_text(path)?;
    parse_scene(&text).map_err(|e| Failure::new(EXIT_INVALID, "scene", format!("{}: {e}", path.display())))
}

/// Prompt template and example library from the config.
struct Prompting {
    builder: PromptBuilder,
    examples: ExampleLibrary,
    parse: ParseOptions,
}

impl Prompting {
    fn from_config(cfg: &CliConfig) -> Result<Self, Failure> {
        let builder = match &cfg.template {
            Some(p) => PromptBuilder::new(PromptTemplate::load(p)?),
            None => PromptBuilder::default(),
        };
        let mut examples = ExampleLibrary::default();
        if let Some(p) = &cfg.examples {
            examples.load_custom(p)?;
        }
        Ok(Self {
            builder,
            examples,
            parse: ParseOptions { strict: cfg.strict },
        })
    }
}

fn make_backend(
    kind: BackendKind,
    mock_script: Option<&Path>,
    scene: &SceneGraph,
    cfg: &CliConfig,
) -> Result<Box<dyn ChatBackend>, Failure> {
    Ok(match kind {
        BackendKind::Live => Box::new(LiveClient::from_env(cfg.llm.clone())),
        BackendKind::Oracle => Box::new(OracleBackend::new(scene.clone(), cfg.oracle)),
        BackendKind::Mock => Box::new(load_mock(mock_script)?),
    })
}

fn load_mock(path: Option<&Path>) -> Result<MockBackend, Failure> {
    let path = path.ok_or_else(|| Failure::new(EXIT_INVALID, "usage", "--mock-script is required with --backend mock"))?;
    MockBackend::from_json(&read_text(path)?).map_err(llm_failure)
}

fn cmd_validate(path: &Path) -> Result<Outcome, Failure> {
    let text = read_text(path)?;
    let report = validate_scene_json::<f64>(&text);
    let mut out = format!("{} nodes, {} issues", report.node_count, report.issues.len());
    let mut issues = Vec::new();
    for issue in &report.issues {
        out.push_str(&format!("\n  {issue}"));
        issues.push(json!({ "node": issue.node_index(), "message": issue.to_string() }));
    }
    Ok(Outcome {
        code: if report.is_valid() { EXIT_OK } else { EXIT_INVALID },
        text: out,
        json: json!({
            "valid": report.is_valid(),
            "node_count": report.node_count,
            "issue_count": report.issues.len(),
            "issues": issues,
        }),
    })
}

fn fmt_vec(v: [f64; 3]) -> String {
    format!("[{}, {}, {}]", v[0], v[1], v[2])
}

fn cmd_describe(path: &Path, relations: bool, cfg: &CliConfig) -> Result<Outcome, Failure> {
    let scene = load_scene(path)?;
    let mut text = format!("{} nodes", scene.len());
    let mut nodes = Vec::new();
    for n in scene.nodes() {
        text.push_str(&format!(
            "\n{} {} extent {} center {}",
            n.id,
            n.object_tag,
            fmt_vec(n.bbox_extent.to_array()),
            fmt_vec(n.bbox_center.to_array())
        ));
        nodes.push(json!({
            "id": n.id,
            "object_tag": n.object_tag,
            "bbox_extent": n.bbox_extent.to_array(),
            "bbox_center": n.bbox_center.to_array(),
        }));
    }
    let mut body = json!({ "node_count": scene.len(), "nodes": nodes });
    if relations {
        let edges = derive_edges(&scene, &cfg.oracle);
        text.push_str(&format!("\nrelations ({}):", edges.len()));
        for e in &edges {
            text.push_str(&format!("\n{e}"));
        }
        body["relations"] = serde_json::to_value(&edges).expect("edges serialize");
    }
    Ok(Outcome::ok(text, body))
}

/// Failure kinds that make an answer ungrounded.
const UNGROUNDED: [GroundingIssueKind; 4] = [
    GroundingIssueKind::UnknownId,
    GroundingIssueKind::TooManyRelevant,
    GroundingIssueKind::TagMismatch,
    GroundingIssueKind::MalformedJson,
];

/// Build, complete, parse and check one question.
fn ask_once(
    scene: &SceneGraph,
    query: &str,
    backend: &dyn ChatBackend,
    prompting: &Prompting,
    cfg: &CliConfig,
) -> Result<Outcome, Failure> {
    let category = interpret_query(scene, query).category();
    let examples = prompting.examples.select_examples(category);
    let bundle = prompting.builder.build(scene, query, &examples, cfg.budget)?;
    let raw = backend.complete(&bundle).map_err(llm_failure)?;
    let prompt_info = json!({
        "token_estimate": bundle.token_estimate,
        "included_node_ids": bundle.included_node_ids,
        "compaction": bundle.compaction_report,
    });
    let parsed = match parse_response_with(&raw, prompting.parse) {
        Ok(p) => p,
        Err(e) => {
            return Ok(Outcome {
                code: EXIT_UNPARSEABLE,
                text: format!("unparseable response: {e}\n{raw}"),
                json: json!({
                    "query": query,
                    "category": category,
                    "grounded": false,
                    "error": { "kind": "unparseable", "message": e.to_string() },
                    "raw": raw,
                    "prompt": prompt_info,
                    "exit_code": EXIT_UNPARSEABLE,
                }),
            });
        }
    };
    let issues = validate_grounding(&parsed, scene);
    // A declined answer names no object and so is not grounded either.
    let grounded = parsed.final_object_id.is_some() && !issues.iter().any(|i| UNGROUNDED.contains(&i.kind));
    let code = if grounded { EXIT_OK } else { EXIT_INVALID };
    let mut text = render_response(&parsed);
    if issues.is_empty() {
        text.push_str("\nissues: none");
    } else {
        text.push_str("\nissues:");
        for i in &issues {
            text.push_str(&format!("\n  {i}"));
        }
    }
    text.push_str(&format!("\ngrounded: {}", if grounded { "yes" } else { "no" }));
    Ok(Outcome {
        code,
        text,
        json: json!({
            "query": query,
            "category": category,
            "grounded": grounded,
            "response": parsed,
            "issues": issues,
            "prompt": prompt_info,
            "exit_code": code,
        }),
    })
}

fn cmd_ask(path: &Path, query: &str, args: &BackendArgs, cfg: &CliConfig) -> Result<Outcome, Failure> {
    let scene = load_scene(path)?;
    let prompting = Prompting::from_config(cfg)?;
    let backend = make_backend(args.backend, args.mock_script.as_deref(), &scene, cfg)?;
    ask_once(&scene, query, backend.as_ref(), &prompting, cfg)
}

fn cmd_repl(path: &Path, args: &BackendArgs, cfg: &CliConfig) -> Result<Outcome, Failure> {
    let scene = load_scene(path)?;
    let prompting = Prompting::from_config(cfg)?;
    let oracle = OracleBackend::new(scene.clone(), cfg.oracle);
    let configured = make_backend(args.backend, args.mock_script.as_deref(), &scene, cfg)?;
    let mut use_oracle = args.backend == BackendKind::Oracle;
    let json_mode = cfg.format == Format::Json;
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    let mut answered = 0usize;
    if !json_mode {
        let _ = writeln!(stdout, "{} nodes loaded. :quit to exit, :oracle on|off to switch backend.", scene.len());
    }
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| Failure::new(EXIT_IO, "io", e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (text, value) = match line {
            ":quit" | ":q" => break,
            ":oracle on" => {
                use_oracle = true;
                ("backend: oracle".to_string(), json!({ "backend": "oracle" }))
            }
            ":oracle off" => {
                use_oracle = false;
                ("backend: configured".to_string(), json!({ "backend": "configured" }))
            }
            query => {
                // Every query gets a fresh prompt; nothing carries over.
                let backend: &dyn ChatBackend = if use_oracle { &oracle } else { configured.as_ref() };
                answered += 1;
                match ask_once(&scene, query, backend, &prompting, cfg) {
                    Ok(o) => (o.text, o.json),
                    Err(f) => (format!("error: {}", f.message), f.to_json()),
                }
            }
        };
        let _ = if json_mode {
            writeln!(stdout, "{value}")
        } else {
            writeln!(stdout, "{text}\n")
        };
    }
    Ok(Outcome::ok(
        format!("bye ({answered} questions)"),
        json!({ "questions": answered, "exit_code": EXIT_OK }),
    ))
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    seed: u64,
    scenes: usize,
    nodes: usize,
    layout: Layout,
    kind: BackendKind,
    mock_script: Option<&Path>,
    lexicon: Option<&Path>,
    out: Option<&Path>,
    cfg: &CliConfig,
) -> Result<Outcome, Failure> {
    let lexicon = match lexicon {
        Some(p) => Lexicon::load(p).map_err(|e| Failure::new(EXIT_INVALID, "lexicon", e.to_string()))?,
        None => Lexicon::default(),
    };
    let prompting = Prompting::from_config(cfg)?;
    let eval_cfg = EvalConfig {
        oracle: cfg.oracle,
        budget: cfg.budget,
        parse: prompting.parse,
        concurrency: cfg.llm.concurrency,
        examples: prompting.examples,
        prompts: prompting.builder,
    };
    let cases = build_benchmark(seed, scenes, nodes, layout, &lexicon);
    let mock;
    let live;
    let backend = match kind {
        BackendKind::Oracle => EvalBackend::Oracle,
        BackendKind::Mock => {
            mock = load_mock(mock_script)?;
            // Scripted sequences depend on call order.
            EvalBackend::Sequential(&mock)
        }
        BackendKind::Live => {
            if std::env::var(ENV_API_KEY).map_or(true, |k| k.trim().is_empty()) {
                return Err(llm_failure(LlmError::AuthMissing));
            }
            live = LiveClient::from_env(cfg.llm.clone());
            EvalBackend::Chat(&live)
        }
    };
    let report =
        run_eval(&cases, backend, &eval_cfg).map_err(|e| Failure::new(EXIT_INVALID, "config", e.to_string()))?;
    let mut text = report.to_text();
    if let Some(dir) = out {
        let io = |e: std::io::Error| Failure::new(EXIT_IO, "io", format!("cannot write to {}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("report.json"), report.to_json()).map_err(io)?;
        std::fs::write(dir.join("report.txt"), report.to_text()).map_err(io)?;
        std::fs::write(dir.join("records.jsonl"), report.to_jsonl()).map_err(io)?;
        text.push_str(&format!("wrote {}", dir.display()));
    }
    Ok(Outcome::ok(
        text,
        json!({
            "scenes": cases.len(),
            "overall": report.overall,
            "accuracy": report.accuracy,
            "per_category": report.per_category,
            "out": out.map(|p| p.display().to_string()),
        }),
    ))
}

fn cmd_compact(path: &Path, query: &str, cfg: &CliConfig) -> Result<Outcome, Failure> {
    let scene = load_scene(path)?;
    let prompting = Prompting::from_config(cfg)?;
    let examples = prompting.examples.select_examples(interpret_query(&scene, query).category());
    let full_scene = serialize_scene(&scene, &SerializeOptions::exact());
    let before = estimate_tokens(&prompting.builder.template().render(&full_scene, &format_examples(&examples), query));
    let bundle = prompting.builder.build(&scene, query, &examples, cfg.budget)?;
    let mut text = format!(
        "before: {before} tokens\nafter: {} tokens (budget {})\nnodes: {} -> {}",
        bundle.token_estimate,
        cfg.budget,
        scene.len(),
        bundle.included_node_ids.len()
    );
    if bundle.compaction_report.is_empty() {
        text.push_str("\nactions: none");
    } else {
        text.push_str("\nactions:");
        for a in &bundle.compaction_report {
            text.push_str(&format!("\n  {:?}: {} -> {}", a.step, a.tokens_before, a.tokens_after));
            if !a.removed_ids.is_empty() {
                let ids: Vec<String> = a.removed_ids.iter().map(ToString::to_string).collect();
                text.push_str(&format!(" (removed {})", ids.join(", ")));
            }
        }
    }
    Ok(Outcome::ok(
        text,
        json!({
            "before": before,
            "after": bundle.token_estimate,
            "budget": cfg.budget,
            "nodes_before": scene.len(),
            "nodes_after": bundle.included_node_ids.len(),
            "included_node_ids": bundle.included_node_ids,
            "actions": bundle.compaction_report,
        }),
    ))
}

fn cmd_generate(seed: u64, nodes: usize, layout: Layout, out: Option<&Path>) -> Result<Outcome, Failure> {
    let cases = build_benchmark(seed, 1, nodes, layout, &Lexicon::default());
    let scene = &cases[0].scene;
    let doc = serialize_scene(scene, &SerializeOptions::exact());
    match out {
        Some(p) => {
            std::fs::write(p, &doc)
                .map_err(|e| Failure::new(EXIT_IO, "io", format!("cannot write {}: {e}", p.display())))?;
            Ok(Outcome::ok(
                format!("wrote {} nodes to {}", scene.len(), p.display()),
                json!({ "path": p.display().to_string(), "node_count": scene.len() }),
            ))
        }
        None => Ok(Outcome::ok(doc.clone(), serde_json::from_str(&doc).expect("scene is JSON"))),
    }
}

fn run(cli: &Cli, cfg: &CliConfig) -> Result<Outcome, Failure> {
    match &cli.command {
        Command::Validate { scene } => cmd_validate(scene),
        Command::Describe { scene, relations } => cmd_describe(scene, *relations, cfg),
        Command::Ask { scene, query, backend } => cmd_ask(scene, query, backend, cfg),
        Command::Repl { scene, backend } => cmd_repl(scene, backend, cfg),
        Command::Eval {
            seed,
            scenes,
            nodes,
            layout,
            backend,
            mock_script,
            lexicon,
            out,
        } => cmd_eval(
            *seed,
            *scenes,
            *nodes,
            *layout,
            *backend,
            mock_script.as_deref(),
            lexicon.as_deref(),
            out.as_deref(),
            cfg,
        ),
        Command::Compact { scene, query } => cmd_compact(scene, query, cfg),
        Command::Generate { seed, nodes, layout, out } => cmd_generate(*seed, *nodes, *layout, out.as_deref()),
    }
}

/// Whether `--format json` appears on the raw command line, for reporting
/// argument errors before clap has produced anything.
fn wants_json(args: &[String]) -> bool {
    args.iter()
        .zip(args.iter().skip(1))
        .any(|(a, b)| a == "--format" && b == "json")
        || args.iter().any(|a| a == "--format=json")
}

fn emit_failure(f: &Failure, format: Format) -> ExitCode {
    match format {
        Format::Json => println!("{}", f.to_json()),
        Format::Text => eprintln!("error: {}", f.message),
    }
    ExitCode::from(f.code)
}

fn main() -> ExitCode {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            if wants_json(&args) {
                let f = Failure::new(EXIT_IO, "usage", e.kind().to_string());
                return emit_failure(&f, Format::Json);
            }
            e.exit()
        }
    };
    let flags = Overrides {
        config: cli.config.clone(),
        format: cli.format,
        budget: cli.budget,
        strict: cli.strict,
        model: cli.model.clone(),
        base_url: cli.base_url.clone(),
        near_threshold: cli.near_threshold,
        concurrency: cli.concurrency,
    };
    let cfg = match CliConfig::from_env(&flags) {
        Ok(cfg) => cfg,
        Err(e) => return emit_failure(&e.into(), cli.format.unwrap_or_default()),
    };
    match run(&cli, &cfg) {
        Ok(o) => {
            match cfg.format {
                Format::Json => println!("{}", o.json),
                Format::Text => println!("{}", o.text),
            }
            ExitCode::from(o.code)
        }
        Err(f) => emit_failure(&f, cfg.format),
    }
}
