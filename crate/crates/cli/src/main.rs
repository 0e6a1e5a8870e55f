mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ragent_core::agent::{Agent, Outcome, PlannerDecision, TaskRequest, TaskRun};
use ragent_core::harness::{
    load_benchmark, render_table, run_benchmark, validate_pack, AfDenominator, BenchOptions, BenchmarkTask,
    Components, GroundTruth, MetricOptions, PackRules,
};
use ragent_core::local_rag::{
    generate_training_corpus, load_catalog, write_corpus, CorpusSpec, RetrievalOutcome, TemplateQuerySource,
};
use ragent_core::{AppIndex, EmbedderBackend, MemoryStore, Scenario, SimDevice};

use crate::config::{resolve_agent, AgentOverrides, CliConfig, ConfiguredComponents, PlannerConfig};

#[derive(Parser)]
#[command(name = "ragent", version, about = "Retrieval-augmented mobile agent")]
struct Cli {
    /// TOML config file. Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build or query an app index.
    Index {
        #[command(subcommand)]
        cmd: IndexCmd,
    },
    /// Run one task.
    Run(RunArgs),
    /// Run a benchmark suite and write reports.
    Bench(BenchArgs),
    /// Inspect or manage an experience store.
    Memory {
        #[command(subcommand)]
        cmd: MemoryCmd,
    },
    /// Retriever training data.
    Corpus {
        #[command(subcommand)]
        cmd: CorpusCmd,
    },
    /// Benchmark pack checks.
    Pack {
        #[command(subcommand)]
        cmd: PackCmd,
    },
}

#[derive(Subcommand)]
enum IndexCmd {
    Build {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        q: String,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlannerKind {
    Scripted,
    Chat,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Pack directory; use with --task.
    #[arg(long, requires = "task")]
    pack: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    /// Scenario file; use with --instruction.
    #[arg(long, conflicts_with = "pack", requires = "instruction")]
    scenario: Option<PathBuf>,
    #[arg(long)]
    instruction: Option<String>,
    /// JSON array of planner decisions for the scripted planner.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, value_enum)]
    planner: Option<PlannerKind>,
    /// Experience store file; created if missing, updated after the run.
    #[arg(long)]
    memory: Option<PathBuf>,
    /// Write the NDJSON run log here.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    agent: AgentOverrides,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long)]
    pack: PathBuf,
    #[arg(long, default_value = "main")]
    suite: String,
    /// Thread one experience store through the suite.
    #[arg(long)]
    memory: bool,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    planner: Option<PlannerKind>,
    /// Divide Action Fidelity by executed rather than expected actions.
    #[arg(long)]
    af_executed: bool,
    /// Leave launches and installs out of Action Fidelity.
    #[arg(long)]
    af_skip_app_actions: bool,
    #[command(flatten)]
    agent: AgentOverrides,
}

#[derive(Subcommand)]
enum MemoryCmd {
    /// One line per record: query, trace length, success count.
    Ls {
        #[arg(long)]
        memory: Option<PathBuf>,
    },
    Clear {
        #[arg(long)]
        memory: Option<PathBuf>,
    },
    /// Records without embeddings, as JSON.
    Export {
        #[arg(long)]
        memory: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    Generate {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        per_app: usize,
        /// Fraction of none-cases in the output.
        #[arg(long)]
        none: f64,
        #[arg(long, default_value_t = 3)]
        negatives: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PackCmd {
    Validate {
        #[arg(long)]
        pack: PathBuf,
        /// Only structural checks, not the shipped-pack minimums.
        #[arg(long)]
        minimal: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    let cfg = CliConfig::load(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Index { cmd } => cmd_index(&cfg, cmd),
        Cmd::Run(args) => cmd_run(&cfg, args),
        Cmd::Bench(args) => cmd_bench(&cfg, args),
        Cmd::Memory { cmd } => cmd_memory(&cfg, cmd),
        Cmd::Corpus { cmd } => cmd_corpus(cmd),
        Cmd::Pack { cmd } => cmd_pack(cmd),
    }
}

fn cmd_index(cfg: &CliConfig, cmd: IndexCmd) -> Result<u8> {
    let embedder = cfg.embedder.build()?;
    match cmd {
        IndexCmd::Build { catalog, out, threshold } => {
            let flags = AgentOverrides {
                local_threshold: threshold,
                ..AgentOverrides::default()
            };
            let agent = resolve_agent(None, &cfg.agent, &flags)?;
            let apps = load_catalog(&catalog)?;
            let index = AppIndex::build(&apps, embedder.as_ref(), agent.local_threshold)?;
            index.save(&out)?;
            println!("indexed {} apps into {}", index.len(), out.display());
        }
        IndexCmd::Query { index, q, k } => {
            let index = AppIndex::load(&index)?;
            match index.retrieve_apps(embedder.as_ref(), &q, k)? {
                RetrievalOutcome::Matches { matches } => {
                    for (i, m) in matches.iter().enumerate() {
                        println!("{}. {}\t{}\t{:.4}", i + 1, m.package_id, m.app_name, m.score);
                    }
                }
                RetrievalOutcome::NoLocalApp { best_score } => match best_score {
                    Some(s) => println!("NO_LOCAL_APP best_score={s:.4}"),
                    None => println!("NO_LOCAL_APP best_score=none"),
                },
            }
        }
    }
    Ok(0)
}

fn components(cfg: &CliConfig, kind: Option<PlannerKind>) -> Result<ConfiguredComponents> {
    let planner = match (kind, &cfg.planner) {
        (Some(PlannerKind::Scripted), _) => PlannerConfig::Scripted,
        (Some(PlannerKind::Chat), PlannerConfig::Scripted) => {
            bail!("--planner chat needs a [planner] section with kind = \"chat\" in the config file")
        }
        (_, p) => p.clone(),
    };
    Ok(ConfiguredComponents {
        planner,
        search: cfg.search.clone(),
    })
}

fn open_memory(path: &Path, embedder: &dyn EmbedderBackend, threshold: f64) -> Result<MemoryStore> {
    if path.exists() {
        let store = MemoryStore::load(path).with_context(|| format!("loading {}", path.display()))?;
        Ok(store.with_threshold(threshold)?)
    } else {
        Ok(MemoryStore::new(embedder, threshold)?)
    }
}

fn cmd_run(cfg: &CliConfig, args: RunArgs) -> Result<u8> {
    let embedder = cfg.embedder.build()?;
    let comps = components(cfg, args.planner)?;

    // Either a pack task (script and ground truth included) or an ad-hoc
    // scenario + instruction.
    let (task, scenario, base) = match (&args.pack, &args.scenario) {
        (Some(pack_dir), _) => {
            let pack = load_benchmark(pack_dir)?;
            let id = args.task.as_deref().unwrap_or_default();
            let task = pack.task(id).ok_or_else(|| anyhow!("no task {id} in {}", pack_dir.display()))?.clone();
            let scenario = pack.scenarios[&task.scenario].clone();
            (task, scenario, Some(pack.manifest.agent.clone()))
        }
        (None, Some(path)) => {
            let scenario = Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
            let script: Vec<PlannerDecision> = match &args.script {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => Vec::new(),
            };
            let task = BenchmarkTask {
                task_id: "adhoc".into(),
                instruction: args.instruction.clone().unwrap_or_default(),
                tier: ragent_core::harness::Tier::Atomic,
                scenario: scenario.scenario_id.clone(),
                ground_truth: GroundTruth {
                    expected_apps: Vec::new(),
                    expected_actions: Vec::new(),
                    sub_goals: Vec::new(),
                },
                script,
            };
            (task, Arc::new(scenario), None)
        }
        (None, None) => bail!("give either --pack and --task, or --scenario and --instruction"),
    };
    if matches!(comps.planner, PlannerConfig::Scripted) && task.script.is_empty() {
        bail!("the scripted planner needs a script (--script, or a pack task)");
    }

    let agent_cfg = resolve_agent(base.as_ref(), &cfg.agent, &args.agent)?;
    let memory_path = args.memory.clone().or_else(|| cfg.paths.memory.clone());
    let mut memory = match &memory_path {
        Some(p) => Some(open_memory(p, embedder.as_ref(), agent_cfg.memory_threshold)?),
        None => None,
    };
    let mut index = AppIndex::build(&scenario.installed_apps, embedder.as_ref(), agent_cfg.local_threshold)?;
    let search = comps.search(&scenario);
    let agent = Agent::new(embedder.as_ref(), search.as_ref(), agent_cfg)?;
    let mut device = SimDevice::new(scenario);
    let mut planner = comps.planner(&task);
    let mut reflector = comps.reflector(&task);
    let mut request = TaskRequest::new(&task.task_id, &task.instruction);
    if !task.ground_truth.sub_goals.is_empty() {
        request = request.with_goal(&task.ground_truth);
    }
    let run = agent.run_task(
        &request,
        &mut device,
        &mut index,
        memory.as_mut(),
        planner.as_mut(),
        reflector.as_mut(),
    )?;

    if let (Some(store), Some(p)) = (&memory, &memory_path) {
        store.save(p)?;
    }
    if let Some(p) = &args.log {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        let mut w = BufWriter::new(f);
        run.write_log(&mut w)?;
        w.flush()?;
    }
    print_run(&run);
    Ok(if run.outcome == Outcome::Success { 0 } else { 1 })
}

fn print_run(run: &TaskRun) {
    let outcome = match run.outcome {
        Outcome::Success => "success",
        Outcome::Failure => "failure",
        Outcome::BudgetExhausted => "budget_exhausted",
    };
    println!("task {}: {outcome}", run.task_id);
    let c = &run.counters;
    println!(
        "memory_hit={} planner_calls={} mobile_steps={} searches={} installs={}",
        format!("{:?}", c.memory_hit).to_lowercase(),
        c.planner_calls,
        c.mobile_steps,
        c.searches,
        c.installs
    );
    for (i, s) in run.trace.steps.iter().enumerate() {
        println!("{:>3}. {} -> {} [{:?}]", i + 1, s.action, s.post_screen, s.effect);
    }
    if let Some(e) = &run.error {
        println!("error: {e}");
    }
}

fn cmd_bench(cfg: &CliConfig, args: BenchArgs) -> Result<u8> {
    let embedder = cfg.embedder.build()?;
    let comps = components(cfg, args.planner)?;
    let pack = load_benchmark(&args.pack)?;
    let agent_cfg = resolve_agent(Some(&pack.manifest.agent), &cfg.agent, &args.agent)?;
    let opts = BenchOptions {
        suite: args.suite,
        memory: args.memory,
        parallelism: args.parallel,
        config: agent_cfg,
        metrics: MetricOptions {
            af_denominator: if args.af_executed {
                AfDenominator::Executed
            } else {
                AfDenominator::Expected
            },
            af_skip_app_actions: args.af_skip_app_actions,
        },
    };
    let run = run_benchmark::<f32>(&pack, embedder.as_ref(), &comps, &opts)?;
    let out = args.out.or_else(|| cfg.paths.out.clone());
    if let Some(out) = &out {
        run.write_outputs(out)?;
    }
    print!("{}", render_table(&run.report));
    if let Some(out) = &out {
        println!("reports written to {}", out.display());
    }
    if run.report.harness_errors > 0 {
        eprintln!("{} task(s) hit harness errors", run.report.harness_errors);
        return Ok(1);
    }
    Ok(0)
}

fn memory_path(cfg: &CliConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| cfg.paths.memory.clone())
        .ok_or_else(|| anyhow!("no memory store given (--memory or [paths] memory)"))
}

fn cmd_memory(cfg: &CliConfig, cmd: MemoryCmd) -> Result<u8> {
    match cmd {
        MemoryCmd::Ls { memory } => {
            let path = memory_path(cfg, memory)?;
            if !path.exists() {
                return Ok(0);
            }
            let store = MemoryStore::load(&path)?;
            for r in store.records() {
                println!("{}\t{}\t{}", r.normalized_query, r.trace.len(), r.success_count);
            }
        }
        MemoryCmd::Clear { memory } => {
            let path = memory_path(cfg, memory)?;
            if path.exists() {
                let mut store = MemoryStore::load(&path)?;
                let n = store.len();
                store.clear();
                store.save(&path)?;
                println!("cleared {n} records");
            }
        }
        MemoryCmd::Export { memory, out } => {
            let path = memory_path(cfg, memory)?;
            let store = MemoryStore::load(&path)?;
            let records: Vec<_> = store
                .records()
                .map(|r| {
                    serde_json::json!({
                        "query": r.query_text,
                        "normalized_query": r.normalized_query,
                        "created_at": r.created_at,
                        "success_count": r.success_count,
                        "trace": r.trace,
                    })
                })
                .collect();
            let text = serde_json::to_string_pretty(&records)? + "\n";
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
        }
    }
    Ok(0)
}

fn cmd_corpus(cmd: CorpusCmd) -> Result<u8> {
    let CorpusCmd::Generate {
        catalog,
        per_app,
        none,
        negatives,
        seed,
        out,
    } = cmd;
    let apps = load_catalog(&catalog)?;
    let mut spec = CorpusSpec::new(per_app, none);
    spec.negatives_per_example = negatives;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = generate_training_corpus(&apps, spec, &mut TemplateQuerySource::default(), &mut rng)?;
    let f = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(f);
    write_corpus(&mut w, &examples)?;
    w.flush()?;
    let none_cases = examples.iter().filter(|e| e.is_none_case).count();
    println!(
        "wrote {} examples ({} positive, {} none) to {}",
        examples.len(),
        examples.len() - none_cases,
        none_cases,
        out.display()
    );
    Ok(0)
}

fn cmd_pack(cmd: PackCmd) -> Result<u8> {
    let PackCmd::Validate { pack, minimal } = cmd;
    let rules = if minimal { PackRules::minimal() } else { PackRules::desk() };
    let violations = validate_pack(&pack, &rules);
    if violations.is_empty() {
        println!("{}: ok", pack.display());
        return Ok(0);
    }
    for v in &violations {
        println!("{v}");
    }
    Ok(1)
}
