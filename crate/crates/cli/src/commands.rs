use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

use sopflow::agents::{
    replay_flow_compliance, run_episode, Ablations, EpisodeEnv, EpisodeOutcome, Transcript,
};
use sopflow::config::Config;
use sopflow::eval::{render_manifest, run_benchmark, BenchEnv, Corpus, ManifestEntry};
use sopflow::kb::{parse_incident_file, parse_sop_file, KnowledgeBase};
use sopflow::llm::{build_backend, BackendKind, Script};
use sopflow::sandbox::{generate_corpus, EpisodeScenario, FaultType, ScenarioConfig};
use sopflow::tools::Registry;

use crate::{
    BackendArgs, BenchmarkArgs, Cli, Command, DiagnoseArgs, KbAction, SimulateArgs, TranscriptArgs,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_EXHAUSTED: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failed(_) => EXIT_FAILED,
        }
    }
}

fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

fn failed(msg: impl std::fmt::Display) -> CliError {
    CliError::Failed(msg.to_string())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| failed(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| failed(format!("cannot write {}: {e}", path.display())))
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn load_config(
    cli_config: Option<&Path>,
    kb: Option<PathBuf>,
    backend: &BackendArgs,
) -> Result<Config, CliError> {
    let mut cfg = match cli_config {
        Some(p) => {
            require_file(p, "config file")?;
            Config::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => Config::default(),
    };
    if kb.is_some() {
        cfg.kb.path = kb;
    }
    if let Some(url) = &backend.endpoint {
        cfg.backend.kind = BackendKind::Remote;
        cfg.backend.endpoint = Some(url.clone());
    }
    if let Some(m) = &backend.model {
        cfg.backend.model = m.clone();
    }
    if let Some(v) = &backend.api_key_env {
        cfg.backend.api_key_env = v.clone();
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

/// Turns off each named mechanism. `none` leaves everything on.
fn apply_ablations(ablations: &mut Ablations, spec: Option<&str>) -> Result<(), CliError> {
    let Some(spec) = spec else { return Ok(()) };
    for name in spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty() && *s != "none")
    {
        ablations.set(name, false).map_err(usage)?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<u8, CliError> {
    let cfg = load_config(cli.config.as_deref(), cli.kb, &cli.backend)?;
    match cli.command {
        Command::Kb { action } => cmd_kb(&cfg, action),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Diagnose(a) => cmd_diagnose(cfg, a),
        Command::Benchmark(a) => cmd_benchmark(cfg, a),
        Command::Transcript(a) => cmd_transcript(a),
    }
}

fn cmd_kb(cfg: &Config, action: KbAction) -> Result<u8, CliError> {
    let mut kb = cfg.open_kb().map_err(failed)?;
    match action {
        KbAction::List => {
            println!(
                "{} SOPs, {} incidents",
                kb.sops().len(),
                kb.incidents().len()
            );
            for s in kb.sops() {
                let parent = s
                    .parent
                    .as_deref()
                    .map(|p| format!(", parent {p}"))
                    .unwrap_or_default();
                println!("sop {} (level {}{parent}): {}", s.id, s.level, s.name);
            }
            for i in kb.incidents() {
                println!("incident {} [{}]: {}", i.id, i.fault_type, i.manifestation);
            }
            Ok(EXIT_OK)
        }
        KbAction::Add { file, incident } => {
            if cfg.kb.path.is_none() {
                return Err(usage(
                    "kb add needs a knowledge base directory (--kb DIR or [kb] path)",
                ));
            }
            require_file(&file, "input")?;
            let text = fs::read_to_string(&file)
                .map_err(|e| failed(format!("{}: {e}", file.display())))?;
            let id = if incident {
                let inc = parse_incident_file(&text)
                    .map_err(|e| failed(format!("{}: {e}", file.display())))?;
                kb.add_incident(inc).map_err(failed)?
            } else {
                let doc = parse_sop_file(&text)
                    .map_err(|e| failed(format!("{}: {e}", file.display())))?;
                kb.add_sop(doc).map_err(failed)?
            };
            println!("added {} {id}", if incident { "incident" } else { "SOP" });
            Ok(EXIT_OK)
        }
        KbAction::Match {
            query,
            k,
            threshold,
            observation,
        } => {
            let backend = build_backend(&cfg.backend, None).map_err(failed)?;
            let hits: Vec<(String, String, f64)> = if observation {
                kb.match_observation(&query, k, threshold, backend.as_ref())
                    .map_err(failed)?
                    .into_iter()
                    .map(|(i, s)| (i.id, i.manifestation, s))
                    .collect()
            } else {
                kb.match_sop(&query, k, threshold, backend.as_ref())
                    .map_err(failed)?
                    .into_iter()
                    .map(|(d, s)| (d.id, d.name, s))
                    .collect()
            };
            flush_cache(&kb);
            if hits.is_empty() {
                println!("no hits at threshold {threshold}");
            }
            for (id, text, score) in hits {
                println!("{score:.6}  {id}  {text}");
            }
            Ok(EXIT_OK)
        }
    }
}

fn flush_cache(kb: &KnowledgeBase) {
    if let Err(e) = kb.flush_cache() {
        eprintln!("sopflow: warning: {e}");
    }
}

fn parse_types(spec: &str) -> Result<Vec<FaultType>, CliError> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(FaultType::ALL.to_vec());
    }
    let types: Vec<FaultType> = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(usage))
        .collect::<Result<_, _>>()?;
    if types.is_empty() {
        return Err(usage("--types names no fault type"));
    }
    Ok(types)
}

fn cmd_simulate(a: SimulateArgs) -> Result<u8, CliError> {
    let cfg = ScenarioConfig {
        topology: a.topology,
        fault_types: parse_types(&a.types)?,
        ..ScenarioConfig::default()
    };
    let scenarios = generate_corpus(a.seed, a.count, &cfg).map_err(usage)?;
    let mut entries = Vec::new();
    for s in &scenarios {
        let name = format!("{}.json", s.id);
        write_file(&a.out.join(&name), &s.to_json())?;
        entries.push(ManifestEntry {
            file: name.into(),
            script: None,
        });
    }
    if a.manifest {
        write_file(&a.out.join("corpus.toml"), &render_manifest(&entries))?;
    }
    println!("wrote {} scenarios to {}", scenarios.len(), a.out.display());
    Ok(EXIT_OK)
}

fn load_scenario(path: &Path) -> Result<EpisodeScenario, CliError> {
    require_file(path, "scenario")?;
    EpisodeScenario::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn cmd_diagnose(mut cfg: Config, a: DiagnoseArgs) -> Result<u8, CliError> {
    let scenario = load_scenario(&a.scenario)?;
    let script = match &a.script {
        Some(p) => {
            require_file(p, "script")?;
            Some(Script::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    if let Some(n) = a.max_steps {
        cfg.agent.max_steps = n;
    }
    apply_ablations(&mut cfg.agent.ablations, a.ablate.as_deref())?;
    cfg.validate().map_err(usage)?;

    let kb = cfg.open_kb().map_err(failed)?;
    let llm = build_backend(&cfg.backend, script).map_err(failed)?;
    let registry = Registry::standard();
    let env = EpisodeEnv {
        registry: &registry,
        detector: &cfg.detector,
        kb: &kb,
        llm: llm.as_ref(),
        config: &cfg.agent,
    };
    let report = run_episode(&scenario, &env).map_err(failed)?;
    flush_cache(&kb);

    println!("scenario: {}", scenario.id);
    println!("outcome: {}", report.outcome.label());
    if let EpisodeOutcome::Aborted { reason } = &report.outcome {
        println!("reason: {reason}");
    }
    if let Some(d) = report.diagnosis() {
        println!("locations: {}", d.locations.join(", "));
        println!("types: {}", d.types.join(", "));
        println!("explanation: {}", d.explanation);
    }
    println!(
        "path ({}): {}",
        report.state.path.len(),
        report.state.path.join(" -> ")
    );

    if let Some(p) = &a.transcript {
        write_file(p, &report.transcript.to_jsonl())?;
    }
    if let Some(p) = &a.report {
        let body = json!({
            "scenario": scenario.id,
            "outcome": report.outcome,
            "diagnosis": report.diagnosis(),
            "ground_truth": scenario.ground_truth,
            "steps": report.state.step_count,
            "path": report.state.path,
        });
        write_file(
            p,
            &format!(
                "{}\n",
                serde_json::to_string_pretty(&body).expect("report serializes")
            ),
        )?;
    }
    Ok(match report.outcome {
        EpisodeOutcome::Completed => EXIT_OK,
        EpisodeOutcome::BudgetExhausted => EXIT_EXHAUSTED,
        EpisodeOutcome::Aborted { .. } => EXIT_FAILED,
    })
}

fn cmd_benchmark(cfg: Config, a: BenchmarkArgs) -> Result<u8, CliError> {
    let mut eval = cfg.eval_config();
    if let Some(c) = a.corpus {
        eval.corpus = Some(c);
    }
    let corpus_path = eval
        .corpus
        .clone()
        .ok_or_else(|| usage("no corpus given (--corpus FILE or [eval] corpus)"))?;
    require_file(&corpus_path, "corpus manifest")?;
    if let Some(w) = a.workers {
        eval.workers = w;
    }
    if let Some(n) = a.max_steps {
        eval.agent.max_steps = n;
    }
    if let Some(s) = a.sigma {
        eval.sigma = s;
    }
    apply_ablations(&mut eval.agent.ablations, a.ablate.as_deref())?;
    eval.validate().map_err(usage)?;

    let corpus = Corpus::load(&corpus_path).map_err(usage)?;
    let kb = cfg.open_kb().map_err(failed)?;
    let registry = Registry::standard();
    let env = BenchEnv {
        registry: &registry,
        detector: &cfg.detector,
        kb: &kb,
    };
    let run = run_benchmark(&corpus, &eval, env).map_err(failed)?;
    print!("{}", run.report.table());

    if let Some(p) = &a.out {
        write_file(p, &run.report.to_json())?;
    }
    if let Some(dir) = &a.transcripts {
        for (id, t) in &run.transcripts {
            if let Some(t) = t {
                write_file(&dir.join(format!("{id}.jsonl")), &t.to_jsonl())?;
            }
        }
    }
    Ok(if run.report.any_aborted() {
        EXIT_FAILED
    } else {
        EXIT_OK
    })
}

fn cmd_transcript(a: TranscriptArgs) -> Result<u8, CliError> {
    require_file(&a.file, "transcript")?;
    let text =
        fs::read_to_string(&a.file).map_err(|e| failed(format!("{}: {e}", a.file.display())))?;
    let t =
        Transcript::from_jsonl(&text).map_err(|e| usage(format!("{}: {e}", a.file.display())))?;
    print!("{}", t.render());
    if !a.check {
        return Ok(EXIT_OK);
    }
    let problems = replay_flow_compliance(&t).map_err(failed)?;
    if problems.is_empty() {
        println!("flow rules: ok");
        Ok(EXIT_OK)
    } else {
        for p in &problems {
            println!("violation: {p}");
        }
        Ok(EXIT_FAILED)
    }
}
