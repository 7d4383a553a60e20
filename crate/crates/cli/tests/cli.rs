use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn golden() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/golden")
}

fn sopflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sopflow"))
        .args(args)
        .env_remove("SOPFLOW_API_KEY")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const NEVER_SPEAKS: &str = r#"
[[entry]]
match = "ROLE: main.thought"
response = "keep looking"

[[entry]]
match = "ROLE: action.propose"
response = "1. collect_trace() | look again"

[[entry]]
match = "ROLE: main.select"
response = "1"

[[entry]]
match = "ROLE: code.generate"
response = "```\nlet t = collect_trace()\n```"

[[entry]]
match = "ROLE: ob.classify"
response = "type: CpuStress confidence: 0.5"

[[entry]]
match = "ROLE: judge.verdict"
response = "NOT FOUND: keep going"
"#;

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&sopflow(&["frobnicate"])), 2);
    assert_eq!(code(&sopflow(&["benchmark", "--no-such-flag"])), 2);
    assert_eq!(
        code(&sopflow(&[
            "benchmark",
            "--corpus",
            "/nonexistent/corpus.toml"
        ])),
        2
    );
    assert_eq!(
        code(&sopflow(&["diagnose", "--scenario", "/nonexistent.json"])),
        2
    );
    assert_eq!(
        code(&sopflow(&["--config", "/nonexistent.toml", "kb", "list"])),
        2
    );
    assert_eq!(code(&sopflow(&["--version"])), 0);
}

#[test]
fn diagnose_exit_codes_follow_the_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = golden().join("scenarios/000-cpu-stress.json");
    let script = golden().join("scripts/default/000-cpu-stress.toml");
    let transcript = dir.path().join("t.jsonl");
    let report = dir.path().join("r.json");

    let out = sopflow(&[
        "diagnose",
        "--scenario",
        p(&scenario),
        "--script",
        p(&script),
        "--transcript",
        p(&transcript),
        "--report",
        p(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("locations: shipping-0"));
    assert!(stdout(&out).contains("types: CpuStress"));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["diagnosis"]["locations"][0], "shipping-0");

    let check = sopflow(&["transcript", p(&transcript), "--check"]);
    assert_eq!(code(&check), 0);
    assert!(stdout(&check).contains("flow rules: ok"));

    // no script: the scripted backend has nothing to say
    assert_eq!(code(&sopflow(&["diagnose", "--scenario", p(&scenario)])), 1);

    let looping = dir.path().join("loop.toml");
    fs::write(&looping, NEVER_SPEAKS).unwrap();
    let out = sopflow(&[
        "diagnose",
        "--scenario",
        p(&scenario),
        "--script",
        p(&looping),
        "--max-steps",
        "4",
    ]);
    assert_eq!(code(&out), 3, "{}", stdout(&out));
    assert!(stdout(&out).contains("outcome: budget_exhausted"));
    assert!(stdout(&out).contains("path (4)"));

    let bad = sopflow(&[
        "diagnose",
        "--scenario",
        p(&scenario),
        "--ablate",
        "warp_drive",
    ]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn tampered_transcript_fails_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("t.jsonl");
    let out = sopflow(&[
        "diagnose",
        "--scenario",
        p(&golden().join("scenarios/001-memory-stress.json")),
        "--script",
        p(&golden().join("scripts/default/001-memory-stress.toml")),
        "--transcript",
        p(&transcript),
    ]);
    assert_eq!(code(&out), 0);
    let lines: Vec<String> = fs::read_to_string(&transcript)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            if v["record"] == "step" && v["index"] == 1 {
                v["action_set"]["candidates"]
                    .as_array_mut()
                    .unwrap()
                    .retain(|c| c["provenance"] != "flow_rule");
            }
            v.to_string()
        })
        .collect();
    fs::write(&transcript, lines.join("\n")).unwrap();
    let check = sopflow(&["transcript", p(&transcript), "--check"]);
    assert_eq!(code(&check), 1);
    assert!(stdout(&check).contains("violation:"));
}

#[test]
fn knowledge_base_commands() {
    let dir = tempfile::tempdir().unwrap();
    let kb = dir.path().join("kb");
    let list = sopflow(&["--kb", p(&kb), "kb", "list"]);
    assert_eq!(code(&list), 0);
    assert!(stdout(&list).starts_with("0 SOPs, 0 incidents"));

    let sop = dir.path().join("sop.toml");
    fs::write(
        &sop,
        "id = \"disk-full\"\nname = \"disk usage above threshold\"\nlevel = 0\nsteps = [\"check disk usage\", \"check logs for write errors\"]\n",
    )
    .unwrap();
    let add = sopflow(&["--kb", p(&kb), "kb", "add", "--file", p(&sop)]);
    assert_eq!(code(&add), 0, "{}", String::from_utf8_lossy(&add.stderr));

    let list = sopflow(&["--kb", p(&kb), "kb", "list"]);
    assert!(stdout(&list).starts_with("1 SOPs, 0 incidents"));

    let hit = sopflow(&[
        "--kb",
        p(&kb),
        "kb",
        "match",
        "--query",
        "disk usage above threshold",
    ]);
    assert_eq!(code(&hit), 0);
    assert!(
        stdout(&hit).starts_with("1.000000  disk-full"),
        "{}",
        stdout(&hit)
    );

    // duplicate id, invalid document, missing file, no store
    assert_eq!(
        code(&sopflow(&["--kb", p(&kb), "kb", "add", "--file", p(&sop)])),
        1
    );
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "id = \"x\"\nname = \"\"\nlevel = 0\nsteps = []\n").unwrap();
    assert_eq!(
        code(&sopflow(&["--kb", p(&kb), "kb", "add", "--file", p(&bad)])),
        1
    );
    assert_eq!(
        code(&sopflow(&[
            "--kb",
            p(&kb),
            "kb",
            "add",
            "--file",
            "/nonexistent.toml"
        ])),
        2
    );
    assert_eq!(code(&sopflow(&["kb", "add", "--file", p(&sop)])), 2);

    let inc = dir.path().join("inc.toml");
    fs::write(
        &inc,
        "id = \"inc-1\"\nfault_type = \"CpuStress\"\nmanifestation = \"cpu usage spike with throttling\"\n",
    )
    .unwrap();
    assert_eq!(
        code(&sopflow(&[
            "--kb",
            p(&kb),
            "kb",
            "add",
            "--incident",
            "--file",
            p(&inc)
        ])),
        0
    );
    let obs = sopflow(&[
        "--kb",
        p(&kb),
        "kb",
        "match",
        "--observation",
        "--query",
        "cpu usage spike with throttling",
    ]);
    assert!(
        stdout(&obs).starts_with("1.000000  inc-1"),
        "{}",
        stdout(&obs)
    );
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let r = sopflow(&["simulate", "--seed", "11", "--count", "5", "--out", p(out)]);
        assert_eq!(code(&r), 0);
    }
    let files = listing(&a);
    assert_eq!(files.len(), 5);
    assert!(files.iter().all(|(n, _)| n.ends_with(".json")));
    assert_eq!(files, listing(&b));

    let c = dir.path().join("c");
    let r = sopflow(&[
        "simulate",
        "--seed",
        "12",
        "--count",
        "3",
        "--types",
        "CpuStress",
        "--out",
        p(&c),
        "--manifest",
    ]);
    assert_eq!(code(&r), 0);
    let files = listing(&c);
    assert_eq!(files.len(), 4);
    for (name, bytes) in files.iter().filter(|(n, _)| n.ends_with(".json")) {
        let v: Value = serde_json::from_slice(bytes).unwrap();
        assert_eq!(v["ground_truth"]["types"][0], "CpuStress", "{name}");
    }
    assert_ne!(listing(&a), listing(&c));

    // scripts are absent, so every episode aborts
    let bench = sopflow(&["benchmark", "--corpus", p(&c.join("corpus.toml"))]);
    assert_eq!(code(&bench), 1);
    assert!(stdout(&bench).contains("aborted=3"));

    assert_eq!(
        code(&sopflow(&["simulate", "--types", "Meteor", "--out", p(&c)])),
        2
    );
}

#[test]
fn benchmark_reports_match_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let transcripts = dir.path().join("tx");
    let out = sopflow(&[
        "benchmark",
        "--corpus",
        p(&golden().join("corpus.toml")),
        "--out",
        p(&report),
        "--transcripts",
        p(&transcripts),
        "--workers",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let a = &r["aggregates"];
    assert_eq!(a["la"], 1.0);
    assert_eq!(a["ta"], 1.0);
    assert_eq!(a["completed"], 9);
    let summary = text.lines().last().unwrap();
    assert!(summary.starts_with("LA="), "{summary}");
    assert!(summary.contains("completed=9"));
    assert!(text.contains("sop_flow=on"));
    assert_eq!(fs::read_dir(&transcripts).unwrap().count(), 9);

    let ablated = sopflow(&[
        "benchmark",
        "--corpus",
        p(&golden().join("corpus-sop_flow.toml")),
        "--ablate",
        "sop_flow",
    ]);
    assert_eq!(code(&ablated), 0);
    assert!(stdout(&ablated).contains("sop_flow=off"));

    assert_eq!(
        code(&sopflow(&[
            "benchmark",
            "--corpus",
            p(&golden().join("corpus.toml")),
            "--sigma",
            "-1"
        ])),
        2
    );
}

#[test]
fn config_file_supplies_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "[eval]\ncorpus = \"{}\"\nsigma = 0.2\nworkers = 1\n",
            p(&golden().join("corpus.toml"))
        ),
    )
    .unwrap();
    let report = dir.path().join("r.json");
    let out = sopflow(&["--config", p(&cfg), "benchmark", "--out", p(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["config"]["sigma"], 0.2);

    fs::write(&cfg, "[eval]\nbogus_key = 1\n").unwrap();
    assert_eq!(code(&sopflow(&["--config", p(&cfg), "benchmark"])), 2);
    // no corpus anywhere
    assert_eq!(code(&sopflow(&["benchmark"])), 2);
}
