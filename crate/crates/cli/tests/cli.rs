mod common;

use common::*;
use serde_json::{json, Value};

fn run_walkthrough(config: &str, dir: &std::path::Path, extra: &[&str]) -> std::process::Output {
    let mut args = vec![
        "run", "--config", config, "--image", "test.png", "--query", QUERY,
    ];
    args.extend_from_slice(extra);
    vicot(&args, dir)
}

#[test]
fn run_prints_the_soap_report_and_writes_a_valid_trace() {
    let dir = walkthrough();
    let out = run_walkthrough(
        "walkthrough.toml",
        dir.path(),
        &["--out-trace", "trace.json"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    for tag in ["<S>", "</S>", "<O>", "</O>", "<A>", "</A>", "<P>", "</P>"] {
        assert!(text.contains(tag), "{tag} missing from {text}");
    }
    assert!(text.contains("CV-41"));

    let check = vicot(&["validate", "trace.json"], dir.path());
    assert_eq!(code(&check), 0, "{}", stdout(&check));

    let replay = vicot(&["replay", "trace.json", "--out", "again.json"], dir.path());
    assert_eq!(code(&replay), 0, "{}", stderr(&replay));
    let a = std::fs::read(dir.path().join("trace.json")).unwrap();
    let b = std::fs::read(dir.path().join("again.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn run_through_spawned_tool_servers_matches_in_process() {
    let dir = walkthrough();
    let config = server_config(dir.path());
    let spawned = run_walkthrough(config.to_str().unwrap(), dir.path(), &["--json"]);
    assert_eq!(code(&spawned), 0, "{}", stderr(&spawned));
    let other = walkthrough();
    let local = run_walkthrough("walkthrough.toml", other.path(), &["--json"]);
    let a: Value = serde_json::from_str(&stdout(&spawned)).unwrap();
    let b: Value = serde_json::from_str(&stdout(&local)).unwrap();
    assert_eq!(a["outcome"], "completed");
    assert_eq!(a["rounds"], 5);
    assert_eq!(a["final_output"], b["final_output"]);
    assert_eq!(a["totals"]["tool_calls"], b["totals"]["tool_calls"]);
}

#[test]
fn run_exit_codes() {
    let dir = walkthrough();
    let missing = vicot(
        &[
            "run",
            "--config",
            "walkthrough.toml",
            "--image",
            "nope.png",
            "--query",
            "q",
        ],
        dir.path(),
    );
    assert_eq!(code(&missing), 2);
    assert!(stderr(&missing).contains("nope.png"));

    let no_config = vicot(
        &[
            "run",
            "--config",
            "absent.toml",
            "--image",
            "test.png",
            "--query",
            "q",
        ],
        dir.path(),
    );
    assert_eq!(code(&no_config), 2);

    let limited = run_walkthrough("walkthrough.toml", dir.path(), &["--max-rounds", "1"]);
    assert_eq!(code(&limited), 3);

    let broken = "<use_mcp_tool>\n<server_name>mcp_vision_server</server_name>\n</use_mcp_tool>";
    let script = json!({
        "mode": "sequential",
        "responses": [
            {"role": "think", "text": broken},
            {"role": "think", "text": broken},
            {"role": "think", "text": broken},
        ],
    });
    std::fs::write(dir.path().join("broken.json"), script.to_string()).unwrap();
    let aborted = run_walkthrough(
        "walkthrough.toml",
        dir.path(),
        &["--backend", "broken.json"],
    );
    assert_eq!(code(&aborted), 4, "{}", stderr(&aborted));
}

#[test]
fn spawn_failure_exits_two() {
    let dir = walkthrough();
    let text = "[backend]\nkind = \"scripted\"\nscript = \"think.json\"\n\n[[servers]]\nname = \"mcp_vision_server\"\ncommand = \"/nonexistent/server\"\n";
    std::fs::write(dir.path().join("bad.toml"), text).unwrap();
    let out = run_walkthrough("bad.toml", dir.path(), &[]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("SpawnFailed"), "{}", stderr(&out));
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let demo = fixtures().join("demo_record.json");
    assert_eq!(
        code(&vicot(&["validate", demo.to_str().unwrap()], dir.path())),
        0
    );

    let mut records: Value =
        serde_json::from_str(&std::fs::read_to_string(&demo).unwrap()).unwrap();
    records[0]["messages"].as_array_mut().unwrap().pop();
    std::fs::write(dir.path().join("cut.json"), records.to_string()).unwrap();
    let cut = vicot(&["validate", "cut.json"], dir.path());
    assert_eq!(code(&cut), 1);
    assert!(stdout(&cut).contains("1 invalid"));

    let json_out = vicot(&["validate", "cut.json", "--json"], dir.path());
    let reports: Value = serde_json::from_str(&stdout(&json_out)).unwrap();
    assert!(!reports[0]["violations"].as_array().unwrap().is_empty());

    assert_eq!(code(&vicot(&["validate", "absent.json"], dir.path())), 2);
}

#[test]
fn replay_of_the_demo_fixture_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let demo = fixtures().join("demo_record.json");
    let out = vicot(&["replay", demo.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let replayed: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let original: Value = serde_json::from_str(&std::fs::read_to_string(&demo).unwrap()).unwrap();
    assert_eq!(replayed, original);
}

#[test]
fn synth_then_stats() {
    let dir = tempfile::tempdir().unwrap();
    let out = vicot(
        &[
            "synth",
            "--count",
            "12",
            "--seed",
            "3",
            "--out",
            "demo.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(code(&vicot(&["validate", "demo.json"], dir.path())), 0);
    let stats = vicot(&["stats", "demo.json", "--json"], dir.path());
    let s: Value = serde_json::from_str(&stdout(&stats)).unwrap();
    assert_eq!(s["n_records"], 12);
    let mean = s["mean_steps"].as_f64().unwrap();
    assert!((5.0..=7.0).contains(&mean), "{mean}");
    assert_eq!(
        code(&vicot(
            &["replay", "demo.json", "--out", "again.json"],
            dir.path()
        )),
        0
    );
}

#[test]
fn tile_prints_the_grid_and_kept_tiles() {
    let dir = walkthrough();
    let out = vicot(
        &[
            "tile",
            "test.png",
            "--tile-size",
            "512",
            "--instruction",
            "building on port",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("2×3 grid"), "{text}");
    assert!(text.contains("kept 4 of 6 tiles"), "{text}");

    let json_out = vicot(&["tile", "test.png", "--json"], dir.path());
    let v: Value = serde_json::from_str(&stdout(&json_out)).unwrap();
    assert_eq!((v["rows"].as_u64(), v["cols"].as_u64()), (Some(2), Some(3)));
    assert!(v["kept"].is_null());

    assert_eq!(code(&vicot(&["tile", "absent.png"], dir.path())), 2);
}

#[test]
fn bench_json_reports_oracle_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let out = vicot(
        &[
            "bench", "--rounds", "10", "--tools", "10", "--k", "3", "--json",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let measured = v["table"]["reductions"]["context_pct"].as_f64().unwrap();
    let oracle = v["oracle_reduction_pct"].as_f64().unwrap();
    assert!((measured - oracle).abs() <= 1.0);
    assert!(measured >= 60.0);

    std::fs::write(dir.path().join("scenario.toml"), "rounds = 4\ntools = 2\n").unwrap();
    let file = vicot(
        &["bench", "--scenario", "scenario.toml", "--json"],
        dir.path(),
    );
    let v: Value = serde_json::from_str(&stdout(&file)).unwrap();
    assert_eq!(v["config"]["rounds"], 4);
    assert_eq!(v["table"]["rows"].as_array().unwrap().len(), 4);

    assert_eq!(code(&vicot(&["bench", "--rounds", "0"], dir.path())), 2);
    assert_eq!(
        code(&vicot(&["bench", "--scenario", "absent.json"], dir.path())),
        2
    );
}
