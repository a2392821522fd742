use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use vicot::agent::{run, run_bench, BenchConfig, Outcome};
use vicot::codec::OutputKind;
use vicot::config::{BackendConfig, Config};
use vicot::desk_tools::sidecar_path;
use vicot::gateway::{Gateway, Templates};
use vicot::tiler::{filter_tiles, image_dims, tile, SidecarDetector, DEFAULT_TILE_SIZE};
use vicot::trace::synth::demo_set;
use vicot::trace::{
    load_dataset, replay_record, save_dataset, serialize_stack, stats, validate, RunMeta,
};

const EXIT_OK: u8 = 0;
const EXIT_INVALID: u8 = 1;
const EXIT_ERROR: u8 = 2;
const EXIT_ROUND_LIMIT: u8 = 3;
const EXIT_ABORTED: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "vicot", version, about = "Stack-based visual reasoning agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the agent on one image and query.
    Run(RunArgs),
    /// Compare windowed and full-history context on a synthetic scenario.
    Bench(BenchArgs),
    /// Check a trajectory dataset.
    Validate(PathArgs),
    /// Re-run every record of a dataset from its own transcript.
    Replay(ReplayArgs),
    /// Step counts and tool usage of a dataset.
    Stats(PathArgs),
    /// Generate a demo dataset from seeded scripted runs.
    Synth(SynthArgs),
    /// Show the tile grid of an image and the tiles a detector keeps.
    Tile(TileArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Image path, relative to the config's workdir.
    #[arg(long)]
    image: String,
    #[arg(long)]
    query: String,
    /// Scripted think script replacing the configured think backend.
    #[arg(long)]
    backend: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_rounds: Option<usize>,
    /// Write the finished run as a one-record dataset.
    #[arg(long)]
    out_trace: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// JSON or TOML file with bench settings; flags override it.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    tools: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    frame_tokens: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct PathArgs {
    path: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    path: PathBuf,
    /// Output dataset; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    min_calls: usize,
    #[arg(long, default_value_t = 6)]
    max_calls: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TileArgs {
    image: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TILE_SIZE)]
    tile_size: u32,
    /// Box annotations; defaults to the image's `.boxes.txt` sidecar.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Detection prompt used to keep tiles.
    #[arg(long)]
    instruction: Option<String>,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Tile(args) => cmd_tile(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<u8> {
    let mut config = Config::load(&args.config)?;
    if let Some(script) = args.backend {
        config.backend = BackendConfig::Scripted {
            script,
            ms_per_1k_prompt_tokens: None,
        };
    }
    if let Some(k) = args.k {
        config.run.k = k;
    }
    if let Some(max_rounds) = args.max_rounds {
        config.run.max_rounds = max_rounds;
    }
    config.run.validate()?;
    let image_file = config.workdir.join(&args.image);
    if !image_file.is_file() {
        bail!("image not found: {}", image_file.display());
    }

    let templates = config.templates()?;
    let think = config.think_backend()?;
    let vision = config.vision_backend()?;
    let host = config.tool_host()?;
    let mut gateway = Gateway::new(think.as_ref(), vision.as_ref(), &templates);
    gateway.image_root = Some(&config.workdir);
    let report = run(
        &args.image,
        &args.query,
        host.as_ref(),
        &gateway,
        &config.run,
    )?;

    if let Some(path) = &args.out_trace {
        match report.outcome {
            Outcome::Completed => {
                let meta = RunMeta::from_report(report.scenario.clone(), &report, &templates);
                let record = serialize_stack(&report.stack, &meta)?;
                save_dataset(path, std::slice::from_ref(&record))?;
            }
            _ => log::warn!(
                "run did not complete; no trace written to {}",
                path.display()
            ),
        }
    }

    if args.json {
        let summary = json!({
            "outcome": report.outcome.as_str(),
            "rounds": report.rounds,
            "scenario": report.scenario,
            "final_output": report.final_output,
            "totals": report.totals,
            "per_round": report.per_round,
        });
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        match &report.final_output {
            Some(output) => match (&output.kind, &output.sections) {
                (OutputKind::Soap, Some(sections)) => println!("{}", sections.render()),
                _ => println!("{}", output.answer),
            },
            None => eprintln!(
                "run ended with {} after {} rounds",
                report.outcome.as_str(),
                report.rounds
            ),
        }
    }
    Ok(match report.outcome {
        Outcome::Completed => EXIT_OK,
        Outcome::RoundLimit => EXIT_ROUND_LIMIT,
        Outcome::ErrorAborted => EXIT_ABORTED,
    })
}

fn load_bench_config(path: &Path) -> Result<BenchConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(parsed)
}

fn cmd_bench(args: BenchArgs) -> Result<u8> {
    let mut config = match &args.scenario {
        Some(path) => load_bench_config(path)?,
        None => BenchConfig::default(),
    };
    if let Some(v) = args.rounds {
        config.rounds = v;
    }
    if let Some(v) = args.tools {
        config.tools = v;
    }
    if let Some(v) = args.k {
        config.k = v;
    }
    if let Some(v) = args.frame_tokens {
        config.frame_tokens = v;
    }
    let report = run_bench(&config, &Templates::default())?;
    if args.json {
        let out = json!({
            "config": config,
            "table": report.table,
            "oracle_windowed": report.oracle_windowed,
            "oracle_full": report.oracle_full,
            "oracle_reduction_pct": report.oracle_reduction_pct,
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!("{}", report.table);
        println!(
            "oracle context reduction {:.2}%, measured {:.2}%",
            report.oracle_reduction_pct, report.table.reductions.context_pct
        );
    }
    Ok(EXIT_OK)
}

fn cmd_validate(args: PathArgs) -> Result<u8> {
    let records = load_dataset(&args.path)?;
    let reports: Vec<_> = records.iter().map(validate).collect();
    let invalid = reports.iter().filter(|r| !r.is_valid()).count();
    if args.json {
        println!("{}", serde_json::to_string_pretty(&reports)?);
    } else {
        for report in reports.iter().filter(|r| !r.is_valid()) {
            for v in &report.violations {
                let at = v
                    .index
                    .map_or_else(String::new, |i| format!(" message {i}"));
                println!("{}{at}: {}: {}", report.id, v.rule, v.message);
            }
        }
        println!("{} records, {} invalid", records.len(), invalid);
    }
    Ok(if invalid == 0 { EXIT_OK } else { EXIT_INVALID })
}

fn cmd_replay(args: ReplayArgs) -> Result<u8> {
    let records = load_dataset(&args.path)?;
    let templates = Templates::default();
    let mut out = Vec::with_capacity(records.len());
    let mut status = EXIT_OK;
    for record in &records {
        match replay_record(record, &templates) {
            Ok(again) => {
                if &again != record {
                    eprintln!("{}: replay differs from the record", record.id);
                    status = EXIT_INVALID;
                }
                out.push(again);
            }
            Err(err) => {
                eprintln!("{}: {err}", record.id);
                status = EXIT_INVALID;
            }
        }
    }
    match &args.out {
        Some(path) => save_dataset(path, &out)?,
        None => println!("{}", serde_json::to_string_pretty(&out)?),
    }
    eprintln!("replayed {} of {} records", out.len(), records.len());
    Ok(status)
}

fn cmd_stats(args: PathArgs) -> Result<u8> {
    let records = load_dataset(&args.path)?;
    let s = stats(&records);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        println!("records {}  images {}", s.n_records, s.n_images);
        println!(
            "mean steps {:.2}  estimated tokens {}",
            s.mean_steps, s.total_tokens_est
        );
        for (steps, count) in &s.steps_per_record {
            println!("  {steps} steps: {count}");
        }
        for (tool, count) in &s.tool_call_counts {
            println!("  {tool}: {count}");
        }
    }
    Ok(EXIT_OK)
}

fn cmd_synth(args: SynthArgs) -> Result<u8> {
    if args.min_calls > args.max_calls {
        bail!("--min-calls exceeds --max-calls");
    }
    let records = demo_set(
        args.seed,
        args.count,
        args.min_calls..=args.max_calls,
        &Templates::default(),
    )?;
    save_dataset(&args.out, &records)?;
    eprintln!("wrote {} records to {}", records.len(), args.out.display());
    Ok(EXIT_OK)
}

fn cmd_tile(args: TileArgs) -> Result<u8> {
    let dims = image_dims(&args.image)?;
    let grid = tile(dims, args.tile_size)?;
    let sidecar = args.sidecar.clone().or_else(|| sidecar_path(&args.image));
    let kept = match (&args.instruction, &sidecar) {
        (Some(instruction), Some(path)) => Some(filter_tiles(
            &grid,
            &SidecarDetector::load(path)?,
            instruction,
        )),
        (Some(_), None) => bail!("no sidecar annotations for {}", args.image.display()),
        (None, _) => None,
    };

    if args.json {
        let out = json!({
            "width": grid.width,
            "height": grid.height,
            "tile_size": grid.tile_size,
            "rows": grid.rows,
            "cols": grid.cols,
            "tiles": grid.tiles.iter().map(|t| json!({"tag": t.tag(), "bbox": t.bbox})).collect::<Vec<_>>(),
            "kept": kept.as_ref().map(|k| k.iter().map(|f| json!({
                "tag": f.tile.tag(),
                "detections": f.detections.iter().map(|d| d.to_line()).collect::<Vec<_>>(),
            })).collect::<Vec<_>>()),
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
        return Ok(EXIT_OK);
    }

    println!(
        "{}x{} image, tile size {}: {}×{} grid",
        grid.width, grid.height, grid.tile_size, grid.rows, grid.cols
    );
    for t in &grid.tiles {
        let [x1, y1, x2, y2] = t.bbox;
        let mark = match &kept {
            Some(k) if k.iter().any(|f| f.tile == *t) => "  kept",
            _ => "",
        };
        println!("  {} {x1} {y1} {x2} {y2}{mark}", t.tag());
    }
    if let Some(kept) = kept {
        println!("kept {} of {} tiles", kept.len(), grid.tiles.len());
        for f in &kept {
            for d in &f.detections {
                println!("  {}: {}", f.tile.tag(), d.to_line());
            }
        }
    }
    Ok(EXIT_OK)
}
