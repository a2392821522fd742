//! Stdio tool server serving the built-in desk tools, with failure modes for
//! exercising the transport client.

use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Result;
use clap::{Parser, ValueEnum};
use serde_json::{json, Map, Value};
use vicot::desk_tools::{TextDesk, VisionDesk};
use vicot::transport::wire::{Frame, Kind, WireTool};
use vicot::transport::{serve, ToolService};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Serve every request.
    Normal,
    /// Read requests and never answer.
    Silent,
    /// Answer the handshake, then exit on the first tool call.
    Crash,
    /// Answer the handshake with an unsupported protocol version.
    BadVersion,
    /// Serve an empty tool list.
    Empty,
    /// Sleep before answering each tool call.
    Slow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Desk {
    Vision,
    Text,
}

#[derive(Debug, Parser)]
#[command(
    name = "vicot-tool-double",
    about = "Stdio tool server for tests and local runs"
)]
struct Args {
    #[arg(long, value_enum, default_value = "normal")]
    mode: Mode,
    #[arg(long, value_enum, default_value = "vision")]
    desk: Desk,
    /// Directory relative image paths resolve against.
    #[arg(long)]
    root: Option<PathBuf>,
    /// Delay per call in slow mode.
    #[arg(long, default_value_t = 2000)]
    delay_ms: u64,
    /// Line written to stderr at startup.
    #[arg(long)]
    banner: Option<String>,
}

struct Wrapped {
    inner: Arc<dyn ToolService>,
    mode: Mode,
    delay: Duration,
}

impl ToolService for Wrapped {
    fn tools(&self) -> Vec<WireTool> {
        match self.mode {
            Mode::Empty => Vec::new(),
            _ => self.inner.tools(),
        }
    }

    fn call(&self, tool_name: &str, arguments: &Map<String, Value>) -> Value {
        match self.mode {
            Mode::Crash => std::process::exit(3),
            Mode::Slow => std::thread::sleep(self.delay),
            _ => {}
        }
        self.inner.call(tool_name, arguments)
    }
}

fn main() -> Result<()> {
    let args = Args::parse();
    if let Some(banner) = &args.banner {
        eprintln!("{banner}");
    }
    let stdin = io::stdin().lock();
    let mut stdout = io::stdout().lock();

    match args.mode {
        Mode::Silent => {
            for line in stdin.lines() {
                line?;
            }
            return Ok(());
        }
        Mode::BadVersion => {
            for line in stdin.lines() {
                let Ok(frame) = Frame::parse(&line?) else {
                    continue;
                };
                let reply = Frame::new(
                    frame.id,
                    Kind::Hello,
                    json!({"protocol_version": 99, "tools": []}),
                );
                stdout.write_all(reply.to_line().as_bytes())?;
                stdout.flush()?;
            }
            return Ok(());
        }
        _ => {}
    }

    let inner: Arc<dyn ToolService> = match args.desk {
        Desk::Vision => Arc::new(VisionDesk {
            root: args.root.clone(),
        }),
        Desk::Text => Arc::new(TextDesk::default()),
    };
    let service = Wrapped {
        inner,
        mode: args.mode,
        delay: Duration::from_millis(args.delay_ms),
    };
    serve(&service, stdin, stdout)?;
    Ok(())
}
