#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const VICOT: &str = env!("CARGO_BIN_EXE_vicot");
pub const DOUBLE: &str = env!("CARGO_BIN_EXE_vicot-tool-double");
pub const QUERY: &str = "Identify the vessel in this port image and assess it.";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

/// The walkthrough fixtures copied to a scratch directory, so tool outputs
/// stay out of the source tree.
pub fn walkthrough() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(fixtures().join("walkthrough")).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
    }
    dir
}

/// A config that reaches the desk tools through spawned tool servers.
pub fn server_config(dir: &Path) -> PathBuf {
    let text = format!(
        r#"workdir = "."

[backend]
kind = "scripted"
script = "think.json"

[vision_backend]
kind = "scripted"
script = "vision.json"

[[servers]]
name = "mcp_vision_server"
command = "{DOUBLE}"
args = ["--desk", "vision"]

[[servers]]
name = "mcp_text_server"
command = "{DOUBLE}"
args = ["--desk", "text"]
"#
    );
    let path = dir.join("servers.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn vicot(args: &[&str], cwd: &Path) -> Output {
    Command::new(VICOT)
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

pub fn code(output: &Output) -> i32 {
    output.status.code().unwrap_or(-1)
}

pub fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

pub fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}
