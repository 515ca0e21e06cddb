//! Report files and the timing sidecar.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;

pub const TIMING_LOG: &str = "timing.log";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Wall-clock phases of one command. Kept out of the reports so that those
/// stay byte-identical across reruns.
pub struct Timing {
    command: &'static str,
    started_ms: u128,
    start: Instant,
    last: Instant,
    phases: Vec<(String, f64)>,
}

impl Timing {
    pub fn start(command: &'static str) -> Self {
        let now = Instant::now();
        Timing {
            command,
            started_ms: unix_ms(),
            start: now,
            last: now,
            phases: Vec::new(),
        }
    }

    pub fn mark(&mut self, phase: impl Into<String>) {
        let now = Instant::now();
        self.phases.push((phase.into(), (now - self.last).as_secs_f64()));
        self.last = now;
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let mut text = String::new();
        writeln!(text, "command {}", self.command)?;
        writeln!(text, "started_unix_ms {}", self.started_ms)?;
        for (name, secs) in &self.phases {
            writeln!(text, "phase {name} {secs:.3}s")?;
        }
        writeln!(text, "total {:.3}s", self.start.elapsed().as_secs_f64())?;
        writeln!(text, "finished_unix_ms {}", unix_ms())?;
        let path = dir.join(TIMING_LOG);
        write_text(&path, &text)?;
        Ok(path)
    }
}
