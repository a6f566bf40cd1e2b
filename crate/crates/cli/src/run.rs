use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::CliResult;

pub const LOG_FILE: &str = "dirpose.log";

/// Derives the seed of the random stream `name` from the master seed.
///
/// FNV-1a of the name, xor the master seed, finished with the splitmix64 mixer.
pub fn stream_seed(master: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = (h ^ master).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Shared state of one invocation.
pub struct Run {
    pub command: &'static str,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
}

#[derive(Serialize)]
struct RunMetadata<'a, S: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    threads: Option<usize>,
    settings: &'a S,
}

impl Run {
    pub fn new(command: &'static str, out: PathBuf, seed: u64, threads: Option<usize>) -> Self {
        Run {
            command,
            out,
            seed,
            threads,
        }
    }

    pub fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.out.join(name)
    }

    pub fn stream(&self, name: &str) -> u64 {
        stream_seed(self.seed, name)
    }

    /// Appends a timestamped line to the log; the only place wall-clock time is recorded.
    pub fn log(&self, msg: &str) -> CliResult<()> {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        let mut f = OpenOptions::new().create(true).append(true).open(self.path(LOG_FILE))?;
        writeln!(f, "{}.{:03} {} {}", now.as_secs(), now.subsec_millis(), self.command, msg)?;
        Ok(())
    }

    /// Creates the output directory and writes `run_<command>.json` with the version,
    /// seed and resolved settings. Commands call this once their inputs are validated.
    pub fn write_metadata<S: Serialize>(&self, settings: &S) -> CliResult<()> {
        fs::create_dir_all(&self.out)?;
        let meta = RunMetadata {
            tool: "dirpose",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed: self.seed,
            threads: self.threads,
            settings,
        };
        write_json(&self.path(format!("run_{}.json", self.command)), &meta)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
