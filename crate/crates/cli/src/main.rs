mod args;
mod protocol;
mod sim;

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use ote_core::Error;

use args::{Cli, Command};

/// A failed command and the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_TRANSPORT: u8 = 3;

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }

    pub fn verify(message: impl Into<String>) -> Self {
        Failure { code: EXIT_VERIFY, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::ZeroDelta => EXIT_USAGE,
            Error::HandshakeMismatch
            | Error::UnexpectedMsgType { .. }
            | Error::Malformed(_)
            | Error::SessionCollision(_) => EXIT_TRANSPORT,
            e if e.is_transport() => EXIT_TRANSPORT,
            _ => EXIT_VERIFY,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::verify(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::verify(e.to_string())
    }
}

pub type CmdResult = Result<(), Failure>;

/// Buffered writer to `path`, or stdout.
pub fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IRONMAN_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Gen(a) => protocol::gen(a),
        Command::Verify(a) => protocol::verify(a),
        Command::Dealer(a) => protocol::dealer(a),
        Command::Bench(a) => sim::bench(a),
        Command::CacheSim(a) => sim::cache_sim(a),
        Command::NmpSim(a) => sim::nmp_sim(a),
        Command::Sort(a) => sim::sort(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ote: {f}");
            ExitCode::from(f.code)
        }
    }
}
