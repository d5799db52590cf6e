use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use confdb::store::Store;
use confdb_cli::{Session, Verb};

/// Versioned configuration database tool.
#[derive(Parser)]
#[command(name = "confdb", version)]
struct Cli {
    /// Store directory (created if missing)
    #[arg(long)]
    store: PathBuf,
    /// Pin the creation timestamp of new objects to this many seconds
    #[arg(long)]
    epoch: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a command script; `-` reads standard input
    Script { file: String },
    #[command(flatten)]
    Verb(Verb),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let store = match Store::open(&cli.store) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("confdb: {}: {e}", e.code());
            return ExitCode::FAILURE;
        }
    };
    store.set_epoch(cli.epoch);
    let mut session = Session::new(store);
    let stdout = io::stdout();
    let mut out = stdout.lock();

    let result = match cli.command {
        Command::Script { file } => match read_script(&file) {
            Ok(text) => {
                if file != "-" {
                    session.set_base_dir(Path::new(&file).parent().unwrap_or(Path::new("")));
                }
                session.execute_script(&text, &mut out).map_err(|e| e.to_string())
            }
            Err(e) => Err(format!("io-error: {file}: {e}")),
        },
        Command::Verb(verb) => session
            .execute(verb, &mut out)
            .and_then(|_| session.finish())
            .map_err(|e| e.to_string()),
    };
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("confdb: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn read_script(file: &str) -> io::Result<String> {
    if file == "-" {
        let mut text = String::new();
        io::stdin().read_to_string(&mut text)?;
        Ok(text)
    } else {
        std::fs::read_to_string(file)
    }
}
