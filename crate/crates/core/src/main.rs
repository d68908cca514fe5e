use std::io;
use std::process::ExitCode;

use clap::Parser;
use syncflow::cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = execute(cli, &mut io::stdout().lock(), &mut io::stderr().lock());
    ExitCode::from(code as u8)
}
