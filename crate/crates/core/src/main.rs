use clap::Parser;

use celldet::cli::{run, Cli, Outcome};

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(outcome) => {
            if let Outcome::Warning(msg) = &outcome {
                eprintln!("warning: {msg}");
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
