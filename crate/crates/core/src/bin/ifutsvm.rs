use clap::Parser;
use ifutsvm::cli::{run, Cli};

fn main() {
    match run(Cli::parse()) {
        Ok(path) => println!("{}", path.display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
