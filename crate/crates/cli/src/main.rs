use clap::Parser;

fn main() {
    let cli = shapecov_cli::Cli::parse();
    if let Err(e) = shapecov_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.kind.exit_code());
    }
}
