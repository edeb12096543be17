use clap::Parser;

fn main() {
    let cli = sace::cli::Cli::parse();
    if let Err(e) = sace::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
