use clap::Parser;

fn main() {
    // Argument errors print usage and exit 2 (clap's default); runtime
    // failures print one message and exit 1.
    let cli = avit_cli::commands::Cli::parse();
    if let Err(e) = avit_cli::commands::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
