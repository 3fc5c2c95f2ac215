use clap::Parser;

fn main() {
    let cli = hfscat_cli::Cli::parse();
    if let Err(e) = hfscat_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
