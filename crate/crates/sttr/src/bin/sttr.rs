use clap::Parser;

fn main() {
    let cli = sttr::cli::Cli::parse();
    if let Err(e) = sttr::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
