use clap::Parser;

fn main() {
    let cli = dnt_cli::Cli::parse();
    if let Err(e) = dnt_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(dnt_cli::exit_code(&e));
    }
}
