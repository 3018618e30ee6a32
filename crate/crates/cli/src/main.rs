use clap::Parser;

fn main() {
    let cli = actdet_cli::Cli::parse();
    if let Err(e) = actdet_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(actdet_cli::exit_code(&e));
    }
}
