use clap::Parser;

fn main() {
    let cli = implantplan::cli::Cli::parse();
    if let Err(e) = implantplan::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(implantplan::cli::exit_code(&e));
    }
}
