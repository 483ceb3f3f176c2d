use clap::Parser;

fn main() {
    let cli = relfuse::cli::Cli::parse();
    if let Err(e) = relfuse::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
