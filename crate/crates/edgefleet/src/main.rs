use clap::Parser;

fn main() {
    let cli = edgefleet::cli::Cli::parse();
    std::process::exit(edgefleet::cli::run(cli));
}
