use clap::Parser;

fn main() {
    std::process::exit(cpa_gain_cli::run(cpa_gain_cli::Cli::parse()));
}
