use clap::Parser;

fn main() {
    let cli = cbf_sim::cli::Cli::parse();
    std::process::exit(cbf_sim::cli::execute(cli));
}
