use clap::Parser;

fn main() {
    let cli = boltzlab_cli::Cli::parse();
    std::process::exit(boltzlab_cli::execute(&cli));
}
