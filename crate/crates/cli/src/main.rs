use clap::Parser;

fn main() {
    let cli = purify3d_cli::Cli::parse();
    std::process::exit(purify3d_cli::run(cli));
}
