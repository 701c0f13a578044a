use clap::Parser;

fn main() {
    let cli = discourse_server::cli::Cli::parse();
    std::process::exit(discourse_server::cli::run(cli));
}
