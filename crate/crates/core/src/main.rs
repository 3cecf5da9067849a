use clap::Parser;

fn main() {
    std::process::exit(seqht::cli::run(seqht::cli::Cli::parse()));
}
