use clap::Parser;

fn main() {
    let cli = nlad_cli::app::Cli::parse();
    std::process::exit(nlad_cli::app::execute(&cli));
}
