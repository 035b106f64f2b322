use clap::Parser;

fn main() {
    let cli = bmckit::cli::Cli::parse();
    if let Err(e) = bmckit::cli::run(&cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
