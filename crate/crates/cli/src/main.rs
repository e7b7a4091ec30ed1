use clap::Parser;

fn main() {
    if let Err(e) = coexec_cli::run(coexec_cli::Cli::parse()) {
        eprintln!("coexec: {e}");
        std::process::exit(e.exit_code());
    }
}
