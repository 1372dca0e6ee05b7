use clap::Parser;

fn main() {
    let cli = match meshless_cli::Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 2 } else { 0 });
        }
    };
    std::process::exit(meshless_cli::run(cli));
}
