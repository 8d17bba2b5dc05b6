use std::io;

fn main() {
    let stdin = io::stdin();
    let code = brexit_core::cli::run_cli(
        std::env::args_os(),
        &mut stdin.lock(),
        &mut io::stdout(),
        &mut io::stderr(),
    );
    std::process::exit(code);
}
