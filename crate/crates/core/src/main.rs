use std::process::ExitCode;

fn main() -> ExitCode {
    let code = trust_dynamics::cli::cli_main(std::env::args_os(), &mut std::io::stdout().lock());
    ExitCode::from(code as u8)
}
