use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    let code =
        finitekey_cli::run(std::env::args().collect(), &mut io::stdout().lock(), &mut io::stderr().lock());
    ExitCode::from(code as u8)
}
