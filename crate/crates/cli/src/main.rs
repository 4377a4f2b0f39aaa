use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match iida_cli::run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            if e.usage {
                eprintln!("{}", iida_cli::USAGE);
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
