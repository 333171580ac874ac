use std::process::ExitCode;

fn main() -> ExitCode {
    let matches = taxtrade_cli::cli().get_matches();
    match taxtrade_cli::run(&matches, |k| std::env::var(k).ok()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
