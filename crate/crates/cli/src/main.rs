use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = match smd_cli::config::parse_from(std::env::args_os()) {
        Ok(cli) => cli,
        Err(e) => {
            if let Some(ce) = e.downcast_ref::<clap::Error>() {
                if !ce.use_stderr() {
                    // --help and --version
                    let _ = ce.print();
                    return ExitCode::SUCCESS;
                }
                let msg = ce.kind().to_string();
                let detail = ce.to_string();
                let first = detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ");
                eprintln!("error[usage]: {first}");
                return ExitCode::from(2);
            }
            eprintln!("error[{}]: {}", smd_cli::commands::error_class(&e), one_line(&e));
            return ExitCode::from(1);
        }
    };
    match smd_cli::commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", smd_cli::commands::error_class(&e), one_line(&e));
            ExitCode::from(1)
        }
    }
}

fn one_line(e: &anyhow::Error) -> String {
    format!("{e:#}").replace('\n', " ")
}
