use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match driver_model_cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if let Some(e) = err.downcast_ref::<clap::Error>() {
                // help and version land here too
                let _ = e.print();
            } else {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(driver_model_cli::exit_code(&err) as u8)
        }
    }
}
