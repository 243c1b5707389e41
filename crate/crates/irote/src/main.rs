use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let key = std::env::var(irote::live::API_KEY_VAR).ok();
    irote::cli::run(std::env::args_os(), key.as_deref())
}
