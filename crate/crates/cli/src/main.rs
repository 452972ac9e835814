use clap::error::ErrorKind;
use clap::Parser;
use onto_decode_cli::{run, Cli, CliError};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ONTO_DECODE_LOG", "warn"))
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => fail(CliError::Usage(e.to_string().trim().to_string())),
    };
    if let Err(e) = run(cli) {
        fail(e);
    }
}

fn fail(e: CliError) -> ! {
    eprintln!("{}", e.to_json());
    std::process::exit(e.exit_code());
}
