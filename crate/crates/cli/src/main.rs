use escnet_cli::config::SEED_ENV;

fn main() {
    let code = escnet_cli::run(std::env::args_os(), std::env::var(SEED_ENV).ok());
    std::process::exit(code);
}
