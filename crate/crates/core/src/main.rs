fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MCPRED_LOG", "info")).format_timestamp(None).init();
    let mut stdout = std::io::stdout();
    let mut stderr = std::io::stderr();
    let code = mcpred::cli::dispatch(std::env::args().skip(1), &mut stdout, &mut stderr);
    std::process::exit(code);
}
