fn main() {
    if let Some(n) = std::env::var("MIDA_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let code = mida_cli::run_cli(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock());
    std::process::exit(code);
}
