use std::io;

fn main() {
    // DGE_THREADS caps intra-op parallelism; 0 or unset lets rayon decide.
    if let Some(n) = std::env::var("DGE_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
        }
    }
    let code = dge_yolo::cli::run(std::env::args_os(), &mut io::stdout().lock(), &mut io::stderr().lock());
    std::process::exit(code);
}
