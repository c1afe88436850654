//! Finite-difference check of every differentiable op against its backward pass.
//!
//! `cargo run --example gradcheck -- conv2d group_norm`

use dge_yolo::gradcheck;

fn main() -> dge_yolo::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let ops: Vec<&str> = if args.is_empty() {
        gradcheck::OPS.to_vec()
    } else {
        args.iter().map(String::as_str).collect()
    };
    let mut failed = 0;
    for r in gradcheck::run(&ops, 2, 7)? {
        println!("{:<20} {:>4} coords  max rel err {:.2e}", r.op, r.coords, r.max_rel_err);
        failed += usize::from(!r.passed());
    }
    println!("{failed} op(s) above tolerance {:e}", gradcheck::TOLERANCE);
    Ok(())
}
