//! Computes the minimal stabilizing function k0(n) on the sphere grid for
//! one of the built-in densities and prints the table extremes.
//!
//! Usage: cargo run --release --example k0_table [beta]

use surfdiff::anisotropy::AnisotropyModel;
use surfdiff::stabilizer::{build_table, table_node_3d, K0Opts, StabilizerField};

fn main() -> Result<(), surfdiff::Error> {
    let beta: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("beta must be a number"))
        .unwrap_or(0.25);
    let model = AnisotropyModel::<3>::CubicPolynomial { beta };
    let opts = K0Opts::default();
    println!("estimating k0 on the 20x21 sphere grid for {:?}", model);
    let t0 = std::time::Instant::now();
    let table = build_table(&model, &opts)?;
    let StabilizerField::Table { ref values, .. } = table else {
        unreachable!()
    };
    let (mut max_v, mut argmax) = (f64::MIN, (0, 0));
    for i in 0..20 {
        for j in 0..21 {
            let v = values[i * 21 + j];
            if v > max_v {
                max_v = v;
                argmax = (i, j);
            }
        }
    }
    println!(
        "done in {:.1?}: sup k0 = {:.6} at n = {:?}",
        t0.elapsed(),
        max_v,
        table_node_3d(argmax.0, argmax.1).as_slice()
    );
    println!("nonzero nodes: {}", values.iter().filter(|v| **v > 0.0).count());
    table.save_table("k0.table")?;
    println!("wrote k0.table");
    Ok(())
}
