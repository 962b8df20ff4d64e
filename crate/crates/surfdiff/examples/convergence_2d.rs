//! Small 2D refinement study: a 2x1 rectangle relaxing under the cubic
//! density, errors measured by the manifold distance against a finer
//! reference run. Observed orders land near 2.

use surfdiff::anisotropy::AnisotropyModel;
use surfdiff::harness::{convergence_study, ShapeSpec};
use surfdiff::scheme::NewtonOpts;
use surfdiff::stabilizer::{build_table, K0Opts};

fn main() -> Result<(), surfdiff::Error> {
    let model = AnisotropyModel::<2>::CubicPolynomial { beta: 0.125 };
    let kfield = build_table(&model, &K0Opts::default())?;
    let shape = ShapeSpec::Box2d { a: 2.0, b: 1.0 };
    let levels = [0.25, 0.125, 0.0625];
    let rows = convergence_study(
        &shape,
        &model,
        &kfield,
        &levels,
        0.015625,
        0.05,
        2048,
        usize::MAX,
        &NewtonOpts::default(),
    )?;
    println!("      h          tau          error      order");
    for row in rows {
        match row.order {
            Some(o) => println!(
                "{:10.5}  {:11.4e}  {:11.4e}  {:8.3}",
                row.h, row.tau, row.error, o
            ),
            None => println!("{:10.5}  {:11.4e}  {:11.4e}         -", row.h, row.tau, row.error),
        }
    }
    Ok(())
}
