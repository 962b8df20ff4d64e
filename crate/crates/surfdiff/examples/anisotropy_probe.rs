//! Prints gamma, the Cahn-Hoffman vector, the stability margin and the k0
//! estimate at a few directions for each built-in density family.

use nalgebra::Vector3;
use surfdiff::anisotropy::AnisotropyModel;
use surfdiff::stabilizer::{k0_estimate, K0Opts};

fn main() -> Result<(), surfdiff::Error> {
    let opts = K0Opts::default();
    let dirs = [
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(-1.0, 0.0, 0.0),
        Vector3::new(1.0, 1.0, 1.0).normalize(),
        Vector3::new(-0.6, 0.8, 0.0),
    ];
    let models = [
        AnisotropyModel::<3>::Isotropic,
        AnisotropyModel::CubicPolynomial { beta: 0.125 },
        AnisotropyModel::CubicPolynomial { beta: 0.25 },
        AnisotropyModel::SignRiemannian { a: 2.5, b: 1.5 },
    ];
    for model in &models {
        println!("{:?}", model);
        for n in &dirs {
            let gamma = model.gamma_unit(n);
            let xi = model.xi(n)?;
            let margin = model.stability_margin(n);
            let k0 = k0_estimate(model, n, &opts)?;
            println!(
                "  n = [{:6.3} {:6.3} {:6.3}]  gamma = {gamma:.4}  xi.n = {:.4}  margin = {margin:.4}  k0 = {k0:.4}",
                n[0], n[1], n[2], xi.dot(n),
            );
        }
    }
    Ok(())
}
