//! Generates meshes, writes them in the OFF / POLYLINE2D formats and loads
//! them back with full validation.

use surfdiff::harness::{make_circle, make_cuboid};
use surfdiff::mesh::SimplexSurface;

fn main() -> Result<(), surfdiff::Error> {
    let cube = make_cuboid(2.0, 1.0, 1.0, 0.4)?;
    cube.save_off("cuboid.off")?;
    let back = SimplexSurface::<3>::load_off("cuboid.off")?;
    println!(
        "cuboid.off: {} vertices, {} triangles, V = {:.12}",
        back.num_vertices(),
        back.num_simplices(),
        back.enclosed_volume()?
    );
    let circle = make_circle(1.0, 0.05)?;
    circle.save_poly2d("circle.poly2d")?;
    let back = SimplexSurface::<2>::load_poly2d("circle.poly2d")?;
    println!(
        "circle.poly2d: {} segments, area = {:.12} (pi = {:.12})",
        back.num_simplices(),
        back.enclosed_volume()?,
        std::f64::consts::PI
    );
    Ok(())
}
