//! Recover implant axis slopes from a voxel label with the closed-form
//! least-squares fit, and show that it reproduces the tilt the phantom was
//! built with.
//!
//! ```sh
//! cargo run --example slope_fitting
//! ```

use implantplan::slope::{compute_slopes, slopes_from_label};
use implantplan::synthdata::generate_phantom;
use implantplan::volume::{SlopePair, VoxelCoord};

fn main() -> implantplan::Result<()> {
    for (k1, k2) in [(0.0, 0.0), (0.2, -0.15), (-0.3, 0.1)] {
        let tilt = SlopePair::new(k1, k2)?;
        let phantom = generate_phantom(21, [64, 64, 64], 5, 2, tilt)?;

        // Fit on every labeled voxel: x and y each regressed against z.
        let fitted = slopes_from_label(&phantom.label)?;
        println!(
            "built with ({k1:+.3}, {k2:+.3})  ->  fitted ({:+.3}, {:+.3})",
            fitted.k1, fitted.k2
        );
    }

    // The same fit works on a bare coordinate list, e.g. from the two
    // annotated endpoints plus the midpoint.
    let line: Vec<VoxelCoord> = (0..20)
        .map(|z| VoxelCoord::new(z, 10 + z / 4, 30 - z / 2))
        .collect();
    let s = compute_slopes(&line)?;
    println!("staircase line: k1 {:+.3} (x/z), k2 {:+.3} (y/z)", s.k1, s.k2);
    Ok(())
}
