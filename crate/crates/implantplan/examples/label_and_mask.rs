//! From three landmarks to a training pair: rasterize the cylindrical
//! implant label, then erase that region from the scan the way the
//! training pipeline does before the network ever sees it.
//!
//! ```sh
//! cargo run --example label_and_mask
//! ```

use implantplan::labelgen::{jitter_mask, mask_implant, rasterize_implant, MaskingConfig};
use implantplan::synthdata::generate_phantom;
use implantplan::volume::SlopePair;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> implantplan::Result<()> {
    let phantom = generate_phantom(7, [64, 64, 64], 5, 2, SlopePair::new(0.12, -0.08)?)?;
    let shape = phantom.volume.shape();

    // The label is a straight cylinder around the annotated axis. The
    // radius is a pipeline knob: wider labels tolerate more jitter.
    for radius in [2.0, 4.0, 6.0] {
        let label = rasterize_implant(&phantom.landmarks, shape, radius)?;
        println!("radius {radius}: {} label voxels", label.popcount());
    }

    let label = rasterize_implant(&phantom.landmarks, shape, 4.0)?;
    let config = MaskingConfig {
        fill_value: 0.0,
        max_offset: 2,
        ..MaskingConfig::default()
    };

    // Training jitters the erase region so the network cannot simply echo
    // the hole back; at evaluation the offset is zero.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let jittered = jitter_mask(&label, &config, &mut rng);
    let masked = mask_implant(&phantom.volume, &jittered, &config)?;

    let before: usize = phantom
        .volume
        .data()
        .iter()
        .filter(|&&v| v == implantplan::synthdata::IMPLANT)
        .count();
    let after: usize = masked
        .data()
        .iter()
        .filter(|&&v| v == implantplan::synthdata::IMPLANT)
        .count();
    println!(
        "implant voxels visible: {before} before masking, {after} after \
         (offset up to ±{} voxels)",
        config.max_offset
    );
    Ok(())
}
