//! Generate a small synthetic dataset on disk: jaw phantoms with known
//! implant geometry, their landmark annotations, and a train/test manifest.
//!
//! ```sh
//! cargo run --example synth_dataset
//! ```

use implantplan::manifest::{save_manifest, ManifestEntry, Split};
use implantplan::synthdata::generate_phantom;
use implantplan::volume::{save_landmarks, SlopePair};

fn main() -> implantplan::Result<()> {
    let root = std::env::temp_dir().join("implantplan-synth-demo");
    std::fs::create_dir_all(&root)?;

    let tilts = [(0.15, -0.1), (0.0, 0.2), (-0.2, 0.05), (0.1, 0.1)];
    let mut entries = Vec::new();
    for (i, &(k1, k2)) in tilts.iter().enumerate() {
        let phantom = generate_phantom(
            100 + i as u64,
            [64, 64, 64],
            5,            // teeth in the arch
            1 + i % 3,    // which tooth is missing
            SlopePair::new(k1, k2)?,
        )?;

        let volume = root.join(format!("case{i}.vol"));
        let landmarks = root.join(format!("case{i}.landmarks"));
        phantom.volume.save(&volume)?;
        save_landmarks(&landmarks, &[phantom.landmarks])?;

        // Hold the last case out as the test split.
        let split = if i + 1 == tilts.len() { Split::Test } else { Split::Train };
        entries.push(ManifestEntry {
            volume,
            landmarks,
            split,
            patient: format!("patient-{i:02}"),
        });

        println!(
            "case{i}: {} implant voxels, tilt ({k1:+.2}, {k2:+.2}), vertex {:?}",
            phantom.label.popcount(),
            phantom.landmarks.vertex,
        );
    }

    let manifest = root.join("manifest.txt");
    save_manifest(&manifest, &entries)?;
    println!("\nwrote {} cases + manifest to {}", entries.len(), root.display());
    Ok(())
}
