//! Whole-volume prediction through overlapping windows. Any closure over a
//! window can stand in for the model, which makes the mechanics easy to
//! see; a trained network slots in through `NetModel` the same way.
//!
//! ```sh
//! cargo run --example sliding_window
//! ```

use implantplan::inference::{
    sliding_window_infer, tile_plan, InferenceOptions, NetModel,
};
use implantplan::network::{ImplantNet, NetworkConfig};
use implantplan::synthdata::generate_phantom;
use implantplan::volume::SlopePair;
use ndarray::Array4;

fn main() -> implantplan::Result<()> {
    let phantom = generate_phantom(3, [48, 48, 48], 4, 1, SlopePair::new(0.1, 0.0)?)?;
    let window = [32usize; 3];
    let opts = InferenceOptions::default(); // 25% overlap, uniform blending

    let plan = tile_plan(phantom.volume.shape(), window, opts.overlap)?;
    println!("{} windows over {:?}:", plan.len(), phantom.volume.shape());
    for origin in &plan {
        println!("  origin {origin:?}");
    }

    // A toy model: pass the window intensities through as probabilities
    // and report a fixed axis estimate. Overlap blending averages the
    // contributions, so the reassembled volume equals the input.
    let passthrough = |w: &Array4<f32>| -> implantplan::Result<(Array4<f32>, Option<[f32; 2]>)> {
        Ok((w.clone(), Some([0.1, 0.0])))
    };
    let result = sliding_window_infer(&phantom.volume, &passthrough, window, &opts)?;
    println!(
        "\npassthrough: blended volume {:?}, slopes {:?}",
        result.probs.dim(),
        result.slopes
    );

    // The real thing: an (untrained) network wrapped as a window model.
    let net = ImplantNet::new(NetworkConfig::default())?;
    let params: Vec<f32> = net.init_params(11);
    let model = NetModel {
        net: &net,
        params: &params,
    };
    let result = sliding_window_infer(&phantom.volume, &model, window, &opts)?;
    let mean: f32 = result.probs.iter().sum::<f32>() / result.probs.len() as f32;
    println!(
        "untrained net: mean prob {mean:.3}, slopes {:?} (random weights)",
        result.slopes
    );
    Ok(())
}
