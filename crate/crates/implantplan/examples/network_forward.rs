//! Build the dual-branch network in its four ablation variants and push a
//! random volume through each: parameter counts, output shapes, and the
//! slope head's two scalars.
//!
//! ```sh
//! cargo run --example network_forward
//! ```

use implantplan::network::{ImplantNet, NetworkConfig};
use implantplan::report::method_name;
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> implantplan::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Array4::<f32>::from_shape_fn((1, 32, 32, 32), |_| rng.random_range(0.0..1.0));

    for (use_ndp, use_spb) in [(false, false), (true, false), (false, true), (true, true)] {
        let net = ImplantNet::new(NetworkConfig {
            use_ndp,
            use_spb,
            ..NetworkConfig::default()
        })?;
        let params: Vec<f32> = net.init_params(42);
        let out = net.infer(&params, &x)?;

        let (lo, hi) = out
            .probs
            .iter()
            .fold((1.0f32, 0.0f32), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        let slopes = match out.slopes {
            Some([k1, k2]) => format!("slopes ({k1:+.4}, {k2:+.4})"),
            None => "no slope head".to_string(),
        };
        println!(
            "{:<12} {:>9} params | probs {:?} in [{lo:.3}, {hi:.3}] | {slopes}",
            method_name(use_ndp, use_spb),
            net.param_count(),
            out.probs.dim(),
        );
    }
    Ok(())
}
