//! Train all four network variants (with and without the NDP front end and
//! the slope branch) on the same miniature dataset and render the ablation
//! table. Scores from runs this small are illustrative, not meaningful.
//!
//! ```sh
//! cargo run --example ablation_report
//! ```

use implantplan::config::PipelineConfig;
use implantplan::labelgen::MaskingConfig;
use implantplan::ndp::NdpConfig;
use implantplan::network::NetworkConfig;
use implantplan::report::{render_json, render_text, row_from_run_dir};
use implantplan::synthdata::generate_phantom;
use implantplan::trainer::{train, TrainConfig, TrainingSample};
use implantplan::volume::SlopePair;

fn main() -> implantplan::Result<()> {
    let data: Vec<TrainingSample> = (0..2)
        .map(|i| {
            let p = generate_phantom(
                30 + i,
                [32, 32, 32],
                3,
                1,
                SlopePair::new(0.08 * i as f64, -0.06).unwrap(),
            )
            .unwrap();
            TrainingSample {
                volume: p.volume,
                label: p.label,
                patient: format!("patient-{i}"),
            }
        })
        .collect();

    let root = std::env::temp_dir().join("implantplan-ablation-demo");
    let mut rows = Vec::new();
    for (i, &(use_ndp, use_spb)) in
        [(false, false), (true, false), (false, true), (true, true)].iter().enumerate()
    {
        let config = PipelineConfig {
            network: NetworkConfig {
                stem_channels: [2, 3, 4, 5],
                input_size: [16, 16, 16],
                use_ndp,
                use_spb,
                ndp: NdpConfig {
                    dilation_rates: [1, 2, 3],
                    branch_channels: 2,
                    node_grid: [4, 4, 4],
                    gcn_hidden: 4,
                },
                spb_hidden: 8,
                spb_dropout: 0.5,
            },
            train: TrainConfig {
                batch_size: 1,
                base_lr: 1e-3,
                warmup_steps: 2,
                total_steps: 30,
                crop_size: [16, 16, 16],
                seed: 3,
                fg_oversample: 1.0,
                eval_every: 30,
                masking: MaskingConfig {
                    max_offset: 0,
                    ..MaskingConfig::default()
                },
                ..TrainConfig::default()
            },
        };

        let run_dir = root.join(format!("run{i}"));
        let summary = train(&data, &config, &run_dir)?;
        let dice = summary.eval.map(|e| e.dice).unwrap_or(f64::NAN);
        println!(
            "trained ndp={use_ndp} spb={use_spb}: {} steps, eval dice {dice:.3}",
            summary.steps
        );
        rows.push(row_from_run_dir(&run_dir)?);
    }

    println!("\n{}", render_text(&rows)?);
    println!("{}", render_json(&rows)?);
    Ok(())
}
