//! Overfit a miniature network on a single phantom — the "does the whole
//! training loop move" smoke run. Prints the loss trace and the final
//! training-set scores.
//!
//! ```sh
//! cargo run --example train_overfit
//! ```

use implantplan::config::PipelineConfig;
use implantplan::labelgen::MaskingConfig;
use implantplan::ndp::NdpConfig;
use implantplan::network::NetworkConfig;
use implantplan::synthdata::generate_phantom;
use implantplan::trainer::{TrainConfig, Trainer, TrainingSample};
use implantplan::volume::SlopePair;

fn main() -> implantplan::Result<()> {
    let phantom = generate_phantom(5, [32, 32, 32], 3, 1, SlopePair::new(0.1, -0.05)?)?;
    let data = vec![TrainingSample {
        volume: phantom.volume,
        label: phantom.label,
        patient: "demo".into(),
    }];

    let config = PipelineConfig {
        network: NetworkConfig {
            stem_channels: [2, 3, 4, 5],
            input_size: [16, 16, 16],
            use_ndp: true,
            use_spb: true,
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
            warmup_steps: 5,
            total_steps: 240,
            crop_size: [16, 16, 16],
            seed: 9,
            fg_oversample: 1.0,
            masking: MaskingConfig {
                max_offset: 0,
                ..MaskingConfig::default()
            },
            ..TrainConfig::default()
        },
    };

    let mut trainer = Trainer::new(config)?;
    for step in 1..=240 {
        let log = trainer.train_step(&data)?;
        if step % 30 == 0 {
            println!(
                "step {step:>3}  lr {:.2e}  dice {:.3}  ce {:.3}  slope {:.3}  total {:.3}",
                log.lr, log.dice, log.ce, log.slope, log.total
            );
        }
    }

    let eval = trainer.evaluate(&data)?;
    println!(
        "\nfinal: dice {:.3}, iou {:.3}, slope MAE {:.3}",
        eval.dice,
        eval.iou,
        eval.slope_mae.unwrap_or(f64::NAN)
    );
    Ok(())
}
