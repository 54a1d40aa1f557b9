//! Train a small pose prior on procedural data and evaluate it on a
//! held-out split. Uses a reduced protocol so it finishes in about a
//! minute; the full desk-scale run lives in the acceptance suite.
//!
//! ```sh
//! cargo run --example train_poseprior
//! ```

use handlift::evaluation::evaluate_predictor;
use handlift::models::LiftingModel;
use handlift::skeleton::{generate_sample, GenOptions, HandModelConfig};
use handlift::training::{train_lifting, TrainConfig};

fn main() {
    let model_config = HandModelConfig::default();
    let records: Vec<_> = (0..800)
        .map(|i| generate_sample(&model_config, 21, i, &GenOptions::default()).unwrap())
        .collect();

    let mut config = TrainConfig::desk_poseprior(21);
    config.iterations = 300;
    config.schedule = handlift::training::Schedule::new(vec![(0, 1e-3)]).unwrap();
    config.holdout = 200;

    let untrained = LiftingModel::init("poseprior", config.width_scale, config.seed).unwrap();
    let baseline = evaluate_predictor(&untrained, &records[600..]).unwrap();

    println!("training pose prior: {} iterations, batch {}", config.iterations, config.batch_size);
    let outcome = train_lifting(&config, &records, None, None).unwrap();
    for row in outcome.log.iter().step_by(2) {
        println!(
            "  iter {:>4}  lr {:.0e}  loss_c {:>8.3}  loss_r {:>6.3}  total {:>8.3}",
            row.iteration, row.lr, row.loss_c, row.loss_r, row.total
        );
    }

    let trained = evaluate_predictor(&outcome.model, &records[600..]).unwrap();
    println!(
        "held-out EPE (normalized): untrained {:.3} -> trained {:.3}",
        baseline.epe_norm.mean, trained.epe_norm.mean
    );
    println!(
        "held-out EPE (millimeters): untrained {:.1} -> trained {:.1}",
        baseline.epe_mm.mean, trained.epe_mm.mean
    );
    println!("AUC (normalized thresholds): {:.3} -> {:.3}", baseline.auc_norm, trained.auc_norm);
}
