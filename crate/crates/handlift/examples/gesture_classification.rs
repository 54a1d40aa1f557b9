//! Train the gesture classifier on class-conditioned poses and report its
//! accuracy.
//!
//! ```sh
//! cargo run --example gesture_classification
//! ```

use handlift::skeleton::{generate_sample, GenOptions, HandModelConfig};
use handlift::training::{gesture_accuracy, train_gesturenet, Schedule, TrainConfig};

fn main() {
    let model_config = HandModelConfig::default();
    let opts = GenOptions { classes: Some(5) };
    let records: Vec<_> =
        (0..600).map(|i| generate_sample(&model_config, 77, i, &opts).unwrap()).collect();

    let config = TrainConfig {
        arch: "gesturenet".into(),
        batch_size: 8,
        iterations: 800,
        schedule: Schedule::new(vec![(0, 1e-3)]).unwrap(),
        seed: 77,
        width_scale: 1.0,
        scoremap_variance: handlift::heatmap::SCOREMAP_VARIANCE,
        noise: Default::default(),
        holdout: 150,
        log_every: 100,
        view_lr_scale: 1.0,
    };

    println!("training gesture classifier on 5 pose classes...");
    let outcome = train_gesturenet(&config, &records).unwrap();
    for row in &outcome.log {
        println!("  iter {:>4}  loss {:.4}", row.iteration, row.total);
    }

    let train_acc = gesture_accuracy(&outcome.net, &records[..450]).unwrap();
    let held_acc = gesture_accuracy(&outcome.net, &records[450..]).unwrap();
    println!("accuracy: train {train_acc:.3}, held-out {held_acc:.3} (chance 0.2)");
}
