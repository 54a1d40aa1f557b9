//! Canonical two-stream model versus direct coordinate regression under an
//! identical small protocol.
//!
//! ```sh
//! cargo run --example ablation
//! ```

use handlift::evaluation::ablation_report;
use handlift::skeleton::{generate_sample, GenOptions, HandModelConfig};
use handlift::training::{train_lifting, TrainConfig};

fn main() {
    let model_config = HandModelConfig::default();
    let records: Vec<_> = (0..800)
        .map(|i| generate_sample(&model_config, 33, i, &GenOptions::default()).unwrap())
        .collect();

    let mut config = TrainConfig::desk_poseprior(33);
    config.iterations = 300;
    config.schedule = handlift::training::Schedule::new(vec![(0, 1e-3)]).unwrap();
    config.holdout = 200;

    println!("training canonical two-stream model...");
    let canonical = train_lifting(&config, &records, None, None).unwrap();

    let mut direct_config = config.clone();
    direct_config.arch = "poseprior-direct".into();
    println!("training direct regressor under the identical protocol...");
    let direct = train_lifting(&direct_config, &records, None, None).unwrap();

    let report =
        ablation_report(&records[600..], &canonical.model, &direct.model).unwrap();
    print!("{}", report.to_csv());
    let ratio = report.rows[0].epe_norm.mean / report.rows[1].epe_norm.mean;
    println!("canonical / direct EPE ratio: {ratio:.3}");
}
