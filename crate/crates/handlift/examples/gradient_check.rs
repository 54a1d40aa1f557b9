//! Verify every layer kind's analytic gradients against central finite
//! differences in double precision.
//!
//! ```sh
//! cargo run --example gradient_check
//! ```

use handlift::cli::{cmd_gradcheck, GradcheckArgs};

fn main() {
    let result = cmd_gradcheck(GradcheckArgs {
        arch: "all".into(),
        seed: 2024,
        corrupt_gradient: false,
    });
    match result {
        Ok(()) => println!("all gradient checks passed"),
        Err(e) => {
            eprintln!("gradient checks failed: {}", e.message());
            std::process::exit(e.exit_code());
        }
    }
}
