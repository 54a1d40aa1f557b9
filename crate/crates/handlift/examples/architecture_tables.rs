//! Print the layer tables of the four network architectures with their
//! propagated output shapes, at full width and at the desk scale.
//!
//! ```sh
//! cargo run --example architecture_tables
//! ```

use handlift::models::{
    build_gesturenet, build_handsegnet, build_posenet, build_poseprior_stream, BuiltArch,
};

fn print_arch(arch: &BuiltArch) {
    println!("\n{} (input {:?})", arch.spec.name, arch.spec.input_shape);
    for (label, shape) in arch.row_shapes().unwrap() {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        println!("  row {label:>2}: {}", dims.join("x"));
    }
    println!(
        "  parameters: {}",
        arch.spec.num_parameters().unwrap()
    );
}

fn main() {
    print_arch(&build_handsegnet(1.0));
    print_arch(&build_posenet(1.0));
    print_arch(&build_poseprior_stream(3, 1.0));
    print_arch(&build_poseprior_stream(63, 1.0));
    print_arch(&build_gesturenet());

    println!("\n-- desk scale (width 0.25) --");
    print_arch(&build_poseprior_stream(63, 0.25));
}
