//! Checks every gradient of the full model against central finite
//! differences in 64-bit precision, then shows that a corrupted backward
//! rule is caught.

use dylex::model::FusionMode;
use dylex::tensor::Fault;
use dylex::train::gradcheck::{full_model_gradcheck, GradcheckOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for fusion in [FusionMode::Soft, FusionMode::Hard] {
        let r = full_model_gradcheck(&GradcheckOptions { fusion, ..Default::default() })?;
        println!(
            "{fusion}: max relative error {:.3e} over {} coordinates (worst: {})",
            r.max_rel_error,
            r.coordinates_checked,
            r.worst_param.as_deref().unwrap_or("-")
        );
    }
    let r = full_model_gradcheck(&GradcheckOptions {
        fault: Some(Fault::GeluBackward),
        ..Default::default()
    })?;
    println!("corrupted GELU backward: max relative error {:.3e}", r.max_rel_error);
    Ok(())
}
