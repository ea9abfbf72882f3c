//! Fits every estimator to the bundled toy panel and compares weights.
//!
//!     cargo run --example fit_basics
//!
//! The treated unit is a 0.5 / 0.3 / 0.2 mixture of controls c1, c2, c3 with a
//! constant effect of 3 from 2001 on.

use std::fs::File;

use synthctl::{fit, load_panel, Method, MomentConfig, PanelSchema, SolverOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/toy_panel.csv");
    let panel = load_panel(File::open(path)?, &PanelSchema::default(), "treated", 160)?;
    println!("controls: {:?}", &panel.units()[1..]);

    let cfg = MomentConfig::with_g(3);
    let opts = SolverOptions::default();
    println!("{:<12} {:>44} {:>9} {:>9}", "method", "weights", "rmse", "ATT");
    for method in Method::ALL {
        let f = fit(method, &panel, &cfg, &opts)?;
        let w: Vec<String> = f.weights.weights.iter().map(|w| format!("{w:6.3}")).collect();
        println!("{:<12} {:>44} {:9.3} {:9.3}", method.to_string(), w.join(" "), f.pre_fit_rmse, f.mean_att());
        if f.diagnostics.non_unique {
            println!("  (moment matrix is rank deficient; weights are one of several minimizers)");
        }
    }
    Ok(())
}
