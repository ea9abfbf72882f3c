//! Moving-block conformal inference: p-value of the no-effect null and a 90%
//! confidence interval for a constant effect, on the toy panel (true effect 3)
//! and on its no-effect twin.
//!
//!     cargo run --example conformal_interval

use std::fs::File;

use synthctl::conformal::linspace;
use synthctl::{
    confidence_interval, conformal_p_value, load_panel, Method, MomentConfig, NullSpec, PanelSchema, SolverOptions,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = MomentConfig::with_g(3);
    let opts = SolverOptions::default();
    for name in ["toy_panel.csv", "toy_noeffect.csv"] {
        let path = format!("{}/examples/data/{name}", env!("CARGO_MANIFEST_DIR"));
        let panel = load_panel(File::open(path)?, &PanelSchema::default(), "treated", 160)?;
        let p0 = conformal_p_value(&panel, &NullSpec::Constant(0.0), Method::Dmscm, &cfg, &opts)?;
        let grid = linspace(-6.0, 10.0, 81);
        let report = confidence_interval(&panel, Some(&grid), 0.1, Method::Dmscm, &cfg, &opts)?;
        let iv = &report.interval;
        println!("{name}: tau_hat = {:.3}, p(tau = 0) = {p0:.3}", report.tau_hat);
        match (iv.lower, iv.upper) {
            (Some(lo), Some(hi)) => println!("  90% interval [{lo:.2}, {hi:.2}]"),
            _ => println!("  no grid point accepted"),
        }
        if iv.touches_grid_edge() {
            println!("  interval reaches the grid boundary; widen the grid");
        }
    }
    Ok(())
}
