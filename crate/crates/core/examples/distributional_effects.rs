//! Bootstrap counterfactual distribution of the treated unit, quantile
//! treatment effects, and an MMD test of the observed post-period outcomes
//! against the counterfactual draws.
//!
//!     cargo run --example distributional_effects

use std::fs::File;

use synthctl::{
    bootstrap_counterfactual, fit_dmscm, load_panel, mmd_test, quantiles, MomentConfig, PanelSchema, SolverOptions,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/toy_panel.csv");
    let panel = load_panel(File::open(path)?, &PanelSchema::default(), "treated", 160)?;
    let f = fit_dmscm(&panel, &MomentConfig::with_g(3), &SolverOptions::default())?;

    let sample = bootstrap_counterfactual(&panel, &f.weights, 5000, 7)?;
    let observed: Vec<f64> = (panel.t0()..panel.n_periods()).map(|t| panel.y(0, t)).collect();
    let probs = [0.1, 0.25, 0.5, 0.75, 0.9];
    let q_cf = quantiles(&sample.draws, &probs)?;
    let q_obs = quantiles(&observed, &probs)?;
    println!("{:>5} {:>14} {:>10} {:>8}", "prob", "counterfactual", "observed", "QTE");
    for ((p, c), o) in probs.iter().zip(&q_cf).zip(&q_obs) {
        println!("{p:5.2} {c:14.3} {o:10.3} {:8.3}", o - c);
    }

    let report = mmd_test(&observed, &sample.draws[..500], 499, 7)?;
    println!("MMD^2 = {:.4}, permutation p = {:.3}, bandwidth {:.3}", report.mmd2, report.p_value, report.bandwidth);
    Ok(())
}
