//! Measurement-error design in which least squares on pre-period outcomes is
//! attenuated towards the analytic limit (Q* + Σ)⁻¹ Q* w*, while moment
//! matching stays centred on w*.
//!
//!     cargo run --release --example implicit_endogeneity

use synthctl::estimators::{ls_bias_limit, BiasLimitInput};
use synthctl::simlab::{theorem1_experiment, Theorem1Spec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for sigma in [1.0, 0.5, 0.0] {
        let spec = Theorem1Spec {
            w_star: vec![0.5, 0.5],
            q_diag: vec![1.0, 1.0],
            sigma_diag: vec![sigma, sigma],
            t0: 20_000,
            replications: 5,
            ..Theorem1Spec::default()
        };
        let out = theorem1_experiment(&spec)?;
        let limit = ls_bias_limit(&BiasLimitInput::from_diagonals(&spec.q_diag, &spec.sigma_diag, &spec.w_star))?;
        println!(
            "sigma = {sigma:3.1}: OLS {:.3?} (limit {:.3?}), DMSCM {:.3?}",
            out.ols_mean, limit, out.gmm_mean
        );
    }
    Ok(())
}
