//! Writes the toy panels shipped in `examples/data/`.
//!
//! Every panel has one treated unit, controls with time-invariant Gaussian
//! outcome distributions and 160 pre-treatment years.
//!
//! - `toy_panel.csv` / `toy_noeffect.csv`: three controls; the treated unit
//!   draws every period from their 0.5 / 0.3 / 0.2 mixture (effect 3 and 0).
//! - `toy_shifted.csv`: two controls that differ mainly in spread; the treated
//!   unit follows the demeaned 0.6 / 0.4 mixture with its level 5 above the
//!   mixture mean and no effect.
//!
//!     cargo run --example generate_panel -- [out_dir]

use std::fs::File;
use std::path::{Path, PathBuf};

use synthctl::panel::{PanelData, PanelSchema, PeriodLabel};
use synthctl::simlab::{stationary_mixture_panel, StationaryMixture};

fn three_controls(tau: f64, seed: u64) -> StationaryMixture {
    StationaryMixture {
        means: vec![-2.0, 0.5, 3.0],
        variances: vec![1.0, 4.0, 2.0],
        w_star: vec![0.5, 0.3, 0.2],
        t0: 160,
        t1: 20,
        tau,
        shift: 0.0,
        demeaned: false,
        seed,
    }
}

fn write(dir: &Path, name: &str, spec: &StationaryMixture) -> Result<(), Box<dyn std::error::Error>> {
    let raw = stationary_mixture_panel(spec)?;
    let units = std::iter::once("treated".to_string())
        .chain((1..=spec.means.len()).map(|j| format!("c{j}")))
        .collect();
    let years = (1841..).take(raw.n_periods()).map(PeriodLabel::Int).collect();
    let panel = PanelData::new(units, "treated", raw.outcomes().clone(), None, spec.t0, years)?;
    let path = dir.join(name);
    panel.write_csv(File::create(&path)?, &PanelSchema::default())?;
    println!("wrote {} (tau = {}, shift = {})", path.display(), spec.tau, spec.shift);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples").join("data")
    });
    std::fs::create_dir_all(&dir)?;
    write(&dir, "toy_panel.csv", &three_controls(3.0, 11))?;
    let shifted = StationaryMixture {
        means: vec![-0.5, 0.5],
        variances: vec![1.0, 9.0],
        w_star: vec![0.6, 0.4],
        shift: 5.0,
        demeaned: true,
        ..three_controls(0.0, 12)
    };
    write(&dir, "toy_shifted.csv", &shifted)?;
    write(&dir, "toy_noeffect.csv", &three_controls(0.0, 13))?;
    Ok(())
}
