//! A small version of the drifting-mixture replication study: ATT error of
//! DMSCM and the Abadie weights across moment orders, written as plot data.
//!
//!     cargo run --release --example replication_study -- [replications] [out_dir]

use std::fs::File;
use std::path::PathBuf;

use synthctl::simlab::{run_replication_study, FigureAxis, FigureMetric, StudySpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let reps = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);
    let out = args.next().map(PathBuf::from).unwrap_or_else(std::env::temp_dir);

    let spec = StudySpec::figure2(reps, 20_240_601);
    let result = run_replication_study(&spec)?;
    for cell in &result.summaries {
        if let Some(s) = cell.att_error {
            println!(
                "J={:<3} G={:<3} {:<8} median |ATT error| {:7.3}  IQR [{:.3}, {:.3}]",
                cell.j, cell.g, cell.method.to_string(), s.median, s.q25, s.q75
            );
        }
    }
    std::fs::create_dir_all(&out)?;
    let path = out.join("att_error_by_g.csv");
    result.write_figure_csv(File::create(&path)?, FigureAxis::G, FigureMetric::AttError)?;
    println!("plot data written to {}", path.display());
    Ok(())
}
