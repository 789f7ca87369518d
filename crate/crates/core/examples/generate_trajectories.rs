//! Generate both artificial systems and write them as trajectory CSVs.
//!
//!     cargo run --example generate_trajectories [out_dir]

use std::path::PathBuf;

use semiadapt::datagen::{gen_ti, gen_tv, TiParams, TvParams};
use semiadapt::io::write_trajectory_file;

fn main() -> semiadapt::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("semiadapt-trajectories"));

    for class in 0..2 {
        let tv = gen_tv(&TvParams {
            trials: 5,
            ..TvParams::motion(class, 42)
        })?;
        let ti = gen_ti(&TiParams {
            trials: 5,
            ..TiParams::motion(class, 42)
        })?;
        for (system, trials) in [("tv", &tv), ("ti", &ti)] {
            let dir = out.join(format!("{system}_motion{class}"));
            std::fs::create_dir_all(&dir)?;
            for (i, traj) in trials.iter().enumerate() {
                write_trajectory_file(traj, dir.join(format!("trial_{i:03}.csv")))?;
            }
            let first = &trials[0];
            let last = first.positions[first.len() - 1];
            println!(
                "{system} motion {class}: {} trials x {} samples, trial 0 ends at ({:.3}, {:.3}, {:.3}){}",
                trials.len(),
                first.len(),
                last[0],
                last[1],
                last[2],
                if trials.iter().any(|t| t.truncated) { " [some truncated]" } else { "" }
            );
        }
    }
    println!("written under {}", out.display());
    Ok(())
}
