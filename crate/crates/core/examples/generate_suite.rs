//! Write the 14-substation desk grid and a seeded scenario suite to disk.
//!
//! `cargo run --release --example generate_suite -- OUT_DIR [N] [SEED]`

use std::path::PathBuf;

use gridzero::scenario::{desk14, generate_suite, write_suite, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "desk14".into()));
    let n: usize = args.next().map_or(Ok(20), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;

    let spec = desk14();
    let suite = generate_suite(&spec, &ScenarioConfig::default(), n, seed);
    let (grid, chronics) = write_suite(&out, &spec, &suite)?;
    println!("grid     {}", grid.display());
    println!("chronics {} ({} scenarios of {} steps)", chronics.display(), suite.len(), suite[0].horizon());
    Ok(())
}
