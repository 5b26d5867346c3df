//! Regenerates `data/constellation_golden.csv`.

use std::path::Path;

fn main() -> ofdmsim::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/constellation_golden.csv");
    ofdmsim::ofdm::write_golden_csv(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
