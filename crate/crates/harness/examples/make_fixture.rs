//! Regenerates the bundled synthetic fixture:
//! `cargo run -p coe-harness --example make_fixture`.

use coe_harness::fixture::{bundled_dir, write_synthetic, FIXTURE_DOCS, FIXTURE_RECORDS, FIXTURE_SEED};

fn main() -> coe_harness::Result<()> {
    let dir = bundled_dir();
    write_synthetic(&dir, FIXTURE_RECORDS, FIXTURE_DOCS, FIXTURE_SEED)?;
    println!("wrote {}", dir.display());
    Ok(())
}
