//! Writes every reference architecture as a `.cnn` model document.
//!
//! Usage: `cargo run --example export_zoo -- <out-dir>`

use std::path::PathBuf;

use latproph::graph::to_document;
use latproph::zoo;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&out)?;
    for fam in zoo::families() {
        for v in fam.variants {
            let g = fam.build(v)?;
            let path = out.join(format!("{}.cnn", g.name));
            std::fs::write(&path, to_document(&g))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}
