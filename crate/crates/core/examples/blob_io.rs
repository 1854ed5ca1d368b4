//! Writing a compressed blob to disk, reading it back, and what happens
//! when a byte is damaged.
//!
//! Run with `cargo run --example blob_io`.

use stra::blob::CompressedBlob;
use stra::codec::{compress, decompress, CompressConfig, TemporalStack};
use stra::synth::filament_field;

fn main() -> stra::Result<()> {
    let stack = TemporalStack::single(filament_field([65, 65], 4, 1)?);
    let c = compress(&stack, &CompressConfig::uniform(1e-3))?;
    let path = std::env::temp_dir().join("stra-example.stra");
    c.blob.save(&path)?;
    let bytes = std::fs::read(&path)?;
    println!("wrote {} bytes to {}", bytes.len(), path.display());

    let loaded = CompressedBlob::load(&path)?;
    let back = decompress(&loaded)?;
    println!("read back {} slice(s) of {:?}, tau0 {:e}", back.len(), back.slices()[0].dims(), loaded.header.tau0);

    let mut damaged = bytes.clone();
    let mid = damaged.len() / 2;
    damaged[mid] ^= 0x01;
    match CompressedBlob::from_bytes(&damaged) {
        Ok(_) => println!("damaged blob accepted"),
        Err(e) => println!("damaged blob rejected: {e}"),
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
