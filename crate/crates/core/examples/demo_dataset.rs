//! Writes the synthetic demo dataset: `cargo run -p sovtp-core --example demo_dataset -- OUT_DIR`

fn main() -> std::io::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "demo_data".into());
    let manifest = sovtp_core::synth::write_dataset(std::path::Path::new(&dir), &sovtp_core::synth::demo_videos())?;
    println!("{}", manifest.display());
    Ok(())
}
