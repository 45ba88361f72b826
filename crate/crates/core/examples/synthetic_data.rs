//! Generates a synthetic dataset, writes it to disk and reads it back.
//!
//! cargo run --release --example synthetic_data -- [alpha] [beta] [seed]

use subpop::dataspace::{generate_synthetic, read_dataset, write_dataset, Label, SyntheticParams};

fn main() -> subpop::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let p = SyntheticParams::new(*args.first().unwrap_or(&1.5), *args.get(1).unwrap_or(&0.2), *args.get(2).unwrap_or(&0.0) as u64);
    let ds = generate_synthetic(&p)?;
    let pos = ds.train_y.iter().filter(|l| **l == Label::Pos).count();
    println!("{}: {} train / {} test points, {} positive in train", ds.tag(), ds.n_train(), ds.n_test(), pos);

    let dir = tempfile_dir(&ds.tag());
    write_dataset(&ds, &dir)?;
    assert_eq!(read_dataset(&dir)?, ds);
    println!("round trip through {} is exact", dir.display());
    Ok(())
}

fn tempfile_dir(tag: &str) -> std::path::PathBuf {
    std::env::temp_dir().join(format!("subpop-example-{tag}"))
}
