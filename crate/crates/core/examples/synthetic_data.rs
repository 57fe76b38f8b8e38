//! Writes a synthetic portfolio and model-consistent index quotes.
//!
//! ```text
//! cargo run --example synthetic_data -- data/ 0.22
//! ```

use std::fs::File;
use std::path::PathBuf;

use credit_spde::market_data::{write_index, write_portfolio, MarketEnv};
use credit_spde::model::ModelParams;
use credit_spde::synthetic;

fn main() -> credit_spde::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let sigma: f64 = args
        .next()
        .map(|s| s.parse().expect("sigma"))
        .unwrap_or(0.22);
    std::fs::create_dir_all(&dir)?;
    let params = ModelParams::new(0.042, sigma, 0.0, 0.4)?;
    let portfolio = synthetic::pre_crunch_portfolio();
    let index = synthetic::index_quotes(
        &portfolio,
        &params,
        &MarketEnv::new(0.042),
        &[5.0, 7.0, 10.0],
        35.0,
        4,
    )?;
    write_portfolio(&portfolio, File::create(dir.join("portfolio.csv"))?)?;
    write_index(&index, File::create(dir.join("index.csv"))?)?;
    println!(
        "wrote {} names and {} index quotes to {}",
        portfolio.len(),
        index.len(),
        dir.display()
    );
    Ok(())
}
