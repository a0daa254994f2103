//! Reference backend: seeded region growing with previous-frame memory.

use std::net::TcpListener;

use anyhow::{ensure, Context as _, Result};
use clap::Parser;
use slicecast::refbackends::{RegionGrow, RegionGrowConfig};
use slicecast::wireproto::server::{serve_stdio, serve_tcp};

#[derive(Parser)]
#[command(name = "slicecast-backend-regiongrow", version, about = "Region-growing backend for slicecast")]
struct Args {
    /// Largest intensity difference from the seed reference admitted
    #[arg(long, default_value_t = 8.0)]
    tolerance: f64,
    /// Serve TCP on this address instead of stdio
    #[arg(long)]
    listen: Option<String>,
}

fn main() -> Result<()> {
    let args = Args::parse();
    ensure!(
        args.tolerance.is_finite() && args.tolerance >= 0.0,
        "tolerance must be a non-negative number"
    );
    let mut backend = RegionGrow::new(RegionGrowConfig::with_tolerance(args.tolerance));
    match args.listen {
        Some(addr) => {
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            serve_tcp(&backend, listener)?;
        }
        None => serve_stdio(&mut backend)?,
    }
    Ok(())
}
