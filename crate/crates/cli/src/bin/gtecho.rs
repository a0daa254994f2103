//! Reference backend that answers every prompt with the ground-truth mask
//! it hits.

use std::net::TcpListener;
use std::path::PathBuf;

use anyhow::{Context as _, Result};
use clap::Parser;
use slicecast::refbackends::GtEcho;
use slicecast::volio::{load_labels, parse_label_names, SliceAxis};
use slicecast::wireproto::server::{serve_stdio, serve_tcp};

#[derive(Parser)]
#[command(name = "slicecast-backend-gtecho", version, about = "Ground-truth echo backend for slicecast")]
struct Args {
    /// Ground-truth label volume
    gt: PathBuf,
    #[arg(long, default_value = "1=femur,2=tibia")]
    names: String,
    #[arg(long)]
    slice_axis: Option<SliceAxis>,
    /// Serve TCP on this address instead of stdio
    #[arg(long)]
    listen: Option<String>,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let names = parse_label_names(&args.names).map_err(anyhow::Error::msg)?;
    let gt = load_labels(&args.gt, &names, args.slice_axis)
        .with_context(|| format!("loading {}", args.gt.display()))?;
    let mut backend = GtEcho::new(gt);
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
