use std::path::PathBuf;

use curriculum_server::{init_tracing, serve, ServerConfig};
use tokio::net::TcpListener;

/// `curriculum-server [ADDR] [CACHE_DIR]`; defaults to 127.0.0.1:8080 and in-memory caches.
#[tokio::main]
async fn main() -> std::io::Result<()> {
    init_tracing();
    let mut args = std::env::args().skip(1);
    let addr = args.next().unwrap_or_else(|| "127.0.0.1:8080".into());
    let cache_dir = args.next().map(PathBuf::from);
    let listener = TcpListener::bind(&addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    serve(listener, ServerConfig { cache_dir }).await
}
