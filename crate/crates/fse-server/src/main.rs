use std::path::PathBuf;

use clap::Parser;

use fse_server::Server;

/// Hosts encrypted search indexes and answers token queries.
#[derive(Parser)]
#[command(name = "fseserver", version)]
struct Args {
    /// Address to listen on.
    #[arg(long, env = "FSE_LISTEN", default_value = "127.0.0.1:4160")]
    listen: String,

    /// Data directory holding the index collection.
    #[arg(long, env = "FSE_DATA")]
    data: PathBuf,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let server = Server::bind(args.listen.as_str(), &args.data)?;
    eprintln!("fseserver: listening on {}", server.local_addr());
    server.run();
    Ok(())
}
