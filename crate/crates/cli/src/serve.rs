//! The cloud verifier service process: load a model snapshot, bind, serve
//! until interrupted. One structured line per finished session on stderr.

use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};

use ugsd_core::models::ModelSnapshot;
use ugsd_core::protocol::{CloudServer, CloudService};

pub fn cmd_serve(snapshot: &Path, addr: &str) -> Result<()> {
    let verifier = ModelSnapshot::load(snapshot)
        .and_then(|s| s.instantiate())
        .with_context(|| format!("loading snapshot {}", snapshot.display()))?;
    let service = Arc::new(CloudService::new(verifier));
    service.set_summary_hook(|s| {
        eprintln!(
            "event=session_done session_id={} blocks_verified={} corrections={} final_length={}",
            s.session_id, s.blocks_verified, s.corrections, s.final_length
        );
    });
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    let local = listener.local_addr()?;
    eprintln!("event=listening addr={local}");
    CloudServer::serve(listener, service);
    Ok(())
}
