//! TCP front end: one frame in, one frame out, per request.
//!
//! Searches and meta reads run concurrently against the collection snapshot
//! taken when the request arrives; COMMIT and DELETE are serialized by a
//! single writer lock and swap in a new snapshot when they finish, so a
//! reader never observes a half-applied mutation.

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;

use fse_core::wire::{read_frame, write_frame, ErrorCode, FrameError, Request, Response};
use fse_core::IndexId;

use crate::storage::{self, Collection, OpError, PendingUpload, Store, StoreError};

struct State {
    store: Store,
    collection: RwLock<Arc<Collection>>,
    pending: Mutex<HashMap<IndexId, PendingUpload>>,
    /// Serializes COMMIT/DELETE end to end, journal included.
    writer: Mutex<()>,
    shutdown: AtomicBool,
}

impl State {
    fn snapshot(&self) -> Arc<Collection> {
        self.collection.read().unwrap().clone()
    }

    fn install(&self, next: Collection) {
        *self.collection.write().unwrap() = Arc::new(next);
    }
}

/// A bound listener plus the recovered collection, ready to serve.
pub struct Server {
    listener: TcpListener,
    state: Arc<State>,
}

/// Handle for an in-process server: lets tests and embedded harnesses stop
/// the accept loop.
pub struct ServerHandle {
    addr: SocketAddr,
    state: Arc<State>,
    join: Option<thread::JoinHandle<()>>,
}

impl Server {
    /// Binds the listener and recovers the collection from `data_root`.
    pub fn bind(addr: impl ToSocketAddrs, data_root: &std::path::Path) -> Result<Self, BindError> {
        let (store, collection) = Store::open(data_root)?;
        let listener = TcpListener::bind(addr)?;
        Ok(Server {
            listener,
            state: Arc::new(State {
                store,
                collection: RwLock::new(Arc::new(collection)),
                pending: Mutex::new(HashMap::new()),
                writer: Mutex::new(()),
                shutdown: AtomicBool::new(false),
            }),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("listener has an address")
    }

    /// Accept loop; returns once shutdown is requested.
    pub fn run(self) {
        for stream in self.listener.incoming() {
            if self.state.shutdown.load(Ordering::SeqCst) {
                return;
            }
            match stream {
                Ok(stream) => {
                    let state = self.state.clone();
                    thread::spawn(move || {
                        let peer = stream.peer_addr().ok();
                        if let Err(e) = serve_connection(stream, &state) {
                            eprintln!("fseserver: connection {peer:?}: {e}");
                        }
                    });
                }
                Err(e) => eprintln!("fseserver: accept failed: {e}"),
            }
        }
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> ServerHandle {
        let addr = self.local_addr();
        let state = self.state.clone();
        let join = thread::spawn(move || self.run());
        ServerHandle {
            addr,
            state,
            join: Some(join),
        }
    }
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting. Established connections finish their current
    /// request; the data directory stays consistent regardless.
    pub fn shutdown(mut self) {
        self.state.shutdown.store(true, Ordering::SeqCst);
        // unblock accept()
        let _ = TcpStream::connect(self.addr);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.state.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BindError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn serve_connection(stream: TcpStream, state: &State) -> Result<(), io::Error> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let body = match read_frame(&mut reader) {
            Ok(Some(body)) => body,
            Ok(None) => return Ok(()), // clean close
            Err(FrameError::Io(e)) => return Err(e),
            Err(e) => {
                // framing is unrecoverable: report and drop the connection
                let resp = Response::Error {
                    code: e.code(),
                    message: e.to_string(),
                };
                write_frame(&mut writer, &resp.encode_body())?;
                return Ok(());
            }
        };
        let response = match Request::decode_body(&body) {
            Ok(request) => handle_request(request, state),
            Err(e) => Response::Error {
                code: e.code(),
                message: e.to_string(),
            },
        };
        write_frame(&mut writer, &response.encode_body())?;
    }
}

fn fail(e: OpError) -> Response {
    Response::Error {
        code: e.code(),
        message: e.to_string(),
    }
}

fn handle_request(request: Request, state: &State) -> Response {
    match request {
        Request::Ping => Response::Pong,
        Request::ListIndexes => Response::Listing {
            entries: state.snapshot().manifests(),
        },
        Request::Search { queries } => {
            let snapshot = state.snapshot();
            let queries: Vec<(IndexId, _)> =
                queries.iter().map(|q| (q.index_id, q.token)).collect();
            match storage::search(&snapshot, &queries) {
                Ok(ids) => Response::Results {
                    ids: ids.into_iter().collect(),
                },
                Err(e) => fail(e),
            }
        }
        Request::GetMeta { index_id, key } => {
            let snapshot = state.snapshot();
            let Some(index) = snapshot.get(index_id) else {
                return fail(OpError::Stale);
            };
            match index.get_meta(&key) {
                Ok(Some(data)) => Response::MetaBlock { data },
                Ok(None) => fail(OpError::NotFound),
                Err(e) => fail(e),
            }
        }
        Request::BeginUpload { manifest } => {
            if let Err(reason) = manifest.validate() {
                return Response::Error {
                    code: ErrorCode::UploadRejected,
                    message: format!("manifest rejected: {reason}"),
                };
            }
            let id = manifest.index_id;
            // a re-sent BEGIN for the same id restarts that upload; the old
            // staging must be gone before the new one is created under the
            // same path
            if let Some(old) = state.pending.lock().unwrap().remove(&id) {
                state.store.abort_upload(old);
            }
            match state.store.begin_upload(manifest, &state.snapshot()) {
                Ok(pending) => {
                    state.pending.lock().unwrap().insert(id, pending);
                    Response::Ok
                }
                Err(e) => fail(e),
            }
        }
        Request::UploadPart {
            index_id,
            section,
            offset,
            data,
        } => {
            let pending = state.pending.lock().unwrap();
            let Some(upload) = pending.get(&index_id) else {
                return fail(OpError::UploadRejected("no upload in progress for this id"));
            };
            match state.store.upload_part(upload, section, offset, &data) {
                Ok(()) => Response::Ok,
                Err(e) => fail(e),
            }
        }
        Request::CommitUpload { index_id, checksum } => {
            let Some(upload) = state.pending.lock().unwrap().remove(&index_id) else {
                return fail(OpError::UploadRejected("no upload in progress for this id"));
            };
            let _writer = state.writer.lock().unwrap();
            let snapshot = state.snapshot();
            match state.store.commit_upload(upload, checksum, &snapshot) {
                Ok(next) => {
                    state.install(next);
                    Response::Ok
                }
                Err(e) => fail(e),
            }
        }
        Request::DeleteIndex { index_id } => {
            let _writer = state.writer.lock().unwrap();
            let snapshot = state.snapshot();
            match state.store.delete_index(index_id, &snapshot) {
                Ok(next) => {
                    state.install(next);
                    Response::Ok
                }
                Err(e) => fail(e),
            }
        }
    }
}
