//! Registration and authentication over TCP.
//!
//! Each envelope is a 4-byte big-endian payload length followed by one JSON
//! object. Requests carry `type` (`register`, `authenticate`, `train_model`)
//! and an optional `request_id` that the response echoes. Samples travel as
//! base64 PGM/WAV bytes; optional `face_eyes` entries give annotated eye
//! centers as `{"left": [x, y], "right": [x, y]}`.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authenticator::{AuthError, Authenticator, Gallery, RejectedSample};
use crate::face_pipeline::EyePair;
use crate::fusion::Modality;
use crate::profile_store::ProfileStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub user_id: String,
    pub face_samples: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub face_eyes: Vec<Option<EyePair>>,
    pub voice_samples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claimed_user_id: Option<String>,
    pub face_sample: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_eyes: Option<EyePair>,
    pub voice_sample: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Register(RegisterRequest),
    Authenticate(AuthRequest),
    TrainModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestEnvelope {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    #[serde(flatten)]
    pub request: Request,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    #[serde(default)]
    pub request_id: Option<String>,
    /// `ok` or an error code.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voice_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_user: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected_samples: Vec<RejectedSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub users: Option<usize>,
}

impl Response {
    fn ok() -> Self {
        Self {
            status: "ok".into(),
            ..Default::default()
        }
    }

    fn error(code: &str, message: impl Into<String>) -> Self {
        Self {
            status: code.into(),
            message: Some(message.into()),
            ..Default::default()
        }
    }

    fn from_auth_error(e: &AuthError) -> Self {
        let message = match e {
            AuthError::ModelStale => "eigenmodel is stale; send train_model or run `bimodal train-model`".to_owned(),
            other => other.to_string(),
        };
        Self {
            rejected_samples: e.rejected_samples().to_vec(),
            ..Self::error(e.code(), message)
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("envelope of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Auth(#[from] AuthError),
}

pub fn write_envelope(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "payload too long"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one envelope; `Ok(None)` on a clean end of stream.
pub fn read_envelope(r: &mut impl Read, max_len: usize) -> Result<Option<Vec<u8>>, ServiceError> {
    let mut head = [0u8; 4];
    match r.read_exact(&mut head) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(head) as usize;
    if len > max_len {
        return Err(ServiceError::TooLarge(len));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)
        .map_err(|e| ServiceError::Malformed(format!("truncated payload: {e}")))?;
    Ok(Some(payload))
}

enum Snapshot {
    Empty,
    Stale,
    Ready(Arc<Gallery>),
}

/// Request handling against one profile store. Reads use the last published
/// gallery snapshot; registrations and retraining hold the store mutex.
pub struct AuthService {
    auth: Authenticator,
    store: ProfileStore,
    snapshot: RwLock<Arc<Snapshot>>,
    write_lock: Mutex<()>,
}

impl AuthService {
    pub fn new(auth: Authenticator, store: ProfileStore) -> Result<Self, AuthError> {
        let service = Self {
            auth,
            store,
            snapshot: RwLock::new(Arc::new(Snapshot::Empty)),
            write_lock: Mutex::new(()),
        };
        service.refresh()?;
        Ok(service)
    }

    /// Opens (or initializes) the configured store.
    pub fn from_config(auth: Authenticator) -> Result<Self, AuthError> {
        let path = auth.config().service.store_path.clone();
        let store = match ProfileStore::open(&path) {
            Ok(s) => s,
            Err(crate::profile_store::StoreError::NotInitialized(_)) => ProfileStore::init(&path)?,
            Err(e) => return Err(e.into()),
        };
        Self::new(auth, store)
    }

    pub fn store(&self) -> &ProfileStore {
        &self.store
    }

    pub fn authenticator(&self) -> &Authenticator {
        &self.auth
    }

    fn publish(&self, s: Snapshot) {
        *self.snapshot.write().expect("snapshot lock") = Arc::new(s);
    }

    /// Rebuilds the snapshot from disk.
    fn refresh(&self) -> Result<(), AuthError> {
        let s = match Gallery::from_store(&self.store) {
            Ok(g) => Snapshot::Ready(Arc::new(g)),
            Err(AuthError::NoEnrolledUsers) => Snapshot::Empty,
            Err(AuthError::ModelStale) => Snapshot::Stale,
            Err(e) => return Err(e),
        };
        self.publish(s);
        Ok(())
    }

    pub fn handle_payload(&self, payload: &[u8]) -> Response {
        match serde_json::from_slice::<RequestEnvelope>(payload) {
            Ok(env) => self.handle(env),
            Err(e) => {
                let request_id = serde_json::from_slice::<serde_json::Value>(payload)
                    .ok()
                    .and_then(|v| v.get("request_id").and_then(|r| r.as_str()).map(str::to_owned));
                Response {
                    request_id,
                    ..Response::error("malformed-request", e.to_string())
                }
            }
        }
    }

    pub fn handle(&self, env: RequestEnvelope) -> Response {
        let resp = match &env.request {
            Request::Register(r) => self.register(r),
            Request::Authenticate(r) => self.authenticate(r),
            Request::TrainModel => self.train(),
        };
        Response {
            request_id: env.request_id,
            ..resp
        }
    }

    fn register(&self, req: &RegisterRequest) -> Response {
        if !req.face_eyes.is_empty() && req.face_eyes.len() != req.face_samples.len() {
            return Response::error("malformed-request", "face_eyes must match face_samples in length");
        }
        // undecodable base64 falls through as an unreadable sample
        let faces: Vec<(Vec<u8>, Option<EyePair>)> = req
            .face_samples
            .iter()
            .enumerate()
            .map(|(i, s)| (B64.decode(s).unwrap_or_default(), req.face_eyes.get(i).copied().flatten()))
            .collect();
        let voices: Vec<Vec<u8>> = req.voice_samples.iter().map(|s| B64.decode(s).unwrap_or_default()).collect();

        let _guard = self.write_lock.lock().expect("write lock");
        if self.store.contains(&req.user_id) {
            return Response::from_auth_error(&AuthError::UserExists(req.user_id.clone()));
        }
        let (profile, rejected) = match self.auth.build_profile(&req.user_id, &faces, &voices) {
            Ok(p) => p,
            Err(e) => return Response::from_auth_error(&e),
        };
        if let Err(e) = self.store.save_profile(&profile, false) {
            return Response::from_auth_error(&e.into());
        }
        let mut resp = Response::ok();
        resp.rejected_samples = rejected;
        if self.auth.config().service.auto_train {
            match self.auth.train_store(&self.store) {
                Ok((g, _)) => {
                    resp.users = Some(g.templates.len());
                    self.publish(Snapshot::Ready(Arc::new(g)));
                    resp.message = Some("registered; eigenmodel retrained".into());
                }
                Err(e) => return Response::from_auth_error(&e),
            }
        } else {
            self.publish(Snapshot::Stale);
            resp.message = Some("registered; eigenmodel is stale until train_model".into());
        }
        resp
    }

    fn train(&self) -> Response {
        let _guard = self.write_lock.lock().expect("write lock");
        match self.auth.train_store(&self.store) {
            Ok((g, hash)) => {
                let mut resp = Response::ok();
                resp.users = Some(g.templates.len());
                resp.message = Some(format!("eigenmodel {hash}"));
                self.publish(Snapshot::Ready(Arc::new(g)));
                resp
            }
            Err(e) => Response::from_auth_error(&e),
        }
    }

    fn authenticate(&self, req: &AuthRequest) -> Response {
        let snapshot = self.snapshot.read().expect("snapshot lock").clone();
        let gallery = match &*snapshot {
            Snapshot::Empty => return Response::from_auth_error(&AuthError::NoEnrolledUsers),
            Snapshot::Stale => return Response::from_auth_error(&AuthError::ModelStale),
            Snapshot::Ready(g) => g.clone(),
        };
        let reject = |modality, reason: String| {
            Response::from_auth_error(&AuthError::InvalidSamples(vec![RejectedSample {
                index: 0,
                modality,
                reason,
            }]))
        };
        let face_bytes = B64.decode(&req.face_sample).unwrap_or_default();
        let face = match self.auth.prepare_face(&face_bytes, req.face_eyes, "probe") {
            Ok(f) => f,
            Err(r) => return reject(Modality::Face, r.code().to_owned()),
        };
        let voice_bytes = B64.decode(&req.voice_sample).unwrap_or_default();
        let voice = match self.auth.prepare_voice(&voice_bytes) {
            Ok(v) => v,
            Err(r) => return reject(Modality::Voice, r),
        };
        match self.auth.authenticate(&gallery, &face, &voice, req.claimed_user_id.as_deref()) {
            Ok(out) => Response {
                decision: Some(if out.accept { Decision::Accept } else { Decision::Reject }),
                fused_score: Some(out.fused_score),
                face_score: Some(out.face_score),
                voice_score: Some(out.voice_score),
                matched_user: Some(out.matched_user),
                ..Response::ok()
            },
            Err(e) => Response::from_auth_error(&e),
        }
    }

    fn serve_connection(&self, mut stream: TcpStream) {
        let max = self.auth.config().service.max_envelope_bytes;
        loop {
            let payload = match read_envelope(&mut stream, max) {
                Ok(Some(p)) => p,
                Ok(None) => return,
                Err(e) => {
                    let resp = match e {
                        ServiceError::TooLarge(n) => {
                            Response::error("envelope-too-large", format!("declared {n} bytes; limit is {max}"))
                        }
                        other => Response::error("malformed-request", other.to_string()),
                    };
                    let _ = send_response(&mut stream, &resp);
                    let _ = stream.shutdown(std::net::Shutdown::Both);
                    return;
                }
            };
            let resp = self.handle_payload(&payload);
            let malformed = resp.status == "malformed-request";
            if send_response(&mut stream, &resp).is_err() || malformed {
                let _ = stream.shutdown(std::net::Shutdown::Both);
                return;
            }
        }
    }
}

fn send_response(stream: &mut TcpStream, resp: &Response) -> io::Result<()> {
    write_envelope(stream, &serde_json::to_vec(resp).expect("response serializes"))
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the stop flag is raised elsewhere.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` and serves each connection on its own thread until the
/// handle is shut down.
pub fn serve(service: Arc<AuthService>, addr: &str) -> Result<ServerHandle, ServiceError> {
    let bind_err = |source| ServiceError::Bind {
        addr: addr.to_owned(),
        source,
    };
    let listener = TcpListener::bind(addr).map_err(bind_err)?;
    listener.set_nonblocking(true).map_err(bind_err)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = std::thread::spawn(move || {
        while !flag.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let svc = service.clone();
                    std::thread::spawn(move || {
                        if stream.set_nonblocking(false).is_ok() {
                            svc.serve_connection(stream);
                        }
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(10)),
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    std::thread::sleep(Duration::from_millis(10));
                }
            }
        }
    });
    Ok(ServerHandle {
        addr: local,
        stop,
        thread: Some(thread),
    })
}

/// Blocking client holding one connection.
pub struct Client {
    stream: TcpStream,
    max: usize,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        Ok(Self {
            stream: TcpStream::connect(addr)?,
            max: crate::config::MAX_ENVELOPE_BYTES,
        })
    }

    pub fn call_raw(&mut self, payload: &[u8]) -> Result<Response, ServiceError> {
        write_envelope(&mut self.stream, payload)?;
        let bytes = read_envelope(&mut self.stream, self.max)?
            .ok_or_else(|| ServiceError::Malformed("connection closed before a response".into()))?;
        serde_json::from_slice(&bytes).map_err(|e| ServiceError::Malformed(e.to_string()))
    }

    pub fn call(&mut self, env: &RequestEnvelope) -> Result<Response, ServiceError> {
        self.call_raw(&serde_json::to_vec(env).expect("request serializes"))
    }

    pub fn stream_mut(&mut self) -> &mut TcpStream {
        &mut self.stream
    }
}

pub fn encode_sample(bytes: &[u8]) -> String {
    B64.encode(bytes)
}
