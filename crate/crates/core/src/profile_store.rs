//! On-disk store of enrolled users and the shared eigenmodel.
//!
//! ```text
//! <root>/manifest.json
//! <root>/eigenmodel.bin
//! <root>/<user_id>/meta.json
//! <root>/<user_id>/faces.bin     canonical faces, kept for retraining
//! <root>/<user_id>/face.tpl      present once the eigenmodel has been trained
//! <root>/<user_id>/voice.cb
//! ```
//!
//! Every file is written to a dot-prefixed temporary and renamed into place;
//! new profiles are assembled in a dot-prefixed directory and renamed as a
//! whole. Entries whose names start with `.` are never read back.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::binio::{self, BinError, FORMAT_VERSION};
use crate::eigenfaces::{EigenError, EigenModel, FaceTemplate};
use crate::imaging::GrayImage;
use crate::vq_model::{Codebook, VqError};

const MANIFEST: &str = "manifest.json";
const EIGENMODEL: &str = "eigenmodel.bin";
const META: &str = "meta.json";
const FACES: &str = "faces.bin";
const FACE_TEMPLATE: &str = "face.tpl";
const CODEBOOK: &str = "voice.cb";
const FACES_MAGIC: &[u8; 4] = b"BMCF";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store not initialized at {0}")]
    NotInitialized(PathBuf),
    #[error("invalid user id {0:?}")]
    InvalidUserId(String),
    #[error("user {0:?} already exists")]
    UserExists(String),
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("{what} has format version {found}; this build reads version {supported}")]
    Version { what: String, found: u32, supported: u32 },
    #[error("integrity error in {path}: {message}")]
    Integrity { path: PathBuf, message: String },
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::NotInitialized(_) => "store-not-initialized",
            StoreError::InvalidUserId(_) => "invalid-user-id",
            StoreError::UserExists(_) => "user-exists",
            StoreError::UnknownUser(_) => "unknown-user",
            StoreError::Version { .. } => "version-mismatch",
            StoreError::Integrity { .. } => "integrity-error",
            StoreError::Io { .. } => "io-error",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn integrity(path: &Path, message: impl std::fmt::Display) -> StoreError {
    StoreError::Integrity {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Non-empty, at most 64 characters from `[A-Za-z0-9_.-]`, not starting with `.`.
pub fn validate_user_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidUserId(id.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileMeta {
    pub user_id: String,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub face_samples: usize,
    pub voice_samples: usize,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub meta: ProfileMeta,
    pub canonical_faces: Vec<GrayImage>,
    pub face_template: Option<FaceTemplate>,
    pub codebook: Option<Codebook>,
}

impl UserProfile {
    pub fn new(user_id: &str, canonical_faces: Vec<GrayImage>, codebook: Codebook, voice_samples: usize) -> Self {
        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            meta: ProfileMeta {
                user_id: user_id.to_owned(),
                created,
                face_samples: canonical_faces.len(),
                voice_samples,
                version: FORMAT_VERSION,
            },
            canonical_faces,
            face_template: None,
            codebook: Some(codebook.with_owner(user_id)),
        }
    }

    pub fn user_id(&self) -> &str {
        &self.meta.user_id
    }

    pub fn is_complete(&self) -> bool {
        self.face_template.is_some() && self.codebook.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub user_id: String,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub version: u32,
    /// Hex SHA-256 of `eigenmodel.bin`, if one has been trained.
    pub eigenmodel_sha256: Option<String>,
    /// Set when users changed after the eigenmodel was last trained.
    pub model_stale: bool,
    pub users: Vec<ManifestEntry>,
}

impl StoreManifest {
    fn empty() -> Self {
        Self {
            version: FORMAT_VERSION,
            eigenmodel_sha256: None,
            model_stale: false,
            users: Vec::new(),
        }
    }

    pub fn user_ids(&self) -> Vec<&str> {
        self.users.iter().map(|u| u.user_id.as_str()).collect()
    }
}

pub fn encode_faces(faces: &[GrayImage]) -> Vec<u8> {
    let mut w = binio::Writer::new(FACES_MAGIC);
    w.u32(faces.len() as u32);
    for f in faces {
        w.u32(f.width() as u32).u32(f.height() as u32).bytes(f.pixels());
    }
    w.finish()
}

pub fn decode_faces(bytes: &[u8]) -> Result<Vec<GrayImage>, BinError> {
    let mut r = binio::Reader::new(bytes, FACES_MAGIC)?;
    let n = r.u32()? as usize;
    let faces = (0..n)
        .map(|_| {
            let w = r.u32()? as usize;
            let h = r.u32()? as usize;
            let px = r.bytes()?.to_vec();
            GrayImage::new(w, h, px).map_err(|e| BinError::Invalid(e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    r.finish()?;
    Ok(faces)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn temp_name(prefix: &str) -> String {
    format!(
        ".{prefix}.{}.{}.tmp",
        std::process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    )
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().expect("store paths have a parent");
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(temp_name(name));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read(path: &Path) -> Result<Vec<u8>, StoreError> {
    fs::read(path).map_err(io_err(path))
}

fn read_optional(path: &Path) -> Result<Option<Vec<u8>>, StoreError> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path)(e)),
    }
}

fn bin_to_store(path: &Path, e: BinError) -> StoreError {
    match e {
        BinError::Version { found, supported } => StoreError::Version {
            what: path.display().to_string(),
            found,
            supported,
        },
        other => integrity(path, other),
    }
}

fn eigen_to_store(path: &Path, e: EigenError) -> StoreError {
    match e {
        EigenError::Format(b) => bin_to_store(path, b),
        other => integrity(path, other),
    }
}

fn vq_to_store(path: &Path, e: VqError) -> StoreError {
    match e {
        VqError::Format(b) => bin_to_store(path, b),
        other => integrity(path, other),
    }
}

/// A profile store rooted at one directory. Reads may run concurrently;
/// writes that touch the manifest are serialized through an internal lock.
#[derive(Debug)]
pub struct ProfileStore {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl ProfileStore {
    /// Creates the root and an empty manifest if missing, then opens it.
    pub fn init(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let store = Self {
            root,
            write_lock: Mutex::new(()),
        };
        if !store.manifest_path().exists() {
            store.write_manifest(&StoreManifest::empty())?;
        }
        Ok(store)
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        if !root.join(MANIFEST).is_file() {
            return Err(StoreError::NotInitialized(root));
        }
        let store = Self {
            root,
            write_lock: Mutex::new(()),
        };
        store.read_manifest()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST)
    }

    fn user_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ()> {
        self.write_lock.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn read_manifest(&self) -> Result<StoreManifest, StoreError> {
        let path = self.manifest_path();
        let m: StoreManifest = serde_json::from_slice(&read(&path)?).map_err(|e| integrity(&path, e))?;
        if m.version != FORMAT_VERSION {
            return Err(StoreError::Version {
                what: path.display().to_string(),
                found: m.version,
                supported: FORMAT_VERSION,
            });
        }
        Ok(m)
    }

    fn write_manifest(&self, m: &StoreManifest) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec_pretty(m).expect("manifest serializes");
        write_atomic(&self.manifest_path(), &bytes)
    }

    /// Rebuilds the user list from the directories on disk and persists it.
    fn refresh_manifest(&self, update: impl FnOnce(&mut StoreManifest)) -> Result<StoreManifest, StoreError> {
        let mut m = self.read_manifest()?;
        m.users = self.scan_users()?;
        update(&mut m);
        self.write_manifest(&m)?;
        Ok(m)
    }

    fn scan_users(&self) -> Result<Vec<ManifestEntry>, StoreError> {
        let mut users = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') || !entry.path().join(META).is_file() || validate_user_id(&name).is_err() {
                continue;
            }
            let dir = entry.path();
            users.push(ManifestEntry {
                complete: dir.join(FACE_TEMPLATE).is_file() && dir.join(CODEBOOK).is_file(),
                user_id: name,
            });
        }
        users.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        Ok(users)
    }

    /// Current on-disk state; the user list is always rescanned.
    pub fn list_profiles(&self) -> Result<StoreManifest, StoreError> {
        let mut m = self.read_manifest()?;
        m.users = self.scan_users()?;
        Ok(m)
    }

    pub fn contains(&self, id: &str) -> bool {
        validate_user_id(id).is_ok() && self.user_dir(id).join(META).is_file()
    }

    fn write_profile_files(&self, dir: &Path, p: &UserProfile) -> Result<(), StoreError> {
        let meta = serde_json::to_vec_pretty(&p.meta).expect("meta serializes");
        write_atomic(&dir.join(META), &meta)?;
        write_atomic(&dir.join(FACES), &encode_faces(&p.canonical_faces))?;
        if let Some(t) = &p.face_template {
            write_atomic(&dir.join(FACE_TEMPLATE), &t.to_bytes())?;
        }
        if let Some(cb) = &p.codebook {
            write_atomic(&dir.join(CODEBOOK), &cb.to_bytes())?;
        }
        Ok(())
    }

    /// Writes a profile and marks the eigenmodel stale. Without `overwrite`,
    /// an existing id is a collision error.
    pub fn save_profile(&self, profile: &UserProfile, overwrite: bool) -> Result<(), StoreError> {
        let id = profile.user_id();
        validate_user_id(id)?;
        let _guard = self.lock();
        let dest = self.user_dir(id);
        if dest.exists() && !overwrite {
            return Err(StoreError::UserExists(id.to_owned()));
        }
        let staging = self.root.join(temp_name(id));
        fs::create_dir(&staging).map_err(io_err(&staging))?;
        if let Err(e) = self.write_profile_files(&staging, profile) {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
        if dest.exists() {
            let old = self.root.join(temp_name(&format!("{id}.old")));
            fs::rename(&dest, &old).map_err(io_err(&dest))?;
            fs::rename(&staging, &dest).map_err(io_err(&dest))?;
            let _ = fs::remove_dir_all(&old);
        } else {
            fs::rename(&staging, &dest).map_err(io_err(&dest))?;
        }
        self.refresh_manifest(|m| m.model_stale = true)?;
        Ok(())
    }

    /// Replaces only the face template of an existing profile.
    pub fn save_face_template(&self, template: &FaceTemplate) -> Result<(), StoreError> {
        let dir = self.user_dir(&template.user_id);
        if !self.contains(&template.user_id) {
            return Err(StoreError::UnknownUser(template.user_id.clone()));
        }
        write_atomic(&dir.join(FACE_TEMPLATE), &template.to_bytes())
    }

    pub fn load_profile(&self, id: &str) -> Result<UserProfile, StoreError> {
        validate_user_id(id)?;
        let dir = self.user_dir(id);
        let meta_path = dir.join(META);
        let Some(meta_bytes) = read_optional(&meta_path)? else {
            return Err(StoreError::UnknownUser(id.to_owned()));
        };
        let meta: ProfileMeta = serde_json::from_slice(&meta_bytes).map_err(|e| integrity(&meta_path, e))?;
        if meta.version != FORMAT_VERSION {
            return Err(StoreError::Version {
                what: meta_path.display().to_string(),
                found: meta.version,
                supported: FORMAT_VERSION,
            });
        }
        if meta.user_id != id {
            return Err(integrity(&meta_path, format!("records user {:?}", meta.user_id)));
        }
        let faces_path = dir.join(FACES);
        let canonical_faces = match read_optional(&faces_path)? {
            Some(b) => decode_faces(&b).map_err(|e| bin_to_store(&faces_path, e))?,
            None => Vec::new(),
        };
        let tpl_path = dir.join(FACE_TEMPLATE);
        let face_template = read_optional(&tpl_path)?
            .map(|b| FaceTemplate::from_bytes(&b).map_err(|e| eigen_to_store(&tpl_path, e)))
            .transpose()?;
        let cb_path = dir.join(CODEBOOK);
        let codebook = read_optional(&cb_path)?
            .map(|b| Codebook::from_bytes(&b).map_err(|e| vq_to_store(&cb_path, e)))
            .transpose()?;
        Ok(UserProfile {
            meta,
            canonical_faces,
            face_template,
            codebook,
        })
    }

    /// All profiles in sorted id order.
    pub fn load_all(&self) -> Result<Vec<UserProfile>, StoreError> {
        self.scan_users()?.iter().map(|u| self.load_profile(&u.user_id)).collect()
    }

    pub fn delete_profile(&self, id: &str) -> Result<(), StoreError> {
        validate_user_id(id)?;
        let _guard = self.lock();
        let dir = self.user_dir(id);
        if !dir.join(META).is_file() {
            return Err(StoreError::UnknownUser(id.to_owned()));
        }
        let trash = self.root.join(temp_name(&format!("{id}.del")));
        fs::rename(&dir, &trash).map_err(io_err(&dir))?;
        let _ = fs::remove_dir_all(&trash);
        self.refresh_manifest(|m| m.model_stale = true)?;
        Ok(())
    }

    /// Persists a freshly trained eigenmodel and clears the stale flag.
    pub fn save_eigenmodel(&self, model: &EigenModel) -> Result<String, StoreError> {
        let _guard = self.lock();
        let bytes = model.to_bytes();
        write_atomic(&self.root.join(EIGENMODEL), &bytes)?;
        let hash = sha256_hex(&bytes);
        let h = hash.clone();
        self.refresh_manifest(move |m| {
            m.eigenmodel_sha256 = Some(h);
            m.model_stale = false;
        })?;
        Ok(hash)
    }

    pub fn load_eigenmodel(&self) -> Result<Option<EigenModel>, StoreError> {
        let path = self.root.join(EIGENMODEL);
        let Some(bytes) = read_optional(&path)? else {
            return Ok(None);
        };
        let m = self.read_manifest()?;
        if let Some(expected) = &m.eigenmodel_sha256 {
            let actual = sha256_hex(&bytes);
            if &actual != expected {
                return Err(integrity(&path, format!("hash {actual} does not match manifest {expected}")));
            }
        }
        EigenModel::from_bytes(&bytes)
            .map(Some)
            .map_err(|e| eigen_to_store(&path, e))
    }
}
