use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::debug;

use super::{BackendError, BackendRequest, Transport};

/// Replays responses stored as `<sha256>.json` files, one per request.
#[derive(Clone, Debug)]
pub struct FixtureStore {
    dir: PathBuf,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, request: &BackendRequest) -> PathBuf {
        self.dir.join(format!("{}.json", request.fixture_key()))
    }

    pub fn contains(&self, request: &BackendRequest) -> bool {
        self.path_for(request).is_file()
    }

    /// Writes a response body verbatim, replacing any previous recording.
    pub fn store(&self, request: &BackendRequest, body: &[u8]) -> Result<PathBuf, BackendError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| BackendError::Io { path, source }
        };
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let path = self.path_for(request);
        let tmp = path.with_extension("json.tmp");
        let mut file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        file.write_all(body).map_err(io_err(&tmp))?;
        file.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(path)
    }
}

impl Transport for FixtureStore {
    fn call(&self, request: &BackendRequest) -> Result<Vec<u8>, BackendError> {
        let path = self.path_for(request);
        let bytes = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(BackendError::MissingFixture {
                    hash: request.fixture_key(),
                    kind: request.kind(),
                })
            }
            Err(source) => return Err(BackendError::Io { path, source }),
        };
        match serde_json::from_slice::<serde_json::Value>(&bytes) {
            Ok(serde_json::Value::Object(_)) => Ok(bytes),
            Ok(_) => Err(BackendError::CorruptFixture {
                hash: request.fixture_key(),
                reason: "body is not a JSON object".into(),
            }),
            Err(e) => Err(BackendError::CorruptFixture {
                hash: request.fixture_key(),
                reason: e.to_string(),
            }),
        }
    }
}

/// Forwards to a live transport and persists every response it sees.
///
/// Writes are serialized through one lock; concurrent calls to the live
/// transport are still allowed.
pub struct Recorder<T> {
    live: T,
    store: FixtureStore,
    write_lock: Mutex<()>,
}

impl<T: Transport> Recorder<T> {
    pub fn new(live: T, store: FixtureStore) -> Self {
        Recorder {
            live,
            store,
            write_lock: Mutex::new(()),
        }
    }

    pub fn store(&self) -> &FixtureStore {
        &self.store
    }
}

impl<T: Transport> Transport for Recorder<T> {
    fn call(&self, request: &BackendRequest) -> Result<Vec<u8>, BackendError> {
        let body = self.live.call(request)?;
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.store.store(request, &body)?;
        debug!("recorded {} -> {}", request.kind(), path.display());
        Ok(body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Backend, RequestKind};

    struct Constant(Vec<u8>);

    impl Transport for Constant {
        fn call(&self, _: &BackendRequest) -> Result<Vec<u8>, BackendError> {
            Ok(self.0.clone())
        }
    }

    fn entail_request() -> BackendRequest {
        BackendRequest::Entail {
            premise: "p".into(),
            hypothesis: "h".into(),
        }
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let body = br#"{"contradict":0.25,"entail":0.5,"neutral":0.25}"#.to_vec();
        let recorder = Recorder::new(Constant(body.clone()), FixtureStore::new(dir.path()));
        let r = entail_request();
        assert_eq!(recorder.call(&r).unwrap(), body);
        // Idempotent overwrite.
        assert_eq!(recorder.call(&r).unwrap(), body);
        let store = FixtureStore::new(dir.path());
        assert_eq!(store.call(&r).unwrap(), body);
        let files: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 1);
        let v = Backend::new(store).entail("p", "h").unwrap();
        assert_eq!(v.entail, 0.5);
    }

    #[test]
    fn missing_fixture_names_the_hash() {
        let dir = tempfile::tempdir().unwrap();
        let r = entail_request();
        match FixtureStore::new(dir.path()).call(&r) {
            Err(BackendError::MissingFixture { hash, kind }) => {
                assert_eq!(hash, r.fixture_key());
                assert_eq!(kind, RequestKind::Entail);
            }
            other => panic!("expected missing fixture, got {other:?}"),
        }
    }

    #[test]
    fn garbage_fixture_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::new(dir.path());
        let r = entail_request();
        fs::write(store.path_for(&r), b"[1,2").unwrap();
        assert!(matches!(
            store.call(&r),
            Err(BackendError::CorruptFixture { .. })
        ));
        fs::write(store.path_for(&r), b"[1,2]").unwrap();
        assert!(matches!(
            store.call(&r),
            Err(BackendError::CorruptFixture { .. })
        ));
    }
}
