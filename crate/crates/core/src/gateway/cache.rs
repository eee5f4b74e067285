use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use super::{GatewayError, RoleRequest};

const MAGIC: &str = "routecal-cache v1";
const SEPARATOR: &str = "\n---\n";

/// One file per request digest. Files hold a short header, a `---` line and
/// the raw response text.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    tmp_counter: AtomicU64,
}

impl ResponseCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| GatewayError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir, tmp_counter: AtomicU64::new(0) })
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(key)
    }

    pub fn lookup(&self, key: &str) -> Result<Option<String>, GatewayError> {
        let path = self.path_for(key);
        let raw = match fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Cache(format!("{}: {e}", path.display()))),
        };
        match raw.split_once(SEPARATOR) {
            Some((header, body)) if header.starts_with(MAGIC) => Ok(Some(body.to_string())),
            _ => Err(GatewayError::Cache(format!("{} is not a cache entry", path.display()))),
        }
    }

    /// Write-then-rename so concurrent writers never expose partial files.
    pub fn store(&self, key: &str, request: &RoleRequest, text: &str) -> Result<(), GatewayError> {
        let n = self.tmp_counter.fetch_add(1, Ordering::SeqCst);
        let tmp = self.dir.join(format!(".{key}.{}.{n}.tmp", std::process::id()));
        let header = format!(
            "{MAGIC}\nrole: {}\nmodel: {}\ntemperature: {}\nmax_tokens: {}",
            request.role, request.params.model_name, request.params.temperature, request.params.max_tokens
        );
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(header.as_bytes())?;
            f.write_all(SEPARATOR.as_bytes())?;
            f.write_all(text.as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, self.path_for(key))
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            GatewayError::Cache(format!("writing {key}: {e}"))
        })
    }
}
