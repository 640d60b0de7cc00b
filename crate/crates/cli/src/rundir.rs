use std::fs;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use eicl::hash::{fnv1a64, hex64};

use crate::CliError;

/// First eight hex digits of the FNV-1a hash of `value` as JSON.
pub fn config_hash8(value: &impl Serialize) -> Result<String, CliError> {
    let json = serde_json::to_string(value)?;
    Ok(hex64(fnv1a64(json.as_bytes()))[..8].to_string())
}

/// `explicit` if given, otherwise `<root>/run-<unix seconds>-<hash8>`.
/// The directory is created.
pub fn prepare(explicit: Option<&PathBuf>, root: Option<&PathBuf>, fingerprint: &impl Serialize) -> Result<PathBuf, CliError> {
    let dir = match explicit {
        Some(d) => d.clone(),
        None => {
            let secs = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let root = root.cloned().unwrap_or_else(|| PathBuf::from("runs"));
            root.join(format!("run-{secs}-{}", config_hash8(fingerprint)?))
        }
    };
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_on_config_only() {
        let a = config_hash8(&("run", 1)).unwrap();
        assert_eq!(a, config_hash8(&("run", 1)).unwrap());
        assert_ne!(a, config_hash8(&("run", 2)).unwrap());
        assert_eq!(a.len(), 8);
    }

    #[test]
    fn explicit_directory_wins() {
        let tmp = tempfile::tempdir().unwrap();
        let want = tmp.path().join("here/nested");
        let got = prepare(Some(&want), Some(&tmp.path().to_path_buf()), &1).unwrap();
        assert_eq!(got, want);
        assert!(want.is_dir());
    }
}
