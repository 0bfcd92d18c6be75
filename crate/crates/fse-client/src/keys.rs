//! Master-key file handling: 32 raw bytes, owner-only permissions.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::os::unix::fs::OpenOptionsExt;
use std::path::Path;

use fse_core::crypto::{MasterKey, KEY_LEN};

use crate::ClientError;

pub fn write_key_file(path: &Path, key: &MasterKey, force: bool) -> Result<(), ClientError> {
    let mut options = OpenOptions::new();
    options.write(true).mode(0o600);
    if force {
        options.create(true).truncate(true);
    } else {
        options.create_new(true);
    }
    let mut file = options.open(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::AlreadyExists {
            ClientError::KeyFile {
                path: path.to_owned(),
                reason: "already exists; pass --force to overwrite".into(),
            }
        } else {
            ClientError::KeyFile {
                path: path.to_owned(),
                reason: source.to_string(),
            }
        }
    })?;
    file.write_all(key.as_bytes())
        .and_then(|_| file.sync_all())
        .map_err(|source| ClientError::KeyFile {
            path: path.to_owned(),
            reason: source.to_string(),
        })
}

pub fn read_key_file(path: &Path) -> Result<MasterKey, ClientError> {
    let bytes = fs::read(path).map_err(|source| ClientError::KeyFile {
        path: path.to_owned(),
        reason: source.to_string(),
    })?;
    if bytes.len() != KEY_LEN {
        return Err(ClientError::KeyFile {
            path: path.to_owned(),
            reason: format!("holds {} bytes, expected {KEY_LEN}", bytes.len()),
        });
    }
    MasterKey::from_slice(&bytes).map_err(|e| ClientError::KeyFile {
        path: path.to_owned(),
        reason: e.to_string(),
    })
}
