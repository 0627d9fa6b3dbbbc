use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Length of the hex fingerprint used in file names and metadata.
pub const FINGERPRINT_LEN: usize = 16;

/// Short SHA-256 digest of a value's canonical JSON encoding.
pub fn fingerprint<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value).map_err(|e| Error::Harness(format!("cannot fingerprint: {e}")))?;
    let digest = Sha256::digest(&json);
    Ok(digest
        .iter()
        .take(FINGERPRINT_LEN / 2)
        .map(|b| format!("{b:02x}"))
        .collect())
}
