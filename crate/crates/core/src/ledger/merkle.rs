use super::LedgerError;
use crate::hash::{sha256, sha256_concat, Hash256};

/// Root of a binary SHA-256 tree over `leaves`. Leaves are hashed once;
/// a level with an odd count pairs its last node with itself.
pub fn merkle_root<L: AsRef<[u8]>>(leaves: &[L]) -> Result<Hash256, LedgerError> {
    if leaves.is_empty() {
        return Err(LedgerError::EmptyMerkle);
    }
    let mut level: Vec<Hash256> = leaves.iter().map(|l| sha256(l.as_ref())).collect();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let right = pair.get(1).unwrap_or(&pair[0]);
                sha256_concat(&[pair[0].as_bytes(), right.as_bytes()])
            })
            .collect();
    }
    Ok(level[0])
}
