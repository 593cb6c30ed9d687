//! Content-addressed block store with checkpoint manifests.
//!
//! Prefix reuse across sessions means many KV blocks are byte-identical:
//! shared system prompts, common tool definitions, replayed few-shot
//! examples. The store hashes every payload with SHA-256 and keeps a single
//! copy per distinct hash, reference-counted by the blocks that point at it.
//!
//! The hash index is a 16-way radix trie over the 64 nibbles of the digest.
//! Leaves carry their remaining nibble suffix, so interior chains exist only
//! where two keys actually share a prefix, and removing a key re-merges a
//! branch with a single surviving leaf back into one node. Lookups touch at
//! most 64 nodes and in practice a handful, since digests diverge early.
//!
//! Checkpoints serialize a session's block-to-hash mapping. Manifests are
//! delta-encoded against a base manifest so an incremental checkpoint costs
//! bytes proportional to what changed, with a JSON twin of the same
//! structure for inspection.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::block::{BlockId, ContentHash};

#[must_use]
pub fn hash_content(content: &[u8]) -> ContentHash {
    let digest = Sha256::digest(content);
    ContentHash(digest.into())
}

fn nibbles(hash: &ContentHash) -> [u8; 64] {
    let mut out = [0u8; 64];
    for (i, b) in hash.0.iter().enumerate() {
        out[2 * i] = b >> 4;
        out[2 * i + 1] = b & 0x0f;
    }
    out
}

// ── Nibble radix trie ───────────────────────────────────────────────────────

enum Node {
    Branch { children: [Option<Box<Node>>; 16] },
    Leaf { suffix: Vec<u8>, slot: usize },
}

fn empty_children() -> [Option<Box<Node>>; 16] {
    std::array::from_fn(|_| None)
}

/// Maps 32-byte digests to slab slots. Keys are fixed-length, so any two
/// distinct keys diverge at some nibble and every split is well-defined.
struct HashTrie {
    root: Option<Box<Node>>,
    len: usize,
}

impl HashTrie {
    fn new() -> Self {
        HashTrie { root: None, len: 0 }
    }

    fn len(&self) -> usize {
        self.len
    }

    /// Insert, returning the previous slot when the key was present.
    fn insert(&mut self, hash: &ContentHash, slot: usize) -> Option<usize> {
        let key = nibbles(hash);
        let old = Self::insert_at(&mut self.root, &key, slot);
        if old.is_none() {
            self.len += 1;
        }
        old
    }

    fn insert_at(place: &mut Option<Box<Node>>, key: &[u8], slot: usize) -> Option<usize> {
        match place {
            None => {
                *place = Some(Box::new(Node::Leaf { suffix: key.to_vec(), slot }));
                None
            }
            Some(node) => match node.as_mut() {
                Node::Branch { children } => {
                    Self::insert_at(&mut children[key[0] as usize], &key[1..], slot)
                }
                Node::Leaf { suffix, slot: existing } => {
                    if suffix.as_slice() == key {
                        return Some(std::mem::replace(existing, slot));
                    }
                    let shared = suffix.iter().zip(key).take_while(|(a, b)| a == b).count();
                    let (old_suffix, old_slot) = (std::mem::take(suffix), *existing);
                    // Two leaves under a branch at the first divergent nibble,
                    // wrapped in one single-child branch per shared nibble.
                    let mut children = empty_children();
                    children[old_suffix[shared] as usize] = Some(Box::new(Node::Leaf {
                        suffix: old_suffix[shared + 1..].to_vec(),
                        slot: old_slot,
                    }));
                    children[key[shared] as usize] = Some(Box::new(Node::Leaf {
                        suffix: key[shared + 1..].to_vec(),
                        slot,
                    }));
                    let mut built = Node::Branch { children };
                    for &nib in old_suffix[..shared].iter().rev() {
                        let mut wrap = empty_children();
                        wrap[nib as usize] = Some(Box::new(built));
                        built = Node::Branch { children: wrap };
                    }
                    **node = built;
                    None
                }
            },
        }
    }

    fn lookup(&self, hash: &ContentHash) -> Option<usize> {
        let key = nibbles(hash);
        let mut node = self.root.as_deref()?;
        let mut depth = 0;
        loop {
            match node {
                Node::Leaf { suffix, slot } => {
                    return (suffix.as_slice() == &key[depth..]).then_some(*slot);
                }
                Node::Branch { children } => {
                    node = children[key[depth] as usize].as_deref()?;
                    depth += 1;
                }
            }
        }
    }

    /// Remove, returning the slot when the key was present. Branches left
    /// with a single leaf child are folded back into a longer-suffix leaf.
    fn remove(&mut self, hash: &ContentHash) -> Option<usize> {
        let key = nibbles(hash);
        let removed = Self::remove_at(&mut self.root, &key);
        if removed.is_some() {
            self.len -= 1;
        }
        removed
    }

    fn remove_at(place: &mut Option<Box<Node>>, key: &[u8]) -> Option<usize> {
        let node = place.as_mut()?;
        match node.as_mut() {
            Node::Leaf { suffix, slot } => {
                if suffix.as_slice() == key {
                    let s = *slot;
                    *place = None;
                    Some(s)
                } else {
                    None
                }
            }
            Node::Branch { children } => {
                let nib = key[0] as usize;
                let removed = Self::remove_at(&mut children[nib], &key[1..])?;
                let mut live = (0u8..16).filter(|&i| children[i as usize].is_some());
                match (live.next(), live.next()) {
                    (None, _) => *place = None,
                    (Some(only), None) => {
                        if matches!(children[only as usize].as_deref(), Some(Node::Leaf { .. })) {
                            let child = children[only as usize].take().expect("checked live");
                            if let Node::Leaf { suffix, slot } = *child {
                                let mut merged = Vec::with_capacity(suffix.len() + 1);
                                merged.push(only);
                                merged.extend(suffix);
                                **node = Node::Leaf { suffix: merged, slot };
                            }
                        }
                    }
                    _ => {}
                }
                Some(removed)
            }
        }
    }
}

// ── Content store ───────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
struct Entry {
    payload: Vec<u8>,
    logical_bytes: u64,
    ref_count: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DedupError {
    #[error("block {0} is not registered in the store")]
    UnknownBlock(BlockId),
    #[error("no content stored for hash {0}")]
    UnknownContent(String),
    #[error("manifest blob too short or corrupt")]
    Truncated,
    #[error("bad manifest magic")]
    BadMagic,
    #[error("{0} bytes of trailing garbage after manifest")]
    TrailingBytes(usize),
    #[error("delta applies to base {expected:?}, got {found:?}")]
    BaseMismatch { expected: Option<String>, found: String },
    #[error("manifest name is not valid utf-8")]
    BadName,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DedupStats {
    /// Logical bytes offered across every put.
    pub raw_bytes: u64,
    /// Logical bytes actually written (first copy of each distinct payload).
    pub written_bytes: u64,
    /// Puts that matched an existing payload.
    pub dedup_hits: u64,
    pub unique_entries: u64,
    /// Logical bytes currently backed by live entries.
    pub resident_logical_bytes: u64,
    /// `1 - written / raw`; zero before any put.
    pub savings_fraction: f64,
}

/// Reference-counted, content-addressed payload store.
///
/// Simulation payloads are small stand-ins for real KV blocks, so each put
/// carries an explicit logical size used for all byte accounting; `put`
/// without one falls back to the payload length.
pub struct ContentStore {
    trie: HashTrie,
    entries: Vec<Option<Entry>>,
    free_slots: Vec<usize>,
    refs: BTreeMap<BlockId, ContentHash>,
    raw_bytes: u64,
    written_bytes: u64,
    dedup_hits: u64,
    resident_logical_bytes: u64,
}

impl Default for ContentStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ContentStore {
    #[must_use]
    pub fn new() -> Self {
        ContentStore {
            trie: HashTrie::new(),
            entries: Vec::new(),
            free_slots: Vec::new(),
            refs: BTreeMap::new(),
            raw_bytes: 0,
            written_bytes: 0,
            dedup_hits: 0,
            resident_logical_bytes: 0,
        }
    }

    pub fn put(&mut self, block_id: BlockId, content: &[u8]) -> (ContentHash, bool) {
        self.put_with_size(block_id, content, content.len() as u64)
    }

    /// Register a block's payload. Returns the content hash and whether the
    /// bytes deduplicated against an existing entry. Re-putting a known
    /// block releases its previous reference first.
    pub fn put_with_size(
        &mut self,
        block_id: BlockId,
        content: &[u8],
        logical_bytes: u64,
    ) -> (ContentHash, bool) {
        if self.refs.contains_key(&block_id) {
            let _ = self.release(block_id);
        }
        let hash = hash_content(content);
        self.raw_bytes += logical_bytes;
        let deduplicated = match self.trie.lookup(&hash) {
            Some(slot) => {
                let entry = self.entries[slot].as_mut().expect("trie points at live slot");
                entry.ref_count += 1;
                self.dedup_hits += 1;
                true
            }
            None => {
                let entry = Entry {
                    payload: content.to_vec(),
                    logical_bytes,
                    ref_count: 1,
                };
                let slot = match self.free_slots.pop() {
                    Some(s) => {
                        self.entries[s] = Some(entry);
                        s
                    }
                    None => {
                        self.entries.push(Some(entry));
                        self.entries.len() - 1
                    }
                };
                self.trie.insert(&hash, slot);
                self.written_bytes += logical_bytes;
                self.resident_logical_bytes += logical_bytes;
                false
            }
        };
        self.refs.insert(block_id, hash);
        (hash, deduplicated)
    }

    /// Drop a block's reference; the payload disappears with its last one.
    pub fn release(&mut self, block_id: BlockId) -> Result<(), DedupError> {
        let hash = self.refs.remove(&block_id).ok_or(DedupError::UnknownBlock(block_id))?;
        let slot = self.trie.lookup(&hash).expect("ref without entry");
        let entry = self.entries[slot].as_mut().expect("live slot");
        entry.ref_count -= 1;
        if entry.ref_count == 0 {
            self.resident_logical_bytes -= entry.logical_bytes;
            self.entries[slot] = None;
            self.free_slots.push(slot);
            self.trie.remove(&hash);
        }
        Ok(())
    }

    #[must_use]
    pub fn hash_of(&self, block_id: BlockId) -> Option<ContentHash> {
        self.refs.get(&block_id).copied()
    }

    #[must_use]
    pub fn payload_by_hash(&self, hash: &ContentHash) -> Option<&[u8]> {
        let slot = self.trie.lookup(hash)?;
        self.entries[slot].as_ref().map(|e| e.payload.as_slice())
    }

    #[must_use]
    pub fn ref_count(&self, hash: &ContentHash) -> u32 {
        self.trie
            .lookup(hash)
            .and_then(|s| self.entries[s].as_ref())
            .map_or(0, |e| e.ref_count)
    }

    #[must_use]
    pub fn stats(&self) -> DedupStats {
        let savings = if self.raw_bytes == 0 {
            0.0
        } else {
            1.0 - self.written_bytes as f64 / self.raw_bytes as f64
        };
        DedupStats {
            raw_bytes: self.raw_bytes,
            written_bytes: self.written_bytes,
            dedup_hits: self.dedup_hits,
            unique_entries: self.trie.len() as u64,
            resident_logical_bytes: self.resident_logical_bytes,
            savings_fraction: savings,
        }
    }

    /// Snapshot the named blocks into a manifest.
    pub fn manifest(&self, name: &str, block_ids: &[BlockId]) -> Result<Manifest, DedupError> {
        let mut entries = BTreeMap::new();
        for &id in block_ids {
            let hash = self.refs.get(&id).ok_or(DedupError::UnknownBlock(id))?;
            let slot = self.trie.lookup(hash).expect("ref without entry");
            let logical = self.entries[slot].as_ref().expect("live slot").logical_bytes;
            entries.insert(id, ManifestEntry { hash: *hash, logical_bytes: logical });
        }
        Ok(Manifest { name: name.to_string(), entries })
    }

    /// Materialize every block in a manifest back to its payload bytes.
    pub fn restore(&self, manifest: &Manifest) -> Result<BTreeMap<BlockId, Vec<u8>>, DedupError> {
        let mut out = BTreeMap::new();
        for (&id, entry) in &manifest.entries {
            let payload = self
                .payload_by_hash(&entry.hash)
                .ok_or_else(|| DedupError::UnknownContent(entry.hash.to_hex()))?;
            out.insert(id, payload.to_vec());
        }
        Ok(out)
    }
}

// ── Checkpoint manifests ────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub hash: ContentHash,
    pub logical_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub entries: BTreeMap<BlockId, ManifestEntry>,
}

/// Changes relative to a base manifest; `base: None` means a full snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaManifest {
    pub name: String,
    pub base: Option<String>,
    pub added: BTreeMap<BlockId, ManifestEntry>,
    pub removed: BTreeSet<BlockId>,
}

const MANIFEST_MAGIC: &[u8; 8] = b"KVCKPT01";

impl Manifest {
    /// Delta against a base: entries whose hash changed or appeared, plus
    /// ids that vanished.
    #[must_use]
    pub fn delta_from(&self, base: &Manifest) -> DeltaManifest {
        let added = self
            .entries
            .iter()
            .filter(|(id, e)| base.entries.get(id) != Some(e))
            .map(|(id, e)| (*id, e.clone()))
            .collect();
        let removed = base
            .entries
            .keys()
            .filter(|id| !self.entries.contains_key(id))
            .copied()
            .collect();
        DeltaManifest { name: self.name.clone(), base: Some(base.name.clone()), added, removed }
    }

    /// A base-less delta carrying the full content.
    #[must_use]
    pub fn as_full_delta(&self) -> DeltaManifest {
        DeltaManifest {
            name: self.name.clone(),
            base: None,
            added: self.entries.clone(),
            removed: BTreeSet::new(),
        }
    }
}

impl DeltaManifest {
    /// Rebuild the full manifest this delta describes. `base` must be the
    /// manifest named in the delta (or `None` for a full snapshot).
    pub fn apply(&self, base: Option<&Manifest>) -> Result<Manifest, DedupError> {
        if self.base.as_deref() != base.map(|b| b.name.as_str()) {
            return Err(DedupError::BaseMismatch {
                expected: base.map(|b| b.name.clone()),
                found: self.base.clone().unwrap_or_else(|| "<none>".into()),
            });
        }
        let mut entries = base.map(|b| b.entries.clone()).unwrap_or_default();
        for id in &self.removed {
            entries.remove(id);
        }
        for (id, e) in &self.added {
            entries.insert(*id, e.clone());
        }
        Ok(Manifest { name: self.name.clone(), entries })
    }

    /// Fixed little-endian wire encoding; see `decode` for the exact layout.
    #[must_use]
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MANIFEST_MAGIC);
        put_str(&mut out, &self.name);
        match &self.base {
            None => out.push(0),
            Some(b) => {
                out.push(1);
                put_str(&mut out, b);
            }
        }
        out.extend_from_slice(&(self.added.len() as u32).to_le_bytes());
        for (id, e) in &self.added {
            out.extend_from_slice(&id.0.to_le_bytes());
            out.extend_from_slice(&e.hash.0);
            out.extend_from_slice(&e.logical_bytes.to_le_bytes());
        }
        out.extend_from_slice(&(self.removed.len() as u32).to_le_bytes());
        for id in &self.removed {
            out.extend_from_slice(&id.0.to_le_bytes());
        }
        out
    }

    /// Layout: magic `KVCKPT01`, name (u32 length + utf-8), base tag byte
    /// (0 absent, 1 present + string), added entries (u32 count, then per
    /// entry u64 id + 32-byte hash + u64 logical size, ascending by id),
    /// removed ids (u32 count + ascending u64 ids). Trailing bytes reject.
    pub fn decode(bytes: &[u8]) -> Result<DeltaManifest, DedupError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MANIFEST_MAGIC {
            return Err(DedupError::BadMagic);
        }
        let name = r.string()?;
        let base = match r.byte()? {
            0 => None,
            _ => Some(r.string()?),
        };
        let added_count = r.u32()?;
        let mut added = BTreeMap::new();
        for _ in 0..added_count {
            let id = BlockId(r.u64()?);
            let mut hash = [0u8; 32];
            hash.copy_from_slice(r.take(32)?);
            let logical_bytes = r.u64()?;
            added.insert(id, ManifestEntry { hash: ContentHash(hash), logical_bytes });
        }
        let removed_count = r.u32()?;
        let mut removed = BTreeSet::new();
        for _ in 0..removed_count {
            removed.insert(BlockId(r.u64()?));
        }
        if r.pos != bytes.len() {
            return Err(DedupError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(DeltaManifest { name, base, added, removed })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<DeltaManifest, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DedupError> {
        if self.pos + n > self.buf.len() {
            return Err(DedupError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn byte(&mut self) -> Result<u8, DedupError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DedupError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DedupError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, DedupError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| DedupError::BadName)
    }
}
