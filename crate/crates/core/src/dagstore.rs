//! Content-addressed blob store: blobs are cut into 256 KiB leaves and linked
//! bottom-up by nodes of at most 174 links. Every node is addressed by the
//! SHA-256 of its canonical encoding.
//!
//! Node encoding (integers big-endian):
//!
//! ```text
//! u32 link_count
//! link_count × { u16 name_len, name, 36-byte binary Cid, u64 size }
//! u64 data_len, data
//! ```
//!
//! Binary Cid: `version (0x01) ‖ codec (0x70) ‖ 0x12 ‖ 0x20 ‖ sha256`. The
//! text form is `b` followed by lowercase unpadded base32 of those bytes.
//!
//! On disk, blocks live in `blocks/<cid>` and tokens in `tokens/<id>.open`
//! until redeemed, when they are renamed to `tokens/<id>.redeemed`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, RwLock};

use data_encoding::BASE32_NOPAD;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const CHUNK_SIZE: usize = 256 * 1024;
pub const FANOUT: usize = 174;
pub const CID_VERSION: u8 = 1;
pub const CODEC_DAG: u8 = 0x70;
const SHA256_CODE: u8 = 0x12;
const CID_BYTES: usize = 36;

#[derive(Debug, Error)]
pub enum DagError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("integrity check failed for {0}")]
    Integrity(String),
    #[error("token {0} already redeemed")]
    Expired(String),
    #[error("invalid cid: {0}")]
    InvalidCid(String),
    #[error("malformed node: {0}")]
    Decode(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cid {
    pub version: u8,
    pub codec: u8,
    pub digest: [u8; 32],
}

impl Cid {
    pub fn for_node_bytes(bytes: &[u8]) -> Self {
        Cid { version: CID_VERSION, codec: CODEC_DAG, digest: Sha256::digest(bytes).into() }
    }

    pub fn to_bytes(&self) -> [u8; CID_BYTES] {
        let mut out = [0u8; CID_BYTES];
        out[..4].copy_from_slice(&[self.version, self.codec, SHA256_CODE, 32]);
        out[4..].copy_from_slice(&self.digest);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, DagError> {
        if b.len() != CID_BYTES {
            return Err(DagError::InvalidCid(format!("{} bytes, expected {CID_BYTES}", b.len())));
        }
        if b[0] != CID_VERSION || b[1] != CODEC_DAG || b[2] != SHA256_CODE || b[3] != 32 {
            return Err(DagError::InvalidCid("unsupported version, codec or hash".into()));
        }
        Ok(Cid { version: b[0], codec: b[1], digest: b[4..].try_into().expect("32 bytes") })
    }
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", BASE32_NOPAD.encode(&self.to_bytes()).to_ascii_lowercase())
    }
}

impl fmt::Debug for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cid({self})")
    }
}

impl FromStr for Cid {
    type Err = DagError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s.strip_prefix('b').ok_or_else(|| DagError::InvalidCid(format!("{s:?} lacks the base32 prefix 'b'")))?;
        if body.bytes().any(|c| c.is_ascii_uppercase()) {
            return Err(DagError::InvalidCid("base32 body must be lowercase".into()));
        }
        let bytes = BASE32_NOPAD
            .decode(body.to_ascii_uppercase().as_bytes())
            .map_err(|e| DagError::InvalidCid(format!("{s:?}: {e}")))?;
        Cid::from_bytes(&bytes)
    }
}

impl Serialize for Cid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Cid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DagLink {
    pub name: String,
    pub cid: Cid,
    pub size: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DagNode {
    pub links: Vec<DagLink>,
    pub data: Vec<u8>,
}

impl DagNode {
    pub fn leaf(data: &[u8]) -> Self {
        DagNode { links: Vec::new(), data: data.to_vec() }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.links.len() * 48 + 8 + self.data.len());
        out.extend_from_slice(&(self.links.len() as u32).to_be_bytes());
        for l in &self.links {
            out.extend_from_slice(&(l.name.len() as u16).to_be_bytes());
            out.extend_from_slice(l.name.as_bytes());
            out.extend_from_slice(&l.cid.to_bytes());
            out.extend_from_slice(&l.size.to_be_bytes());
        }
        out.extend_from_slice(&(self.data.len() as u64).to_be_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DagError> {
        struct R<'a>(&'a [u8]);
        impl<'a> R<'a> {
            fn take(&mut self, n: usize) -> Result<&'a [u8], DagError> {
                if self.0.len() < n {
                    return Err(DagError::Decode("truncated".into()));
                }
                let (a, b) = self.0.split_at(n);
                self.0 = b;
                Ok(a)
            }
            fn u16(&mut self) -> Result<u16, DagError> {
                Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2")))
            }
            fn u32(&mut self) -> Result<u32, DagError> {
                Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4")))
            }
            fn u64(&mut self) -> Result<u64, DagError> {
                Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8")))
            }
        }
        let mut r = R(bytes);
        let count = r.u32()? as usize;
        let mut links = Vec::with_capacity(count.min(FANOUT));
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| DagError::Decode("link name not UTF-8".into()))?;
            let cid = Cid::from_bytes(r.take(CID_BYTES)?)?;
            links.push(DagLink { name, cid, size: r.u64()? });
        }
        let dlen = usize::try_from(r.u64()?).map_err(|_| DagError::Decode("data length".into()))?;
        let data = r.take(dlen)?.to_vec();
        if !r.0.is_empty() {
            return Err(DagError::Decode("trailing bytes".into()));
        }
        Ok(DagNode { links, data })
    }

    pub fn cid(&self) -> Cid {
        Cid::for_node_bytes(&self.encode())
    }

    /// Payload bytes under this node.
    pub fn total_size(&self) -> u64 {
        self.data.len() as u64 + self.links.iter().map(|l| l.size).sum::<u64>()
    }
}

/// Storage for encoded nodes and token state.
pub trait Backend: Send + Sync {
    fn put_block(&self, cid: &Cid, bytes: &[u8]) -> Result<(), DagError>;
    fn get_block(&self, cid: &Cid) -> Result<Option<Vec<u8>>, DagError>;
    fn delete_block(&self, cid: &Cid) -> Result<bool, DagError>;
    fn create_token(&self, token_id: &str, target: &Cid) -> Result<(), DagError>;
    /// Atomically moves an open token to redeemed, returning its target.
    fn redeem_token(&self, token_id: &str) -> Result<Cid, DagError>;
    fn token_state(&self, token_id: &str) -> Result<Option<(Cid, TokenState)>, DagError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenState {
    Unredeemed,
    Redeemed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneTimeToken {
    pub token_id: String,
    pub target: Cid,
    pub state: TokenState,
}

#[derive(Default)]
pub struct MemoryBackend {
    blocks: RwLock<HashMap<Cid, Vec<u8>>>,
    tokens: Mutex<HashMap<String, (Cid, TokenState)>>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Overwrites a stored block without re-hashing; for fault injection.
    pub fn overwrite_block(&self, cid: &Cid, bytes: Vec<u8>) {
        self.blocks.write().expect("lock").insert(*cid, bytes);
    }
}

impl Backend for MemoryBackend {
    fn put_block(&self, cid: &Cid, bytes: &[u8]) -> Result<(), DagError> {
        self.blocks.write().expect("lock").entry(*cid).or_insert_with(|| bytes.to_vec());
        Ok(())
    }

    fn get_block(&self, cid: &Cid) -> Result<Option<Vec<u8>>, DagError> {
        Ok(self.blocks.read().expect("lock").get(cid).cloned())
    }

    fn delete_block(&self, cid: &Cid) -> Result<bool, DagError> {
        Ok(self.blocks.write().expect("lock").remove(cid).is_some())
    }

    fn create_token(&self, token_id: &str, target: &Cid) -> Result<(), DagError> {
        self.tokens.lock().expect("lock").insert(token_id.to_string(), (*target, TokenState::Unredeemed));
        Ok(())
    }

    fn redeem_token(&self, token_id: &str) -> Result<Cid, DagError> {
        let mut tokens = self.tokens.lock().expect("lock");
        match tokens.get_mut(token_id) {
            None => Err(DagError::NotFound(format!("token {token_id}"))),
            Some((_, TokenState::Redeemed)) => Err(DagError::Expired(token_id.to_string())),
            Some((cid, state)) => {
                *state = TokenState::Redeemed;
                Ok(*cid)
            }
        }
    }

    fn token_state(&self, token_id: &str) -> Result<Option<(Cid, TokenState)>, DagError> {
        Ok(self.tokens.lock().expect("lock").get(token_id).copied())
    }
}

/// One file per node under `root/blocks`, one file per token under
/// `root/tokens`.
pub struct FsBackend {
    root: PathBuf,
}

impl FsBackend {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, DagError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("blocks"))?;
        fs::create_dir_all(root.join("tokens"))?;
        Ok(FsBackend { root })
    }

    pub fn block_path(&self, cid: &Cid) -> PathBuf {
        self.root.join("blocks").join(cid.to_string())
    }

    fn token_path(&self, token_id: &str, state: TokenState) -> Result<PathBuf, DagError> {
        if token_id.is_empty() || !token_id.bytes().all(|b| b.is_ascii_alphanumeric()) {
            return Err(DagError::NotFound(format!("token {token_id}")));
        }
        let ext = match state {
            TokenState::Unredeemed => "open",
            TokenState::Redeemed => "redeemed",
        };
        Ok(self.root.join("tokens").join(format!("{token_id}.{ext}")))
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), DagError> {
        let tmp = path.with_extension(format!("tmp{}", OsRng.next_u64()));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

impl Backend for FsBackend {
    fn put_block(&self, cid: &Cid, bytes: &[u8]) -> Result<(), DagError> {
        let path = self.block_path(cid);
        if path.exists() {
            return Ok(());
        }
        self.write_atomic(&path, bytes)
    }

    fn get_block(&self, cid: &Cid) -> Result<Option<Vec<u8>>, DagError> {
        match fs::read(self.block_path(cid)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn delete_block(&self, cid: &Cid) -> Result<bool, DagError> {
        match fs::remove_file(self.block_path(cid)) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    fn create_token(&self, token_id: &str, target: &Cid) -> Result<(), DagError> {
        let path = self.token_path(token_id, TokenState::Unredeemed)?;
        self.write_atomic(&path, target.to_string().as_bytes())
    }

    fn redeem_token(&self, token_id: &str) -> Result<Cid, DagError> {
        let open = self.token_path(token_id, TokenState::Unredeemed)?;
        let done = self.token_path(token_id, TokenState::Redeemed)?;
        // rename is atomic: exactly one concurrent caller wins
        match fs::rename(&open, &done) {
            Ok(()) => {
                let text = fs::read_to_string(&done)?;
                text.trim().parse()
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                if done.exists() {
                    Err(DagError::Expired(token_id.to_string()))
                } else {
                    Err(DagError::NotFound(format!("token {token_id}")))
                }
            }
            Err(e) => Err(e.into()),
        }
    }

    fn token_state(&self, token_id: &str) -> Result<Option<(Cid, TokenState)>, DagError> {
        for state in [TokenState::Unredeemed, TokenState::Redeemed] {
            let path = self.token_path(token_id, state)?;
            match fs::read_to_string(&path) {
                Ok(text) => return Ok(Some((text.trim().parse()?, state))),
                Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(None)
    }
}

pub struct DagStore<B: Backend> {
    backend: B,
}

impl DagStore<MemoryBackend> {
    pub fn in_memory() -> Self {
        DagStore { backend: MemoryBackend::new() }
    }
}

impl DagStore<FsBackend> {
    pub fn on_disk(root: impl AsRef<Path>) -> Result<Self, DagError> {
        Ok(DagStore { backend: FsBackend::open(root)? })
    }
}

impl<B: Backend> DagStore<B> {
    pub fn new(backend: B) -> Self {
        DagStore { backend }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    fn put_node(&self, node: &DagNode) -> Result<Cid, DagError> {
        let bytes = node.encode();
        let cid = Cid::for_node_bytes(&bytes);
        self.backend.put_block(&cid, &bytes)?;
        Ok(cid)
    }

    /// Fetches and re-verifies one node.
    pub fn get_node(&self, cid: &Cid) -> Result<DagNode, DagError> {
        let bytes = self.backend.get_block(cid)?.ok_or_else(|| DagError::NotFound(cid.to_string()))?;
        if Cid::for_node_bytes(&bytes) != *cid {
            return Err(DagError::Integrity(cid.to_string()));
        }
        DagNode::decode(&bytes)
    }

    pub fn contains(&self, cid: &Cid) -> Result<bool, DagError> {
        Ok(self.backend.get_block(cid)?.is_some())
    }

    pub fn put_blob(&self, bytes: &[u8]) -> Result<Cid, DagError> {
        let mut level: Vec<DagLink> = if bytes.is_empty() {
            vec![DagLink { name: String::new(), cid: self.put_node(&DagNode::leaf(&[]))?, size: 0 }]
        } else {
            bytes
                .chunks(CHUNK_SIZE)
                .map(|c| Ok(DagLink { name: String::new(), cid: self.put_node(&DagNode::leaf(c))?, size: c.len() as u64 }))
                .collect::<Result<_, DagError>>()?
        };
        while level.len() > 1 {
            level = level
                .chunks(FANOUT)
                .map(|group| {
                    let node = DagNode { links: group.to_vec(), data: Vec::new() };
                    Ok(DagLink { name: String::new(), cid: self.put_node(&node)?, size: node.total_size() })
                })
                .collect::<Result<_, DagError>>()?;
        }
        Ok(level[0].cid)
    }

    pub fn get_blob(&self, root: &Cid) -> Result<Vec<u8>, DagError> {
        let mut out = Vec::new();
        let mut stack = vec![*root];
        while let Some(cid) = stack.pop() {
            let node = self.get_node(&cid)?;
            out.extend_from_slice(&node.data);
            stack.extend(node.links.iter().rev().map(|l| l.cid));
        }
        Ok(out)
    }

    /// Leaf Cids of a blob in order.
    pub fn leaves(&self, root: &Cid) -> Result<Vec<Cid>, DagError> {
        let mut out = Vec::new();
        let mut stack = vec![*root];
        while let Some(cid) = stack.pop() {
            let node = self.get_node(&cid)?;
            if node.links.is_empty() {
                out.push(cid);
            }
            stack.extend(node.links.iter().rev().map(|l| l.cid));
        }
        Ok(out)
    }

    pub fn issue_token(&self, target: &Cid) -> Result<OneTimeToken, DagError> {
        if !self.contains(target)? {
            return Err(DagError::NotFound(target.to_string()));
        }
        let mut id = [0u8; 16];
        OsRng.fill_bytes(&mut id);
        let token_id = hex::encode(id);
        self.backend.create_token(&token_id, target)?;
        Ok(OneTimeToken { token_id, target: *target, state: TokenState::Unredeemed })
    }

    /// Marks the token redeemed, then returns the blob. The token is spent
    /// even if the blob turns out to be missing or corrupt.
    pub fn redeem_token(&self, token_id: &str) -> Result<Vec<u8>, DagError> {
        let target = self.backend.redeem_token(token_id)?;
        self.get_blob(&target)
    }

    pub fn token(&self, token_id: &str) -> Result<OneTimeToken, DagError> {
        let (target, state) = self.backend.token_state(token_id)?.ok_or_else(|| DagError::NotFound(format!("token {token_id}")))?;
        Ok(OneTimeToken { token_id: token_id.to_string(), target, state })
    }
}
