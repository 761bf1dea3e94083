//! Append-only, hash-chained block ledger with gas accounting.
//!
//! Canonical block bytes (all integers big-endian):
//!
//! ```text
//! u32 version (=1) | u64 index | i64 timestamp_ms | [32] prev_hash | u32 tx_count | tx*
//! tx = u32 len | from_account utf-8 | u32 len | to_account utf-8
//!    | u64 amount_paise | u64 gas | [32] payload_hash | i64 timestamp_ms
//! ```
//!
//! A block hash is SHA-256 over those bytes; a transaction id is SHA-256 over
//! the transaction's own canonical bytes. Gas is reported, never debited.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const HASH_LEN: usize = 32;
pub const BLOCK_VERSION: u32 = 1;
pub const GAS_BASE: u64 = 21_000;
pub const GAS_PER_PAYLOAD_BYTE: u64 = 16;

const CHAIN_FILE: &str = "chain.ndjson";
const GENESIS_FILE: &str = "genesis.json";

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("block must contain at least one transaction")]
    EmptyBlock,
    #[error("insufficient balance in `{account}`: needs {needed} paise, has {available}")]
    InsufficientBalance { account: String, needed: u64, available: u64 },
    #[error("transaction id does not match its contents")]
    MalformedTransaction,
    #[error("balance overflow in `{0}`")]
    Overflow(String),
    #[error("no block at index {0}")]
    NoSuchBlock(u64),
    #[error("invalid hash: {0}")]
    InvalidHash(String),
    #[error("corrupt chain file {path}:{line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("malformed block record: {0}")]
    Decode(String),
    #[error("storage error: {0}")]
    Io(#[from] std::io::Error),
}

/// SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Hash32(pub [u8; HASH_LEN]);

impl Hash32 {
    pub const ZERO: Hash32 = Hash32([0; HASH_LEN]);

    pub fn digest(bytes: &[u8]) -> Self {
        Hash32(Sha256::digest(bytes).into())
    }

    pub fn as_bytes(&self) -> &[u8; HASH_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, LedgerError> {
        let mut out = [0u8; HASH_LEN];
        hex::decode_to_slice(s, &mut out).map_err(|e| LedgerError::InvalidHash(format!("{s}: {e}")))?;
        Ok(Hash32(out))
    }
}

impl fmt::Display for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash32({})", &self.to_hex()[..16])
    }
}

impl Serialize for Hash32 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Hash32 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Hash32::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Gas charged for a transaction carrying `payload_len` bytes.
pub fn compute_gas(payload_len: usize) -> u64 {
    GAS_BASE + GAS_PER_PAYLOAD_BYTE * payload_len as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transaction {
    pub tx_id: Hash32,
    pub from_account: String,
    pub to_account: String,
    pub amount_paise: u64,
    pub gas: u64,
    pub payload_hash: Hash32,
    pub timestamp_ms: i64,
}

impl Transaction {
    /// Builds a transaction whose gas and payload hash derive from `payload`.
    pub fn new(
        from_account: impl Into<String>,
        to_account: impl Into<String>,
        amount_paise: u64,
        payload: &[u8],
        timestamp_ms: i64,
    ) -> Self {
        let mut tx = Transaction {
            tx_id: Hash32::ZERO,
            from_account: from_account.into(),
            to_account: to_account.into(),
            amount_paise,
            gas: compute_gas(payload.len()),
            payload_hash: Hash32::digest(payload),
            timestamp_ms,
        };
        tx.tx_id = tx.compute_id();
        tx
    }

    pub fn write_canonical(&self, out: &mut Vec<u8>) {
        for account in [&self.from_account, &self.to_account] {
            out.extend_from_slice(&(account.len() as u32).to_be_bytes());
            out.extend_from_slice(account.as_bytes());
        }
        out.extend_from_slice(&self.amount_paise.to_be_bytes());
        out.extend_from_slice(&self.gas.to_be_bytes());
        out.extend_from_slice(self.payload_hash.as_bytes());
        out.extend_from_slice(&self.timestamp_ms.to_be_bytes());
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_canonical(&mut out);
        out
    }

    pub fn compute_id(&self) -> Hash32 {
        Hash32::digest(&self.canonical_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub index: u64,
    pub timestamp_ms: i64,
    pub prev_hash: Hash32,
    pub transactions: Vec<Transaction>,
    pub gas_total: u64,
    pub hash: Hash32,
}

impl Block {
    /// Block 0: no transactions, zero parent.
    pub fn genesis(timestamp_ms: i64) -> Self {
        Self::seal(0, timestamp_ms, Hash32::ZERO, Vec::new())
    }

    /// Assembles a block and fills in `gas_total` and `hash`.
    pub fn seal(index: u64, timestamp_ms: i64, prev_hash: Hash32, transactions: Vec<Transaction>) -> Self {
        let gas_total = transactions.iter().map(|t| t.gas).sum();
        let mut block = Block { index, timestamp_ms, prev_hash, transactions, gas_total, hash: Hash32::ZERO };
        block.hash = block.compute_hash();
        block
    }

    /// Canonical bytes of everything but `gas_total` and `hash`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(52 + self.transactions.len() * 120);
        out.extend_from_slice(&BLOCK_VERSION.to_be_bytes());
        out.extend_from_slice(&self.index.to_be_bytes());
        out.extend_from_slice(&self.timestamp_ms.to_be_bytes());
        out.extend_from_slice(self.prev_hash.as_bytes());
        out.extend_from_slice(&(self.transactions.len() as u32).to_be_bytes());
        for tx in &self.transactions {
            tx.write_canonical(&mut out);
        }
        out
    }

    pub fn compute_hash(&self) -> Hash32 {
        Hash32::digest(&self.canonical_bytes())
    }

    /// Full binary record of a committed block: the canonical bytes followed by
    /// `u64 gas_total`, every `tx_id`, and the block hash.
    pub fn to_record_bytes(&self) -> Vec<u8> {
        let mut out = self.canonical_bytes();
        out.extend_from_slice(&self.gas_total.to_be_bytes());
        for tx in &self.transactions {
            out.extend_from_slice(tx.tx_id.as_bytes());
        }
        out.extend_from_slice(self.hash.as_bytes());
        out
    }

    pub fn from_record_bytes(bytes: &[u8]) -> Result<Self, LedgerError> {
        let mut r = Reader { bytes, pos: 0 };
        let version = r.u32()?;
        if version != BLOCK_VERSION {
            return Err(LedgerError::Decode(format!("unsupported version {version}")));
        }
        let index = r.u64()?;
        let timestamp_ms = r.i64()?;
        let prev_hash = r.hash()?;
        let count = r.u32()? as usize;
        let mut transactions = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let from_account = r.string()?;
            let to_account = r.string()?;
            transactions.push(Transaction {
                tx_id: Hash32::ZERO,
                from_account,
                to_account,
                amount_paise: r.u64()?,
                gas: r.u64()?,
                payload_hash: r.hash()?,
                timestamp_ms: r.i64()?,
            });
        }
        let gas_total = r.u64()?;
        for tx in &mut transactions {
            tx.tx_id = r.hash()?;
        }
        let hash = r.hash()?;
        if r.pos != bytes.len() {
            return Err(LedgerError::Decode(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Block { index, timestamp_ms, prev_hash, transactions, gas_total, hash })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], LedgerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| LedgerError::Decode(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], LedgerError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, LedgerError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, LedgerError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    fn i64(&mut self) -> Result<i64, LedgerError> {
        Ok(i64::from_be_bytes(self.array()?))
    }

    fn hash(&mut self) -> Result<Hash32, LedgerError> {
        Ok(Hash32(self.array()?))
    }

    fn string(&mut self) -> Result<String, LedgerError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| LedgerError::Decode(e.to_string()))
    }
}

/// Why a block failed verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TamperKind {
    IndexMismatch,
    BrokenLink,
    TransactionId,
    GasTotal,
    BlockHash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize)]
#[error("block {index} failed verification ({kind:?})")]
pub struct Tampered {
    pub index: u64,
    pub kind: TamperKind,
}

/// Recomputes every hash and link; reports the smallest failing index.
pub fn verify_blocks(blocks: &[Block]) -> Result<(), Tampered> {
    for (i, block) in blocks.iter().enumerate() {
        let bad = |kind| Err(Tampered { index: i as u64, kind });
        if block.index != i as u64 {
            return bad(TamperKind::IndexMismatch);
        }
        let expected_prev = if i == 0 { Hash32::ZERO } else { blocks[i - 1].hash };
        if block.prev_hash != expected_prev {
            return bad(TamperKind::BrokenLink);
        }
        if block.transactions.iter().any(|tx| tx.tx_id != tx.compute_id()) {
            return bad(TamperKind::TransactionId);
        }
        let gas: Option<u64> = block.transactions.iter().try_fold(0u64, |acc, tx| acc.checked_add(tx.gas));
        if gas != Some(block.gas_total) {
            return bad(TamperKind::GasTotal);
        }
        if block.hash != block.compute_hash() {
            return bad(TamperKind::BlockHash);
        }
    }
    Ok(())
}

/// Initial state of a chain: genesis timestamp and opening balances.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenesisConfig {
    pub timestamp_ms: i64,
    #[serde(default)]
    pub allocations: BTreeMap<String, u64>,
}

/// Applies the balance effects of `txs` to `balances`, all or nothing.
fn apply_transfers(balances: &mut BTreeMap<String, u64>, txs: &[Transaction]) -> Result<(), LedgerError> {
    let mut next = balances.clone();
    for tx in txs {
        let available = next.get(&tx.from_account).copied().unwrap_or(0);
        let remaining = available.checked_sub(tx.amount_paise).ok_or_else(|| LedgerError::InsufficientBalance {
            account: tx.from_account.clone(),
            needed: tx.amount_paise,
            available,
        })?;
        next.insert(tx.from_account.clone(), remaining);
        let to = next.entry(tx.to_account.clone()).or_insert(0);
        *to = to.checked_add(tx.amount_paise).ok_or_else(|| LedgerError::Overflow(tx.to_account.clone()))?;
    }
    *balances = next;
    Ok(())
}

/// Single-writer chain with account balances, optionally persisted to a directory.
#[derive(Debug)]
pub struct Chain {
    genesis: GenesisConfig,
    blocks: Vec<Block>,
    balances: BTreeMap<String, u64>,
    file: Option<File>,
}

impl Chain {
    pub fn new(genesis: GenesisConfig) -> Self {
        let blocks = vec![Block::genesis(genesis.timestamp_ms)];
        let balances = genesis.allocations.clone();
        Chain { genesis, blocks, balances, file: None }
    }

    /// Opens a persisted chain, creating it from `default_genesis` if the directory is new.
    pub fn open(dir: impl AsRef<Path>, default_genesis: GenesisConfig) -> Result<Self, LedgerError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let genesis_path = dir.join(GENESIS_FILE);
        let chain_path = dir.join(CHAIN_FILE);
        let genesis = if genesis_path.exists() {
            let text = fs::read_to_string(&genesis_path)?;
            serde_json::from_str(&text).map_err(|e| LedgerError::Corrupt {
                path: genesis_path.clone(),
                line: 1,
                reason: e.to_string(),
            })?
        } else {
            fs::write(&genesis_path, serde_json::to_vec_pretty(&default_genesis).expect("genesis serializes"))?;
            default_genesis
        };
        let mut chain = Chain::new(genesis);
        if chain_path.exists() {
            let blocks = read_blocks(&chain_path)?;
            let corrupt = |line: usize, reason: String| LedgerError::Corrupt { path: chain_path.clone(), line, reason };
            if let Some(first) = blocks.first() {
                if *first != chain.blocks[0] {
                    return Err(corrupt(1, "genesis block does not match genesis.json".into()));
                }
            }
            for (i, block) in blocks.into_iter().enumerate().skip(1) {
                apply_transfers(&mut chain.balances, &block.transactions).map_err(|e| corrupt(i + 1, e.to_string()))?;
                chain.blocks.push(block);
            }
            chain.file = Some(OpenOptions::new().append(true).open(&chain_path)?);
        } else {
            let mut file = OpenOptions::new().create(true).append(true).open(&chain_path)?;
            write_block_line(&mut file, &chain.blocks[0])?;
            chain.file = Some(file);
        }
        Ok(chain)
    }

    pub fn genesis_config(&self) -> &GenesisConfig {
        &self.genesis
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, index: u64) -> Option<&Block> {
        self.blocks.get(usize::try_from(index).ok()?)
    }

    pub fn head(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn balance(&self, account: &str) -> Option<u64> {
        self.balances.get(account).copied()
    }

    pub fn balances(&self) -> &BTreeMap<String, u64> {
        &self.balances
    }

    /// Appends a block holding `transactions`; balances move atomically with the append.
    pub fn add_block(&mut self, transactions: Vec<Transaction>, timestamp_ms: i64) -> Result<&Block, LedgerError> {
        if transactions.is_empty() {
            return Err(LedgerError::EmptyBlock);
        }
        if transactions.iter().any(|tx| tx.tx_id != tx.compute_id()) {
            return Err(LedgerError::MalformedTransaction);
        }
        let mut balances = self.balances.clone();
        apply_transfers(&mut balances, &transactions)?;
        let head = self.head();
        let block = Block::seal(head.index + 1, timestamp_ms, head.hash, transactions);
        if let Some(file) = self.file.as_mut() {
            write_block_line(file, &block)?;
        }
        self.balances = balances;
        self.blocks.push(block);
        Ok(self.head())
    }

    pub fn verify(&self) -> Result<(), Tampered> {
        verify_blocks(&self.blocks)
    }

    /// Locates a transaction by id: `(block index, position in block)`.
    pub fn find_transaction(&self, tx_id: &Hash32) -> Option<(u64, usize)> {
        self.blocks.iter().find_map(|b| {
            b.transactions.iter().position(|t| &t.tx_id == tx_id).map(|pos| (b.index, pos))
        })
    }

    pub fn flush(&self) -> Result<(), LedgerError> {
        if let Some(file) = &self.file {
            file.sync_data()?;
        }
        Ok(())
    }
}

fn write_block_line(file: &mut File, block: &Block) -> Result<(), LedgerError> {
    let mut line = serde_json::to_vec(block).expect("block serializes");
    line.push(b'\n');
    file.write_all(&line)?;
    Ok(())
}

/// Parses a chain NDJSON file without verifying it.
pub fn read_blocks(path: impl AsRef<Path>) -> Result<Vec<Block>, LedgerError> {
    let path = path.as_ref();
    let mut blocks = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let block = serde_json::from_str(&line).map_err(|e| LedgerError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        blocks.push(block);
    }
    Ok(blocks)
}

/// Path of the chain log inside a ledger directory.
pub fn chain_file(dir: impl AsRef<Path>) -> PathBuf {
    dir.as_ref().join(CHAIN_FILE)
}
