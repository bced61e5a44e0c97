use std::collections::{BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::accounts::{AccountState, RewardParams};
use super::block::Block;
use super::types::{CiphertextBatch, DataPointer, Task, TaskId};
use super::LedgerError;
use crate::codec::Canonical;
use crate::hash::Hash256;

/// How many heights back a winner may cite an ommer.
pub const OMMER_WINDOW: u64 = 6;

/// A validated chain together with the account state at its head.
#[derive(Debug, Clone)]
pub struct Chain {
    blocks: Vec<Block>,
    hashes: Vec<Hash256>,
    state: AccountState,
    params: RewardParams,
    cited_ommers: HashSet<Hash256>,
    solved: BTreeSet<TaskId>,
}

impl Chain {
    pub fn new(
        genesis: Block,
        initial: AccountState,
        params: RewardParams,
    ) -> Result<Self, LedgerError> {
        if genesis.header.height != 0 || genesis.header.prev_hash != Hash256::ZERO {
            return Err(LedgerError::InvalidBlock(
                "genesis must be height 0 with a zero parent",
            ));
        }
        if initial.next_height() != 0 {
            return Err(LedgerError::InvalidBlock(
                "initial state already has blocks",
            ));
        }
        let mut chain = Chain {
            blocks: Vec::new(),
            hashes: Vec::new(),
            state: initial,
            params,
            cited_ommers: HashSet::new(),
            solved: BTreeSet::new(),
        };
        genesis.check_merkle()?;
        chain.check_task_ids_unique(&genesis)?;
        chain.check_pointers(&genesis)?;
        let state = chain.state.apply_block(&genesis, &params)?;
        state.check_solvency()?;
        chain.state = state;
        chain.hashes.push(genesis.hash());
        chain.blocks.push(genesis);
        Ok(chain)
    }

    /// Replays `blocks` from `initial`, validating every link.
    pub fn from_blocks(
        blocks: Vec<Block>,
        initial: AccountState,
        params: RewardParams,
    ) -> Result<Self, LedgerError> {
        let mut iter = blocks.into_iter();
        let genesis = iter
            .next()
            .ok_or(LedgerError::InvalidBlock("empty chain"))?;
        let mut chain = Chain::new(genesis, initial, params)?;
        for b in iter {
            chain.append(b)?;
        }
        Ok(chain)
    }

    pub fn head(&self) -> &Block {
        self.blocks.last().unwrap()
    }

    pub fn head_hash(&self) -> Hash256 {
        *self.hashes.last().unwrap()
    }

    pub fn height(&self) -> u64 {
        self.head().header.height
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.blocks.get(height as usize)
    }

    pub fn block_hash(&self, height: u64) -> Option<Hash256> {
        self.hashes.get(height as usize).copied()
    }

    pub fn state(&self) -> &AccountState {
        &self.state
    }

    pub fn params(&self) -> &RewardParams {
        &self.params
    }

    pub fn pending_tasks(&self) -> &[Task] {
        self.blocks
            .last()
            .map_or(&[][..], |b| &b.body.pending_tasks)
    }

    pub fn pending_task(&self, id: TaskId) -> Option<&Task> {
        self.pending_tasks().iter().find(|t| t.id == id)
    }

    pub fn is_ommer_cited(&self, hash: &Hash256) -> bool {
        self.cited_ommers.contains(hash)
    }

    pub fn is_solved(&self, id: TaskId) -> bool {
        self.solved.contains(&id)
    }

    pub fn resolve(&self, ptr: DataPointer) -> Result<&CiphertextBatch, LedgerError> {
        self.block(ptr.height)
            .and_then(|b| b.body.new_ciphertext_data.get(ptr.index as usize))
            .ok_or(LedgerError::DanglingPointer(ptr))
    }

    /// Every ciphertext batch a task points at, in pointer order.
    pub fn training_batches(&self, task: &Task) -> Result<Vec<&CiphertextBatch>, LedgerError> {
        task.data_pointers
            .iter()
            .map(|&p| self.resolve(p))
            .collect()
    }

    fn check_task_ids_unique(&self, block: &Block) -> Result<(), LedgerError> {
        let mut seen = BTreeSet::new();
        for t in &block.body.pending_tasks {
            if !seen.insert(t.id) || self.solved.contains(&t.id) {
                return Err(LedgerError::TaskConservation {
                    height: block.header.height,
                });
            }
            t.validate().map_err(LedgerError::InvalidBlock)?;
        }
        Ok(())
    }

    /// Pointers of newly included tasks must land in this block or an
    /// earlier one, on a batch posted for that task.
    fn check_pointers(&self, block: &Block) -> Result<(), LedgerError> {
        let h = block.header.height;
        for t in &block.body.pending_tasks {
            if self.pending_task(t.id).is_some() && h > 0 {
                continue;
            }
            if t.data_pointers.is_empty() {
                return Err(LedgerError::InvalidBlock("task without training data"));
            }
            for &p in &t.data_pointers {
                let batch = if p.height == h {
                    block.body.new_ciphertext_data.get(p.index as usize)
                } else if p.height < h {
                    self.resolve(p).ok()
                } else {
                    None
                }
                .ok_or(LedgerError::DanglingPointer(p))?;
                if batch.task_id != t.id || batch.ciphertexts.iter().any(|c| c.dim() != t.sml.dim) {
                    return Err(LedgerError::DanglingPointer(p));
                }
            }
        }
        Ok(())
    }

    /// Structural checks for a block extending the head; returns the
    /// resulting account state. Consensus-level checks (SML binding,
    /// accuracy, timestamps) live in the consensus module.
    pub fn validate_extension(&self, block: &Block) -> Result<AccountState, LedgerError> {
        let h = &block.header;
        let expected = self.height() + 1;
        if h.height != expected {
            return Err(LedgerError::HeightMismatch {
                expected,
                actual: h.height,
            });
        }
        if h.prev_hash != self.head_hash() {
            return Err(LedgerError::PrevHashMismatch { height: h.height });
        }
        block.check_merkle()?;
        let solved = h.task_id.ok_or(LedgerError::InvalidBlock(
            "non-genesis block without a task",
        ))?;
        let parent_pending = self.pending_tasks();
        if !parent_pending.iter().any(|t| t.id == solved) {
            return Err(LedgerError::UnknownTask(solved));
        }
        match &block.body.test_data {
            Some(td) if td.task_id == solved => {}
            _ => {
                return Err(LedgerError::InvalidBlock(
                    "finalized block must carry its task's test set",
                ))
            }
        }
        // child = parent - {solved} + new, with surviving entries unchanged.
        self.check_task_ids_unique(block)?;
        let child = &block.body.pending_tasks;
        if child.iter().any(|t| t.id == solved) {
            return Err(LedgerError::TaskConservation { height: h.height });
        }
        for t in parent_pending.iter().filter(|t| t.id != solved) {
            if !child.iter().any(|c| c == t) {
                return Err(LedgerError::TaskConservation { height: h.height });
            }
        }
        self.check_pointers(block)?;
        let mut cited = BTreeSet::new();
        for o in &block.body.ommers {
            if o.height >= h.height || h.height - o.height > OMMER_WINDOW {
                return Err(LedgerError::InvalidOmmer("ommer height outside the window"));
            }
            if !cited.insert(o.height) {
                return Err(LedgerError::InvalidOmmer("more than one ommer per height"));
            }
            if self.cited_ommers.contains(&o.block_hash) {
                return Err(LedgerError::InvalidOmmer("ommer already cited"));
            }
            if o.ommer_count == 0 {
                return Err(LedgerError::InvalidOmmer("ommer count must be at least 1"));
            }
        }
        let state = self.state.apply_block(block, &self.params)?;
        state.check_solvency()?;
        Ok(state)
    }

    pub fn append(&mut self, block: Block) -> Result<(), LedgerError> {
        self.state = self.validate_extension(&block)?;
        self.cited_ommers
            .extend(block.body.ommers.iter().map(|o| o.block_hash));
        if let Some(t) = block.header.task_id {
            self.solved.insert(t);
        }
        self.hashes.push(block.hash());
        self.blocks.push(block);
        Ok(())
    }

    /// Canonical bytes of every block, in order.
    pub fn to_bytes(&self) -> Vec<Vec<u8>> {
        self.blocks.iter().map(|b| b.to_canonical_bytes()).collect()
    }

    pub fn write_file(&self, path: &Path) -> Result<(), LedgerError> {
        let mut w = ChainFileWriter::create(path)?;
        for b in &self.blocks {
            w.append(b)?;
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LedgerError + '_ {
    move |source| LedgerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Append-only chain file: each record is a big-endian `u32` length
/// followed by a block's canonical bytes.
pub struct ChainFileWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl ChainFileWriter {
    pub fn create(path: &Path) -> Result<Self, LedgerError> {
        let file = File::create(path).map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn open_append(path: &Path) -> Result<Self, LedgerError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, block: &Block) -> Result<(), LedgerError> {
        let bytes = block.to_canonical_bytes();
        let len = u32::try_from(bytes.len())
            .map_err(|_| LedgerError::InvalidBlock("block larger than 4 GiB"))?;
        let path = self.path.clone();
        self.out
            .write_all(&len.to_be_bytes())
            .and_then(|_| self.out.write_all(&bytes))
            .and_then(|_| self.out.flush())
            .map_err(io_err(&path))
    }
}

pub fn read_chain_file(path: &Path) -> Result<Vec<Block>, LedgerError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    let mut blocks = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let header = bytes
            .get(pos..pos + 4)
            .ok_or(LedgerError::InvalidBlock("truncated record length"))?;
        let len = u32::from_be_bytes(header.try_into().unwrap()) as usize;
        pos += 4;
        let record = bytes
            .get(pos..pos + len)
            .ok_or(LedgerError::InvalidBlock("truncated block record"))?;
        blocks.push(Block::from_canonical_bytes(record)?);
        pos += len;
    }
    Ok(blocks)
}
