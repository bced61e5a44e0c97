use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{Canonical, CodecError, Reader, Writer};
use crate::fe::{Ciphertext, Discretization, GroupParams};
use crate::hash::Hash256;
use crate::nn::ModelSpec;
use crate::sml::SmlShape;
use crate::time::SimTime;

pub const UNITS_PER_TOKEN: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccountId(pub u32);

/// Escrow account holding posted task rewards until they are paid out.
pub const RESERVOIR: AccountId = AccountId(u32::MAX);

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == RESERVOIR {
            f.write_str("reservoir")
        } else {
            write!(f, "#{}", self.0)
        }
    }
}

impl Canonical for AccountId {
    fn encode(&self, w: &mut Writer) {
        w.put_u32(self.0);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.get_u32().map(AccountId)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task-{}", self.0)
    }
}

impl Canonical for TaskId {
    fn encode(&self, w: &mut Writer) {
        w.put_u64(self.0);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.get_u64().map(TaskId)
    }
}

/// Location of a ciphertext batch: `new_ciphertext_data[index]` of the block
/// at `height`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DataPointer {
    pub height: u64,
    pub index: u32,
}

impl Canonical for DataPointer {
    fn encode(&self, w: &mut Writer) {
        w.put_u64(self.height);
        w.put_u32(self.index);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            height: r.get_u64()?,
            index: r.get_u32()?,
        })
    }
}

/// A training task as carried in the pending list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub poster: AccountId,
    /// Base units moved into escrow when the task is first included.
    pub reward: u64,
    pub data_pointers: Vec<DataPointer>,
    pub model_spec: ModelSpec,
    pub disc: Discretization,
    pub sml: SmlShape,
    pub group: GroupParams,
}

impl Task {
    /// Reward per simulated second of allowed training.
    pub fn priority(&self) -> f64 {
        self.reward as f64 / self.model_spec.time_limit
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if self.reward == 0 {
            return Err("task reward must be positive");
        }
        self.model_spec
            .validate()
            .map_err(|_| "invalid model spec")?;
        self.disc.validate().map_err(|_| "invalid discretization")?;
        self.sml.validate().map_err(|_| "invalid SML shape")?;
        if self.model_spec.input_dim() != self.sml.queries {
            return Err("network input width must equal the SML query count");
        }
        let bound = self.sml.decryption_bound(self.disc.xmax);
        if bound >= self.group.order() {
            return Err("inner-product bound exceeds the group order");
        }
        Ok(())
    }
}

/// Highest [`Task::priority`] first; equal priorities go to the lower id.
pub fn most_valuable<'a>(tasks: impl IntoIterator<Item = &'a Task>) -> Option<&'a Task> {
    tasks
        .into_iter()
        .fold(None, |best: Option<&Task>, t| match best {
            None => Some(t),
            Some(b) => {
                let (pt, pb) = (t.priority(), b.priority());
                if pt > pb || (pt == pb && t.id < b.id) {
                    Some(t)
                } else {
                    Some(b)
                }
            }
        })
}

impl Canonical for Task {
    fn encode(&self, w: &mut Writer) {
        self.id.encode(w);
        self.poster.encode(w);
        w.put_u64(self.reward);
        w.put_seq(&self.data_pointers);
        self.model_spec.encode(w);
        self.disc.encode(w);
        self.sml.encode(w);
        self.group.encode(w);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let task = Task {
            id: TaskId::decode(r)?,
            poster: AccountId::decode(r)?,
            reward: r.get_u64()?,
            data_pointers: r.get_seq()?,
            model_spec: ModelSpec::decode(r)?,
            disc: Discretization::decode(r)?,
            sml: SmlShape::decode(r)?,
            group: GroupParams::decode(r)?,
        };
        task.validate().map_err(CodecError::Invalid)?;
        Ok(task)
    }
}

fn put_ciphertexts(w: &mut Writer, cts: &[Ciphertext], labels: &[u32]) {
    w.put_seq(cts);
    w.put_len(labels.len());
    for &l in labels {
        w.put_u32(l);
    }
}

fn get_ciphertexts(r: &mut Reader<'_>) -> Result<(Vec<Ciphertext>, Vec<u32>), CodecError> {
    let cts: Vec<Ciphertext> = r.get_seq()?;
    let n = r.get_len()?;
    let labels = (0..n).map(|_| r.get_u32()).collect::<Result<Vec<_>, _>>()?;
    if labels.len() != cts.len() {
        return Err(CodecError::Invalid(
            "label count differs from ciphertext count",
        ));
    }
    Ok((cts, labels))
}

/// Encrypted training samples uploaded for one task, labels in the clear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CiphertextBatch {
    pub task_id: TaskId,
    pub ciphertexts: Vec<Ciphertext>,
    pub labels: Vec<u32>,
}

impl Canonical for CiphertextBatch {
    fn encode(&self, w: &mut Writer) {
        self.task_id.encode(w);
        put_ciphertexts(w, &self.ciphertexts, &self.labels);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let task_id = TaskId::decode(r)?;
        let (ciphertexts, labels) = get_ciphertexts(r)?;
        Ok(Self {
            task_id,
            ciphertexts,
            labels,
        })
    }
}

/// Test set released by a task's data node; its timestamp closes the task
/// to further solutions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestData {
    pub task_id: TaskId,
    pub released_at: SimTime,
    pub signer: AccountId,
    pub ciphertexts: Vec<Ciphertext>,
    pub labels: Vec<u32>,
}

impl Canonical for TestData {
    fn encode(&self, w: &mut Writer) {
        self.task_id.encode(w);
        w.put_u64(self.released_at.micros());
        self.signer.encode(w);
        put_ciphertexts(w, &self.ciphertexts, &self.labels);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let task_id = TaskId::decode(r)?;
        let released_at = SimTime(r.get_u64()?);
        let signer = AccountId::decode(r)?;
        let (ciphertexts, labels) = get_ciphertexts(r)?;
        Ok(Self {
            task_id,
            released_at,
            signer,
            ciphertexts,
            labels,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub from: AccountId,
    pub to: AccountId,
    pub amount: u64,
}

impl Canonical for Transaction {
    fn encode(&self, w: &mut Writer) {
        self.from.encode(w);
        self.to.encode(w);
        w.put_u64(self.amount);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            from: AccountId::decode(r)?,
            to: AccountId::decode(r)?,
            amount: r.get_u64()?,
        })
    }
}

/// A verified losing candidate referenced by a later winning block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmmerRecord {
    /// Height the ommer competed at.
    pub height: u64,
    pub producer: AccountId,
    /// Hash of the ommer's candidate header.
    pub block_hash: Hash256,
    pub test_accuracy: f64,
    /// Verified ommer blocks at that height.
    pub ommer_count: u32,
}

impl Canonical for OmmerRecord {
    fn encode(&self, w: &mut Writer) {
        w.put_u64(self.height);
        self.producer.encode(w);
        w.put_hash(&self.block_hash);
        w.put_f64(self.test_accuracy);
        w.put_u32(self.ommer_count);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            height: r.get_u64()?,
            producer: AccountId::decode(r)?,
            block_hash: r.get_hash()?,
            test_accuracy: r.get_f64()?,
            ommer_count: r.get_u32()?,
        })
    }
}
