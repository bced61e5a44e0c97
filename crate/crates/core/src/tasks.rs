//! Data-node side of a task: encrypting a dataset and packaging it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::fe::{discretize, encrypt, keygen, Discretization, FeError, GroupParams, MasterKeys};
use crate::ledger::{
    AccountId, Block, BlockBody, CiphertextBatch, DataPointer, Task, TaskId, TestData,
};
use crate::nn::ModelSpec;
use crate::rng::derive_seed;
use crate::sml::SmlShape;
use crate::time::SimTime;

/// Everything a data node holds for one task: the public task record, the
/// encrypted training upload, the withheld encrypted test set and the
/// master keys.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    /// `data_pointers` is empty until the task is included in a block.
    pub task: Task,
    pub train: CiphertextBatch,
    pub test_ciphertexts: Vec<crate::fe::Ciphertext>,
    pub test_labels: Vec<u32>,
    pub keys: MasterKeys,
}

impl PreparedTask {
    /// The test set as released at `at` by `signer`.
    pub fn release(&self, at: SimTime, signer: AccountId) -> TestData {
        TestData {
            task_id: self.task.id,
            released_at: at,
            signer,
            ciphertexts: self.test_ciphertexts.clone(),
            labels: self.test_labels.clone(),
        }
    }
}

/// Parameters a data node chooses when posting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    pub id: TaskId,
    pub poster: AccountId,
    pub reward: u64,
    pub spec: ModelSpec,
    pub disc: Discretization,
    pub sml_queries: usize,
    pub sml_bits: u32,
}

fn encrypt_all(
    group: &GroupParams,
    keys: &MasterKeys,
    ds: &Dataset,
    disc: &Discretization,
    seed: u64,
    label: &str,
) -> Result<Vec<crate::fe::Ciphertext>, FeError> {
    (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let x = discretize(ds.sample(i), disc)?;
            encrypt(group, keys, &x, derive_seed(seed, label, i as u64))
        })
        .collect()
}

pub fn prepare_task(
    params: &TaskParams,
    group: &GroupParams,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
) -> Result<PreparedTask, FeError> {
    let keys = keygen(
        group,
        train.dim(),
        derive_seed(seed, "task_keys", params.id.0),
    )?;
    let train_cts = encrypt_all(group, &keys, train, &params.disc, seed, "train")?;
    let test_cts = encrypt_all(group, &keys, test, &params.disc, seed, "test")?;
    let task = Task {
        id: params.id,
        poster: params.poster,
        reward: params.reward,
        data_pointers: Vec::new(),
        model_spec: params.spec.clone(),
        disc: params.disc,
        sml: SmlShape {
            dim: train.dim(),
            queries: params.sml_queries,
            bits: params.sml_bits,
        },
        group: *group,
    };
    let to_u32 = |ds: &Dataset| ds.labels().iter().map(|&l| l as u32).collect::<Vec<_>>();
    Ok(PreparedTask {
        train: CiphertextBatch {
            task_id: params.id,
            ciphertexts: train_cts,
            labels: to_u32(train),
        },
        test_ciphertexts: test_cts,
        test_labels: to_u32(test),
        task,
        keys,
    })
}

/// Genesis block that posts `tasks`, their training data in its data
/// section.
pub fn genesis_with_tasks(tasks: &[&PreparedTask], timestamp: SimTime) -> Block {
    let mut body = BlockBody::default();
    for (i, p) in tasks.iter().enumerate() {
        let mut t = p.task.clone();
        t.data_pointers = vec![DataPointer {
            height: 0,
            index: i as u32,
        }];
        body.pending_tasks.push(t);
        body.new_ciphertext_data.push(p.train.clone());
    }
    Block::genesis(body, timestamp)
}

/// Dataset-independent description of a task a data node posts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskTemplate {
    pub dataset: crate::data::DatasetKind,
    pub hidden: Vec<usize>,
    pub required_accuracy: f64,
    /// Simulated seconds.
    pub time_limit: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Whole tokens.
    pub reward: u64,
    pub sml_queries: usize,
    pub sml_bits: u32,
    pub scale: f64,
    pub offset: u64,
    pub xmax: u64,
}

impl Default for TaskTemplate {
    fn default() -> Self {
        Self::iris()
    }
}

impl TaskTemplate {
    /// IRIS features are centimetres; one decimal survives discretization.
    pub fn iris() -> Self {
        Self {
            dataset: crate::data::DatasetKind::Iris,
            hidden: vec![16],
            required_accuracy: 0.8,
            time_limit: 60.0,
            lr: 0.05,
            batch_size: 16,
            reward: 5,
            sml_queries: crate::sml::DEFAULT_QUERIES,
            sml_bits: crate::sml::DEFAULT_BITS,
            scale: 10.0,
            offset: 0,
            xmax: 255,
        }
    }

    /// Pooled 14x14 MNIST, pixels in [0, 1] mapped onto 0..=255.
    pub fn mnist() -> Self {
        Self {
            dataset: crate::data::DatasetKind::MnistSubset,
            hidden: vec![64],
            required_accuracy: 0.9,
            time_limit: 600.0,
            lr: 0.05,
            batch_size: 32,
            reward: 5,
            sml_queries: 128,
            sml_bits: crate::sml::DEFAULT_BITS,
            scale: 255.0,
            offset: 0,
            xmax: 255,
        }
    }

    pub fn for_dataset(kind: crate::data::DatasetKind) -> Self {
        match kind {
            crate::data::DatasetKind::Iris => Self::iris(),
            crate::data::DatasetKind::MnistSubset => Self::mnist(),
        }
    }

    pub fn model_spec(&self, classes: usize) -> ModelSpec {
        let mut layer_sizes = vec![self.sml_queries];
        layer_sizes.extend_from_slice(&self.hidden);
        layer_sizes.push(classes);
        ModelSpec {
            layer_sizes,
            activation: Default::default(),
            loss: Default::default(),
            required_accuracy: self.required_accuracy,
            time_limit: self.time_limit,
            lr: self.lr,
            batch_size: self.batch_size,
        }
    }

    pub fn params(
        &self,
        id: TaskId,
        poster: AccountId,
        classes: usize,
    ) -> Result<TaskParams, FeError> {
        Ok(TaskParams {
            id,
            poster,
            reward: self.reward * crate::ledger::UNITS_PER_TOKEN,
            spec: self.model_spec(classes),
            disc: Discretization::new(self.scale, self.offset, self.xmax)?,
            sml_queries: self.sml_queries,
            sml_bits: self.sml_bits,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{iris, stratified_split};
    use crate::fe::group_gen;

    #[test]
    fn prepared_task_validates_and_posts_in_genesis() {
        let group = group_gen(32, 1).unwrap();
        let (train, test) = stratified_split(&iris(), 0.1, 1);
        let params = TaskTemplate::iris()
            .params(TaskId(1), AccountId(9), 3)
            .unwrap();
        let p = prepare_task(&params, &group, &train, &test, 5).unwrap();
        p.task.validate().unwrap();
        assert_eq!(p.train.ciphertexts.len(), train.len());
        assert_eq!(p.test_ciphertexts.len(), test.len());
        let g = genesis_with_tasks(&[&p], SimTime::ZERO);
        assert_eq!(
            g.body.pending_tasks[0].data_pointers,
            vec![DataPointer {
                height: 0,
                index: 0
            }]
        );
        let again = prepare_task(&params, &group, &train, &test, 5).unwrap();
        assert_eq!(again.train, p.train);
    }
}
