use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::block::Block;
use super::types::{AccountId, TaskId, RESERVOIR};
use super::LedgerError;

/// Each ommer reference earns the referencing winner `block_reward / REFERRAL_DIVISOR`.
pub const REFERRAL_DIVISOR: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Base units minted to every winner.
    pub block_reward: u64,
}

fn check_ommer_args(
    winner_height: u64,
    ommer_height: u64,
    ommer_count: u32,
) -> Result<(), LedgerError> {
    if winner_height <= ommer_height {
        return Err(LedgerError::InvalidOmmer(
            "winner height must exceed ommer height",
        ));
    }
    if ommer_count == 0 {
        return Err(LedgerError::InvalidOmmer("ommer count must be at least 1"));
    }
    Ok(())
}

/// The block reward divided by the ommer's age in heights and by the
/// number of ommers at its height.
pub fn ommer_reward(
    block_reward: f64,
    winner_height: u64,
    ommer_height: u64,
    ommer_count: u32,
) -> Result<f64, LedgerError> {
    check_ommer_args(winner_height, ommer_height, ommer_count)?;
    Ok(block_reward / ((winner_height - ommer_height) as f64 * ommer_count as f64))
}

/// [`ommer_reward`] on base units, rounded down.
pub fn ommer_reward_units(
    block_reward: u64,
    winner_height: u64,
    ommer_height: u64,
    ommer_count: u32,
) -> Result<u64, LedgerError> {
    check_ommer_args(winner_height, ommer_height, ommer_count)?;
    let denom = (winner_height - ommer_height) as u128 * ommer_count as u128;
    Ok((block_reward as u128 / denom) as u64)
}

pub fn referral_bonus_units(block_reward: u64) -> u64 {
    block_reward / REFERRAL_DIVISOR
}

/// Balances plus the escrow ledger backing the reservoir.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AccountState {
    balances: BTreeMap<AccountId, u64>,
    escrow: BTreeMap<TaskId, u64>,
    next_height: u64,
    minted: u64,
}

impl AccountState {
    pub fn new(initial: impl IntoIterator<Item = (AccountId, u64)>) -> Self {
        let mut s = Self::default();
        for (a, v) in initial {
            *s.balances.entry(a).or_default() += v;
        }
        s
    }

    pub fn balance(&self, account: AccountId) -> u64 {
        self.balances.get(&account).copied().unwrap_or(0)
    }

    pub fn balances(&self) -> &BTreeMap<AccountId, u64> {
        &self.balances
    }

    pub fn reservoir(&self) -> u64 {
        self.balance(RESERVOIR)
    }

    pub fn escrowed_total(&self) -> u64 {
        self.escrow.values().sum()
    }

    pub fn is_escrowed(&self, task: TaskId) -> bool {
        self.escrow.contains_key(&task)
    }

    pub fn total_supply(&self) -> u64 {
        self.balances.values().sum()
    }

    /// Tokens created by block and ommer rewards so far.
    pub fn minted(&self) -> u64 {
        self.minted
    }

    /// Height of the next block this state accepts.
    pub fn next_height(&self) -> u64 {
        self.next_height
    }

    pub fn check_solvency(&self) -> Result<(), LedgerError> {
        let (balance, escrowed) = (self.reservoir(), self.escrowed_total());
        if balance != escrowed {
            return Err(LedgerError::ReservoirInsolvent { balance, escrowed });
        }
        Ok(())
    }

    fn credit(&mut self, to: AccountId, amount: u64) -> Result<(), LedgerError> {
        let b = self.balances.entry(to).or_default();
        *b = b.checked_add(amount).ok_or(LedgerError::Overflow)?;
        Ok(())
    }

    fn debit(&mut self, from: AccountId, amount: u64) -> Result<(), LedgerError> {
        let available = self.balance(from);
        if available < amount {
            return Err(LedgerError::InsufficientBalance {
                account: from,
                needed: amount,
                available,
            });
        }
        self.balances.insert(from, available - amount);
        Ok(())
    }

    fn transfer(&mut self, from: AccountId, to: AccountId, amount: u64) -> Result<(), LedgerError> {
        self.debit(from, amount)?;
        self.credit(to, amount)
    }

    fn mint(&mut self, to: AccountId, amount: u64) -> Result<(), LedgerError> {
        self.minted = self
            .minted
            .checked_add(amount)
            .ok_or(LedgerError::Overflow)?;
        self.credit(to, amount)
    }

    /// State after `block`. Order: task reward out of escrow, block reward, ommer
    /// and referral rewards, body transactions, then escrow of newly
    /// pending tasks.
    pub fn apply_block(&self, block: &Block, params: &RewardParams) -> Result<Self, LedgerError> {
        let h = &block.header;
        if h.height != self.next_height {
            return Err(LedgerError::HeightMismatch {
                expected: self.next_height,
                actual: h.height,
            });
        }
        let mut next = self.clone();
        next.next_height += 1;
        if h.height > 0 {
            let task = h.task_id.ok_or(LedgerError::InvalidBlock(
                "non-genesis block without a task",
            ))?;
            let reward = next
                .escrow
                .remove(&task)
                .ok_or(LedgerError::UnknownTask(task))?;
            next.transfer(RESERVOIR, h.winner, reward)?;
            next.mint(h.winner, params.block_reward)?;
            for o in &block.body.ommers {
                let amount =
                    ommer_reward_units(params.block_reward, h.height, o.height, o.ommer_count)?;
                next.mint(o.producer, amount)?;
                next.mint(h.winner, referral_bonus_units(params.block_reward))?;
            }
        } else if h.task_id.is_some() || !block.body.ommers.is_empty() {
            return Err(LedgerError::InvalidBlock(
                "genesis cannot solve tasks or cite ommers",
            ));
        }
        for tx in &block.body.transactions {
            if tx.from == RESERVOIR || tx.to == RESERVOIR {
                return Err(LedgerError::InvalidBlock(
                    "transactions may not touch the reservoir",
                ));
            }
            next.transfer(tx.from, tx.to, tx.amount)?;
        }
        for t in &block.body.pending_tasks {
            if !next.escrow.contains_key(&t.id) {
                next.transfer(t.poster, RESERVOIR, t.reward)?;
                next.escrow.insert(t.id, t.reward);
            }
        }
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::Hash256;
    use crate::ledger::block::BlockBody;
    use crate::ledger::types::tests::sample_task;
    use crate::ledger::types::{OmmerRecord, Transaction};
    use crate::time::SimTime;
    use proptest::prelude::*;

    #[test]
    fn ommer_reward_examples() {
        assert_eq!(ommer_reward(10.0, 5, 4, 1).unwrap(), 10.0);
        assert_eq!(ommer_reward(10.0, 5, 3, 2).unwrap(), 2.5);
        assert!((ommer_reward(6.0, 7, 4, 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(ommer_reward(1.0, 4, 4, 1).is_err());
        assert!(ommer_reward(1.0, 3, 4, 1).is_err());
        assert!(ommer_reward(1.0, 5, 4, 0).is_err());
        assert_eq!(ommer_reward_units(10, 5, 3, 2).unwrap(), 2);
        assert_eq!(ommer_reward_units(10_000_000, 5, 3, 2).unwrap(), 2_500_000);
    }

    proptest! {
        #[test]
        fn ommer_reward_strictly_decreasing(reward in 1.0f64..1e6, ommer_height in 0u64..1000, gap in 1u64..50, count in 1u32..50) {
            let winner_height = ommer_height + gap;
            let base = ommer_reward(reward, winner_height, ommer_height, count).unwrap();
            prop_assert!(ommer_reward(reward, winner_height + 1, ommer_height, count).unwrap() < base);
            prop_assert!(ommer_reward(reward, winner_height, ommer_height, count + 1).unwrap() < base);
        }
    }

    fn block(height: u64, task: Option<u64>, body: BlockBody) -> Block {
        let mut b = Block::genesis(body, SimTime(height));
        b.header.height = height;
        b.header.task_id = task.map(TaskId);
        b.header.winner = AccountId(1);
        b.seal();
        b
    }

    fn funded() -> (AccountState, RewardParams) {
        let poster = AccountId(100);
        let params = RewardParams { block_reward: 2 };
        let mut body = BlockBody::default();
        body.pending_tasks.push(sample_task(7, 5, 10.0));
        let genesis = block(0, None, body);
        let s = AccountState::new([(poster, 50)])
            .apply_block(&genesis, &params)
            .unwrap();
        (s, params)
    }

    #[test]
    fn task_reward_plus_block_reward() {
        let (s, params) = funded();
        assert_eq!(s.reservoir(), 5);
        assert_eq!(s.balance(AccountId(100)), 45);
        s.check_solvency().unwrap();
        let b1 = block(1, Some(7), BlockBody::default());
        let s1 = s.apply_block(&b1, &params).unwrap();
        assert_eq!(s1.balance(AccountId(1)), 7);
        assert_eq!(s1.reservoir(), 0);
        assert_eq!(s1.total_supply(), s.total_supply() + 2);
        s1.check_solvency().unwrap();
    }

    #[test]
    fn ommer_producer_paid() {
        let (s, params) = funded();
        let mut body = BlockBody::default();
        body.ommers.push(OmmerRecord {
            height: 0,
            producer: AccountId(9),
            block_hash: Hash256::ZERO,
            test_accuracy: 0.5,
            ommer_count: 1,
        });
        let s1 = s.apply_block(&block(1, Some(7), body), &params).unwrap();
        assert_eq!(s1.balance(AccountId(9)), 2);
        // Winner: task 5 + block reward 2 + referral 2/32 = 0 units.
        assert_eq!(s1.balance(AccountId(1)), 7);
        assert_eq!(s1.minted(), 4);
    }

    #[test]
    fn replay_rejected() {
        let (s, params) = funded();
        let b1 = block(1, Some(7), BlockBody::default());
        let s1 = s.apply_block(&b1, &params).unwrap();
        assert!(matches!(
            s1.apply_block(&b1, &params),
            Err(LedgerError::HeightMismatch {
                expected: 2,
                actual: 1
            })
        ));
    }

    #[test]
    fn insufficient_balance() {
        let (s, params) = funded();
        let mut body = BlockBody::default();
        body.transactions.push(Transaction {
            from: AccountId(100),
            to: AccountId(2),
            amount: 46,
        });
        assert!(matches!(
            s.apply_block(&block(1, Some(7), body), &params),
            Err(LedgerError::InsufficientBalance {
                needed: 46,
                available: 45,
                ..
            })
        ));
        let poor = AccountState::new([(AccountId(100), 1)]);
        let mut body = BlockBody::default();
        body.pending_tasks.push(sample_task(7, 5, 10.0));
        assert!(poor.apply_block(&block(0, None, body), &params).is_err());
    }

    #[test]
    fn unknown_task_rejected() {
        let (s, params) = funded();
        assert!(matches!(
            s.apply_block(&block(1, Some(8), BlockBody::default()), &params),
            Err(LedgerError::UnknownTask(TaskId(8)))
        ));
    }
}
