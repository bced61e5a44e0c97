use std::collections::HashMap;

use super::group::GroupParams;

/// Baby-step giant-step table for discrete logs base `g` in `[0, bound]`.
///
/// The baby-step table holds `g^j` for `j < m`, and a lookup walks
/// `y * g^{-m i}` for increasing `i`. `m` is at least `ceil(sqrt(bound + 1))`
/// and is raised (up to [`DlogTable::MAX_BABY_STEPS`]) so that a table built
/// once can answer many lookups with only a handful of giant steps each.
#[derive(Debug, Clone)]
pub struct DlogTable {
    params: GroupParams,
    bound: u64,
    baby_steps: u64,
    giant_step: u64,
    table: HashMap<u64, u32>,
}

impl DlogTable {
    pub const MAX_BABY_STEPS: u64 = 1 << 14;

    pub fn new(params: &GroupParams, bound: u64) -> Self {
        let span = bound.saturating_add(1);
        let sqrt = ceil_sqrt(span);
        let baby_steps = sqrt.max(span.min(Self::MAX_BABY_STEPS)).max(1);
        Self::with_baby_steps(params, bound, baby_steps)
    }

    /// Table with an explicit baby-step count (tests exercise small `m`).
    pub fn with_baby_steps(params: &GroupParams, bound: u64, baby_steps: u64) -> Self {
        assert!(baby_steps >= 1 && baby_steps <= u32::MAX as u64);
        let mut table = HashMap::with_capacity(baby_steps as usize);
        let mut acc = 1u64;
        for j in 0..baby_steps {
            // g has order p > baby_steps, so every entry is distinct.
            table.entry(acc).or_insert(j as u32);
            acc = params.mul(acc, params.generator());
        }
        let giant_step = params.inv(params.gen_pow(baby_steps));
        Self {
            params: *params,
            bound,
            baby_steps,
            giant_step,
            table,
        }
    }

    pub fn bound(&self) -> u64 {
        self.bound
    }

    pub fn params(&self) -> &GroupParams {
        &self.params
    }

    /// Smallest `x` in `[0, bound]` with `g^x = y`, if any.
    pub fn solve(&self, y: u64) -> Option<u64> {
        let giant_count = self.bound / self.baby_steps + 1;
        let mut gamma = y;
        for i in 0..giant_count {
            if let Some(&j) = self.table.get(&gamma) {
                let x = i * self.baby_steps + j as u64;
                return (x <= self.bound).then_some(x);
            }
            gamma = self.params.mul(gamma, self.giant_step);
        }
        None
    }
}

fn ceil_sqrt(n: u64) -> u64 {
    if n == 0 {
        return 0;
    }
    let mut r = (n as f64).sqrt() as u64;
    while r * r > n {
        r -= 1;
    }
    while r * r < n {
        r += 1;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::group_gen;

    fn linear_scan(params: &GroupParams, y: u64, bound: u64) -> Option<u64> {
        let mut acc = 1u64;
        for x in 0..=bound {
            if acc == y {
                return Some(x);
            }
            acc = acc * params.generator() % params.modulus();
        }
        None
    }

    #[test]
    fn ceil_sqrt_exact() {
        for n in 0..10_000u64 {
            let r = ceil_sqrt(n);
            assert!(r * r >= n);
            assert!(r == 0 || (r - 1) * (r - 1) < n);
        }
    }

    #[test]
    fn agrees_with_linear_scan_for_every_small_bound() {
        let params = group_gen(16, 7).unwrap();
        for bound in 0..=150u64 {
            let narrow = DlogTable::with_baby_steps(&params, bound, ceil_sqrt(bound + 1).max(1));
            let wide = DlogTable::new(&params, bound);
            for x in 0..=bound + 3 {
                let y = params.gen_pow(x);
                let expected = linear_scan(&params, y, bound);
                assert_eq!(narrow.solve(y), expected, "bound {bound} x {x}");
                assert_eq!(wide.solve(y), expected, "bound {bound} x {x}");
            }
        }
    }

    #[test]
    fn agrees_with_enumeration_up_to_ten_thousand() {
        let params = group_gen(20, 3).unwrap();
        let q = params.modulus();
        // Linear enumeration of g^0..g^bound, built independently of the table.
        let bound = 10_000u64;
        let mut by_power = std::collections::HashMap::new();
        let mut acc = 1u64;
        for x in 0..=bound {
            by_power.entry(acc).or_insert(x);
            acc = acc * params.generator() % q;
        }
        for sub_bound in [10u64, 99, 1000, 4321, 10_000] {
            let narrow = DlogTable::with_baby_steps(&params, sub_bound, ceil_sqrt(sub_bound + 1));
            let wide = DlogTable::new(&params, sub_bound);
            for x in 0..=bound + 10 {
                let y = params.gen_pow(x);
                let expected = by_power.get(&y).copied().filter(|&v| v <= sub_bound);
                assert_eq!(narrow.solve(y), expected, "bound {sub_bound} x {x}");
                assert_eq!(wide.solve(y), expected, "bound {sub_bound} x {x}");
            }
        }
        let outsider = (2..q).find(|&v| !params.contains(v)).unwrap();
        assert_eq!(DlogTable::new(&params, bound).solve(outsider), None);
    }

    #[test]
    fn exhaustive_bound_100() {
        let params = group_gen(20, 1).unwrap();
        let table = DlogTable::with_baby_steps(&params, 100, 11);
        for x in 0..=100 {
            assert_eq!(table.solve(params.gen_pow(x)), Some(x));
        }
        assert_eq!(table.solve(params.gen_pow(101)), None);
        assert_eq!(table.solve(params.gen_pow(5000)), None);
    }
}
