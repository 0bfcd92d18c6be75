//! Order bookkeeping for the growing collection.
//!
//! A server stores at most one index per order. When an update's candidate
//! order is already taken, the existing index of that order is absorbed into
//! the update and the check repeats with the combined size — orders grow
//! exponentially, so big indexes are absorbed rarely and small ones often.
//! The loop terminates because each absorption strictly grows the tuple
//! count while removing one bounded-order index.

use std::collections::BTreeMap;

use crate::layout::order_of;

/// Result of simulating one update against the current collection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergePlan {
    /// Orders absorbed, in absorption sequence.
    pub absorbed: Vec<u32>,
    /// Tuple count of the index the update will finally build.
    pub final_tuple_count: u64,
    /// Its order, guaranteed free among the surviving indexes.
    pub final_order: u32,
}

/// Simulates the absorb-until-free loop over `existing` (order → tuple
/// count) for a batch of `incoming` tuples. Assumes absorbed tuples are
/// disjoint from the batch, which holds whenever document ids are new.
pub fn plan_update(existing: &BTreeMap<u32, u64>, incoming: u64) -> MergePlan {
    assert!(incoming >= 1, "an update carries at least one tuple");
    let mut remaining = existing.clone();
    let mut tuple_count = incoming;
    let mut absorbed = Vec::new();
    let mut order = order_of(tuple_count);
    while let Some(existing_count) = remaining.remove(&order) {
        absorbed.push(order);
        tuple_count += existing_count;
        order = order_of(tuple_count);
    }
    MergePlan {
        absorbed,
        final_tuple_count: tuple_count,
        final_order: order,
    }
}
