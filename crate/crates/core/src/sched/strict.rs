//! Set search for general fading: exhaustive, and the dominance-pruned
//! variant that only visits sets closed under "better Y and better gain".

use rand::Rng;

use super::{evaluate_set, select_nrt, BestSet, EligibleSlotView, SlotDecision};
use crate::error::{Error, Result};

/// Largest RT population the exhaustive scheduler accepts.
pub const EXHAUSTIVE_LIMIT: usize = 20;
const STRICT_LIMIT: usize = 63;

pub fn schedule_exhaustive<R: Rng + ?Sized>(
    view: &EligibleSlotView,
    rng: &mut R,
) -> Result<SlotDecision> {
    let n = view.rt.len();
    if n > EXHAUSTIVE_LIMIT {
        return Err(Error::TooManyUsers {
            n,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let nrt = select_nrt(view, rng);
    let mut best = BestSet::default();
    let mut members = Vec::with_capacity(n);
    for mask in 0u32..(1u32 << n) {
        members.clear();
        members.extend((0..n).filter(|i| mask >> i & 1 == 1));
        best.offer(evaluate_set(view, &members, nrt.as_ref())?);
    }
    Ok(best.into_decision(view))
}

/// True when `members` (indices into `view.rt`) leaves out some user that
/// strictly dominates an included one. Such sets are never optimal.
pub fn dominated_set(view: &EligibleSlotView, members: &[usize]) -> bool {
    members.iter().any(|&j| {
        let cj = &view.rt[j];
        view.rt.iter().enumerate().any(|(i, ci)| {
            ci.y > cj.y && ci.gain > cj.gain && !members.contains(&i)
        })
    })
}

/// Every set that is not dominated, each sorted by position in `view.rt`.
/// The empty set comes first.
pub fn enumerate_undominated(view: &EligibleSlotView) -> Result<Vec<Vec<usize>>> {
    let n = view.rt.len();
    if n > STRICT_LIMIT {
        return Err(Error::TooManyUsers {
            n,
            limit: STRICT_LIMIT,
        });
    }
    // visit in Y-descending order so dominators are decided first
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        view.rt[b]
            .y
            .total_cmp(&view.rt[a].y)
            .then(view.rt[b].gain.total_cmp(&view.rt[a].gain))
            .then(a.cmp(&b))
    });
    let dominators: Vec<u64> = (0..n)
        .map(|j| {
            (0..n)
                .filter(|&i| view.rt[i].y > view.rt[j].y && view.rt[i].gain > view.rt[j].gain)
                .fold(0u64, |m, i| m | 1 << i)
        })
        .collect();

    let mut out = Vec::new();
    fn dfs(pos: usize, mask: u64, order: &[usize], dom: &[u64], out: &mut Vec<u64>) {
        if pos == order.len() {
            out.push(mask);
            return;
        }
        let j = order[pos];
        dfs(pos + 1, mask, order, dom, out);
        if dom[j] & !mask == 0 {
            dfs(pos + 1, mask | 1 << j, order, dom, out);
        }
    }
    let mut masks = Vec::new();
    dfs(0, 0, &order, &dominators, &mut masks);
    masks.sort_by_key(|m| (m.count_ones(), *m));
    for m in masks {
        out.push((0..n).filter(|i| m >> i & 1 == 1).collect());
    }
    Ok(out)
}

pub fn schedule_lambert_strict<R: Rng + ?Sized>(
    view: &EligibleSlotView,
    rng: &mut R,
) -> Result<SlotDecision> {
    let sets = enumerate_undominated(view)?;
    let nrt = select_nrt(view, rng);
    let mut best = BestSet::default();
    for members in &sets {
        best.offer(evaluate_set(view, members, nrt.as_ref())?);
    }
    Ok(best.into_decision(view))
}
