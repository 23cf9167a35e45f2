//! Token-constrained chunk selection.
//!
//! `select_token_constrained` is the production path: greedy by relevance
//! per token with a best-single-item guard, which together stay within a
//! factor two of the optimum. `knapsack_exact` solves the same 0/1 program
//! exactly and exists to keep the greedy honest in tests.

use super::{Budget, Candidate, OneshotError, Selection};

/// Packs candidates under the budget, greedy by relevance density.
///
/// Callers pass candidates sorted non-increasing by relevance (the search
/// ranking order); the selector re-sorts by density internally, breaking
/// ties by higher relevance, then chunk id. A candidate that does not fit
/// the remaining budget is skipped, never truncated. If the best single
/// feasible candidate beats the whole greedy pack, it wins instead.
pub fn select_token_constrained(candidates: &[Candidate], budget: &Budget) -> Selection {
    let available = budget.available();
    if candidates.is_empty() {
        return Selection::default();
    }
    debug_assert!(candidates.iter().all(|c| c.tokens > 0 && c.tokens == c.chunk.token_count));

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let ca = &candidates[a];
        let cb = &candidates[b];
        let da = ca.relevance / ca.tokens as f64;
        let db = cb.relevance / cb.tokens as f64;
        db.partial_cmp(&da)
            .unwrap()
            .then(cb.relevance.partial_cmp(&ca.relevance).unwrap())
            .then(ca.chunk.chunk_id.cmp(&cb.chunk.chunk_id))
    });

    let mut picked = Vec::new();
    let mut used = 0usize;
    for &i in &order {
        let c = &candidates[i];
        if used + c.tokens <= available {
            picked.push(i);
            used += c.tokens;
        }
    }
    let greedy_relevance: f64 = picked.iter().map(|&i| candidates[i].relevance).sum();

    let best_single = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.tokens <= available)
        .max_by(|(_, x), (_, y)| {
            x.relevance
                .partial_cmp(&y.relevance)
                .unwrap()
                .then(y.chunk.chunk_id.cmp(&x.chunk.chunk_id))
        });

    let mut sel = match best_single {
        Some((i, single)) if single.relevance > greedy_relevance => {
            Selection::from_chosen(vec![candidates[i].clone()])
        }
        _ => Selection::from_chosen(picked.iter().map(|&i| candidates[i].clone()).collect()),
    };
    if sel.chosen.is_empty() {
        sel.warnings.push(format!(
            "token budget {available} is smaller than every candidate; nothing selected"
        ));
    }
    sel
}

/// Upper bound on the exact solver's DP table, in cells.
const DP_CELL_LIMIT: usize = 20_000_000;

/// Exact 0/1 knapsack over relevance, used as a test oracle.
///
/// Among optima it returns the one whose sorted chunk-id sequence is
/// lexicographically smallest, so results are fully deterministic even with
/// tied relevances. Instances are bounded: at most 64 candidates, and a DP
/// table of at most [`DP_CELL_LIMIT`] cells.
pub fn knapsack_exact(
    candidates: &[Candidate],
    budget: &Budget,
) -> Result<Selection, OneshotError> {
    let n = candidates.len();
    if n > 64 {
        return Err(OneshotError::InstanceTooLarge(format!(
            "{n} candidates exceed the 64-item bound"
        )));
    }
    if n == 0 {
        return Ok(Selection::default());
    }
    let total_mass: usize = candidates.iter().map(|c| c.tokens).sum();
    let cap = budget.available().min(total_mass);
    let width = cap + 1;
    if (n + 1).saturating_mul(width) > DP_CELL_LIMIT {
        return Err(OneshotError::InstanceTooLarge(format!(
            "{n} candidates with budget {cap} exceed the DP cell limit"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| candidates[a].chunk.chunk_id.cmp(&candidates[b].chunk.chunk_id));

    // suffix[i][w]: best achievable relevance using items order[i..] within
    // token budget w
    let mut suffix = vec![0.0f64; (n + 1) * width];
    for i in (0..n).rev() {
        let c = &candidates[order[i]];
        for w in 0..width {
            let skip = suffix[(i + 1) * width + w];
            let best = if c.tokens <= w {
                let take = c.relevance + suffix[(i + 1) * width + w - c.tokens];
                if take > skip {
                    take
                } else {
                    skip
                }
            } else {
                skip
            };
            suffix[i * width + w] = best;
        }
    }

    // Walk items in chunk-id order. At each state the remaining required
    // relevance is exactly suffix[i][w], so comparing against stored cell
    // values keeps every branch test exact. Stopping as soon as nothing
    // more is required, and otherwise taking the smallest feasible id that
    // preserves optimality, yields the lexicographically smallest optimal
    // id set.
    let mut chosen = Vec::new();
    let mut w = cap;
    for i in 0..n {
        let required = suffix[i * width + w];
        if required == 0.0 {
            break;
        }
        let c = &candidates[order[i]];
        let take_valid =
            c.tokens <= w && c.relevance + suffix[(i + 1) * width + w - c.tokens] == required;
        if take_valid {
            chosen.push(candidates[order[i]].clone());
            w -= c.tokens;
        }
    }
    Ok(Selection::from_chosen(chosen))
}
