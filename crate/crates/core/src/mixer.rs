//! Deterministic weighted interleaving of dataset streams.
//!
//! The scheduler is a smooth weighted round-robin: every step adds each
//! source's weight to its credit, emits from the highest-credit source
//! (ties: lexicographically smallest name), and subtracts the total weight
//! from the winner. Integer credits make the defining property exact: after
//! any prefix of length t, |count_i - t*w_i/W| < 1.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{ForgeError, Result};

/// One source in a mixture: unique name, positive integer weight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixEntry {
    pub name: String,
    pub weight: u64,
}

/// What to do when a finite source runs out mid-schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ExhaustionPolicy {
    /// Restart the source from the top; emitted items carry an epoch count.
    #[default]
    Wrap,
    /// Remove the source from scheduling; remaining sources keep their
    /// relative ratio.
    Drop,
}

/// One emitted item with its provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedItem<T> {
    pub source: String,
    /// How many times the source had wrapped when this item was drawn
    /// (0 on the first pass).
    pub epoch: u64,
    pub item: T,
}

fn validate_entries(entries: &[MixEntry]) -> Result<()> {
    if entries.is_empty() {
        return Err(ForgeError::EmptyInput("mixture has no sources".into()));
    }
    let mut seen = HashSet::new();
    for e in entries {
        if e.weight == 0 {
            return Err(ForgeError::OutOfRange(format!(
                "source {:?} has zero weight",
                e.name
            )));
        }
        if !seen.insert(e.name.as_str()) {
            return Err(ForgeError::OutOfRange(format!(
                "duplicate source name {:?}",
                e.name
            )));
        }
    }
    Ok(())
}

/// Smooth weighted round-robin order: returns the entry index chosen at each
/// of the n steps. Pure function of (entries, n).
pub fn schedule(entries: &[MixEntry], n: usize) -> Result<Vec<usize>> {
    validate_entries(entries)?;
    let total: i128 = entries.iter().map(|e| e.weight as i128).sum();
    let mut credit = vec![0i128; entries.len()];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        for (c, e) in credit.iter_mut().zip(entries) {
            *c += e.weight as i128;
        }
        let mut best = 0;
        for i in 1..entries.len() {
            if credit[i] > credit[best]
                || (credit[i] == credit[best] && entries[i].name < entries[best].name)
            {
                best = i;
            }
        }
        credit[best] -= total;
        out.push(best);
    }
    Ok(out)
}

/// Interleaves concrete item lists according to the schedule. With
/// [`ExhaustionPolicy::Wrap`], finite sources restart and the emitted epoch
/// counts the wraps; with Drop, exhausted sources leave the mixture and the
/// result may be shorter than n.
pub fn mix<T: Clone>(
    entries: &[MixEntry],
    items: &[Vec<T>],
    n: usize,
    policy: ExhaustionPolicy,
) -> Result<Vec<MixedItem<T>>> {
    validate_entries(entries)?;
    if entries.len() != items.len() {
        return Err(ForgeError::ShapeMismatch(format!(
            "{} sources but {} item lists",
            entries.len(),
            items.len()
        )));
    }
    if items.iter().any(Vec::is_empty) {
        return Err(ForgeError::EmptyInput(
            "every source needs at least one item".into(),
        ));
    }
    match policy {
        ExhaustionPolicy::Wrap => {
            let order = schedule(entries, n)?;
            let mut cursor = vec![0usize; entries.len()];
            let out = order
                .into_iter()
                .map(|i| {
                    let at = cursor[i];
                    cursor[i] += 1;
                    MixedItem {
                        source: entries[i].name.clone(),
                        epoch: (at / items[i].len()) as u64,
                        item: items[i][at % items[i].len()].clone(),
                    }
                })
                .collect();
            Ok(out)
        }
        ExhaustionPolicy::Drop => {
            // Re-run the scheduler each time the live set shrinks, so the
            // survivors keep their exact relative ratios.
            let mut live: Vec<usize> = (0..entries.len()).collect();
            let mut cursor = vec![0usize; entries.len()];
            let mut out = Vec::with_capacity(n);
            while out.len() < n && !live.is_empty() {
                let sub: Vec<MixEntry> = live.iter().map(|&i| entries[i].clone()).collect();
                let order = schedule(&sub, n - out.len())?;
                let mut shrank = false;
                for pick in order {
                    let i = live[pick];
                    out.push(MixedItem {
                        source: entries[i].name.clone(),
                        epoch: 0,
                        item: items[i][cursor[i]].clone(),
                    });
                    cursor[i] += 1;
                    if cursor[i] == items[i].len() {
                        live.retain(|&x| x != i);
                        shrank = true;
                        break;
                    }
                }
                if !shrank {
                    break;
                }
            }
            Ok(out)
        }
    }
}

/// Per-source counts of a schedule prefix, mostly for reports and tests.
pub fn realized_counts(entries: &[MixEntry], order: &[usize]) -> Vec<(String, usize)> {
    let mut counts = vec![0usize; entries.len()];
    for &i in order {
        counts[i] += 1;
    }
    entries
        .iter()
        .zip(counts)
        .map(|(e, c)| (e.name.clone(), c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn entries(spec: &[(&str, u64)]) -> Vec<MixEntry> {
        spec.iter()
            .map(|(n, w)| MixEntry {
                name: n.to_string(),
                weight: *w,
            })
            .collect()
    }

    #[test]
    fn single_source_takes_everything() {
        let e = entries(&[("A", 1)]);
        let order = schedule(&e, 10).unwrap();
        assert!(order.iter().all(|&i| i == 0));
    }

    #[test]
    fn seven_five_one_over_13000_is_exact() {
        let e = entries(&[("H", 7), ("P", 5), ("X", 1)]);
        let order = schedule(&e, 13000).unwrap();
        let counts = realized_counts(&e, &order);
        assert_eq!(counts[0], ("H".to_string(), 7000));
        assert_eq!(counts[1], ("P".to_string(), 5000));
        assert_eq!(counts[2], ("X".to_string(), 1000));
    }

    #[test]
    fn equal_weights_tie_break_is_lexicographic() {
        // Hand simulation: credits tie on odd steps; A wins each tie.
        let e = entries(&[("B", 1), ("A", 1)]);
        let order = schedule(&e, 5).unwrap();
        let names: Vec<&str> = order.iter().map(|&i| e[i].name.as_str()).collect();
        assert_eq!(names, ["A", "B", "A", "B", "A"]);
        let counts = realized_counts(&e, &order);
        assert_eq!(counts[1], ("A".to_string(), 3));
        assert_eq!(counts[0], ("B".to_string(), 2));
    }

    #[test]
    fn bounded_deviation_at_every_prefix() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..20 {
            let k = rng.gen_range(2..6);
            let e: Vec<MixEntry> = (0..k)
                .map(|i| MixEntry {
                    name: format!("s{i}"),
                    weight: rng.gen_range(1..20),
                })
                .collect();
            let w: i128 = e.iter().map(|x| x.weight as i128).sum();
            let n = rng.gen_range(1..500);
            let order = schedule(&e, n).unwrap();
            let mut counts = vec![0i128; k];
            for (t, &pick) in order.iter().enumerate() {
                counts[pick] += 1;
                let t = (t + 1) as i128;
                for (i, entry) in e.iter().enumerate() {
                    // |count - t*w_i/W| < 1  <=>  |count*W - t*w_i| < W
                    let dev = counts[i] * w - t * entry.weight as i128;
                    assert!(dev.abs() < w, "prefix {t}, source {i}");
                }
            }
        }
    }

    #[test]
    fn starvation_freedom_window() {
        let e = entries(&[("A", 9), ("B", 1)]);
        let order = schedule(&e, 100).unwrap();
        // B must appear within ceil(W/w_B) = 10 steps of any point.
        let b_positions: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(_, &i)| e[i].name == "B")
            .map(|(p, _)| p)
            .collect();
        assert!(!b_positions.is_empty());
        assert!(b_positions[0] < 10);
        for pair in b_positions.windows(2) {
            assert!(pair[1] - pair[0] <= 10);
        }
    }

    #[test]
    fn schedule_is_deterministic() {
        let e = entries(&[("x", 3), ("y", 2)]);
        assert_eq!(schedule(&e, 50).unwrap(), schedule(&e, 50).unwrap());
    }

    #[test]
    fn wrap_policy_counts_epochs() {
        let e = entries(&[("A", 1)]);
        let items = vec![vec![10, 20, 30]];
        let out = mix(&e, &items, 7, ExhaustionPolicy::Wrap).unwrap();
        let seq: Vec<(i32, u64)> = out.iter().map(|m| (m.item, m.epoch)).collect();
        assert_eq!(
            seq,
            [
                (10, 0),
                (20, 0),
                (30, 0),
                (10, 1),
                (20, 1),
                (30, 1),
                (10, 2)
            ]
        );
    }

    #[test]
    fn drop_policy_removes_exhausted_sources() {
        let e = entries(&[("A", 1), ("B", 1)]);
        let items = vec![vec![1, 2], vec![10, 20, 30, 40, 50]];
        let out = mix(&e, &items, 7, ExhaustionPolicy::Drop).unwrap();
        assert_eq!(out.len(), 7);
        let a_count = out.iter().filter(|m| m.source == "A").count();
        assert_eq!(a_count, 2);
        // After A is exhausted, everything comes from B without wrapping.
        assert!(out.iter().all(|m| m.epoch == 0));
        let b_items: Vec<i32> = out
            .iter()
            .filter(|m| m.source == "B")
            .map(|m| m.item)
            .collect();
        assert_eq!(b_items, [10, 20, 30, 40, 50]);
    }

    #[test]
    fn drop_policy_stops_when_everything_is_exhausted() {
        let e = entries(&[("A", 1)]);
        let items = vec![vec![1, 2, 3]];
        let out = mix(&e, &items, 10, ExhaustionPolicy::Drop).unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(schedule(&[], 5).is_err());
        assert!(schedule(&entries(&[("A", 0)]), 5).is_err());
        assert!(schedule(&entries(&[("A", 1), ("A", 2)]), 5).is_err());
        let e = entries(&[("A", 1)]);
        assert!(mix::<i32>(&e, &[], 5, ExhaustionPolicy::Wrap).is_err());
        assert!(mix(&e, &[Vec::<i32>::new()], 5, ExhaustionPolicy::Wrap).is_err());
    }
}
