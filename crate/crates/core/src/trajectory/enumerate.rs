use super::{cell_of, Horizon};
use crate::error::{Error, Result};

/// Guard on the number of segmentations [`enumerate_segmentations`] returns.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// One complete assignment of hour cells to epochs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Segmentation {
    pub start_epoch: usize,
    /// End cell (exclusive) of every epoch that finished strictly inside the
    /// window, in increasing order. Epoch `start_epoch + i` covers
    /// `[boundaries[i-1], boundaries[i])` with `boundaries[-1] = 0`.
    pub boundaries: Vec<usize>,
    pub cells: usize,
}

impl Segmentation {
    pub fn last_epoch(&self) -> usize {
        self.start_epoch + self.boundaries.len()
    }

    /// `(epoch, start cell, end cell)` for every epoch, the last one ending at
    /// the horizon.
    pub fn segments(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.boundaries.len() + 1);
        let mut start = 0;
        for (i, &b) in self.boundaries.iter().enumerate() {
            out.push((self.start_epoch + i, start, b));
            start = b;
        }
        out.push((self.last_epoch(), start, self.cells));
        out
    }

    /// Epoch label of each observation time. An observation exactly on a
    /// boundary hour belongs to the later epoch.
    pub fn labels(&self, times: &[f64]) -> Vec<usize> {
        times
            .iter()
            .map(|&t| {
                let c = cell_of(t, self.cells);
                self.start_epoch + self.boundaries.partition_point(|&b| b <= c)
            })
            .collect()
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Closed-form count of the segmentations of `cells` hour cells into
/// consecutive epochs out of `k`.
pub fn segmentation_count(k: usize, horizon: Horizon) -> u128 {
    let cells = horizon.cells() as u128;
    let k = k as u128;
    let slots = cells - 1;
    (0..k)
        .map(|start| {
            if horizon.is_terminal() {
                binomial(slots, k - 1 - start)
            } else {
                (0..(k - start)).map(|extra| binomial(slots, extra)).sum()
            }
        })
        .sum()
}

/// Every way to place epoch boundaries on the hour grid: the start epoch,
/// then strictly increasing boundaries in `1..cells`. Censored windows may
/// stop in any epoch; terminal windows must end in the last epoch.
pub fn enumerate_segmentations(k: usize, horizon: Horizon) -> Result<Vec<Segmentation>> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one epoch".into()));
    }
    let count = segmentation_count(k, horizon);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let cells = horizon.cells();
    let mut out = Vec::with_capacity(count as usize);
    for start in 0..k {
        let max_extra = k - 1 - start;
        let extras: Vec<usize> = if horizon.is_terminal() {
            vec![max_extra]
        } else {
            (0..=max_extra).collect()
        };
        for extra in extras {
            let mut current = Vec::with_capacity(extra);
            choose(1, cells, extra, &mut current, &mut |b| {
                out.push(Segmentation {
                    start_epoch: start,
                    boundaries: b.to_vec(),
                    cells,
                })
            });
        }
    }
    Ok(out)
}

/// Visits every increasing `want`-subset of `from..cells`.
fn choose(
    from: usize,
    cells: usize,
    want: usize,
    current: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]),
) {
    if current.len() == want {
        visit(current);
        return;
    }
    let remaining = want - current.len();
    for b in from..cells {
        if cells - b < remaining {
            break;
        }
        current.push(b);
        choose(b + 1, cells, want, current, visit);
        current.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn single_epoch_has_one_segmentation() {
        for t in [0.0, 0.5, 3.0, 11.2] {
            assert_eq!(
                enumerate_segmentations(1, Horizon::Censored(t))
                    .unwrap()
                    .len(),
                1
            );
            assert_eq!(
                enumerate_segmentations(1, Horizon::Terminal(t + 1.0))
                    .unwrap()
                    .len(),
                1
            );
        }
    }

    #[test]
    fn two_epochs_three_hours() {
        // start in epoch 2 (1 way) + start in epoch 1 with a boundary at
        // 1, 2 or 3, or still in epoch 1 (4 ways)
        let all = enumerate_segmentations(2, Horizon::Censored(3.0)).unwrap();
        assert_eq!(all.len(), 5);
    }

    #[test]
    fn counts_match_closed_form_and_are_unique() {
        for k in 1..=3 {
            for t in 0..=6 {
                for h in [
                    Horizon::Censored(t as f64),
                    Horizon::Terminal(t as f64 + 1.0),
                ] {
                    let all = enumerate_segmentations(k, h).unwrap();
                    let unique: HashSet<_> = all.iter().collect();
                    assert_eq!(unique.len(), all.len());
                    assert_eq!(all.len() as u128, segmentation_count(k, h), "k={k} {h:?}");
                    // independent stars-and-bars tally
                    let slots = h.cells() - 1;
                    let mut expect = 0u128;
                    for start in 0..k {
                        for extra in 0..k - start {
                            if h.is_terminal() && extra != k - 1 - start {
                                continue;
                            }
                            if extra > slots {
                                continue;
                            }
                            let mut c = 1u128;
                            for i in 0..extra {
                                c = c * (slots - i) as u128 / (i + 1) as u128;
                            }
                            expect += c;
                        }
                    }
                    assert_eq!(all.len() as u128, expect);
                }
            }
        }
    }

    #[test]
    fn boundary_hour_belongs_to_later_epoch() {
        let s = Segmentation {
            start_epoch: 0,
            boundaries: vec![2],
            cells: 5,
        };
        assert_eq!(s.labels(&[0.0, 1.99, 2.0, 4.5]), vec![0, 0, 1, 1]);
    }

    #[test]
    fn guard_trips() {
        assert!(matches!(
            enumerate_segmentations(12, Horizon::Censored(500.0)),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }
}
