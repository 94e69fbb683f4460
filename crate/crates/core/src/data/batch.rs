//! Length-sorted, zero-padded mini-batches.
//!
//! Records are sorted by length and cut into `ceil(n / batch_size)`
//! contiguous groups, normally full batches with a smaller remainder last.
//! That layout is not always the least padded one (lengths 1, 100, 100 in
//! pairs pad 99 samples, while the single record alone first pads none),
//! so the planner keeps the padding minimal over every grouping into the
//! same number of batches and departs from the usual layout only when
//! it must.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::preprocess::PreparedRecord;
use super::record::{Stage, EPOCH_SECONDS};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Default mini-batch size.
pub const DEFAULT_BATCH_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub subject_ids: Vec<String>,
    /// Position of each member in the slice given to [`make_batches`].
    pub indices: Vec<usize>,
    /// `[n, 1, L_pad]`, zero beyond each record's length.
    pub inputs: Tensor,
    /// Valid samples per record.
    pub lengths: Vec<usize>,
    /// Per-sample validity, `n * L_pad` entries.
    pub mask: Vec<bool>,
    /// Per-epoch validity, `n * L_pad/30` entries.
    pub epoch_mask: Vec<bool>,
    /// Per-epoch labels; padded epochs hold `Sleep` and are masked out.
    pub labels: Vec<Stage>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn padded_len(&self) -> usize {
        self.inputs.shape()[2]
    }

    pub fn padded_epochs(&self) -> usize {
        self.padded_len() / EPOCH_SECONDS
    }

    pub fn scored_epochs(&self) -> usize {
        self.epoch_mask.iter().filter(|&&m| m).count()
    }

    /// Zero samples added by padding.
    pub fn padding(&self) -> usize {
        self.len() * self.padded_len() - self.lengths.iter().sum::<usize>()
    }
}

/// Total padding of a grouping: for each group, size times its maximum
/// minus the sum of its lengths.
pub fn grouping_padding(lengths: &[usize], groups: &[Vec<usize>]) -> usize {
    groups
        .iter()
        .map(|g| {
            let max = g.iter().map(|&i| lengths[i]).max().unwrap_or(0);
            g.iter().map(|&i| max - lengths[i]).sum::<usize>()
        })
        .sum()
}

/// Least total padding over contiguous groupings of the sorted lengths
/// into exactly `count` groups of at most `cap` records, with one optimal
/// list of group sizes.
fn optimal_sizes(sorted: &[usize], count: usize, cap: usize) -> (usize, Vec<usize>) {
    let n = sorted.len();
    let prefix: Vec<usize> = std::iter::once(0)
        .chain(sorted.iter().scan(0, |acc, &l| {
            *acc += l;
            Some(*acc)
        }))
        .collect();
    // cost of group sorted[a..b]: its maximum is the last element
    let group = |a: usize, b: usize| (b - a) * sorted[b - 1] - (prefix[b] - prefix[a]);
    const INF: usize = usize::MAX;
    let mut best = vec![vec![INF; count + 1]; n + 1];
    let mut take = vec![vec![0usize; count + 1]; n + 1];
    best[0][0] = 0;
    for i in 1..=n {
        for k in 1..=count.min(i) {
            for s in 1..=cap.min(i) {
                let prev = best[i - s][k - 1];
                if prev == INF {
                    continue;
                }
                let c = prev + group(i - s, i);
                if c < best[i][k] {
                    best[i][k] = c;
                    take[i][k] = s;
                }
            }
        }
    }
    let mut sizes = Vec::with_capacity(count);
    let (mut i, mut k) = (n, count);
    while k > 0 {
        sizes.push(take[i][k]);
        i -= take[i][k];
        k -= 1;
    }
    sizes.reverse();
    (best[n][count], sizes)
}

/// Groups record indices by sorted length. See the module docs.
///
/// The batch count is `ceil(n / batch_size)`. Among groupings with that
/// many batches of at most `batch_size` records, the result has the least
/// total padding. Full batches with the remainder last are used whenever
/// they reach that minimum, then full batches with the remainder moved
/// earlier, and only otherwise an uneven split.
pub fn plan_batches(lengths: &[usize], batch_size: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let n = lengths.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..n).collect();
    // stable, so equal lengths keep their input order
    order.sort_by_key(|&i| lengths[i]);
    let sorted: Vec<usize> = order.iter().map(|&i| lengths[i]).collect();

    let count = n.div_ceil(batch_size);
    let small = n - (count - 1) * batch_size;
    let cut = |sizes: &[usize]| -> Vec<Vec<usize>> {
        let mut start = 0;
        sizes
            .iter()
            .map(|&s| {
                let g = order[start..start + s].to_vec();
                start += s;
                g
            })
            .collect()
    };

    let (optimum, fallback) = optimal_sizes(&sorted, count, batch_size);
    for slot in (0..count).rev() {
        let sizes: Vec<usize> = (0..count).map(|b| if b == slot { small } else { batch_size }).collect();
        let groups = cut(&sizes);
        if grouping_padding(lengths, &groups) == optimum {
            return Ok(groups);
        }
        if small == batch_size {
            break;
        }
    }
    Ok(cut(&fallback))
}

/// Sorts, groups and pads `records` into batches. Batch order is fixed
/// here; the trainer shuffles it per epoch with [`batch_order`].
pub fn make_batches(records: &[PreparedRecord], batch_size: usize) -> Result<Vec<Batch>> {
    for r in records {
        if r.is_empty() || r.len() % EPOCH_SECONDS != 0 || r.labels.len() != r.len() / EPOCH_SECONDS {
            return Err(Error::Data(format!(
                "{}: {} samples with {} labels is not a whole-epoch record",
                r.subject_id,
                r.len(),
                r.labels.len()
            )));
        }
    }
    let lengths: Vec<usize> = records.iter().map(PreparedRecord::len).collect();
    plan_batches(&lengths, batch_size)?
        .into_iter()
        .map(|group| assemble(records, group))
        .collect()
}

fn assemble(records: &[PreparedRecord], indices: Vec<usize>) -> Result<Batch> {
    let padded = indices.iter().map(|&i| records[i].len()).max().unwrap_or(0);
    let epochs = padded / EPOCH_SECONDS;
    let n = indices.len();
    let mut inputs = vec![0.0; n * padded];
    let mut mask = vec![false; n * padded];
    let mut epoch_mask = vec![false; n * epochs];
    let mut labels = vec![Stage::Sleep; n * epochs];
    for (row, &i) in indices.iter().enumerate() {
        let r = &records[i];
        inputs[row * padded..row * padded + r.len()].copy_from_slice(&r.signal);
        mask[row * padded..row * padded + r.len()].fill(true);
        epoch_mask[row * epochs..row * epochs + r.labels.len()].fill(true);
        labels[row * epochs..row * epochs + r.labels.len()].copy_from_slice(&r.labels);
    }
    Ok(Batch {
        subject_ids: indices.iter().map(|&i| records[i].subject_id.clone()).collect(),
        lengths: indices.iter().map(|&i| records[i].len()).collect(),
        indices,
        inputs: Tensor::new(vec![n, 1, padded], inputs)?,
        mask,
        epoch_mask,
        labels,
    })
}

/// Permutation of `0..n_batches` for one training epoch, a pure function
/// of the run seed and the epoch number.
pub fn batch_order(seed: u64, epoch: usize, n_batches: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n_batches).collect();
    order.shuffle(&mut rng);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, epochs: usize) -> PreparedRecord {
        PreparedRecord {
            subject_id: id.into(),
            signal: (0..epochs * EPOCH_SECONDS).map(|i| i as f64 + 1.0).collect(),
            labels: vec![Stage::Wake; epochs],
        }
    }

    #[test]
    fn sorted_grouping_example() {
        let recs = [record("a", 3), record("b", 1), record("c", 2)];
        let batches = make_batches(&recs, 2).unwrap();
        let padded: Vec<usize> = batches.iter().map(Batch::padded_len).collect();
        assert_eq!(padded, vec![60, 90]);
        assert_eq!(batches[0].subject_ids, vec!["b", "c"]);
    }

    #[test]
    fn single_record_has_no_padding() {
        let batches = make_batches(&[record("a", 4)], DEFAULT_BATCH_SIZE).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].padding(), 0);
        assert!(batches[0].epoch_mask.iter().all(|&m| m));
    }

    #[test]
    fn empty_input_gives_no_batches() {
        assert!(make_batches(&[], 4).unwrap().is_empty());
    }

    #[test]
    fn padded_entries_are_zero_and_masked() {
        let recs = [record("a", 1), record("b", 2)];
        let b = &make_batches(&recs, 2).unwrap()[0];
        assert_eq!(b.inputs.shape(), &[2, 1, 60]);
        assert!(b.inputs.data()[30..60].iter().all(|&v| v == 0.0));
        assert!(!b.mask[30] && b.mask[29]);
        assert_eq!(b.epoch_mask, vec![true, false, true, true]);
    }

    #[test]
    fn small_group_moves_to_cheapest_slot() {
        // sorted [1, 100, 100]; the small group alone at the front pads nothing
        let groups = plan_batches(&[100, 1, 100], 2).unwrap();
        assert_eq!(groups, vec![vec![1], vec![0, 2]]);
    }

    #[test]
    fn uneven_split_when_it_pads_less() {
        assert_eq!(plan_batches(&[1, 1, 100, 100], 3).unwrap(), vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn batch_order_is_a_seeded_permutation() {
        let a = batch_order(3, 1, 10);
        assert_eq!(a, batch_order(3, 1, 10));
        let mut s = a.clone();
        s.sort_unstable();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
        assert_ne!(a, batch_order(3, 2, 10));
    }
}
