use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LabelRaster;
use crate::error::{bail, Result};

/// Which subset a labeled pixel belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl Subset {
    pub fn name(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "train" => Some(Subset::Train),
            "val" | "validation" => Some(Subset::Val),
            "test" => Some(Subset::Test),
            _ => None,
        }
    }
}

/// `(train, val, test)` sizes for a class of `n` pixels: 30 % and 20 %
/// rounded half up, the test set takes the remainder.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = (3 * n + 5) / 10;
    let val = (2 * n + 5) / 10;
    (train, val, n - train - val)
}

/// Per-pixel subset membership (raster order); unlabeled pixels are `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub seed: u64,
    pub assignment: Vec<Option<Subset>>,
}

impl SplitAssignment {
    /// Flat pixel indices of `subset`, ascending.
    pub fn indices(&self, subset: Subset) -> Vec<usize> {
        self.assignment.iter().enumerate().filter(|(_, s)| **s == Some(subset)).map(|(i, _)| i).collect()
    }
}

/// Seeded per-class 30/20/50 split of every labeled pixel.
pub fn stratified_split(labels: &LabelRaster, seed: u64) -> Result<SplitAssignment> {
    let classes = labels.num_classes();
    if classes == 0 {
        bail!(Data, "label raster has no labeled pixels");
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.labels().iter().enumerate() {
        if l > 0 {
            members[l as usize - 1].push(i);
        }
    }
    if let Some(c) = members.iter().position(|m| m.is_empty()) {
        bail!(Data, "class {} has no labeled pixels", c + 1);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![None; labels.labels().len()];
    for m in &mut members {
        m.shuffle(&mut rng);
        let (train, val, _) = split_counts(m.len());
        for (rank, &px) in m.iter().enumerate() {
            assignment[px] = Some(if rank < train {
                Subset::Train
            } else if rank < train + val {
                Subset::Val
            } else {
                Subset::Test
            });
        }
    }
    Ok(SplitAssignment { seed, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(split_counts(25849), (7755, 5170, 12924));
        assert_eq!(split_counts(10), (3, 2, 5));
        assert_eq!(split_counts(1), (0, 0, 1));
    }

    #[test]
    fn empty_class_is_named() {
        let r = LabelRaster::new(1, 3, vec![1, 3, 0]).unwrap();
        match stratified_split(&r, 0) {
            Err(crate::Error::Data(m)) => assert!(m.contains("class 2")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn seeds_shuffle_not_counts() {
        let r = LabelRaster::new(10, 10, (0..100).map(|i| (i % 3) as u16).collect()).unwrap();
        let a = stratified_split(&r, 1).unwrap();
        let b = stratified_split(&r, 1).unwrap();
        let c = stratified_split(&r, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.assignment, c.assignment);
        for s in [Subset::Train, Subset::Val, Subset::Test] {
            assert_eq!(a.indices(s).len(), c.indices(s).len());
        }
    }
}
