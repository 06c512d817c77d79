use rand::seq::SliceRandom;

use crate::rng::Rng;

/// Endless stream of indices into `0..n`, one fresh permutation after another.
#[derive(Debug, Clone)]
pub struct CyclingSampler {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl CyclingSampler {
    pub fn new(n: usize, rng: Rng) -> Self {
        let mut s = CyclingSampler {
            order: (0..n).collect(),
            pos: 0,
            rng,
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    /// Next `size` indices, wrapping into a new permutation when needed.
    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let take = (size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

/// Shuffled pass over `0..n` cut into batches of at most `size`.
pub fn epoch_batches(n: usize, size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn cycling_sampler_covers_each_permutation() {
        let mut s = CyclingSampler::new(5, rng_for(1, "s"));
        let mut first: Vec<usize> = s.next_batch(3);
        first.extend(s.next_batch(2));
        first.sort_unstable();
        assert_eq!(first, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.next_batch(12).len(), 12);
    }

    #[test]
    fn epoch_batches_partition_the_range() {
        let b = epoch_batches(10, 4, &mut rng_for(2, "e"));
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
