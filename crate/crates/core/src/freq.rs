//! Empirical count table `N(x)`.

/// Counts `N(x)` for `x = 0..=max(xs)+1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: Vec<u64>,
    n: usize,
}

impl FrequencyTable {
    pub fn new(xs: &[u64]) -> Self {
        let Some(&max) = xs.iter().max() else {
            return Self { counts: Vec::new(), n: 0 };
        };
        let mut counts = vec![0u64; max as usize + 2];
        for &x in xs {
            counts[x as usize] += 1;
        }
        Self { counts, n: xs.len() }
    }

    /// `N(x)`, zero beyond the table.
    pub fn count(&self, x: u64) -> u64 {
        self.counts.get(x as usize).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_x(&self) -> Option<u64> {
        if self.n == 0 {
            None
        } else {
            Some(self.counts.len() as u64 - 2)
        }
    }

    /// Observed values and their counts in increasing order.
    pub fn observed(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts.iter().enumerate().filter(|(_, c)| **c > 0).map(|(x, c)| (x as u64, *c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_small_sample() {
        let t = FrequencyTable::new(&[0, 0, 1, 2]);
        assert_eq!(t.counts(), &[2, 1, 1, 0]);
        assert_eq!(t.n(), 4);
        assert_eq!(t.count(10), 0);
        assert_eq!(t.max_x(), Some(2));
        assert_eq!(t.observed().collect::<Vec<_>>(), vec![(0, 2), (1, 1), (2, 1)]);
    }

    #[test]
    fn empty_sample() {
        let t = FrequencyTable::new(&[]);
        assert_eq!(t.n(), 0);
        assert_eq!(t.max_x(), None);
        assert!(t.counts().is_empty());
    }
}
