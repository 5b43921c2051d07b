/// Adaptive prefetch degree.
///
/// The first access prefetches the full degree. Each sequential access
/// (same or next ordinal as the previous one) doubles the degree up to the
/// maximum; any other access halves it, so isolated random accesses stop
/// prefetching altogether.
#[derive(Debug, Clone)]
pub struct PrefetchStrategy {
    max_degree: usize,
    degree: usize,
    last: Option<usize>,
}

impl PrefetchStrategy {
    pub fn new(max_degree: usize) -> Self {
        Self {
            max_degree,
            degree: max_degree,
            last: None,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Records an access to ordinal `accessed` and returns the ordinals to
    /// prefetch. The caller filters out cached and in-flight ones.
    pub fn plan(&mut self, accessed: usize) -> Vec<usize> {
        self.degree = match self.last {
            None => self.max_degree,
            Some(last) if accessed == last || accessed == last + 1 => {
                (2 * self.degree).max(1).min(self.max_degree)
            }
            Some(_) => self.degree / 2,
        };
        self.last = Some(accessed);
        (accessed + 1..=accessed + self.degree).collect()
    }
}
