use std::collections::VecDeque;

use super::SimError;

/// Pool depth the leader keeps topped up.
pub const POOL_SIZE: usize = 100;

/// Pre-agreed FIFO of random numbers.
///
/// Both clients draw from the head; only the leader generates, and every
/// value it generates reaches the follower as a refill record. A follower
/// running ahead can therefore draw at most `capacity` values before the
/// refills catch up.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomPool {
    queue: VecDeque<f64>,
    capacity: usize,
}

impl Default for RandomPool {
    fn default() -> Self {
        Self::new(POOL_SIZE)
    }
}

impl RandomPool {
    pub fn new(capacity: usize) -> Self {
        RandomPool { queue: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn push(&mut self, value: f64) -> Result<(), SimError> {
        if self.queue.len() >= self.capacity {
            return Err(SimError::PoolOverflow);
        }
        if !(0.0..1.0).contains(&value) {
            return Err(SimError::Handler(format!("random value {value} outside [0, 1)")));
        }
        self.queue.push_back(value);
        Ok(())
    }

    pub fn extend(&mut self, values: &[f64]) -> Result<(), SimError> {
        if self.queue.len() + values.len() > self.capacity {
            return Err(SimError::PoolOverflow);
        }
        values.iter().try_for_each(|v| self.push(*v))
    }

    pub fn pop(&mut self) -> Result<f64, SimError> {
        self.queue.pop_front().ok_or(SimError::PoolExhausted)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.queue.iter().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifo_and_bounds() {
        let mut p = RandomPool::new(3);
        p.extend(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(p.push(0.4), Err(SimError::PoolOverflow));
        assert_eq!(p.pop(), Ok(0.1));
        p.push(0.4).unwrap();
        let drained: Vec<f64> = std::iter::from_fn(|| p.pop().ok()).collect();
        assert_eq!(drained, [0.2, 0.3, 0.4]);
        assert_eq!(p.pop(), Err(SimError::PoolExhausted));
    }

    #[test]
    fn rejects_out_of_range() {
        let mut p = RandomPool::default();
        assert!(p.push(1.0).is_err());
        assert!(p.push(-0.1).is_err());
        assert_eq!(p.capacity(), POOL_SIZE);
    }
}
