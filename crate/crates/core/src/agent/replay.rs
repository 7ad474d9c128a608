use crate::diffusion::{DynamicsBatch, DynamicsSource};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// One environment transition as seen by the agent.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Minibatch with one transition per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub s: Matrix,
    pub a: Matrix,
    pub r: Vec<f64>,
    pub s_next: Matrix,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Rows of `[s, a]`.
    pub fn sa(&self) -> Matrix {
        self.s.hcat(&self.a).expect("batch rows agree")
    }
}

/// Bounded ring of transitions; the oldest entry is overwritten when full.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config(None, "replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            state_dim,
            action_dim,
            items: Vec::new(),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Position the next push will write to once the ring is full.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Stored transitions in slot order.
    pub fn items(&self) -> &[Transition] {
        &self.items
    }

    /// Rebuilds a buffer from stored slots and cursor.
    pub fn from_parts(capacity: usize, state_dim: usize, action_dim: usize, items: Vec<Transition>, cursor: usize) -> Result<Self> {
        let mut buf = Self::new(capacity, state_dim, action_dim)?;
        if items.len() > capacity || cursor >= capacity.max(1) || (items.len() < capacity && cursor != items.len() % capacity) {
            return Err(Error::Checkpoint(format!(
                "inconsistent replay state: {} items, capacity {capacity}, cursor {cursor}",
                items.len()
            )));
        }
        for t in &items {
            buf.check(t)?;
        }
        buf.items = items;
        buf.cursor = cursor;
        Ok(buf)
    }

    fn check(&self, t: &Transition) -> Result<()> {
        if t.s.len() != self.state_dim || t.s_next.len() != self.state_dim {
            return Err(Error::dim("transition state", self.state_dim, t.s.len().max(t.s_next.len())));
        }
        if t.a.len() != self.action_dim {
            return Err(Error::dim("transition action", self.action_dim, t.a.len()));
        }
        if !t.r.is_finite() {
            return Err(Error::Poison(format!("non-finite reward {}", t.r)));
        }
        Ok(())
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        self.check(&t)?;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// `n` transitions drawn uniformly with replacement; `n` may not exceed the stored count.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Batch> {
        let idx = self.indices(n, rng)?;
        let pick = |f: &dyn Fn(&Transition) -> &[f64], cols: usize| Matrix::from_fn(n, cols, |i, j| f(&self.items[idx[i]])[j]);
        Ok(Batch {
            s: pick(&|t| &t.s, self.state_dim),
            a: pick(&|t| &t.a, self.action_dim),
            r: idx.iter().map(|&i| self.items[i].r).collect(),
            s_next: pick(&|t| &t.s_next, self.state_dim),
            done: idx.iter().map(|&i| self.items[i].done).collect(),
        })
    }

    fn indices(&self, n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::Contract("cannot sample from an empty replay buffer".into()));
        }
        if n > self.items.len() {
            return Err(Error::Contract(format!("asked for {n} samples from a buffer holding {}", self.items.len())));
        }
        Ok((0..n).map(|_| rng.index(self.items.len())).collect())
    }
}

impl DynamicsSource for ReplayBuffer {
    fn len(&self) -> usize {
        self.items.len()
    }

    /// Reads states, actions and next states only; rewards never leave the buffer here.
    fn sample_dynamics(&self, n: usize, rng: &mut Rng) -> Result<DynamicsBatch> {
        let idx = self.indices(n, rng)?;
        let (ds, da) = (self.state_dim, self.action_dim);
        let sa = Matrix::from_fn(n, ds + da, |i, j| {
            let t = &self.items[idx[i]];
            if j < ds {
                t.s[j]
            } else {
                t.a[j - ds]
            }
        });
        let next = Matrix::from_fn(n, ds, |i, j| self.items[idx[i]].s_next[j]);
        DynamicsBatch::new(sa, next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    fn tr(x: f64) -> Transition {
        Transition {
            s: vec![x],
            a: vec![0.0],
            r: x,
            s_next: vec![x + 1.0],
            done: false,
        }
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut buf = ReplayBuffer::new(2, 1, 1).unwrap();
        for x in [1.0, 2.0, 3.0] {
            buf.push(tr(x)).unwrap();
        }
        assert_eq!(buf.len(), 2);
        let rs: Vec<f64> = buf.items().iter().map(|t| t.r).collect();
        assert!(!rs.contains(&1.0));
        assert!(rs.contains(&2.0) && rs.contains(&3.0));
    }

    #[test]
    fn identical_records_give_identical_batches() {
        let mut rng = seeded_rng(1);
        let mut buf = ReplayBuffer::new(8, 1, 1).unwrap();
        for _ in 0..5 {
            buf.push(tr(0.25)).unwrap();
        }
        let b = buf.sample(5, &mut rng).unwrap();
        assert!(b.r.iter().all(|&r| r == 0.25));
        assert!(b.s_next.data().iter().all(|&x| x == 1.25));
    }

    #[test]
    fn sampling_guards() {
        let mut rng = seeded_rng(2);
        let mut buf = ReplayBuffer::new(4, 1, 1).unwrap();
        assert!(buf.sample(1, &mut rng).is_err());
        buf.push(tr(1.0)).unwrap();
        assert!(buf.sample(2, &mut rng).is_err());
        assert!(buf.push(Transition { r: f64::NAN, ..tr(0.0) }).is_err());
        assert!(buf.push(Transition { s: vec![0.0, 1.0], ..tr(0.0) }).is_err());
    }

    #[test]
    fn uniform_frequencies() {
        let mut rng = seeded_rng(3);
        let mut buf = ReplayBuffer::new(10, 1, 1).unwrap();
        for i in 0..10 {
            buf.push(tr(i as f64)).unwrap();
        }
        let n = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..n / 10 {
            for r in buf.sample(10, &mut rng).unwrap().r {
                counts[r as usize] += 1;
            }
        }
        let (p, nf) = (0.1, n as f64);
        let sigma = (nf * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - nf * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn dynamics_view_matches_transitions() {
        let mut rng = seeded_rng(4);
        let mut buf = ReplayBuffer::new(4, 1, 1).unwrap();
        for _ in 0..3 {
            buf.push(tr(2.0)).unwrap();
        }
        let d = buf.sample_dynamics(3, &mut rng).unwrap();
        assert_eq!(d.sa.data(), &[2.0, 0.0, 2.0, 0.0, 2.0, 0.0]);
        assert_eq!(d.next.data(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn parts_round_trip() {
        let mut buf = ReplayBuffer::new(3, 1, 1).unwrap();
        for x in 0..5 {
            buf.push(tr(x as f64)).unwrap();
        }
        let back = ReplayBuffer::from_parts(3, 1, 1, buf.items().to_vec(), buf.cursor()).unwrap();
        assert_eq!(back, buf);
        assert!(ReplayBuffer::from_parts(3, 1, 1, buf.items().to_vec(), 7).is_err());
    }
}
