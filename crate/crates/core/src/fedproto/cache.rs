//! Server-side store of the latest party outputs per sample.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ServerCache {
    n: usize,
    widths: Vec<usize>,
    offsets: Vec<usize>,
    row_len: usize,
    latest: Vec<f64>,
    stamp: Vec<u64>,
    filled: Vec<bool>,
    missing: usize,
}

impl ServerCache {
    pub fn new(n: usize, output_dims: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(output_dims.len());
        let mut acc = 0;
        for &w in output_dims {
            offsets.push(acc);
            acc += w;
        }
        let q = output_dims.len();
        Self {
            n,
            widths: output_dims.to_vec(),
            offsets,
            row_len: acc,
            latest: vec![0.0; n * acc],
            stamp: vec![0; n * q],
            filled: vec![false; n * q],
            missing: n * q,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.widths.len()
    }

    pub fn is_warm(&self) -> bool {
        self.missing == 0
    }

    fn check(&self, i: usize, m: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::Protocol(format!("unknown sample id {i}")));
        }
        if m >= self.q() {
            return Err(Error::Protocol(format!("unknown party {m}")));
        }
        Ok(())
    }

    pub fn is_filled(&self, i: usize, m: usize) -> bool {
        i < self.n && m < self.q() && self.filled[i * self.q() + m]
    }

    /// Cached `c_{i,m}`.
    pub fn get(&self, i: usize, m: usize) -> Result<&[f64]> {
        self.check(i, m)?;
        if !self.filled[i * self.q() + m] {
            return Err(Error::Protocol(format!("cache entry ({i}, {m}) was never populated")));
        }
        let start = i * self.row_len + self.offsets[m];
        Ok(&self.latest[start..start + self.widths[m]])
    }

    /// Concatenated `c_i` across parties.
    pub fn row(&self, i: usize) -> Result<&[f64]> {
        if i >= self.n {
            return Err(Error::Protocol(format!("unknown sample id {i}")));
        }
        Ok(&self.latest[i * self.row_len..(i + 1) * self.row_len])
    }

    pub fn offset(&self, m: usize) -> usize {
        self.offsets[m]
    }

    pub fn stamp(&self, i: usize, m: usize) -> Result<u64> {
        self.check(i, m)?;
        Ok(self.stamp[i * self.q() + m])
    }

    /// Overwrites `c_{i,m}` received at event `stamp`.
    pub fn store(&mut self, i: usize, m: usize, c: &[f64], stamp: u64) -> Result<()> {
        self.check(i, m)?;
        if c.len() != self.widths[m] {
            return Err(Error::Protocol(format!("party {m} sent {} values, expected {}", c.len(), self.widths[m])));
        }
        let k = i * self.q() + m;
        if self.filled[k] && stamp < self.stamp[k] {
            return Err(Error::Protocol(format!("stamp for ({i}, {m}) would go back from {} to {stamp}", self.stamp[k])));
        }
        let start = i * self.row_len + self.offsets[m];
        self.latest[start..start + c.len()].copy_from_slice(c);
        if !self.filled[k] {
            self.filled[k] = true;
            self.missing -= 1;
        }
        self.stamp[k] = stamp;
        Ok(())
    }

    /// Parties other than `except` whose entry for sample `i` is older than
    /// `tau` events at event `now`.
    pub fn stale_parties(&self, i: usize, except: usize, now: u64, tau: u64) -> Result<Vec<usize>> {
        if i >= self.n {
            return Err(Error::Protocol(format!("unknown sample id {i}")));
        }
        let q = self.q();
        Ok((0..q)
            .filter(|&m| m != except && now.saturating_sub(self.stamp[i * q + m]) > tau)
            .collect())
    }

    /// Largest `now - stamp` among entries of sample `i` other than `except`.
    pub fn max_age(&self, i: usize, except: usize, now: u64) -> u64 {
        let q = self.q();
        (0..q)
            .filter(|&m| m != except)
            .map(|m| now.saturating_sub(self.stamp[i * q + m]))
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_and_read() {
        let mut c = ServerCache::new(2, &[1, 2]);
        assert!(!c.is_warm());
        assert!(c.get(0, 0).is_err());
        c.store(0, 0, &[1.0], 0).unwrap();
        c.store(0, 1, &[2.0, 3.0], 0).unwrap();
        c.store(1, 0, &[4.0], 0).unwrap();
        c.store(1, 1, &[5.0, 6.0], 0).unwrap();
        assert!(c.is_warm());
        assert_eq!(c.row(1).unwrap(), &[4.0, 5.0, 6.0]);
        assert_eq!(c.get(0, 1).unwrap(), &[2.0, 3.0]);
    }

    #[test]
    fn stamps_never_decrease() {
        let mut c = ServerCache::new(1, &[1]);
        c.store(0, 0, &[1.0], 5).unwrap();
        assert!(c.store(0, 0, &[1.0], 4).is_err());
        c.store(0, 0, &[2.0], 5).unwrap();
        assert_eq!(c.stamp(0, 0).unwrap(), 5);
    }

    #[test]
    fn unknown_ids_and_widths() {
        let mut c = ServerCache::new(1, &[1]);
        assert!(matches!(c.store(3, 0, &[1.0], 0), Err(Error::Protocol(_))));
        assert!(matches!(c.store(0, 2, &[1.0], 0), Err(Error::Protocol(_))));
        assert!(matches!(c.store(0, 0, &[1.0, 2.0], 0), Err(Error::Protocol(_))));
    }

    #[test]
    fn staleness_queries() {
        let mut c = ServerCache::new(1, &[1, 1, 1]);
        c.store(0, 0, &[0.0], 0).unwrap();
        c.store(0, 1, &[0.0], 3).unwrap();
        c.store(0, 2, &[0.0], 7).unwrap();
        assert_eq!(c.stale_parties(0, 2, 8, 4).unwrap(), vec![0, 1]);
        assert_eq!(c.stale_parties(0, 2, 8, 5).unwrap(), vec![0]);
        assert_eq!(c.stale_parties(0, 0, 8, 4).unwrap(), vec![1]);
        assert_eq!(c.max_age(0, 0, 8), 5);
        assert_eq!(c.stale_parties(0, 1, 8, 100).unwrap(), Vec::<usize>::new());
    }
}
