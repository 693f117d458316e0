//! Scripted stand-ins for a trained model.

use super::{Result, StepModel};
use crate::corpus::vocab::{EncodedInput, EOS};

/// Follows weighted token paths.
///
/// After a prefix `y`, every path that strictly extends `y` votes its
/// weight for its next token; the votes are normalized into the next-token
/// distribution. A prefix no path extends puts all mass on `EOS`.
#[derive(Debug, Clone)]
pub struct PathModel {
    pub ext_size: usize,
    pub paths: Vec<(Vec<u32>, f64)>,
}

impl PathModel {
    pub fn new(ext_size: usize, paths: Vec<(Vec<u32>, f64)>) -> Self {
        Self { ext_size, paths }
    }

    /// Next-token distribution after `prefix` (without `BOS`).
    pub fn distribution(&self, prefix: &[u32]) -> Vec<f64> {
        let mut p = vec![0.0; self.ext_size];
        let mut total = 0.0;
        for (path, w) in &self.paths {
            if path.len() > prefix.len() && path.starts_with(prefix) {
                p[path[prefix.len()] as usize] += w;
                total += w;
            }
        }
        if total == 0.0 {
            p[EOS as usize] = 1.0;
        } else {
            p.iter_mut().for_each(|v| *v /= total);
        }
        p
    }
}

impl StepModel for PathModel {
    type State = Vec<u32>;

    fn ext_size(&self) -> usize {
        self.ext_size
    }

    fn start(&self, _input: &EncodedInput) -> Result<Vec<u32>> {
        Ok(Vec::new())
    }

    /// The state is every token fed so far, the leading `BOS` included.
    fn step(&self, state: &mut Vec<u32>, token: u32) -> Result<Vec<f64>> {
        state.push(token);
        Ok(self.distribution(&state[1..]))
    }
}
