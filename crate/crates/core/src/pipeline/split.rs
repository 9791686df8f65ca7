use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Disjoint patient-id lists. Images never appear here, only patients, so a
/// patient's frames cannot straddle two splits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    /// `(name, ids)` for train, val and test.
    pub fn parts(&self) -> [(&'static str, &[String]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

/// Shuffles the ids with `seed`, then takes `floor(n·f)` patients for val and
/// for test; the remainder trains.
pub fn split_patients(ids: &[String], fractions: [f64; 3], seed: u64) -> Result<SplitSpec> {
    if ids.len() < 3 {
        return Err(Error::config("patient_ids", format!("need at least 3 patients, got {}", ids.len())));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config("fractions", format!("must be in [0, 1] and sum to 1, got {fractions:?}")));
    }
    let mut uniq = ids.to_vec();
    uniq.sort();
    uniq.dedup();
    if uniq.len() != ids.len() {
        return Err(Error::config("patient_ids", "ids must be unique"));
    }
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = order.len() as f64;
    let n_val = (n * fractions[1]).floor() as usize;
    let n_test = (n * fractions[2]).floor() as usize;
    let test = order.split_off(order.len() - n_test);
    let val = order.split_off(order.len() - n_val);
    Ok(SplitSpec { train: order, val, test, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("P{i:04}")).collect()
    }

    #[test]
    fn eighty_ten_ten() {
        let s = split_patients(&ids(100), [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        let all: BTreeSet<_> = s.all().collect();
        assert_eq!(all.len(), 100);
        assert_eq!(s, split_patients(&ids(100), [0.8, 0.1, 0.1], 3).unwrap());
        assert_ne!(s, split_patients(&ids(100), [0.8, 0.1, 0.1], 4).unwrap());
        let odd = split_patients(&ids(13), [0.8, 0.1, 0.1], 0).unwrap();
        assert_eq!((odd.train.len(), odd.val.len(), odd.test.len()), (11, 1, 1));
    }

    #[test]
    fn errors() {
        assert!(matches!(split_patients(&ids(10), [0.8, 0.1, 0.2], 0), Err(Error::Config { field: "fractions", .. })));
        assert!(split_patients(&ids(2), [0.8, 0.1, 0.1], 0).is_err());
        let mut dup = ids(5);
        dup[1] = dup[0].clone();
        assert!(split_patients(&dup, [0.8, 0.1, 0.1], 0).is_err());
    }
}
