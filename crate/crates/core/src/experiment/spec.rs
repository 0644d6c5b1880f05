//! Experiment parameters.

use serde::{Deserialize, Serialize};

use crate::dataset::VectorFormat;
use crate::error::{Error, Result};
use crate::experiment::synthetic::SyntheticSpec;
use crate::graph::{DeletePolicy, GraphParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    File { path: String, format: VectorFormat },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workers {
    pub insert: usize,
    pub delete: usize,
    pub search: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub data: DataSource,
    pub max_degree: usize,
    pub build_list_size: usize,
    pub alpha: f32,
    /// PQ bytes per vector.
    pub pq_bytes: usize,
    /// Temp index point cap `M`.
    pub temp_cap: usize,
    pub cycles: usize,
    pub delete_fraction: f64,
    pub insert_fraction: f64,
    pub policy: DeletePolicy,
    pub k: usize,
    /// Search list sizes to evaluate; the first is used where one is needed.
    pub search_lists: Vec<usize>,
    pub queries: usize,
    pub workers: Workers,
    pub merge_threads: usize,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            data: DataSource::Synthetic(SyntheticSpec::new(100_000, 64, 64, 1)),
            max_degree: 32,
            build_list_size: 50,
            alpha: 1.2,
            pq_bytes: 16,
            temp_cap: 10_000,
            cycles: 20,
            delete_fraction: 0.1,
            insert_fraction: 0.1,
            policy: DeletePolicy::FreshVamana,
            k: 5,
            search_lists: vec![20, 30, 40, 60, 80, 100],
            queries: 1000,
            workers: Workers {
                insert: 1,
                delete: 1,
                search: 1,
            },
            merge_threads: 1,
            seed: 1,
        }
    }
}

impl ExperimentSpec {
    pub fn params(&self) -> GraphParams {
        GraphParams::new(self.max_degree, self.build_list_size, self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        self.params().validate()?;
        for (name, f) in [("delete", self.delete_fraction), ("insert", self.insert_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid(format!("{name} fraction {f} is outside [0, 1]")));
            }
        }
        let positive = [
            ("B", self.pq_bytes),
            ("M", self.temp_cap),
            ("k", self.k),
            ("queries", self.queries),
            ("merge threads", self.merge_threads),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.search_lists.is_empty() {
            return Err(Error::invalid("at least one search list size is required"));
        }
        if let Some(&l) = self.search_lists.iter().find(|&&l| l < self.k) {
            return Err(Error::invalid(format!("search list {l} is smaller than k = {}", self.k)));
        }
        if let DataSource::Synthetic(s) = &self.data {
            if s.dim == 0 || s.clusters == 0 {
                return Err(Error::invalid("synthetic dim and clusters must be positive"));
            }
        }
        Ok(())
    }

    pub fn search_list(&self) -> usize {
        self.search_lists[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentSpec::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            ExperimentSpec {
                delete_fraction: 1.5,
                ..Default::default()
            },
            ExperimentSpec {
                alpha: 0.5,
                ..Default::default()
            },
            ExperimentSpec {
                search_lists: vec![3],
                ..Default::default()
            },
            ExperimentSpec {
                temp_cap: 0,
                ..Default::default()
            },
        ];
        for s in bad {
            assert!(s.validate().is_err(), "{s:?}");
        }
    }
}
