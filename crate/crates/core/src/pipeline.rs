//! Per-neuron concept discovery.
//!
//! The pipeline takes the top-N activating inputs of a neuron, builds a Ward
//! dendrogram over their embeddings, cuts it at `d_max` to fix the number of
//! clusters, refines the clusters with k-means started from the cut-cluster
//! means, filters outliers and undersized clusters, and normalizes each
//! surviving cluster mean into a concept vector.
//!
//! [`NeuronTree`] holds the threshold-independent part so that re-cutting at
//! a new `d_max` only repeats the cheap steps.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::distance::pairwise_euclidean;
use crate::error::{input_err, Result};
use crate::kmeans::{kmeans_lloyd, remove_outliers, ClusterResult};
use crate::linalg::{mean_of_rows, normalized, Matrix};
use crate::store::ActivationStore;
use crate::ward::{ward_agglomerate, Dendrogram, Partition};

pub const DEFAULT_TOP_N: usize = 100;
pub const DEFAULT_D_MAX: f64 = 15.0;
pub const DEFAULT_TAU: f64 = 1.5;
pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 5;

/// Tunable parameters of one discovery run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    pub top_n: usize,
    pub d_max: f64,
    pub tau: f64,
    pub min_cluster_size: usize,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            top_n: DEFAULT_TOP_N,
            d_max: DEFAULT_D_MAX,
            tau: DEFAULT_TAU,
            min_cluster_size: DEFAULT_MIN_CLUSTER_SIZE,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        if self.top_n < 2 {
            return Err(input_err!("top_n must be at least 2, got {}", self.top_n));
        }
        if !(self.d_max > 0.0) {
            return Err(input_err!("d_max must be > 0, got {}", self.d_max));
        }
        if !(self.tau > 0.0) {
            return Err(input_err!("tau must be > 0, got {}", self.tau));
        }
        Ok(())
    }
}

/// Rows of the store that activate one neuron the most.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronSelection {
    pub neuron: usize,
    /// Row indices, by activation descending then row ascending.
    pub rows: Vec<usize>,
    pub activations: Vec<f64>,
}

impl NeuronSelection {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Ranks rows by `score` descending, ties to the lower row, and keeps `k`.
pub(crate) fn top_k_by(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// The `top_n` rows with the largest value in column `neuron`.
pub fn select_top_n(
    store: &ActivationStore,
    neuron: usize,
    top_n: usize,
) -> Result<NeuronSelection> {
    if neuron >= store.dim() {
        return Err(input_err!(
            "neuron {neuron} out of range for a layer of width {}",
            store.dim()
        ));
    }
    if top_n == 0 || top_n > store.len() {
        return Err(input_err!(
            "top_n must be in 1..={}, got {top_n}",
            store.len()
        ));
    }
    let column = store.data().column(neuron);
    let rows = top_k_by(&column, top_n);
    let activations = rows.iter().map(|&r| column[r]).collect();
    Ok(NeuronSelection {
        neuron,
        rows,
        activations,
    })
}

/// Unit direction for one surviving cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptVector {
    pub vector: Vec<f64>,
    pub neuron: usize,
    /// k-means cluster id the vector came from.
    pub cluster: usize,
    /// Store rows of the members that contributed (outliers excluded).
    pub member_rows: Vec<usize>,
    pub member_ids: Vec<String>,
}

impl ConceptVector {
    pub fn member_count(&self) -> usize {
        self.member_rows.len()
    }
}

/// Threshold-independent stage for one neuron: top-N selection, their
/// embeddings, pairwise distances and the Ward dendrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronTree {
    pub selection: NeuronSelection,
    pub embeddings: Matrix,
    pub distances: Matrix,
    pub dendrogram: Dendrogram,
}

impl NeuronTree {
    pub fn build(store: &ActivationStore, neuron: usize, top_n: usize) -> Result<Self> {
        Self::build_with(store, neuron, top_n, pairwise_euclidean)
    }

    /// Like [`NeuronTree::build`] with a caller-supplied distance kernel,
    /// e.g. a parallel one. The kernel must return exactly the matrix
    /// [`pairwise_euclidean`] would.
    pub fn build_with<F>(
        store: &ActivationStore,
        neuron: usize,
        top_n: usize,
        dist: F,
    ) -> Result<Self>
    where
        F: FnOnce(&Matrix) -> Matrix,
    {
        if top_n < 2 {
            return Err(input_err!("top_n must be at least 2, got {top_n}"));
        }
        let selection = select_top_n(store, neuron, top_n)?;
        let embeddings = store.data().select_rows(&selection.rows);
        let distances = dist(&embeddings);
        let dendrogram = ward_agglomerate(&distances)?;
        Ok(Self {
            selection,
            embeddings,
            distances,
            dendrogram,
        })
    }

    pub fn neuron(&self) -> usize {
        self.selection.neuron
    }

    /// Cut, k-means, filtering and concept extraction at one threshold.
    pub fn discover(
        &self,
        store: &ActivationStore,
        d_max: f64,
        tau: f64,
        min_cluster_size: usize,
    ) -> Result<Discovery> {
        let cut = self.dendrogram.cut(d_max)?;
        let init = Matrix::from_rows(
            &cut.groups()
                .iter()
                .map(|g| mean_of_rows(&self.embeddings, g))
                .collect::<Vec<_>>(),
        )?;
        let clusters = kmeans_lloyd(&self.embeddings, &init)?;
        let clusters = remove_outliers(clusters, tau, min_cluster_size, &self.embeddings)?;

        let mut warnings = Vec::new();
        let mut concepts = Vec::with_capacity(clusters.surviving.len());
        for &c in &clusters.surviving {
            let members = &clusters.members[c];
            let mean = mean_of_rows(&self.embeddings, members);
            let Some(vector) = normalized(&mean) else {
                warnings.push(format!(
                    "cluster {c} has a zero mean embedding; no concept vector"
                ));
                continue;
            };
            let member_rows: Vec<usize> = members.iter().map(|&i| self.selection.rows[i]).collect();
            concepts.push(ConceptVector {
                vector,
                neuron: self.neuron(),
                cluster: c,
                member_ids: member_rows
                    .iter()
                    .map(|&r| store.image_id(r).into())
                    .collect(),
                member_rows,
            });
        }
        if concepts.is_empty() {
            warnings.push(format!(
                "neuron {}: every cluster was dropped at d_max={d_max}",
                self.neuron()
            ));
        }
        Ok(Discovery {
            d_max,
            tau,
            min_cluster_size,
            cut,
            clusters,
            concepts,
            warnings,
        })
    }

    /// Cluster counts before (`C`) and after (`Ĉ`) filtering for ascending
    /// thresholds, reusing this dendrogram.
    pub fn sweep(
        &self,
        store: &ActivationStore,
        thresholds: &[f64],
        tau: f64,
        min_cluster_size: usize,
    ) -> Result<Vec<SweepPoint>> {
        if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0)) {
            return Err(input_err!("thresholds must be positive, got {t}"));
        }
        if thresholds.windows(2).any(|w| w[1] < w[0]) {
            return Err(input_err!("thresholds must be ascending"));
        }
        thresholds
            .iter()
            .map(|&t| {
                let d = self.discover(store, t, tau, min_cluster_size)?;
                Ok(SweepPoint {
                    d_max: t,
                    clusters: d.cut.count(),
                    surviving: d.concepts.len(),
                })
            })
            .collect()
    }
}

/// Outcome of one discovery at a fixed threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub d_max: f64,
    pub tau: f64,
    pub min_cluster_size: usize,
    /// Partition of the top-N set by the dendrogram cut.
    pub cut: Partition,
    /// k-means refinement and filtering, indexed like the top-N selection.
    pub clusters: ClusterResult,
    pub concepts: Vec<ConceptVector>,
    pub warnings: Vec<String>,
}

impl Discovery {
    /// `C`, the number of clusters from the dendrogram cut.
    pub fn cluster_count(&self) -> usize {
        self.cut.count()
    }

    /// `Ĉ`, the number of concept vectors.
    pub fn surviving_count(&self) -> usize {
        self.concepts.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub d_max: f64,
    pub clusters: usize,
    pub surviving: usize,
}

/// Runs the whole pipeline for one neuron.
pub fn discover_concepts(
    store: &ActivationStore,
    neuron: usize,
    params: &Params,
) -> Result<(NeuronTree, Discovery)> {
    params.validate()?;
    let tree = NeuronTree::build(store, neuron, params.top_n)?;
    let d = tree.discover(store, params.d_max, params.tau, params.min_cluster_size)?;
    Ok((tree, d))
}

/// Threshold sweep for one neuron.
pub fn sweep_threshold(
    store: &ActivationStore,
    neuron: usize,
    top_n: usize,
    thresholds: &[f64],
    tau: f64,
    min_cluster_size: usize,
) -> Result<Vec<SweepPoint>> {
    NeuronTree::build(store, neuron, top_n)?.sweep(store, thresholds, tau, min_cluster_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{Dtype, ImageEntry};
    use alloc::vec;

    fn store_from(rows: &[&[f64]]) -> ActivationStore {
        let m = Matrix::from_rows(rows).unwrap();
        let ids = (0..rows.len())
            .map(|i| ImageEntry::new(format!("r{i}")))
            .collect();
        ActivationStore::from_matrix(m, ids, "test", Dtype::F64).unwrap()
    }

    #[test]
    fn top_n_basic_and_ties() {
        let s = store_from(&[&[5.0], &[1.0], &[9.0], &[3.0]]);
        assert_eq!(select_top_n(&s, 0, 2).unwrap().rows, vec![2, 0]);
        let all = select_top_n(&s, 0, 4).unwrap();
        assert_eq!(all.rows, vec![2, 0, 3, 1]);
        assert_eq!(all.activations, vec![9.0, 5.0, 3.0, 1.0]);

        let t = store_from(&[&[7.0], &[7.0], &[1.0]]);
        assert_eq!(select_top_n(&t, 0, 1).unwrap().rows, vec![0]);
    }

    #[test]
    fn top_n_range_errors() {
        let s = store_from(&[&[5.0, 1.0], &[1.0, 2.0]]);
        assert!(select_top_n(&s, 2, 1).is_err());
        assert!(select_top_n(&s, 0, 3).is_err());
        assert!(select_top_n(&s, 0, 0).is_err());
    }

    #[test]
    fn identical_embeddings_give_one_concept() {
        let rows: Vec<&[f64]> = vec![&[1.0, 2.0, 2.0]; 8];
        let s = store_from(&rows);
        let params = Params {
            top_n: 8,
            d_max: 1.0,
            ..Params::default()
        };
        let (_, d) = discover_concepts(&s, 0, &params).unwrap();
        assert_eq!(d.cluster_count(), 1);
        assert_eq!(d.concepts.len(), 1);
        assert_eq!(d.concepts[0].vector, vec![1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(d.concepts[0].member_count(), 8);
    }

    #[test]
    fn top_n_below_two_is_rejected() {
        let s = store_from(&[&[1.0], &[2.0]]);
        let params = Params {
            top_n: 1,
            ..Params::default()
        };
        assert!(discover_concepts(&s, 0, &params).is_err());
    }

    #[test]
    fn all_dropped_is_not_an_error() {
        let s = store_from(&[&[1.0, 0.0], &[0.9, 0.1], &[1.1, 0.0]]);
        let params = Params {
            top_n: 3,
            d_max: 10.0,
            ..Params::default()
        };
        let (_, d) = discover_concepts(&s, 0, &params).unwrap();
        assert!(d.concepts.is_empty());
        assert_eq!(d.warnings.len(), 1);
    }

    #[test]
    fn sweep_rejects_descending_thresholds() {
        let s = store_from(&[&[1.0], &[2.0], &[3.0]]);
        assert!(sweep_threshold(&s, 0, 3, &[2.0, 1.0], 1.5, 1).is_err());
        assert!(sweep_threshold(&s, 0, 3, &[0.0, 1.0], 1.5, 1).is_err());
    }
}
