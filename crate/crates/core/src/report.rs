//! Per-neuron report bundling clusters, concept vectors and metrics.
//!
//! With the `serde` feature the report serializes to the stable JSON layout
//! consumed by the web UI (`schema: 1`).

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{input_err, Result};
use crate::kmeans::Label;
use crate::linalg::Matrix;
use crate::metrics::{distance_summary, max_projecting, pca_2d, projections};
use crate::pipeline::{Discovery, NeuronTree};
use crate::store::ActivationStore;
use crate::ward::Dendrogram;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TOP_K: usize = 20;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct NeuronReport {
    pub schema: u32,
    pub neuron: usize,
    pub layer: String,
    pub params: ReportParams,
    pub dendrogram: Dendrogram,
    pub clusters: ClusterBlock,
    pub concepts: Vec<ConceptBlock>,
    pub distance_summary: DistanceBlock,
    pub pca: Option<PcaBlock>,
    pub top_projecting: Vec<TopProjecting>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ReportParams {
    pub top_n: usize,
    pub d_max: f64,
    /// `null` in JSON when outlier removal is off (`tau = inf`).
    #[cfg_attr(feature = "serde", serde(with = "infinite_as_null"))]
    pub tau: f64,
    pub min_cluster_size: usize,
    pub top_k: usize,
}

#[cfg(feature = "serde")]
mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Status {
    Kept,
    Outlier,
    Dropped,
}

/// One top-N input and what happened to it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Item {
    pub id: String,
    pub row: usize,
    pub activation: f64,
    /// Group from the dendrogram cut.
    pub cut_cluster: usize,
    /// Nearest k-means centroid.
    pub cluster: usize,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Group {
    pub cluster: usize,
    pub kept: bool,
    pub members: Vec<String>,
    pub outliers: Vec<String>,
    pub spread_mean: Option<f64>,
    pub spread_std: Option<f64>,
    /// `None` when no member can be an outlier.
    pub cutoff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ClusterBlock {
    /// `C`
    pub requested: usize,
    /// `Ĉ`
    pub surviving: usize,
    pub kmeans_iterations: usize,
    pub converged: bool,
    pub sse_trace: Vec<f64>,
    pub items: Vec<Item>,
    pub groups: Vec<Group>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ConceptMetrics {
    pub proj_v: Vec<f64>,
    pub proj_n: Vec<f64>,
    pub cos_v: Vec<f64>,
    pub cos_n: Vec<f64>,
    pub mean_proj_v: f64,
    pub mean_proj_n: f64,
    pub mean_cos_v: f64,
    pub mean_cos_n: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ConceptBlock {
    pub cluster: usize,
    /// All `d` components; doubles as the component profile.
    pub vector: Vec<f64>,
    pub members: Vec<String>,
    /// Aligned with `members`.
    pub metrics: ConceptMetrics,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct DistanceBlock {
    /// Top-N ids in selection order; rows/columns of `full`.
    pub order: Vec<String>,
    pub full: Vec<Vec<f64>>,
    /// Retained ids grouped by cluster; rows/columns of `retained`.
    pub retained_order: Vec<String>,
    pub retained: Vec<Vec<f64>>,
    pub mean_intra: Option<f64>,
    pub mean_inter: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PcaBlock {
    pub ids: Vec<String>,
    pub clusters: Vec<usize>,
    pub coords: Vec<[f64; 2]>,
    pub singular_values: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Projected {
    pub id: String,
    pub row: usize,
    pub projection: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TopProjecting {
    pub cluster: usize,
    pub items: Vec<Projected>,
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(|r| r.to_vec()).collect()
}

impl NeuronReport {
    pub fn build(
        store: &ActivationStore,
        tree: &NeuronTree,
        found: &Discovery,
        top_k: usize,
    ) -> Result<Self> {
        if top_k > store.len() {
            return Err(input_err!(
                "top_k = {top_k} exceeds the {} stored inputs",
                store.len()
            ));
        }
        let sel = &tree.selection;
        let id = |i: usize| -> String { store.image_id(sel.rows[i]).into() };
        let cr = &found.clusters;

        let items = (0..sel.len())
            .map(|i| Item {
                id: id(i),
                row: sel.rows[i],
                activation: sel.activations[i],
                cut_cluster: found.cut.labels()[i],
                cluster: cr.assignments[i],
                status: match cr.labels[i] {
                    Label::Cluster(_) => Status::Kept,
                    Label::Outlier => Status::Outlier,
                    Label::Dropped => Status::Dropped,
                },
            })
            .collect::<Vec<_>>();

        let groups = (0..cr.k_requested())
            .map(|c| {
                let spread = cr.spreads[c];
                Group {
                    cluster: c,
                    kept: cr.surviving.contains(&c),
                    members: cr.members[c].iter().map(|&i| id(i)).collect(),
                    outliers: (0..sel.len())
                        .filter(|&i| cr.assignments[i] == c && cr.labels[i] == Label::Outlier)
                        .map(id)
                        .collect(),
                    spread_mean: spread.map(|s| s.mean),
                    spread_std: spread.map(|s| s.std),
                    cutoff: spread.map(|s| s.cutoff).filter(|v| v.is_finite()),
                }
            })
            .collect();

        let mut concepts = Vec::with_capacity(found.concepts.len());
        let mut top_projecting = Vec::with_capacity(found.concepts.len());
        for cv in &found.concepts {
            let local = &cr.members[cv.cluster];
            let x = tree.embeddings.select_rows(local);
            let p = projections(&x, &cv.vector, tree.neuron())?;
            concepts.push(ConceptBlock {
                cluster: cv.cluster,
                vector: cv.vector.clone(),
                members: cv.member_ids.clone(),
                metrics: ConceptMetrics {
                    mean_proj_v: p.mean_proj_v(),
                    mean_proj_n: p.mean_proj_n(),
                    mean_cos_v: p.mean_cos_v(),
                    mean_cos_n: p.mean_cos_n(),
                    proj_v: p.proj_v,
                    proj_n: p.proj_n,
                    cos_v: p.cos_v,
                    cos_n: p.cos_n,
                },
            });
            top_projecting.push(TopProjecting {
                cluster: cv.cluster,
                items: max_projecting(store, &cv.vector, top_k)?
                    .into_iter()
                    .map(|(row, projection)| Projected {
                        id: store.image_id(row).into(),
                        row,
                        projection,
                    })
                    .collect(),
            });
        }

        let kept: Vec<Option<usize>> = cr
            .labels
            .iter()
            .map(|l| match l {
                Label::Cluster(c) => Some(*c),
                _ => None,
            })
            .collect();
        let ds = distance_summary(&tree.distances, &kept)?;
        let distance_summary = DistanceBlock {
            order: (0..sel.len()).map(id).collect(),
            full: rows_of(&ds.full),
            retained_order: ds.retained_order.iter().map(|&i| id(i)).collect(),
            retained: rows_of(&ds.retained),
            mean_intra: ds.mean_intra,
            mean_inter: ds.mean_inter,
        };

        let pca = if ds.retained_order.len() >= 2 {
            let p = pca_2d(&tree.embeddings.select_rows(&ds.retained_order))?;
            Some(PcaBlock {
                ids: ds.retained_order.iter().map(|&i| id(i)).collect(),
                clusters: ds
                    .retained_order
                    .iter()
                    .map(|&i| cr.assignments[i])
                    .collect(),
                coords: p.coords.iter_rows().map(|r| [r[0], r[1]]).collect(),
                singular_values: p.singular_values,
            })
        } else {
            None
        };

        Ok(Self {
            schema: SCHEMA_VERSION,
            neuron: tree.neuron(),
            layer: store.layer_name().into(),
            params: ReportParams {
                top_n: sel.len(),
                d_max: found.d_max,
                tau: found.tau,
                min_cluster_size: found.min_cluster_size,
                top_k,
            },
            dendrogram: tree.dendrogram.clone(),
            clusters: ClusterBlock {
                requested: found.cluster_count(),
                surviving: found.surviving_count(),
                kmeans_iterations: cr.iterations,
                converged: cr.converged,
                sse_trace: cr.sse_trace.clone(),
                items,
                groups,
            },
            concepts,
            distance_summary,
            pca,
            top_projecting,
            warnings: found.warnings.clone(),
        })
    }
}
