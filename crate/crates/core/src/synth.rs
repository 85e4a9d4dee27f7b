//! Synthetic activation stores with planted concept directions.
//!
//! Each concept is a unit direction with a positive component on one
//! neuron. Its samples are `a * g + noise` with a positive magnitude `a`
//! around 1, so several concepts sharing a neuron make that neuron
//! polysemantic by construction. The generator labels give ground truth for
//! scoring recovered concept vectors.
//!
//! Randomness comes from ChaCha8 seeded with `SyntheticSpec::seed`, and
//! Gaussian noise from the ziggurat sampler of `rand_distr`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{input_err, Result};
use crate::linalg::{cosine, dot, norm, Matrix};
use crate::pipeline::ConceptVector;
use crate::store::{ActivationStore, Dtype, ImageEntry};

/// Largest allowed cosine between two planted directions.
pub const MAX_CONCEPT_COSINE: f64 = 0.3;

#[cfg(feature = "serde")]
fn default_jitter() -> f64 {
    0.2
}

/// One planted concept.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConceptSpec {
    /// Neuron the concept loads on.
    pub neuron: usize,
    /// Component of the direction along the neuron, in `(0, 1]`. Required
    /// when `direction` is absent.
    #[cfg_attr(feature = "serde", serde(default))]
    pub loading: Option<f64>,
    pub samples: usize,
    /// Standard deviation of the isotropic within-concept noise.
    pub noise: f64,
    /// Explicit direction; normalized on use. Generated from the seed when
    /// absent.
    #[cfg_attr(feature = "serde", serde(default))]
    pub direction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticSpec {
    /// Layer width `d`.
    pub dim: usize,
    /// Dataset size `M`; rows beyond the concept samples are background.
    pub size: usize,
    pub concepts: Vec<ConceptSpec>,
    /// Standard deviation of the background samples.
    pub background_noise: f64,
    pub seed: u64,
    /// Magnitudes are uniform in `[1 - jitter, 1 + jitter]`.
    #[cfg_attr(feature = "serde", serde(default = "default_jitter"))]
    pub magnitude_jitter: f64,
}

/// A generated store with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub store: ActivationStore,
    /// Generating concept of each row; `None` for background.
    pub labels: Vec<Option<usize>>,
    /// Unit direction of each concept.
    pub directions: Vec<Vec<f64>>,
}

impl SyntheticData {
    pub fn concept_rows(&self, concept: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&r| self.labels[r] == Some(concept))
            .collect()
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

impl SyntheticSpec {
    /// Reference benchmark in 64 dimensions: two concepts sharing neuron 0
    /// (loading 0.5 each, cosine 0.25 between them, 50 samples each), one
    /// concept alone on neuron 1 (loading 0.8, 100 samples), and 150
    /// background rows with noise 0.05.
    pub fn benchmark(noise: f64, seed: u64) -> Self {
        let concept = |neuron, loading, samples| ConceptSpec {
            neuron,
            loading: Some(loading),
            samples,
            noise,
            direction: None,
        };
        Self {
            dim: 64,
            size: 350,
            concepts: vec![
                concept(0, 0.5, 50),
                concept(0, 0.5, 50),
                concept(1, 0.8, 100),
            ],
            background_noise: 0.05,
            seed,
            magnitude_jitter: 0.2,
        }
    }

    fn check_scalars(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(input_err!("dim must be >= 1"));
        }
        let planted: usize = self.concepts.iter().map(|c| c.samples).sum();
        if planted > self.size {
            return Err(input_err!(
                "concepts need {planted} samples but size is {}",
                self.size
            ));
        }
        if self.size == 0 {
            return Err(input_err!("size must be >= 1"));
        }
        if !(self.background_noise >= 0.0) || !self.background_noise.is_finite() {
            return Err(input_err!("background_noise must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.magnitude_jitter) {
            return Err(input_err!("magnitude_jitter must be in [0, 1)"));
        }
        for (i, c) in self.concepts.iter().enumerate() {
            if c.neuron >= self.dim {
                return Err(input_err!("concept {i}: neuron {} out of range", c.neuron));
            }
            if !(c.noise >= 0.0) || !c.noise.is_finite() {
                return Err(input_err!("concept {i}: noise must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Resolves every concept direction and checks the planted geometry.
    pub fn directions(&self) -> Result<Vec<Vec<f64>>> {
        self.check_scalars()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let neurons: Vec<usize> = self.concepts.iter().map(|c| c.neuron).collect();
        let mut random_parts: Vec<Vec<f64>> = Vec::new();
        let mut dirs = Vec::with_capacity(self.concepts.len());

        for (i, c) in self.concepts.iter().enumerate() {
            let g = match &c.direction {
                Some(v) => {
                    if v.len() != self.dim {
                        return Err(input_err!(
                            "concept {i}: direction has {} entries, expected {}",
                            v.len(),
                            self.dim
                        ));
                    }
                    let n = norm(v);
                    if !(n > 0.0) || !n.is_finite() {
                        return Err(input_err!("concept {i}: direction must be non-zero"));
                    }
                    v.iter().map(|x| x / n).collect()
                }
                None => {
                    let w = c.loading.ok_or_else(|| {
                        input_err!("concept {i}: needs either a direction or a loading")
                    })?;
                    if !(w > 0.0 && w <= 1.0) {
                        return Err(input_err!(
                            "concept {i}: loading must be in (0, 1], got {w}"
                        ));
                    }
                    // random part: off every concept neuron and orthogonal
                    // to the random parts drawn before it
                    let mut r: Vec<f64> = (0..self.dim).map(|_| gaussian(&mut rng)).collect();
                    for &n in &neurons {
                        r[n] = 0.0;
                    }
                    for p in &random_parts {
                        let t = dot(&r, p);
                        r.iter_mut().zip(p).for_each(|(a, b)| *a -= t * b);
                    }
                    let rn = norm(&r);
                    let tail = libm::sqrt((1.0 - w * w).max(0.0));
                    if tail > 0.0 && rn < 1e-8 {
                        return Err(input_err!(
                            "concept {i}: dim {} leaves no room for another orthogonal direction",
                            self.dim
                        ));
                    }
                    let r: Vec<f64> = if rn > 0.0 {
                        r.iter().map(|x| x / rn).collect()
                    } else {
                        r
                    };
                    let mut g: Vec<f64> = r.iter().map(|x| tail * x).collect();
                    g[c.neuron] = w;
                    random_parts.push(r);
                    g
                }
            };
            if !(g[c.neuron] > 0.0) {
                return Err(input_err!(
                    "concept {i}: direction must be positive on neuron {}",
                    c.neuron
                ));
            }
            dirs.push(g);
        }

        for i in 0..dirs.len() {
            for j in (i + 1)..dirs.len() {
                let c = cosine(&dirs[i], &dirs[j]);
                if c > MAX_CONCEPT_COSINE + 1e-12 {
                    return Err(input_err!(
                        "concepts {i} and {j} have cosine {c:.4} > {MAX_CONCEPT_COSINE}"
                    ));
                }
            }
        }
        Ok(dirs)
    }
}

/// Samples a store from `spec`. The same spec always yields the same bits.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let directions = spec.directions()?;
    // sample stream is independent of the direction stream
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);

    let d = spec.dim;
    let mut data = Vec::with_capacity(spec.size * d);
    let mut labels = Vec::with_capacity(spec.size);
    let mut images = Vec::with_capacity(spec.size);

    for (ci, (c, g)) in spec.concepts.iter().zip(&directions).enumerate() {
        for s in 0..c.samples {
            let u: f64 = rng.gen();
            let a = 1.0 + spec.magnitude_jitter * (2.0 * u - 1.0);
            for gj in g {
                data.push(a * gj + c.noise * gaussian(&mut rng));
            }
            labels.push(Some(ci));
            images.push(ImageEntry {
                id: format!("c{ci}_{s:05}"),
                thumb: None,
                label: Some(format!("concept{ci}")),
            });
        }
    }
    let background = spec.size - labels.len();
    for s in 0..background {
        for _ in 0..d {
            data.push(spec.background_noise * gaussian(&mut rng));
        }
        labels.push(None);
        images.push(ImageEntry {
            id: format!("bg_{s:05}"),
            thumb: None,
            label: Some(String::from("background")),
        });
    }

    let matrix = Matrix::from_vec(spec.size, d, data)?;
    let store = ActivationStore::from_matrix(matrix, images, "synthetic", Dtype::F64)?;
    Ok(SyntheticData {
        store,
        labels,
        directions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    /// Index into the found concept list.
    pub found: usize,
    /// Index of the planted concept.
    pub truth: usize,
    /// `|cos(v, g)|`
    pub cosine: f64,
    /// Share of the found concept's members generated by this truth.
    pub precision: f64,
    /// Share of this truth's samples that are members of the found concept.
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryScore {
    pub pairs: Vec<MatchedPair>,
    /// Correctly attributed members over all members of all found concepts.
    pub precision: f64,
}

impl RecoveryScore {
    pub fn mean_cosine(&self) -> f64 {
        if self.pairs.is_empty() {
            0.0
        } else {
            self.pairs.iter().map(|p| p.cosine).sum::<f64>() / self.pairs.len() as f64
        }
    }

    pub fn min_cosine(&self) -> f64 {
        self.pairs
            .iter()
            .map(|p| p.cosine)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Matches found vectors to planted directions one-to-one, maximizing the
/// total cosine, and scores memberships against the generator labels.
pub fn score_recovery(found: &[ConceptVector], truth: &SyntheticData) -> Result<RecoveryScore> {
    if found.is_empty() {
        return Err(input_err!("no concept vectors to score"));
    }
    let t = truth.directions.len();
    if t == 0 {
        return Err(input_err!("ground truth has no concepts"));
    }
    let cos: Vec<Vec<f64>> = found
        .iter()
        .map(|f| {
            truth
                .directions
                .iter()
                .map(|g| cosine(&f.vector, g))
                .collect()
        })
        .collect();
    let n = found.len().max(t);
    let mut cost = vec![vec![0.0; n]; n];
    for (i, row) in cos.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            cost[i][j] = -c;
        }
    }
    let assignment = hungarian(&cost);

    let mut pairs = Vec::new();
    let mut correct_total = 0usize;
    let mut members_total = 0usize;
    for (i, f) in found.iter().enumerate() {
        members_total += f.member_rows.len();
        let j = assignment[i];
        if j >= t {
            continue;
        }
        let correct = f
            .member_rows
            .iter()
            .filter(|&&r| truth.labels.get(r).copied().flatten() == Some(j))
            .count();
        correct_total += correct;
        let planted = truth.labels.iter().filter(|l| **l == Some(j)).count();
        pairs.push(MatchedPair {
            found: i,
            truth: j,
            cosine: cos[i][j].abs(),
            precision: ratio(correct, f.member_rows.len()),
            recall: ratio(correct, planted),
        });
    }
    Ok(RecoveryScore {
        pairs,
        precision: ratio(correct_total, members_total),
    })
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Minimum-cost perfect matching on a square cost matrix (Kuhn-Munkres with
/// potentials). Returns the column assigned to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; index 0 is the virtual free column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut rows = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            rows[p[j] - 1] = j - 1;
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_concepts(noise: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            dim: 16,
            size: 100,
            concepts: vec![
                ConceptSpec {
                    neuron: 0,
                    loading: Some(0.5),
                    samples: 50,
                    noise,
                    direction: None,
                },
                ConceptSpec {
                    neuron: 0,
                    loading: Some(0.5),
                    samples: 50,
                    noise,
                    direction: None,
                },
            ],
            background_noise: 0.0,
            seed,
            magnitude_jitter: 0.2,
        }
    }

    #[test]
    fn noiseless_rows_are_multiples_of_directions() {
        let data = generate(&two_concepts(0.0, 7)).unwrap();
        for r in 0..100 {
            let g = &data.directions[data.labels[r].unwrap()];
            let row = data.store.embedding(r);
            let a = dot(row, g);
            assert!(a > 0.0);
            for (x, y) in row.iter().zip(g) {
                assert!((x - a * y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generated_directions_have_planned_geometry() {
        let dirs = two_concepts(0.1, 3).directions().unwrap();
        for g in &dirs {
            assert!((norm(g) - 1.0).abs() < 1e-12);
            assert_eq!(g[0], 0.5);
        }
        assert!((cosine(&dirs[0], &dirs[1]) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_bits() {
        let a = generate(&two_concepts(0.1, 11)).unwrap();
        let b = generate(&two_concepts(0.1, 11)).unwrap();
        assert_eq!(a, b);
        let c = generate(&two_concepts(0.1, 12)).unwrap();
        assert_ne!(a.store.data(), c.store.data());
    }

    #[test]
    fn invalid_specs() {
        let mut s = two_concepts(0.0, 1);
        s.concepts[0].direction = Some(vec![0.0; 16]);
        assert!(generate(&s).is_err());

        let mut s = two_concepts(0.0, 1);
        s.concepts[1].loading = Some(0.9);
        s.concepts[0].loading = Some(0.9);
        // cosine 0.81 between the two planted directions
        assert!(generate(&s).is_err());

        let mut s = two_concepts(0.0, 1);
        let mut dir = vec![0.0; 16];
        dir[0] = -1.0;
        s.concepts[0].direction = Some(dir);
        assert!(generate(&s).is_err());

        let mut s = two_concepts(0.0, 1);
        s.size = 10;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn hungarian_small() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        assert_eq!(hungarian(&cost), vec![1, 0, 2]);
    }

    fn concept(v: Vec<f64>, rows: Vec<usize>) -> ConceptVector {
        ConceptVector {
            vector: v,
            neuron: 0,
            cluster: 0,
            member_ids: Vec::new(),
            member_rows: rows,
        }
    }

    #[test]
    fn perfect_recovery_scores_one_in_any_order() {
        let data = generate(&two_concepts(0.0, 5)).unwrap();
        let found = vec![
            concept(data.directions[0].clone(), data.concept_rows(0)),
            concept(data.directions[1].clone(), data.concept_rows(1)),
        ];
        let s = score_recovery(&found, &data).unwrap();
        assert_eq!(s.precision, 1.0);
        assert!(s
            .pairs
            .iter()
            .all(|p| (p.cosine - 1.0).abs() < 1e-12 && p.recall == 1.0));

        let swapped = vec![found[1].clone(), found[0].clone()];
        let t = score_recovery(&swapped, &data).unwrap();
        assert_eq!(t.precision, s.precision);
        assert_eq!(t.mean_cosine(), s.mean_cosine());
        assert_eq!((t.pairs[0].found, t.pairs[0].truth), (0, 1));
    }
}
