//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::path::PathBuf;
use std::time::Instant;

use concept_forge::engine::{Engine, EngineOptions};
use concept_forge::storeio::LoadedStore;
use concept_forge_core::distance::pairwise_euclidean;
use concept_forge_core::kmeans::Label;
use concept_forge_core::linalg::cosine;
use concept_forge_core::metrics::{basis, distance_summary, mean_cosine};
use concept_forge_core::pipeline::{discover_concepts, Discovery, NeuronTree, Params};
use concept_forge_core::report::NeuronReport;
use concept_forge_core::store::{ActivationStore, Dtype, ImageEntry};
use concept_forge_core::synth::{generate, score_recovery, SyntheticData, SyntheticSpec};
use concept_forge_core::ward::ward_agglomerate;
use concept_forge_core::Matrix;
use concept_forge_oracles as oracle;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn benchmark(noise: f64, seed: u64) -> SyntheticData {
    generate(&SyntheticSpec::benchmark(noise, seed)).unwrap()
}

fn params(d_max: f64) -> Params {
    Params {
        d_max,
        ..Params::default()
    }
}

fn sse_monotone(d: &Discovery) -> bool {
    d.clusters
        .sse_trace
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-12))
}

fn ward_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = oracle::rng(2024);
    for inst in 0..100 {
        let n = rng.gen_range(2..=50);
        let d = rng.gen_range(1..=16);
        let pts = oracle::gaussian_points(1000 + inst, n, d);
        let got = ward_agglomerate(&pairwise_euclidean(&Matrix::from_rows(&pts).unwrap())).unwrap();
        let want = oracle::naive_ward(&pts);
        for (k, (m, w)) in got.merges().iter().zip(&want).enumerate() {
            if (m.left, m.right, m.size) != (w.0, w.1, w.3) {
                return Err(format!(
                    "instance {inst} (n={n}, d={d}) merge {k}: topology differs"
                ));
            }
            if (m.height - w.2).abs() >= 1e-9 {
                return Err(format!(
                    "instance {inst} merge {k}: height {} vs {}",
                    m.height, w.2
                ));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 10.0 {
        return Err(format!("took {secs:.2}s"));
    }
    Ok(format!("100 instances in {secs:.2}s"))
}

fn threshold_monotonicity() -> Outcome {
    let mut rng = oracle::rng(7);
    for inst in 0..50 {
        let n = rng.gen_range(2..=60);
        let d = rng.gen_range(1..=12);
        let pts = oracle::gaussian_points(5000 + inst, n, d);
        let dg = ward_agglomerate(&pairwise_euclidean(&Matrix::from_rows(&pts).unwrap())).unwrap();
        let lo = dg.heights().fold(f64::INFINITY, f64::min);
        let hi = dg.max_height().unwrap();
        let mut ts: Vec<f64> = (0..18).map(|_| rng.gen_range(lo..=hi)).collect();
        ts.push(lo * 0.5);
        ts.push(hi * 2.0);
        ts.sort_by(f64::total_cmp);
        let counts: Vec<usize> = ts.iter().map(|&t| dg.count_at(t).unwrap()).collect();
        if !counts.windows(2).all(|w| w[1] <= w[0]) {
            return Err(format!("instance {inst}: counts {counts:?}"));
        }
        if counts[0] != n || counts[19] != 1 {
            return Err(format!(
                "instance {inst}: endpoints {} and {}",
                counts[0], counts[19]
            ));
        }
    }
    Ok("50 instances x 20 thresholds".into())
}

fn noiseless_recovery() -> Outcome {
    let data = benchmark(0.0, 0);
    let (_, d) = discover_concepts(&data.store, 0, &params(5.0)).unwrap();
    let s = score_recovery(&d.concepts, &data).unwrap();
    let detail = format!(
        "C^={} min cos {:.6} precision {}",
        d.surviving_count(),
        s.min_cosine(),
        s.precision
    );
    if d.surviving_count() == 2 && s.min_cosine() >= 0.999 && s.precision == 1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn noisy_recovery() -> Outcome {
    let mut cos = 0.0;
    let mut control = 0;
    for seed in 0..10 {
        let data = benchmark(0.1, seed);
        let (_, d) = discover_concepts(&data.store, 0, &params(5.0)).unwrap();
        cos += score_recovery(&d.concepts, &data).unwrap().mean_cosine();
        let (_, c) = discover_concepts(&data.store, 1, &params(5.0)).unwrap();
        control += usize::from(c.surviving_count() == 1);
    }
    let mean = cos / 10.0;
    let detail = format!("mean cos {mean:.4}, control C^=1 in {control}/10");
    if mean >= 0.95 && control >= 9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_store(seed: u64) -> ActivationStore {
    let mut rng = oracle::rng(seed);
    let d = rng.gen_range(2..24);
    let shift = rng.gen_range(0.0..2.0);
    let rows: oracle::Points = oracle::gaussian_points(seed, 150, d)
        .into_iter()
        .map(|r| r.into_iter().map(|v| v + shift).collect())
        .collect();
    let ids = (0..150).map(|i| ImageEntry::new(format!("x{i}"))).collect();
    ActivationStore::from_matrix(Matrix::from_rows(&rows).unwrap(), ids, "random", Dtype::F64)
        .unwrap()
}

fn concepts_beat_neuron() -> Outcome {
    let mut checked = 0;
    let mut worst = f64::INFINITY;
    let mut check =
        |store: &ActivationStore, neuron: usize, p: &Params, what: &str| -> Result<(), String> {
            let (tree, d) = discover_concepts(store, neuron, p).unwrap();
            for c in &d.concepts {
                let x = tree.embeddings.select_rows(&d.clusters.members[c.cluster]);
                let e = basis(store.dim(), neuron);
                let (cv, cn) = (mean_cosine(&x, &c.vector), mean_cosine(&x, &e));
                let on_axis = cosine(&c.vector, &e).abs() > 1.0 - 1e-12;
                checked += 1;
                worst = worst.min(cv - cn);
                if cv < cn || (!on_axis && cv == cn) {
                    return Err(format!(
                        "{what}, neuron {neuron}: mean cos {cv} vs neuron {cn}"
                    ));
                }
            }
            Ok(())
        };
    for seed in 0..10 {
        let data = benchmark(0.1, seed);
        for neuron in [0, 1, 9] {
            check(
                &data.store,
                neuron,
                &params(5.0),
                &format!("benchmark seed {seed}"),
            )?;
        }
    }
    for seed in 0..40 {
        let store = random_store(seed);
        let p = Params {
            top_n: 60,
            d_max: 0.5 + seed as f64 * 0.4,
            ..Params::default()
        };
        check(
            &store,
            seed as usize % store.dim(),
            &p,
            &format!("random store {seed}"),
        )?;
    }
    Ok(format!("{checked} concepts, smallest margin {worst:.4}"))
}

fn inter_exceeds_intra() -> Outcome {
    let data = benchmark(0.1, 0);
    let (tree, d) = discover_concepts(&data.store, 0, &params(5.0)).unwrap();
    let kept: Vec<Option<usize>> = d
        .clusters
        .labels
        .iter()
        .map(|l| match l {
            Label::Cluster(c) => Some(*c),
            _ => None,
        })
        .collect();
    let s = distance_summary(&tree.distances, &kept).unwrap();
    match (s.mean_inter, s.mean_intra) {
        (Some(inter), Some(intra)) if inter > intra => {
            Ok(format!("inter {inter:.4} > intra {intra:.4}"))
        }
        other => Err(format!("{other:?}")),
    }
}

fn transition_at_merge_height() -> Outcome {
    // noise 0.05 keeps the planted groups apart: the top split of the tree is
    // exactly the generator partition
    for seed in 0..10 {
        let data = benchmark(0.05, seed);
        let tree = NeuronTree::build(&data.store, 0, 100).unwrap();
        let pts: oracle::Points = tree.embeddings.iter_rows().map(|r| r.to_vec()).collect();
        let label = |i: usize| data.labels[tree.selection.rows[i]];
        let a: Vec<usize> = (0..100).filter(|&i| label(i) == Some(0)).collect();
        let b: Vec<usize> = (0..100).filter(|&i| label(i) == Some(1)).collect();
        let h = oracle::ward_cost(&pts, &a, &b);

        let heights: Vec<f64> = tree.dendrogram.heights().collect();
        let below = heights[heights.len() - 2];
        let mut ts: Vec<f64> = (1..=50)
            .map(|i| below + (2.0 * h - below) * i as f64 / 50.0)
            .collect();
        ts.extend([h - 5e-10, h + 5e-10]);
        ts.sort_by(f64::total_cmp);
        let sweep = tree.sweep(&data.store, &ts, 1.5, 5).unwrap();
        let counts: Vec<usize> = sweep.iter().map(|p| p.clusters).collect();
        let changes: Vec<usize> = (1..counts.len())
            .filter(|&i| counts[i] != counts[i - 1])
            .collect();
        if changes.len() != 1 || counts[changes[0] - 1] != 2 || counts[changes[0]] != 1 {
            return Err(format!("seed {seed}: counts {counts:?}"));
        }
        let (before, after) = (sweep[changes[0] - 1].d_max, sweep[changes[0]].d_max);
        if (before - h).abs() > 1e-9 || (after - h).abs() > 1e-9 {
            return Err(format!(
                "seed {seed}: transition between {before} and {after}, blob merge height {h}"
            ));
        }
    }
    Ok("10 seeds, single 2->1 transition within 1e-9 of the blob merge height".into())
}

fn loaded(store: ActivationStore) -> LoadedStore {
    LoadedStore {
        store,
        dir: PathBuf::from("."),
        fingerprint: "in-memory".into(),
    }
}

fn determinism() -> Outcome {
    let data = benchmark(0.1, 4);
    let mut bodies = Vec::new();
    for workers in [1, 1, 2, 3, 8] {
        let engine = Engine::new(
            loaded(data.store.clone()),
            EngineOptions {
                workers,
                cache_dir: None,
            },
        )
        .unwrap();
        let r: Vec<_> = [0, 1, 2]
            .iter()
            .map(|&n| engine.report(n, &params(5.0), 20).unwrap())
            .collect();
        bodies.push(r);
    }
    if !bodies.windows(2).all(|w| w[0] == w[1]) {
        return Err("report bytes differ between runs".into());
    }
    let mut traces = 0;
    for seed in 0..10 {
        let data = benchmark(0.1, seed);
        for neuron in 0..8 {
            for d_max in [1.0, 3.0, 5.0, 15.0] {
                let (_, d) = discover_concepts(&data.store, neuron, &params(d_max)).unwrap();
                if !sse_monotone(&d) {
                    return Err(format!(
                        "SSE rose: seed {seed} neuron {neuron} d_max {d_max}: {:?}",
                        d.clusters.sse_trace
                    ));
                }
                traces += 1;
            }
        }
    }
    Ok(format!(
        "5 runs (1-8 workers) identical; {traces} SSE traces monotone"
    ))
}

fn micro_cluster_dropped() -> Outcome {
    // three groups of 50, 47 and 3 on neuron 4, plus background below them
    let mut rng = oracle::rng(35);
    let mut rows = Vec::new();
    for (centre, n) in [([0.0, 0.0], 50), ([4.04, 0.0], 47), ([0.0, 6.5], 3)] {
        for _ in 0..n {
            let mut r: Vec<f64> = (0..5).map(|_| rng.gen_range(-0.05..0.05)).collect();
            r[0] += centre[0];
            r[1] += centre[1];
            r[4] += 10.0;
            rows.push(r);
        }
    }
    for _ in 0..60 {
        rows.push((0..5).map(|_| rng.gen_range(0.0..1.0)).collect());
    }
    let ids = (0..rows.len())
        .map(|i| ImageEntry::new(format!("img{i:03}")))
        .collect();
    let store = ActivationStore::from_matrix(
        Matrix::from_rows(&rows).unwrap(),
        ids,
        "planted",
        Dtype::F64,
    )
    .unwrap();
    let (tree, d) = discover_concepts(&store, 4, &params(15.0)).unwrap();
    let report = NeuronReport::build(&store, &tree, &d, 20).unwrap();
    let micro: Vec<_> = report
        .clusters
        .items
        .iter()
        .filter(|it| it.row >= 97 && it.row < 100)
        .collect();
    let dropped = micro.len() == 3
        && micro
            .iter()
            .all(|it| it.status == concept_forge_core::report::Status::Dropped);
    let detail = format!(
        "C={} C^={} micro-cluster statuses {:?}",
        d.cluster_count(),
        d.surviving_count(),
        micro.iter().map(|it| it.status).collect::<Vec<_>>()
    );
    if d.cluster_count() == 3 && d.surviving_count() == 2 && dropped {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("ward matches naive recompute", ward_oracle),
        ("threshold monotonicity", threshold_monotonicity),
        ("noiseless recovery", noiseless_recovery),
        ("noisy recovery", noisy_recovery),
        ("concept beats neuron direction", concepts_beat_neuron),
        (
            "inter-cluster > intra-cluster distance",
            inter_exceeds_intra,
        ),
        (
            "sweep transition at blob merge height",
            transition_at_merge_height,
        ),
        ("determinism", determinism),
        ("micro-cluster dropped", micro_cluster_dropped),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
