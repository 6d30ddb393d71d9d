//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (visible with `--nocapture`) and pinning its tolerance in
//! code. Run with `cargo test --test acceptance`.

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mhpc_core::bank::{budget_split, geores, greedy_coreset, StreamingKCenter};
use mhpc_core::covreg::{CovarianceModel, JitterSchedule, ShrinkagePolicy};
use mhpc_core::detector::{
    fit, stabilized_weight, DetectorConfig, DetectorState, ScoringMode, Whitening,
};
use mhpc_core::eval::{auroc, auroc_pairwise};
use mhpc_core::linalg::jacobi_eigh;
use mhpc_core::moments::MomentState;
use mhpc_core::synth::{generate, separation_spectrum, SynthSpec};

fn sq(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn covering_radius(points: &Array2<f64>, bank: &Array2<f64>) -> f64 {
    points
        .rows()
        .into_iter()
        .map(|p| {
            bank.rows()
                .into_iter()
                .map(|c| sq(p, c))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        .sqrt()
}

/// Two-pass covariance oracle, independent of the streaming path.
fn two_pass_cov(data: &Array2<f64>) -> Array2<f64> {
    let n = data.nrows();
    let d = data.ncols();
    let mean = data.mean_axis(Axis(0)).unwrap();
    let mut m2 = Array2::<f64>::zeros((d, d));
    for row in data.rows() {
        for i in 0..d {
            for j in 0..d {
                m2[[i, j]] += (row[i] - mean[i]) * (row[j] - mean[j]);
            }
        }
    }
    m2 / (n as f64 - 1.0)
}

#[test]
fn criterion_01_welford_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for trial in 0..20 {
        let data = Array2::from_shape_fn((1000, 16), |_| rng.gen_range(-5.0..5.0));
        let oracle = two_pass_cov(&data);
        // random partition into batches
        let mut cuts = vec![0usize, 1000];
        for _ in 0..rng.gen_range(1..8) {
            cuts.push(rng.gen_range(1..1000));
        }
        cuts.sort_unstable();
        cuts.dedup();
        let mut state = MomentState::init(16).unwrap();
        for w in cuts.windows(2) {
            state
                .update_batch(&data.slice(ndarray::s![w[0]..w[1], ..]))
                .unwrap();
        }
        let cov = state.finalize_covariance().unwrap();
        let scale = oracle.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let worst = cov
            .iter()
            .zip(oracle.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
            / scale;
        assert!(worst < 1e-9, "trial {trial}: relative error {worst}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "criterion 1 took {elapsed:.2}s (budget 5s)");
    println!("ACCEPTANCE 01 welford-equivalence: PASS ({elapsed:.2}s)");
}

#[test]
fn criterion_02_whitening_mahalanobis_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for trial in 0..100 {
        let k = rng.gen_range(2..=16);
        let a = Array2::from_shape_fn((k, k), |_| rng.gen_range(-1.0..1.0));
        let mut sigma = a.t().dot(&a);
        for i in 0..k {
            sigma[[i, i]] += 0.3;
        }
        let model = CovarianceModel::from_empirical(
            Array1::zeros(k),
            &sigma.view(),
            1000,
            ShrinkagePolicy::JitterOnly,
            0.0,
            &JitterSchedule::default(),
        )
        .unwrap();
        let x = Array1::from_shape_fn(k, |_| rng.gen_range(-3.0..3.0));
        let y = Array1::from_shape_fn(k, |_| rng.gen_range(-3.0..3.0));
        let zx = model.whiten(&x.view()).unwrap();
        let zy = model.whiten(&y.view()).unwrap();
        let white_sq: f64 = (&zx - &zy).iter().map(|v| v * v).sum();

        // oracle: quadratic form under Sigma + delta*I via eigenvectors
        let mut s_l = model.sigma_reg().clone();
        for i in 0..k {
            s_l[[i, i]] += model.delta();
        }
        let (vals, vecs) = jacobi_eigh(&s_l.view()).unwrap();
        let d = &x - &y;
        let proj = vecs.t().dot(&d);
        let oracle: f64 = proj.iter().zip(vals.iter()).map(|(p, v)| p * p / v).sum();

        let rel = (white_sq - oracle).abs() / oracle.abs().max(1e-30);
        assert!(rel < 1e-8, "trial {trial}: relative error {rel}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "criterion 2 took {elapsed:.2}s (budget 5s)");
    println!("ACCEPTANCE 02 whitening-equivalence: PASS ({elapsed:.2}s)");
}

#[test]
fn criterion_03_kcenter_two_approximation() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let radius = |pts: &Array2<f64>, centers: &[usize]| -> f64 {
        pts.rows()
            .into_iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|&c| sq(p, pts.row(c)))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0f64, f64::max)
            .sqrt()
    };
    for trial in 0..50 {
        let n = rng.gen_range(5..=12);
        let pts = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-10.0..10.0));
        for k in 2..=4usize {
            if k > n {
                continue;
            }
            let bank = greedy_coreset(&pts.view(), k).unwrap();
            let greedy_r = covering_radius(&pts, bank.vectors());

            // brute force over every k-subset of indices
            let mut best = f64::INFINITY;
            let mut idx: Vec<usize> = (0..k).collect();
            loop {
                best = best.min(radius(&pts, &idx));
                let mut pos = k;
                let mut done = true;
                while pos > 0 {
                    pos -= 1;
                    if idx[pos] != pos + n - k {
                        idx[pos] += 1;
                        for j in pos + 1..k {
                            idx[j] = idx[j - 1] + 1;
                        }
                        done = false;
                        break;
                    }
                }
                if done {
                    break;
                }
            }
            assert!(
                greedy_r <= 2.0 * best + 1e-12,
                "trial {trial} k={k}: greedy {greedy_r} > 2x optimal {best}"
            );
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "criterion 3 took {elapsed:.2}s (budget 30s)");
    println!("ACCEPTANCE 03 kcenter-2-approximation: PASS ({elapsed:.2}s)");
}

#[test]
fn criterion_04_merge_reduce_fidelity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);

    // single chunk with m_c >= N collapses to the offline greedy result
    let pts = Array2::from_shape_fn((500, 3), |_| rng.gen_range(-1.0..1.0));
    let mut one = StreamingKCenter::new(16, 512).unwrap();
    one.absorb(&pts.view()).unwrap();
    let streamed = one.finalize().unwrap();
    let offline = greedy_coreset(&pts.view(), 16).unwrap();
    assert_eq!(streamed.vectors(), offline.vectors());

    // 10k streamed points at m_c = 64 stay within 2x of the offline radius
    let all = Array2::from_shape_fn((10_000, 2), |_| {
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    let mut ctor = StreamingKCenter::new(8, 64).unwrap();
    for chunk in all.axis_chunks_iter(Axis(0), 100) {
        ctor.absorb(&chunk).unwrap();
    }
    let streamed = ctor.finalize().unwrap();
    let offline = greedy_coreset(&all.view(), 8).unwrap();
    let r_streamed = covering_radius(&all, streamed.vectors());
    let r_offline = covering_radius(&all, offline.vectors());
    assert!(
        r_streamed <= 2.0 * r_offline,
        "streamed radius {r_streamed} > 2x offline {r_offline}"
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 4 took {elapsed:.2}s (budget 60s)");
    println!("ACCEPTANCE 04 merge-reduce-fidelity: PASS ({elapsed:.2}s)");
}

fn bounded_memory_spec(n_train: usize) -> SynthSpec {
    SynthSpec {
        d0: 16,
        eigenvalues: (0..16).map(|i| 4.0 - 3.0 * i as f64 / 15.0).collect(),
        rotation_seed: Some(7),
        grid_h: 10,
        grid_w: 10,
        n_train,
        n_test_normal: 0,
        n_test_anomalous: 0,
        anomaly_direction: 15,
        anomaly_magnitude: 6.0,
        seed: 505,
        ..SynthSpec::default()
    }
}

#[test]
fn criterion_05_bounded_memory_law() {
    // canonical config, fixed batch size; 500 images of 100 patches make
    // a 50_000-patch stream, 1000 images make 100_000
    let config = DetectorConfig {
        batch_size: 256,
        k_max: 512,
        ..DetectorConfig::default()
    };
    let run = |n_train: usize| -> usize {
        let dataset = generate(&bounded_memory_spec(n_train)).unwrap();
        let out = fit(&dataset.train, &config).unwrap();
        assert_eq!(out.stats.patches_seen, n_train as u64 * 100);
        out.stats.peak_rows
    };
    let peak_small = run(500);
    let peak_large = run(1000);
    assert_eq!(
        peak_small, peak_large,
        "doubling the stream moved the peak retained-row counter"
    );
    println!("ACCEPTANCE 05 bounded-memory-law: PASS (peak {peak_small} rows at 50k and 100k patches)");
}

#[test]
fn criterion_06_scoring_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let b = 9usize;
    for trial in 0..1000 {
        // spreads stay below ~36 squared-distance units; past that,
        // exp(a - tau) underflows below one ulp of 1.0 and the strict
        // upper bound saturates to w == 1 in f64 even though it holds
        // exactly in real arithmetic
        let k = rng.gen_range(2..=4);
        let rows = rng.gen_range(b..=40);
        let bank = Array2::from_shape_fn((rows, k), |_| rng.gen_range(-1.0..1.0));
        let query = Array1::from_shape_fn(k, |_| rng.gen_range(-1.0..1.0));

        // neighbourhood of the query's nearest bank row
        let mut dists: Vec<f64> = bank.rows().into_iter().map(|r| sq(query.view(), r)).collect();
        let a_star = dists.iter().copied().fold(f64::INFINITY, f64::min);
        let m_star = dists
            .iter()
            .position(|&d| d == a_star)
            .expect("bank nonempty");
        let anchor = bank.row(m_star).to_owned();
        let mut by_anchor: Vec<usize> = (0..rows).collect();
        by_anchor.sort_by(|&i, &j| {
            sq(anchor.view(), bank.row(i))
                .partial_cmp(&sq(anchor.view(), bank.row(j)))
                .unwrap()
                .then(i.cmp(&j))
        });
        let neighbor_sq: Vec<f64> = by_anchor[..b].iter().map(|&i| dists[i]).collect();
        let tau = neighbor_sq.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let w = stabilized_weight(dists[m_star], &neighbor_sq, tau);
        assert!(
            w >= 1.0 - 1.0 / b as f64 - 1e-12,
            "trial {trial}: w {w} below softmax floor"
        );
        assert!(w < 1.0, "trial {trial}: w {w} not below 1");
        // s = w * a_star never exceeds the unreweighted control
        assert!(w * a_star <= a_star + 1e-12);

        // shifting tau by any constant leaves the weight unchanged
        let shift: f64 = rng.gen_range(-50.0..50.0);
        let w_shift = stabilized_weight(dists[m_star], &neighbor_sq, tau + shift);
        assert!(
            (w - w_shift).abs() < 1e-12,
            "trial {trial}: tau shift moved w by {}",
            (w - w_shift).abs()
        );
        dists.clear();
    }
    println!("ACCEPTANCE 06 scoring-bounds: PASS (1000 instances, b = 9)");
}

fn separation_config() -> DetectorConfig {
    DetectorConfig {
        rho: 1.0,
        k_max: 64,
        batch_size: 2048,
        shrinkage: ShrinkagePolicy::Fixed { lambda: 0.01 },
        bank_budget: 1000,
        local_budget: 256,
        neighbors: 9,
        scoring: ScoringMode::Reweighted,
        ..DetectorConfig::default()
    }
}

#[test]
fn criterion_07_geometry_separation() {
    let start = Instant::now();
    let spec = SynthSpec {
        d0: 64,
        eigenvalues: separation_spectrum(64),
        rotation_seed: Some(17),
        grid_h: 8,
        grid_w: 8,
        n_train: 2000,
        n_test_normal: 200,
        n_test_anomalous: 200,
        anomaly_direction: 63,
        anomaly_magnitude: 6.0,
        seed: 2024,
        ..SynthSpec::default()
    };
    let dataset = generate(&spec).unwrap();

    let run = |config: &DetectorConfig| -> f64 {
        let out = fit(&dataset.train, config).unwrap();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for block in &dataset.test {
            let s = out.state.score_image(block).unwrap();
            scores.push(s.s);
            labels.push(match block.label.unwrap() {
                mhpc_core::detector::Label::Anomalous => 1u8,
                mhpc_core::detector::Label::Normal => 0u8,
            });
        }
        auroc(&scores, &labels).unwrap()
    };

    let mahalanobis = run(&separation_config());
    let euclidean = run(&DetectorConfig {
        whitening: Whitening::Identity,
        ..separation_config()
    });

    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        mahalanobis >= 0.95,
        "whitened AUROC {mahalanobis:.4} below 0.95 (euclidean {euclidean:.4})"
    );
    assert!(
        mahalanobis - euclidean >= 0.05,
        "whitened {mahalanobis:.4} does not exceed euclidean {euclidean:.4} by 0.05"
    );
    assert!(elapsed < 300.0, "criterion 7 took {elapsed:.2}s (budget 300s)");
    println!(
        "ACCEPTANCE 07 geometry-separation: PASS (whitened {mahalanobis:.4} vs euclidean {euclidean:.4}, {elapsed:.1}s)"
    );
}

#[test]
fn criterion_08_geores_contract() {
    // budget split reproduces the clamped rounding rule
    assert_eq!(budget_split(1000, 0.95).unwrap(), (950, 50));
    assert_eq!(budget_split(2, 0.95).unwrap(), (1, 1));

    // cluster plus one remote point: the remote point must enter the bank
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut rows = Vec::new();
    for _ in 0..100 {
        rows.push(rng.gen_range(-0.5..0.5));
        rows.push(rng.gen_range(-0.5..0.5));
    }
    rows.extend_from_slice(&[40.0, 40.0]);
    let points = Array2::from_shape_vec((101, 2), rows).unwrap();
    let chunks: Vec<Array2<f64>> = points
        .axis_chunks_iter(Axis(0), 20)
        .map(|c| c.to_owned())
        .collect();
    let out = geores(&chunks, 4, 0.75, 64, 64, 6).unwrap();
    assert_eq!(out.bank.len(), 4);
    let found = out
        .bank
        .vectors()
        .rows()
        .into_iter()
        .any(|r| r[0] == 40.0 && r[1] == 40.0);
    assert!(found, "remote point missing from the two-pass bank");
    println!("ACCEPTANCE 08 geores-contract: PASS");
}

#[test]
fn criterion_09_determinism_and_persistence() {
    let spec = SynthSpec {
        d0: 12,
        eigenvalues: (0..12).map(|i| 5.0 / (1.0 + i as f64)).collect(),
        rotation_seed: Some(4),
        grid_h: 5,
        grid_w: 5,
        n_train: 40,
        n_test_normal: 10,
        n_test_anomalous: 10,
        anomaly_direction: 11,
        anomaly_magnitude: 6.0,
        seed: 909,
        ..SynthSpec::default()
    };
    let config = DetectorConfig {
        k_max: 12,
        batch_size: 128,
        bank_budget: 64,
        local_budget: 64,
        neighbors: 5,
        ..DetectorConfig::default()
    };

    let run = || -> (Vec<u8>, Vec<String>) {
        let dataset = generate(&spec).unwrap();
        let out = fit(&dataset.train, &config).unwrap();
        let mut bytes = Vec::new();
        out.state.save(&mut bytes).unwrap();
        let records: Vec<String> = dataset
            .test
            .iter()
            .map(|b| {
                let s = out.state.score_image(b).unwrap();
                format!("{} {:.17e} {:.17e}", s.image_id, s.s, s.s_max)
            })
            .collect();
        (bytes, records)
    };

    let (bytes_a, records_a) = run();
    let (bytes_b, records_b) = run();
    assert_eq!(bytes_a, bytes_b, "state containers differ between runs");
    assert_eq!(records_a, records_b, "score records differ between runs");

    // save -> load -> score is bit-identical to scoring before save
    let dataset = generate(&spec).unwrap();
    let out = fit(&dataset.train, &config).unwrap();
    let loaded = DetectorState::from_bytes(&bytes_a).unwrap();
    for block in &dataset.test {
        let before = out.state.score_image(block).unwrap();
        let after = loaded.score_image(block).unwrap();
        assert_eq!(before.s.to_bits(), after.s.to_bits());
        assert_eq!(before.s_max.to_bits(), after.s_max.to_bits());
        assert_eq!(before.patch_scores, after.patch_scores);
    }
    println!("ACCEPTANCE 09 determinism-persistence: PASS");
}

#[test]
fn criterion_10_auroc_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    for trial in 0..100 {
        let n = rng.gen_range(2..=200);
        // coarse quantisation forces ties
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..25) as f64 / 8.0).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        labels[0] = 0;
        labels[n - 1] = 1;
        let fast = auroc(&scores, &labels).unwrap();
        let slow = auroc_pairwise(&scores, &labels).unwrap();
        assert_eq!(fast, slow, "trial {trial}: rank {fast} != pairwise {slow}");
    }
    println!("ACCEPTANCE 10 auroc-oracle: PASS (100 instances, exact equality)");
}
