//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers (visible with `--nocapture`).
//!
//! The ML-100k criteria share one lazily-trained set of runs; training six
//! 100-epoch models takes a couple of minutes on one core.

use std::path::PathBuf;
use std::process::Command;
use std::sync::LazyLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use onebp::analysis::kmeans;
use onebp::data::{parse_interactions, split_holdout, DataSplit, InputFormat, InteractionDataset};
use onebp::eval::{evaluate, EvalReport};
use onebp::loss::infonce_grads;
use onebp::model::EmbeddingModel;
use onebp::trainer::{epoch_rng, train, train_epoch, Strategy, TrainConfig};

const ONEBP_LR: f64 = 0.015;
const TWOBP_LR: f64 = 0.002;
const SPLIT_SEED: u64 = 42;

fn ml100k_path() -> PathBuf {
    if let Ok(p) = std::env::var("ML100K_PATH") {
        return PathBuf::from(p);
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k/u.data")
}

fn load_ml100k_split() -> DataSplit {
    let path = ml100k_path();
    let file = std::fs::File::open(&path).unwrap_or_else(|e| {
        panic!(
            "ML-100k interaction log not found at {} ({e}); set ML100K_PATH",
            path.display()
        )
    });
    let dataset = parse_interactions(file, InputFormat::MovieLensTab).expect("parse u.data");
    assert_eq!(dataset.num_users(), 943);
    assert_eq!(dataset.num_items(), 1682);
    assert_eq!(dataset.num_interactions(), 100_000);
    split_holdout(&dataset, 0.2, SPLIT_SEED).expect("split")
}

fn cfg(strategy: Strategy, learning_rate: f64) -> TrainConfig {
    TrainConfig {
        dim: 64,
        learning_rate,
        beta: 0.99,
        num_negatives: 5,
        batch_size: 1024,
        epochs: 100,
        seed: 42,
        strategy,
    }
}

fn train_and_eval(split: &DataSplit, cfg: &TrainConfig) -> EvalReport {
    let mut model = EmbeddingModel::random_init(
        split.train.num_users(),
        split.train.num_items(),
        cfg.dim,
        cfg.seed,
    );
    train(&mut model, split, cfg, |_| {}).expect("training");
    evaluate(&model, split, &[5, 10, 20]).expect("evaluation")
}

struct MlRuns {
    split: DataSplit,
    onebp: EvalReport,
    twobp: EvalReport,
    useronly: EvalReport,
    onebp_beta_09: EvalReport,
    onebp_beta_0999: EvalReport,
    onebp_ns1: EvalReport,
}

static RUNS: LazyLock<MlRuns> = LazyLock::new(|| {
    let split = load_ml100k_split();
    let onebp = train_and_eval(&split, &cfg(Strategy::OneBp, ONEBP_LR));
    let twobp = train_and_eval(&split, &cfg(Strategy::TwoBp, TWOBP_LR));
    // The flip study: the OneBp run's config with the strategy flipped.
    let useronly = train_and_eval(&split, &cfg(Strategy::UserOnlyBp, ONEBP_LR));
    let onebp_beta_09 = train_and_eval(
        &split,
        &TrainConfig {
            beta: 0.9,
            ..cfg(Strategy::OneBp, ONEBP_LR)
        },
    );
    let onebp_beta_0999 = train_and_eval(
        &split,
        &TrainConfig {
            beta: 0.999,
            ..cfg(Strategy::OneBp, ONEBP_LR)
        },
    );
    let onebp_ns1 = train_and_eval(
        &split,
        &TrainConfig {
            num_negatives: 1,
            ..cfg(Strategy::OneBp, ONEBP_LR)
        },
    );
    MlRuns {
        split,
        onebp,
        twobp,
        useronly,
        onebp_beta_09,
        onebp_beta_0999,
        onebp_ns1,
    }
});

// --- criterion 1: gradient correctness -------------------------------------

/// Independent objective: the contrastive loss written directly from its
/// definition, evaluated through dot-product scores.
fn oracle_objective(u: &[f64], v_pos: &[f64], v_negs: &[Vec<f64>]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let s_pos = dot(u, v_pos);
    let scores: Vec<f64> = std::iter::once(s_pos)
        .chain(v_negs.iter().map(|v| dot(u, v)))
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    z.ln() + max - s_pos
}

#[test]
fn criterion_1_gradient_correctness() {
    let h = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut checked = 0usize;
    for _ in 0..100 {
        let d = rng.random_range(1..=8);
        let n_negs = rng.random_range(1..=5);
        let mut draw =
            |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-2.0..2.0)).collect() };
        let u = draw(d);
        let v_pos = draw(d);
        let v_negs: Vec<Vec<f64>> = (0..n_negs).map(|_| draw(d)).collect();
        let analytic = infonce_grads(&u, &v_pos, &v_negs).expect("grads");

        let mut check = |analytic: &[f64], numeric: &[f64], what: &str| {
            for (a, n) in analytic.iter().zip(numeric) {
                // Relative error 1e-5; absolute floor 1e-8 for components too
                // small for h=1e-4 central differences to resolve.
                assert!(
                    (a - n).abs() <= 1e-5 * a.abs().max(n.abs()) + 1e-8,
                    "criterion 1 FAIL ({what}): analytic {a} vs numeric {n}"
                );
                checked += 1;
            }
        };

        let numeric_wrt = |mutate: &dyn Fn(usize, f64) -> f64, len: usize, base: &[f64]| {
            (0..len)
                .map(|i| (mutate(i, base[i] + h) - mutate(i, base[i] - h)) / (2.0 * h))
                .collect::<Vec<f64>>()
        };
        let g_user = numeric_wrt(
            &|i, val| {
                let mut m = u.clone();
                m[i] = val;
                oracle_objective(&m, &v_pos, &v_negs)
            },
            d,
            &u,
        );
        check(&analytic.grad_user, &g_user, "user");
        let g_pos = numeric_wrt(
            &|i, val| {
                let mut m = v_pos.clone();
                m[i] = val;
                oracle_objective(&u, &m, &v_negs)
            },
            d,
            &v_pos,
        );
        check(&analytic.grad_positive, &g_pos, "positive");
        for k in 0..n_negs {
            let g_neg = numeric_wrt(
                &|i, val| {
                    let mut m = v_negs.clone();
                    m[k][i] = val;
                    oracle_objective(&u, &v_pos, &m)
                },
                d,
                &v_negs[k],
            );
            check(&analytic.grad_negatives[k], &g_neg, "negative");
        }
        assert!(
            (analytic.loss - oracle_objective(&u, &v_pos, &v_negs)).abs() < 1e-12,
            "loss mismatch"
        );
    }
    println!(
        "criterion 1 PASS: 100 random configs, {checked} gradient components within tolerance"
    );
}

// --- criterion 2: metric oracle equivalence ---------------------------------

fn random_eval_instance(rng: &mut ChaCha8Rng) -> (EmbeddingModel, DataSplit) {
    let max_k = 5usize;
    let m = rng.random_range(2..=20);
    let n = rng.random_range(max_k + 4..=20);
    let dim = rng.random_range(1..=4);
    let mut train_pairs = Vec::new();
    let mut test_pairs = Vec::new();
    for u in 0..m as u32 {
        let mut items: Vec<u32> = (0..n as u32).collect();
        for i in (1..items.len()).rev() {
            items.swap(i, rng.random_range(0..=i));
        }
        let budget = n - max_k;
        let n_train = rng.random_range(1..=budget.saturating_sub(1).max(1));
        let n_test = rng.random_range(1..=(budget - n_train).max(1));
        let mut tr: Vec<u32> = items[..n_train].to_vec();
        let mut te: Vec<u32> = items[n_train..n_train + n_test].to_vec();
        tr.sort_unstable();
        te.sort_unstable();
        train_pairs.extend(tr.into_iter().map(|i| (u, i)));
        test_pairs.extend(te.into_iter().map(|i| (u, i)));
    }
    let split = DataSplit {
        train: InteractionDataset::from_parts(m, n, train_pairs).unwrap(),
        test: InteractionDataset::from_parts(m, n, test_pairs).unwrap(),
        evaluable_users: (0..m as u32).collect(),
    };
    let model = EmbeddingModel::random_init(m, n, dim, rng.random_range(0..1 << 20));
    (model, split)
}

/// Literal-formula oracle: full sort over all candidate items, metric
/// arithmetic written out directly. Counts are integers, so equality of the
/// averaged ratios at 1e-12 is the bitwise-counts check in aggregate.
fn oracle_evaluate(model: &EmbeddingModel, split: &DataSplit, k: usize) -> [f64; 4] {
    let mut sums = [0.0f64; 4];
    for &user in &split.evaluable_users {
        let mut candidates: Vec<u32> = (0..model.num_items() as u32)
            .filter(|&j| !split.train.has_interaction(user, j))
            .collect();
        candidates.sort_by(|&a, &b| {
            let sa = model.score(user, a).unwrap();
            let sb = model.score(user, b).unwrap();
            sb.partial_cmp(&sa).unwrap().then(a.cmp(&b))
        });
        let test = split.test.items_of(user);
        let hit_ranks: Vec<usize> = candidates
            .iter()
            .take(k)
            .enumerate()
            .filter(|(_, item)| test.contains(item))
            .map(|(i, _)| i + 1)
            .collect();
        let p = hit_ranks.len() as f64 / k as f64;
        let r = hit_ranks.len() as f64 / test.len() as f64;
        sums[0] += p;
        sums[1] += r;
        if p + r > 0.0 {
            sums[2] += 2.0 * p * r / (p + r);
        }
        let dcg: f64 = hit_ranks
            .iter()
            .map(|&rk| 1.0 / ((rk + 1) as f64).log2())
            .sum();
        let idcg: f64 = (1..=k.min(test.len()))
            .map(|rk| 1.0 / ((rk + 1) as f64).log2())
            .sum();
        if idcg > 0.0 {
            sums[3] += dcg / idcg;
        }
    }
    let n = split.evaluable_users.len() as f64;
    [sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n]
}

#[test]
fn criterion_2_metric_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    for instance in 0..50 {
        let (model, split) = random_eval_instance(&mut rng);
        let report = evaluate(&model, &split, &[1, 3, 5]).expect("evaluate");
        for &k in &[1usize, 3, 5] {
            let oracle = oracle_evaluate(&model, &split, k);
            let got = [
                report.precision[&k],
                report.recall[&k],
                report.f1[&k],
                report.ndcg[&k],
            ];
            for (name, (g, o)) in ["P", "R", "F1", "NDCG"].iter().zip(got.iter().zip(oracle)) {
                assert!(
                    (g - o).abs() <= 1e-12,
                    "criterion 2 FAIL: instance {instance}, {name}@{k}: {g} vs oracle {o}"
                );
            }
        }
    }
    println!("criterion 2 PASS: 50 random instances match the brute-force oracle at 1e-12");
}

// --- criterion 3: OneBP isolation invariant ---------------------------------

#[test]
fn criterion_3_onebp_isolation_beta_one() {
    let split = load_ml100k_split();
    let config = TrainConfig {
        beta: 1.0,
        epochs: 3,
        ..cfg(Strategy::OneBp, ONEBP_LR)
    };
    let mut model = EmbeddingModel::random_init(
        split.train.num_users(),
        split.train.num_items(),
        config.dim,
        config.seed,
    );
    let user_matrix_before: Vec<u8> = model
        .user_matrix()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    let item_matrix_before = model.item_matrix().to_vec();
    train(&mut model, &split, &config, |_| {}).expect("training");
    let user_matrix_after: Vec<u8> = model
        .user_matrix()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    assert_eq!(
        user_matrix_before, user_matrix_after,
        "criterion 3 FAIL: user matrix changed under beta=1"
    );
    assert_ne!(
        item_matrix_before,
        model.item_matrix().to_vec(),
        "criterion 3 sanity: items must have trained"
    );
    println!("criterion 3 PASS: user matrix bit-identical to initialization after 3 OneBP epochs at beta=1");
}

// --- criteria 4, 5, 7, 8: ML-100k reproduction ------------------------------

#[test]
fn criterion_4_strategy_ordering_on_ml100k() {
    let r = &*RUNS;
    let one = r.onebp.precision[&10];
    let two = r.twobp.precision[&10];
    assert!(
        one >= 0.34,
        "criterion 4 FAIL: OneBP P@10 {one:.4} below 0.34"
    );
    assert!(
        two >= 0.30,
        "criterion 4 FAIL: TwoBP P@10 {two:.4} below 0.30"
    );
    assert!(
        one - two >= 0.01,
        "criterion 4 FAIL: gap {:.4} below 0.01",
        one - two
    );
    println!(
        "criterion 4 PASS: P@10 OneBP {one:.4} vs TwoBP {two:.4} (gap {:.4})",
        one - two
    );
}

#[test]
fn criterion_5_flip_collapse() {
    let r = &*RUNS;
    let flipped = r.useronly.precision[&5];
    let two = r.twobp.precision[&5];
    assert!(
        flipped < 0.5 * two,
        "criterion 5 FAIL: UserOnlyBP P@5 {flipped:.4} not below half of TwoBP {two:.4}"
    );
    println!("criterion 5 PASS: UserOnlyBP P@5 {flipped:.4} < 0.5 x TwoBP P@5 {two:.4}");
}

#[test]
fn criterion_6_epoch_time_direction() {
    // Touch the fixture first so its trainings never overlap the timing runs.
    let split = &RUNS.split;
    let time_strategy = |strategy: Strategy| -> f64 {
        let config = TrainConfig {
            epochs: 5,
            ..cfg(strategy, ONEBP_LR)
        };
        let mut model = EmbeddingModel::random_init(
            split.train.num_users(),
            split.train.num_items(),
            config.dim,
            config.seed,
        );
        let mut seconds = Vec::new();
        for epoch in 0..config.epochs {
            let mut rng = epoch_rng(config.seed, epoch);
            let stats = train_epoch(&mut model, &split.train, &config, &mut rng, epoch).unwrap();
            seconds.push(stats.wall_seconds);
        }
        seconds.sort_by(f64::total_cmp);
        seconds[seconds.len() / 2]
    };
    let onebp = time_strategy(Strategy::OneBp);
    let twobp = time_strategy(Strategy::TwoBp);
    assert!(
        onebp <= twobp,
        "criterion 6 FAIL: median epoch {onebp:.4}s (OneBP) > {twobp:.4}s (TwoBP)"
    );
    println!("criterion 6 PASS: median epoch seconds OneBP {onebp:.4} <= TwoBP {twobp:.4}");
}

#[test]
fn criterion_7_beta_stability() {
    let r = &*RUNS;
    let at_2 = r.onebp.precision[&10]; // 1 - beta = 1e-2
    let at_3 = r.onebp_beta_0999.precision[&10]; // 1 - beta = 1e-3
    let at_1 = r.onebp_beta_09.precision[&10]; // 1 - beta = 1e-1
    let rel = (at_2 - at_3).abs() / at_2;
    assert!(
        rel < 0.05,
        "criterion 7 FAIL: P@10 {at_2:.4} (1-beta=1e-2) vs {at_3:.4} (1e-3) differ {:.1}%",
        rel * 100.0
    );
    assert!(
        at_1 <= at_2 * 1.01,
        "criterion 7 FAIL: P@10 at 1-beta=1e-1 ({at_1:.4}) exceeds 1e-2 value ({at_2:.4}) by more than 1%"
    );
    println!(
        "criterion 7 PASS: P@10 {at_1:.4} / {at_2:.4} / {at_3:.4} at 1-beta = 1e-1 / 1e-2 / 1e-3 (stability {:.2}%)",
        rel * 100.0
    );
}

#[test]
fn criterion_8_negative_count_benefit() {
    let r = &*RUNS;
    let ns5 = r.onebp.precision[&10];
    let ns1 = r.onebp_ns1.precision[&10];
    assert!(
        ns5 >= ns1,
        "criterion 8 FAIL: P@10 with N_s=5 ({ns5:.4}) below N_s=1 ({ns1:.4})"
    );
    println!("criterion 8 PASS: P@10 N_s=5 {ns5:.4} >= N_s=1 {ns1:.4}");
}

// --- derived per-operation examples on ML-100k -------------------------------

#[test]
fn ml100k_parse_matches_published_statistics() {
    let path = ml100k_path();
    let file = std::fs::File::open(&path).expect("ML-100k data");
    let dataset = parse_interactions(file, InputFormat::MovieLensTab).expect("parse");
    assert_eq!(dataset.num_users(), 943);
    assert_eq!(dataset.num_items(), 1682);
    assert_eq!(dataset.num_interactions(), 100_000);
    assert!((dataset.density() - 0.0630).abs() < 0.0001);
}

#[test]
fn ml100k_mean_loss_strictly_decreases_over_first_epochs() {
    let split = load_ml100k_split();
    let config = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let mut model = EmbeddingModel::random_init(
        split.train.num_users(),
        split.train.num_items(),
        config.dim,
        config.seed,
    );
    let stats = train(&mut model, &split, &config, |_| {}).expect("training");
    for w in stats.windows(2) {
        assert!(
            w[1].mean_loss < w[0].mean_loss,
            "mean loss did not strictly decrease: {} -> {}",
            w[0].mean_loss,
            w[1].mean_loss
        );
    }
}

#[test]
fn beta_sweep_stability_at_two_percent() {
    // Sweep-level stability claim, tighter than criterion 7's 5% bound.
    let r = &*RUNS;
    let at_2 = r.onebp.precision[&10];
    let at_3 = r.onebp_beta_0999.precision[&10];
    let rel = (at_2 - at_3).abs() / at_2;
    assert!(
        rel < 0.02,
        "P@10 at 1-beta=1e-2 ({at_2:.4}) vs 1e-3 ({at_3:.4}) differ {:.2}%",
        rel * 100.0
    );
}

// --- criterion 9: end-to-end determinism ------------------------------------

#[test]
fn criterion_9_end_to_end_determinism() {
    let bin = env!("CARGO_BIN_EXE_onebp");
    let input = ml100k_path();
    let tmp = tempfile::tempdir().expect("tempdir");

    let run = |tag: &str| -> PathBuf {
        let root = tmp.path().join(tag);
        let split_dir = root.join("split");
        let train_dir = root.join("run");
        let ok = Command::new(bin)
            .args(["prepare", "--input"])
            .arg(&input)
            .args([
                "--format",
                "movielens-tab",
                "--test-fraction",
                "0.2",
                "--seed",
                "42",
                "--out",
            ])
            .arg(&split_dir)
            .status()
            .expect("prepare")
            .success();
        assert!(ok, "prepare failed");
        let ok = Command::new(bin)
            .args(["train", "--data"])
            .arg(&split_dir)
            .args(["--strategy", "onebp", "--epochs", "3", "--out"])
            .arg(&train_dir)
            .status()
            .expect("train")
            .success();
        assert!(ok, "train failed");
        let ok = Command::new(bin)
            .args(["evaluate", "--checkpoint"])
            .arg(train_dir.join("model.bin"))
            .args(["--data"])
            .arg(&split_dir)
            .args(["--k", "5,10,20", "--out"])
            .arg(root.join("eval"))
            .status()
            .expect("evaluate")
            .success();
        assert!(ok, "evaluate failed");
        root
    };

    let a = run("a");
    let b = run("b");

    // Default cutoffs produce 4 metrics x 3 cutoffs = 12 values.
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("eval/report.json")).unwrap()).unwrap();
    let value_count: usize = ["precision", "recall", "f1", "ndcg"]
        .iter()
        .map(|m| report[m].as_object().unwrap().len())
        .sum();
    assert_eq!(value_count, 12);

    for file in [
        "split/train.csv",
        "split/test.csv",
        "split/meta.json",
        "run/model.bin",
        "run/model.json",
        "run/report.json",
        "run/report.csv",
        "eval/report.json",
        "eval/report.csv",
    ] {
        let bytes_a = std::fs::read(a.join(file)).expect(file);
        let bytes_b = std::fs::read(b.join(file)).expect(file);
        assert_eq!(
            bytes_a, bytes_b,
            "criterion 9 FAIL: {file} differs between identical-seed runs"
        );
    }
    println!(
        "criterion 9 PASS: identical-seed runs produced byte-identical checkpoints and reports"
    );
}

// --- criterion 10: k-means properties ---------------------------------------

#[test]
fn criterion_10_kmeans_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    for instance in 0..100 {
        let n = rng.random_range(8..=60);
        let dim = rng.random_range(2..=6);
        let k = rng.random_range(2..=n.min(6));
        let points: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c = kmeans(&points, dim, k, 100, rng.random_range(0..1 << 20)).expect("kmeans");
        for w in c.inertia_per_iter.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9,
                "criterion 10 FAIL: inertia rose on instance {instance}: {:?}",
                c.inertia_per_iter
            );
        }
    }

    // Separable instance: k distinct locations, each duplicated.
    let mut points = Vec::new();
    let locations = [[0.0, 0.0], [8.0, 1.0], [-4.0, 6.0], [3.0, -7.0]];
    for loc in &locations {
        points.extend_from_slice(loc);
        points.extend_from_slice(loc);
    }
    let c = kmeans(&points, 2, locations.len(), 100, 7).expect("kmeans");
    assert!(
        c.inertia.abs() < 1e-18,
        "criterion 10 FAIL: separable instance inertia {}",
        c.inertia
    );
    for pair in 0..locations.len() {
        assert_eq!(
            c.assignments[2 * pair],
            c.assignments[2 * pair + 1],
            "criterion 10 FAIL: duplicated points split across clusters"
        );
    }
    println!("criterion 10 PASS: inertia non-increasing on 100 instances; separable instance recovered exactly");
}
