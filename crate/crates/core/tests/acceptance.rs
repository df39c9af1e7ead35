//! One line per acceptance criterion. Runs the reference toy benchmark for
//! criteria 7-10, which takes a few minutes.
//!
//! The process fails if a criterion outside `KNOWN_FAILURES` fails.

mod common;

use std::cell::Cell;
use std::collections::BTreeSet;
use std::time::Instant;

use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::fusion_oracle::{instance, oracle_fuse, oracle_topk};
use common::objective::objective_error;
use common::tensors::random_tensor;
use sdvpt::config::ExperimentConfig;
use sdvpt::data::{Dataset, Split, TensorContainer};
use sdvpt::encoder::{MiniViT, MiniViTConfig};
use sdvpt::eval::{ablate, evaluate, metrics, AblationReport, EvalMode};
use sdvpt::losses::ReconMetric;
use sdvpt::numerics::{Array, Tape};
use sdvpt::prompts::FusionOptions;
use sdvpt::training::{pretrain, run_cspi, run_tgpr, train, Stage, TrainState};

/// Criteria that fail on the reference benchmark, with the shortfall printed
/// on their line.
const KNOWN_FAILURES: &[u32] = &[7];

const SEEDS: [u64; 3] = [0, 1, 2];
const SWEEP_K: [usize; 5] = [1, 2, 4, 8, 16];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn gradient() -> Outcome {
    let t = Instant::now();
    let err = objective_error(Stage::Tgpr, 10.0, ReconMetric::L2);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        err < 1e-3 && secs < 60.0,
        format!("max rel err {err:.2e} (< 1e-3), {secs:.1}s (< 60s)"),
    )
}

fn fusion() -> Outcome {
    let mut runner = TestRunner::new(Config {
        failure_persistence: None,
        ..Config::with_cases(256)
    });
    let cases = Cell::new(0usize);
    let excluded = Cell::new(0usize);
    let res = runner.run(&instance(), |inst| {
        cases.set(cases.get() + 1);
        let sel = inst.table.topk_similar(&inst.query, inst.k, None).unwrap();
        let expect = oracle_topk(&inst, &inst.query, None, inst.k);
        let ids: Vec<usize> = expect.iter().map(|p| p.0).collect();
        assert_eq!(sel.indices, ids);
        for (w, e) in sel.weights.iter().zip(&expect) {
            assert!((w - e.1).abs() < 1e-12);
        }
        let fused = inst
            .prompts
            .fuse(&inst.table, &sel, FusionOptions::default())
            .unwrap();
        for (a, b) in fused.values.data().iter().zip(oracle_fuse(&inst, &expect)) {
            assert!((a - b).abs() < 1e-12);
        }
        let seen = inst.table.seen_ids().to_vec();
        for &id in &seen {
            let k = inst.k.min(seen.len() - 1);
            if k == 0 {
                continue;
            }
            let sel = inst.table.topk_for_category(id, k).unwrap();
            assert!(!sel.indices.contains(&id));
            let q = inst.table.embedding(id).unwrap().to_vec();
            let ids: Vec<usize> = oracle_topk(&inst, &q, Some(id), k)
                .iter()
                .map(|p| p.0)
                .collect();
            assert_eq!(sel.indices, ids);
            excluded.set(excluded.get() + 1);
        }
        Ok(())
    });
    outcome(
        res.is_ok() && cases.get() >= 200,
        format!(
            "{} instances (>= 200), {} self-excluded selections, values to 1e-12",
            cases.get(),
            excluded.get()
        ),
    )
}

fn metric_oracles() -> Outcome {
    let m = metrics(&[3.0, 5.0], &[1.0, 5.0]).unwrap();
    let r2 = 2f64.sqrt();
    let mut ok = (m.mae - 1.0).abs() < 1e-12
        && (m.rmse - r2).abs() < 1e-12
        && (m.nae - 1.0).abs() < 1e-12
        && (m.sre - r2).abs() < 1e-12;
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = r.random_range(1..60);
        let g: Vec<f64> = (0..n).map(|_| r.random_range(1..100) as f64).collect();
        let p: Vec<f64> = (0..n).map(|_| r.random_range(0.0..120.0)).collect();
        let m = metrics(&p, &g).unwrap();
        let (mut a, mut s, mut na, mut sr) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let e = p[i] - g[i];
            a += e.abs();
            s += e * e;
            na += e.abs() / g[i];
            sr += e * e / g[i];
        }
        let nf = n as f64;
        let o = [a / nf, (s / nf).sqrt(), na / nf, (sr / nf).sqrt()];
        for (x, y) in [m.mae, m.rmse, m.nae, m.sre].iter().zip(o) {
            worst = worst.max((x - y).abs() / y.abs().max(1.0));
        }
    }
    ok &= worst <= 1e-12;
    outcome(
        ok,
        format!("worked example exact, 500 random cases max dev {worst:.1e} (<= 1e-12)"),
    )
}

fn prompt_structure() -> Outcome {
    let cfg = MiniViTConfig::default();
    let vit = MiniViT::new(cfg.clone(), 7).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let n = cfg.image_shape().iter().product();
    let img = Array::new(
        cfg.image_shape().to_vec(),
        (0..n).map(|_| r.random::<f64>()).collect(),
    )
    .unwrap();
    let mut shapes_ok = true;
    for t in 1..=8 {
        let m = cfg.num_prompted() * t * cfg.width;
        let p = Array::new(
            vec![cfg.num_prompted(), t, cfg.width],
            (0..m).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let e = vit.encode_image(&img, Some(&p)).unwrap();
        shapes_ok &= e.patch_embeddings.shape() == [cfg.num_patches(), cfg.joint_dim];
    }
    let mut tape = Tape::new();
    let b = vit.bind(&mut tape, false).unwrap();
    let a = vit.encode(&mut tape, &b, &img, None).unwrap();
    let p = vit.encode_plain(&mut tape, &b, &img).unwrap();
    let bit = tape.value(a.cls).bit_eq(tape.value(p.cls))
        && tape.value(a.patches).bit_eq(tape.value(p.patches));
    outcome(
        shapes_ok && bit,
        format!(
            "{} patch tokens for T = 1..8: {shapes_ok}; T = 0 bit-identical to plain forward: {bit}",
            cfg.num_patches()
        ),
    )
}

fn freeze_and_locality() -> Outcome {
    let mut cfg = common::tiny();
    let ds = common::tiny_data(&cfg, 2);
    let table_hash = ds.table().hash_hex();
    let (bb, rep) = pretrain(&cfg.train, &ds).unwrap();
    let mut frozen = true;
    let mut cspi_one = true;
    let mut tgpr_k = true;
    let mut recon_adds_own = true;
    for lambda3 in [0.0, 10.0] {
        cfg.train.loss_weights.lambda3 = lambda3;
        let mut st = TrainState::new(cfg.train.clone(), bb.clone(), ds.table(), false).unwrap();
        run_cspi(&mut st, &ds.train, ds.table(), 1).unwrap();
        frozen &= st.backbone.hash_hex() == rep.backbone_hash;
        for s in &ds.train {
            let own = ds.table().seen_slot(s.category_id).unwrap();
            let (rows, _) = common::touched_rows(&st, &ds, Stage::Cspi, s);
            cspi_one &= rows == BTreeSet::from([own]);
            let (rows, _) = common::touched_rows(&st, &ds, Stage::Tgpr, s);
            let sel = ds
                .table()
                .topk_for_category(s.category_id, cfg.train.k)
                .unwrap();
            let fused: BTreeSet<usize> = sel
                .indices
                .iter()
                .map(|&j| ds.table().seen_slot(j).unwrap())
                .collect();
            tgpr_k &= fused.len() == cfg.train.k && !fused.contains(&own);
            let mut expect = fused.clone();
            if lambda3 != 0.0 {
                expect.insert(own);
                recon_adds_own &= rows == expect;
            } else {
                tgpr_k &= rows == expect;
            }
        }
        run_tgpr(&mut st, &ds.train, ds.table(), 1).unwrap();
        frozen &= st.backbone.hash_hex() == rep.backbone_hash;
        frozen &= ds.table().hash_hex() == table_hash && st.table_hash == table_hash;
    }
    outcome(
        frozen && cspi_one && tgpr_k && recon_adds_own,
        format!(
            "hashes unchanged: {frozen}; CSPI one slice: {cspi_one}; TGPR K fused slices: {tgpr_k}; \
             recon term adds only the own slice: {recon_adds_own}"
        ),
    )
}

fn determinism() -> Outcome {
    let cfg = common::tiny();
    let ds = common::tiny_data(&cfg, 6);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut reports = Vec::new();
    for d in &dirs {
        let out = train(&cfg.train, &ds, Some(d.path())).unwrap();
        let r = evaluate(
            &out.state,
            ds.table(),
            &ds.test,
            Split::Test,
            EvalMode::Sdvpt,
            2,
        )
        .unwrap();
        reports.push(serde_json::to_vec(&r).unwrap());
    }
    let files = [
        "cspi/weights.sdvt",
        "cspi/manifest.json",
        "final/weights.sdvt",
        "final/manifest.json",
        "train_log.jsonl",
    ];
    let same_files = files.iter().all(|f| {
        std::fs::read(dirs[0].path().join(f)).unwrap()
            == std::fs::read(dirs[1].path().join(f)).unwrap()
    });
    let same_reports = reports[0] == reports[1];
    outcome(
        same_files && same_reports,
        format!(
            "checkpoints and log identical: {same_files}; eval reports identical: {same_reports}"
        ),
    )
}

fn container() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let mut c = TensorContainer::new();
    for i in 0..1000 {
        let (a, d) = random_tensor(&mut r);
        c.push(format!("t{i}"), a, d).unwrap();
    }
    let back = TensorContainer::from_bytes(&c.to_bytes()).unwrap();
    let exact = back.len() == 1000
        && c.entries()
            .iter()
            .zip(back.entries())
            .all(|(a, b)| a.name == b.name && a.dtype == b.dtype && a.array.bit_eq(&b.array));

    let mut small = TensorContainer::new();
    for i in 0..8 {
        let (a, d) = random_tensor(&mut r);
        small.push(format!("w{i}"), a, d).unwrap();
    }
    let (bytes, layout) = small.encode();
    let (mut flips, mut caught) = (0usize, 0usize);
    for e in &layout {
        for byte in e.offset as usize..(e.offset + e.byte_len) as usize {
            for bit in 0..8 {
                let mut bad = bytes.clone();
                bad[byte] ^= 1 << bit;
                flips += 1;
                if let Err(err) = TensorContainer::from_bytes(&bad) {
                    caught += usize::from(err.to_string().contains(&e.name));
                }
            }
        }
    }
    outcome(
        exact && flips == caught && flips > 0,
        format!("1000 tensors bit-exact: {exact}; payload bit flips detected {caught}/{flips}"),
    )
}

struct Benchmark {
    reports: Vec<AblationReport>,
    secs: f64,
}

fn benchmark() -> Benchmark {
    let t = Instant::now();
    let base = ExperimentConfig::default();
    let reports = SEEDS
        .iter()
        .map(|&seed| {
            let cfg = base.clone().with_seed(seed);
            let ds = Dataset::generate(&cfg.data, seed).unwrap();
            ablate(&cfg.train, &ds, None, Split::Test, &SWEEP_K).unwrap()
        })
        .collect();
    Benchmark {
        reports,
        secs: t.elapsed().as_secs_f64(),
    }
}

fn seed_medians(b: &Benchmark, f: impl Fn(&AblationReport) -> f64) -> (f64, Vec<f64>) {
    let v: Vec<f64> = b.reports.iter().map(f).collect();
    (median(v.clone()), v)
}

fn mae(r: &AblationReport, name: &str) -> f64 {
    r.row(name).unwrap().report.metrics.mae
}

fn ordering(b: &Benchmark) -> Outcome {
    let (full, fv) = seed_medians(b, |r| r.full().unwrap().report.metrics.mae);
    let (cspi, cv) = seed_medians(b, |r| mae(r, "cspi_only"));
    let (shared, sv) = seed_medians(b, |r| mae(r, "shared_vpt"));
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.3}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    outcome(
        full < cspi && full < shared && b.secs < 45.0 * 60.0,
        format!(
            "unseen MAE median sdvpt {full:.3} [{}] vs cspi_only {cspi:.3} [{}] ({}) and shared_vpt {shared:.3} [{}] ({}); {:.0}s (< 2700s)",
            fmt(&fv),
            fmt(&cv),
            if full < cspi { "lower" } else { "NOT lower" },
            fmt(&sv),
            if full < shared { "lower" } else { "NOT lower" },
            b.secs
        ),
    )
}

fn interior_k(b: &Benchmark) -> Outcome {
    let med: Vec<f64> = (0..SWEEP_K.len())
        .map(|i| median(b.reports.iter().map(|r| r.sweep[i].mae).collect()))
        .collect();
    let best = (0..med.len())
        .min_by(|&a, &c| med[a].total_cmp(&med[c]))
        .unwrap();
    let per_seed: Vec<String> = b
        .reports
        .iter()
        .map(|r| {
            let i = (0..r.sweep.len())
                .min_by(|&a, &c| r.sweep[a].mae.total_cmp(&r.sweep[c].mae))
                .unwrap();
            r.sweep[i].k.to_string()
        })
        .collect();
    let curve: Vec<String> = SWEEP_K
        .iter()
        .zip(&med)
        .map(|(k, m)| format!("K{k}={m:.3}"))
        .collect();
    outcome(
        best != 0 && best != SWEEP_K.len() - 1,
        format!(
            "median MAE {}; best K {} (per seed {})",
            curve.join(" "),
            SWEEP_K[best],
            per_seed.join("/")
        ),
    )
}

fn alignment(b: &Benchmark) -> Outcome {
    let (sd, _) = seed_medians(b, |r| r.full().unwrap().report.mean_alignment);
    let (sh, _) = seed_medians(b, |r| r.row("shared_vpt").unwrap().report.mean_alignment);
    let per_seed = b.reports.iter().all(|r| {
        r.full().unwrap().report.mean_alignment > r.row("shared_vpt").unwrap().report.mean_alignment
    });
    outcome(
        sd > sh,
        format!("median unseen cosine sdvpt {sd:.4} vs shared_vpt {sh:.4}; higher on every seed: {per_seed}"),
    )
}

fn recon_ablation(b: &Benchmark) -> Outcome {
    let ok = b.reports.iter().all(|r| {
        let l2 = r.row("sdvpt_l2");
        let cos = r.row("sdvpt_cosine");
        matches!((l2, cos), (Some(a), Some(c))
            if a.recon_metric == Some(ReconMetric::L2)
                && c.recon_metric == Some(ReconMetric::Cosine)
                && a.report.metrics.mae.is_finite()
                && c.report.metrics.mae.is_finite())
    });
    let (l2, _) = seed_medians(b, |r| mae(r, "sdvpt_l2"));
    let (cos, _) = seed_medians(b, |r| mae(r, "sdvpt_cosine"));
    outcome(
        ok,
        format!("both metrics recorded on all seeds: {ok}; median MAE l2 {l2:.3}, cosine {cos:.3}"),
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "gradient check", gradient()),
        (2, "fusion oracle", fusion()),
        (3, "metric oracles", metric_oracles()),
        (4, "prompt insertion structure", prompt_structure()),
        (5, "freeze discipline", freeze_and_locality()),
        (6, "determinism", determinism()),
    ];
    let b = benchmark();
    results.push((7, "ablation ordering", ordering(&b)));
    results.push((8, "interior top-K", interior_k(&b)));
    results.push((9, "unseen alignment", alignment(&b)));
    results.push((10, "recon metric ablation", recon_ablation(&b)));
    results.push((11, "container robustness", container()));
    results.sort_by_key(|r| r.0);

    let mut unexpected = Vec::new();
    for (id, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {id:>2} {name}: {}", o.detail);
        if !o.pass && !KNOWN_FAILURES.contains(id) {
            unexpected.push(*id);
        }
    }
    let fixed: Vec<u32> = results
        .iter()
        .filter(|(id, _, o)| o.pass && KNOWN_FAILURES.contains(id))
        .map(|r| r.0)
        .collect();
    if !fixed.is_empty() {
        println!("listed as known failures but passing: {fixed:?}");
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
