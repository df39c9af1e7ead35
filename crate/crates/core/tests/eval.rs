mod common;

use sdvpt::data::Split;
use sdvpt::eval::{
    bench_overhead, evaluate, export_embeddings, fusion_op_count, sweep_topk, write_sweep_csv,
    EvalMode, EvalReport, EXPORT_HEADER_PREFIX,
};
use sdvpt::numerics::Tape;
use sdvpt::training::{train, train_baseline, TrainOutcome};
use sdvpt::Error;

fn trained(seed: u64) -> (sdvpt::data::Dataset, TrainOutcome) {
    let cfg = common::tiny();
    let ds = common::tiny_data(&cfg, seed);
    let out = train(&cfg.train, &ds, None).unwrap();
    (ds, out)
}

#[test]
fn k1_on_seen_categories_matches_direct_selection() {
    let (ds, out) = trained(21);
    let st = &out.state;
    let r = evaluate(st, ds.table(), &ds.val, Split::Val, EvalMode::Sdvpt, 1).unwrap();
    for (s, p) in ds.val.iter().zip(&r.samples) {
        let prompt = st.prompts.select(ds.table(), s.category_id).unwrap();
        let enc = st.backbone.encode_image(&s.image, Some(&prompt)).unwrap();
        let (_, direct) = st
            .head
            .predict(
                &enc.patch_embeddings,
                ds.table().embedding(s.category_id).unwrap(),
            )
            .unwrap();
        assert_eq!(p.pred.to_bits(), direct.to_bits(), "{} vs {direct}", p.pred);
    }
}

#[test]
fn no_prompt_mode_is_the_plain_backbone() {
    let (ds, out) = trained(22);
    let st = &out.state;
    let r = evaluate(st, ds.table(), &ds.test, Split::Test, EvalMode::NoPrompt, 1).unwrap();
    assert_eq!(r.k, None);
    for (s, p) in ds.test.iter().zip(&r.samples) {
        let mut tape = Tape::new();
        let b = st.backbone.bind(&mut tape, false).unwrap();
        let enc = st.backbone.encode_plain(&mut tape, &b, &s.image).unwrap();
        let (_, c) = st
            .head
            .predict(
                tape.value(enc.patches),
                ds.table().embedding(s.category_id).unwrap(),
            )
            .unwrap();
        assert_eq!(p.pred.to_bits(), c.to_bits());
    }
}

#[test]
fn report_aggregates_recompute_and_survive_disk() {
    let (ds, out) = trained(23);
    let before = out.state.hash_hex().unwrap();
    let r = evaluate(
        &out.state,
        ds.table(),
        &ds.test,
        Split::Test,
        EvalMode::Sdvpt,
        2,
    )
    .unwrap();
    assert_eq!(out.state.hash_hex().unwrap(), before);
    assert_eq!(r.checkpoint_hash, before);
    assert_eq!(r.recompute().unwrap(), r.metrics);
    let again = evaluate(
        &out.state,
        ds.table(),
        &ds.test,
        Split::Test,
        EvalMode::Sdvpt,
        2,
    )
    .unwrap();
    assert_eq!(
        serde_json::to_string(&r).unwrap(),
        serde_json::to_string(&again).unwrap()
    );

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("report.json");
    r.write(&p).unwrap();
    let back = EvalReport::read(&p).unwrap();
    assert_eq!(back, r);
    assert_eq!(back.recompute().unwrap(), r.metrics);
}

#[test]
fn mode_names_round_trip() {
    for m in EvalMode::ALL {
        assert_eq!(m.to_string().parse::<EvalMode>().unwrap(), m);
    }
    assert!(matches!(
        "vpt".parse::<EvalMode>(),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn a_foreign_table_is_rejected() {
    let (_, out) = trained(24);
    let cfg = common::tiny();
    let other = common::tiny_data(&cfg, 99);
    let r = evaluate(
        &out.state,
        other.table(),
        &other.test,
        Split::Test,
        EvalMode::Sdvpt,
        1,
    );
    assert!(matches!(r, Err(Error::Contract(_))));
}

#[test]
fn sweep_rows_and_k_bounds() {
    let (ds, out) = trained(25);
    let rows = sweep_topk(&out.state, &ds, Split::Test, &[1, 2, 4]).unwrap();
    assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![1, 2, 4]);
    let direct = evaluate(
        &out.state,
        ds.table(),
        &ds.test,
        Split::Test,
        EvalMode::Sdvpt,
        2,
    )
    .unwrap();
    assert_eq!(rows[1].mae, direct.metrics.mae);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("sweep.csv");
    write_sweep_csv(&rows, &p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("k,mae,rmse"));

    let n_seen = ds.table().num_seen();
    assert!(matches!(
        sweep_topk(&out.state, &ds, Split::Test, &[1, n_seen + 1]),
        Err(Error::Parameter(_))
    ));
    assert!(matches!(
        sweep_topk(&out.state, &ds, Split::Test, &[0]),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn export_rows_and_frozen_text() {
    let (ds, out) = trained(26);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("emb.csv");
    let n = export_embeddings(&out.state, &ds, EvalMode::Sdvpt, 2, &p).unwrap();
    let n_samples = ds.train.len() + ds.val.len() + ds.test.len();
    assert_eq!(n, n_samples + ds.table().len());

    let mut rdr = csv::Reader::from_path(&p).unwrap();
    let header = rdr.headers().unwrap().clone();
    assert_eq!(
        header
            .iter()
            .take(EXPORT_HEADER_PREFIX.len())
            .collect::<Vec<_>>(),
        EXPORT_HEADER_PREFIX.to_vec()
    );
    let recs: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(recs.len(), n);
    let off = EXPORT_HEADER_PREFIX.len();
    for r in recs.iter().filter(|r| &r[0] == "text") {
        let id: usize = r[3].parse().unwrap();
        let vals: Vec<f64> = r.iter().skip(off).map(|v| v.parse().unwrap()).collect();
        let want = ds.table().embedding(id).unwrap();
        assert!(
            vals.iter()
                .zip(want)
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            "category {id}"
        );
    }
}

#[test]
fn bench_counts_and_purity() {
    let (ds, out) = trained(27);
    let rep = bench_overhead(&out.state, ds.table(), &ds.test, 6, 2).unwrap();
    let p = &out.state.prompts;
    let (m, a) = fusion_op_count(2, p.layers(), p.tokens(), p.width());
    assert_eq!((rep.fusion_multiplications, rep.fusion_additions), (m, a));
    assert_eq!(m, 2 * p.layers() * p.tokens() * p.width());
    assert!(rep.predictions_identical);
    assert_eq!(rep.prompt_params, p.num_slots() * p.slot_len());
    assert_eq!(
        rep.prompt_params,
        ds.table().num_seen() * p.layers() * p.tokens() * p.width()
    );
    assert_eq!(rep.text_table_values, ds.table().len() * ds.table().dim());
}

#[test]
fn shared_baseline_evaluates_only_as_shared() {
    let cfg = common::tiny();
    let ds = common::tiny_data(&cfg, 28);
    let out = train_baseline(&cfg.train, &ds, None, None).unwrap();
    for m in [EvalMode::Sdvpt, EvalMode::CspiOnly] {
        assert!(matches!(
            evaluate(&out.state, ds.table(), &ds.test, Split::Test, m, 1),
            Err(Error::Contract(_))
        ));
    }
    let r = evaluate(
        &out.state,
        ds.table(),
        &ds.test,
        Split::Test,
        EvalMode::SharedVpt,
        3,
    )
    .unwrap();
    assert_eq!(r.k, None);
    let rep = bench_overhead(&out.state, ds.table(), &ds.test, 4, 1).unwrap();
    assert_eq!(rep.fusion_multiplications, 0);
    assert_eq!(rep.prompt_params, out.state.prompts.slot_len());
}
