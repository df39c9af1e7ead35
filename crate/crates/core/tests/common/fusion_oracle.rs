//! Enumerate-sort-sum reference for top-K selection and prompt fusion.

use proptest::collection::vec;
use proptest::prelude::*;
use sdvpt::numerics::Array;
use sdvpt::prompts::BasePromptSet;
use sdvpt::text_space::TextEmbeddingTable;

#[derive(Debug, Clone)]
pub struct Instance {
    pub table: TextEmbeddingTable,
    pub prompts: BasePromptSet,
    pub query: Vec<f64>,
    pub k: usize,
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na * nb).sqrt()
}

/// Seen ids are every other category, so slots and ids differ.
pub fn instance() -> impl Strategy<Value = Instance> {
    (2usize..=12, 2usize..=6, 1usize..=2, 1usize..=3, 1usize..=4).prop_flat_map(
        |(n, dim, l, t, d)| {
            (
                vec(-1.0..1.0f64, n * dim),
                vec(-1.0..1.0f64, dim),
                vec(-1.0..1.0f64, n * l * t * d),
                1usize..=n,
                any::<u64>(),
            )
                .prop_map(move |(emb, query, pv, k, salt)| {
                    let total = 2 * n;
                    let mut data = Vec::with_capacity(total * dim);
                    for c in 0..total {
                        if c % 2 == 0 {
                            data.extend_from_slice(&emb[(c / 2) * dim..(c / 2 + 1) * dim]);
                        } else {
                            data.extend(
                                (0..dim).map(|j| {
                                    (((c * 31 + j) as u64 ^ salt) % 97) as f64 / 50.0 - 0.97
                                }),
                            );
                        }
                    }
                    // keep every row away from zero norm
                    for c in 0..total {
                        data[c * dim] += 1.5;
                    }
                    let names = (0..total).map(|c| format!("c{c}")).collect();
                    let seen = (0..total).map(|c| c % 2 == 0).collect();
                    let table = TextEmbeddingTable::new(
                        Array::matrix(total, dim, data).unwrap(),
                        names,
                        seen,
                    )
                    .unwrap();
                    let prompts =
                        BasePromptSet::from_array(Array::new(vec![n, l, t, d], pv).unwrap())
                            .unwrap();
                    let mut q = query;
                    q[0] += 1.5;
                    Instance {
                        table,
                        prompts,
                        query: q,
                        k,
                    }
                })
        },
    )
}

pub fn oracle_topk(
    inst: &Instance,
    query: &[f64],
    exclude: Option<usize>,
    k: usize,
) -> Vec<(usize, f64)> {
    let mut all = Vec::new();
    for id in 0..inst.table.len() {
        if !inst.table.is_seen(id) || Some(id) == exclude {
            continue;
        }
        all.push((id, cos(query, inst.table.embedding(id).unwrap())));
    }
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

pub fn oracle_fuse(inst: &Instance, sel: &[(usize, f64)]) -> Vec<f64> {
    let len = inst.prompts.slot_len();
    let mut out = vec![0.0; len];
    for &(id, w) in sel {
        let slot = id / 2;
        for i in 0..len {
            out[i] += w * inst.prompts.values().data()[slot * len + i];
        }
    }
    out
}
