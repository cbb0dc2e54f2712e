//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; the process exits non-zero
//! if any criterion fails.

// the oracles are deliberately written as plain index loops
#![allow(clippy::needless_range_loop)]

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use hiertype::corpus::{EmbeddingTable, Mention};
use hiertype::eval::average_precision;
use hiertype::hierarchy::{
    derive_cooccurrence_links, EntityTypeTable, HierarchyError, LinkKind, NamedLink, TypeHierarchy,
    TypeId, TypeSet,
};
use hiertype::model::{
    cnn_forward, encode_mention, order_energy, DropoutMasks, EncoderMode, EncoderParams,
    ModelConfig, Params, ScoreKind,
};
use hiertype::synthetic::{generate, SyntheticConfig};
use hiertype::training::{
    finite_difference_check, fit_structure, init_params, structure_loss, train, typing_loss,
    write_history, GradCheckConfig, Objective, Probe, StructureFitConfig, StructureInput,
    TrainConfig, TypingInput,
};
use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- helpers

/// Random DAG over `n` types: each type `i` gets parents among `0..i`, then
/// names are shuffled so index order carries no information.
fn random_dag(n: usize, edge_p: f64, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<(usize, usize)>) {
    let mut edges = Vec::new();
    for child in 1..n {
        for parent in 0..child {
            if rng.gen_bool(edge_p) {
                edges.push((child, parent));
            }
        }
    }
    let mut names: Vec<String> = (0..n).map(|i| format!("T{i}")).collect();
    names.shuffle(rng);
    (names, edges)
}

fn build(names: &[String], edges: &[(usize, usize)]) -> Result<TypeHierarchy, HierarchyError> {
    let mut text = String::new();
    for name in names {
        text.push_str(name);
        text.push('\n');
    }
    for &(c, p) in edges {
        text.push_str(&format!("{}\t{}\tchild_of\n", names[c], names[p]));
    }
    TypeHierarchy::parse_str(&text)
}

/// Strict ancestors by depth-first search over raw edges.
fn reachable(n: usize, edges: &[(usize, usize)]) -> Vec<BTreeSet<usize>> {
    let mut parents = vec![Vec::new(); n];
    for &(c, p) in edges {
        parents[c].push(p);
    }
    (0..n)
        .map(|start| {
            let mut seen = BTreeSet::new();
            let mut stack = parents[start].clone();
            while let Some(v) = stack.pop() {
                if seen.insert(v) {
                    stack.extend(parents[v].iter().copied());
                }
            }
            seen
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    rng.gen_range(-scale..scale)
}

fn random_encoder(d: usize, w: usize, rng: &mut ChaCha8Rng) -> EncoderParams {
    EncoderParams {
        conv_filter: Array3::from_shape_simple_fn((w, d, d), || uniform(rng, 0.6)),
        conv_bias: Array1::from_shape_simple_fn(d, || uniform(rng, 0.3)),
        hidden_weight: Array2::from_shape_simple_fn((d, 2 * d), || uniform(rng, 0.6)),
        hidden_bias: Array1::from_shape_simple_fn(d, || uniform(rng, 0.3)),
        output_weight: Array2::from_shape_simple_fn((d, d), || uniform(rng, 0.6)),
        output_bias: Array1::from_shape_simple_fn(d, || uniform(rng, 0.3)),
    }
}

fn random_words(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || uniform(rng, 1.0))
}

fn random_span(n: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let a = rng.gen_range(0..n);
    let b = rng.gen_range(0..n);
    (a.min(b), a.max(b))
}

fn random_gold(types: usize, rng: &mut ChaCha8Rng) -> TypeSet {
    loop {
        let gold: TypeSet = (0..types)
            .filter(|_| rng.gen_bool(0.3))
            .map(TypeId)
            .collect();
        if !gold.is_empty() {
            return gold;
        }
    }
}

fn random_masks(d: usize, rng: &mut ChaCha8Rng) -> DropoutMasks {
    DropoutMasks::sample(0.3, d, rng)
}

/// Twelve types; the first seven form a fixed spine so that several types
/// always have ancestors, the rest attach randomly.
fn gradcheck_hierarchy(rng: &mut ChaCha8Rng) -> TypeHierarchy {
    let mut edges = vec![(1, 0), (2, 0), (3, 1), (4, 1), (5, 2), (6, 3)];
    for child in 7..12 {
        let parent = rng.gen_range(0..child);
        edges.push((child, parent));
        if rng.gen_bool(0.3) {
            let other = rng.gen_range(0..child);
            if other != parent {
                edges.push((child, other));
            }
        }
    }
    let names: Vec<String> = (0..12).map(|i| format!("T{i}")).collect();
    build(&names, &edges).expect("acyclic by construction")
}

// ---------------------------------------------------------------- oracles

fn oracle_cnn(p: &EncoderParams, x: &Array2<f64>) -> Vec<f64> {
    let (n, d) = x.dim();
    let w = p.conv_filter.shape()[0];
    let len = n.max(w);
    let left = if n < w { (w - n) / 2 } else { 0 };
    let at = |i: usize, c: usize| -> f64 {
        if i >= left && i < left + n {
            x[[i - left, c]]
        } else {
            0.0
        }
    };
    let mut out = vec![0.0; d];
    for (o, slot) in out.iter_mut().enumerate() {
        let mut best = 0.0f64;
        for j in 0..=len - w {
            let mut z = p.conv_bias[o];
            for k in 0..w {
                for c in 0..d {
                    z += p.conv_filter[[k, o, c]] * at(j + k, c);
                }
            }
            best = best.max(z.max(0.0));
        }
        *slot = best;
    }
    out
}

fn oracle_encode(
    p: &EncoderParams,
    x: &Array2<f64>,
    span: (usize, usize),
    mode: EncoderMode,
    masks: Option<&DropoutMasks>,
) -> Vec<f64> {
    let d = x.ncols();
    let mut concat = vec![0.0; 2 * d];
    let count = (span.1 - span.0 + 1) as f64;
    for c in 0..d {
        let mut sum = 0.0;
        for i in span.0..=span.1 {
            sum += x[[i, c]];
        }
        concat[c] = sum / count;
    }
    if mode == EncoderMode::CnnPlusMention {
        concat[d..].copy_from_slice(&oracle_cnn(p, x));
    }
    if let Some(m) = masks {
        for (v, k) in concat.iter_mut().zip(m.input.iter()) {
            *v *= k;
        }
    }
    let mut hidden = vec![0.0; d];
    for r in 0..d {
        let mut z = p.hidden_bias[r];
        for c in 0..2 * d {
            z += p.hidden_weight[[r, c]] * concat[c];
        }
        hidden[r] = z.max(0.0) * masks.map_or(1.0, |m| m.hidden[r]);
    }
    (0..d)
        .map(|r| {
            let mut z = p.output_bias[r];
            for c in 0..d {
                z += p.output_weight[[r, c]] * hidden[c];
            }
            z
        })
        .collect()
}

fn oracle_compat(kind: ScoreKind, x: &[f64], y: &[f64], a: Option<&Array2<f64>>) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    match kind {
        ScoreKind::Bilinear => {
            let a = a.expect("bilinear matrix");
            for i in 0..d {
                for j in 0..d {
                    s += x[i] * a[[i, j]] * y[j];
                }
            }
        }
        _ => {
            for i in 0..d {
                s += x[i] * y[i];
            }
        }
    }
    s
}

/// `(-score if member, penalty otherwise)` written out from the
/// definitions: `-ln σ(s)` and `-ln(1 - σ(s))`, or the order energy and
/// its margin hinge.
fn oracle_term(
    kind: ScoreKind,
    x: &[f64],
    y: &[f64],
    a: Option<&Array2<f64>>,
    member: bool,
) -> f64 {
    match kind {
        ScoreKind::Order { margin } => {
            let mut e = 0.0;
            for i in 0..x.len() {
                let v = (y[i] - x[i]).max(0.0);
                e += v * v;
            }
            if member {
                e
            } else {
                (margin - e).max(0.0)
            }
        }
        _ => {
            let s = oracle_compat(kind, x, y, a);
            let sigma = 1.0 / (1.0 + (-s).exp());
            if member {
                -sigma.ln()
            } else {
                -(1.0 - sigma).ln()
            }
        }
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

// ---------------------------------------------------------------- criteria

fn criterion_1() -> Outcome {
    let (d, w, types) = (8, 3, 12);
    let started = Instant::now();
    let mention_kinds = [
        ScoreKind::Dot,
        ScoreKind::Bilinear,
        ScoreKind::Order { margin: 1.0 },
    ];
    let structure_kinds = mention_kinds;
    let modes = [EncoderMode::MentionOnly, EncoderMode::CnnPlusMention];
    let mut worst = 0.0f64;
    let (mut combos, mut compared, mut excluded) = (0, 0, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for mention_kind in mention_kinds {
        for mode in modes {
            for lambda in [0.0, 0.5] {
                for structure_kind in structure_kinds {
                    combos += 1;
                    let config = ModelConfig {
                        dim: d,
                        width: w,
                        num_types: types,
                        mode,
                        mention_kind,
                        structure_kind: Some(structure_kind),
                        share_bilinear: false,
                    };
                    let hierarchy = gradcheck_hierarchy(&mut rng);
                    let mut params = init_params(&config, rng.gen());
                    // nonzero biases so ReLUs start in both states
                    let e = &mut params.encoder;
                    for b in [&mut e.conv_bias, &mut e.hidden_bias, &mut e.output_bias] {
                        b.mapv_inplace(|_| uniform(&mut rng, 0.2));
                    }
                    let words: Vec<Array2<f64>> = (0..3)
                        .map(|_| {
                            let n = rng.gen_range(1..=10);
                            random_words(n, d, &mut rng)
                        })
                        .collect();
                    let spans: Vec<_> = words
                        .iter()
                        .map(|x| random_span(x.nrows(), &mut rng))
                        .collect();
                    let golds: Vec<_> = (0..3).map(|_| random_gold(types, &mut rng)).collect();
                    let masks: Vec<_> = (0..3).map(|_| random_masks(d, &mut rng)).collect();
                    let typing: Vec<TypingInput<'_>> = (0..3)
                        .map(|i| TypingInput {
                            words: words[i].view(),
                            span: spans[i],
                            gold: &golds[i],
                            // the first mention runs without dropout
                            dropout: (i > 0).then_some(&masks[i]),
                        })
                        .collect();
                    let with_anc = hierarchy.types_with_ancestors();
                    let structure: Vec<StructureInput<'_>> = (0..4)
                        .map(|_| {
                            let t = *with_anc.choose(&mut rng).expect("spine has ancestors");
                            StructureInput {
                                child: t,
                                ancestors: hierarchy.ancestors(t).expect("own type"),
                            }
                        })
                        .collect();
                    let objective = Objective {
                        config: &config,
                        typing: &typing,
                        structure: &structure,
                        structure_weight: lambda,
                    };
                    let (_, grads) = objective
                        .loss_and_grad(&params)
                        .map_err(|e| e.to_string())?;
                    let report = finite_difference_check(
                        &mut params,
                        &grads,
                        |p: &Params| {
                            objective
                                .loss_with_pattern(p)
                                .map(|(loss, pattern)| Probe { loss, pattern })
                        },
                        GradCheckConfig {
                            seed: combos,
                            ..Default::default()
                        },
                    )
                    .map_err(|e| e.to_string())?;
                    compared += report.compared();
                    excluded += report.excluded();
                    if report.max_rel_error() >= 1e-4 {
                        let bad = report
                            .tensors
                            .iter()
                            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
                            .expect("tensors");
                        return Err(format!(
                            "{} mode={} lambda={lambda} structure={}: {} rel error {:.3e} at {:?}",
                            mention_kind.name(),
                            mode,
                            structure_kind.name(),
                            bad.name,
                            bad.max_rel_error,
                            bad.worst
                        ));
                    }
                    worst = worst.max(report.max_rel_error());
                }
            }
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(120), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{combos} combinations, {compared} coordinates compared, {excluded} at kinks excluded, max rel error {worst:.2e}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tol = 1e-12;
    let kinds = [
        ScoreKind::Dot,
        ScoreKind::Bilinear,
        ScoreKind::Order { margin: 1.0 },
    ];
    let mut worst = 0.0f64;
    let mut track = |a: f64, b: f64, what: &str, i: usize| -> Result<(), String> {
        worst = worst.max((a - b).abs() / b.abs().max(1.0));
        ensure(close(a, b, tol), || {
            format!("{what} instance {i}: {a} vs {b}")
        })
    };
    for i in 0..100 {
        let d = rng.gen_range(2..=8);
        let w = [1, 3, 5][rng.gen_range(0..3)];
        let n = rng.gen_range(1..=10);
        let encoder = random_encoder(d, w, &mut rng);

        // cnn_forward
        let x = random_words(n, d, &mut rng);
        let got = cnn_forward(&encoder, x.view()).map_err(|e| e.to_string())?;
        for (a, b) in got.iter().zip(oracle_cnn(&encoder, &x)) {
            track(*a, b, "cnn_forward", i)?;
        }

        // encode_mention through an embedding table
        let mut table = EmbeddingTable::new(d).map_err(|e| e.to_string())?;
        for v in 0..12 {
            let vec = Array1::from_shape_simple_fn(d, || uniform(&mut rng, 1.0));
            table
                .insert(format!("tok{v}"), vec)
                .map_err(|e| e.to_string())?;
        }
        // tok12 and beyond are out of vocabulary
        let tokens: Vec<String> = (0..n)
            .map(|_| format!("tok{}", rng.gen_range(0..14)))
            .collect();
        let span = random_span(n, &mut rng);
        let mention = Mention::new(tokens.clone(), span, "e").map_err(|e| e.to_string())?;
        let words = table.sequence(&tokens);
        let mode = if i % 2 == 0 {
            EncoderMode::CnnPlusMention
        } else {
            EncoderMode::MentionOnly
        };
        let masks = (i % 3 == 0).then(|| random_masks(d, &mut rng));
        let got = encode_mention(&encoder, &mention, &table, mode, masks.as_ref())
            .map_err(|e| e.to_string())?;
        for (a, b) in got
            .iter()
            .zip(oracle_encode(&encoder, &words, span, mode, masks.as_ref()))
        {
            track(*a, b, "encode_mention", i)?;
        }

        // typing_loss and structure_loss
        let types = rng.gen_range(2..=10);
        let mention_kind = kinds[i % 3];
        let structure_kind = kinds[(i / 3) % 3];
        let config = ModelConfig {
            dim: d,
            width: w,
            num_types: types,
            mode,
            mention_kind,
            structure_kind: Some(structure_kind),
            share_bilinear: i % 5 == 0,
        };
        let mut params = init_params(&config, rng.gen());
        params.encoder = encoder.clone();
        let batch_words: Vec<Array2<f64>> = (0..3)
            .map(|_| {
                let n = rng.gen_range(1..=10);
                random_words(n, d, &mut rng)
            })
            .collect();
        let spans: Vec<_> = batch_words
            .iter()
            .map(|x| random_span(x.nrows(), &mut rng))
            .collect();
        let golds: Vec<_> = (0..3).map(|_| random_gold(types, &mut rng)).collect();
        let batch: Vec<TypingInput<'_>> = (0..3)
            .map(|j| TypingInput {
                words: batch_words[j].view(),
                span: spans[j],
                gold: &golds[j],
                dropout: None,
            })
            .collect();
        let got = typing_loss(&params, &config, &batch).map_err(|e| e.to_string())?;
        let mut want = 0.0;
        for j in 0..3 {
            let m = oracle_encode(&params.encoder, &batch_words[j], spans[j], mode, None);
            for t in 0..types {
                let y: Vec<f64> = params.types.row(t).to_vec();
                let member = golds[j].contains(&TypeId(t));
                want += oracle_term(
                    mention_kind,
                    &m,
                    &y,
                    params.mention_bilinear.as_ref(),
                    member,
                );
            }
        }
        track(got, want / 3.0, "typing_loss", i)?;

        // random ancestor sets; the loss does not require them to come
        // from a hierarchy
        let ancestor_sets: Vec<(TypeId, Vec<TypeId>)> = (0..4)
            .map(|_| {
                let child = rng.gen_range(0..types);
                let mut anc: Vec<TypeId> = (0..types)
                    .filter(|&u| u != child && rng.gen_bool(0.4))
                    .map(TypeId)
                    .collect();
                if anc.is_empty() {
                    anc.push(TypeId((child + 1) % types));
                }
                (TypeId(child), anc)
            })
            .collect();
        let sbatch: Vec<StructureInput<'_>> = ancestor_sets
            .iter()
            .map(|(c, a)| StructureInput {
                child: *c,
                ancestors: a,
            })
            .collect();
        let got = structure_loss(&params, &config, &sbatch).map_err(|e| e.to_string())?;
        let a = params
            .structure_bilinear
            .as_ref()
            .or(params.mention_bilinear.as_ref());
        let mut want = 0.0;
        for (child, anc) in &ancestor_sets {
            let x: Vec<f64> = params.types.row(child.0).to_vec();
            for t in (0..types).filter(|&t| t != child.0) {
                let y: Vec<f64> = params.types.row(t).to_vec();
                want += oracle_term(structure_kind, &x, &y, a, anc.contains(&TypeId(t)));
            }
        }
        track(got, want / 4.0, "structure_loss", i)?;
    }
    Ok(format!(
        "100 instances x 4 functions, max discrepancy {worst:.1e} (tolerance 1e-12)"
    ))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checks = 0usize;
    for dag in 0..500 {
        let n = rng.gen_range(1..=50);
        let p = rng.gen_range(0.02..0.3);
        let (names, edges) = random_dag(n, p, &mut rng);
        let h = build(&names, &edges).map_err(|e| format!("dag {dag}: {e}"))?;
        let oracle = reachable(n, &edges);
        let id = |i: usize| h.id(&names[i]).expect("declared");
        let to_names = |set: &TypeSet| -> BTreeSet<String> {
            set.iter()
                .map(|&t| h.name(t).expect("own").to_string())
                .collect()
        };

        for i in 0..n {
            let got: BTreeSet<String> = h
                .ancestors(id(i))
                .map_err(|e| e.to_string())?
                .iter()
                .map(|&t| h.name(t).expect("own").to_string())
                .collect();
            let want: BTreeSet<String> = oracle[i].iter().map(|&j| names[j].clone()).collect();
            ensure(got == want, || {
                format!("dag {dag}: ancestors of {} differ", names[i])
            })?;
            // transitivity
            for &a in &oracle[i] {
                for &b in &oracle[a] {
                    ensure(h.is_ancestor(id(i), id(b)).unwrap_or(false), || {
                        format!("dag {dag}: transitivity {i} -> {a} -> {b}")
                    })?;
                }
            }
            checks += 1;
        }

        // idempotence and monotonicity of the set closure
        for _ in 0..5 {
            let small: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.2)).collect();
            let mut large = small.clone();
            large.extend((0..n).filter(|_| rng.gen_bool(0.2)));
            let cs = h
                .closure_of_set(small.iter().map(|&i| id(i)))
                .map_err(|e| e.to_string())?;
            let cl = h
                .closure_of_set(large.iter().map(|&i| id(i)))
                .map_err(|e| e.to_string())?;
            let again = h
                .closure_of_set(cs.iter().copied())
                .map_err(|e| e.to_string())?;
            ensure(again == cs, || format!("dag {dag}: closure not idempotent"))?;
            ensure(cs.is_subset(&cl), || {
                format!("dag {dag}: closure not monotone")
            })?;
            let want: BTreeSet<String> = small
                .iter()
                .flat_map(|&i| oracle[i].iter().copied().chain([i]))
                .map(|j| names[j].clone())
                .collect();
            ensure(to_names(&cs) == want, || {
                format!("dag {dag}: closure differs from oracle")
            })?;
            checks += 3;
        }

        // a back edge from any ancestor to its descendant must be rejected
        if let Some(child) = (0..n).find(|&i| !oracle[i].is_empty()) {
            let anc = *oracle[child]
                .iter()
                .nth(rng.gen_range(0..oracle[child].len()))
                .expect("non-empty");
            let mut bad = edges.clone();
            bad.push((anc, child));
            let err = build(&names, &bad);
            let Err(HierarchyError::Cycle(cycle)) = err else {
                return Err(format!("dag {dag}: back edge {anc} -> {child} accepted"));
            };
            let index = |s: &String| names.iter().position(|x| x == s).expect("known name");
            let edge_set: BTreeSet<(usize, usize)> = bad.iter().copied().collect();
            let forward = cycle
                .windows(2)
                .all(|p| edge_set.contains(&(index(&p[0]), index(&p[1]))));
            let backward = cycle
                .windows(2)
                .all(|p| edge_set.contains(&(index(&p[1]), index(&p[0]))));
            ensure(
                cycle.len() >= 3 && cycle.first() == cycle.last() && (forward || backward),
                || format!("dag {dag}: reported cycle {cycle:?} is not a cycle of the graph"),
            )?;
            checks += 1;
        }
    }
    Ok(format!(
        "500 random DAGs, {checks} property checks, 0 discrepancies"
    ))
}

fn criterion_4() -> Outcome {
    let mut fixture = EntityTypeTable::new();
    fixture.insert("e1", ["A", "B"]);
    fixture.insert("e2", ["A", "B"]);
    fixture.insert("e3", ["A"]);
    let links = derive_cooccurrence_links(&fixture, 0.7, None).map_err(|e| e.to_string())?;
    ensure(links == [NamedLink::new("B", "A", LinkKind::FbFb)], || {
        format!("fixture produced {links:?}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for table_no in 0..200 {
        let type_count = rng.gen_range(1..=8);
        let entity_count = rng.gen_range(1..=12);
        let mut table = EntityTypeTable::new();
        let mut members: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); type_count];
        for e in 0..entity_count {
            let types: Vec<String> = (0..type_count)
                .filter(|_| rng.gen_bool(0.4))
                .map(|t| format!("t{t}"))
                .collect();
            if types.is_empty() {
                continue;
            }
            for t in &types {
                members[t[1..].parse::<usize>().expect("index")].insert(e);
            }
            table.insert(&format!("e{e}"), types);
        }
        let got: BTreeSet<(String, String)> = derive_cooccurrence_links(&table, 1.0, None)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|l| (l.child, l.parent))
            .collect();
        let mut want = BTreeSet::new();
        for c in 0..type_count {
            for p in 0..type_count {
                if c != p && !members[c].is_empty() && members[c].is_subset(&members[p]) {
                    want.insert((format!("t{c}"), format!("t{p}")));
                }
            }
        }
        ensure(got == want, || {
            format!("table {table_no}: {got:?} vs {want:?}")
        })?;
    }
    Ok("fixture yields exactly B -> A; 200 random tables match the inclusion oracle at threshold 1.0".into())
}

fn criterion_5() -> Outcome {
    let (a, b, c) = (TypeId(0), TypeId(1), TypeId(2));
    let worked =
        average_precision(&[b, a, c], &[a, c].into_iter().collect()).map_err(|e| e.to_string())?;
    ensure((worked - 7.0 / 12.0).abs() <= 1e-12, || {
        format!("worked example gave {worked}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let n = rng.gen_range(1..=30);
        let mut ranking: Vec<TypeId> = (0..n).map(TypeId).collect();
        ranking.shuffle(&mut rng);
        let gold = random_gold(n, &mut rng);
        let got = average_precision(&ranking, &gold).map_err(|e| e.to_string())?;
        // cumulative precision at every rank holding a gold type
        let mut total = 0.0;
        for k in 1..=n {
            if gold.contains(&ranking[k - 1]) {
                let hits = ranking[..k].iter().filter(|t| gold.contains(t)).count();
                total += hits as f64 / k as f64;
            }
        }
        let want = total / gold.len() as f64;
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-12, || {
            format!("instance {i}: {got} vs {want}")
        })?;
    }
    Ok(format!(
        "worked example = 7/12; 1000 random instances, max discrepancy {worst:.1e}"
    ))
}

fn synthetic_config(mode: EncoderMode) -> TrainConfig {
    TrainConfig {
        dim: 16,
        filter_width: 3,
        encoder_mode: mode,
        learning_rate: 0.01,
        dropout_p: 0.2,
        structure_score_kind: Some(ScoreKind::Bilinear),
        structure_weight: 0.5,
        max_epochs: 500,
        patience: 30,
        seed: 13,
        ..Default::default()
    }
}

fn criterion_6() -> Outcome {
    let started = Instant::now();
    let data = generate(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    let mut maps = Vec::new();
    for mode in [EncoderMode::CnnPlusMention, EncoderMode::MentionOnly] {
        let out = train(
            &data.hierarchy,
            &data.train,
            &data.dev,
            &data.embeddings,
            &synthetic_config(mode),
        )
        .map_err(|e| e.to_string())?;
        let best = out.history[out.best_epoch - 1].dev_map;
        maps.push((best, out.best_epoch, out.history.len()));
    }
    let elapsed = started.elapsed();
    let (cnn, mention) = (maps[0], maps[1]);
    let detail =
        format!(
        "CNN+Bilinear dev MAP {:.4} (epoch {} of {}), Mention-only {:.4} (epoch {} of {}), {:.1}s",
        cnn.0, cnn.1, cnn.2, mention.0, mention.1, mention.2,
        elapsed.as_secs_f64()
    );
    ensure(cnn.0 >= 0.95, || format!("CNN below 0.95: {detail}"))?;
    ensure(mention.0 >= 0.80, || {
        format!("Mention-only below 0.80: {detail}")
    })?;
    ensure(cnn.0 > mention.0, || {
        format!("CNN not above Mention-only: {detail}")
    })?;
    ensure(elapsed < Duration::from_secs(300), || {
        format!("too slow: {detail}")
    })?;
    Ok(detail)
}

fn criterion_7() -> Outcome {
    let margin = 1.0;
    let data = generate(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    let h = &data.hierarchy;
    let steps = 2000;
    let fit = fit_structure(
        h,
        &StructureFitConfig {
            kind: ScoreKind::Order { margin },
            dim: 16,
            steps,
            batch_size: None,
            learning_rate: 0.01,
            seed: 13,
        },
    )
    .map_err(|e| e.to_string())?;
    let energy = |c: TypeId, p: TypeId| order_energy(fit.types.row(c.0), fit.types.row(p.0));
    let mut worst_ancestor = 0.0f64;
    let (mut separated, mut negatives) = (0usize, 0usize);
    for t in h.types() {
        let anc = h.ancestors(t).map_err(|e| e.to_string())?;
        for u in h.types().filter(|&u| u != t) {
            if anc.contains(&u) {
                worst_ancestor = worst_ancestor.max(energy(t, u));
            } else {
                negatives += 1;
                if energy(t, u) >= margin / 2.0 {
                    separated += 1;
                }
            }
        }
    }
    let fraction = separated as f64 / negatives as f64;
    let detail = format!(
        "{steps} steps: max ancestor energy {worst_ancestor:.2e}, {separated}/{negatives} non-ancestor pairs ({:.1}%) at >= alpha/2, final loss {:.3e}",
        100.0 * fraction,
        fit.losses.last().copied().unwrap_or(f64::NAN)
    );
    ensure(worst_ancestor <= 0.01, || detail.clone())?;
    ensure(fraction >= 0.9, || detail.clone())?;
    Ok(detail)
}

fn criterion_8() -> Outcome {
    let run = || -> Result<(Vec<u8>, Vec<u8>), String> {
        let data = generate(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
        let config = synthetic_config(EncoderMode::CnnPlusMention);
        let out = train(
            &data.hierarchy,
            &data.train,
            &data.dev,
            &data.embeddings,
            &config,
        )
        .map_err(|e| e.to_string())?;
        let mut history = Vec::new();
        write_history(&mut history, &out.history).map_err(|e| e.to_string())?;
        Ok((out.model.to_bytes(), history))
    };
    let (ckpt_a, hist_a) = run()?;
    let (ckpt_b, hist_b) = run()?;
    ensure(ckpt_a == ckpt_b, || "checkpoints differ".into())?;
    ensure(hist_a == hist_b, || "histories differ".into())?;
    Ok(format!(
        "two seed-13 runs: {}-byte checkpoints and {}-byte histories identical",
        ckpt_a.len(),
        hist_a.len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradient correctness", criterion_1),
        ("forward oracles", criterion_2),
        ("hierarchy properties", criterion_3),
        ("co-occurrence derivation", criterion_4),
        ("MAP oracle", criterion_5),
        ("end-to-end synthetic learning", criterion_6),
        ("structure-loss geometry", criterion_7),
        ("determinism", criterion_8),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let label = format!("{} {}", i + 1, name);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS  criterion {label}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {label}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
