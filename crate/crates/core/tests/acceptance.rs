//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! A criterion that cannot run because external data is missing is reported
//! as `FAIL (blocked)`; it does not change the exit status unless
//! `PASTE_STRICT_ACCEPTANCE=1`. Any other failure exits nonzero.

#![allow(clippy::type_complexity, clippy::needless_range_loop)]

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::Array2;
use paste_core::corpus::{
    build_vocab, compute_statistics, import_file, load_split, AnnotatedSentence, DataFormat, DatasetName,
    EmbeddingTable, EncodedSentence, Split, Vocabulary,
};
use paste_core::inference::{decode_triplets, evaluate, score_elements, score_exact_match, select_spans, Prf};
use paste_core::model::{DecoderStepOutput, ModelConfig, PasteModel};
use paste_core::runs::{run_seeds, MedianPrf};
use paste_core::tape::Graph;
use paste_core::training::{
    build_target_sequence, compute_loss, default_max_steps, gradient_check, sentence_objective, train,
    EpochControl, TrainConfig,
};
use paste_core::triplet::{GenerationDirection, OpinionTriplet, SentimentLabel, Span};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances and limits.
const C1_OVERLAP_PCT: f64 = 27.68;
const C1_OVERLAP_TOL_PP: f64 = 0.01;
const C1_LIMIT: Duration = Duration::from_secs(10);
const C2_INSTANCES: usize = 1000;
const C2_SCORE_TOL: f64 = 1e-9;
const C2_LIMIT: Duration = Duration::from_secs(30);
const C3_STEP: f64 = 1e-5;
const C3_MAX_REL: f64 = 1e-4;
const C3_LIMIT: Duration = Duration::from_secs(300);
const C4_DRAWS: usize = 100;
const C4_SUM_TOL: f64 = 1e-5;
const C4_ATTENTION_TOL: f64 = 1e-6;
const C4_SYMMETRY_TOL: f64 = 1e-12;
const C4_LIMIT: Duration = Duration::from_secs(60);
const C5_MAX_EPOCHS: usize = 300;
const C5_LIMIT: Duration = Duration::from_secs(600);
const C7_TARGETS: [(DatasetName, f64); 2] = [(DatasetName::Lap14, 0.510), (DatasetName::RestAll, 0.704)];
const C7_TOL: f64 = 0.03;

enum Status {
    Pass,
    Fail,
    Blocked,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: Status::Pass,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: Status::Fail,
        detail: detail.into(),
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn toy_corpus() -> Vec<AnnotatedSentence> {
    import_file(&fixture("toy_train.jsonl"), DataFormat::Canonical).expect("toy fixture")
}

fn data_dir() -> PathBuf {
    std::env::var_os("PASTE_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn tiny_model(direction: GenerationDirection, vocab: &Vocabulary, seed: u64) -> PasteModel<f64> {
    let config = ModelConfig {
        direction,
        ..ModelConfig::tiny()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = vocab.word_embedding_init(None, config.d_w, &mut rng).unwrap();
    PasteModel::<f32>::initialize(config, vocab, init, &mut rng).unwrap().cast()
}

// C1 ------------------------------------------------------------------------

struct Expected {
    dataset: DatasetName,
    /// (pos, neg, neu) for train, dev, test.
    polarity: [(usize, usize, usize); 3],
}

const TABLE_POLARITY: [Expected; 5] = [
    Expected {
        dataset: DatasetName::Lap14,
        polarity: [(817, 517, 126), (169, 141, 36), (364, 116, 63)],
    },
    Expected {
        dataset: DatasetName::Rest14,
        polarity: [(1692, 480, 166), (404, 119, 54), (773, 155, 66)],
    },
    Expected {
        dataset: DatasetName::Rest15,
        polarity: [(783, 205, 25), (185, 53, 11), (317, 143, 25)],
    },
    Expected {
        dataset: DatasetName::Rest16,
        polarity: [(1015, 329, 50), (252, 76, 11), (407, 78, 29)],
    },
    Expected {
        dataset: DatasetName::RestAll,
        polarity: [(3490, 1014, 241), (841, 248, 76), (1497, 376, 120)],
    },
];

/// (single, multi, multipol, overlap, sentences) for train, dev, test, total.
const TABLE_CATEGORIES: [(DatasetName, [(usize, usize, usize, usize, usize); 4]); 2] = [
    (
        DatasetName::Lap14,
        [
            (545, 361, 47, 257, 906),
            (133, 86, 10, 59, 219),
            (184, 144, 18, 97, 328),
            (862, 591, 75, 413, 1453),
        ],
    ),
    (
        DatasetName::RestAll,
        [
            (1447, 1281, 205, 731, 2728),
            (347, 321, 45, 197, 668),
            (608, 532, 71, 317, 1140),
            (2402, 2134, 321, 1245, 4536),
        ],
    ),
];

fn c1_dataset_fidelity() -> Outcome {
    let dir = data_dir();
    let start = Instant::now();
    let mut mismatches = Vec::new();
    let mut reports = Vec::new();
    for exp in &TABLE_POLARITY {
        let mut parts = Vec::new();
        for split in Split::ALL {
            match load_split(&dir, exp.dataset, split) {
                Ok(s) => parts.push((split, s)),
                Err(e) => {
                    return Outcome {
                        status: Status::Blocked,
                        detail: format!("published dataset unavailable under {}: {e}", dir.display()),
                    }
                }
            }
        }
        let view: Vec<(Split, &[AnnotatedSentence])> = parts.iter().map(|(s, v)| (*s, v.as_slice())).collect();
        let report = compute_statistics(exp.dataset.name(), &view);
        for (i, split) in Split::ALL.iter().enumerate() {
            let st = report.split(*split).unwrap();
            if (st.pos, st.neg, st.neu) != exp.polarity[i] {
                mismatches.push(format!(
                    "{} {}: got {:?}, expected {:?}",
                    exp.dataset,
                    split.name(),
                    (st.pos, st.neg, st.neu),
                    exp.polarity[i]
                ));
            }
        }
        reports.push((exp.dataset, report));
    }
    for (dataset, rows) in &TABLE_CATEGORIES {
        let report = &reports.iter().find(|(d, _)| d == dataset).unwrap().1;
        let mut got: Vec<_> = Split::ALL.iter().map(|s| *report.split(*s).unwrap()).collect();
        got.push(report.total);
        for (g, e) in got.iter().zip(rows) {
            let g = (g.single, g.multi, g.multipol, g.overlap, g.sentences);
            if g != *e {
                mismatches.push(format!("{dataset} categories: got {g:?}, expected {e:?}"));
            }
        }
    }
    let (overlap, sentences) = TABLE_CATEGORIES.iter().fold((0, 0), |(o, s), (d, _)| {
        let t = reports.iter().find(|(x, _)| x == d).unwrap().1.total;
        (o + t.overlap, s + t.sentences)
    });
    let pct = 100.0 * overlap as f64 / sentences as f64;
    if (pct - C1_OVERLAP_PCT).abs() > C1_OVERLAP_TOL_PP {
        mismatches.push(format!("overlap fraction {pct:.4}%"));
    }
    let elapsed = start.elapsed();
    if elapsed > C1_LIMIT {
        mismatches.push(format!("took {elapsed:?}"));
    }
    check(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("all table cells match; overlap {pct:.2}%")
        } else {
            mismatches.join("; ")
        },
    )
}

// C2 ------------------------------------------------------------------------

/// Exhaustive reference: list every admissible span with its score and take
/// the best by (score desc, start asc, end asc).
fn reference_select(s_ap: &[f64], e_ap: &[f64], s_op: &[f64], e_op: &[f64]) -> (Span, Span, f64) {
    let n = s_ap.len();
    let pick = |s: &[f64], e: &[f64], ok: &dyn Fn(usize, usize) -> bool| -> (Span, f64) {
        let mut cands = Vec::new();
        for j in 0..n {
            for k in j..n {
                if ok(j, k) {
                    cands.push((j, k, s[j] * e[k]));
                }
            }
        }
        cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let (j, k, p) = cands[0];
        (Span::new(j, k), p)
    };
    let proper = |j: usize, k: usize| !(j == 0 && k == n - 1);
    let (a1, pa1) = pick(s_ap, e_ap, &proper);
    let (o1, po1) = pick(s_op, e_op, &|j, k| k < a1.start || j > a1.end);
    let (o2, po2) = pick(s_op, e_op, &proper);
    let (a2, pa2) = pick(s_ap, e_ap, &|j, k| k < o2.start || j > o2.end);
    let (phase_a, phase_b) = (pa1 * po1, po2 * pa2);
    if phase_b > phase_a {
        (a2, o2, phase_b)
    } else {
        (a1, o1, phase_a)
    }
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize, coarse: bool) -> Vec<f64> {
    let raw: Vec<f64> = (0..n)
        .map(|_| {
            if coarse {
                rng.gen_range(1..=3) as f64
            } else {
                rng.gen::<f64>().powi(4) + 1e-9
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

fn c2_select_spans_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for i in 0..C2_INSTANCES {
        let n = rng.gen_range(2..=20);
        // Every third instance uses coarse values so that ties occur.
        let coarse = i % 3 == 0;
        let d: Vec<Vec<f64>> = (0..4).map(|_| random_distribution(&mut rng, n, coarse)).collect();
        let got = select_spans(&d[0], &d[1], &d[2], &d[3]).unwrap();
        let (a, o, score) = reference_select(&d[0], &d[1], &d[2], &d[3]);
        if got.aspect != a || got.opinion != o {
            return fail(format!(
                "instance {i} (n={n}): got {:?}/{:?}, reference {a:?}/{o:?}",
                got.aspect, got.opinion
            ));
        }
        if got.aspect.overlaps(&got.opinion) {
            return fail(format!("instance {i}: overlapping spans"));
        }
        worst = worst.max((got.score - score).abs());
    }
    let elapsed = start.elapsed();
    check(
        worst <= C2_SCORE_TOL && elapsed < C2_LIMIT,
        format!("{C2_INSTANCES} instances, spans identical, max score diff {worst:.1e}, {elapsed:.2?}"),
    )
}

// C3 ------------------------------------------------------------------------

fn c3_gradient_check() -> Outcome {
    let start = Instant::now();
    let mut corpus = toy_corpus();
    corpus.extend(import_file(&fixture("gradcheck.jsonl"), DataFormat::Canonical).expect("gradcheck fixture"));
    let vocab = build_vocab(&corpus).unwrap();
    let samples: Vec<&AnnotatedSentence> = corpus.iter().filter(|s| s.len() <= 6 && s.gold.len() <= 2).collect();
    let multi = samples.iter().filter(|s| s.gold.len() == 2).count();
    if samples.is_empty() || multi == 0 {
        return fail("fixture lacks short sentences with two triplets");
    }
    let mut worst = (0.0f64, String::new());
    let mut worst_tensor = 0.0f64;
    let mut checked = 0;
    for (k, dir) in [GenerationDirection::AspectFirst, GenerationDirection::OpinionFirst]
        .into_iter()
        .enumerate()
    {
        for (i, s) in samples.iter().enumerate() {
            let model = tiny_model(dir, &vocab, 100 * k as u64 + i as u64);
            let r = gradient_check(&model, &vocab.encode(s).unwrap(), &s.gold, C3_STEP).unwrap();
            checked += r.checked;
            worst_tensor = worst_tensor.max(r.max_tensor_relative_error);
            if r.max_relative_error > worst.0 {
                let name = r.per_tensor.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0.clone();
                worst = (r.max_relative_error, format!("{} n={} {name}", dir.short_name(), s.len()));
            }
        }
    }
    // The all-zero model: gradients finite and matching.
    let mut zero = tiny_model(GenerationDirection::AspectFirst, &vocab, 7);
    zero.params.map_all(|t| t.fill(0.0));
    let s = samples[0];
    let zr = gradient_check(&zero, &vocab.encode(s).unwrap(), &s.gold, C3_STEP).unwrap();
    let zero_ok = zr.max_relative_error.is_finite() && zr.max_relative_error < C3_MAX_REL;
    // Sign consistency: nudging the weight with the largest gradient along
    // the negative gradient lowers the loss.
    let model = tiny_model(GenerationDirection::AspectFirst, &vocab, 11);
    let enc = vocab.encode(s).unwrap();
    let targets = build_target_sequence(&s.gold, model.config.direction, s.gold.len() + 1).unwrap();
    let scale = 1.0 / targets.len() as f64;
    let (base, grads) = sentence_objective(&model, &enc, &targets, scale, None).unwrap();
    let (id, r, c, g) = model
        .params
        .ids()
        .flat_map(|id| {
            let d = grads.dense(id, model.params.get(id).dim());
            d.indexed_iter().map(move |((r, c), &g)| (id, r, c, g)).collect::<Vec<_>>()
        })
        .max_by(|a, b| a.3.abs().total_cmp(&b.3.abs()))
        .unwrap();
    let mut nudged = model.clone();
    nudged.params.get_mut(id)[[r, c]] -= C3_STEP * g.signum();
    let (after, _) = sentence_objective(&nudged, &enc, &targets, scale, None).unwrap();
    let sign_ok = after < base;
    let elapsed = start.elapsed();
    check(
        worst.0 < C3_MAX_REL && worst_tensor < C3_MAX_REL && zero_ok && sign_ok && elapsed < C3_LIMIT,
        format!(
            "{checked} elements, max rel err {:.2e} ({}), max tensor rel err {worst_tensor:.2e}, zero-model err {:.2e}, sign check {}, {elapsed:.1?}",
            worst.0, worst.1, zr.max_relative_error, if sign_ok { "ok" } else { "FAILED" }
        ),
    )
}

// C4 ------------------------------------------------------------------------

fn sums_to_one(v: &[f64]) -> f64 {
    (v.iter().sum::<f64>() - 1.0).abs()
}

fn step_distributions(o: &DecoderStepOutput<f64>) -> [&[f64]; 5] {
    [&o.aspect_start, &o.aspect_end, &o.opinion_start, &o.opinion_end, &o.sentiment]
}

fn random_sentence(rng: &mut ChaCha8Rng, vocab: &Vocabulary, n: usize) -> EncodedSentence {
    EncodedSentence {
        words: (0..n).map(|_| rng.gen_range(0..vocab.word_count())).collect(),
        pos: (0..n).map(|_| rng.gen_range(0..vocab.pos_count())).collect(),
        dep: (0..n).map(|_| rng.gen_range(0..vocab.dep_count())).collect(),
    }
}

/// Direct transcription of the attention equations with plain loops.
fn scalar_attention(model: &PasteModel<f64>, h_e: &Array2<f64>, h_prev: &[f64], tup_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = |name: &str| model.params.by_name(name).unwrap().clone();
    let (w_tup, b_tup, w_u) = (p("attention.w_tup"), p("attention.b_tup"), p("attention.w_u"));
    let (w_qt, b_qt, w_q, b_q) = (p("attention.w_qt"), p("attention.b_qt"), p("attention.w_q"), p("attention.b_q"));
    let (v_at, v_a) = (p("attention.v_at"), p("attention.v_a"));
    let dh = w_u.nrows();
    let n = h_e.nrows();
    let affine = |w: &Array2<f64>, b: Option<&Array2<f64>>, x: &[f64]| -> Vec<f64> {
        (0..w.nrows())
            .map(|r| (0..x.len()).map(|c| w[[r, c]] * x[c]).sum::<f64>() + b.map_or(0.0, |b| b[[0, r]]))
            .collect()
    };
    let tup = affine(&w_tup, Some(&b_tup), tup_prev);
    let q_t = affine(&w_qt, Some(&b_qt), &tup);
    let q = affine(&w_q, Some(&b_q), h_prev);
    let mut a_t = vec![0.0; n];
    let mut a = vec![0.0; n];
    for i in 0..n {
        let h_i: Vec<f64> = h_e.row(i).to_vec();
        let u = affine(&w_u, None, &h_i);
        for d in 0..dh {
            a_t[i] += v_at[[0, d]] * (q_t[d] + u[d]).tanh();
            a[i] += v_a[[0, d]] * (q[d] + u[d]).tanh();
        }
    }
    let softmax = |v: &[f64]| {
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let (alpha_t, alpha) = (softmax(&a_t), softmax(&a));
    let weights: Vec<f64> = (0..n).map(|i| (alpha_t[i] + alpha[i]) / 2.0).collect();
    let context = (0..dh).map(|d| (0..n).map(|i| weights[i] * h_e[[i, d]]).sum()).collect();
    (weights, context)
}

fn c4_normalization_and_shapes() -> Outcome {
    let start = Instant::now();
    let corpus = toy_corpus();
    let vocab = build_vocab(&corpus).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_sum, mut worst_att, mut worst_sym) = (0.0f64, 0.0f64, 0.0f64);
    let mut problems = Vec::new();
    for draw in 0..C4_DRAWS {
        let dir = if draw % 2 == 0 {
            GenerationDirection::AspectFirst
        } else {
            GenerationDirection::OpinionFirst
        };
        let model = tiny_model(dir, &vocab, 1000 + draw as u64);
        let n = rng.gen_range(1..=8);
        let sentence = random_sentence(&mut rng, &vocab, n);
        let cfg = &model.config;
        // Production precision for the normalization sums.
        let single: Vec<DecoderStepOutput<f64>> = model
            .cast::<f32>()
            .forward_values(&sentence, 3)
            .unwrap()
            .into_iter()
            .map(|o| DecoderStepOutput {
                aspect_start: o.aspect_start.iter().map(|&x| x as f64).collect(),
                aspect_end: o.aspect_end.iter().map(|&x| x as f64).collect(),
                opinion_start: o.opinion_start.iter().map(|&x| x as f64).collect(),
                opinion_end: o.opinion_end.iter().map(|&x| x as f64).collect(),
                sentiment: o.sentiment.iter().map(|&x| x as f64).collect(),
                ..Default::default()
            })
            .collect();
        for o in &single {
            for d in step_distributions(o) {
                worst_sum = worst_sum.max(sums_to_one(d));
            }
        }
        let out = model.forward_values(&sentence, 3).unwrap();
        for o in &out {
            let shapes = (o.aspect_vector.len(), o.opinion_vector.len(), o.tuple.len(), o.hidden.len());
            if shapes != (2 * cfg.d_p, 2 * cfg.d_p, 4 * cfg.d_p, cfg.d_h) {
                problems.push(format!("draw {draw}: shapes {shapes:?}"));
            }
            let concat: Vec<f64> = o.aspect_vector.iter().chain(&o.opinion_vector).copied().collect();
            if concat != o.tuple {
                problems.push(format!("draw {draw}: tuple is not aspect ; opinion"));
            }
        }
        // tup_prev accumulation: 0, t1, (0 + t1) + t2, summed in step order.
        let mut running = vec![0.0f64; 4 * cfg.d_p];
        for (t, o) in out.iter().enumerate() {
            if o.tuple_prev != running {
                problems.push(format!("draw {draw}: tup_prev mismatch at step {}", t + 1));
            }
            running = running.iter().zip(&o.tuple).map(|(a, b)| a + b).collect();
        }
        // Attention against the scalar transcription.
        let net = model.network();
        let mut g = Graph::new(&model.params);
        let h_e = net.encode_sentence(&mut g, &sentence, None::<&mut ChaCha8Rng>).unwrap();
        let h_prev: Vec<f64> = (0..cfg.d_h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tup_prev: Vec<f64> = (0..4 * cfg.d_p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hp = g.constant(Array2::from_shape_vec((1, cfg.d_h), h_prev.clone()).unwrap());
        let tp = g.constant(Array2::from_shape_vec((1, 4 * cfg.d_p), tup_prev.clone()).unwrap());
        let att = net.attention_step(&mut g, h_e, hp, tp).unwrap();
        let (w_ref, c_ref) = scalar_attention(&model, g.value(h_e), &h_prev, &tup_prev);
        let w_got: Vec<f64> = g.value(att.weights).iter().copied().collect();
        let c_got: Vec<f64> = g.value(att.context).iter().copied().collect();
        worst_sum = worst_sum.max(sums_to_one(&w_got));
        for (a, b) in w_got.iter().zip(&w_ref).chain(c_got.iter().zip(&c_ref)) {
            worst_att = worst_att.max((a - b).abs());
        }
        // Direction symmetry under the weight swap.
        let mirrored = model.mirror_direction();
        let other = mirrored.forward_values(&sentence, 3).unwrap();
        for (a, b) in out.iter().zip(&other) {
            let fa = a.by_generation_order(model.config.direction);
            let fb = b.by_generation_order(mirrored.config.direction);
            let pairs = [
                (fa[0].0, fb[0].0),
                (fa[0].1, fb[0].1),
                (fa[1].0, fb[1].0),
                (fa[1].1, fb[1].1),
                (&a.sentiment[..], &b.sentiment[..]),
            ];
            for (x, y) in pairs {
                for (p, q) in x.iter().zip(y) {
                    worst_sym = worst_sym.max((p - q).abs());
                }
            }
        }
    }
    // Zero-parameter fixpoint.
    let mut zero = tiny_model(GenerationDirection::AspectFirst, &vocab, 3);
    zero.params.map_all(|t| t.fill(0.0));
    let sentence = random_sentence(&mut rng, &vocab, 5);
    let mut g = Graph::new(&zero.params);
    let h_e = zero
        .network()
        .encode_sentence(&mut g, &sentence, None::<&mut ChaCha8Rng>)
        .unwrap();
    let encoder_zero = g.value(h_e).iter().all(|&x| x == 0.0);
    let zero_ok = zero.forward_values(&sentence, 3).unwrap().iter().all(|o| {
        o.hidden.iter().all(|&x| x == 0.0)
            && [&o.aspect_start, &o.aspect_end, &o.opinion_start, &o.opinion_end]
                .iter()
                .all(|d| d.iter().all(|&x| x == 0.2))
            && o.sentiment.iter().all(|&x| x == 0.25)
    });
    if !(encoder_zero && zero_ok) {
        problems.push("zero-parameter fixpoint violated".into());
    }
    let elapsed = start.elapsed();
    let ok = problems.is_empty()
        && worst_sum <= C4_SUM_TOL
        && worst_att <= C4_ATTENTION_TOL
        && worst_sym <= C4_SYMMETRY_TOL
        && elapsed < C4_LIMIT;
    let mut detail = format!(
        "{C4_DRAWS} draws: max |sum-1| {worst_sum:.1e}, attention vs scalar {worst_att:.1e}, AF/OF swap {worst_sym:.1e}, tup_prev exact, zero fixpoint uniform, {elapsed:.2?}"
    );
    if !problems.is_empty() {
        detail = format!("{}; {detail}", problems[..problems.len().min(3)].join("; "));
    }
    check(ok, detail)
}

// C5 ------------------------------------------------------------------------

fn c5_overfitting() -> Outcome {
    let start = Instant::now();
    let corpus = toy_corpus();
    let overlap = corpus.iter().filter(|s| s.flags.is_overlap).count();
    if corpus.len() != 20 || overlap < 3 {
        return fail(format!("fixture has {} sentences, {overlap} overlap", corpus.len()));
    }
    let model_config = ModelConfig {
        d_w: 8,
        d_pos: 8,
        d_dep: 8,
        d_h: 8,
        d_p: 8,
        dropout: 0.0,
        direction: GenerationDirection::AspectFirst,
        max_steps: default_max_steps(&corpus),
    };
    let train_config = TrainConfig {
        learning_rate: 1e-2,
        weight_decay: 0.0,
        epochs: C5_MAX_EPOCHS,
        batch_size: 10,
        seed: 13,
        runs: 1,
        random_order: false,
    };
    let mut reached = None;
    let outcome = train(&corpus, &corpus, &model_config, &train_config, None, |log, _| {
        if log.dev_f1 == 1.0 {
            reached = Some(log.epoch);
            return Ok(EpochControl::Stop);
        }
        Ok(EpochControl::Continue)
    })
    .unwrap();
    let (report, _) = evaluate(&outcome.model, &outcome.vocab, &corpus, model_config.max_steps).unwrap();
    let worked = &corpus[0];
    let mut decoded = decode_triplets(
        &outcome.model,
        &outcome.vocab.encode(worked).unwrap(),
        model_config.max_steps,
    )
    .unwrap();
    decoded.sort();
    let expected = vec![
        OpinionTriplet::new(0, 0, 2, 2, SentimentLabel::Pos),
        OpinionTriplet::new(6, 7, 11, 11, SentimentLabel::Neg),
        OpinionTriplet::new(9, 9, 11, 11, SentimentLabel::Neg),
    ];
    let elapsed = start.elapsed();
    check(
        reached.is_some() && report.overall.f1 == 1.0 && decoded == expected && elapsed < C5_LIMIT,
        format!(
            "F1 {:.3} reached at epoch {:?} ({overlap} overlap sentences); worked sentence decodes to {:?}; {elapsed:.1?}",
            report.overall.f1,
            reached,
            decoded.iter().map(OpinionTriplet::as_tuple).collect::<Vec<_>>()
        ),
    )
}

// C6 ------------------------------------------------------------------------

fn c6_scorers() -> Outcome {
    use SentimentLabel::*;
    let t = OpinionTriplet::new;
    let (g1, g2) = (t(0, 0, 2, 2, Pos), t(4, 5, 7, 7, Neg));
    let gold = vec![vec![g1, g2]];
    let mut problems = Vec::new();
    let expect = |name: &str, got: Prf, p: f64, r: f64, f: f64, problems: &mut Vec<String>| {
        if (got.precision, got.recall, got.f1) != (p, r, f) {
            problems.push(format!("{name}: got {:?}", (got.precision, got.recall, got.f1)));
        }
    };
    let spurious = score_exact_match(&[vec![g1, g2, t(1, 1, 3, 3, Neu)]], &gold).unwrap();
    expect("2/3 case", spurious, 2.0 / 3.0, 1.0, 0.8, &mut problems);
    let all = score_exact_match(&gold, &gold).unwrap();
    expect("all-correct", all, 1.0, 1.0, 1.0, &mut problems);
    let flipped = vec![vec![t(0, 0, 2, 2, Neg), g2]];
    let f = score_exact_match(&flipped, &gold).unwrap();
    expect("sentiment flip", f, 0.5, 0.5, 0.5, &mut problems);
    let e_all = score_elements(&gold, &gold).unwrap();
    if (e_all.aspect.f1, e_all.opinion.f1, e_all.sentiment_accuracy) != (1.0, 1.0, 1.0) {
        problems.push("elements all-correct".into());
    }
    let e_flip = score_elements(&flipped, &gold).unwrap();
    if (e_flip.aspect.f1, e_flip.opinion.f1, e_flip.sentiment_accuracy) != (1.0, 1.0, 0.5) {
        problems.push(format!("elements flip: {e_flip:?}"));
    }
    let e_half = score_elements(&[vec![g1]], &gold).unwrap();
    if (e_half.aspect.recall, e_half.aspect.precision) != (0.5, 1.0) {
        problems.push("elements half recall".into());
    }
    let e_spur = score_elements(&[vec![g1, g2, t(1, 1, 3, 3, Neu)]], &gold).unwrap();
    if (e_spur.aspect.precision, e_spur.aspect.recall) != (2.0 / 3.0, 1.0) {
        problems.push("elements spurious".into());
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "P=2/3 R=1 F1=0.8; all-correct 1/1/1; flip TP=0 for that tuple; element scores exact".into()
        } else {
            problems.join("; ")
        },
    )
}

// C7 ------------------------------------------------------------------------

fn c7_full_scale() -> Outcome {
    if std::env::var("PASTE_FULL_REPRO").ok().as_deref() != Some("1") {
        return Outcome {
            status: Status::Skip,
            detail: "resource-dependent, not a desk-scale gate; set PASTE_FULL_REPRO=1 with PASTE_DATA_DIR and PASTE_GLOVE".into(),
        };
    }
    let dir = data_dir();
    let glove = match std::env::var_os("PASTE_GLOVE") {
        Some(p) => match EmbeddingTable::load(Path::new(&p), None) {
            Ok(t) => Some(t),
            Err(e) => return fail(format!("cannot load embeddings: {e}")),
        },
        None => return fail("PASTE_GLOVE is not set"),
    };
    let mut lines = Vec::new();
    let mut ok = true;
    for (dataset, target) in C7_TARGETS {
        let load = |s| load_split(&dir, dataset, s);
        let (tr, dv, te) = match (load(Split::Train), load(Split::Dev), load(Split::Test)) {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            _ => {
                return Outcome {
                    status: Status::Blocked,
                    detail: format!("{dataset} unavailable under {}", dir.display()),
                }
            }
        };
        let model_config = ModelConfig {
            max_steps: default_max_steps(&tr),
            ..ModelConfig::default()
        };
        let mut test = Vec::new();
        for seed in run_seeds(5, None) {
            let cfg = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            let out = match train(&tr, &dv, &model_config, &cfg, glove.as_ref(), |_, _| Ok(EpochControl::Continue)) {
                Ok(o) => o,
                Err(e) => return fail(format!("{dataset}: {e}")),
            };
            let (report, _) = evaluate(&out.model, &out.vocab, &te, model_config.max_steps).unwrap();
            test.push(report.overall);
        }
        let med = MedianPrf::of(&test).unwrap().f1;
        ok &= (med - target).abs() <= C7_TOL;
        lines.push(format!("{dataset} median F1 {med:.3} (target {target:.3})"));
    }
    check(ok, lines.join("; "))
}

// C8 ------------------------------------------------------------------------

fn c8_masking() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut changed_live = 0;
    let trials = 200;
    for trial in 0..trials {
        let n = rng.gen_range(4..=10);
        let gold = vec![OpinionTriplet::new(0, 0, n - 1, n - 1, SentimentLabel::Pos)];
        let j = rng.gen_range(2..=5);
        let targets = build_target_sequence(&gold, GenerationDirection::AspectFirst, j).unwrap();
        let mut outputs: Vec<DecoderStepOutput<f64>> = (0..j)
            .map(|_| DecoderStepOutput {
                aspect_start: random_distribution(&mut rng, n, false),
                aspect_end: random_distribution(&mut rng, n, false),
                opinion_start: random_distribution(&mut rng, n, false),
                opinion_end: random_distribution(&mut rng, n, false),
                sentiment: random_distribution(&mut rng, 4, false),
                ..Default::default()
            })
            .collect();
        let base = compute_loss(&[(&outputs[..], &targets[..])]).unwrap();
        let mut perturbed = outputs.clone();
        for (t, o) in perturbed.iter_mut().enumerate() {
            if !targets[t].pointer_loss_mask {
                o.aspect_start = random_distribution(&mut rng, n, false);
                o.aspect_end = random_distribution(&mut rng, n, false);
                o.opinion_start = random_distribution(&mut rng, n, false);
                o.opinion_end = random_distribution(&mut rng, n, false);
            }
            // Past the first NONE nothing counts, sentiment included.
            if t > 1 {
                o.sentiment = random_distribution(&mut rng, 4, false);
            }
        }
        let after = compute_loss(&[(&perturbed[..], &targets[..])]).unwrap();
        if after != base {
            return fail(format!("trial {trial}: loss moved by {:e}", after - base));
        }
        // Control: the live step does move the loss.
        outputs[0].aspect_start = random_distribution(&mut rng, n, false);
        if compute_loss(&[(&outputs[..], &targets[..])]).unwrap() != base {
            changed_live += 1;
        }
    }
    check(
        changed_live == trials,
        format!("{trials} trials: masked-step perturbations change the loss by exactly 0; live-step control moved it in {changed_live}/{trials}"),
    )
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 8] = [
        ("C1", "dataset fidelity", c1_dataset_fidelity),
        ("C2", "inference oracle equivalence", c2_select_spans_oracle),
        ("C3", "gradient correctness", c3_gradient_check),
        ("C4", "normalization and shape suite", c4_normalization_and_shapes),
        ("C5", "overfitting oracle", c5_overfitting),
        ("C6", "scorer correctness", c6_scorers),
        ("C7", "full-scale reproduction", c7_full_scale),
        ("C8", "masking invariance", c8_masking),
    ];
    let strict = std::env::var("PASTE_STRICT_ACCEPTANCE").ok().as_deref() == Some("1");
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut failed, mut blocked) = (0, 0);
    for (id, name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            fail(format!("panicked: {msg}"))
        });
        let label = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Blocked => {
                blocked += 1;
                "FAIL (blocked)"
            }
            Status::Skip => "SKIP",
        };
        println!("{id} {name}: {label} [{:.1?}] {}", start.elapsed(), outcome.detail);
    }
    println!("acceptance: {failed} failed, {blocked} blocked by missing external data");
    if failed > 0 || (strict && blocked > 0) {
        std::process::exit(1);
    }
}
