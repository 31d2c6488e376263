//! Acceptance suite: every criterion runs at its stated tolerance and
//! prints one pass/fail line (`cargo test --test acceptance -- --nocapture`
//! shows them on success).

mod common;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ontoppa_core::attachment::{Mode, Model, PPAInstance};
use ontoppa_core::datagen::{gen_dataset, gen_ontology, SyntheticSpec};
use ontoppa_core::embedding::{
    attention_weights, embed_token, sense_prior_weights, AttentionVars, EmbedMode, ResolvedGrid,
};
use ontoppa_core::encoder::ContextVariant;
use ontoppa_core::ndmath::{ParameterStore, Tape, Tensor};
use ontoppa_core::ontology::{derive_paths, GroundingTable, Pos};
use ontoppa_core::training::{
    evaluate, learning_curve, load_checkpoint, model_gradcheck, save_checkpoint, train, CurveCell,
    TrainConfig,
};
use rand::RngExt;

fn report(criterion: u32, name: &str) {
    println!("criterion {criterion} ({name}): PASS");
}

// ---- criterion 1 ----------------------------------------------------------

#[test]
fn acceptance_01_gradient_integrity() {
    let started = Instant::now();
    for mode in [Mode::Full, Mode::NoPrior, Mode::NoAttention] {
        for context in [ContextVariant::PrevHidden, ContextVariant::PrevInput] {
            let (groups, max) = model_gradcheck::<f64>(mode, context, 1e-5).unwrap();
            for expected in ["concepts", "lambda", "attn.f", "attn.b", "lstm.f", "lstm.b", "attach"]
            {
                assert!(
                    groups.iter().any(|g| g.group == expected),
                    "{mode}/{context}: missing group {expected}"
                );
            }
            assert!(
                max < 1e-4,
                "{mode}/{context}: max relative error {max:.3e} >= 1e-4"
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "gradcheck took {elapsed:?}");
    report(1, "gradient integrity");
}

// ---- criterion 2 ----------------------------------------------------------

#[test]
fn acceptance_02_distribution_invariants() {
    let started = Instant::now();
    let n = 5;
    let concept_rows = 9;
    let mut rng = common::rng(0xd157);
    for draw in 0..1000 {
        let mut store = ParameterStore::<f64>::new(draw);
        let mut prng = store.rng(1);
        store.define_uniform("concepts", vec![concept_rows, n], -1.0, 1.0, &mut prng).unwrap();
        AttentionVars::define(&mut store, "attn", n + 3, 4, &mut prng).unwrap();
        store.randomize_all(-1.0, 1.0, draw.wrapping_add(17));

        // Random grid: random row lengths, at least one unmasked cell.
        let s_max = rng.random_range(1..=3usize);
        let h_max = rng.random_range(1..=5usize);
        let mut rows = vec![0usize; s_max * h_max];
        let mut mask = vec![false; s_max * h_max];
        loop {
            for r in 0..s_max {
                let len = rng.random_range(0..=h_max);
                for j in 0..h_max {
                    let cell = r * h_max + j;
                    mask[cell] = j < len;
                    rows[cell] = if mask[cell] { rng.random_range(0..concept_rows) } else { 0 };
                }
            }
            if mask.iter().any(|&m| m) {
                break;
            }
        }
        let grid = ResolvedGrid { s_max, h_max, rows: rows.clone(), mask: mask.clone() };

        let mut tape = Tape::<f64>::new();
        let concepts = tape.param(&store, "concepts").unwrap();
        let lam = tape.constant(Tensor::scalar(rng.random_range(-3.0..3.0)));
        let ctx = tape.constant(Tensor::vector(vec![
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ]));
        let net = AttentionVars::from_store(&mut tape, &store, "attn").unwrap();
        let (u, dist) =
            embed_token(&mut tape, &grid, concepts, Some(lam), ctx, &net, EmbedMode::Full)
                .unwrap();

        let total: f64 = dist.probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "draw {draw}: joint sums to {total}");
        for (cell, &p) in dist.probs.iter().enumerate() {
            if !mask[cell] {
                assert_eq!(p, 0.0, "draw {draw}: masked cell {cell} got {p}");
            }
        }
        let concepts_t = store.value("concepts").unwrap();
        for (j, &uj) in tape.value(u).data().iter().enumerate() {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for cell in 0..grid.cells() {
                if mask[cell] {
                    let v = concepts_t.row(rows[cell])[j];
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            assert!(
                uj >= lo - 1e-12 && uj <= hi + 1e-12,
                "draw {draw}: component {j} = {uj} outside [{lo}, {hi}]"
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(10), "invariant sweep took {elapsed:?}");
    report(2, "distribution invariants");
}

// ---- criterion 3 ----------------------------------------------------------

fn degenerate_world() -> (GroundingTable, Vec<PPAInstance>) {
    let mut lines = String::new();
    for v in ["v0", "v1", "v2"] {
        lines.push_str(&format!(
            r#"{{"word":"{v}","pos":"v","senses":[{{"id":"{v}.v.01","path":["{v}.v.01"]}}]}}"#
        ));
        lines.push('\n');
    }
    for w in ["w0", "w1", "w2", "w3", "w4"] {
        lines.push_str(&format!(
            r#"{{"word":"{w}","pos":"n","senses":[{{"id":"{w}.n.01","path":["{w}.n.01"]}}]}}"#
        ));
        lines.push('\n');
    }
    let table = GroundingTable::load(lines.as_bytes(), "degenerate").unwrap();
    let instances = vec![
        PPAInstance::new(
            vec![("v0".into(), Pos::Verb), ("w0".into(), Pos::Noun)],
            "p".into(),
            "w1".into(),
            1,
        )
        .unwrap(),
        PPAInstance::new(
            vec![
                ("v1".into(), Pos::Verb),
                ("w2".into(), Pos::Noun),
                ("w3".into(), Pos::Noun),
            ],
            "q".into(),
            "w4".into(),
            0,
        )
        .unwrap(),
        PPAInstance::new(
            vec![("v2".into(), Pos::Verb), ("w4".into(), Pos::Noun)],
            "p".into(),
            "w0".into(),
            0,
        )
        .unwrap(),
    ];
    (table, instances)
}

#[test]
fn acceptance_03_degenerate_reduction_to_baseline() {
    let dims = ontoppa_core::attachment::ModelDims {
        s_max: 2,
        h_max: 2,
        embed_dim: 6,
        hidden_dim: 5,
        attn_hidden: 6,
        attach_hidden: 8,
        attach_depth: 1,
    };
    let (mut table, instances) = degenerate_world();
    let onto = Model::<f64>::build(
        Mode::Full,
        ContextVariant::PrevHidden,
        dims,
        31,
        &mut table,
        &instances,
        &[],
    )
    .unwrap();
    let (mut table2, _) = degenerate_world();
    let mut baseline = Model::<f64>::build(
        Mode::Baseline,
        ContextVariant::PrevHidden,
        dims,
        31,
        &mut table2,
        &instances,
        &[],
    )
    .unwrap();

    // Word vectors := the word's single concept vector; LSTM and attachment
    // parameters shared verbatim.
    let concepts = onto.store.value("concepts").unwrap().clone();
    let mut words = baseline.store.value("words").unwrap().clone();
    let width = dims.embed_dim;
    for inst in &instances {
        for (w, pos) in inst.tokens() {
            let grid = onto.grid(&w, pos).unwrap();
            let concept_row = grid.rows[0];
            let word_row = baseline.vocab.word_row(&w);
            for j in 0..width {
                words.data_mut()[word_row * width + j] = concepts.row(concept_row)[j];
            }
        }
    }
    baseline.store.set_value("words", words).unwrap();
    let shared: Vec<String> = onto
        .store
        .names()
        .filter(|n| n.starts_with("lstm.") || n.starts_with("attach."))
        .map(str::to_string)
        .collect();
    for name in shared {
        let value = onto.store.value(&name).unwrap().clone();
        baseline.store.set_value(&name, value).unwrap();
    }

    for inst in &instances {
        let a = onto.probabilities(inst).unwrap();
        let b = baseline.probabilities(inst).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(
                (x - y).abs() < 1e-10,
                "degenerate onto and baseline disagree: {a:?} vs {b:?}"
            );
        }
    }
    report(3, "degenerate reduction");
}

// ---- criterion 4 ----------------------------------------------------------

#[test]
fn acceptance_04_ablation_identities() {
    let n = 5;
    let ctx_width = 3;
    let mut store = ParameterStore::<f64>::new(41);
    let mut rng = store.rng(1);
    store.define_uniform("concepts", vec![8, n], -0.8, 0.8, &mut rng).unwrap();
    store.define_uniform("lambda", vec![1, 1], 0.0, 1.0, &mut rng).unwrap();
    AttentionVars::define(&mut store, "attn", n + ctx_width, 5, &mut rng).unwrap();
    let grid = ResolvedGrid {
        s_max: 2,
        h_max: 3,
        rows: vec![1, 2, 3, 4, 5, 0],
        mask: vec![true, true, true, true, true, false],
    };

    // No-prior joint equals the attention distribution exactly.
    let mut tape = Tape::<f64>::new();
    let concepts = tape.param(&store, "concepts").unwrap();
    let ctx = tape.constant(Tensor::vector(vec![0.4, -1.1, 0.7]));
    let net = AttentionVars::from_store(&mut tape, &store, "attn").unwrap();
    let attn = attention_weights(&mut tape, &grid, concepts, ctx, &net).unwrap();
    let (_, dist) =
        embed_token(&mut tape, &grid, concepts, None, ctx, &net, EmbedMode::NoPrior).unwrap();
    let attn_bits: Vec<u64> = tape.value(attn).data().iter().map(|v| v.to_bits()).collect();
    let joint_bits: Vec<u64> = dist.probs.iter().map(|v| v.to_bits()).collect();
    assert_eq!(attn_bits, joint_bits, "no-prior joint must equal attention exactly");

    // No-attention embeddings for a fixed word type are context-invariant.
    let mut rng = common::rng(0xab1a);
    let mut reference: Option<Vec<f64>> = None;
    for _ in 0..10 {
        let mut tape = Tape::<f64>::new();
        let concepts = tape.param(&store, "concepts").unwrap();
        let lam_mat = tape.param(&store, "lambda").unwrap();
        let lam_row = tape.gather_rows(lam_mat, &[0]).unwrap();
        let lam = tape.reshape(lam_row, vec![]).unwrap();
        let ctx_values: Vec<f64> = (0..ctx_width).map(|_| rng.random_range(-5.0..5.0)).collect();
        let ctx = tape.constant(Tensor::vector(ctx_values));
        let net = AttentionVars::from_store(&mut tape, &store, "attn").unwrap();
        let (u, _) =
            embed_token(&mut tape, &grid, concepts, Some(lam), ctx, &net, EmbedMode::NoAttention)
                .unwrap();
        let u = tape.value(u).to_f64_vec();
        match &reference {
            None => reference = Some(u),
            Some(r) => {
                let max_diff = r
                    .iter()
                    .zip(&u)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                assert!(max_diff < 1e-12, "no-attention embedding moved by {max_diff}");
            }
        }
    }
    report(4, "ablation identities");
}

// ---- criterion 5 ----------------------------------------------------------

#[test]
fn acceptance_05_sense_prior_law() {
    let mut rng = common::rng(0x5e5e);
    for draw in 0..100 {
        let lambda_raw = rng.random_range(-4.0..4.0);
        let rows = rng.random_range(2..=5usize);
        let grid = ResolvedGrid {
            s_max: rows,
            h_max: 1,
            rows: (0..rows).collect(),
            mask: vec![true; rows],
        };
        let mut tape = Tape::<f64>::new();
        let raw = tape.constant(Tensor::scalar(lambda_raw));
        let w = sense_prior_weights(&mut tape, raw, &grid).unwrap();
        let w = tape.value(w).data();
        for r in 1..rows {
            assert!(
                w[r] < w[r - 1],
                "draw {draw}: weight not strictly decreasing at rank {r}"
            );
        }
    }

    // Two senses, lambda = 1: normalized prior is (0.731059, 0.268941).
    let raw_for_unit_lambda = (1f64.exp() - 1.0).ln();
    let grid = ResolvedGrid { s_max: 2, h_max: 1, rows: vec![0, 1], mask: vec![true, true] };
    let mut tape = Tape::<f64>::new();
    let raw = tape.constant(Tensor::scalar(raw_for_unit_lambda));
    let w = sense_prior_weights(&mut tape, raw, &grid).unwrap();
    let p = tape.masked_normalize(w, Some(&grid.mask)).unwrap();
    let p = tape.value(p).data();
    assert!((p[0] - 0.731059).abs() < 1e-6, "got {}", p[0]);
    assert!((p[1] - 0.268941).abs() < 1e-6, "got {}", p[1]);
    report(5, "sense-prior law");
}

// ---- criterion 6 ----------------------------------------------------------

#[test]
fn acceptance_06_shortest_path_oracle() {
    let mut rng = common::rng(0x6a6);
    for dag_idx in 0..100 {
        let dag = common::random_dag(&mut rng, 30);
        let senses: Vec<(String, Pos, Vec<String>)> = (0..dag.names.len())
            .map(|i| (format!("w{i}"), Pos::Noun, vec![dag.names[i].clone()]))
            .collect();
        let table = derive_paths(&dag.edges, &senses).unwrap();
        for i in 0..dag.names.len() {
            let expected = common::brute_force_shortest(&dag, i);
            let entry = &table.senses(&format!("w{i}"), Pos::Noun).unwrap()[0];
            let got: Vec<String> = entry
                .hypernym_path
                .iter()
                .map(|&c| table.concepts().name(c).to_string())
                .collect();
            assert_eq!(
                got.len(),
                expected.len(),
                "dag {dag_idx}, sense {i}: path length differs"
            );
            assert_eq!(got, expected, "dag {dag_idx}, sense {i}: tie-break differs");
        }
    }
    report(6, "shortest-path oracle");
}

// ---- criteria 7 and 8: shared synthetic experiment ------------------------

struct Experiment {
    cells: Vec<CurveCell>,
    elapsed: Duration,
}

fn benchmark_spec() -> SyntheticSpec {
    SyntheticSpec {
        classes: 4,
        words_per_class: 40,
        senses_per_ambiguous: 2,
        ambiguous_fraction: 0.3,
        prepositions: 3,
        train_size: 2000,
        test_size: 500,
        rare_size: 300,
        rare_holdout_fraction: 0.15,
        compat_density: 0.5,
        seed: 11,
    }
}

fn benchmark_config() -> TrainConfig {
    TrainConfig {
        embed_dim: 32,
        hidden_dim: 16,
        s_max: 2,
        h_max: 3,
        learning_rate: 1e-2,
        batch_size: 8,
        max_epochs: 20,
        patience: 5,
        dev_fraction: 0.15,
        ..TrainConfig::default()
    }
}

fn experiment() -> &'static Experiment {
    static EXPERIMENT: OnceLock<Experiment> = OnceLock::new();
    EXPERIMENT.get_or_init(|| {
        let started = Instant::now();
        let spec = benchmark_spec();
        let ontology = gen_ontology(&spec).unwrap();
        let data = gen_dataset(&spec, &ontology).unwrap();
        let mut table =
            GroundingTable::load(ontology.grounding_jsonl().as_bytes(), "benchmark").unwrap();
        let cells = learning_curve::<f64>(
            &benchmark_config(),
            &data.train,
            &data.test,
            Some(&data.rare),
            &[0.1, 0.25, 0.5, 1.0],
            &[1, 2, 3],
            &[Mode::Full, Mode::Baseline],
            &mut table,
            |_, _, _, _| {},
        )
        .unwrap();
        Experiment { cells, elapsed: started.elapsed() }
    })
}

fn cell(cells: &[CurveCell], fraction: f64, mode: Mode) -> &CurveCell {
    cells
        .iter()
        .find(|c| c.fraction == fraction && c.mode == mode)
        .expect("experiment cell")
}

#[test]
fn acceptance_07_synthetic_main_effect() {
    let exp = experiment();
    let onto = cell(&exp.cells, 1.0, Mode::Full);
    let baseline = cell(&exp.cells, 1.0, Mode::Baseline);
    assert_eq!(onto.test_accuracies.len(), 3);
    let onto_acc = onto.mean();
    assert!(onto_acc >= 0.90, "mean ontology-model accuracy {onto_acc} < 0.90");
    let onto_rare = onto.rare_mean().expect("rare split evaluated");
    let baseline_rare = baseline.rare_mean().expect("rare split evaluated");
    assert!(
        onto_rare >= baseline_rare + 0.05,
        "rare-word gap too small: {onto_rare} vs {baseline_rare}"
    );
    assert!(
        exp.elapsed < Duration::from_secs(15 * 60),
        "experiment took {:?}",
        exp.elapsed
    );
    report(7, "synthetic main effect");
}

#[test]
fn acceptance_08_learning_curve_shape() {
    let exp = experiment();
    let gap = |fraction: f64| {
        cell(&exp.cells, fraction, Mode::Full).mean()
            - cell(&exp.cells, fraction, Mode::Baseline).mean()
    };
    let small = gap(0.1);
    let full = gap(1.0);
    assert!(
        small >= full,
        "gap at 0.1 ({small:.4}) smaller than gap at 1.0 ({full:.4})"
    );
    report(8, "learning-curve shape");
}

// ---- criterion 9 ----------------------------------------------------------

#[test]
fn acceptance_09_regularization_via_sharing() {
    // Words A and B share the hypernym `shared.n.01`; B never occurs in the
    // training loss.
    let lines = [
        r#"{"word":"va","pos":"v","senses":[{"id":"va.v.01","path":["va.v.01"]}]}"#,
        r#"{"word":"a","pos":"n","senses":[{"id":"a.n.01","path":["a.n.01","shared.n.01"]}]}"#,
        r#"{"word":"b","pos":"n","senses":[{"id":"b.n.01","path":["b.n.01","shared.n.01"]}]}"#,
        r#"{"word":"dep","pos":"n","senses":[{"id":"dep.n.01","path":["dep.n.01"]}]}"#,
    ]
    .join("\n");
    let mut table = GroundingTable::load(lines.as_bytes(), "shared").unwrap();
    let train_inst = PPAInstance::new(
        vec![("va".into(), Pos::Verb), ("a".into(), Pos::Noun)],
        "with".into(),
        "dep".into(),
        1,
    )
    .unwrap();
    let probe_b = PPAInstance::new(
        vec![("va".into(), Pos::Verb), ("b".into(), Pos::Noun)],
        "with".into(),
        "dep".into(),
        0,
    )
    .unwrap();
    let dims = ontoppa_core::attachment::ModelDims {
        s_max: 2,
        h_max: 2,
        embed_dim: 6,
        hidden_dim: 5,
        attn_hidden: 6,
        attach_hidden: 8,
        attach_depth: 1,
    };
    let probes = [probe_b.clone()];
    let mut model = Model::<f64>::build(
        Mode::Full,
        ContextVariant::PrevHidden,
        dims,
        91,
        &mut table,
        std::slice::from_ref(&train_inst),
        &[&probes],
    )
    .unwrap();

    let embed_b = |model: &Model<f64>| -> Vec<f64> {
        // Token embedding of B under a fixed zero context, forward net.
        let grid = model.grid("b", Pos::Noun).unwrap().clone();
        let mut tape = Tape::new();
        let concepts = tape.param(&model.store, "concepts").unwrap();
        let lam = tape.constant(Tensor::scalar(0.3));
        let ctx = tape.constant(Tensor::zeros(vec![dims.hidden_dim]));
        let net = AttentionVars::from_store(&mut tape, &model.store, "attn.f").unwrap();
        let (u, _) =
            embed_token(&mut tape, &grid, concepts, Some(lam), ctx, &net, EmbedMode::Full)
                .unwrap();
        tape.value(u).to_f64_vec()
    };

    let shared_row = model.vocab.concept_row("shared.n.01");
    let b_sense_row = model.vocab.concept_row("b.n.01");
    let before = embed_b(&model);

    // One update on a loss that contains word A only.
    model.store.zero_grads();
    let mut tape = Tape::new();
    let loss = model.instance_loss(&mut tape, &train_inst).unwrap();
    tape.backward(loss, &mut model.store).unwrap();
    let grad = model.store.grad("concepts").unwrap();
    let shared_norm: f64 = grad.row(shared_row).iter().map(|v| v.abs()).sum();
    assert!(shared_norm > 0.0, "shared hypernym row received no gradient");
    let b_norm: f64 = grad.row(b_sense_row).iter().map(|v| v.abs()).sum();
    assert_eq!(b_norm, 0.0, "B's own sense row must not receive gradient");

    model.store.update_each(|_, value, grad| {
        for (w, &g) in value.data_mut().iter_mut().zip(grad.data()) {
            *w -= 0.05 * g;
        }
    });
    let after = embed_b(&model);
    let change: f64 = before
        .iter()
        .zip(&after)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    assert!(change > 0.0, "B's token embedding did not move");
    report(9, "regularization via sharing");
}

// ---- criterion 10 ---------------------------------------------------------

#[test]
fn acceptance_10_determinism_and_persistence() {
    let spec = SyntheticSpec {
        words_per_class: 8,
        train_size: 120,
        test_size: 40,
        rare_size: 0,
        seed: 77,
        ..benchmark_spec()
    };
    let ontology = gen_ontology(&spec).unwrap();
    let data = gen_dataset(&spec, &ontology).unwrap();
    let config = TrainConfig { max_epochs: 4, patience: 4, ..benchmark_config() };

    let run = || {
        let mut table =
            GroundingTable::load(ontology.grounding_jsonl().as_bytes(), "bench").unwrap();
        let (model, metrics) = train::<f64>(&config, &data.train, &mut table, None, |_| {}).unwrap();
        let metric_bits: Vec<u64> = metrics
            .epochs
            .iter()
            .flat_map(|e| {
                [
                    e.train_loss.to_bits(),
                    e.train_accuracy.to_bits(),
                    e.dev_accuracy.to_bits(),
                ]
            })
            .collect();
        let param_bits: Vec<u64> = model
            .store
            .iter()
            .flat_map(|(_, v, _)| v.data().iter().map(|x| x.to_bits()))
            .collect();
        (model, table, metric_bits, param_bits)
    };
    let (model_a, mut table_a, metrics_a, params_a) = run();
    let (_, _, metrics_b, params_b) = run();
    assert_eq!(metrics_a, metrics_b, "metrics differ across identical seeds");
    assert_eq!(params_a, params_b, "parameters differ across identical seeds");

    // Checkpoint round trip reproduces evaluation exactly.
    let mut model_a = model_a;
    model_a.prepare_dataset(&mut table_a, &data.test);
    let direct = evaluate(&model_a, &data.test).unwrap();
    let dir = std::env::temp_dir().join(format!("ontoppa-acc10-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.ckpt");
    save_checkpoint(&path, &model_a, &config).unwrap();
    let (mut reloaded, _) = load_checkpoint::<f64>(&path).unwrap();
    let mut fresh_table =
        GroundingTable::load(ontology.grounding_jsonl().as_bytes(), "bench").unwrap();
    reloaded.prepare_dataset(&mut fresh_table, &data.test);
    let replayed = evaluate(&reloaded, &data.test).unwrap();
    assert_eq!(direct, replayed, "checkpointed evaluation differs");
    std::fs::remove_dir_all(&dir).ok();
    report(10, "determinism and persistence");
}
