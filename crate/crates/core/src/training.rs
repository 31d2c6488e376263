//! Training loop, evaluation, experiment drivers, and checkpoints.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attachment::{param_group, Mode, Model, ModelDims, ModelVocab, PPAInstance};
use crate::embedding::VectorLoadReport;
use crate::encoder::ContextVariant;
use crate::error::{Error, Result};
use crate::ndmath::{finite_difference_check, ParameterStore, Tape, Tensor};
use crate::scalar::Scalar;

/// Everything a training run needs. Flag names in the CLI mirror these
/// fields one to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Senses kept per token grid.
    pub s_max: usize,
    /// Concepts kept per hypernym path (including the sense itself).
    pub h_max: usize,
    /// Embedding width n.
    pub embed_dim: usize,
    /// LSTM hidden width h per direction.
    pub hidden_dim: usize,
    /// Attention MLP hidden width; defaults to `embed_dim`.
    pub attn_hidden: Option<usize>,
    /// Attachment MLP hidden width; defaults to `2 * hidden_dim`.
    pub attach_hidden: Option<usize>,
    /// Hidden tanh layers in the attachment MLP.
    pub attach_depth: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop when `epoch - best_epoch >= patience` (0 trains exactly one
    /// epoch).
    pub patience: usize,
    pub seed: u64,
    pub mode: Mode,
    pub context: ContextVariant,
    /// Fraction of the training data held out for early stopping.
    pub dev_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            s_max: 3,
            h_max: 5,
            embed_dim: 100,
            hidden_dim: 50,
            attn_hidden: None,
            attach_hidden: None,
            attach_depth: 1,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            seed: 42,
            mode: Mode::Full,
            context: ContextVariant::PrevHidden,
            dev_fraction: 0.10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("s_max", self.s_max),
            ("h_max", self.h_max),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("attach_depth", self.attach_depth),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config { detail: format!("{name} must be at least 1") });
            }
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err(Error::Config {
                detail: format!("dev_fraction must be in (0, 1), got {}", self.dev_fraction),
            });
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config { detail: "learning_rate must be positive".into() });
        }
        Ok(())
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            s_max: self.s_max,
            h_max: self.h_max,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            attn_hidden: self.attn_hidden.unwrap_or(self.embed_dim),
            attach_hidden: self.attach_hidden.unwrap_or(2 * self.hidden_dim),
            attach_depth: self.attach_depth,
        }
    }
}

/// One epoch's numbers, emitted as a JSON line by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    /// Filled in by callers that evaluate a held-out test set.
    pub test_accuracy: Option<f64>,
    /// Concept rows (ontology modes) or word rows (baseline).
    pub embedding_rows: usize,
    pub total_parameters: usize,
    pub wall_clock_secs: f64,
    pub pretrained: Option<VectorLoadReport>,
}

/// Adam with bias correction, applied to parameters in definition order.
struct Adam<S> {
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
    step: u32,
    moments: Vec<(Tensor<S>, Tensor<S>)>,
}

impl<S: Scalar> Adam<S> {
    fn new(config: &TrainConfig, store: &ParameterStore<S>) -> Self {
        Adam {
            lr: S::from_float(config.learning_rate),
            beta1: S::from_float(config.beta1),
            beta2: S::from_float(config.beta2),
            eps: S::from_float(config.adam_eps),
            step: 0,
            moments: store
                .iter()
                .map(|(_, v, _)| {
                    (Tensor::zeros(v.shape().to_vec()), Tensor::zeros(v.shape().to_vec()))
                })
                .collect(),
        }
    }

    fn step(&mut self, store: &mut ParameterStore<S>) {
        self.step += 1;
        let one = S::one();
        let bc1 = one - self.beta1.powi(self.step as i32);
        let bc2 = one - self.beta2.powi(self.step as i32);
        let mut idx = 0;
        store.update_each(|_, value, grad| {
            let (m, v) = &mut self.moments[idx];
            idx += 1;
            let m = m.data_mut();
            let v = v.data_mut();
            let w = value.data_mut();
            let g = grad.data();
            for i in 0..w.len() {
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] = w[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        });
    }
}

fn loss_err_context<S: Scalar>(
    epoch: usize,
    batch_idx: usize,
    store: &ParameterStore<S>,
) -> String {
    format!(
        "training loss at epoch {epoch}, batch {batch_idx}; parameter norms: {}",
        store.norm_report()
    )
}

/// Seed-stable dev split: `(train_indices, dev_indices)`, disjoint.
pub fn dev_split(seed: u64, n: usize, dev_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x853c49e6748fea9b).wrapping_add(1));
    order.shuffle(&mut rng);
    let dev_n = ((n as f64 * dev_fraction).round() as usize).max(1);
    if dev_n >= n {
        return Err(Error::Data {
            detail: format!("{n} instances leave no training portion after a {dev_fraction} dev split"),
        });
    }
    let dev = order[..dev_n].to_vec();
    let train = order[dev_n..].to_vec();
    Ok((train, dev))
}

/// Fraction of instances whose predicted head equals the gold head.
pub fn evaluate<S: Scalar>(model: &Model<S>, dataset: &[PPAInstance]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Data { detail: "cannot evaluate an empty dataset".into() });
    }
    let mut correct = 0usize;
    for inst in dataset {
        if model.predict_instance(inst)? == inst.gold {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Train a model on `data` (internally split into train/dev portions) and
/// return it with the best-dev-epoch parameters restored.
pub fn train<S: Scalar>(
    config: &TrainConfig,
    data: &[PPAInstance],
    table: &mut crate::ontology::GroundingTable,
    pretrained: Option<&(HashMap<String, Vec<f64>>, usize)>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model<S>, Metrics)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data { detail: "training set is empty".into() });
    }
    let started = Instant::now();

    let (train_idx, dev_idx) = dev_split(config.seed, data.len(), config.dev_fraction)?;
    let train_insts: Vec<PPAInstance> = train_idx.iter().map(|&i| data[i].clone()).collect();
    let dev_insts: Vec<PPAInstance> = dev_idx.iter().map(|&i| data[i].clone()).collect();

    let mut model = Model::<S>::build(
        config.mode,
        config.context,
        config.dims(),
        config.seed,
        table,
        data,
        &[],
    )?;
    let pretrained_report = match pretrained {
        Some((vectors, dim)) => Some(model.apply_pretrained(vectors, *dim)?),
        None => None,
    };

    let mut adam = Adam::new(config, &model.store);
    let mut epochs = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_store: Option<ParameterStore<S>> = None;

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train_insts.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            config.seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(epoch as u64),
        );
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<PPAInstance> = chunk.iter().map(|&i| train_insts[i].clone()).collect();
            model.store.zero_grads();
            let mut tape = Tape::new();
            let loss = model.batch_loss(&mut tape, &batch)?;
            let loss_value = tape.value(loss).scalar_value()?.as_f64();
            if !loss_value.is_finite() {
                return Err(Error::NonFinite {
                    context: loss_err_context(epoch, batch_idx, &model.store),
                });
            }
            tape.backward(loss, &mut model.store)?;
            adam.step(&mut model.store);
            loss_sum += loss_value * batch.len() as f64;
        }

        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_insts.len() as f64,
            train_accuracy: evaluate(&model, &train_insts)?,
            dev_accuracy: evaluate(&model, &dev_insts)?,
        };
        on_epoch(&record);
        let dev_accuracy = record.dev_accuracy;
        epochs.push(record);

        if dev_accuracy > best_acc {
            best_acc = dev_accuracy;
            best_epoch = epoch;
            best_store = Some(model.store.clone());
        }
        if epoch - best_epoch >= config.patience {
            break;
        }
    }

    if let Some(store) = best_store {
        model.store = store;
    }
    let metrics = Metrics {
        epochs,
        best_epoch,
        best_dev_accuracy: best_acc,
        test_accuracy: None,
        embedding_rows: model.embedding_rows(),
        total_parameters: model.store.total_parameters(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        pretrained: pretrained_report,
    };
    Ok((model, metrics))
}

/// Accuracies of one (fraction, mode) cell of a learning curve.
#[derive(Debug, Clone, Serialize)]
pub struct CurveCell {
    pub fraction: f64,
    pub mode: Mode,
    pub test_accuracies: Vec<f64>,
    pub rare_accuracies: Vec<f64>,
}

impl CurveCell {
    pub fn mean(&self) -> f64 {
        mean(&self.test_accuracies)
    }

    pub fn stdev(&self) -> f64 {
        stdev(&self.test_accuracies)
    }

    pub fn rare_mean(&self) -> Option<f64> {
        if self.rare_accuracies.is_empty() {
            None
        } else {
            Some(mean(&self.rare_accuracies))
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn stdev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Train independently per (fraction, mode, seed) and evaluate on the test
/// set (and rare-word split when given). Subset sampling is nested: for a
/// fixed seed, smaller fractions are prefixes of larger ones.
#[allow(clippy::too_many_arguments)]
pub fn learning_curve<S: Scalar>(
    base: &TrainConfig,
    data: &[PPAInstance],
    test: &[PPAInstance],
    rare: Option<&[PPAInstance]>,
    fractions: &[f64],
    seeds: &[u64],
    modes: &[Mode],
    table: &mut crate::ontology::GroundingTable,
    mut progress: impl FnMut(f64, Mode, u64, f64),
) -> Result<Vec<CurveCell>> {
    if fractions.is_empty() || seeds.is_empty() || modes.is_empty() {
        return Err(Error::Config {
            detail: "learning_curve needs at least one fraction, seed, and mode".into(),
        });
    }
    if let Some(&bad) = fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::Config { detail: format!("fraction {bad} outside (0, 1]") });
    }
    let mut fractions: Vec<f64> = fractions.to_vec();
    fractions.sort_by(|a, b| a.partial_cmp(b).unwrap());
    fractions.dedup();

    let mut cells: Vec<CurveCell> = Vec::new();
    for &fraction in &fractions {
        for &mode in modes {
            cells.push(CurveCell {
                fraction,
                mode,
                test_accuracies: Vec::new(),
                rare_accuracies: Vec::new(),
            });
        }
    }

    for &seed in seeds {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0xd6e8feb86659fd93).wrapping_add(7));
        order.shuffle(&mut rng);
        for &fraction in &fractions {
            let take = ((data.len() as f64 * fraction).ceil() as usize).min(data.len());
            if take < 2 {
                return Err(Error::Data {
                    detail: format!("fraction {fraction} yields fewer than one batch"),
                });
            }
            // Nested prefixes of the shuffled order, subset kept in original
            // dataset order (fraction 1.0 is then literally the input set).
            let mut picked: Vec<usize> = order[..take].to_vec();
            picked.sort_unstable();
            let subset: Vec<PPAInstance> = picked.iter().map(|&i| data[i].clone()).collect();
            for &mode in modes {
                let mut config = base.clone();
                config.seed = seed;
                config.mode = mode;
                let (model, _) = train::<S>(&config, &subset, table, None, |_| {})?;
                let mut model = model;
                model.prepare_dataset(table, test);
                let test_acc = evaluate(&model, test)?;
                let rare_acc = match rare {
                    Some(r) => {
                        model.prepare_dataset(table, r);
                        Some(evaluate(&model, r)?)
                    }
                    None => None,
                };
                let cell = cells
                    .iter_mut()
                    .find(|c| c.fraction == fraction && c.mode == mode)
                    .expect("cell exists");
                cell.test_accuracies.push(test_acc);
                if let Some(r) = rare_acc {
                    cell.rare_accuracies.push(r);
                }
                progress(fraction, mode, seed, test_acc);
            }
        }
    }
    Ok(cells)
}

/// One concept's share of a token's attention, for inspection output.
#[derive(Debug, Clone, Serialize)]
pub struct ConceptWeight {
    pub sense: String,
    pub hypernym: String,
    pub probability: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TokenInspection {
    pub word: String,
    pub pos: String,
    pub forward: Vec<ConceptWeight>,
    pub backward: Vec<ConceptWeight>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceInspection {
    pub tokens: Vec<TokenInspection>,
    pub probabilities: Vec<f64>,
    pub predicted: usize,
}

/// Expose the per-token, per-direction concept distributions of one
/// instance, sorted by descending probability.
pub fn inspect_attention<S: Scalar>(
    model: &Model<S>,
    inst: &PPAInstance,
) -> Result<InstanceInspection> {
    if model.mode == Mode::Baseline {
        return Err(Error::Data {
            detail: "the baseline model has no concept distributions to inspect".into(),
        });
    }
    let mut tape = Tape::new();
    let (probs, seq) = model.score_instance(&mut tape, inst)?;
    let probabilities = tape.value(probs).to_f64_vec();
    let predicted = crate::attachment::predict(tape.value(probs).data());

    let mut tokens = Vec::new();
    for (i, (word, pos)) in inst.tokens().into_iter().enumerate() {
        let grid = model.grid(&word, pos).ok_or_else(|| Error::Data {
            detail: format!("token (\"{word}\", {pos}) was not prepared"),
        })?;
        let weights = |dist: &crate::embedding::ConceptDistribution| {
            let mut entries: Vec<(usize, ConceptWeight)> = Vec::new();
            for cell in 0..grid.cells() {
                if !grid.mask[cell] {
                    continue;
                }
                let sense_row = (cell / grid.h_max) * grid.h_max;
                entries.push((
                    cell,
                    ConceptWeight {
                        sense: model.vocab.concepts[grid.rows[sense_row]].clone(),
                        hypernym: model.vocab.concepts[grid.rows[cell]].clone(),
                        probability: dist.probs[cell],
                    },
                ));
            }
            entries.sort_by(|(ca, a), (cb, b)| {
                b.probability
                    .partial_cmp(&a.probability)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(ca.cmp(cb))
            });
            entries.into_iter().map(|(_, w)| w).collect::<Vec<_>>()
        };
        let forward = seq.forward_dist[i].as_ref().map(&weights).unwrap_or_default();
        let backward = seq.backward_dist[i].as_ref().map(&weights).unwrap_or_default();
        tokens.push(TokenInspection {
            word,
            pos: pos.as_char().to_string(),
            forward,
            backward,
        });
    }
    Ok(InstanceInspection { tokens, probabilities, predicted })
}

// ---- gradcheck harness --------------------------------------------------

/// Stream constant of the pinned gradcheck point.
const GRADCHECK_POINT_STREAM: u64 = 0x517e;

/// Max relative error of one parameter group.
#[derive(Debug, Clone, Serialize)]
pub struct GroupCheck {
    pub group: String,
    pub max_rel_err: f64,
    pub entries_checked: usize,
}

/// Built-in two-instance fixture exercising multi-sense grounding, padding,
/// an out-of-vocabulary dependent, and both candidate counts (2 and 3).
pub fn gradcheck_fixture() -> (crate::ontology::GroundingTable, Vec<PPAInstance>) {
    let grounding = [
        r#"{"word":"ate","pos":"v","senses":[{"id":"ate.v.01","path":["ate.v.01","consume.v.01","act.v.01"]}]}"#,
        r#"{"word":"saw","pos":"v","senses":[{"id":"saw.v.01","path":["saw.v.01","perceive.v.01","act.v.01"]}]}"#,
        r#"{"word":"spaghetti","pos":"n","senses":[{"id":"spaghetti.n.01","path":["spaghetti.n.01","food.n.01","entity.n.01"]},{"id":"spaghetti.n.02","path":["spaghetti.n.02","artifact.n.01","entity.n.01"]}]}"#,
        r#"{"word":"star","pos":"n","senses":[{"id":"star.n.01","path":["star.n.01","body.n.01","entity.n.01"]},{"id":"star.n.02","path":["star.n.02","person.n.01","entity.n.01"]}]}"#,
        r#"{"word":"butter","pos":"n","senses":[{"id":"butter.n.01","path":["butter.n.01","food.n.01","entity.n.01"]}]}"#,
        r#"{"word":"telescope","pos":"n","senses":[{"id":"telescope.n.01","path":["telescope.n.01","artifact.n.01","entity.n.01"]}]}"#,
    ]
    .join("\n");
    let table = crate::ontology::GroundingTable::load(grounding.as_bytes(), "fixture").unwrap();
    let instances = vec![
        PPAInstance::new(
            vec![("ate".into(), crate::ontology::Pos::Verb), ("spaghetti".into(), crate::ontology::Pos::Noun)],
            "with".into(),
            "butter".into(),
            1,
        )
        .unwrap(),
        PPAInstance::new(
            vec![
                ("saw".into(), crate::ontology::Pos::Verb),
                ("star".into(), crate::ontology::Pos::Noun),
                ("telescope".into(), crate::ontology::Pos::Noun),
            ],
            "with".into(),
            "lens".into(),
            0,
        )
        .unwrap(),
    ];
    (table, instances)
}

/// Finite-difference check of the full model loss on the built-in
/// two-instance fixture, reported per parameter group.
///
/// The check point is a fixed test vector: parameters are drawn from a
/// pinned stream and fitted to a low loss, every tensor is small enough to
/// be checked exhaustively, and the result is therefore identical from run
/// to run.
pub fn model_gradcheck<S: Scalar>(
    mode: Mode,
    context: ContextVariant,
    eps: f64,
) -> Result<(Vec<GroupCheck>, f64)> {
    let (mut table, instances) = gradcheck_fixture();
    let dims = ModelDims {
        s_max: 3,
        h_max: 5,
        embed_dim: 4,
        hidden_dim: 3,
        attn_hidden: 4,
        attach_hidden: 5,
        attach_depth: 1,
    };
    let mut model =
        Model::<S>::build(mode, context, dims, 0, &mut table, &instances, &[])?;
    let mut store = std::mem::replace(&mut model.store, ParameterStore::new(0));
    store.randomize_all(-0.9, 0.9, GRADCHECK_POINT_STREAM);

    let batch_loss = |tape: &mut Tape<S>,
                      store: &ParameterStore<S>|
     -> Result<crate::ndmath::Var> {
        let mut losses = Vec::new();
        for inst in &instances {
            losses.push(model.loss_with_store(tape, store, inst)?);
        }
        let total = tape.concat(0, &losses)?;
        let sum = tape.sum(total)?;
        tape.scale(sum, S::from_float(1.0 / instances.len() as f64))
    };

    // Drive the fixture to a low-loss point before checking: the central
    // difference resolves a derivative down to roughly ulp(loss)/eps, so a
    // small loss keeps that noise under the 1e-8 comparison floor even for
    // entries whose true derivative is zero (the pre-softmax output biases).
    // Plain gradient descent keeps the weights moderate.
    let fit_step = S::from_float(0.05);
    for _ in 0..4000 {
        store.zero_grads();
        let mut tape = Tape::new();
        let loss = batch_loss(&mut tape, &store)?;
        if tape.value(loss).scalar_value()?.as_f64() < 2e-2 {
            break;
        }
        tape.backward(loss, &mut store)?;
        store.update_each(|_, value, grad| {
            for (w, &g) in value.data_mut().iter_mut().zip(grad.data()) {
                *w = *w - fit_step * g;
            }
        });
    }

    let report =
        finite_difference_check(&mut store, eps, crate::ndmath::DEFAULT_SAMPLE_CAP, batch_loss)?;

    let mut groups: Vec<GroupCheck> = Vec::new();
    for p in &report.params {
        let group = param_group(&p.name);
        match groups.iter_mut().find(|g| g.group == group) {
            Some(g) => {
                g.max_rel_err = g.max_rel_err.max(p.max_rel_err);
                g.entries_checked += p.entries_checked;
            }
            None => groups.push(GroupCheck {
                group,
                max_rel_err: p.max_rel_err,
                entries_checked: p.entries_checked,
            }),
        }
    }
    let max = report.max_rel_err();
    Ok((groups, max))
}

// ---- checkpoints ----------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamManifest {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    config: TrainConfig,
    vocab: ModelVocab,
    params: Vec<ParamManifest>,
}

/// Write a checkpoint: one JSON header line, then each parameter's entries
/// as little-endian 64-bit floats in manifest order.
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    model: &Model<S>,
    config: &TrainConfig,
) -> Result<()> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        config: config.clone(),
        vocab: model.vocab.clone(),
        params: model
            .store
            .iter()
            .map(|(name, value, _)| ParamManifest { name: name.to_string(), shape: value.shape().to_vec() })
            .collect(),
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let line = serde_json::to_string(&header)
        .map_err(|e| Error::Data { detail: format!("serializing checkpoint header: {e}") })?;
    writeln!(file, "{line}")?;
    for (_, value, _) in model.store.iter() {
        for v in value.data() {
            file.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a checkpoint back. Token grids must be prepared against a grounding
/// table before the model can score.
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(Model<S>, TrainConfig)> {
    let file = std::fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end()).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        detail: format!("bad checkpoint header: {e}"),
    })?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Data {
            detail: format!(
                "checkpoint format {} unsupported (expected {CHECKPOINT_VERSION})",
                header.format_version
            ),
        });
    }
    let mut store = ParameterStore::<S>::new(header.config.seed);
    for manifest in &header.params {
        let numel: usize = manifest.shape.iter().product();
        let mut bytes = vec![0u8; numel * 8];
        reader.read_exact(&mut bytes)?;
        let data: Vec<S> = bytes
            .chunks_exact(8)
            .map(|c| S::from_float(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        store.define(&manifest.name, Tensor::new(manifest.shape.clone(), data)?)?;
    }
    let config = header.config;
    config.validate()?;
    let model = Model::from_parts(config.mode, config.context, config.dims(), header.vocab, store);
    Ok((model, config))
}
