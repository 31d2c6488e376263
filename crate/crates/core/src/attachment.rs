//! Prepositional-phrase attachment: instances, the scoring model, and the
//! type-level baseline.
//!
//! Both model variants encode the sequence `<h_1 .. h_K, p, d>` with the
//! bi-LSTM of [`crate::encoder`]; they differ only in how the per-direction
//! input vectors are produced. The ontology-grounded variant uses
//! [`crate::embedding::embed_token`]; the baseline looks up one type-level
//! vector per word. Each candidate head is scored by feeding the
//! concatenation of the encoder outputs for (head, preposition, dependent)
//! through an MLP, and the scores are soft-maxed across candidates.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::embedding::{embed_token, AttentionVars, EmbedMode, ResolvedGrid};
use crate::encoder::{encode, ContextVariant, Direction, EncodedSequence, LstmVars};
use crate::error::{Error, Result};
use crate::ndmath::{ParameterStore, Tape, Tensor, Var};
use crate::ontology::{GroundingTable, Pos};
use crate::scalar::Scalar;

/// Model variant: three ontology-grounded modes plus the type-level
/// baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "no-prior")]
    NoPrior,
    #[serde(rename = "no-attention")]
    NoAttention,
    #[serde(rename = "baseline")]
    Baseline,
}

impl Mode {
    pub fn embed_mode(self) -> Option<EmbedMode> {
        match self {
            Mode::Full => Some(EmbedMode::Full),
            Mode::NoPrior => Some(EmbedMode::NoPrior),
            Mode::NoAttention => Some(EmbedMode::NoAttention),
            Mode::Baseline => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoPrior => "no-prior",
            Mode::NoAttention => "no-attention",
            Mode::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "no-prior" => Ok(Mode::NoPrior),
            "no-attention" => Ok(Mode::NoAttention),
            "baseline" => Ok(Mode::Baseline),
            other => Err(Error::Config { detail: format!("unknown mode `{other}`") }),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One PP-attachment problem: ordered candidate heads, the preposition, its
/// dependent, and the gold head index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PPAInstance {
    /// Candidate heads in original sentence order; POS is noun or verb.
    pub candidates: Vec<(String, Pos)>,
    pub preposition: String,
    /// The preposition's direct dependent (always a noun).
    pub dependent: String,
    /// 0-based index of the correct head.
    pub gold: usize,
}

impl PPAInstance {
    pub fn new(
        candidates: Vec<(String, Pos)>,
        preposition: String,
        dependent: String,
        gold: usize,
    ) -> Result<Self> {
        let inst = PPAInstance { candidates, preposition, dependent, gold };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.len() < 2 {
            return Err(Error::Data {
                detail: format!("instance needs at least 2 candidates, got {}", self.candidates.len()),
            });
        }
        if self.gold >= self.candidates.len() {
            return Err(Error::GoldOutOfRange { gold: self.gold, len: self.candidates.len() });
        }
        if let Some((w, p)) = self.candidates.iter().find(|(_, p)| !matches!(p, Pos::Noun | Pos::Verb))
        {
            return Err(Error::Data {
                detail: format!("candidate \"{w}\" has POS `{p}`, expected noun or verb"),
            });
        }
        Ok(())
    }

    /// The encoded token sequence `<h_1 .. h_K, p, d>`.
    pub fn tokens(&self) -> Vec<(String, Pos)> {
        let mut seq = self.candidates.clone();
        seq.push((self.preposition.clone(), Pos::Prep));
        seq.push((self.dependent.clone(), Pos::Noun));
        seq
    }
}

#[derive(Serialize, Deserialize)]
struct RawToken {
    w: String,
    pos: Pos,
}

#[derive(Serialize, Deserialize)]
struct RawInstance {
    candidates: Vec<RawToken>,
    prep: String,
    dep: RawToken,
    label: usize,
}

/// Load a JSON-lines PP-attachment dataset.
pub fn load_dataset<R: Read>(reader: R, path_label: &str) -> Result<Vec<PPAInstance>> {
    let reader = BufReader::new(reader);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawInstance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path_label.to_string(),
            line: lineno,
            detail: e.to_string(),
        })?;
        if raw.dep.pos != Pos::Noun {
            return Err(Error::Parse {
                path: path_label.to_string(),
                line: lineno,
                detail: "dependent must be a noun".into(),
            });
        }
        let inst = PPAInstance::new(
            raw.candidates.into_iter().map(|t| (t.w, t.pos)).collect(),
            raw.prep,
            raw.dep.w,
            raw.label,
        )
        .map_err(|e| Error::Parse {
            path: path_label.to_string(),
            line: lineno,
            detail: e.to_string(),
        })?;
        out.push(inst);
    }
    Ok(out)
}

pub fn load_dataset_path(path: &std::path::Path) -> Result<Vec<PPAInstance>> {
    let file = std::fs::File::open(path)?;
    load_dataset(file, &path.display().to_string())
}

/// Write a dataset in the JSON-lines format.
pub fn save_dataset<W: Write>(mut w: W, instances: &[PPAInstance]) -> Result<()> {
    for inst in instances {
        let raw = RawInstance {
            candidates: inst
                .candidates
                .iter()
                .map(|(w, p)| RawToken { w: w.clone(), pos: *p })
                .collect(),
            prep: inst.preposition.clone(),
            dep: RawToken { w: inst.dependent.clone(), pos: Pos::Noun },
            label: inst.gold,
        };
        let line = serde_json::to_string(&raw)
            .map_err(|e| Error::Data { detail: format!("serializing instance: {e}") })?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Lowest index attaining the maximum probability.
pub fn predict<S: Scalar>(probabilities: &[S]) -> usize {
    let mut best = 0;
    for (i, &p) in probabilities.iter().enumerate().skip(1) {
        if p > probabilities[best] {
            best = i;
        }
    }
    best
}

/// Model width configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub s_max: usize,
    pub h_max: usize,
    /// Embedding width n.
    pub embed_dim: usize,
    /// LSTM hidden width h (per direction).
    pub hidden_dim: usize,
    /// Attention MLP hidden width (defaults to n at the config layer).
    pub attn_hidden: usize,
    /// Attachment MLP hidden width (defaults to 2h at the config layer).
    pub attach_hidden: usize,
    /// Number of hidden tanh layers in the attachment MLP.
    pub attach_depth: usize,
}

/// Embedding-row bookkeeping: concept ids (ontology variant) and word types
/// (sense priors and the baseline). Row 0 of each table is a reserved
/// fallback for tokens unseen at build time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelVocab {
    pub concepts: Vec<String>,
    pub words: Vec<String>,
    #[serde(skip)]
    concept_index: HashMap<String, usize>,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
}

pub const UNK_CONCEPT: &str = "<unk>";
pub const OOV_WORD: &str = "<oov>";

impl ModelVocab {
    fn new() -> Self {
        ModelVocab {
            concepts: vec![UNK_CONCEPT.to_string()],
            words: vec![OOV_WORD.to_string()],
            concept_index: HashMap::from([(UNK_CONCEPT.to_string(), 0)]),
            word_index: HashMap::from([(OOV_WORD.to_string(), 0)]),
        }
    }

    /// Rebuild the lookup maps after deserialization.
    pub fn reindex(&mut self) {
        self.concept_index =
            self.concepts.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        self.word_index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }

    fn add_concept(&mut self, name: &str) -> usize {
        if let Some(&i) = self.concept_index.get(name) {
            return i;
        }
        let i = self.concepts.len();
        self.concepts.push(name.to_string());
        self.concept_index.insert(name.to_string(), i);
        i
    }

    fn add_word(&mut self, name: &str) -> usize {
        if let Some(&i) = self.word_index.get(name) {
            return i;
        }
        let i = self.words.len();
        self.words.push(name.to_string());
        self.word_index.insert(name.to_string(), i);
        i
    }

    pub fn concept_row(&self, name: &str) -> usize {
        self.concept_index.get(name).copied().unwrap_or(0)
    }

    pub fn word_row(&self, name: &str) -> usize {
        self.word_index.get(name).copied().unwrap_or(0)
    }

    pub fn knows_word(&self, name: &str) -> bool {
        self.word_index.contains_key(name)
    }
}

/// The PP-attachment scorer: parameters, vocabulary, and prepared token
/// grids. Scoring itself is pure; preparing tokens mutates the grid cache.
pub struct Model<S: Scalar> {
    pub mode: Mode,
    pub context_variant: ContextVariant,
    pub dims: ModelDims,
    pub vocab: ModelVocab,
    pub store: ParameterStore<S>,
    grids: HashMap<(String, Pos), ResolvedGrid>,
}

/// softplus^-1(1): default raw decay for words without a trained prior.
const DEFAULT_LAMBDA_RAW: f64 = 0.541324854612918;

impl<S: Scalar> Model<S> {
    /// Build a model over a grounding table and the training instances.
    /// The word vocabulary (sense priors, baseline rows) comes from
    /// `train_set`; token grids are prepared for `train_set` plus
    /// `extra_sets`.
    pub fn build(
        mode: Mode,
        context_variant: ContextVariant,
        dims: ModelDims,
        seed: u64,
        table: &mut GroundingTable,
        train_set: &[PPAInstance],
        extra_sets: &[&[PPAInstance]],
    ) -> Result<Self> {
        table.set_caps(dims.s_max, dims.h_max)?;

        let mut vocab = ModelVocab::new();
        for inst in train_set {
            for (w, _) in inst.tokens() {
                vocab.add_word(&w);
            }
        }

        // Register every dataset token in the table (OOV synthetics appear
        // here), then mirror the full concept set into the vocabulary.
        let mut seen: Vec<(String, Pos)> = Vec::new();
        let mut seen_set: std::collections::HashSet<(String, Pos)> = Default::default();
        for inst in train_set.iter().chain(extra_sets.iter().flat_map(|s| s.iter())) {
            for tok in inst.tokens() {
                if seen_set.insert(tok.clone()) {
                    table.ground_token(&tok.0, tok.1);
                    seen.push(tok);
                }
            }
        }
        for name in table.concepts().iter() {
            vocab.add_concept(name);
        }

        let mut model = Model {
            mode,
            context_variant,
            dims,
            vocab,
            store: ParameterStore::new(seed),
            grids: HashMap::new(),
        };
        model.define_parameters()?;
        for (w, p) in seen {
            model.prepare_token(table, &w, p);
        }
        Ok(model)
    }

    /// Reassemble a model from checkpoint parts. Token grids must be
    /// prepared against a grounding table before scoring.
    pub fn from_parts(
        mode: Mode,
        context_variant: ContextVariant,
        dims: ModelDims,
        mut vocab: ModelVocab,
        store: ParameterStore<S>,
    ) -> Self {
        vocab.reindex();
        Model { mode, context_variant, dims, vocab, store, grids: HashMap::new() }
    }

    fn context_width(&self) -> usize {
        self.context_variant.context_width(self.dims.embed_dim, self.dims.hidden_dim)
    }

    fn define_parameters(&mut self) -> Result<()> {
        let d = self.dims;
        let store = &mut self.store;
        let ctx_w = self.context_variant.context_width(d.embed_dim, d.hidden_dim);
        if self.mode == Mode::Baseline {
            let mut rng = store.rng(1);
            store.define_uniform(
                "words",
                vec![self.vocab.words.len(), d.embed_dim],
                -0.05,
                0.05,
                &mut rng,
            )?;
        } else {
            let mut rng = store.rng(2);
            store.define_uniform(
                "concepts",
                vec![self.vocab.concepts.len(), d.embed_dim],
                -0.05,
                0.05,
                &mut rng,
            )?;
            let mut rng = store.rng(3);
            store.define_uniform("lambda", vec![self.vocab.words.len(), 1], 0.0, 1.0, &mut rng)?;
            let mut rng = store.rng(4);
            AttentionVars::define(store, "attn.f", d.embed_dim + ctx_w, d.attn_hidden, &mut rng)?;
            AttentionVars::define(store, "attn.b", d.embed_dim + ctx_w, d.attn_hidden, &mut rng)?;
        }
        let mut rng = store.rng(5);
        LstmVars::define(store, "lstm.f", d.embed_dim, d.hidden_dim, &mut rng)?;
        LstmVars::define(store, "lstm.b", d.embed_dim, d.hidden_dim, &mut rng)?;
        let mut rng = store.rng(6);
        let mut in_width = 3 * 2 * d.hidden_dim;
        for layer in 0..d.attach_depth {
            store.define_glorot(&format!("attach.l{layer}.w"), in_width, d.attach_hidden, &mut rng)?;
            store.define(&format!("attach.l{layer}.b"), Tensor::zeros(vec![d.attach_hidden]))?;
            in_width = d.attach_hidden;
        }
        store.define_glorot("attach.out.w", in_width, 1, &mut rng)?;
        store.define("attach.out.b", Tensor::zeros(vec![1]))?;
        Ok(())
    }

    /// Overwrite concept rows with pretrained vectors where available.
    pub fn apply_pretrained(
        &mut self,
        vectors: &HashMap<String, Vec<f64>>,
        dim: usize,
    ) -> Result<crate::embedding::VectorLoadReport> {
        if self.mode == Mode::Baseline {
            return Err(Error::Config {
                detail: "pretrained concept vectors apply to ontology modes only".into(),
            });
        }
        if dim != self.dims.embed_dim {
            return Err(Error::Config {
                detail: format!(
                    "pretrained vectors have width {dim}, model embeds at {}",
                    self.dims.embed_dim
                ),
            });
        }
        let mut matrix = self.store.value("concepts")?.clone();
        let mut hits = 0;
        let mut misses = 0;
        let cols = matrix.cols();
        for (row, name) in self.vocab.concepts.iter().enumerate() {
            match vectors.get(name) {
                Some(v) => {
                    hits += 1;
                    for (j, &x) in v.iter().enumerate() {
                        matrix.data_mut()[row * cols + j] = S::from_float(x);
                    }
                }
                None => misses += 1,
            }
        }
        self.store.set_value("concepts", matrix)?;
        Ok(crate::embedding::VectorLoadReport { hits, misses })
    }

    /// Ground one token and cache its grid, translating concept ids to
    /// embedding rows by name; unseen concepts fall back to the reserved
    /// row 0.
    fn prepare_token(&mut self, table: &mut GroundingTable, word: &str, pos: Pos) {
        let key = (word.to_string(), pos);
        if self.grids.contains_key(&key) {
            return;
        }
        let grid = table.ground_token(word, pos);
        let resolved = ResolvedGrid::from_token_grid(&grid, |cid| {
            self.vocab.concept_row(table.concepts().name(cid))
        });
        self.grids.insert(key, resolved);
    }

    /// Ground and cache every token of `instances`.
    pub fn prepare_dataset(&mut self, table: &mut GroundingTable, instances: &[PPAInstance]) {
        table.set_caps(self.dims.s_max, self.dims.h_max).expect("validated dims");
        for inst in instances {
            for (w, p) in inst.tokens() {
                self.prepare_token(table, &w, p);
            }
        }
    }

    pub fn grid(&self, word: &str, pos: Pos) -> Option<&ResolvedGrid> {
        self.grids.get(&(word.to_string(), pos))
    }

    /// Raw sense-decay parameter for a word: its trained row, or a constant
    /// (decay 1.0) for words outside the training vocabulary.
    fn lambda_var(
        &self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        word: &str,
    ) -> Result<Var> {
        if self.vocab.knows_word(word) {
            let mat = tape.param(store, "lambda")?;
            let row = tape.gather_rows(mat, &[self.vocab.word_row(word)])?;
            tape.reshape(row, vec![])
        } else {
            Ok(tape.constant(Tensor::scalar(S::from_float(DEFAULT_LAMBDA_RAW))))
        }
    }

    /// Score every candidate head: probabilities plus the encoded sequence
    /// (with retained concept distributions for the ontology modes).
    pub fn score_instance(
        &self,
        tape: &mut Tape<S>,
        inst: &PPAInstance,
    ) -> Result<(Var, EncodedSequence)> {
        self.score_with_store(tape, &self.store, inst)
    }

    /// Like [`Model::score_instance`] but against an explicit parameter
    /// store (the finite-difference oracle perturbs a store it owns).
    pub fn score_with_store(
        &self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        inst: &PPAInstance,
    ) -> Result<(Var, EncodedSequence)> {
        inst.validate()?;
        let tokens = inst.tokens();
        let k = inst.candidates.len();

        let seq = match self.mode.embed_mode() {
            None => {
                let words = tape.param(store, "words")?;
                let fwd = LstmVars::from_store(tape, store, "lstm.f")?;
                let bwd = LstmVars::from_store(tape, store, "lstm.b")?;
                encode(
                    tape,
                    tokens.len(),
                    self.dims.hidden_dim,
                    self.context_width(),
                    self.context_variant,
                    &fwd,
                    &bwd,
                    |tape, i, _dir, _ctx| {
                        let row = self.vocab.word_row(&tokens[i].0);
                        let picked = tape.gather_rows(words, &[row])?;
                        let x = tape.reshape(picked, vec![self.dims.embed_dim])?;
                        Ok((x, None))
                    },
                )?
            }
            Some(embed_mode) => {
                let concepts = tape.param(store, "concepts")?;
                let attn_f = AttentionVars::from_store(tape, store, "attn.f")?;
                let attn_b = AttentionVars::from_store(tape, store, "attn.b")?;
                let fwd = LstmVars::from_store(tape, store, "lstm.f")?;
                let bwd = LstmVars::from_store(tape, store, "lstm.b")?;
                let mut lambdas: Vec<Option<Var>> = vec![None; tokens.len()];
                if embed_mode != EmbedMode::NoPrior {
                    for (i, (w, _)) in tokens.iter().enumerate() {
                        lambdas[i] = Some(self.lambda_var(tape, store, w)?);
                    }
                }
                let grids: Vec<&ResolvedGrid> = tokens
                    .iter()
                    .map(|(w, p)| {
                        self.grid(w, *p).ok_or_else(|| Error::Data {
                            detail: format!("token (\"{w}\", {p}) was not prepared"),
                        })
                    })
                    .collect::<Result<_>>()?;
                encode(
                    tape,
                    tokens.len(),
                    self.dims.hidden_dim,
                    self.context_width(),
                    self.context_variant,
                    &fwd,
                    &bwd,
                    |tape, i, dir, ctx| {
                        let net = match dir {
                            Direction::Forward => &attn_f,
                            Direction::Backward => &attn_b,
                        };
                        let (u, dist) = embed_token(
                            tape,
                            grids[i],
                            concepts,
                            lambdas[i],
                            ctx,
                            net,
                            embed_mode,
                        )?;
                        Ok((u, Some(dist)))
                    },
                )?
            }
        };

        let prep_out = seq.outputs[k];
        let dep_out = seq.outputs[k + 1];
        let mut logits = Vec::with_capacity(k);
        for cand in 0..k {
            let x = tape.concat(0, &[seq.outputs[cand], prep_out, dep_out])?;
            let mut z = x;
            for layer in 0..self.dims.attach_depth {
                let w = tape.param(store, &format!("attach.l{layer}.w"))?;
                let b = tape.param(store, &format!("attach.l{layer}.b"))?;
                let zw = tape.matmul(z, w)?;
                let zb = tape.add(zw, b)?;
                z = tape.tanh(zb)?;
            }
            let w = tape.param(store, "attach.out.w")?;
            let b = tape.param(store, "attach.out.b")?;
            let zw = tape.matmul(z, w)?;
            let logit = tape.add(zw, b)?;
            logits.push(logit);
        }
        let logits = tape.concat(0, &logits)?;
        let probs = tape.masked_softmax(logits, None)?;
        Ok((probs, seq))
    }

    /// Cross-entropy loss of one instance: `-ln p[gold]`.
    pub fn instance_loss(&self, tape: &mut Tape<S>, inst: &PPAInstance) -> Result<Var> {
        let (probs, _) = self.score_instance(tape, inst)?;
        tape.cross_entropy(probs, inst.gold)
    }

    /// Instance loss against an explicit parameter store.
    pub fn loss_with_store(
        &self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        inst: &PPAInstance,
    ) -> Result<Var> {
        let (probs, _) = self.score_with_store(tape, store, inst)?;
        tape.cross_entropy(probs, inst.gold)
    }

    /// Mean loss over a batch, on one tape.
    pub fn batch_loss(&self, tape: &mut Tape<S>, batch: &[PPAInstance]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Data { detail: "empty batch".into() });
        }
        let mut losses = Vec::with_capacity(batch.len());
        for inst in batch {
            losses.push(self.instance_loss(tape, inst)?);
        }
        let total = tape.concat(0, &losses)?;
        let sum = tape.sum(total)?;
        tape.scale(sum, S::from_float(1.0 / batch.len() as f64))
    }

    /// Candidate probabilities of one instance, on a fresh tape.
    pub fn probabilities(&self, inst: &PPAInstance) -> Result<Vec<S>> {
        let mut tape = Tape::new();
        let (probs, _) = self.score_instance(&mut tape, inst)?;
        Ok(tape.value(probs).data().to_vec())
    }

    /// Predicted head index for one instance.
    pub fn predict_instance(&self, inst: &PPAInstance) -> Result<usize> {
        Ok(predict(&self.probabilities(inst)?))
    }

    /// Rows of the embedding table this variant trains (concept rows for the
    /// ontology modes, word rows for the baseline).
    pub fn embedding_rows(&self) -> usize {
        if self.mode == Mode::Baseline {
            self.vocab.words.len()
        } else {
            self.vocab.concepts.len()
        }
    }
}

/// Reporting group of a parameter name (`attn.f.l1.w` -> `attn.f`).
pub fn param_group(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts[0] {
        "attn" | "lstm" if parts.len() >= 2 => format!("{}.{}", parts[0], parts[1]),
        _ => parts[0].to_string(),
    }
}
