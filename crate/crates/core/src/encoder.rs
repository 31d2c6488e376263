//! Bidirectional LSTM encoder whose per-direction inputs are produced by a
//! caller-supplied function of (position, direction, context vector).
//!
//! The context handed to the input function is direction-specific: the
//! previous hidden state of the same direction by default, or the previous
//! input vector of the same direction under the `prev-input` variant. Both
//! ground out at a zero vector on the sequence boundary.

use serde::{Deserialize, Serialize};

use crate::embedding::ConceptDistribution;
use crate::error::{Error, Result};
use crate::ndmath::{ParameterStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// What the direction-specific context vector is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextVariant {
    /// Previous hidden state of the same direction (zero at the boundary).
    #[serde(rename = "prev-hidden")]
    PrevHidden,
    /// Previous input vector of the same direction (zero at the boundary).
    #[serde(rename = "prev-input")]
    PrevInput,
}

impl ContextVariant {
    /// Width of the context vector under this variant.
    pub fn context_width(self, embed_dim: usize, hidden_dim: usize) -> usize {
        match self {
            ContextVariant::PrevHidden => hidden_dim,
            ContextVariant::PrevInput => embed_dim,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContextVariant::PrevHidden => "prev-hidden",
            ContextVariant::PrevInput => "prev-input",
        }
    }
}

impl std::str::FromStr for ContextVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prev-hidden" => Ok(ContextVariant::PrevHidden),
            "prev-input" => Ok(ContextVariant::PrevInput),
            other => Err(Error::Config { detail: format!("unknown context variant `{other}`") }),
        }
    }
}

impl std::fmt::Display for ContextVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Tape handles to one direction's LSTM gate parameters.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_i: Var,
    pub u_i: Var,
    pub b_i: Var,
    pub w_f: Var,
    pub u_f: Var,
    pub b_f: Var,
    pub w_g: Var,
    pub u_g: Var,
    pub b_g: Var,
    pub w_o: Var,
    pub u_o: Var,
    pub b_o: Var,
}

impl LstmVars {
    /// Define one direction's gate parameters: Glorot-uniform weights, zero
    /// biases except the forget-gate bias at 1.0.
    pub fn define<S: Scalar>(
        store: &mut ParameterStore<S>,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<()> {
        for gate in ["i", "f", "g", "o"] {
            store.define_glorot(&format!("{prefix}.w{gate}"), input_dim, hidden_dim, rng)?;
            store.define_glorot(&format!("{prefix}.u{gate}"), hidden_dim, hidden_dim, rng)?;
            let bias = if gate == "f" {
                Tensor::filled(vec![hidden_dim], S::one())
            } else {
                Tensor::zeros(vec![hidden_dim])
            };
            store.define(&format!("{prefix}.b{gate}"), bias)?;
        }
        Ok(())
    }

    pub fn from_store<S: Scalar>(
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        prefix: &str,
    ) -> Result<Self> {
        Ok(LstmVars {
            w_i: tape.param(store, &format!("{prefix}.wi"))?,
            u_i: tape.param(store, &format!("{prefix}.ui"))?,
            b_i: tape.param(store, &format!("{prefix}.bi"))?,
            w_f: tape.param(store, &format!("{prefix}.wf"))?,
            u_f: tape.param(store, &format!("{prefix}.uf"))?,
            b_f: tape.param(store, &format!("{prefix}.bf"))?,
            w_g: tape.param(store, &format!("{prefix}.wg"))?,
            u_g: tape.param(store, &format!("{prefix}.ug"))?,
            b_g: tape.param(store, &format!("{prefix}.bg"))?,
            w_o: tape.param(store, &format!("{prefix}.wo"))?,
            u_o: tape.param(store, &format!("{prefix}.uo"))?,
            b_o: tape.param(store, &format!("{prefix}.bo"))?,
        })
    }
}

/// One LSTM step: sigmoid input/forget/output gates, tanh candidate,
/// `c' = f.c + i.g`, `h' = o.tanh(c')`.
pub fn lstm_cell<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    h: Var,
    c: Var,
    p: &LstmVars,
) -> Result<(Var, Var)> {
    let gate = |tape: &mut Tape<S>, w: Var, u: Var, b: Var| -> Result<Var> {
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h, u)?;
        let s = tape.add(xw, hu)?;
        tape.add(s, b)
    };
    let i = gate(tape, p.w_i, p.u_i, p.b_i)?;
    let i = tape.sigmoid(i)?;
    let f = gate(tape, p.w_f, p.u_f, p.b_f)?;
    let f = tape.sigmoid(f)?;
    let g = gate(tape, p.w_g, p.u_g, p.b_g)?;
    let g = tape.tanh(g)?;
    let o = gate(tape, p.w_o, p.u_o, p.b_o)?;
    let o = tape.sigmoid(o)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next)?;
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Per-position encoder outputs. `outputs[i]` is the concatenation of the
/// forward and backward hidden states at `i` (width `2h`). The per-direction
/// concept distributions are retained for inspection when the input function
/// provides them.
#[derive(Debug)]
pub struct EncodedSequence {
    pub outputs: Vec<Var>,
    pub forward_h: Vec<Var>,
    pub backward_h: Vec<Var>,
    pub forward_dist: Vec<Option<ConceptDistribution>>,
    pub backward_dist: Vec<Option<ConceptDistribution>>,
}

/// Run the bi-LSTM over `len` positions. `input_at(tape, i, dir, context)`
/// produces the direction-specific input vector for position `i` (and,
/// for ontology-grounded inputs, the concept distribution behind it).
#[allow(clippy::too_many_arguments)]
pub fn encode<S: Scalar, F>(
    tape: &mut Tape<S>,
    len: usize,
    hidden_dim: usize,
    ctx_width: usize,
    variant: ContextVariant,
    forward: &LstmVars,
    backward: &LstmVars,
    mut input_at: F,
) -> Result<EncodedSequence>
where
    F: FnMut(&mut Tape<S>, usize, Direction, Var) -> Result<(Var, Option<ConceptDistribution>)>,
{
    if len == 0 {
        return Err(Error::Data { detail: "cannot encode an empty sequence".into() });
    }
    let zero_ctx = tape.constant(Tensor::zeros(vec![ctx_width]));
    let zero_h = tape.constant(Tensor::zeros(vec![hidden_dim]));

    let run = |tape: &mut Tape<S>,
                   dir: Direction,
                   order: Vec<usize>,
                   params: &LstmVars,
                   input_at: &mut F|
     -> Result<(Vec<Var>, Vec<Option<ConceptDistribution>>)> {
        let mut hidden = vec![zero_h; len];
        let mut dists: Vec<Option<ConceptDistribution>> = (0..len).map(|_| None).collect();
        let mut h = zero_h;
        let mut c = zero_h;
        let mut prev_input: Option<Var> = None;
        for &i in &order {
            let ctx = match variant {
                ContextVariant::PrevHidden => h,
                ContextVariant::PrevInput => prev_input.unwrap_or(zero_ctx),
            };
            let (x, dist) = input_at(tape, i, dir, ctx)?;
            let (h_next, c_next) = lstm_cell(tape, x, h, c, params)?;
            h = h_next;
            c = c_next;
            hidden[i] = h;
            dists[i] = dist;
            prev_input = Some(x);
        }
        Ok((hidden, dists))
    };

    let (forward_h, forward_dist) =
        run(tape, Direction::Forward, (0..len).collect(), forward, &mut input_at)?;
    let (backward_h, backward_dist) =
        run(tape, Direction::Backward, (0..len).rev().collect(), backward, &mut input_at)?;

    let mut outputs = Vec::with_capacity(len);
    for i in 0..len {
        outputs.push(tape.concat(0, &[forward_h[i], backward_h[i]])?);
    }
    Ok(EncodedSequence { outputs, forward_h, backward_h, forward_dist, backward_dist })
}
