//! Finite-difference agreement for every taped primitive, at 100 random
//! points each. The loss is a fixed random linear functional of the
//! primitive's output so that every output entry influences the scalar.


use ontoppa_core::ndmath::{finite_difference_check, ParameterStore, Tape, Tensor, Var};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

const POINTS: usize = 100;
const TOLERANCE: f64 = 1e-4;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Weights bounded away from zero so no output direction is lost.
fn probe_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let sign = if rng.random_range(0..2) == 0 { -1.0 } else { 1.0 };
            sign * rng.random_range(0.5..1.5)
        })
        .collect()
}

/// Check one primitive: `inputs` are (name, shape) parameter specs and
/// `build` wires them into the op under test.
fn check_primitive(
    label: &str,
    seed: u64,
    inputs: &[(&str, Vec<usize>)],
    range: (f64, f64),
    build: impl Fn(&mut Tape<f64>, &[Var]) -> ontoppa_core::Result<Var>,
) {
    for point in 0..POINTS {
        let mut store = ParameterStore::<f64>::new(seed.wrapping_add(point as u64));
        let mut rng = store.rng(1);
        for (name, shape) in inputs {
            let numel: usize = shape.iter().product();
            let data = rand_vec(&mut rng, numel, range.0, range.1);
            store
                .define(name, Tensor::new(shape.clone(), data).unwrap())
                .unwrap();
        }
        let out_probe = std::cell::RefCell::new(None::<Vec<f64>>);
        let report = finite_difference_check(&mut store, 1e-5, 200, |tape, store| {
            let vars: Vec<Var> = inputs
                .iter()
                .map(|(name, _)| tape.param(store, name))
                .collect::<ontoppa_core::Result<_>>()?;
            let out = build(tape, &vars)?;
            let numel = tape.value(out).numel();
            let mut probe = out_probe.borrow_mut();
            let weights = probe
                .get_or_insert_with(|| {
                    let mut wrng = store.rng(2);
                    probe_weights(&mut wrng, numel)
                })
                .clone();
            let w = tape.constant(Tensor::new(tape.value(out).shape().to_vec(), weights)?);
            let weighted = tape.mul(out, w)?;
            tape.sum(weighted)
        })
        .unwrap();
        assert!(
            report.all_within(TOLERANCE),
            "{label}, point {point}: max rel err {}",
            report.max_rel_err()
        );
    }
}

#[test]
fn matmul_matrix_matrix() {
    check_primitive(
        "matmul [3,4]x[4,2]",
        100,
        &[("a", vec![3, 4]), ("b", vec![4, 2])],
        (-1.5, 1.5),
        |tape, v| tape.matmul(v[0], v[1]),
    );
}

#[test]
fn matmul_vector_matrix() {
    check_primitive(
        "matmul [4]x[4,3]",
        101,
        &[("a", vec![4]), ("b", vec![4, 3])],
        (-1.5, 1.5),
        |tape, v| tape.matmul(v[0], v[1]),
    );
}

#[test]
fn matmul_matrix_vector() {
    check_primitive(
        "matmul [3,4]x[4]",
        102,
        &[("a", vec![3, 4]), ("b", vec![4])],
        (-1.5, 1.5),
        |tape, v| tape.matmul(v[0], v[1]),
    );
}

#[test]
fn add_same_shape_and_broadcasts() {
    check_primitive(
        "add [2,3]+[2,3]",
        103,
        &[("a", vec![2, 3]), ("b", vec![2, 3])],
        (-2.0, 2.0),
        |tape, v| tape.add(v[0], v[1]),
    );
    check_primitive(
        "add [2,3]+[3] row broadcast",
        104,
        &[("a", vec![2, 3]), ("b", vec![3])],
        (-2.0, 2.0),
        |tape, v| tape.add(v[0], v[1]),
    );
    check_primitive(
        "add scalar+[5]",
        105,
        &[("a", vec![1]), ("b", vec![5])],
        (-2.0, 2.0),
        |tape, v| tape.add(v[0], v[1]),
    );
}

#[test]
fn mul_same_shape_and_broadcasts() {
    check_primitive(
        "mul [2,3]*[2,3]",
        106,
        &[("a", vec![2, 3]), ("b", vec![2, 3])],
        (0.25, 2.0),
        |tape, v| tape.mul(v[0], v[1]),
    );
    check_primitive(
        "mul [2,3]*[3] row broadcast",
        107,
        &[("a", vec![2, 3]), ("b", vec![3])],
        (0.25, 2.0),
        |tape, v| tape.mul(v[0], v[1]),
    );
    check_primitive(
        "mul scalar*[5]",
        108,
        &[("a", vec![1]), ("b", vec![5])],
        (0.25, 2.0),
        |tape, v| tape.mul(v[0], v[1]),
    );
}

#[test]
fn scale_by_constant() {
    check_primitive("scale", 109, &[("a", vec![2, 3])], (-2.0, 2.0), |tape, v| {
        tape.scale(v[0], -0.7)
    });
}

#[test]
fn concat_both_axes() {
    check_primitive(
        "concat axis 0 vectors",
        110,
        &[("a", vec![3]), ("b", vec![2]), ("c", vec![4])],
        (-1.0, 1.0),
        |tape, v| tape.concat(0, v),
    );
    check_primitive(
        "concat axis 1 matrices",
        111,
        &[("a", vec![2, 3]), ("b", vec![2, 2])],
        (-1.0, 1.0),
        |tape, v| tape.concat(1, v),
    );
    check_primitive(
        "concat axis 0 matrices",
        112,
        &[("a", vec![2, 3]), ("b", vec![1, 3])],
        (-1.0, 1.0),
        |tape, v| tape.concat(0, v),
    );
}

#[test]
fn pointwise_nonlinearities() {
    check_primitive("tanh", 113, &[("a", vec![6])], (-2.0, 2.0), |tape, v| tape.tanh(v[0]));
    check_primitive("sigmoid", 114, &[("a", vec![6])], (-2.0, 2.0), |tape, v| {
        tape.sigmoid(v[0])
    });
    check_primitive("exp", 115, &[("a", vec![6])], (-1.5, 1.0), |tape, v| tape.exp(v[0]));
    check_primitive("softplus", 116, &[("a", vec![6])], (-2.0, 2.0), |tape, v| {
        tape.softplus(v[0])
    });
}

#[test]
fn masked_softmax_with_and_without_mask() {
    check_primitive("masked_softmax no mask", 117, &[("a", vec![5])], (-2.0, 2.0), |tape, v| {
        tape.masked_softmax(v[0], None)
    });
    let mask = [true, false, true, true, false, true];
    check_primitive("masked_softmax with mask", 118, &[("a", vec![6])], (-2.0, 2.0), |tape, v| {
        tape.masked_softmax(v[0], Some(&mask))
    });
}

#[test]
fn masked_normalize_with_and_without_mask() {
    check_primitive("masked_normalize no mask", 119, &[("a", vec![5])], (0.2, 2.0), |tape, v| {
        tape.masked_normalize(v[0], None)
    });
    let mask = [false, true, true, false, true, true];
    check_primitive(
        "masked_normalize with mask",
        120,
        &[("a", vec![6])],
        (0.2, 2.0),
        |tape, v| tape.masked_normalize(v[0], Some(&mask)),
    );
}

#[test]
fn sum_all_entries() {
    check_primitive("sum", 121, &[("a", vec![2, 4])], (-2.0, 2.0), |tape, v| {
        let s = tape.sum(v[0])?;
        // Compose through tanh so the probe is not a constant direction.
        tape.tanh(s)
    });
}

#[test]
fn gather_and_repeat_rows() {
    check_primitive("gather_rows", 122, &[("a", vec![4, 3])], (-1.5, 1.5), |tape, v| {
        tape.gather_rows(v[0], &[2, 0, 2, 3])
    });
    check_primitive("repeat_rows", 123, &[("a", vec![4])], (-1.5, 1.5), |tape, v| {
        tape.repeat_rows(v[0], 3)
    });
}

#[test]
fn reshape_is_transparent() {
    check_primitive("reshape", 124, &[("a", vec![2, 6])], (-1.5, 1.5), |tape, v| {
        tape.reshape(v[0], vec![3, 4])
    });
}

#[test]
fn cross_entropy_from_probabilities() {
    // Keep the gold probability well away from zero.
    check_primitive("cross_entropy", 125, &[("a", vec![4])], (0.3, 1.0), |tape, v| {
        let p = tape.masked_normalize(v[0], None)?;
        tape.cross_entropy(p, 2)
    });
}
