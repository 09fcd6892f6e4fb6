use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{forward_eager, Graph, OpKind, Ops, Program};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    /// Run every kernel in `f32`, as training does.
    Single,
    /// Shadow mode: re-run every kernel in `f64` to separate truncation error from round-off.
    Double,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckRole {
    /// Compared, and counts toward pass/fail.
    Checked,
    /// Compared and reported, but excluded from pass/fail.
    Frozen,
    /// Data such as targets; never perturbed.
    Constant,
}

#[derive(Clone, Debug)]
pub struct CheckInput {
    pub name: String,
    pub value: Tensor<f32>,
    pub role: CheckRole,
}

impl CheckInput {
    pub fn new(name: impl Into<String>, value: Tensor<f32>, role: CheckRole) -> Self {
        CheckInput {
            name: name.into(),
            value,
            role,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    pub precision: Precision,
    /// Compare at most this many randomly chosen elements per input.
    pub max_elements: Option<usize>,
    pub seed: u64,
    #[doc(hidden)]
    pub fault: Option<OpKind>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-2,
            tolerance: 1e-2,
            precision: Precision::Single,
            max_elements: None,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub frozen: bool,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat index, analytic and numeric value of the worst element.
    pub worst: (usize, f64, f64),
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<ParamCheck>,
    pub epsilon: f64,
    pub tolerance: f64,
    pub precision: Precision,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries
            .iter()
            .filter(|e| !e.frozen)
            .all(|e| e.max_rel_error < self.tolerance)
    }

    /// Largest relative error among non-frozen entries.
    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| !e.frozen)
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            let status = if e.frozen {
                "frozen"
            } else if e.max_rel_error < self.tolerance {
                "ok"
            } else {
                "FAIL"
            };
            writeln!(
                f,
                "  {:<36} {:>6} elems  max rel err {:.3e}  [{status}]",
                e.name, e.checked, e.max_rel_error
            )?;
        }
        Ok(())
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar-valued `program` against
/// central differences `(f(θ+ε) − f(θ−ε)) / 2ε`.
pub fn grad_check<P: Program>(program: &P, inputs: &[CheckInput], opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if !(opts.epsilon.is_finite() && opts.epsilon > 0.0) {
        return Err(Error::Usage(format!("epsilon must be positive, got {}", opts.epsilon)));
    }
    let entries = match opts.precision {
        Precision::Single => check_in::<f32, P>(program, inputs, opts)?,
        Precision::Double => check_in::<f64, P>(program, inputs, opts)?,
    };
    Ok(GradCheckReport {
        entries,
        epsilon: opts.epsilon,
        tolerance: opts.tolerance,
        precision: opts.precision,
    })
}

fn scalar_of<T: Element>(t: &Tensor<T>) -> Result<f64> {
    if t.len() != 1 {
        return Err(Error::Usage(format!(
            "gradient check needs a scalar output, got shape {}",
            t.shape()
        )));
    }
    Ok(t.data()[0].to_f64())
}

fn check_in<T: Element, P: Program>(program: &P, inputs: &[CheckInput], opts: &GradCheckOptions) -> Result<Vec<ParamCheck>> {
    let values: Vec<Tensor<T>> = inputs.iter().map(|i| i.value.cast::<T>()).collect();

    let mut tape = Graph::<T>::new();
    tape.inject_fault(opts.fault);
    let leaves: Vec<_> = values.iter().map(|v| tape.input(v.clone())).collect();
    let out = program.run(&mut tape, &leaves)?;
    scalar_of(tape.value(&out))?;
    let grads = tape.backward(out, &Tensor::scalar(T::from_f64(1.0)))?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        if input.role == CheckRole::Constant {
            continue;
        }
        let len = values[i].len();
        let indices: Vec<usize> = match opts.max_elements {
            Some(m) if m < len => {
                let mut v = index::sample(&mut rng, len, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let analytic = grads.get(leaves[i]);
        let mut worst = (0, 0.0, 0.0);
        let mut max_rel: f64 = 0.0;
        let mut perturbed = values.clone();
        for &idx in &indices {
            let x = values[i].data()[idx].to_f64();
            let plus = T::from_f64(x + opts.epsilon);
            let minus = T::from_f64(x - opts.epsilon);
            perturbed[i].data_mut()[idx] = plus;
            let fp = scalar_of(&forward_eager(program, &perturbed)?)?;
            perturbed[i].data_mut()[idx] = minus;
            let fm = scalar_of(&forward_eager(program, &perturbed)?)?;
            perturbed[i].data_mut()[idx] = values[i].data()[idx];

            let numeric = (fp - fm) / (plus.to_f64() - minus.to_f64());
            let a = analytic.map_or(0.0, |g| g.data()[idx].to_f64());
            let rel = relative_error(a, numeric);
            if rel >= max_rel {
                max_rel = rel;
                worst = (idx, a, numeric);
            }
        }
        entries.push(ParamCheck {
            name: input.name.clone(),
            frozen: input.role == CheckRole::Frozen,
            checked: indices.len(),
            max_rel_error: max_rel,
            worst,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Conv2dSpec;

    /// L1 of a 1×1 convolution against a far-away target: linear in the weights.
    struct Linear;
    impl Program for Linear {
        fn run<T: Element, O: Ops<T>>(&self, ops: &mut O, i: &[O::Value]) -> Result<O::Value> {
            let y = ops.conv2d(&i[0], &i[1], &i[2], Conv2dSpec::pointwise())?;
            ops.l1_loss(&y, &i[3])
        }
    }

    fn linear_inputs(weight_role: CheckRole) -> Vec<CheckInput> {
        vec![
            CheckInput::new("x", Tensor::new([1, 2, 1, 2], vec![0.5, -0.25, 1.0, 0.75]).unwrap(), CheckRole::Checked),
            CheckInput::new("w", Tensor::new([1, 2, 1, 1], vec![0.3, -0.6]).unwrap(), weight_role),
            CheckInput::new("b", Tensor::vector(vec![0.1]).unwrap(), CheckRole::Checked),
            CheckInput::new("target", Tensor::full([1, 1, 1, 2], 10.0), CheckRole::Constant),
        ]
    }

    #[test]
    fn linear_function_matches_closely() {
        let opts = GradCheckOptions { precision: Precision::Double, ..Default::default() };
        let r = grad_check(&Linear, &linear_inputs(CheckRole::Checked), &opts).unwrap();
        assert!(r.max_rel_error() < 1e-6, "{r}");
        assert_eq!(r.entries.len(), 3);
    }

    #[test]
    fn frozen_entries_are_reported_but_ignored() {
        let opts = GradCheckOptions { fault: Some(OpKind::Conv2d), ..Default::default() };
        let mut inputs = linear_inputs(CheckRole::Frozen);
        inputs[0].role = CheckRole::Frozen;
        inputs[2].role = CheckRole::Frozen;
        let r = grad_check(&Linear, &inputs, &opts).unwrap();
        assert!(r.entries.iter().all(|e| e.frozen));
        assert!(r.entries[1].max_rel_error > 0.1);
        assert!(r.passed());
    }

    #[test]
    fn injected_fault_is_caught() {
        let opts = GradCheckOptions { fault: Some(OpKind::Conv2d), ..Default::default() };
        let r = grad_check(&Linear, &linear_inputs(CheckRole::Checked), &opts).unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn non_scalar_output_and_bad_epsilon_are_usage_errors() {
        struct Raw;
        impl Program for Raw {
            fn run<T: Element, O: Ops<T>>(&self, ops: &mut O, i: &[O::Value]) -> Result<O::Value> {
                ops.relu(&i[0])
            }
        }
        let inputs = [CheckInput::new("x", Tensor::full([1, 1, 2, 2], 1.0), CheckRole::Checked)];
        assert!(matches!(grad_check(&Raw, &inputs, &Default::default()), Err(Error::Usage(_))));
        let opts = GradCheckOptions { epsilon: 0.0, ..Default::default() };
        assert!(matches!(grad_check(&Linear, &linear_inputs(CheckRole::Checked), &opts), Err(Error::Usage(_))));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 0.5) - 0.5).abs() < 1e-15);
    }
}
