//! Seeded gradient-check cases for every differentiable kernel.
//!
//! Each case ends in the absolute-error loss against a target placed far from
//! the nominal output, so no residual changes sign under a perturbation of
//! size ε. Inputs to the kinked ops (relu, max pool) are drawn away from their
//! kinks for the same reason.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{forward_eager, grad_check, CheckInput, CheckRole, GradCheckOptions, GradCheckReport, Ops, Program};
use crate::error::Result;
use crate::tensor::{BatchNormMode, Conv2dSpec, Element, Shape, Tensor, TransposeConv2dSpec, BN_EPSILON, BN_MOMENTUM};

/// Minimum distance between a nominal output and its loss target.
const TARGET_MARGIN: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpCase {
    Conv2d,
    TransposeConv2d,
    AvgPool2d,
    MaxPool2d,
    Relu,
    Sigmoid,
    BatchNormTrain,
    BatchNormInfer,
    L1Loss,
    /// conv → avg pool → sigmoid → loss.
    TinyNet,
}

impl OpCase {
    pub const ALL: [OpCase; 10] = [
        OpCase::Conv2d,
        OpCase::TransposeConv2d,
        OpCase::AvgPool2d,
        OpCase::MaxPool2d,
        OpCase::Relu,
        OpCase::Sigmoid,
        OpCase::BatchNormTrain,
        OpCase::BatchNormInfer,
        OpCase::L1Loss,
        OpCase::TinyNet,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OpCase::Conv2d => "conv2d",
            OpCase::TransposeConv2d => "transpose_conv2d",
            OpCase::AvgPool2d => "avg_pool2d",
            OpCase::MaxPool2d => "max_pool2d",
            OpCase::Relu => "relu",
            OpCase::Sigmoid => "sigmoid",
            OpCase::BatchNormTrain => "batch_norm[train]",
            OpCase::BatchNormInfer => "batch_norm[infer]",
            OpCase::L1Loss => "l1_loss",
            OpCase::TinyNet => "conv-avgpool-sigmoid-l1",
        }
    }
}

impl OpCase {
    /// Cases whose targets all sit below the output. With the positive
    /// inputs and kernels drawn for them, every gradient entry then has the
    /// same sign and none is lost to cancellation below the f32 noise floor.
    /// Batch norm must not use this: a uniform seed has zero gradient
    /// through a shift-and-scale-invariant normalization.
    fn one_sided(&self) -> bool {
        matches!(self, OpCase::Conv2d | OpCase::TransposeConv2d | OpCase::TinyNet)
    }
}

/// One seeded instance of an [`OpCase`]: the program plus its inputs.
pub struct CaseInstance {
    pub label: String,
    pub program: CaseProgram,
    pub inputs: Vec<CheckInput>,
}

pub struct CaseProgram {
    case: OpCase,
    conv: Conv2dSpec,
    running: Option<(Tensor<f32>, Tensor<f32>)>,
}

impl CaseProgram {
    /// The op under test, without the loss head.
    fn body<T: Element, O: Ops<T>>(&self, ops: &mut O, i: &[O::Value]) -> Result<O::Value> {
        match self.case {
            OpCase::Conv2d => ops.conv2d(&i[0], &i[1], &i[2], self.conv),
            OpCase::TransposeConv2d => ops.transpose_conv2d(&i[0], &i[1], &i[2], TransposeConv2dSpec::default()),
            OpCase::AvgPool2d => ops.avg_pool2d(&i[0]),
            OpCase::MaxPool2d => ops.max_pool2d(&i[0]),
            OpCase::Relu => ops.relu(&i[0]),
            OpCase::Sigmoid => ops.sigmoid(&i[0]),
            OpCase::BatchNormTrain | OpCase::BatchNormInfer => {
                let mode = if self.case == OpCase::BatchNormTrain { BatchNormMode::Train } else { BatchNormMode::Infer };
                let (rm, rv) = self.running.as_ref().expect("batch norm case carries running stats");
                let (y, _, _) = ops.batch_norm(&i[0], &i[1], &i[2], &rm.cast(), &rv.cast(), mode, BN_MOMENTUM, BN_EPSILON)?;
                Ok(y)
            }
            OpCase::L1Loss => Ok(i[0].clone()),
            OpCase::TinyNet => {
                let y = ops.conv2d(&i[0], &i[1], &i[2], self.conv)?;
                let y = ops.avg_pool2d(&y)?;
                ops.sigmoid(&y)
            }
        }
    }
}

impl Program for CaseProgram {
    fn run<T: Element, O: Ops<T>>(&self, ops: &mut O, inputs: &[O::Value]) -> Result<O::Value> {
        let (target, rest) = inputs.split_last().expect("target is the last input");
        let y = self.body(ops, rest)?;
        ops.l1_loss(&y, target)
    }
}

fn uniform(shape: Shape, lo: f32, hi: f32, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Values in ±[0.1, 1]: at least 10ε from the relu kink.
fn off_kink(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.gen_range(0.1f32..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values on a 0.05 grid so every pooling window has a unique,
/// well-separated maximum.
fn separated(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let mut ranks: Vec<usize> = (0..shape.len()).collect();
    ranks.shuffle(rng);
    Tensor::new(shape, ranks.into_iter().map(|r| -1.0 + 0.05 * r as f32).collect()).expect("shape matches")
}

/// Target at distance ≥ [`TARGET_MARGIN`] from `y`, on a random side per element.
fn far_target(y: &Tensor<f32>, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    y.map(|v| {
        let d = rng.gen_range(TARGET_MARGIN as f32..2.0 * TARGET_MARGIN as f32);
        if rng.gen_bool(0.5) {
            v + d
        } else {
            v - d
        }
    })
}

const CONV_SPECS: [Conv2dSpec; 4] = [
    Conv2dSpec::new(3, 3, 1, 1),
    Conv2dSpec::new(1, 1, 1, 0),
    Conv2dSpec::new(2, 2, 2, 0),
    Conv2dSpec::new(3, 3, 2, 1),
];

/// Builds the `seed`-th random instance of `case`.
pub fn instance(case: OpCase, seed: u64) -> Result<CaseInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a1e_0000 + seed * 31 + case as u64);
    let n = rng.gen_range(1..=2);
    let c = rng.gen_range(1..=3);
    let h = 2 * rng.gen_range(1..=3);
    let w = 2 * rng.gen_range(1..=3);
    let cout = rng.gen_range(1..=3);
    let shape = Shape::new(n, c, h, w);
    let conv = CONV_SPECS[seed as usize % CONV_SPECS.len()];
    let mut running = None;

    let mut inputs = match case {
        OpCase::Conv2d | OpCase::TinyNet => {
            let conv_shape = if case == OpCase::TinyNet { Shape::new(n, c, 2 * h, 2 * w) } else { shape };
            let fan_in = (c * conv.kernel_h * conv.kernel_w) as f32;
            vec![
                CheckInput::new("input", uniform(conv_shape, 0.1, 1.0, &mut rng), CheckRole::Checked),
                CheckInput::new(
                    "kernel",
                    uniform(Shape::new(cout, c, conv.kernel_h, conv.kernel_w), 0.5 / fan_in, 1.5 / fan_in, &mut rng),
                    CheckRole::Checked,
                ),
                CheckInput::new("bias", uniform(Shape::new(cout, 1, 1, 1), -0.6, -0.4, &mut rng), CheckRole::Checked),
            ]
        }
        OpCase::TransposeConv2d => vec![
            CheckInput::new("input", uniform(shape, 0.1, 1.0, &mut rng), CheckRole::Checked),
            CheckInput::new("kernel", uniform(Shape::new(c, cout, 2, 2), 0.5 / c as f32, 1.5 / c as f32, &mut rng), CheckRole::Checked),
            CheckInput::new("bias", uniform(Shape::new(cout, 1, 1, 1), -0.6, -0.4, &mut rng), CheckRole::Checked),
        ],
        OpCase::AvgPool2d | OpCase::Sigmoid => {
            vec![CheckInput::new("input", uniform(shape, -2.0, 2.0, &mut rng), CheckRole::Checked)]
        }
        OpCase::MaxPool2d => vec![CheckInput::new("input", separated(shape, &mut rng), CheckRole::Checked)],
        OpCase::Relu => vec![CheckInput::new("input", off_kink(shape, &mut rng), CheckRole::Checked)],
        OpCase::BatchNormTrain | OpCase::BatchNormInfer => {
            let vec_shape = Shape::new(c, 1, 1, 1);
            running = Some((uniform(vec_shape, -0.5, 0.5, &mut rng), uniform(vec_shape, 0.5, 1.5, &mut rng)));
            vec![
                CheckInput::new("input", uniform(shape, -1.0, 1.0, &mut rng), CheckRole::Checked),
                CheckInput::new("gamma", uniform(vec_shape, 0.5, 1.5, &mut rng), CheckRole::Checked),
                CheckInput::new("beta", uniform(vec_shape, -0.5, 0.5, &mut rng), CheckRole::Checked),
            ]
        }
        OpCase::L1Loss => vec![CheckInput::new("prediction", uniform(shape, 0.0, 1.0, &mut rng), CheckRole::Checked)],
    };

    let program = CaseProgram { case, conv, running };
    let values: Vec<Tensor<f32>> = inputs.iter().map(|i| i.value.clone()).collect();
    let nominal = program.body(&mut super::Eager, &values)?;
    let target = if case.one_sided() {
        nominal.map(|v| v - rng.gen_range(TARGET_MARGIN as f32..2.0 * TARGET_MARGIN as f32))
    } else if case == OpCase::L1Loss {
        // residuals of magnitude 0.05..0.5, well beyond ε
        nominal.map(|v| {
            let d = rng.gen_range(0.05f32..0.5);
            if rng.gen_bool(0.5) {
                v + d
            } else {
                v - d
            }
        })
    } else {
        far_target(&nominal, &mut rng)
    };
    inputs.push(CheckInput::new("target", target, CheckRole::Constant));
    let label = format!("{}[seed={seed}, {}]", case.name(), values[0].shape());
    Ok(CaseInstance { label, program, inputs })
}

/// Runs every [`OpCase`] on `seeds` random instances.
pub fn run_op_suite(opts: &GradCheckOptions, seeds: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    for case in OpCase::ALL {
        for seed in 0..seeds {
            let inst = instance(case, seed)?;
            let report = grad_check(&inst.program, &inst.inputs, opts)?;
            out.push((inst.label, report));
        }
    }
    Ok(out)
}

/// Loss of an instance at its nominal inputs; handy for sanity checks.
pub fn nominal_loss(inst: &CaseInstance) -> Result<f64> {
    let values: Vec<Tensor<f32>> = inst.inputs.iter().map(|i| i.value.clone()).collect();
    Ok(forward_eager(&inst.program, &values)?.data()[0] as f64)
}
