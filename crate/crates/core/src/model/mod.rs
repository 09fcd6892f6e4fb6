//! The encoder-decoder network, its parameters and their persistence.

mod checkpoint;
mod config;
mod fcnw;
mod params;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Eager, Ops, Program};
use crate::error::{Error, Result};
use crate::tensor::{
    BatchNormMode, Conv2dSpec, Element, PoolKind, Shape, Tensor, TransposeConv2dSpec, BN_EPSILON, BN_MOMENTUM,
};

pub use checkpoint::{
    encoder_entries, import_weights, load_checkpoint, save_checkpoint, Checkpoint, ImportReport, CONFIG_ENTRY,
    OPTIMIZER_ENTRY,
};
pub use config::{parse_kv, DecoderStage, EncoderStage, ModelConfig, CONFIG_FORMAT_VERSION, NUM_STAGES};
pub use fcnw::{is_text_name, read_fcnw, read_fcnw_bytes, write_fcnw, write_fcnw_bytes, FcnwEntry, FCNW_MAGIC};
pub use params::{ParamEntry, ParamKind, ParamStore};

pub const INPUT_CHANNELS: usize = 3;

/// Result of one forward pass, with the intermediate shapes kept for inspection.
#[derive(Clone, Debug)]
pub struct ForwardOutput<T: Element, V> {
    /// `N×1×H×W`, same spatial size as the input.
    pub saliency: V,
    /// Input size after replicate padding.
    pub padded_shape: Shape,
    pub encoder_shapes: Vec<Shape>,
    pub decoder_shapes: Vec<Shape>,
    /// New running statistics per batch-norm buffer name (train mode only).
    pub bn_updates: Vec<(String, Tensor<T>)>,
}

impl<T: Element, V> ForwardOutput<T, V> {
    /// Shape of the deepest feature map.
    pub fn encoder_shape(&self) -> Shape {
        *self.encoder_shapes.last().expect("five encoder stages")
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
}

/// Validates `config` and initializes parameters deterministically from `seed`.
///
/// Conv and transpose-conv weights are He-uniform in `±sqrt(6 / fan_in)`,
/// biases zero, batch norm `gamma = 1`, `beta = 0`, running stats `(0, 1)`.
pub fn build_model(config: ModelConfig, seed: u64) -> Result<(Model, ParamStore)> {
    config.validate()?;
    let model = Model { config };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape, init) in model.layout() {
        let value = match init {
            Init::HeUniform(fan_in) => {
                let bound = (6.0 / fan_in as f64).sqrt();
                Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-bound..bound) as f32)
            }
            Init::Const(v) => Tensor::full(shape, v),
        };
        let kind = if name.ends_with("running_mean") || name.ends_with("running_var") {
            ParamKind::Buffer
        } else {
            ParamKind::Trainable
        };
        store.insert(name, value, kind)?;
    }
    Ok((model, store))
}

enum Init {
    HeUniform(usize),
    Const(f32),
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Builds a model around an existing config without touching parameters.
    pub fn from_config(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Model { config })
    }

    /// Parameter names, shapes and initializers in canonical order.
    fn layout(&self) -> Vec<(String, Shape, Init)> {
        let cfg = &self.config;
        let mut out = Vec::new();
        let mut cin = INPUT_CHANNELS;
        for (i, stage) in cfg.encoder_stages.iter().enumerate() {
            let cout = cfg.scaled(stage.width);
            for j in 0..stage.convs {
                let p = format!("encoder.stage{}.conv{}", i + 1, j + 1);
                out.push((format!("{p}.weight"), Shape::new(cout, cin, 3, 3), Init::HeUniform(cin * 9)));
                out.push((format!("{p}.bias"), Shape::new(cout, 1, 1, 1), Init::Const(0.0)));
                cin = cout;
            }
        }
        for (i, stage) in cfg.decoder_stages.iter().enumerate() {
            let cout = cfg.scaled(stage.width);
            let p = format!("decoder.stage{}", i + 1);
            out.push((format!("{p}.tconv.weight"), Shape::new(cin, cout, 2, 2), Init::HeUniform(cin)));
            out.push((format!("{p}.tconv.bias"), Shape::new(cout, 1, 1, 1), Init::Const(0.0)));
            if stage.batch_norm {
                let c = Shape::new(cout, 1, 1, 1);
                out.push((format!("{p}.bn.gamma"), c, Init::Const(1.0)));
                out.push((format!("{p}.bn.beta"), c, Init::Const(0.0)));
                out.push((format!("{p}.bn.running_mean"), c, Init::Const(0.0)));
                out.push((format!("{p}.bn.running_var"), c, Init::Const(1.0)));
            }
            cin = cout;
        }
        out.push(("head.conv.weight".into(), Shape::new(1, cin, 1, 1), Init::HeUniform(cin)));
        out.push(("head.conv.bias".into(), Shape::new(1, 1, 1, 1), Init::Const(0.0)));
        out
    }

    /// Names and shapes of every entry a store for this model must hold.
    pub fn param_shapes(&self) -> Vec<(String, Shape)> {
        self.layout().into_iter().map(|(n, s, _)| (n, s)).collect()
    }

    /// Spatial size after padding up to the next multiple of 32.
    pub fn padded_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let d = self.config.downsampling();
        (h.div_ceil(d) * d, w.div_ceil(d) * d)
    }

    /// Registers every trainable entry of `params` as a leaf in `ops`.
    pub fn bind<T: Element, O: Ops<T>>(&self, ops: &mut O, params: &ParamStore) -> HashMap<String, O::Value> {
        params
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| (e.name.clone(), ops.input(e.value.cast::<T>())))
            .collect()
    }

    /// The network on bound leaves. Batch-norm running statistics are read
    /// from `params`; train mode returns their updated values instead of
    /// writing them.
    pub fn forward_bound<T: Element, O: Ops<T>>(
        &self,
        ops: &mut O,
        bound: &HashMap<String, O::Value>,
        params: &ParamStore,
        images: &O::Value,
        mode: BatchNormMode,
    ) -> Result<ForwardOutput<T, O::Value>> {
        let input = ops.shape(images);
        if input.c != INPUT_CHANNELS {
            return Err(Error::dim(
                "c",
                format!("model expects {INPUT_CHANNELS} input channels, got {input}"),
            ));
        }
        let leaf = |name: &str| {
            bound
                .get(name)
                .ok_or_else(|| Error::config(name, "parameter not bound"))
        };
        let (ph, pw) = self.padded_dims(input.h, input.w);
        let mut x = if (ph, pw) != (input.h, input.w) {
            ops.pad_replicate(images, ph, pw)?
        } else {
            images.clone()
        };
        let padded_shape = ops.shape(&x);

        let mut encoder_shapes = Vec::new();
        for (i, stage) in self.config.encoder_stages.iter().enumerate() {
            for j in 0..stage.convs {
                let p = format!("encoder.stage{}.conv{}", i + 1, j + 1);
                x = ops.conv2d(&x, leaf(&format!("{p}.weight"))?, leaf(&format!("{p}.bias"))?, Conv2dSpec::same3x3())?;
                x = ops.relu(&x)?;
            }
            x = match self.config.encoder_pool {
                PoolKind::Average => ops.avg_pool2d(&x)?,
                PoolKind::Max => ops.max_pool2d(&x)?,
            };
            encoder_shapes.push(ops.shape(&x));
        }

        let mut decoder_shapes = Vec::new();
        let mut bn_updates = Vec::new();
        for (i, stage) in self.config.decoder_stages.iter().enumerate() {
            let p = format!("decoder.stage{}", i + 1);
            x = ops.transpose_conv2d(
                &x,
                leaf(&format!("{p}.tconv.weight"))?,
                leaf(&format!("{p}.tconv.bias"))?,
                TransposeConv2dSpec::default(),
            )?;
            if stage.batch_norm {
                let rm_name = format!("{p}.bn.running_mean");
                let rv_name = format!("{p}.bn.running_var");
                let rm = params.value(&rm_name)?.cast::<T>();
                let rv = params.value(&rv_name)?.cast::<T>();
                let (y, new_rm, new_rv) = ops.batch_norm(
                    &x,
                    leaf(&format!("{p}.bn.gamma"))?,
                    leaf(&format!("{p}.bn.beta"))?,
                    &rm,
                    &rv,
                    mode,
                    BN_MOMENTUM,
                    BN_EPSILON,
                )?;
                x = y;
                if mode == BatchNormMode::Train {
                    bn_updates.push((rm_name, new_rm));
                    bn_updates.push((rv_name, new_rv));
                }
            }
            if stage.activation {
                x = ops.relu(&x)?;
            }
            decoder_shapes.push(ops.shape(&x));
        }

        x = ops.conv2d(&x, leaf("head.conv.weight")?, leaf("head.conv.bias")?, Conv2dSpec::pointwise())?;
        x = ops.sigmoid(&x)?;
        if (ph, pw) != (input.h, input.w) {
            x = ops.crop(&x, input.h, input.w)?;
        }
        Ok(ForwardOutput {
            saliency: x,
            padded_shape,
            encoder_shapes,
            decoder_shapes,
            bn_updates,
        })
    }

    /// Untraced forward with full shape information.
    pub fn forward_detailed(
        &self,
        params: &ParamStore,
        images: &Tensor,
        mode: BatchNormMode,
    ) -> Result<ForwardOutput<f32, Tensor>> {
        let mut ops = Eager;
        let bound = self.bind::<f32, _>(&mut ops, params);
        self.forward_bound(&mut ops, &bound, params, images, mode)
    }

    /// Saliency maps `N×1×H×W` for normalized `N×3×H×W` images.
    pub fn forward(&self, params: &ParamStore, images: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        Ok(self.forward_detailed(params, images, mode)?.saliency)
    }
}

/// The model followed by the pixel loss, as a [`Program`] whose inputs are
/// `[images, target, trainable parameters in store order...]`.
pub struct LossProgram<'a> {
    pub model: &'a Model,
    pub params: &'a ParamStore,
    pub mode: BatchNormMode,
}

impl LossProgram<'_> {
    pub fn trainable_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.name.clone())
            .collect()
    }
}

impl Program for LossProgram<'_> {
    fn run<T: Element, O: Ops<T>>(&self, ops: &mut O, inputs: &[O::Value]) -> Result<O::Value> {
        let names = self.trainable_names();
        if inputs.len() != names.len() + 2 {
            return Err(Error::Usage(format!(
                "expected {} inputs, got {}",
                names.len() + 2,
                inputs.len()
            )));
        }
        let bound: HashMap<String, O::Value> = names.into_iter().zip(inputs[2..].iter().cloned()).collect();
        let out = self.model.forward_bound(ops, &bound, self.params, &inputs[0], self.mode)?;
        ops.l1_loss(&out.saliency, &inputs[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{forward_traced, Graph};
    use crate::tensor::SIGMOID_CLAMP;

    fn tiny(seed: u64) -> (Model, ParamStore) {
        build_model(ModelConfig::tiny(), seed).unwrap()
    }

    fn image(n: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([n, 3, h, w], |_, _, _, _| rng.gen_range(-0.5f32..0.5))
    }

    #[test]
    fn parameter_names_follow_convention() {
        let (_, p) = tiny(0);
        let names: Vec<&str> = p.names().collect();
        assert_eq!(names[0], "encoder.stage1.conv1.weight");
        assert!(names.contains(&"encoder.stage5.conv3.bias"));
        assert!(names.contains(&"decoder.stage3.bn.running_var"));
        assert_eq!(*names.last().unwrap(), "head.conv.bias");
        // 13 convs + 5 tconvs + 1 head, two tensors each, plus 4 per batch norm
        assert_eq!(p.len(), 2 * 19 + 4 * 5);
        assert_eq!(p.get("decoder.stage1.tconv.weight").unwrap().value.shape(), Shape::new(32, 16, 2, 2));
    }

    #[test]
    fn seeded_builds_are_identical() {
        let (_, a) = tiny(7);
        let (_, b) = tiny(7);
        let (_, c) = tiny(8);
        for ((x, y), z) in a.iter().zip(b.iter()).zip(c.iter()) {
            assert_eq!(x.value, y.value);
            if x.name.ends_with("weight") {
                assert_ne!(x.value, z.value);
            }
        }
    }

    #[test]
    fn he_uniform_bounds() {
        let (_, p) = tiny(1);
        let w = &p.get("encoder.stage2.conv1.weight").unwrap().value;
        let bound = (6.0f64 / (4.0 * 9.0)).sqrt() as f32;
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(w.data().iter().any(|v| v.abs() > bound * 0.5));
        assert!(p.get("encoder.stage2.conv1.bias").unwrap().value.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiny_shapes_round_trip() {
        let (m, p) = tiny(0);
        let out = m.forward_detailed(&p, &image(2, 64, 64, 0), BatchNormMode::Infer).unwrap();
        assert_eq!(out.saliency.shape(), Shape::new(2, 1, 64, 64));
        assert_eq!(out.encoder_shape(), Shape::new(2, 32, 2, 2));
        let sides: Vec<usize> = out.decoder_shapes.iter().map(|s| s.h).collect();
        assert_eq!(sides, vec![4, 8, 16, 32, 64]);
        let lo = SIGMOID_CLAMP as f32;
        assert!(out.saliency.data().iter().all(|&v| v >= lo && v <= 1.0 - lo));
    }

    #[test]
    fn odd_sizes_are_padded_then_cropped() {
        let (m, p) = tiny(0);
        let out = m.forward_detailed(&p, &image(1, 100, 70, 1), BatchNormMode::Infer).unwrap();
        assert_eq!(out.padded_shape, Shape::new(1, 3, 128, 96));
        assert_eq!(out.saliency.shape(), Shape::new(1, 1, 100, 70));
    }

    #[test]
    fn wrong_channel_count_is_a_dimension_error() {
        let (m, p) = tiny(0);
        let x = Tensor::zeros([1, 1, 32, 32]);
        assert!(matches!(
            m.forward(&p, &x, BatchNormMode::Infer),
            Err(Error::Dimension { ref axis, .. }) if axis == "c"
        ));
    }

    #[test]
    fn traced_forward_matches_eager() {
        let (m, p) = tiny(3);
        let x = image(2, 32, 32, 3);
        let eager = m.forward_detailed(&p, &x, BatchNormMode::Train).unwrap();
        let mut g = Graph::<f32>::new();
        let bound = m.bind(&mut g, &p);
        let xi = g.input(x.clone());
        let traced = m.forward_bound(&mut g, &bound, &p, &xi, BatchNormMode::Train).unwrap();
        assert_eq!(g.value(&traced.saliency), &eager.saliency);
        assert_eq!(traced.bn_updates.len(), 10);
        for ((na, a), (nb, b)) in traced.bn_updates.iter().zip(&eager.bn_updates) {
            assert_eq!(na, nb);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn loss_program_agrees_with_forward() {
        let (m, p) = tiny(4);
        let x = image(1, 32, 32, 4);
        let target = Tensor::full([1, 1, 32, 32], 1.0f32);
        let prog = LossProgram { model: &m, params: &p, mode: BatchNormMode::Infer };
        let mut inputs = vec![x.clone(), target.clone()];
        inputs.extend(prog.trainable_names().iter().map(|n| p.value(n).unwrap().clone()));
        let (loss, _, _) = forward_traced(&prog, &inputs).unwrap();
        let s = m.forward(&p, &x, BatchNormMode::Infer).unwrap();
        let expected = crate::train::loss::l1_loss(&s, &target).unwrap();
        assert!((loss.data()[0] as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn constant_images_agree_across_pool_kinds() {
        let (avg, mut p) = build_model(ModelConfig::tiny(), 5).unwrap();
        // center taps only, so zero padding cannot make a constant map non-constant
        for e in p.iter_mut().filter(|e| e.name.starts_with("encoder.") && e.name.ends_with("weight")) {
            let old = e.value.clone();
            e.value = Tensor::from_fn(old.shape(), |o, i, y, x| if y == 1 && x == 1 { old.get(o, i, y, x) } else { 0.0 });
        }
        let max = Model::from_config(ModelConfig::tiny().with_pool(PoolKind::Max)).unwrap();
        let x = Tensor::full([1, 3, 32, 32], 0.25f32);
        let a = avg.forward(&p, &x, BatchNormMode::Infer).unwrap();
        let b = max.forward(&p, &x, BatchNormMode::Infer).unwrap();
        assert_eq!(a, b);
    }
}
