use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ModelError;
use crate::specio::{ArchDescriptor, Checkpoint};
use crate::tensorkit::{
    concat_channels, conv2d, conv2d_backward, conv2d_naive, instance_norm, instance_norm_backward, leaky_relu,
    leaky_relu_backward, maxpool2, maxpool2_backward, sigmoid, split_channels, upconv2, upconv2_backward, NormCache,
    ParamTensor, PoolIndices, Scalar, Shape, Tensor, NORM_EPS,
};

/// Network shape. Kernels are always 3x3 with padding 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    pub stages: usize,
    pub channels: Vec<usize>,
    pub convs_per_stage: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub leaky_slope: f64,
    pub use_instance_norm: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            stages: 7,
            channels: vec![32, 64, 128, 256, 512, 512, 512],
            convs_per_stage: 2,
            in_channels: 1,
            out_channels: 1,
            leaky_slope: 0.01,
            use_instance_norm: true,
        }
    }
}

impl ArchConfig {
    /// Small network used by tests and the overfit experiment.
    pub fn tiny(channels: &[usize]) -> Self {
        Self {
            stages: channels.len(),
            channels: channels.to_vec(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.stages < 2 {
            return bad(format!("stages must be at least 2, got {}", self.stages));
        }
        if self.channels.len() != self.stages {
            return bad(format!(
                "channels has {} entries but stages is {}",
                self.channels.len(),
                self.stages
            ));
        }
        if self.channels.contains(&0) || self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.convs_per_stage == 0 {
            return bad("convs_per_stage must be at least 1".into());
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return bad(format!("leaky_slope must be finite and non-negative, got {}", self.leaky_slope));
        }
        Ok(())
    }

    /// Spatial dims must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << (self.stages - 1)
    }

    /// Closed-form number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let k = 9;
        let norm = if self.use_instance_norm { 2 } else { 0 };
        let conv = |cin: usize, cout: usize| cin * cout * k + cout + norm * cout;
        let c = &self.channels;
        let mut total = 0;
        for s in 0..self.stages {
            let cin = if s == 0 { self.in_channels } else { c[s - 1] };
            total += conv(cin, c[s]) + (self.convs_per_stage - 1) * conv(c[s], c[s]);
        }
        for l in 0..self.stages - 1 {
            total += c[l + 1] * c[l] * 4;
            total += conv(2 * c[l], c[l]) + (self.convs_per_stage - 1) * conv(c[l], c[l]);
        }
        total + c[0] * self.out_channels + self.out_channels
    }

    pub fn descriptor(&self) -> ArchDescriptor {
        ArchDescriptor {
            channels: self.channels.iter().map(|&c| c as u32).collect(),
            convs_per_stage: self.convs_per_stage as u32,
            in_channels: self.in_channels as u32,
            out_channels: self.out_channels as u32,
            instance_norm: self.use_instance_norm,
        }
    }
}

/// Which convolution kernel the forward pass uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ConvPath {
    /// im2col + tiled GEMM, parallel.
    #[default]
    Blocked,
    /// Direct loops; the reference implementation.
    Naive,
}

/// conv3x3 -> [instance norm] -> leaky ReLU.
#[derive(Clone, Debug)]
struct ConvUnit<T> {
    w: ParamTensor<T>,
    b: ParamTensor<T>,
    norm: Option<(ParamTensor<T>, ParamTensor<T>)>,
}

struct UnitCache<T> {
    input: Tensor<T>,
    norm: Option<NormCache<T>>,
    pre_act: Tensor<T>,
}

#[derive(Clone, Debug)]
struct DecoderBlock<T> {
    up: ParamTensor<T>,
    units: Vec<ConvUnit<T>>,
}

/// Encoder/decoder network with channel-concatenating skip connections.
///
/// Encoder stage `s` runs `convs_per_stage` conv units at resolution
/// `h / 2^s`, preceded by a 2x2 max pool for `s >= 1`. Decoder block `d`
/// (`d = 0` is the deepest) upsamples with a stride-2 transposed convolution
/// and concatenates `[upsampled, skip]`, where the skip is the output of
/// encoder stage `stages - 2 - d`. A 1x1 convolution and a sigmoid form the
/// head.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    arch: ArchConfig,
    encoder: Vec<Vec<ConvUnit<T>>>,
    decoder: Vec<DecoderBlock<T>>,
    head_w: ParamTensor<T>,
    head_b: ParamTensor<T>,
}

/// Intermediate values saved by [`Model::forward_train`].
pub struct Trace<T: Scalar> {
    input_shape: Shape,
    encoder: Vec<Vec<UnitCache<T>>>,
    pools: Vec<PoolIndices>,
    decoder: Vec<(Tensor<T>, Vec<UnitCache<T>>)>,
    head_input: Tensor<T>,
}

impl<T: Scalar> Trace<T> {
    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }
}

fn param<T: Scalar>(shape: Shape, std: f64, rng: &mut ChaCha8Rng) -> ParamTensor<T> {
    ParamTensor::new(Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::cast(std * z)
    }))
}

fn constant<T: Scalar>(c: usize, v: f64) -> ParamTensor<T> {
    ParamTensor::new(Tensor::filled(Shape::new(1, c, 1, 1), T::cast(v)))
}

impl<T: Scalar> ConvUnit<T> {
    fn new(cin: usize, cout: usize, arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Self {
        let gain = 2.0 / (1.0 + arch.leaky_slope * arch.leaky_slope);
        let std = (gain / (cin * 9) as f64).sqrt();
        Self {
            w: param(Shape::new(cout, cin, 3, 3), std, rng),
            b: constant(cout, 0.0),
            norm: arch.use_instance_norm.then(|| (constant(cout, 1.0), constant(cout, 0.0))),
        }
    }

    fn forward(
        &self,
        x: &Tensor<T>,
        slope: f64,
        path: ConvPath,
        trace: Option<&mut Vec<UnitCache<T>>>,
    ) -> Result<Tensor<T>, ModelError> {
        let conv = match path {
            ConvPath::Blocked => conv2d(x, &self.w.value, self.b.value.data(), 1, 1)?,
            ConvPath::Naive => conv2d_naive(x, &self.w.value, self.b.value.data(), 1, 1)?,
        };
        let (pre_act, cache) = match &self.norm {
            Some((g, b)) => {
                let (y, c) = instance_norm(&conv, g.value.data(), b.value.data(), NORM_EPS)?;
                (y, Some(c))
            }
            None => (conv, None),
        };
        let y = leaky_relu(&pre_act, slope);
        if let Some(t) = trace {
            t.push(UnitCache {
                input: x.clone(),
                norm: cache,
                pre_act,
            });
        }
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor<T>, cache: &UnitCache<T>, slope: f64) -> Result<Tensor<T>, ModelError> {
        let mut g = leaky_relu_backward(g, &cache.pre_act, slope)?;
        if let (Some((gamma, beta)), Some(nc)) = (&mut self.norm, &cache.norm) {
            let ng = instance_norm_backward(&g, nc, gamma.value.data())?;
            accumulate(&mut gamma.grad, &ng.gamma);
            accumulate(&mut beta.grad, &ng.beta);
            g = ng.x;
        }
        let cg = conv2d_backward(&g, &cache.input, &self.w.value, 1, 1)?;
        self.w.grad.add_assign(&cg.w)?;
        accumulate(&mut self.b.grad, &cg.b);
        Ok(cg.x)
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        let mut out = vec![&mut self.w, &mut self.b];
        if let Some((g, b)) = &mut self.norm {
            out.push(g);
            out.push(b);
        }
        out
    }

    fn params(&self) -> Vec<&ParamTensor<T>> {
        let mut out = vec![&self.w, &self.b];
        if let Some((g, b)) = &self.norm {
            out.push(g);
            out.push(b);
        }
        out
    }
}

fn accumulate<T: Scalar>(dst: &mut Tensor<T>, src: &[T]) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src) {
        *d += s;
    }
}

fn run_units<T: Scalar>(
    units: &[ConvUnit<T>],
    mut x: Tensor<T>,
    slope: f64,
    path: ConvPath,
    mut trace: Option<&mut Vec<UnitCache<T>>>,
) -> Result<Tensor<T>, ModelError> {
    for u in units {
        x = u.forward(&x, slope, path, trace.as_deref_mut())?;
    }
    Ok(x)
}

fn back_units<T: Scalar>(
    units: &mut [ConvUnit<T>],
    caches: &[UnitCache<T>],
    mut g: Tensor<T>,
    slope: f64,
) -> Result<Tensor<T>, ModelError> {
    for (u, c) in units.iter_mut().zip(caches).rev() {
        g = u.backward(&g, c, slope)?;
    }
    Ok(g)
}

impl<T: Scalar> Model<T> {
    /// Fresh network. Conv weights are Kaiming-normal for the leaky slope
    /// (`std = sqrt(2 / (1 + a^2) / fan_in)`), biases and norm shifts are 0,
    /// norm scales are 1. Weights are drawn in parameter order from a
    /// ChaCha8 stream seeded with `seed`.
    pub fn build(arch: &ArchConfig, seed: u64) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &arch.channels;
        let mut encoder = Vec::with_capacity(arch.stages);
        for s in 0..arch.stages {
            let cin = if s == 0 { arch.in_channels } else { c[s - 1] };
            let units = (0..arch.convs_per_stage)
                .map(|i| ConvUnit::new(if i == 0 { cin } else { c[s] }, c[s], arch, &mut rng))
                .collect();
            encoder.push(units);
        }
        let gain = 2.0 / (1.0 + arch.leaky_slope * arch.leaky_slope);
        let mut decoder = Vec::with_capacity(arch.stages - 1);
        for l in (0..arch.stages - 1).rev() {
            // each upsampled pixel receives exactly one tap per input channel
            let up = param(Shape::new(c[l + 1], c[l], 2, 2), (gain / c[l + 1] as f64).sqrt(), &mut rng);
            let units = (0..arch.convs_per_stage)
                .map(|i| ConvUnit::new(if i == 0 { 2 * c[l] } else { c[l] }, c[l], arch, &mut rng))
                .collect();
            decoder.push(DecoderBlock { up, units });
        }
        let head_w = param(
            Shape::new(arch.out_channels, c[0], 1, 1),
            (gain / c[0] as f64).sqrt(),
            &mut rng,
        );
        Ok(Self {
            arch: arch.clone(),
            encoder,
            decoder,
            head_w,
            head_b: constant(arch.out_channels, 0.0),
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// All parameters in declaration order: encoder stages, decoder blocks
    /// from deepest to shallowest (upconv first), then the head.
    pub fn params(&self) -> Vec<&ParamTensor<T>> {
        let mut out = Vec::new();
        for stage in &self.encoder {
            out.extend(stage.iter().flat_map(ConvUnit::params));
        }
        for block in &self.decoder {
            out.push(&block.up);
            out.extend(block.units.iter().flat_map(ConvUnit::params));
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        let mut out = Vec::new();
        for stage in &mut self.encoder {
            out.extend(stage.iter_mut().flat_map(ConvUnit::params_mut));
        }
        for block in &mut self.decoder {
            out.push(&mut block.up);
            out.extend(block.units.iter_mut().flat_map(ConvUnit::params_mut));
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(T::zero());
        }
    }

    fn check_input(&self, s: Shape) -> Result<(), ModelError> {
        let d = self.arch.divisor();
        if s.c != self.arch.in_channels {
            return Err(ModelError::InputChannels {
                got: s.c,
                want: self.arch.in_channels,
            });
        }
        if s.h == 0 || s.w == 0 || !s.h.is_multiple_of(d) || !s.w.is_multiple_of(d) {
            return Err(ModelError::InputDims {
                height: s.h,
                width: s.w,
                divisor: d,
            });
        }
        Ok(())
    }

    fn run(&self, x: &Tensor<T>, path: ConvPath, mut trace: Option<&mut Trace<T>>) -> Result<Tensor<T>, ModelError> {
        self.check_input(x.shape())?;
        let slope = self.arch.leaky_slope;
        let mut skips = Vec::with_capacity(self.arch.stages);
        let mut h = x.clone();
        for (s, units) in self.encoder.iter().enumerate() {
            if s > 0 {
                let (p, idx) = maxpool2(&h)?;
                if let Some(t) = trace.as_deref_mut() {
                    t.pools.push(idx);
                }
                h = p;
            }
            let caches = trace.as_deref_mut().map(|t| {
                t.encoder.push(Vec::new());
                t.encoder.last_mut().expect("just pushed")
            });
            h = run_units(units, h, slope, path, caches)?;
            if s + 1 < self.arch.stages {
                skips.push(h.clone());
            }
        }
        for block in &self.decoder {
            let up = upconv2(&h, &block.up.value)?;
            let skip = skips.pop().expect("one skip per decoder block");
            let cat = concat_channels(&up, &skip)?;
            let caches = trace.as_deref_mut().map(|t| {
                t.decoder.push((h.clone(), Vec::new()));
                &mut t.decoder.last_mut().expect("just pushed").1
            });
            h = run_units(&block.units, cat, slope, path, caches)?;
        }
        let logits = match path {
            ConvPath::Blocked => conv2d(&h, &self.head_w.value, self.head_b.value.data(), 1, 0)?,
            ConvPath::Naive => conv2d_naive(&h, &self.head_w.value, self.head_b.value.data(), 1, 0)?,
        };
        if let Some(t) = trace {
            t.head_input = h;
        }
        Ok(logits)
    }

    /// Probabilities for a batch `n x in_channels x h x w`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        self.forward_with(x, ConvPath::Blocked)
    }

    pub fn forward_with(&self, x: &Tensor<T>, path: ConvPath) -> Result<Tensor<T>, ModelError> {
        Ok(sigmoid(&self.run(x, path, None)?))
    }

    /// Pre-sigmoid logits plus the trace needed by [`Model::backward`].
    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>), ModelError> {
        let mut trace = Trace {
            input_shape: x.shape(),
            encoder: Vec::new(),
            pools: Vec::new(),
            decoder: Vec::new(),
            head_input: Tensor::zeros(Shape::new(0, 0, 0, 0)),
        };
        let logits = self.run(x, ConvPath::Blocked, Some(&mut trace))?;
        Ok((logits, trace))
    }

    /// Accumulates parameter gradients for upstream gradient `grad_logits`
    /// and returns the gradient with respect to the network input.
    pub fn backward(&mut self, trace: &Trace<T>, grad_logits: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let slope = self.arch.leaky_slope;
        let hg = conv2d_backward(grad_logits, &trace.head_input, &self.head_w.value, 1, 0)?;
        self.head_w.grad.add_assign(&hg.w)?;
        accumulate(&mut self.head_b.grad, &hg.b);
        let mut g = hg.x;

        let stages = self.arch.stages;
        // skip_grads[s] is the gradient reaching encoder stage s through its skip
        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..stages).map(|_| None).collect();
        for (d, block) in self.decoder.iter_mut().enumerate().rev() {
            let (up_input, caches) = &trace.decoder[d];
            let gcat = back_units(&mut block.units, caches, g, slope)?;
            let c_up = block.up.value.shape().c;
            let (g_up, g_skip) = split_channels(&gcat, c_up)?;
            skip_grads[stages - 2 - d] = Some(g_skip);
            let ug = upconv2_backward(&g_up, up_input, &block.up.value)?;
            block.up.grad.add_assign(&ug.w)?;
            g = ug.x;
        }
        for s in (0..stages).rev() {
            if let Some(sg) = skip_grads[s].take() {
                g.add_assign(&sg)?;
            }
            g = back_units(&mut self.encoder[s], &trace.encoder[s], g, slope)?;
            if s > 0 {
                g = maxpool2_backward(&g, &trace.pools[s - 1])?;
            }
        }
        Ok(g)
    }

    pub fn to_checkpoint(&self, epoch: u64, seed: u64) -> Checkpoint {
        Checkpoint {
            arch: self.arch.descriptor(),
            params: self
                .params()
                .iter()
                .map(|p| p.value.data().iter().map(|v| v.as_f64() as f32).collect())
                .collect(),
            epoch,
            seed,
        }
    }

    /// Rebuilds a model from a checkpoint written for `arch`.
    pub fn from_checkpoint(arch: &ArchConfig, ckpt: &Checkpoint) -> Result<Self, ModelError> {
        if ckpt.arch != arch.descriptor() {
            return Err(ModelError::Checkpoint(format!(
                "checkpoint architecture {:?} does not match configured {:?}",
                ckpt.arch,
                arch.descriptor()
            )));
        }
        let mut model = Self::build(arch, 0)?;
        let mut params = model.params_mut();
        if params.len() != ckpt.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, file has {}",
                params.len(),
                ckpt.params.len()
            )));
        }
        for (i, (p, block)) in params.iter_mut().zip(&ckpt.params).enumerate() {
            if p.value.len() != block.len() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {i}: expected {} values, file has {}",
                    p.value.len(),
                    block.len()
                )));
            }
            for (d, &s) in p.value.data_mut().iter_mut().zip(block) {
                *d = T::cast(s as f64);
            }
        }
        Ok(model)
    }

    /// Same weights in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut out = Model::<U>::build(&self.arch, 0).expect("arch already validated");
        for (d, s) in out.params_mut().into_iter().zip(self.params()) {
            d.value = s.value.cast();
        }
        out
    }

    /// Replaces every parameter tensor's values, in [`Model::params`] order.
    pub fn set_params(&mut self, values: Vec<Vec<T>>) -> Result<(), ModelError> {
        let mut params = self.params_mut();
        if values.len() != params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, got {}",
                params.len(),
                values.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(values) {
            p.value = Tensor::from_vec(p.value.shape(), v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorkit::gradcheck::random_tensor;

    #[test]
    fn default_arch() {
        let a = ArchConfig::default();
        assert_eq!(a.stages, 7);
        assert_eq!(a.channels, vec![32, 64, 128, 256, 512, 512, 512]);
        assert_eq!(a.divisor(), 64);
    }

    #[test]
    fn tiny_param_count_by_hand() {
        let mut a = ArchConfig::tiny(&[8, 16]);
        a.use_instance_norm = false;
        // encoder: 1->8 (72+8), 8->8 (576+8), 8->16 (1152+16), 16->16 (2304+16)
        // decoder: up 16*8*4 = 512, 16->8 (1152+8), 8->8 (576+8)
        // head: 8*1 + 1
        let hand = 80 + 584 + 1168 + 2320 + 512 + 1160 + 584 + 9;
        assert_eq!(a.param_count(), hand);
        let m = Model::<f32>::build(&a, 0).unwrap();
        assert_eq!(m.param_count(), hand);
        a.use_instance_norm = true;
        // two affine vectors per conv unit: 2 * (8 + 8 + 16 + 16 + 8 + 8)
        assert_eq!(a.param_count(), hand + 128);
        assert_eq!(Model::<f32>::build(&a, 0).unwrap().param_count(), hand + 128);
    }

    #[test]
    fn default_param_count_matches_built_model() {
        let a = ArchConfig::default();
        let m = Model::<f32>::build(&a, 1).unwrap();
        assert_eq!(m.param_count(), a.param_count());
    }

    #[test]
    fn channel_length_mismatch() {
        let a = ArchConfig {
            channels: vec![32, 64, 128, 256, 512, 512],
            ..ArchConfig::default()
        };
        assert!(matches!(Model::<f32>::build(&a, 0), Err(ModelError::Config(_))));
    }

    #[test]
    fn shape_and_range() {
        let m = Model::<f32>::build(&ArchConfig::tiny(&[8, 16]), 3).unwrap();
        let x = random_tensor::<f32>(Shape::new(1, 1, 64, 64), 2);
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let bad = Tensor::<f32>::zeros(Shape::new(1, 1, 63, 64));
        assert!(matches!(m.forward(&bad), Err(ModelError::InputDims { .. })));
    }

    #[test]
    fn zero_weights_give_half() {
        let mut m = Model::<f32>::build(&ArchConfig::tiny(&[4, 8, 8]), 0).unwrap();
        for p in m.params_mut() {
            p.value.fill(0.0);
        }
        let y = m.forward(&random_tensor(Shape::new(2, 1, 16, 16), 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let a = ArchConfig::tiny(&[4, 8]);
        let m1 = Model::<f32>::build(&a, 5).unwrap();
        let m2 = Model::<f32>::build(&a, 5).unwrap();
        let m3 = Model::<f32>::build(&a, 6).unwrap();
        assert_eq!(m1.to_checkpoint(0, 5).params, m2.to_checkpoint(0, 5).params);
        assert_ne!(m1.to_checkpoint(0, 5).params, m3.to_checkpoint(0, 5).params);
    }

    #[test]
    fn network_input_gradient_matches_finite_differences() {
        use crate::tensorkit::gradcheck::gradcheck_input;
        let mut a = ArchConfig::tiny(&[2, 3, 4]);
        a.convs_per_stage = 1;
        let m = Model::<f64>::build(&a, 7).unwrap();
        let x = random_tensor::<f64>(Shape::new(1, 1, 8, 8), 8);
        let proj = random_tensor::<f64>(x.shape(), 9);
        let err = gradcheck_input(
            &x,
            |t| m.run(t, ConvPath::Blocked, None).unwrap(),
            &proj,
            |r| {
                let mut m2 = m.clone();
                let (_, trace) = m2.forward_train(&x).unwrap();
                m2.backward(&trace, r).unwrap()
            },
        );
        assert!(err < 1e-4, "{err}");
    }
}
