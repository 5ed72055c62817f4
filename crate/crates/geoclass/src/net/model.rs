//! The concatenation network.
//!
//! Each input part flows through its own path: radius-learning parts are
//! first mapped from histogram functions to feature values at the learned
//! radii, then an optional per-part pre-cat layer applies. The paths are
//! concatenated, an optional post-cat layer applies, and a final fully
//! connected layer produces class logits for softmax cross-entropy.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    concat_backward, concat_forward, dropout_backward, dropout_forward, dropout_mask, fc_backward,
    fc_forward, radius_backward, radius_forward, relu_backward, relu_forward, softmax, softmax_ce,
    Fc,
};
use super::matrix::Matrix;
use crate::histfn::HistFnBank;
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

/// What one input part is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PartKind {
    /// Plain feature vector of a fixed dimension.
    Vector { dim: usize },
    /// Histogram-function bank evaluated at learned radii: `fn_count`
    /// functions, `replicas` radii per function.
    Radius { fn_count: usize, replicas: usize },
}

impl PartKind {
    /// Width of the part as seen by the concatenation layer (before any
    /// pre-cat layer).
    pub fn width(&self) -> usize {
        match self {
            PartKind::Vector { dim } => *dim,
            PartKind::Radius { fn_count, replicas } => fn_count * replicas,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub name: String,
    pub kind: PartKind,
}

/// Architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub parts: Vec<PartSpec>,
    /// Per-part fully connected width before concatenation; 0 = none.
    pub pre_cat: usize,
    /// Fully connected width after concatenation; 0 = none.
    pub post_cat: usize,
    pub classes: usize,
    /// Dropout probability on hidden fully connected outputs.
    pub dropout: f64,
    /// Clamp range for learned radii, in meters.
    pub radius_min: f64,
    pub radius_max: f64,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.parts.is_empty() {
            return Err(Error::Config("network has no input parts".to_string()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need >= 2 classes, got {}", self.classes)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.radius_min > 0.0) || !(self.radius_min < self.radius_max) {
            return Err(Error::Config(format!(
                "radius bounds [{}, {}] invalid",
                self.radius_min, self.radius_max
            )));
        }
        for part in &self.parts {
            match part.kind {
                PartKind::Vector { dim } => {
                    if dim == 0 {
                        return Err(Error::Config(format!("part '{}' has zero dimension", part.name)));
                    }
                }
                PartKind::Radius { fn_count, replicas } => {
                    if fn_count == 0 || replicas == 0 {
                        return Err(Error::Config(format!(
                            "radius part '{}' needs fn_count >= 1 and replicas >= 1",
                            part.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Width each part contributes to the concatenation layer.
    pub fn part_out_width(&self, i: usize) -> usize {
        if self.pre_cat > 0 {
            self.pre_cat
        } else {
            self.parts[i].kind.width()
        }
    }

    pub fn concat_width(&self) -> usize {
        (0..self.parts.len()).map(|i| self.part_out_width(i)).sum()
    }

    /// Input width of the final classifier layer.
    pub fn classifier_in(&self) -> usize {
        if self.post_cat > 0 {
            self.post_cat
        } else {
            self.concat_width()
        }
    }
}

/// One input part of one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum PartData {
    Vector(Vec<f64>),
    Bank(HistFnBank),
}

/// One training or evaluation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub parts: Vec<PartData>,
    pub label: usize,
}

/// Per-path parameters: radius matrix for radius parts, optional pre-cat
/// layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub rho: Option<Matrix>,
    pub pre: Option<Fc>,
}

/// All trainable parameters, in declared layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub paths: Vec<PathParams>,
    pub post: Option<Fc>,
    pub classifier: Fc,
}

/// Distinguishes parameters for weight decay and clamping rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamClass {
    Weight,
    Bias,
    Rho,
}

impl Params {
    /// All-zero parameters shaped for `config`.
    pub fn zeros(config: &NetworkConfig) -> Params {
        let paths = config
            .parts
            .iter()
            .enumerate()
            .map(|(i, part)| PathParams {
                rho: match part.kind {
                    PartKind::Radius { fn_count, replicas } => Some(Matrix::zeros(fn_count, replicas)),
                    PartKind::Vector { .. } => None,
                },
                pre: (config.pre_cat > 0).then(|| Fc::zeros(config.pre_cat, config.parts[i].kind.width())),
            })
            .collect();
        Params {
            paths,
            post: (config.post_cat > 0).then(|| Fc::zeros(config.post_cat, config.concat_width())),
            classifier: Fc::zeros(config.classes, config.classifier_in()),
        }
    }

    /// Seeded initialization: Glorot-uniform weights, zero biases, radius
    /// replicas evenly spaced over the clamp range with a +-5%-of-spacing
    /// jitter to break replica symmetry.
    pub fn init(config: &NetworkConfig, rng: &mut impl Rng) -> Params {
        let mut params = Params::zeros(config);
        for (path, part) in params.paths.iter_mut().zip(&config.parts) {
            if let Some(rho) = &mut path.rho {
                let replicas = rho.cols();
                let span = config.radius_max - config.radius_min;
                let spacing = if replicas > 1 { span / (replicas - 1) as f64 } else { span };
                for h in 0..rho.rows() {
                    for k in 0..replicas {
                        let base = if replicas > 1 {
                            config.radius_min + k as f64 * spacing
                        } else {
                            config.radius_min + span / 2.0
                        };
                        let jitter = rng.random_range(-0.05..0.05) * spacing;
                        rho.set(h, k, (base + jitter).clamp(config.radius_min, config.radius_max));
                    }
                }
            }
            if let Some(pre) = &mut path.pre {
                *pre = Fc::glorot(config.pre_cat, part.kind.width(), rng);
            }
        }
        if config.post_cat > 0 {
            params.post = Some(Fc::glorot(config.post_cat, config.concat_width(), rng));
        }
        params.classifier = Fc::glorot(config.classes, config.classifier_in(), rng);
        params
    }

    /// Visit every parameter with its gradient and momentum slot, in a
    /// fixed order.
    pub fn visit(
        &mut self,
        grads: &Params,
        momentum: &mut Params,
        mut f: impl FnMut(ParamClass, &mut f64, f64, &mut f64),
    ) {
        for ((path, gpath), mpath) in self.paths.iter_mut().zip(&grads.paths).zip(&mut momentum.paths) {
            if let (Some(rho), Some(grho), Some(mrho)) = (&mut path.rho, &gpath.rho, &mut mpath.rho) {
                for ((p, &g), m) in rho
                    .data_mut()
                    .iter_mut()
                    .zip(grho.data())
                    .zip(mrho.data_mut())
                {
                    f(ParamClass::Rho, p, g, m);
                }
            }
            if let (Some(pre), Some(gpre), Some(mpre)) = (&mut path.pre, &gpath.pre, &mut mpath.pre) {
                visit_fc(pre, gpre, mpre, &mut f);
            }
        }
        if let (Some(post), Some(gpost), Some(mpost)) = (&mut self.post, &grads.post, &mut momentum.post) {
            visit_fc(post, gpost, mpost, &mut f);
        }
        visit_fc(&mut self.classifier, &grads.classifier, &mut momentum.classifier, &mut f);
    }
}

fn visit_fc(fc: &mut Fc, grads: &Fc, momentum: &mut Fc, f: &mut impl FnMut(ParamClass, &mut f64, f64, &mut f64)) {
    for ((p, &g), m) in fc
        .w
        .data_mut()
        .iter_mut()
        .zip(grads.w.data())
        .zip(momentum.w.data_mut())
    {
        f(ParamClass::Weight, p, g, m);
    }
    for ((p, &g), m) in fc.b.iter_mut().zip(&grads.b).zip(momentum.b.iter_mut()) {
        f(ParamClass::Bias, p, g, m);
    }
}

/// A configured network with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: NetworkConfig,
    pub params: Params,
}

/// Intermediate activations kept for the backward pass.
struct Trace {
    part_base: Vec<Vec<f64>>,
    part_pre: Vec<Option<PreTrace>>,
    concat: Vec<f64>,
    post: Option<PreTrace>,
    logits: Vec<f64>,
}

struct PreTrace {
    input: Vec<f64>,
    z: Vec<f64>,
    mask: Option<Vec<f64>>,
}

impl Network {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Network> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init);
        let params = Params::init(&config, &mut rng);
        Ok(Network { config, params })
    }

    /// All-zero parameters; predictions are uniform.
    pub fn zeros(config: NetworkConfig) -> Result<Network> {
        config.validate()?;
        let params = Params::zeros(&config);
        Ok(Network { config, params })
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        if sample.parts.len() != self.config.parts.len() {
            return Err(Error::DimMismatch {
                context: "sample part count".to_string(),
                expected: self.config.parts.len(),
                actual: sample.parts.len(),
            });
        }
        for (data, spec) in sample.parts.iter().zip(&self.config.parts) {
            match (data, spec.kind) {
                (PartData::Vector(v), PartKind::Vector { dim }) => {
                    if v.len() != dim {
                        return Err(Error::DimMismatch {
                            context: format!("part '{}'", spec.name),
                            expected: dim,
                            actual: v.len(),
                        });
                    }
                }
                (PartData::Bank(bank), PartKind::Radius { fn_count, .. }) => {
                    if bank.len() != fn_count {
                        return Err(Error::DimMismatch {
                            context: format!("part '{}' bank", spec.name),
                            expected: fn_count,
                            actual: bank.len(),
                        });
                    }
                }
                _ => {
                    return Err(Error::Config(format!(
                        "part '{}': sample data does not match declared kind",
                        spec.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Forward pass. `dropout_rng` enables training-mode dropout; `None`
    /// runs in eval mode (identity).
    fn forward(&self, sample: &Sample, mut dropout_rng: Option<&mut ChaCha8Rng>) -> Result<Trace> {
        self.check_sample(sample)?;
        let mut part_base = Vec::with_capacity(sample.parts.len());
        let mut part_pre = Vec::with_capacity(sample.parts.len());
        let mut part_out: Vec<Vec<f64>> = Vec::with_capacity(sample.parts.len());
        for (data, path) in sample.parts.iter().zip(&self.params.paths) {
            let base = match data {
                PartData::Vector(v) => v.clone(),
                PartData::Bank(bank) => {
                    let rho = path.rho.as_ref().expect("radius part without rho parameters");
                    radius_forward(bank, rho)?
                }
            };
            let (pre_trace, out) = match &path.pre {
                Some(fc) => {
                    let z = fc_forward(fc, &base)?;
                    let a = relu_forward(&z);
                    let (mask, out) = match dropout_rng.as_deref_mut() {
                        Some(rng) if self.config.dropout > 0.0 => {
                            let mask = dropout_mask(a.len(), self.config.dropout, rng);
                            let out = dropout_forward(&a, &mask);
                            (Some(mask), out)
                        }
                        _ => (None, a.clone()),
                    };
                    (
                        Some(PreTrace {
                            input: base.clone(),
                            z,
                            mask,
                        }),
                        out,
                    )
                }
                None => (None, base.clone()),
            };
            part_base.push(base);
            part_pre.push(pre_trace);
            part_out.push(out);
        }

        let concat = concat_forward(&part_out.iter().map(|v| v.as_slice()).collect::<Vec<_>>());
        let (post, classifier_in) = match &self.params.post {
            Some(fc) => {
                let z = fc_forward(fc, &concat)?;
                let a = relu_forward(&z);
                let (mask, out) = match dropout_rng.as_deref_mut() {
                    Some(rng) if self.config.dropout > 0.0 => {
                        let mask = dropout_mask(a.len(), self.config.dropout, rng);
                        let out = dropout_forward(&a, &mask);
                        (Some(mask), out)
                    }
                    _ => (None, a.clone()),
                };
                (
                    Some(PreTrace {
                        input: concat.clone(),
                        z,
                        mask,
                    }),
                    out,
                )
            }
            None => (None, concat.clone()),
        };

        let logits = fc_forward(&self.params.classifier, &classifier_in)?;
        Ok(Trace {
            part_base,
            part_pre,
            concat,
            post,
            logits,
        })
    }

    /// Class probabilities with dropout disabled.
    pub fn predict(&self, sample: &Sample) -> Result<Vec<f64>> {
        let trace = self.forward(sample, None)?;
        Ok(softmax(&trace.logits))
    }

    /// Raw logits with dropout disabled.
    pub fn logits(&self, sample: &Sample) -> Result<Vec<f64>> {
        Ok(self.forward(sample, None)?.logits)
    }

    /// Loss with dropout disabled; used by gradient checks.
    pub fn loss(&self, sample: &Sample) -> Result<f64> {
        let trace = self.forward(sample, None)?;
        Ok(softmax_ce(&trace.logits, sample.label)?.0)
    }

    /// Forward + backward for one sample: returns the loss and accumulates
    /// parameter gradients into `grads` (summation).
    pub fn loss_grad(
        &self,
        sample: &Sample,
        dropout_rng: Option<&mut ChaCha8Rng>,
        grads: &mut Params,
    ) -> Result<f64> {
        if sample.label >= self.config.classes {
            return Err(Error::invalid(
                "label",
                format!("{} out of range for {} classes", sample.label, self.config.classes),
            ));
        }
        let trace = self.forward(sample, dropout_rng)?;
        let (loss, grad_logits) = softmax_ce(&trace.logits, sample.label)?;

        let classifier_in = match &trace.post {
            Some(pt) => apply_hidden_forwarded(pt),
            None => trace.concat.clone(),
        };
        let mut grad = fc_backward(&self.params.classifier, &classifier_in, &grad_logits, &mut grads.classifier)?;

        if let (Some(post_fc), Some(post_trace), Some(gpost)) =
            (&self.params.post, &trace.post, &mut grads.post)
        {
            if let Some(mask) = &post_trace.mask {
                grad = dropout_backward(&grad, mask);
            }
            grad = relu_backward(&post_trace.z, &grad);
            grad = fc_backward(post_fc, &post_trace.input, &grad, gpost)?;
        }

        let part_dims: Vec<usize> = (0..self.config.parts.len())
            .map(|i| self.config.part_out_width(i))
            .collect();
        let part_grads = concat_backward(&grad, &part_dims)?;

        for (i, mut part_grad) in part_grads.into_iter().enumerate() {
            let path = &self.params.paths[i];
            let gpath = &mut grads.paths[i];
            if let (Some(pre_fc), Some(pre_trace), Some(gpre)) = (&path.pre, &trace.part_pre[i], &mut gpath.pre) {
                if let Some(mask) = &pre_trace.mask {
                    part_grad = dropout_backward(&part_grad, mask);
                }
                part_grad = relu_backward(&pre_trace.z, &part_grad);
                part_grad = fc_backward(pre_fc, &pre_trace.input, &part_grad, gpre)?;
            }
            if let (PartData::Bank(bank), Some(rho), Some(grho)) =
                (&sample.parts[i], &path.rho, &mut gpath.rho)
            {
                radius_backward(bank, rho, &part_grad, grho)?;
            }
            // Vector parts: the gradient on the raw input is discarded.
            let _ = trace.part_base[i].len();
        }

        Ok(loss)
    }
}

/// Re-apply the hidden chain (relu + stored mask) to a cached pre-trace.
fn apply_hidden_forwarded(pt: &PreTrace) -> Vec<f64> {
    let a = relu_forward(&pt.z);
    match &pt.mask {
        Some(mask) => dropout_forward(&a, mask),
        None => a,
    }
}
