//! The four classifier architectures.
//!
//! Every variant is built from the same branch body: four dense layers of
//! `hidden_width` units with ReLU activations (`input → w`, then `w → w`
//! three times). At the default sizes (41 inputs, 512 units) one body holds
//! `42·512 + 3·513·512 = 809 472` parameters.
//!
//! | variant           | branches                     | head                                     |
//! |-------------------|------------------------------|------------------------------------------|
//! | `l1_reg`          | one body, batch norm, L1     | `w → 1` sigmoid                          |
//! | `l2_reg`          | one body, batch norm, L2     | `w → 1` sigmoid                          |
//! | `concat`          | L1 body + L2 body, batch norm| concat, `2w → head` ReLU, `head → 1` sigmoid |
//! | `residual_concat` | same bodies, no batch norm, one skip each | as `concat`                 |
//!
//! The residual skip adds the post-ReLU output of hidden layer `tap.from`
//! into the pre-activation of hidden layer `tap.to` (default 1 → 4). With the
//! defaults, `residual_concat` has `2·809 472 + 131 200 + 129 = 1 750 273`
//! parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{BatchNorm, BatchNormConfig, Concat, Dense, Mode, Relu, ResidualAdd, Sigmoid};
use crate::objective::{penalty_grad, regularized_loss, LossReport, RegMode, RegularizationConfig};
use crate::optim::ParamSlot;
use crate::tensor::{Init, Matrix, RngState};

/// Dense layers per branch body.
pub const HIDDEN_LAYERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    L1Reg,
    L2Reg,
    Concat,
    ResidualConcat,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::L1Reg,
        Variant::L2Reg,
        Variant::Concat,
        Variant::ResidualConcat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::L1Reg => "l1_reg",
            Variant::L2Reg => "l2_reg",
            Variant::Concat => "concat",
            Variant::ResidualConcat => "residual_concat",
        }
    }

    pub fn branch_count(self) -> usize {
        match self {
            Variant::L1Reg | Variant::L2Reg => 1,
            Variant::Concat | Variant::ResidualConcat => 2,
        }
    }

    pub fn uses_batch_norm(self) -> bool {
        self != Variant::ResidualConcat
    }

    pub fn uses_skip(self) -> bool {
        self == Variant::ResidualConcat
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected one of l1_reg, l2_reg, concat, residual_concat)"
                ))
            })
    }
}

/// Where batch normalization sits relative to each hidden ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnPlacement {
    #[default]
    PostActivation,
    PreActivation,
}

/// Skip connection endpoints as 1-based hidden layer indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidualTap {
    /// Layer whose post-activation output is carried forward.
    pub from: usize,
    /// Layer whose pre-activation receives it.
    pub to: usize,
}

impl Default for ResidualTap {
    fn default() -> Self {
        Self { from: 1, to: 4 }
    }
}

impl ResidualTap {
    pub fn validate(&self) -> Result<()> {
        if self.from < 1 || self.from >= self.to || self.to > HIDDEN_LAYERS {
            return Err(Error::Config(format!(
                "residual tap must satisfy 1 <= from < to <= {HIDDEN_LAYERS}, got {} -> {}",
                self.from, self.to
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_dim: usize,
    pub hidden_width: usize,
    pub head_width: usize,
    /// Penalty strength shared by every regularized weight.
    pub alpha: f64,
    pub seed: u64,
    pub batch_norm: BatchNormConfig,
    pub bn_placement: BnPlacement,
    pub residual_tap: ResidualTap,
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            input_dim: 41,
            hidden_width: 512,
            head_width: 128,
            alpha: 0.01,
            seed: 0,
            batch_norm: BatchNormConfig::default(),
            bn_placement: BnPlacement::default(),
            residual_tap: ResidualTap::default(),
        }
    }

    pub fn with_dims(mut self, input_dim: usize, hidden_width: usize, head_width: usize) -> Self {
        self.input_dim = input_dim;
        self.hidden_width = hidden_width;
        self.head_width = head_width;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("hidden_width", self.hidden_width),
            ("head_width", self.head_width),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        RegularizationConfig::new(RegMode::None, self.alpha)?;
        self.batch_norm.validate()?;
        self.residual_tap.validate()
    }

    /// Penalty applied to each branch, in branch order.
    pub fn branch_regs(&self) -> Vec<RegularizationConfig> {
        let cfg = |mode| RegularizationConfig {
            mode,
            alpha: self.alpha,
        };
        match self.variant {
            Variant::L1Reg => vec![cfg(RegMode::L1)],
            Variant::L2Reg => vec![cfg(RegMode::L2)],
            Variant::Concat | Variant::ResidualConcat => vec![cfg(RegMode::L1), cfg(RegMode::L2)],
        }
    }

    /// Penalty on the head's dense layers: the branch penalty for single-branch
    /// variants, none for the two-branch ones.
    pub fn head_reg(&self) -> RegularizationConfig {
        match self.variant {
            Variant::L1Reg | Variant::L2Reg => self.branch_regs()[0],
            Variant::Concat | Variant::ResidualConcat => RegularizationConfig::none(),
        }
    }
}

/// Construction options for a single [`Branch`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchConfig {
    pub input_dim: usize,
    pub width: usize,
    pub seed: u64,
    pub reg: RegularizationConfig,
    pub batch_norm: Option<(BatchNormConfig, BnPlacement)>,
    pub skip: Option<ResidualTap>,
}

#[derive(Debug, Clone)]
struct Skip {
    tap: ResidualTap,
    add: ResidualAdd,
    enabled: bool,
}

/// One branch body: four dense + ReLU stages, optional batch norm, optional skip.
#[derive(Debug, Clone)]
pub struct Branch {
    dense: Vec<Dense>,
    relu: Vec<Relu>,
    norm: Vec<BatchNorm>,
    placement: BnPlacement,
    skip: Option<Skip>,
    reg: RegularizationConfig,
}

impl Branch {
    pub fn new(cfg: BranchConfig) -> Result<Self> {
        if cfg.input_dim == 0 || cfg.width == 0 {
            return Err(Error::Config("branch dimensions must be positive".into()));
        }
        if let Some(tap) = cfg.skip {
            tap.validate()?;
        }
        let mut rng = RngState::new(cfg.seed);
        let dense = (0..HIDDEN_LAYERS)
            .map(|i| {
                let fan_in = if i == 0 { cfg.input_dim } else { cfg.width };
                Dense::new(fan_in, cfg.width, Init::HeNormal, &mut rng)
            })
            .collect();
        let (norm, placement) = match cfg.batch_norm {
            Some((bn, placement)) => (
                (0..HIDDEN_LAYERS)
                    .map(|_| BatchNorm::new(cfg.width, bn))
                    .collect(),
                placement,
            ),
            None => (Vec::new(), BnPlacement::default()),
        };
        Ok(Self {
            dense,
            relu: vec![Relu::new(); HIDDEN_LAYERS],
            norm,
            placement,
            skip: cfg.skip.map(|tap| Skip {
                tap,
                add: ResidualAdd::new(),
                enabled: true,
            }),
            reg: cfg.reg,
        })
    }

    pub fn reg(&self) -> RegularizationConfig {
        self.reg
    }

    pub fn dense_layers(&self) -> &[Dense] {
        &self.dense
    }

    pub fn dense_layers_mut(&mut self) -> &mut [Dense] {
        &mut self.dense
    }

    pub fn batch_norms(&self) -> &[BatchNorm] {
        &self.norm
    }

    pub fn param_count(&self) -> usize {
        self.dense.iter().map(Dense::param_count).sum()
    }

    fn set_mode(&mut self, mode: Mode) {
        self.norm.iter_mut().for_each(|bn| bn.set_mode(mode));
    }

    fn active_skip(&self, layer: usize) -> Option<ResidualTap> {
        self.skip
            .as_ref()
            .filter(|s| s.enabled)
            .map(|s| s.tap)
            .filter(|t| t.from == layer || t.to == layer)
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        let mut carried: Option<Matrix> = None;
        for i in 0..HIDDEN_LAYERS {
            let layer = i + 1;
            let mut z = self.dense[i].forward(&h)?;
            if self.active_skip(layer).is_some_and(|t| t.to == layer) {
                let skip = carried.take().expect("skip source precedes its target");
                z = self
                    .skip
                    .as_mut()
                    .expect("active skip")
                    .add
                    .forward(&z, &skip)?;
            }
            if !self.norm.is_empty() && self.placement == BnPlacement::PreActivation {
                z = self.norm[i].forward(&z)?;
            }
            let mut a = self.relu[i].forward(&z);
            if !self.norm.is_empty() && self.placement == BnPlacement::PostActivation {
                a = self.norm[i].forward(&a)?;
            }
            if self.active_skip(layer).is_some_and(|t| t.from == layer) {
                carried = Some(a.clone());
            }
            h = a;
        }
        Ok(h)
    }

    /// Forward pass with running batch-norm statistics and no caching.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        let mut carried: Option<Matrix> = None;
        for i in 0..HIDDEN_LAYERS {
            let layer = i + 1;
            let mut z = self.dense[i].infer(&h)?;
            if self.active_skip(layer).is_some_and(|t| t.to == layer) {
                let skip = carried.take().expect("skip source precedes its target");
                z = ResidualAdd::infer(&z, &skip)?;
            }
            if !self.norm.is_empty() && self.placement == BnPlacement::PreActivation {
                z = self.norm[i].infer(&z)?;
            }
            let mut a = crate::layers::relu(&z);
            if !self.norm.is_empty() && self.placement == BnPlacement::PostActivation {
                a = self.norm[i].infer(&a)?;
            }
            if self.active_skip(layer).is_some_and(|t| t.from == layer) {
                carried = Some(a.clone());
            }
            h = a;
        }
        Ok(h)
    }

    /// Backpropagates `grad_out` and populates every dense gradient (data term only).
    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        let mut g = grad_out.clone();
        let mut skip_grad: Option<Matrix> = None;
        for i in (0..HIDDEN_LAYERS).rev() {
            let layer = i + 1;
            if self.active_skip(layer).is_some_and(|t| t.from == layer) {
                let extra = skip_grad
                    .take()
                    .ok_or(Error::MissingCache("residual_add_backward"))?;
                g.add_assign(&extra)?;
            }
            if !self.norm.is_empty() && self.placement == BnPlacement::PostActivation {
                g = self.norm[i].backward(&g)?;
            }
            g = self.relu[i].backward(&g)?;
            if !self.norm.is_empty() && self.placement == BnPlacement::PreActivation {
                g = self.norm[i].backward(&g)?;
            }
            if self.active_skip(layer).is_some_and(|t| t.to == layer) {
                let (main, skip) = self.skip.as_mut().expect("active skip").add.backward(&g)?;
                g = main;
                skip_grad = Some(skip);
            }
            g = self.dense[i].backward(&g)?;
        }
        Ok(g)
    }

    fn add_penalty_grads(&mut self) -> Result<()> {
        if self.reg.mode == RegMode::None {
            return Ok(());
        }
        for d in &mut self.dense {
            let extra = penalty_grad(&[d.weight()], &self.reg).remove(0);
            d.grad_weight_mut().add_assign(&extra)?;
        }
        Ok(())
    }

    fn relu_inputs(&self) -> impl Iterator<Item = &Matrix> {
        self.relu.iter().filter_map(Relu::cached_input)
    }
}

#[derive(Debug, Clone)]
struct Head {
    concat: Option<Concat>,
    hidden: Option<(Dense, Relu)>,
    output: Dense,
    sigmoid: Sigmoid,
    reg: RegularizationConfig,
}

impl Head {
    fn new(model_cfg: &ModelConfig) -> Self {
        let mut rng = RngState::new(model_cfg.seed.wrapping_add(2));
        let w = model_cfg.hidden_width;
        let (concat, hidden, last_in) = if model_cfg.variant.branch_count() == 2 {
            let dense = Dense::new(2 * w, model_cfg.head_width, Init::HeNormal, &mut rng);
            (
                Some(Concat::new()),
                Some((dense, Relu::new())),
                model_cfg.head_width,
            )
        } else {
            (None, None, w)
        };
        Self {
            concat,
            hidden,
            output: Dense::new(last_in, 1, Init::XavierUniform, &mut rng),
            sigmoid: Sigmoid::new(),
            reg: model_cfg.head_reg(),
        }
    }

    fn forward(&mut self, features: &[Matrix]) -> Result<Matrix> {
        let mut h = match &mut self.concat {
            Some(c) => c.forward(&features[0], &features[1])?,
            None => features[0].clone(),
        };
        if let Some((dense, relu)) = &mut self.hidden {
            h = relu.forward(&dense.forward(&h)?);
        }
        Ok(self.sigmoid.forward(&self.output.forward(&h)?))
    }

    fn infer(&self, features: &[Matrix]) -> Result<Matrix> {
        let mut h = match &self.concat {
            Some(_) => Concat::infer(&features[0], &features[1])?,
            None => features[0].clone(),
        };
        if let Some((dense, _)) = &self.hidden {
            h = crate::layers::relu(&dense.infer(&h)?);
        }
        Ok(crate::layers::sigmoid(&self.output.infer(&h)?))
    }

    /// Returns one gradient per branch.
    fn backward(&mut self, grad_out: &Matrix) -> Result<Vec<Matrix>> {
        let mut g = self.output.backward(&self.sigmoid.backward(grad_out)?)?;
        if let Some((dense, relu)) = &mut self.hidden {
            g = dense.backward(&relu.backward(&g)?)?;
        }
        match &mut self.concat {
            Some(c) => {
                let (a, b) = c.backward(&g)?;
                Ok(vec![a, b])
            }
            None => Ok(vec![g]),
        }
    }

    fn dense_layers(&self) -> Vec<(&'static str, &Dense)> {
        let mut out = Vec::with_capacity(2);
        if let Some((d, _)) = &self.hidden {
            out.push(("head.dense", d));
        }
        out.push(("head.output", &self.output));
        out
    }

    fn dense_layers_mut(&mut self) -> Vec<(&'static str, &mut Dense)> {
        let mut out = Vec::with_capacity(2);
        if let Some((d, _)) = &mut self.hidden {
            out.push(("head.dense", d));
        }
        out.push(("head.output", &mut self.output));
        out
    }
}

/// Kinds of layer appearing in a model's layer list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Relu,
    Sigmoid,
    Batchnorm,
    Concat,
    ResidualAdd,
}

/// One row of [`Model::layers`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerInfo {
    pub name: String,
    pub kind: LayerKind,
    pub input_width: usize,
    pub output_width: usize,
    pub params: usize,
}

/// Name, size and penalty of one trainable tensor, in [`Model::parameters`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: (usize, usize),
    /// Penalty applied to this tensor; `None` for biases.
    pub penalty: Option<RegularizationConfig>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    branches: Vec<Branch>,
    head: Head,
    mode: Mode,
    gradient_fault: bool,
}

impl Model {
    /// Builds `model_cfg.variant`. Branch `i` is initialized from `model_cfg.seed + i`
    /// and the head from `model_cfg.seed + 2`.
    pub fn build(model_cfg: ModelConfig) -> Result<Self> {
        model_cfg.validate()?;
        let bn = model_cfg
            .variant
            .uses_batch_norm()
            .then_some((model_cfg.batch_norm, model_cfg.bn_placement));
        let skip = model_cfg
            .variant
            .uses_skip()
            .then_some(model_cfg.residual_tap);
        let branches = model_cfg
            .branch_regs()
            .into_iter()
            .enumerate()
            .map(|(i, reg)| {
                Branch::new(BranchConfig {
                    input_dim: model_cfg.input_dim,
                    width: model_cfg.hidden_width,
                    seed: model_cfg.seed.wrapping_add(i as u64),
                    reg,
                    batch_norm: bn,
                    skip,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head = Head::new(&model_cfg);
        Ok(Self {
            config: model_cfg,
            branches,
            head,
            mode: Mode::Train,
            gradient_fault: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        self.branches.iter_mut().for_each(|b| b.set_mode(mode));
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branches_mut(&mut self) -> &mut [Branch] {
        &mut self.branches
    }

    pub fn has_batch_norm(&self) -> bool {
        self.branches.iter().any(|b| !b.norm.is_empty())
    }

    /// Enables or disables the residual skip in every branch (no effect on
    /// variants without one).
    pub fn set_skip_enabled(&mut self, enabled: bool) {
        for s in self.branches.iter_mut().filter_map(|b| b.skip.as_mut()) {
            s.enabled = enabled;
        }
    }

    /// Test hook: scales the first dense weight gradient after every backward
    /// pass so gradient checks can be shown to catch a broken backward.
    #[doc(hidden)]
    pub fn inject_gradient_fault(&mut self) {
        self.gradient_fault = true;
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.config.input_dim {
            return Err(Error::shape(
                "model_forward",
                x.shape(),
                (x.rows(), self.config.input_dim),
            ));
        }
        Ok(())
    }

    /// Probabilities `(batch × 1)`. In train mode caches activations for
    /// [`Model::backward`]; in eval mode behaves like [`Model::predict`].
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        if self.mode == Mode::Eval {
            return self.predict(x);
        }
        self.check_input(x)?;
        let features = self
            .branches
            .iter_mut()
            .map(|b| b.forward(x))
            .collect::<Result<Vec<_>>>()?;
        self.head.forward(&features)
    }

    /// Eval-mode probabilities; read-only.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let features = self
            .branches
            .iter()
            .map(|b| b.infer(x))
            .collect::<Result<Vec<_>>>()?;
        self.head.infer(&features)
    }

    /// Labels from [`Model::predict`] at `threshold`.
    pub fn classify(&self, x: &Matrix, threshold: f64) -> Result<Vec<u8>> {
        classify_probabilities(&self.predict(x)?, threshold)
    }

    /// Populates every parameter gradient from `grad_loss` (the loss gradient
    /// with respect to the output probabilities) and adds the penalty gradients.
    pub fn backward(&mut self, grad_loss: &Matrix) -> Result<()> {
        if self.mode != Mode::Train {
            return Err(Error::Config(
                "backward requires a train-mode forward pass".into(),
            ));
        }
        let grads = self.head.backward(grad_loss)?;
        for (branch, g) in self.branches.iter_mut().zip(&grads) {
            branch.backward(g)?;
            branch.add_penalty_grads()?;
        }
        let head_reg = self.head.reg;
        if head_reg.mode != RegMode::None {
            for (_, d) in self.head.dense_layers_mut() {
                let extra = penalty_grad(&[d.weight()], &head_reg).remove(0);
                d.grad_weight_mut().add_assign(&extra)?;
            }
        }
        if self.gradient_fault {
            let g = self.branches[0].dense[0].grad_weight_mut();
            *g = g.scale(1.5)?;
        }
        Ok(())
    }

    /// Dense layers with their names and penalties, in parameter order.
    fn dense_layers(&self) -> Vec<(String, &Dense, RegularizationConfig)> {
        let mut out = Vec::new();
        for (b, branch) in self.branches.iter().enumerate() {
            for (i, d) in branch.dense.iter().enumerate() {
                out.push((format!("branch{b}.dense{}", i + 1), d, branch.reg));
            }
        }
        for (name, d) in self.head.dense_layers() {
            out.push((name.to_string(), d, self.head.reg));
        }
        out
    }

    fn dense_layers_mut(&mut self) -> Vec<(String, &mut Dense)> {
        let mut out = Vec::new();
        for (b, branch) in self.branches.iter_mut().enumerate() {
            for (i, d) in branch.dense.iter_mut().enumerate() {
                out.push((format!("branch{b}.dense{}", i + 1), d));
            }
        }
        for (name, d) in self.head.dense_layers_mut() {
            out.push((name.to_string(), d));
        }
        out
    }

    pub(crate) fn dense_by_name_mut(&mut self, name: &str) -> Option<&mut Dense> {
        self.dense_layers_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d)
    }

    pub(crate) fn batch_norm_by_name_mut(&mut self, name: &str) -> Option<&mut BatchNorm> {
        let (b, i) = parse_bn_name(name)?;
        self.branches.get_mut(b)?.norm.get_mut(i)
    }

    pub(crate) fn batch_norm_by_name(&self, name: &str) -> Option<&BatchNorm> {
        let (b, i) = parse_bn_name(name)?;
        self.branches.get(b)?.norm.get(i)
    }

    pub(crate) fn dense_by_name(&self, name: &str) -> Option<&Dense> {
        self.dense_layers()
            .into_iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, d, _)| d)
    }

    /// Trainable parameter count: `fan_in·fan_out + fan_out` per dense layer.
    pub fn param_count(&self) -> usize {
        self.dense_layers()
            .iter()
            .map(|(_, d, _)| d.param_count())
            .sum()
    }

    /// Parameter count of the first branch body alone.
    pub fn branch_param_count(&self) -> usize {
        self.branches[0].param_count()
    }

    /// Every layer in forward order.
    pub fn layers(&self) -> Vec<LayerInfo> {
        let mut out = Vec::new();
        let w = self.config.hidden_width;
        let info = |name: String, kind, input_width, output_width, params| LayerInfo {
            name,
            kind,
            input_width,
            output_width,
            params,
        };
        for (b, branch) in self.branches.iter().enumerate() {
            let p = format!("branch{b}");
            for (i, d) in branch.dense.iter().enumerate() {
                let layer = i + 1;
                out.push(info(
                    format!("{p}.dense{layer}"),
                    LayerKind::Dense,
                    d.fan_in(),
                    w,
                    d.param_count(),
                ));
                if branch.skip.as_ref().is_some_and(|s| s.tap.to == layer) {
                    out.push(info(
                        format!("{p}.residual_add"),
                        LayerKind::ResidualAdd,
                        w,
                        w,
                        0,
                    ));
                }
                let bn = info(format!("{p}.bn{layer}"), LayerKind::Batchnorm, w, w, 0);
                let has_bn = !branch.norm.is_empty();
                if has_bn && branch.placement == BnPlacement::PreActivation {
                    out.push(bn.clone());
                }
                out.push(info(format!("{p}.relu{layer}"), LayerKind::Relu, w, w, 0));
                if has_bn && branch.placement == BnPlacement::PostActivation {
                    out.push(bn);
                }
            }
        }
        if self.head.concat.is_some() {
            out.push(info("head.concat".into(), LayerKind::Concat, w, 2 * w, 0));
        }
        if let Some((d, _)) = &self.head.hidden {
            out.push(info(
                "head.dense".into(),
                LayerKind::Dense,
                d.fan_in(),
                d.fan_out(),
                d.param_count(),
            ));
            out.push(info(
                "head.relu".into(),
                LayerKind::Relu,
                d.fan_out(),
                d.fan_out(),
                0,
            ));
        }
        let o = &self.head.output;
        out.push(info(
            "head.output".into(),
            LayerKind::Dense,
            o.fan_in(),
            1,
            o.param_count(),
        ));
        out.push(info("head.sigmoid".into(), LayerKind::Sigmoid, 1, 1, 0));
        out
    }

    /// Trainable tensors: for each dense layer its weight then its bias.
    pub fn parameters(&self) -> Vec<(String, &Matrix)> {
        self.dense_layers()
            .into_iter()
            .flat_map(|(name, d, _)| {
                [
                    (format!("{name}.weight"), d.weight()),
                    (format!("{name}.bias"), d.bias()),
                ]
            })
            .collect()
    }

    /// Gradients matching [`Model::parameters`].
    pub fn gradients(&self) -> Vec<(String, &Matrix)> {
        self.dense_layers()
            .into_iter()
            .flat_map(|(name, d, _)| {
                [
                    (format!("{name}.weight"), d.grad_weight()),
                    (format!("{name}.bias"), d.grad_bias()),
                ]
            })
            .collect()
    }

    pub fn param_info(&self) -> Vec<ParamInfo> {
        self.dense_layers()
            .into_iter()
            .flat_map(|(name, d, reg)| {
                [
                    ParamInfo {
                        name: format!("{name}.weight"),
                        shape: d.weight().shape(),
                        penalty: Some(reg),
                    },
                    ParamInfo {
                        name: format!("{name}.bias"),
                        shape: d.bias().shape(),
                        penalty: None,
                    },
                ]
            })
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.param_info().into_iter().map(|p| p.shape).collect()
    }

    /// Parameter/gradient pairs for an optimizer step.
    pub fn param_slots(&mut self) -> Vec<ParamSlot<'_>> {
        self.dense_layers_mut()
            .into_iter()
            .flat_map(|(name, d)| {
                let [(w, gw), (b, gb)] = d.params_and_grads();
                [
                    ParamSlot {
                        name: format!("{name}.weight"),
                        value: w,
                        grad: gw,
                    },
                    ParamSlot {
                        name: format!("{name}.bias"),
                        value: b,
                        grad: gb,
                    },
                ]
            })
            .collect()
    }

    /// All parameters concatenated in [`Model::parameters`] order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.parameters()
            .into_iter()
            .flat_map(|(_, m)| m.data().iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.gradients()
            .into_iter()
            .flat_map(|(_, m)| m.data().iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = self.param_shapes().iter().map(|(r, c)| r * c).sum();
        if values.len() != total || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::shape(
                "set_flat_params",
                (values.len(), 1),
                (total, 1),
            ));
        }
        let mut offset = 0;
        for slot in self.param_slots() {
            let n = slot.value.len();
            slot.value
                .data_mut()
                .copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Weight tensors grouped by the penalty that applies to them.
    fn penalty_groups(&self) -> Vec<(RegularizationConfig, Vec<&Matrix>)> {
        let mut groups: Vec<(RegularizationConfig, Vec<&Matrix>)> = self
            .branches
            .iter()
            .map(|b| (b.reg, b.dense.iter().map(Dense::weight).collect()))
            .collect();
        groups.push((
            self.head.reg,
            self.head
                .dense_layers()
                .into_iter()
                .map(|(_, d)| d.weight())
                .collect(),
        ));
        groups
    }

    /// Combines `data_loss` with every branch's and the head's scaled penalty.
    pub fn loss_report(&self, data_loss: f64) -> LossReport {
        let penalty: f64 = self
            .penalty_groups()
            .into_iter()
            .map(|(cfg, weights)| regularized_loss(0.0, &weights, &cfg).penalty)
            .sum();
        LossReport {
            data_loss,
            penalty,
            total_loss: data_loss + penalty,
        }
    }

    /// Sign pattern (`input > 0`) of every cached ReLU input, in a fixed order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let branch_inputs = self.branches.iter().flat_map(Branch::relu_inputs);
        let head_input = self
            .head
            .hidden
            .as_ref()
            .and_then(|(_, r)| r.cached_input());
        branch_inputs
            .chain(head_input)
            .flat_map(|m| m.data().iter().map(|&v| v > 0.0))
            .collect()
    }
}

fn parse_bn_name(name: &str) -> Option<(usize, usize)> {
    let (branch, layer) = name.split_once('.')?;
    let b = branch.strip_prefix("branch")?.parse().ok()?;
    let i: usize = layer.strip_prefix("bn")?.parse().ok()?;
    Some((b, i.checked_sub(1)?))
}

/// `1` where `p >= threshold`, else `0`.
pub fn classify_probabilities(probs: &Matrix, threshold: f64) -> Result<Vec<u8>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    Ok(probs
        .data()
        .iter()
        .map(|&p| u8::from(p >= threshold))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::seeded_init;

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig::new(variant).with_dims(3, 4, 4).with_seed(5)
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("resnet".parse::<Variant>(), Err(Error::Config(_))));
    }

    #[test]
    fn model_config_validation() {
        assert!(Model::build(ModelConfig::new(Variant::Concat).with_dims(0, 4, 4)).is_err());
        assert!(Model::build(ModelConfig::new(Variant::Concat).with_alpha(-1.0)).is_err());
        let mut s = tiny(Variant::ResidualConcat);
        s.residual_tap = ResidualTap { from: 3, to: 2 };
        assert!(Model::build(s).is_err());
    }

    #[test]
    fn dense_layer_count_and_sizes() {
        let m = Model::build(ModelConfig::new(Variant::L1Reg)).unwrap();
        assert_eq!(m.branch_param_count(), 809_472);
        assert_eq!(m.param_count(), 809_985);
        let first = &m.layers()[0];
        assert_eq!((first.kind, first.params), (LayerKind::Dense, 21_504));
    }

    #[test]
    fn zero_network_outputs_half() {
        let mut m = Model::build(tiny(Variant::Concat)).unwrap();
        let zeros = vec![0.0; m.flat_params().len()];
        m.set_flat_params(&zeros).unwrap();
        let x = seeded_init(55, 3, Init::HeNormal, &mut RngState::new(1));
        let p = m.forward(&x).unwrap();
        assert_eq!(p.shape(), (55, 1));
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rejects_wrong_input_width() {
        let mut m = Model::build(tiny(Variant::L2Reg)).unwrap();
        assert!(m.forward(&Matrix::zeros(4, 2)).is_err());
        assert!(m.predict(&Matrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn backward_without_forward_fails() {
        let mut m = Model::build(tiny(Variant::ResidualConcat)).unwrap();
        assert!(matches!(
            m.backward(&Matrix::zeros(2, 1)),
            Err(Error::MissingCache(_))
        ));
        m.set_mode(Mode::Eval);
        assert!(m.backward(&Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn layer_list_is_ordered() {
        let m = Model::build(tiny(Variant::ResidualConcat)).unwrap();
        let names: Vec<_> = m.layers().into_iter().map(|l| l.name).collect();
        assert_eq!(
            &names[..10],
            &[
                "branch0.dense1",
                "branch0.relu1",
                "branch0.dense2",
                "branch0.relu2",
                "branch0.dense3",
                "branch0.relu3",
                "branch0.dense4",
                "branch0.residual_add",
                "branch0.relu4",
                "branch1.dense1",
            ]
        );
        assert_eq!(names.last().unwrap(), "head.sigmoid");
        let bn = Model::build(tiny(Variant::L1Reg)).unwrap();
        assert_eq!(bn.layers()[2].name, "branch0.bn1");
    }

    #[test]
    fn classify_threshold_rule() {
        let p = Matrix::column_vector(&[0.5, 0.2, 0.9]).unwrap();
        assert_eq!(classify_probabilities(&p, 0.5).unwrap(), vec![1, 0, 1]);
        assert!(classify_probabilities(&p, 1.0).is_err());
        assert!(classify_probabilities(&p, 0.0).is_err());
    }

    #[test]
    fn bn_names_resolve() {
        assert_eq!(parse_bn_name("branch1.bn4"), Some((1, 3)));
        assert_eq!(parse_bn_name("branch1.bn0"), None);
        assert_eq!(parse_bn_name("head.dense"), None);
    }
}
