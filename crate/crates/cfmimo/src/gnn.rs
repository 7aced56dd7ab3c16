//! Per-BS graph neural networks.
//!
//! Each base station runs its own network over a complete graph of user
//! nodes (plus an IRS node at the controlling BS). Message extraction and
//! combination MLPs share weights across the nodes of a graph, so one set of
//! parameters serves any number of users. Outputs pass through the
//! normalization layers of [`crate::beamform`], which makes every forward
//! pass feasible by construction.

use serde::{Deserialize, Serialize};

use crate::beamform::{
    normalize_bs_power, normalize_bs_power_on_tape, normalize_unit_modulus,
    normalize_unit_modulus_on_tape,
};
use crate::channel::{ChannelRealization, SimRng, SystemConfig};
use crate::error::{Error, Result};
use crate::numerics::tape::{CVar, Tape, Var};
use crate::numerics::{ComplexMatrix, RealTensor};
use crate::rate::{BeamformingSolution, TapeSolution};

/// Architecture hyperparameters shared by all per-BS networks.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct GnnConfig {
    /// Number of message-passing rounds.
    pub layer_count: usize,
    /// MLP widths; the final entry doubles as the message and node-feature
    /// width.
    pub hidden_widths: Vec<usize>,
    /// Index of the BS that also emits the IRS reflection coefficients.
    pub controlling_bs: usize,
    /// Constant multiplier applied to the CSI input features. Physical
    /// channel coefficients are tiny after path loss (1e-5 and below); a
    /// fixed scale brings them to order one so the zero-bias layers and the
    /// power normalization operate away from their degenerate regimes.
    pub feature_scale: f64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            layer_count: 2,
            hidden_widths: vec![64, 32],
            controlling_bs: 0,
            feature_scale: 1e6,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self, bs_count: usize) -> Result<()> {
        if self.layer_count == 0 {
            return Err(Error::Config("layer_count must be >= 1".into()));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::Config("hidden_widths must be nonempty and > 0".into()));
        }
        if self.controlling_bs >= bs_count {
            return Err(Error::Config(format!(
                "controlling_bs {} out of range for {} BSs",
                self.controlling_bs, bs_count
            )));
        }
        if !(self.feature_scale > 0.0 && self.feature_scale.is_finite()) {
            return Err(Error::Config("feature_scale must be finite and > 0".into()));
        }
        Ok(())
    }

    /// Width of messages and node features after any layer.
    pub fn feature_width(&self) -> usize {
        *self.hidden_widths.last().expect("validated nonempty")
    }
}

/// Affine map `y = W x + b`.
#[derive(Debug, Clone)]
pub struct Affine {
    pub weight: RealTensor,
    pub bias: RealTensor,
}

impl Affine {
    fn init(out_dim: usize, in_dim: usize, rng: &mut SimRng) -> Self {
        let bound = (2.0 / in_dim as f64).sqrt();
        let weight = RealTensor::matrix(
            out_dim,
            in_dim,
            (0..out_dim * in_dim).map(|_| rng.uniform(-bound, bound)).collect(),
        );
        Self {
            weight,
            bias: RealTensor::zeros(vec![out_dim, 1]),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    fn apply(&self, x: &RealTensor) -> RealTensor {
        let (out_dim, in_dim) = (self.weight.rows(), self.weight.cols());
        assert_eq!(x.len(), in_dim, "affine input width mismatch");
        let mut y = RealTensor::zeros(vec![out_dim, 1]);
        for r in 0..out_dim {
            let mut acc = 0.0;
            for c in 0..in_dim {
                acc += self.weight.get(r, c) * x.data()[c];
            }
            y.data_mut()[r] = acc + self.bias.data()[r];
        }
        y
    }
}

fn lrelu(x: &RealTensor) -> RealTensor {
    RealTensor::new(
        x.shape().to_vec(),
        x.data()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { crate::numerics::tape::LRELU_SLOPE * v })
            .collect(),
    )
}

/// Multi-layer perceptron with a leaky rectifier between stages and
/// optionally after the final stage.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub stages: Vec<Affine>,
    pub activate_output: bool,
}

impl Mlp {
    fn init(in_dim: usize, widths: &[usize], activate_output: bool, rng: &mut SimRng) -> Self {
        let mut stages = Vec::with_capacity(widths.len());
        let mut prev = in_dim;
        for &w in widths {
            stages.push(Affine::init(w, prev, rng));
            prev = w;
        }
        Self {
            stages,
            activate_output,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.stages.last().expect("nonempty MLP").out_dim()
    }

    fn apply(&self, x: &RealTensor) -> RealTensor {
        let last = self.stages.len() - 1;
        let mut h = x.clone();
        for (s, stage) in self.stages.iter().enumerate() {
            h = stage.apply(&h);
            if s < last || self.activate_output {
                h = lrelu(&h);
            }
        }
        h
    }
}

/// One message-passing round: an extraction MLP applied to every neighbor
/// feature and a combination MLP applied to `[max-message || own feature]`.
#[derive(Debug, Clone)]
pub struct GnnLayer {
    pub extract: Mlp,
    pub combine: Mlp,
}

/// The network of one BS. Only the controlling BS carries an IRS head.
#[derive(Debug, Clone)]
pub struct BsNetwork {
    pub layers: Vec<GnnLayer>,
    pub user_head: Affine,
    pub irs_head: Option<Affine>,
}

/// Dimensions a model was built for; checked when loading checkpoints and
/// when running against a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub bs_count: usize,
    pub antennas_per_bs: usize,
    pub irs_elements: usize,
    pub layer_count: usize,
    pub hidden_widths: Vec<usize>,
    pub controlling_bs: usize,
    pub feature_scale: f64,
}

/// All per-BS networks of one deployment.
#[derive(Debug, Clone)]
pub struct GnnModel {
    pub per_bs: Vec<BsNetwork>,
    pub dims: ModelDims,
}

/// Input width of the first layer: stacked real/imaginary direct and
/// cascaded channels.
pub fn input_width(antennas_per_bs: usize, irs_elements: usize) -> usize {
    2 * antennas_per_bs * (irs_elements + 1)
}

/// Fresh model with uniform `[-sqrt(2/fan_in), +sqrt(2/fan_in)]` weights and
/// zero biases. The IRS head bias starts at 0.1 on its first L slots so the
/// unit-modulus normalization never sees a zero pair at initialization.
pub fn init_model(cfg: &SystemConfig, gnn_cfg: &GnnConfig, rng: &mut SimRng) -> Result<GnnModel> {
    cfg.validate()?;
    gnn_cfg.validate(cfg.bs_count)?;
    let d0 = input_width(cfg.antennas_per_bs, cfg.irs_elements);
    let d_feat = gnn_cfg.feature_width();

    let per_bs = (0..cfg.bs_count)
        .map(|i| {
            let mut layers = Vec::with_capacity(gnn_cfg.layer_count);
            let mut prev = d0;
            for _ in 0..gnn_cfg.layer_count {
                let extract = Mlp::init(prev, &gnn_cfg.hidden_widths, false, rng);
                let combine = Mlp::init(d_feat + prev, &gnn_cfg.hidden_widths, true, rng);
                layers.push(GnnLayer { extract, combine });
                prev = d_feat;
            }
            let user_head = Affine::init(2 * cfg.antennas_per_bs, d_feat, rng);
            let irs_head = if i == gnn_cfg.controlling_bs {
                let mut head = Affine::init(2 * cfg.irs_elements, d_feat, rng);
                for l in 0..cfg.irs_elements {
                    head.bias.data_mut()[l] = 0.1;
                }
                Some(head)
            } else {
                None
            };
            BsNetwork {
                layers,
                user_head,
                irs_head,
            }
        })
        .collect();

    Ok(GnnModel {
        per_bs,
        dims: ModelDims {
            bs_count: cfg.bs_count,
            antennas_per_bs: cfg.antennas_per_bs,
            irs_elements: cfg.irs_elements,
            layer_count: gnn_cfg.layer_count,
            hidden_widths: gnn_cfg.hidden_widths.clone(),
            controlling_bs: gnn_cfg.controlling_bs,
            feature_scale: gnn_cfg.feature_scale,
        },
    })
}

/// Zero-weight model with the wiring implied by `dims`; used as the target
/// structure when loading checkpoints.
pub fn skeleton_model(dims: &ModelDims) -> GnnModel {
    let d0 = input_width(dims.antennas_per_bs, dims.irs_elements);
    let d_feat = *dims.hidden_widths.last().expect("nonempty widths");
    let zero_mlp = |in_dim: usize, widths: &[usize], activate_output: bool| {
        let mut stages = Vec::with_capacity(widths.len());
        let mut prev = in_dim;
        for &w in widths {
            stages.push(Affine {
                weight: RealTensor::zeros(vec![w, prev]),
                bias: RealTensor::zeros(vec![w, 1]),
            });
            prev = w;
        }
        Mlp {
            stages,
            activate_output,
        }
    };

    let per_bs = (0..dims.bs_count)
        .map(|i| {
            let mut layers = Vec::with_capacity(dims.layer_count);
            let mut prev = d0;
            for _ in 0..dims.layer_count {
                layers.push(GnnLayer {
                    extract: zero_mlp(prev, &dims.hidden_widths, false),
                    combine: zero_mlp(d_feat + prev, &dims.hidden_widths, true),
                });
                prev = d_feat;
            }
            let user_head = Affine {
                weight: RealTensor::zeros(vec![2 * dims.antennas_per_bs, d_feat]),
                bias: RealTensor::zeros(vec![2 * dims.antennas_per_bs, 1]),
            };
            let irs_head = (i == dims.controlling_bs).then(|| Affine {
                weight: RealTensor::zeros(vec![2 * dims.irs_elements, d_feat]),
                bias: RealTensor::zeros(vec![2 * dims.irs_elements, 1]),
            });
            BsNetwork {
                layers,
                user_head,
                irs_head,
            }
        })
        .collect();

    GnnModel {
        per_bs,
        dims: dims.clone(),
    }
}

impl GnnModel {
    /// Check that the model fits a runtime configuration.
    pub fn check_compatible(&self, cfg: &SystemConfig) -> Result<()> {
        if self.dims.bs_count != cfg.bs_count {
            return Err(Error::Config(format!(
                "model built for {} BSs, config has {}",
                self.dims.bs_count, cfg.bs_count
            )));
        }
        if self.dims.antennas_per_bs != cfg.antennas_per_bs {
            return Err(Error::Config(format!(
                "model built for {} antennas, config has {}",
                self.dims.antennas_per_bs, cfg.antennas_per_bs
            )));
        }
        if self.dims.irs_elements != cfg.irs_elements {
            return Err(Error::Config(format!(
                "model built for {} IRS elements, config has {}",
                self.dims.irs_elements, cfg.irs_elements
            )));
        }
        Ok(())
    }

    /// Parameters in canonical order with stable names.
    pub fn named_params(&self) -> Vec<(String, &RealTensor)> {
        let mut out = Vec::new();
        for (i, bs) in self.per_bs.iter().enumerate() {
            for (n, layer) in bs.layers.iter().enumerate() {
                for (s, st) in layer.extract.stages.iter().enumerate() {
                    out.push((format!("bs{i}.layer{n}.extract.stage{s}.weight"), &st.weight));
                    out.push((format!("bs{i}.layer{n}.extract.stage{s}.bias"), &st.bias));
                }
                for (s, st) in layer.combine.stages.iter().enumerate() {
                    out.push((format!("bs{i}.layer{n}.combine.stage{s}.weight"), &st.weight));
                    out.push((format!("bs{i}.layer{n}.combine.stage{s}.bias"), &st.bias));
                }
            }
            out.push((format!("bs{i}.user_head.weight"), &bs.user_head.weight));
            out.push((format!("bs{i}.user_head.bias"), &bs.user_head.bias));
            if let Some(head) = &bs.irs_head {
                out.push((format!("bs{i}.irs_head.weight"), &head.weight));
                out.push((format!("bs{i}.irs_head.bias"), &head.bias));
            }
        }
        out
    }

    /// Mutable parameter tensors in the same canonical order.
    pub fn params_mut(&mut self) -> Vec<&mut RealTensor> {
        let mut out = Vec::new();
        for bs in self.per_bs.iter_mut() {
            for layer in bs.layers.iter_mut() {
                for st in layer.extract.stages.iter_mut() {
                    out.push(&mut st.weight);
                    out.push(&mut st.bias);
                }
                for st in layer.combine.stages.iter_mut() {
                    out.push(&mut st.weight);
                    out.push(&mut st.bias);
                }
            }
            out.push(&mut bs.user_head.weight);
            out.push(&mut bs.user_head.bias);
            if let Some(head) = &mut bs.irs_head {
                out.push(&mut head.weight);
                out.push(&mut head.bias);
            }
        }
        out
    }

    /// Total scalar parameter count.
    pub fn scalar_param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}

/// The channel blocks one BS is allowed to see: its own direct and cascaded
/// links, nothing else. Deployment-mode inference is forced through this
/// view, which makes cross-BS feature access unrepresentable.
#[derive(Debug, Clone, Copy)]
pub struct LocalCsi<'a> {
    pub direct: &'a [ComplexMatrix],
    pub cascaded: &'a [ComplexMatrix],
}

impl<'a> LocalCsi<'a> {
    pub fn of(real: &'a ChannelRealization, bs: usize) -> Self {
        Self {
            direct: &real.direct[bs],
            cascaded: &real.cascaded[bs],
        }
    }

    pub fn user_count(&self) -> usize {
        self.direct.len()
    }
}

/// Node features at some layer: one vector per user, plus the IRS node on
/// the controlling BS.
#[derive(Debug, Clone)]
pub struct NodeFeatures {
    pub users: Vec<RealTensor>,
    pub irs: Option<RealTensor>,
}

/// Layer-0 features: per user the stacked
/// `[Re d, Im d, vec(Re C), vec(Im C)]` (vec is column-major) multiplied by
/// the fixed feature scale, and for the IRS node the element-wise mean of
/// the user features.
pub fn input_features(local: &LocalCsi, include_irs: bool, scale: f64) -> NodeFeatures {
    let users: Vec<RealTensor> = (0..local.user_count())
        .map(|k| {
            let d = &local.direct[k];
            let c = &local.cascaded[k];
            let mut data = Vec::with_capacity(2 * d.rows() * (c.rows() + 1));
            data.extend(d.re().data().iter().map(|x| x * scale));
            data.extend(d.im().data().iter().map(|x| x * scale));
            for col in 0..c.cols() {
                for row in 0..c.rows() {
                    data.push(c.get(row, col).re * scale);
                }
            }
            for col in 0..c.cols() {
                for row in 0..c.rows() {
                    data.push(c.get(row, col).im * scale);
                }
            }
            RealTensor::column(data)
        })
        .collect();

    let irs = include_irs.then(|| {
        let width = users[0].len();
        let mut mean = vec![0.0; width];
        for u in &users {
            for (m, x) in mean.iter_mut().zip(u.data()) {
                *m += x;
            }
        }
        let inv = 1.0 / users.len() as f64;
        for m in &mut mean {
            *m *= inv;
        }
        RealTensor::column(mean)
    });

    NodeFeatures { users, irs }
}

fn elementwise_max(inputs: &[&RealTensor]) -> RealTensor {
    let mut out = inputs[0].clone();
    for t in &inputs[1..] {
        for (o, &x) in out.data_mut().iter_mut().zip(t.data()) {
            if x > *o {
                *o = x;
            }
        }
    }
    out
}

fn concat_pair(a: &RealTensor, b: &RealTensor) -> RealTensor {
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend(a.data());
    data.extend(b.data());
    RealTensor::column(data)
}

/// One message-passing round over the complete graph. A node with no
/// neighbors aggregates to the zero message.
pub fn gnn_layer(layer: &GnnLayer, features: &NodeFeatures) -> NodeFeatures {
    let user_msgs: Vec<RealTensor> = features.users.iter().map(|x| layer.extract.apply(x)).collect();
    let irs_msg = features.irs.as_ref().map(|x| layer.extract.apply(x));
    let msg_width = layer.extract.out_dim();

    let users = features
        .users
        .iter()
        .enumerate()
        .map(|(k, own)| {
            let mut neighbors: Vec<&RealTensor> = user_msgs
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != k)
                .map(|(_, m)| m)
                .collect();
            if let Some(m) = &irs_msg {
                neighbors.push(m);
            }
            let aggregated = if neighbors.is_empty() {
                RealTensor::zeros(vec![msg_width, 1])
            } else {
                elementwise_max(&neighbors)
            };
            layer.combine.apply(&concat_pair(&aggregated, own))
        })
        .collect();

    let irs = features.irs.as_ref().map(|own| {
        let neighbors: Vec<&RealTensor> = user_msgs.iter().collect();
        let aggregated = if neighbors.is_empty() {
            RealTensor::zeros(vec![msg_width, 1])
        } else {
            elementwise_max(&neighbors)
        };
        layer.combine.apply(&concat_pair(&aggregated, own))
    });

    NodeFeatures { users, irs }
}

fn raw_to_complex_column(raw: &RealTensor) -> ComplexMatrix {
    let m = raw.len() / 2;
    ComplexMatrix::from_fn(m, 1, |r, _| {
        num_complex::Complex64::new(raw.data()[r], raw.data()[r + m])
    })
}

/// Forward pass of one BS on its local CSI: K beamforming vectors and, on
/// the controlling BS, the reflection vector.
pub fn forward_bs(
    net: &BsNetwork,
    local: &LocalCsi,
    p_max_linear: f64,
    feature_scale: f64,
) -> Result<(Vec<ComplexMatrix>, Option<ComplexMatrix>)> {
    let mut features = input_features(local, net.irs_head.is_some(), feature_scale);
    for layer in &net.layers {
        features = gnn_layer(layer, &features);
    }

    let user_count = local.user_count();
    let m = net.user_head.out_dim() / 2;
    let mut raw_w = ComplexMatrix::zeros(m, user_count);
    for (k, x) in features.users.iter().enumerate() {
        let raw = net.user_head.apply(x);
        raw_w.set_col(k, &raw_to_complex_column(&raw));
    }
    let normalized = normalize_bs_power(&raw_w, p_max_linear)?;
    let beams = (0..user_count).map(|k| normalized.col(k)).collect();

    let v = match (&net.irs_head, &features.irs) {
        (Some(head), Some(x)) => Some(normalize_unit_modulus(&head.apply(x))?),
        _ => None,
    };
    Ok((beams, v))
}

/// Full forward pass: every BS runs on its own local CSI and the controlling
/// BS supplies the reflection vector.
pub fn forward(model: &GnnModel, real: &ChannelRealization, p_max_linear: f64) -> Result<BeamformingSolution> {
    let mut w = Vec::with_capacity(model.per_bs.len());
    let mut v = None;
    for (i, net) in model.per_bs.iter().enumerate() {
        let (beams, maybe_v) =
            forward_bs(net, &LocalCsi::of(real, i), p_max_linear, model.dims.feature_scale)?;
        w.push(beams);
        if maybe_v.is_some() {
            v = maybe_v;
        }
    }
    let v = v.ok_or_else(|| Error::Degenerate("no BS produced a reflection vector".into()))?;
    Ok(BeamformingSolution { w, v })
}

// ---------------------------------------------------------------------------
// Tape-based forward pass (training path)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct TapeAffine {
    weight: Var,
    bias: Var,
}

impl TapeAffine {
    fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        let prod = tape.matmul(self.weight, x);
        tape.add(prod, self.bias)
    }
}

#[derive(Debug, Clone)]
struct TapeMlp {
    stages: Vec<TapeAffine>,
    activate_output: bool,
}

impl TapeMlp {
    fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        let last = self.stages.len() - 1;
        let mut h = x;
        for (s, stage) in self.stages.iter().enumerate() {
            h = stage.apply(tape, h);
            if s < last || self.activate_output {
                h = tape.lrelu(h);
            }
        }
        h
    }
}

struct TapeBsNetwork {
    layers: Vec<(TapeMlp, TapeMlp)>,
    user_head: TapeAffine,
    irs_head: Option<TapeAffine>,
}

/// Model parameters bound to a tape as leaves, in canonical order.
pub struct TapeModel {
    per_bs: Vec<TapeBsNetwork>,
    /// Flat list of parameter leaves, aligned with
    /// [`GnnModel::named_params`] / [`GnnModel::params_mut`].
    pub param_vars: Vec<Var>,
}

/// Record every model parameter as a tape leaf.
pub fn bind_model(tape: &mut Tape, model: &GnnModel) -> TapeModel {
    let mut param_vars = Vec::new();
    let bind_affine = |tape: &mut Tape, vars: &mut Vec<Var>, a: &Affine| {
        let weight = tape.leaf(a.weight.clone());
        let bias = tape.leaf(a.bias.clone());
        vars.push(weight);
        vars.push(bias);
        TapeAffine { weight, bias }
    };

    let per_bs = model
        .per_bs
        .iter()
        .map(|bs| {
            let layers = bs
                .layers
                .iter()
                .map(|layer| {
                    let extract = TapeMlp {
                        stages: layer
                            .extract
                            .stages
                            .iter()
                            .map(|st| bind_affine(tape, &mut param_vars, st))
                            .collect(),
                        activate_output: layer.extract.activate_output,
                    };
                    let combine = TapeMlp {
                        stages: layer
                            .combine
                            .stages
                            .iter()
                            .map(|st| bind_affine(tape, &mut param_vars, st))
                            .collect(),
                        activate_output: layer.combine.activate_output,
                    };
                    (extract, combine)
                })
                .collect();
            let user_head = bind_affine(tape, &mut param_vars, &bs.user_head);
            let irs_head = bs
                .irs_head
                .as_ref()
                .map(|head| bind_affine(tape, &mut param_vars, head));
            TapeBsNetwork {
                layers,
                user_head,
                irs_head,
            }
        })
        .collect();

    TapeModel { per_bs, param_vars }
}

/// Differentiable forward pass over a fixed realization. Mirrors
/// [`forward`] exactly; channel features enter as constant leaves.
pub fn forward_on_tape(
    tape: &mut Tape,
    tmodel: &TapeModel,
    model: &GnnModel,
    real: &ChannelRealization,
    p_max_linear: f64,
) -> Result<TapeSolution> {
    let m = model.dims.antennas_per_bs;
    let l = model.dims.irs_elements;
    let mut w: Vec<Vec<CVar>> = Vec::with_capacity(tmodel.per_bs.len());
    let mut v: Option<CVar> = None;

    for (i, net) in tmodel.per_bs.iter().enumerate() {
        let local = LocalCsi::of(real, i);
        let plain = input_features(&local, net.irs_head.is_some(), model.dims.feature_scale);
        let mut users: Vec<Var> = plain.users.iter().map(|f| tape.leaf(f.clone())).collect();
        let mut irs: Option<Var> = plain.irs.as_ref().map(|f| tape.leaf(f.clone()));

        for (extract, combine) in &net.layers {
            let user_msgs: Vec<Var> = users.iter().map(|x| extract.apply(tape, *x)).collect();
            let irs_msg = irs.map(|x| extract.apply(tape, x));
            let msg_width = tape.value(user_msgs[0]).len();

            let next_users: Vec<Var> = users
                .iter()
                .enumerate()
                .map(|(k, own)| {
                    let mut neighbors: Vec<Var> = user_msgs
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != k)
                        .map(|(_, m)| *m)
                        .collect();
                    if let Some(msg) = irs_msg {
                        neighbors.push(msg);
                    }
                    let aggregated = if neighbors.is_empty() {
                        tape.leaf(RealTensor::zeros(vec![msg_width, 1]))
                    } else {
                        tape.max_set(&neighbors)
                    };
                    let joint = tape.concat(&[aggregated, *own]);
                    combine.apply(tape, joint)
                })
                .collect();

            let next_irs = irs.map(|own| {
                let aggregated = tape.max_set(&user_msgs);
                let joint = tape.concat(&[aggregated, own]);
                combine.apply(tape, joint)
            });

            users = next_users;
            irs = next_irs;
        }

        // User heads -> stacked raw beams -> power normalization.
        let mut raw_re = Vec::with_capacity(users.len());
        let mut raw_im = Vec::with_capacity(users.len());
        for x in &users {
            let raw = net.user_head.apply(tape, *x);
            raw_re.push(tape.slice(raw, 0, m));
            raw_im.push(tape.slice(raw, m, m));
        }
        let all_re = tape.concat(&raw_re);
        let all_im = tape.concat(&raw_im);
        let normalized = normalize_bs_power_on_tape(
            tape,
            CVar {
                re: all_re,
                im: all_im,
            },
            p_max_linear,
        );
        let beams = (0..users.len())
            .map(|k| CVar {
                re: tape.slice(normalized.re, k * m, m),
                im: tape.slice(normalized.im, k * m, m),
            })
            .collect();
        w.push(beams);

        if let (Some(head), Some(x)) = (&net.irs_head, irs) {
            let raw = head.apply(tape, x);
            let re_half = tape.slice(raw, 0, l);
            let im_half = tape.slice(raw, l, l);
            v = Some(normalize_unit_modulus_on_tape(tape, re_half, im_half));
        }
    }

    let v = v.ok_or_else(|| Error::Degenerate("no BS produced a reflection vector".into()))?;
    Ok(TapeSolution { w, v })
}
