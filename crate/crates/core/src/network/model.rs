//! Network assembly: one layer stack per input branch, concatenated into a
//! shared classification head.

use std::sync::Arc;

use ndarray::{concatenate, s, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Conv3d, CorrLayer, FullyConnected, Lattice, Layer, MaxPool};
use crate::correlation::CorrPlan;
use crate::error::{Error, Result};
use crate::geometry::{build_grid, haar_grid, GridSpec, GroupElement, GroupGrid, QuadratureGrid};
use crate::seed::derive_seed;
use crate::signal::{group_anchors, manifold_anchors, BumpMask};

/// How the nonlinearity between correlation layers acts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HReluMode {
    /// Pointwise `max(0, ·)` on function values.
    #[default]
    Value,
    /// Warps the group grid by `h ↦ exp(relu(log h))`; values pass through.
    DomainWarp,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Drops the spatial stage and averages voxel features.
    IntraOnly,
}

/// Mask parameters shared by all correlation layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrSettings {
    pub anchors: usize,
    pub tau_manifold: f64,
    pub tau_group: f64,
    pub manifold_spread: f64,
    pub group_spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// Per-ROI voxel stacks: correlation ladder, grid mean, then 3D convolutions.
    Dmri {
        input_grid: GridSpec,
        group_grid: GridSpec,
        rois: usize,
        roi_dims: [usize; 3],
        intra_channels: Vec<usize>,
        inter_channels: Vec<usize>,
        #[serde(default)]
        variant: Variant,
    },
    /// A single sampled SPD density through a correlation ladder.
    Spd {
        input_grid: GridSpec,
        group_grid: GridSpec,
        channels: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub architecture: Architecture,
    pub corr: CorrSettings,
    #[serde(default)]
    pub hrelu: HReluMode,
    pub classes: usize,
    #[serde(default)]
    pub seed: u64,
}

impl NetworkSpec {
    /// Per-ROI voxel network with the 5, 10, 15 / 20, 25 channel ladder.
    pub fn dmri(seed: u64) -> NetworkSpec {
        NetworkSpec {
            architecture: Architecture::Dmri {
                input_grid: GridSpec::Product {
                    order: 3,
                    radial: crate::geometry::RadialSpec { nodes: 6, log_min: -1.5, log_max: 1.5 },
                },
                group_grid: GridSpec::So3xScale {
                    n_alpha: 3,
                    n_beta: 2,
                    n_gamma: 3,
                    scale: crate::geometry::ScaleSpec::powers_of_two(0, 1),
                },
                rois: 4,
                roi_dims: [4, 4, 4],
                intra_channels: vec![5, 10, 15],
                inter_channels: vec![20, 25],
                variant: Variant::Full,
            },
            corr: CorrSettings { anchors: 6, tau_manifold: 0.8, tau_group: 1.0, manifold_spread: 0.5, group_spread: 0.5 },
            hrelu: HReluMode::Value,
            classes: 2,
            seed,
        }
    }

    /// Correlation ladder from SPD(3) into GL(3) with 4 then 6 channels.
    pub fn p3(seed: u64) -> NetworkSpec {
        NetworkSpec {
            architecture: Architecture::Spd {
                input_grid: GridSpec::Spd { count: 128, spread: 1.2, seed: 17 },
                group_grid: GridSpec::Gl3 { count: 24, epsilon: 0.2, seed: 5 },
                channels: vec![4, 6],
            },
            corr: CorrSettings { anchors: 8, tau_manifold: 1.0, tau_group: 0.5, manifold_spread: 1.0, group_spread: 0.2 },
            hrelu: HReluMode::Value,
            classes: 2,
            seed,
        }
    }

    /// Two voxels, ladder 1→2→2, four anchors, one convolution and the head.
    pub fn miniature(seed: u64) -> NetworkSpec {
        NetworkSpec {
            architecture: Architecture::Dmri {
                input_grid: GridSpec::Product {
                    order: 2,
                    radial: crate::geometry::RadialSpec { nodes: 4, log_min: -1.0, log_max: 1.0 },
                },
                group_grid: GridSpec::So3xScale {
                    n_alpha: 2,
                    n_beta: 2,
                    n_gamma: 2,
                    scale: crate::geometry::ScaleSpec::powers_of_two(0, 1),
                },
                rois: 1,
                roi_dims: [2, 1, 1],
                intra_channels: vec![2, 2],
                inter_channels: vec![2],
                variant: Variant::Full,
            },
            corr: CorrSettings { anchors: 4, tau_manifold: 0.8, tau_group: 1.0, manifold_spread: 0.5, group_spread: 0.5 },
            hrelu: HReluMode::Value,
            classes: 2,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    spec: Option<NetworkSpec>,
    branches: Vec<Vec<Layer>>,
    head: Vec<Layer>,
    widths: Vec<usize>,
}

fn warp(grid: &GroupGrid) -> Result<GroupGrid> {
    grid.map_nodes(|h| GroupElement::exp(h.kind(), &h.log()?.relu()))
}

/// Correlation ladder over `channels`, each layer followed by batch norm and
/// all but the last by the H-ReLU.
fn corr_ladder(
    spec: &NetworkSpec,
    input_grid: &GridSpec,
    group_grid: &GridSpec,
    channels: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Layer>, Arc<GroupGrid>)> {
    let space = input_grid
        .space_kind()
        .ok_or_else(|| Error::InvalidArgument("input grid must live on a manifold".into()))?;
    let group = group_grid
        .group_kind()
        .ok_or_else(|| Error::InvalidArgument("group grid must live on a group".into()))?;
    if space.group_kind() != group {
        return Err(Error::InvalidArgument(format!("{space:?} is not acted on by {group:?}")));
    }
    if channels.is_empty() {
        return Err(Error::InvalidArgument("correlation ladder needs at least one layer".into()));
    }
    let c = &spec.corr;
    let input = Arc::new(build_grid(input_grid)?);
    let out = Arc::new(haar_grid(group_grid)?);
    let next_input = Arc::new(match spec.hrelu {
        HReluMode::Value => (*out).clone(),
        HReluMode::DomainWarp => warp(&out)?,
    });
    let mut layers = Vec::new();
    let mut cin = 1;
    for (i, &cout) in channels.iter().enumerate() {
        let (plan, coef) = if i == 0 {
            let anchors = manifold_anchors(space, c.anchors, c.manifold_spread, rng);
            let mask = BumpMask::xavier(anchors, c.tau_manifold, cout, cin, rng)?;
            (CorrPlan::new(input.clone(), mask.anchors(), c.tau_manifold, out.nodes())?, mask.coefficients().clone())
        } else {
            let anchors = group_anchors(group, c.anchors, c.group_spread, rng);
            let mask = BumpMask::xavier(anchors, c.tau_group, cout, cin, rng)?;
            (CorrPlan::new(next_input.clone(), mask.anchors(), c.tau_group, out.nodes())?, mask.coefficients().clone())
        };
        layers.push(Layer::Corr(CorrLayer::new(plan, coef, i == 0)));
        layers.push(Layer::BatchNorm(BatchNorm::new(cout)));
        if i + 1 < channels.len() {
            layers.push(match spec.hrelu {
                HReluMode::Value => Layer::relu(),
                HReluMode::DomainWarp => Layer::Identity,
            });
        }
        cin = cout;
    }
    Ok((layers, out))
}

fn window(dims: [usize; 3]) -> [usize; 3] {
    dims.map(|d| d.min(2))
}

impl Network {
    pub fn build(spec: &NetworkSpec) -> Result<Network> {
        if spec.classes < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        if spec.corr.anchors == 0 || !(spec.corr.tau_manifold > 0.0 && spec.corr.tau_group > 0.0) {
            return Err(Error::InvalidArgument("masks need anchors and positive bandwidths".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "network-init"));
        let mut branches = Vec::new();
        let mut widths = Vec::new();
        match &spec.architecture {
            Architecture::Dmri { input_grid, group_grid, rois, roi_dims, intra_channels, inter_channels, variant } => {
                if *rois == 0 || roi_dims.contains(&0) {
                    return Err(Error::InvalidArgument("empty region layout".into()));
                }
                let voxels: usize = roi_dims.iter().product();
                for _ in 0..*rois {
                    let (mut layers, out) = corr_ladder(spec, input_grid, group_grid, intra_channels, &mut rng)?;
                    let mut channels = *intra_channels.last().expect("non-empty");
                    layers.push(Layer::mean(out.weights()));
                    layers.push(Layer::VoxelFold { voxels });
                    let width = match variant {
                        Variant::IntraOnly => {
                            layers.push(Layer::mean(&vec![1.0; voxels]));
                            channels
                        }
                        Variant::Full => {
                            let mut lat = Lattice(*roi_dims);
                            for (i, &cout) in inter_channels.iter().enumerate() {
                                let conv = Conv3d::new(lat, window(lat.0), channels, cout, &mut rng)?;
                                lat = conv.output();
                                layers.push(Layer::Conv3d(conv));
                                layers.push(Layer::BatchNorm(BatchNorm::new(cout)));
                                layers.push(Layer::relu());
                                if i == 0 && inter_channels.len() > 1 {
                                    let pool = MaxPool::new(lat, window(lat.0))?;
                                    lat = pool.output();
                                    layers.push(Layer::MaxPool(pool));
                                }
                                channels = cout;
                            }
                            layers.push(Layer::Flatten { shape: None });
                            channels * lat.len()
                        }
                    };
                    branches.push(layers);
                    widths.push(width);
                }
            }
            Architecture::Spd { input_grid, group_grid, channels } => {
                let (mut layers, out) = corr_ladder(spec, input_grid, group_grid, channels, &mut rng)?;
                layers.push(Layer::relu());
                layers.push(Layer::Flatten { shape: None });
                branches.push(layers);
                widths.push(channels.last().expect("non-empty") * out.len());
            }
        }
        let features = widths.iter().sum();
        let head = vec![
            Layer::FullyConnected(FullyConnected::new(features, spec.classes, &mut rng)),
            Layer::LogSoftmax { out: None },
        ];
        Ok(Network { spec: Some(spec.clone()), branches, head, widths })
    }

    /// Assembles a network from explicit layers; each branch must end in
    /// `batch × width × 1` features.
    pub fn from_layers(branches: Vec<Vec<Layer>>, widths: Vec<usize>, head: Vec<Layer>) -> Result<Network> {
        if branches.is_empty() || branches.len() != widths.len() {
            return Err(Error::InvalidArgument("one width per branch required".into()));
        }
        Ok(Network { spec: None, branches, head, widths })
    }

    pub fn spec(&self) -> Option<&NetworkSpec> {
        self.spec.as_ref()
    }

    pub fn branches(&self) -> &[Vec<Layer>] {
        &self.branches
    }

    pub fn branches_mut(&mut self) -> &mut [Vec<Layer>] {
        &mut self.branches
    }

    pub fn head(&self) -> &[Layer] {
        &self.head
    }

    pub fn feature_width(&self) -> usize {
        self.widths.iter().sum()
    }

    /// Runs the first `depth` layers of branch `index`.
    pub fn forward_branch_prefix(&mut self, index: usize, depth: usize, x: &Array3<f64>, train: bool) -> Result<Array3<f64>> {
        let layers = self
            .branches
            .get_mut(index)
            .ok_or(Error::IndexOutOfRange { index, limit: 0 })?;
        let mut h = x.clone();
        for layer in layers.iter_mut().take(depth) {
            h = layer.forward(&h, train)?;
        }
        Ok(h)
    }

    /// Concatenated branch features, `batch × width × 1`.
    pub fn features(&mut self, inputs: &[Array3<f64>], train: bool) -> Result<Array3<f64>> {
        if inputs.len() != self.branches.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs for {} branches",
                inputs.len(),
                self.branches.len()
            )));
        }
        let mut outs = Vec::with_capacity(inputs.len());
        for (i, x) in inputs.iter().enumerate() {
            let n = self.branches[i].len();
            let y = self.forward_branch_prefix(i, n, x, train)?;
            if y.dim().1 != self.widths[i] || y.dim().2 != 1 {
                return Err(Error::ShapeMismatch(format!("branch {i} produced {:?}", y.dim())));
            }
            outs.push(y);
        }
        let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
        concatenate(Axis(1), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))
    }

    /// Log-probabilities, `batch × classes × 1`.
    pub fn forward(&mut self, inputs: &[Array3<f64>], train: bool) -> Result<Array3<f64>> {
        let mut h = self.features(inputs, train)?;
        for layer in &mut self.head {
            h = layer.forward(&h, train)?;
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(h)
    }

    /// Back-propagates `dlogp` from the last forward pass into every
    /// parameter gradient.
    pub fn backward(&mut self, dlogp: &Array3<f64>) -> Result<()> {
        let mut g = dlogp.clone();
        for layer in self.head.iter_mut().rev() {
            g = layer.backward(&g)?.expect("head layers propagate");
        }
        let mut offset = 0;
        for (layers, &w) in self.branches.iter_mut().zip(&self.widths) {
            let mut gb = g.slice(s![.., offset..offset + w, ..]).to_owned();
            offset += w;
            for layer in layers.iter_mut().rev() {
                match layer.backward(&gb)? {
                    Some(next) => gb = next,
                    None => break,
                }
            }
        }
        Ok(())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.branches.iter_mut().flatten().chain(self.head.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.branches.iter().flatten().chain(&self.head).map(Layer::param_count).sum()
    }

    pub fn params(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.layers_mut().for_each(|l| l.visit_params(&mut |p, _| out.extend_from_slice(p)));
        out
    }

    pub fn grads(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.layers_mut().for_each(|l| l.visit_params(&mut |_, g| out.extend_from_slice(g)));
        out
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!("{} parameters for a network of {}", values.len(), self.param_count())));
        }
        let mut at = 0;
        self.layers_mut().for_each(|l| {
            l.visit_params(&mut |p, _| {
                p.copy_from_slice(&values[at..at + p.len()]);
                at += p.len();
            })
        });
        Ok(())
    }

    /// Batch-norm running moments.
    pub fn state(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.layers_mut().for_each(|l| l.visit_state(&mut |s| out.extend_from_slice(s)));
        out
    }

    pub fn set_state(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.state().len();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!("{} state values for a network of {expected}", values.len())));
        }
        let mut at = 0;
        self.layers_mut().for_each(|l| {
            l.visit_state(&mut |s| {
                s.copy_from_slice(&values[at..at + s.len()]);
                at += s.len();
            })
        });
        Ok(())
    }

    pub fn set_bn_momentum(&mut self, momentum: f64) {
        self.layers_mut().for_each(|l| {
            if let Layer::BatchNorm(bn) = l {
                bn.momentum = momentum;
            }
        });
    }

    /// Plain SGD; fails without touching parameters if any gradient is not finite.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        if self.grads().iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.layers_mut().for_each(|l| l.visit_params(&mut |p, g| sgd_update(p, g, lr)));
        Ok(())
    }

    /// Mean negative log-likelihood of `labels` in training mode, with the
    /// gradients of the batch left in place.
    pub fn loss_and_grad(&mut self, inputs: &[Array3<f64>], labels: &[usize]) -> Result<f64> {
        let logp = self.forward(inputs, true)?;
        let (loss, d) = super::layers::nll_loss(&logp, labels)?;
        self.backward(&d)?;
        Ok(loss)
    }
}

/// `p ← p − lr·g`.
pub fn sgd_update(params: &mut [f64], grads: &[f64], lr: f64) {
    params.iter_mut().zip(grads).for_each(|(p, g)| *p -= lr * g);
}

/// Worst relative disagreement between analytic gradients and central
/// differences with step `h`, over every trainable parameter. Differences
/// are relative to `max(|analytic|, |numeric|, floor)`.
pub fn finite_difference_check(
    net: &mut Network,
    inputs: &[Array3<f64>],
    labels: &[usize],
    h: f64,
    floor: f64,
) -> Result<f64> {
    net.loss_and_grad(inputs, labels)?;
    let analytic = net.grads();
    let base = net.params();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        net.set_params(&p)?;
        let up = super::layers::nll_loss(&net.forward(inputs, true)?, labels)?.0;
        p[i] = base[i] - h;
        net.set_params(&p)?;
        let down = super::layers::nll_loss(&net.forward(inputs, true)?, labels)?.0;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    net.set_params(&base)?;
    Ok(worst)
}

/// Input grid of a spec's first correlation layer.
pub fn input_grid(spec: &NetworkSpec) -> Result<Arc<QuadratureGrid<crate::geometry::ManifoldPoint>>> {
    let g = match &spec.architecture {
        Architecture::Dmri { input_grid, .. } | Architecture::Spd { input_grid, .. } => input_grid,
    };
    Ok(Arc::new(build_grid(g)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{RadialSpec, ScaleSpec};
    use crate::network::nll_loss;
    use ndarray::Array;
    use rand::Rng;

    pub(crate) fn small_dmri(variant: Variant, hrelu: HReluMode) -> NetworkSpec {
        NetworkSpec {
            architecture: Architecture::Dmri {
                input_grid: GridSpec::Product { order: 3, radial: RadialSpec { nodes: 5, log_min: -2.0, log_max: 2.0 } },
                group_grid: GridSpec::So3xScale { n_alpha: 3, n_beta: 2, n_gamma: 3, scale: ScaleSpec::powers_of_two(0, 1) },
                rois: 2,
                roi_dims: [3, 3, 3],
                intra_channels: vec![2, 3],
                inter_channels: vec![3, 4],
                variant,
            },
            corr: CorrSettings { anchors: 4, tau_manifold: 0.8, tau_group: 0.8, manifold_spread: 0.5, group_spread: 0.5 },
            hrelu,
            classes: 2,
            seed: 3,
        }
    }

    fn inputs(net: &Network, batch: usize, seed: u64) -> Vec<Array3<f64>> {
        let grid = input_grid(net.spec().unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..net.branches().len())
            .map(|_| Array::from_shape_fn((batch * 27, 1, grid.len()), |_| rng.random_range(0.0..1.0)))
            .collect()
    }

    #[test]
    fn parameter_counts_follow_the_layer_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(Layer::FullyConnected(FullyConnected::new(10, 2, &mut rng)).param_count(), 22);
        let net = Network::build(&small_dmri(Variant::Full, HReluMode::Value)).unwrap();
        // Lattice 3³ → conv 2³ → pool 1³, so the second conv window clamps to 1³.
        let branch = (8 + 24) + (4 + 6) + (3 * 3 * 8 + 3) + 6 + (3 * 4 + 4) + 8;
        assert_eq!(net.feature_width(), 2 * 4);
        assert_eq!(net.param_count(), 2 * branch + 8 * 2 + 2);
    }

    #[test]
    fn forward_shapes_and_checkpoint_roundtrip() {
        for variant in [Variant::Full, Variant::IntraOnly] {
            for hrelu in [HReluMode::Value, HReluMode::DomainWarp] {
                let mut net = Network::build(&small_dmri(variant, hrelu)).unwrap();
                let x = inputs(&net, 3, 1);
                let y = net.forward(&x, true).unwrap();
                assert_eq!(y.dim(), (3, 2, 1));
                let (_, d) = nll_loss(&y, &[0, 1, 1]).unwrap();
                net.backward(&d).unwrap();
                assert!(net.grads().iter().any(|g| *g != 0.0));
                let mut twin = Network::build(&small_dmri(variant, hrelu)).unwrap();
                net.sgd_step(0.1).unwrap();
                twin.set_params(&net.params()).unwrap();
                twin.set_state(&net.state()).unwrap();
                let a = net.forward(&x, false).unwrap();
                let b = twin.forward(&x, false).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn miniature_gradients_match_finite_differences() {
        let mut net = Network::build(&NetworkSpec::miniature(4)).unwrap();
        assert_eq!(net.param_count(), 8 + 4 + 16 + 4 + 10 + 4 + 6);
        let grid = input_grid(net.spec().unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = vec![Array::from_shape_fn((4 * 2, 1, grid.len()), |_| rng.random_range(0.0..1.0))];
        let worst = finite_difference_check(&mut net, &x, &[0, 1, 1, 0], 1e-5, 1e-4).unwrap();
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn zero_upstream_gradient_and_sgd_arithmetic() {
        let mut net = Network::build(&small_dmri(Variant::Full, HReluMode::Value)).unwrap();
        let x = inputs(&net, 2, 3);
        let y = net.forward(&x, true).unwrap();
        net.backward(&Array3::zeros(y.dim())).unwrap();
        assert!(net.grads().iter().all(|g| *g == 0.0));
        let before = net.params();
        net.sgd_step(0.1).unwrap();
        assert_eq!(before, net.params());
        // One step on ½p² from p = 1.
        let mut p = [1.0];
        sgd_update(&mut p, &[1.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn weights_are_shared_across_voxels() {
        // A single coefficient tensor per correlation layer serves every voxel
        // of its region: the layer has one parameter block regardless of voxels.
        let net = Network::build(&small_dmri(Variant::Full, HReluMode::Value)).unwrap();
        for branch in net.branches() {
            let corr: Vec<usize> = branch.iter().filter_map(|l| match l {
                Layer::Corr(c) => Some(c.coef.len()),
                _ => None,
            }).collect();
            assert_eq!(corr, vec![8, 24]);
        }
    }

    #[test]
    fn intra_stack_commutes_with_grid_symmetries() {
        use crate::correlation::grid_permutation;
        use crate::geometry::linalg::rot_z;
        let spec = small_dmri(Variant::Full, HReluMode::Value);
        let mut net = Network::build(&spec).unwrap();
        let Architecture::Dmri { group_grid, .. } = &spec.architecture else { unreachable!() };
        let out = haar_grid(group_grid).unwrap();
        let grid = input_grid(&spec).unwrap();
        let g = GroupElement::rot_scale(rot_z(2.0 * std::f64::consts::PI / 3.0), 1.0).unwrap();
        let ginv = g.inverse().unwrap();
        let pin = grid_permutation(&grid, &ginv).unwrap().expect("input grid symmetry");
        let pout = grid_permutation(&out, &ginv).unwrap().expect("output grid symmetry");
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array::from_shape_fn((6, 1, grid.len()), |_| rng.random_range(0.0..1.0));
        let xt = Array::from_shape_fn(x.dim(), |(b, c, i)| x[[b, c, pin[i]]]);
        let depth = 5; // corr, bn, relu, corr, bn
        for train in [true, false] {
            let y = net.forward_branch_prefix(0, depth, &x, train).unwrap();
            let yt = net.forward_branch_prefix(0, depth, &xt, train).unwrap();
            let worst = yt
                .indexed_iter()
                .map(|((b, c, j), v)| (v - y[[b, c, pout[j]]]).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-10, "{worst}");
        }
    }

    #[test]
    fn domain_warp_clamps_negative_log_coordinates() {
        use crate::geometry::linalg::so3_exp;
        use nalgebra::Vector3;
        let grid = GroupGrid::from_parts(
            vec![
                GroupElement::identity(crate::geometry::GroupKind::So3),
                GroupElement::rotation(so3_exp(&Vector3::new(-0.3, 0.5, 0.1))).unwrap(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let warped = warp(&grid).unwrap();
        assert!(warped.nodes()[0].max_abs_diff(&grid.nodes()[0]) < 1e-15);
        // Rodrigues: R = I + sinθ K + (1 − cosθ) K² for the unit axis of (0, 0.5, 0.1).
        let w = Vector3::<f64>::new(0.0, 0.5, 0.1);
        let theta = w.norm();
        let k = crate::geometry::linalg::skew(&(w / theta));
        let rodrigues = nalgebra::Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos());
        assert!(warped.nodes()[1].max_abs_diff(&GroupElement::rotation(rodrigues).unwrap()) < 1e-12);
    }

    #[test]
    fn rejects_mismatched_domains() {
        let mut spec = small_dmri(Variant::Full, HReluMode::Value);
        if let Architecture::Dmri { group_grid, .. } = &mut spec.architecture {
            *group_grid = GridSpec::Gl3 { count: 4, epsilon: 0.2, seed: 0 };
        }
        assert!(Network::build(&spec).is_err());
    }
}
