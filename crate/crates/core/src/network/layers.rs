//! Layers with cached forward state and analytic backward passes. Every
//! activation is a `batch × channels × points` array, where points are grid
//! nodes, voxels, or a single slot for flat features.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;

use crate::correlation::{CorrPlan, PlanCache};
use crate::error::{Error, Result};

/// Correlation against a fixed plan; trains only the mask coefficients.
#[derive(Clone, Debug)]
pub struct CorrLayer {
    pub plan: CorrPlan,
    pub coef: Array3<f64>,
    pub grad: Array3<f64>,
    /// Skip the input gradient (first layer of a branch).
    pub first: bool,
    cache: Option<PlanCache>,
}

impl CorrLayer {
    pub fn new(plan: CorrPlan, coef: Array3<f64>, first: bool) -> Self {
        let grad = Array3::zeros(coef.dim());
        CorrLayer { plan, coef, grad, first, cache: None }
    }
}

/// Per-channel normalization over batch and points, then `γ x̂ + β`.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub grad_gamma: Array1<f64>,
    pub grad_beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<(Array3<f64>, Array1<f64>)>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            grad_gamma: Array1::zeros(channels),
            grad_beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }
}

/// Lattice geometry of a voxel volume stored x-major in the points axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lattice(pub [usize; 3]);

impl Lattice {
    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.0[1] + y) * self.0[2] + z
    }

    /// Valid-padding output lattice of a `kernel` window at stride one.
    pub fn valid(&self, kernel: [usize; 3]) -> Result<Lattice> {
        let mut out = [0; 3];
        for a in 0..3 {
            if kernel[a] == 0 || kernel[a] > self.0[a] {
                return Err(Error::ShapeMismatch(format!(
                    "kernel {kernel:?} does not fit lattice {:?}",
                    self.0
                )));
            }
            out[a] = self.0[a] - kernel[a] + 1;
        }
        Ok(Lattice(out))
    }

    fn offsets(kernel: [usize; 3]) -> impl Iterator<Item = [usize; 3]> {
        (0..kernel[0]).flat_map(move |a| (0..kernel[1]).flat_map(move |b| (0..kernel[2]).map(move |c| [a, b, c])))
    }
}

/// Cross-correlation over the voxel lattice, valid padding, stride one.
#[derive(Clone, Debug)]
pub struct Conv3d {
    pub input: Lattice,
    pub kernel: [usize; 3],
    /// `channels_out × (channels_in · kernel volume)`, kernel offsets innermost.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub grad_weight: Array2<f64>,
    pub grad_bias: Array1<f64>,
    cache: Option<Array2<f64>>,
}

impl Conv3d {
    pub fn new<R: Rng + ?Sized>(input: Lattice, kernel: [usize; 3], cin: usize, cout: usize, rng: &mut R) -> Result<Self> {
        input.valid(kernel)?;
        let kv: usize = kernel.iter().product();
        let limit = (6.0 / ((cin + cout) * kv) as f64).sqrt();
        let weight = Array2::from_shape_fn((cout, cin * kv), |_| rng.random_range(-limit..limit));
        Ok(Conv3d {
            input,
            kernel,
            grad_weight: Array2::zeros(weight.dim()),
            weight,
            bias: Array1::zeros(cout),
            grad_bias: Array1::zeros(cout),
            cache: None,
        })
    }

    pub fn output(&self) -> Lattice {
        self.input.valid(self.kernel).expect("validated at construction")
    }

    fn im2col(&self, x: &Array3<f64>) -> Array2<f64> {
        let (b, cin, _) = x.dim();
        let out = self.output();
        let kv: usize = self.kernel.iter().product();
        let mut cols = Array2::zeros((b * out.len(), cin * kv));
        for bi in 0..b {
            for ox in 0..out.0[0] {
                for oy in 0..out.0[1] {
                    for oz in 0..out.0[2] {
                        let row = bi * out.len() + out.index(ox, oy, oz);
                        for ci in 0..cin {
                            for (kk, d) in Lattice::offsets(self.kernel).enumerate() {
                                let src = self.input.index(ox + d[0], oy + d[1], oz + d[2]);
                                cols[[row, ci * kv + kk]] = x[[bi, ci, src]];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f64>, b: usize, cin: usize) -> Array3<f64> {
        let out = self.output();
        let kv: usize = self.kernel.iter().product();
        let mut dx = Array3::zeros((b, cin, self.input.len()));
        for bi in 0..b {
            for ox in 0..out.0[0] {
                for oy in 0..out.0[1] {
                    for oz in 0..out.0[2] {
                        let row = bi * out.len() + out.index(ox, oy, oz);
                        for ci in 0..cin {
                            for (kk, d) in Lattice::offsets(self.kernel).enumerate() {
                                let dst = self.input.index(ox + d[0], oy + d[1], oz + d[2]);
                                dx[[bi, ci, dst]] += dcols[[row, ci * kv + kk]];
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Max over a stride-one window.
#[derive(Clone, Debug)]
pub struct MaxPool {
    pub input: Lattice,
    pub kernel: [usize; 3],
    cache: Option<(Vec<usize>, usize)>,
}

impl MaxPool {
    pub fn new(input: Lattice, kernel: [usize; 3]) -> Result<Self> {
        input.valid(kernel)?;
        Ok(MaxPool { input, kernel, cache: None })
    }

    pub fn output(&self) -> Lattice {
        self.input.valid(self.kernel).expect("validated at construction")
    }
}

/// Affine map on flat features.
#[derive(Clone, Debug)]
pub struct FullyConnected {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub grad_weight: Array2<f64>,
    pub grad_bias: Array1<f64>,
    cache: Option<Array2<f64>>,
}

impl FullyConnected {
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit));
        FullyConnected {
            grad_weight: Array2::zeros(weight.dim()),
            weight,
            bias: Array1::zeros(fan_out),
            grad_bias: Array1::zeros(fan_out),
            cache: None,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Corr(CorrLayer),
    BatchNorm(BatchNorm),
    /// Pointwise `max(0, x)`.
    Relu { mask: Option<Array3<bool>> },
    /// Passes values unchanged; stands for a domain-warp H-ReLU whose effect
    /// lives in the next correlation's input grid.
    Identity,
    /// Weighted mean over the points axis; weights sum to one.
    Mean { weights: Array1<f64>, points: Option<usize> },
    /// `(batch·V) × C × 1` to `batch × C × V`.
    VoxelFold { voxels: usize },
    Conv3d(Conv3d),
    MaxPool(MaxPool),
    /// `batch × C × M` to `batch × (C·M) × 1`.
    Flatten { shape: Option<(usize, usize)> },
    FullyConnected(FullyConnected),
    LogSoftmax { out: Option<Array3<f64>> },
}

fn flat(x: &Array3<f64>) -> Result<Array2<f64>> {
    let (b, c, m) = x.dim();
    if m != 1 {
        return Err(Error::ShapeMismatch(format!("expected flat features, got {:?}", x.dim())));
    }
    Ok(x.as_standard_layout().into_owned().into_shape_with_order((b, c)).expect("sized"))
}

fn unflat(x: Array2<f64>) -> Array3<f64> {
    let (b, c) = x.dim();
    x.into_shape_with_order((b, c, 1)).expect("sized")
}

impl Layer {
    pub fn mean(weights: &[f64]) -> Layer {
        let total: f64 = weights.iter().sum();
        Layer::Mean { weights: Array1::from_iter(weights.iter().map(|w| w / total)), points: None }
    }

    pub fn relu() -> Layer {
        Layer::Relu { mask: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Corr(_) => "corr",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Relu { .. } => "relu",
            Layer::Identity => "identity",
            Layer::Mean { .. } => "mean",
            Layer::VoxelFold { .. } => "voxel_fold",
            Layer::Conv3d(_) => "conv3d",
            Layer::MaxPool(_) => "max_pool",
            Layer::Flatten { .. } => "flatten",
            Layer::FullyConnected(_) => "fully_connected",
            Layer::LogSoftmax { .. } => "log_softmax",
        }
    }

    pub fn forward(&mut self, x: &Array3<f64>, train: bool) -> Result<Array3<f64>> {
        let (b, c, m) = x.dim();
        match self {
            Layer::Corr(l) => {
                let (y, cache) = l.plan.forward(x, &l.coef)?;
                l.cache = Some(cache);
                Ok(y)
            }
            Layer::BatchNorm(bn) => {
                if bn.gamma.len() != c {
                    return Err(Error::ShapeMismatch(format!("batch norm over {} channels got {c}", bn.gamma.len())));
                }
                let count = (b * m) as f64;
                let (mean, var) = if train {
                    if b * m < 2 {
                        return Err(Error::InsufficientData("batch norm needs at least two values per channel".into()));
                    }
                    let mean = x.sum_axis(Axis(2)).sum_axis(Axis(0)) / count;
                    let mut var = Array1::zeros(c);
                    for ci in 0..c {
                        let mu = mean[ci];
                        var[ci] = x.slice(s![.., ci, ..]).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / count;
                    }
                    let unbiased = &var * (count / (count - 1.0));
                    bn.running_mean = &bn.running_mean * (1.0 - bn.momentum) + &mean * bn.momentum;
                    bn.running_var = &bn.running_var * (1.0 - bn.momentum) + &unbiased * bn.momentum;
                    (mean, var)
                } else {
                    (bn.running_mean.clone(), bn.running_var.clone())
                };
                let inv_std = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
                let mut xhat = x.clone();
                for ci in 0..c {
                    xhat.slice_mut(s![.., ci, ..]).mapv_inplace(|v| (v - mean[ci]) * inv_std[ci]);
                }
                let mut y = xhat.clone();
                for ci in 0..c {
                    let (g, be) = (bn.gamma[ci], bn.beta[ci]);
                    y.slice_mut(s![.., ci, ..]).mapv_inplace(|v| g * v + be);
                }
                bn.cache = Some((xhat, inv_std));
                Ok(y)
            }
            Layer::Relu { mask } => {
                *mask = Some(x.mapv(|v| v > 0.0));
                Ok(x.mapv(|v| v.max(0.0)))
            }
            Layer::Identity => Ok(x.clone()),
            Layer::Mean { weights, points } => {
                if weights.len() != m {
                    return Err(Error::ShapeMismatch(format!("mean over {} points got {m}", weights.len())));
                }
                *points = Some(m);
                let x2 = x.as_standard_layout().into_owned().into_shape_with_order((b * c, m)).expect("sized");
                Ok(x2.dot(&*weights).into_shape_with_order((b, c, 1)).expect("sized"))
            }
            Layer::VoxelFold { voxels } => {
                let v = *voxels;
                if m != 1 || b % v != 0 {
                    return Err(Error::ShapeMismatch(format!("cannot fold {:?} into {v} voxels", x.dim())));
                }
                let n = b / v;
                let y = x
                    .to_owned()
                    .into_shape_with_order((n, v, c))
                    .expect("sized")
                    .permuted_axes([0, 2, 1])
                    .as_standard_layout()
                    .into_owned();
                Ok(y)
            }
            Layer::Conv3d(conv) => {
                if m != conv.input.len() || conv.weight.ncols() % c != 0 || conv.weight.ncols() / c != conv.kernel.iter().product::<usize>() {
                    return Err(Error::ShapeMismatch(format!("conv input {:?} does not match layer", x.dim())));
                }
                let cols = conv.im2col(x);
                let mut y = cols.dot(&conv.weight.t());
                y += &conv.bias;
                let out = conv.output().len();
                let cout = conv.weight.nrows();
                let y = y
                    .into_shape_with_order((b, out, cout))
                    .expect("sized")
                    .permuted_axes([0, 2, 1])
                    .as_standard_layout()
                    .into_owned();
                conv.cache = Some(cols);
                Ok(y)
            }
            Layer::MaxPool(pool) => {
                if m != pool.input.len() {
                    return Err(Error::ShapeMismatch(format!("pool input {:?} does not match layer", x.dim())));
                }
                let out = pool.output();
                let mut y = Array3::zeros((b, c, out.len()));
                let mut arg = vec![0usize; b * c * out.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        for ox in 0..out.0[0] {
                            for oy in 0..out.0[1] {
                                for oz in 0..out.0[2] {
                                    let o = out.index(ox, oy, oz);
                                    let mut best = (f64::NEG_INFINITY, 0);
                                    for d in Lattice::offsets(pool.kernel) {
                                        let src = pool.input.index(ox + d[0], oy + d[1], oz + d[2]);
                                        if x[[bi, ci, src]] > best.0 {
                                            best = (x[[bi, ci, src]], src);
                                        }
                                    }
                                    y[[bi, ci, o]] = best.0;
                                    arg[(bi * c + ci) * out.len() + o] = best.1;
                                }
                            }
                        }
                    }
                }
                pool.cache = Some((arg, m));
                Ok(y)
            }
            Layer::Flatten { shape } => {
                *shape = Some((c, m));
                Ok(x.as_standard_layout().into_owned().into_shape_with_order((b, c * m, 1)).expect("sized"))
            }
            Layer::FullyConnected(fc) => {
                let x2 = flat(x)?;
                if x2.ncols() != fc.weight.ncols() {
                    return Err(Error::ShapeMismatch(format!(
                        "fully connected layer expects {} features, got {}",
                        fc.weight.ncols(),
                        x2.ncols()
                    )));
                }
                let mut y = x2.dot(&fc.weight.t());
                y += &fc.bias;
                fc.cache = Some(x2);
                Ok(unflat(y))
            }
            Layer::LogSoftmax { out } => {
                let z = flat(x)?;
                let mut y = z.clone();
                for mut row in y.rows_mut() {
                    let mx = row.fold(f64::NEG_INFINITY, |a, v| a.max(*v));
                    let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                    row.mapv_inplace(|v| v - lse);
                }
                let y = unflat(y);
                *out = Some(y.clone());
                Ok(y)
            }
        }
    }

    /// Accumulates parameter gradients (overwriting the previous ones) and
    /// returns the input gradient, if one is needed.
    pub fn backward(&mut self, dy: &Array3<f64>) -> Result<Option<Array3<f64>>> {
        let missing = || Error::InvalidArgument("backward called before forward".into());
        match self {
            Layer::Corr(l) => {
                let cache = l.cache.as_ref().ok_or_else(missing)?;
                let (dcoef, dx) = l.plan.backward(cache, &l.coef, dy, !l.first);
                l.grad = dcoef;
                Ok(dx)
            }
            Layer::BatchNorm(bn) => {
                let (xhat, inv_std) = bn.cache.as_ref().ok_or_else(missing)?;
                let (b, c, m) = dy.dim();
                let count = (b * m) as f64;
                let mut dx = Array3::zeros(dy.dim());
                for ci in 0..c {
                    let dyc = dy.slice(s![.., ci, ..]);
                    let xh = xhat.slice(s![.., ci, ..]);
                    let sum_dy = dyc.sum();
                    let sum_dy_xh = (&dyc * &xh).sum();
                    bn.grad_beta[ci] = sum_dy;
                    bn.grad_gamma[ci] = sum_dy_xh;
                    let k = bn.gamma[ci] * inv_std[ci] / count;
                    let mut dxc = dx.slice_mut(s![.., ci, ..]);
                    dxc.assign(&((&dyc * count - sum_dy - &xh * sum_dy_xh) * k));
                }
                Ok(Some(dx))
            }
            Layer::Relu { mask } => {
                let mask = mask.as_ref().ok_or_else(missing)?;
                let mut dx = dy.clone();
                dx.zip_mut_with(mask, |d, keep| {
                    if !*keep {
                        *d = 0.0
                    }
                });
                Ok(Some(dx))
            }
            Layer::Identity => Ok(Some(dy.clone())),
            Layer::Mean { weights, points } => {
                let m = points.ok_or_else(missing)?;
                let (b, c, _) = dy.dim();
                let mut dx = Array3::zeros((b, c, m));
                for bi in 0..b {
                    for ci in 0..c {
                        let g = dy[[bi, ci, 0]];
                        dx.slice_mut(s![bi, ci, ..]).assign(&(&*weights * g));
                    }
                }
                Ok(Some(dx))
            }
            Layer::VoxelFold { voxels } => {
                let (n, c, v) = dy.dim();
                debug_assert_eq!(v, *voxels);
                let dx = dy
                    .view()
                    .permuted_axes([0, 2, 1])
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((n * v, c, 1))
                    .expect("sized");
                Ok(Some(dx))
            }
            Layer::Conv3d(conv) => {
                let cols = conv.cache.as_ref().ok_or_else(missing)?;
                let (b, cout, out) = dy.dim();
                let dy2 = dy
                    .view()
                    .permuted_axes([0, 2, 1])
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((b * out, cout))
                    .expect("sized");
                conv.grad_weight = dy2.t().dot(cols);
                conv.grad_bias = dy2.sum_axis(Axis(0));
                let dcols = dy2.dot(&conv.weight);
                let kv: usize = conv.kernel.iter().product();
                let cin = conv.weight.ncols() / kv;
                Ok(Some(conv.col2im(&dcols, b, cin)))
            }
            Layer::MaxPool(pool) => {
                let (arg, m) = pool.cache.as_ref().ok_or_else(missing)?;
                let (b, c, out) = dy.dim();
                let mut dx = Array3::zeros((b, c, *m));
                for bi in 0..b {
                    for ci in 0..c {
                        for o in 0..out {
                            dx[[bi, ci, arg[(bi * c + ci) * out + o]]] += dy[[bi, ci, o]];
                        }
                    }
                }
                Ok(Some(dx))
            }
            Layer::Flatten { shape } => {
                let (c, m) = shape.ok_or_else(missing)?;
                let b = dy.dim().0;
                Ok(Some(dy.as_standard_layout().into_owned().into_shape_with_order((b, c, m)).expect("sized")))
            }
            Layer::FullyConnected(fc) => {
                let x = fc.cache.as_ref().ok_or_else(missing)?;
                let d = flat(dy)?;
                fc.grad_weight = d.t().dot(x);
                fc.grad_bias = d.sum_axis(Axis(0));
                Ok(Some(unflat(d.dot(&fc.weight))))
            }
            Layer::LogSoftmax { out } => {
                let y = flat(out.as_ref().ok_or_else(missing)?)?;
                let d = flat(dy)?;
                let mut dz = d.clone();
                for ((mut row, yr), dr) in dz.rows_mut().into_iter().zip(y.rows()).zip(d.rows()) {
                    let total = dr.sum();
                    row.zip_mut_with(&yr, |v, l| *v -= l.exp() * total);
                }
                Ok(Some(unflat(dz)))
            }
        }
    }

    /// Visits `(parameters, gradient)` pairs in a fixed order.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        match self {
            Layer::Corr(l) => f(l.coef.as_slice_mut().expect("standard"), l.grad.as_slice().expect("standard")),
            Layer::BatchNorm(bn) => {
                f(bn.gamma.as_slice_mut().expect("standard"), bn.grad_gamma.as_slice().expect("standard"));
                f(bn.beta.as_slice_mut().expect("standard"), bn.grad_beta.as_slice().expect("standard"));
            }
            Layer::Conv3d(c) => {
                f(c.weight.as_slice_mut().expect("standard"), c.grad_weight.as_slice().expect("standard"));
                f(c.bias.as_slice_mut().expect("standard"), c.grad_bias.as_slice().expect("standard"));
            }
            Layer::FullyConnected(fc) => {
                f(fc.weight.as_slice_mut().expect("standard"), fc.grad_weight.as_slice().expect("standard"));
                f(fc.bias.as_slice_mut().expect("standard"), fc.grad_bias.as_slice().expect("standard"));
            }
            _ => {}
        }
    }

    /// Non-trainable state saved with checkpoints (batch-norm running moments).
    pub fn visit_state(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        if let Layer::BatchNorm(bn) = self {
            f(bn.running_mean.as_slice_mut().expect("standard"));
            f(bn.running_var.as_slice_mut().expect("standard"));
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Corr(l) => l.coef.len(),
            Layer::BatchNorm(bn) => bn.gamma.len() + bn.beta.len(),
            Layer::Conv3d(c) => c.weight.len() + c.bias.len(),
            Layer::FullyConnected(fc) => fc.weight.len() + fc.bias.len(),
            _ => 0,
        }
    }
}

/// Mean negative log-likelihood of `labels` under `logp` (`batch × classes × 1`),
/// with its gradient.
pub fn nll_loss(logp: &Array3<f64>, labels: &[usize]) -> Result<(f64, Array3<f64>)> {
    let (b, classes, _) = logp.dim();
    if labels.len() != b {
        return Err(Error::ShapeMismatch(format!("{} labels for a batch of {b}", labels.len())));
    }
    let mut grad = Array3::zeros(logp.dim());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::InvalidLabel { label: y, classes });
        }
        loss -= logp[[i, y, 0]];
        grad[[i, y, 0]] = -1.0 / b as f64;
    }
    Ok((loss / b as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
        Array::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Checks the input gradient of `layer` against central differences of
    /// `⟨r, layer(x)⟩` for a random `r`.
    fn check_input_grad(layer: &mut Layer, x: &Array3<f64>, train: bool, tol: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let y = layer.forward(x, train).unwrap();
        let r = rand3(&mut rng, y.dim());
        let dx = layer.backward(&r).unwrap().unwrap();
        let h = 1e-6;
        for idx in [0, x.len() / 3, x.len() - 1] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            let fp = (&layer.forward(&xp, train).unwrap() * &r).sum();
            let fm = (&layer.forward(&xm, train).unwrap() * &r).sum();
            let fd = (fp - fm) / (2.0 * h);
            let an = dx.as_slice().unwrap()[idx];
            assert!((fd - an).abs() <= tol * an.abs().max(1e-3), "{} idx {idx}: {fd} vs {an}", layer.name());
        }
    }

    #[test]
    fn batch_norm_moments_and_idempotence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand3(&mut rng, (4, 3, 5)) * 3.0 + 2.0;
        let mut bn = Layer::BatchNorm(BatchNorm::new(3));
        let y = bn.forward(&x, true).unwrap();
        for c in 0..3 {
            let ch = y.slice(s![.., c, ..]);
            let mean = ch.mean().unwrap();
            let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / ch.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-6 + 1e-5);
        }
        let y2 = bn.forward(&y, true).unwrap();
        assert!((&y2 - &y).iter().all(|d| d.abs() < 1e-5));
        let constant = Array3::from_elem((3, 3, 2), 7.0);
        let mut bn = BatchNorm::new(3);
        bn.beta.fill(0.25);
        let out = Layer::BatchNorm(bn).forward(&constant, true).unwrap();
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-12));
        check_input_grad(&mut Layer::BatchNorm(BatchNorm::new(3)), &x, true, 1e-6);
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lat = Lattice([4, 3, 3]);
        let mut conv = Conv3d::new(lat, [2, 2, 2], 2, 3, &mut rng).unwrap();
        conv.bias = Array1::from(vec![0.1, -0.2, 0.3]);
        let x = rand3(&mut rng, (2, 2, lat.len()));
        let w = conv.weight.clone();
        let bias = conv.bias.clone();
        let mut layer = Layer::Conv3d(conv);
        let y = layer.forward(&x, true).unwrap();
        let out = Lattice([3, 2, 2]);
        let mut max_diff = 0.0f64;
        for b in 0..2 {
            for co in 0..3 {
                for ox in 0..3 {
                    for oy in 0..2 {
                        for oz in 0..2 {
                            let mut acc = bias[co];
                            for ci in 0..2 {
                                for dx in 0..2 {
                                    for dy in 0..2 {
                                        for dz in 0..2 {
                                            let k = (dx * 2 + dy) * 2 + dz;
                                            acc += w[[co, ci * 8 + k]] * x[[b, ci, lat.index(ox + dx, oy + dy, oz + dz)]];
                                        }
                                    }
                                }
                            }
                            max_diff = max_diff.max((acc - y[[b, co, out.index(ox, oy, oz)]]).abs());
                        }
                    }
                }
            }
        }
        assert!(max_diff < 1e-12);
        check_input_grad(&mut layer, &x, true, 1e-6);
    }

    #[test]
    fn conv_trivial_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lat = Lattice([3, 3, 1]);
        let mut conv = Conv3d::new(lat, [2, 2, 1], 1, 1, &mut rng).unwrap();
        conv.weight.fill(1.0);
        let y = Layer::Conv3d(conv.clone()).forward(&Array3::ones((1, 1, 9)), true).unwrap();
        assert!(y.iter().all(|v| (*v - 4.0).abs() < 1e-15));
        conv.weight.fill(0.0);
        conv.weight[[0, 0]] = 1.0;
        let x = rand3(&mut rng, (1, 1, 9));
        let y = Layer::Conv3d(conv).forward(&x, true).unwrap();
        let out = Lattice([2, 2, 1]);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(y[[0, 0, out.index(i, j, 0)]], x[[0, 0, lat.index(i, j, 0)]]);
            }
        }
        assert!(Conv3d::new(Lattice([1, 3, 3]), [2, 2, 2], 1, 1, &mut rng).is_err());
    }

    #[test]
    fn log_softmax_and_loss() {
        let mut ls = Layer::LogSoftmax { out: None };
        let y = ls.forward(&Array3::zeros((1, 2, 1)), false).unwrap();
        assert!((y[[0, 0, 0]] + 2f64.ln()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = rand3(&mut rng, (5, 3, 1)) * 4.0;
        let y = ls.forward(&z, false).unwrap();
        for b in 0..5 {
            let denom: f64 = (0..3).map(|c| z[[b, c, 0]].exp()).sum();
            for c in 0..3 {
                assert!((y[[b, c, 0]].exp() - z[[b, c, 0]].exp() / denom).abs() < 1e-12);
            }
            assert!(((0..3).map(|c| y[[b, c, 0]].exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let labels = [0, 2, 1, 1, 0];
        let (_, dlogp) = nll_loss(&y, &labels).unwrap();
        let dz = ls.backward(&dlogp).unwrap().unwrap();
        for (b, &l) in labels.iter().enumerate() {
            for c in 0..3 {
                let onehot = if c == l { 1.0 } else { 0.0 };
                assert!((dz[[b, c, 0]] - (y[[b, c, 0]].exp() - onehot) / 5.0).abs() < 1e-12);
            }
        }
        let mut certain = Array3::zeros((1, 2, 1));
        certain[[0, 1, 0]] = -1e300;
        assert_eq!(nll_loss(&certain, &[0]).unwrap().0, 0.0);
        assert!(matches!(nll_loss(&certain, &[2]), Err(Error::InvalidLabel { .. })));
    }

    #[test]
    fn pooling_fold_mean_and_fc_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lat = Lattice([3, 3, 2]);
        let x = rand3(&mut rng, (2, 2, lat.len()));
        check_input_grad(&mut Layer::MaxPool(MaxPool::new(lat, [2, 2, 2]).unwrap()), &x, true, 1e-6);
        let w: Vec<f64> = (0..lat.len()).map(|i| 1.0 + i as f64).collect();
        check_input_grad(&mut Layer::mean(&w), &x, true, 1e-6);
        let f = rand3(&mut rng, (6, 2, 1));
        check_input_grad(&mut Layer::VoxelFold { voxels: 3 }, &f, true, 1e-6);
        check_input_grad(&mut Layer::FullyConnected(FullyConnected::new(2, 3, &mut rng)), &f, true, 1e-6);
        let mut relu = Layer::relu();
        let y = relu.forward(&Array3::from_shape_vec((1, 1, 3), vec![-1.0, 2.0, 0.0]).unwrap(), true).unwrap();
        assert_eq!(y.as_slice().unwrap(), &[0.0, 2.0, 0.0]);
    }
}
