//! Training-based targeted semantic attack.
//!
//! Starting from the carrier image, Adam drives the image so its descriptor
//! (or activation tensor, or per-channel activation histogram) matches the
//! target's, optionally anchored to the carrier by a squared-distortion term.

use crate::descriptor::{similarity, Descriptor, DescriptorError, DescriptorNetwork, Forward};
use crate::numerics::Tensor;
use std::fmt::Write as _;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("target and carrier must share 3-channel dims: {0:?} vs {1:?}")]
    InstanceDims((usize, usize, usize), (usize, usize, usize)),
    #[error("pixel values must lie in [0, 1]")]
    PixelRange,
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss or gradient at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("unknown loss kind {0:?} (expected global, tensor or hist)")]
    UnknownLoss(String),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

pub type Result<T> = std::result::Result<T, AttackError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Global,
    Tensor,
    Hist,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Global, LossKind::Tensor, LossKind::Hist];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Global => "global",
            LossKind::Tensor => "tensor",
            LossKind::Hist => "hist",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "global" => Ok(LossKind::Global),
            "tensor" => Ok(LossKind::Tensor),
            "hist" | "histogram" => Ok(LossKind::Hist),
            _ => Err(AttackError::UnknownLoss(s.to_string())),
        }
    }
}

/// Uniformly spaced histogram bin centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Bins {
    centers: Vec<f64>,
    spacing: f64,
}

impl Bins {
    pub fn uniform(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count < 2 || !(hi > lo) {
            return Err(AttackError::InvalidConfig(format!(
                "need >= 2 bins over a non-empty range, got {count} on [{lo}, {hi}]"
            )));
        }
        let spacing = (hi - lo) / (count - 1) as f64;
        let centers = (0..count).map(|k| lo + spacing * k as f64).collect();
        Ok(Self { centers, spacing })
    }

    /// Accepts explicit centers; they must be strictly increasing and evenly spaced.
    pub fn from_centers(centers: Vec<f64>) -> Result<Self> {
        if centers.len() < 2 {
            return Err(AttackError::InvalidConfig("need >= 2 bin centers".into()));
        }
        let spacing = centers[1] - centers[0];
        let uniform = centers.windows(2).all(|w| {
            let d = w[1] - w[0];
            d > 0.0 && (d - spacing).abs() <= 1e-9 * spacing.abs().max(1.0)
        });
        if !uniform {
            return Err(AttackError::InvalidConfig(
                "bin centers must be strictly increasing and uniformly spaced".into(),
            ));
        }
        Ok(Self { centers, spacing })
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

impl Default for Bins {
    fn default() -> Self {
        Self::uniform(0.0, 4.0, 16).expect("static bins")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub loss_kind: LossKind,
    /// Weight of the squared distortion to the carrier.
    pub lambda: f64,
    /// Adam learning rate.
    pub eta: f64,
    pub epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub iterations: usize,
    pub bins: Bins,
    /// Square resolution both images are resampled to before extraction.
    pub s: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::Global,
            lambda: 0.0,
            eta: 0.01,
            epsilon: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            iterations: 100,
            bins: Bins::default(),
            s: crate::descriptor::DEFAULT_RESOLUTION,
        }
    }
}

impl AttackConfig {
    pub fn with_loss(loss_kind: LossKind) -> Self {
        Self {
            loss_kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AttackError::InvalidConfig(m.to_string()));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.eta > 0.0) || !(self.epsilon > 0.0) {
            return bad("eta and epsilon must be > 0");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if self.s < crate::descriptor::MIN_RESOLUTION {
            return bad("resolution below minimum");
        }
        Ok(())
    }
}

/// Authentic target `x_t` and visual carrier `x_c`. Labels are carried for
/// bookkeeping only.
#[derive(Debug, Clone)]
pub struct AttackInstance {
    pub target: Tensor,
    pub carrier: Tensor,
    pub target_label: Option<String>,
    pub carrier_label: Option<String>,
}

impl AttackInstance {
    pub fn new(target: Tensor, carrier: Tensor) -> Result<Self> {
        if !target.same_dims(&carrier) || target.channels() != 3 {
            return Err(AttackError::InstanceDims(target.dims(), carrier.dims()));
        }
        let in_box = |t: &Tensor| t.data().iter().all(|v| (0.0..=1.0).contains(v));
        if !in_box(&target) || !in_box(&carrier) {
            return Err(AttackError::PixelRange);
        }
        Ok(Self {
            target,
            carrier,
            target_label: None,
            carrier_label: None,
        })
    }
}

/// Features of the target image, computed once per attack.
#[derive(Debug, Clone)]
pub struct TargetFeatures {
    pub descriptor: Descriptor,
    pub activations: Tensor,
    pub histogram: Vec<f64>,
    pub s: usize,
}

impl TargetFeatures {
    pub fn new(net: &DescriptorNetwork, target: &Tensor, s: usize, bins: &Bins) -> Result<Self> {
        let fwd = net.forward(target, s)?;
        Ok(Self {
            descriptor: fwd.descriptor()?,
            histogram: soft_histogram(fwd.activations(), bins),
            activations: fwd.activations().clone(),
            s,
        })
    }
}

/// Loss value, its gradient against the input image, and the candidate's descriptor.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    pub grad: Tensor,
    pub descriptor: Descriptor,
}

fn finish(fwd: &Forward, value: f64, grad: Tensor) -> Result<LossEval> {
    Ok(LossEval {
        value,
        grad,
        descriptor: fwd.descriptor()?,
    })
}

/// `1 - h_x . h_t`.
pub fn loss_global(net: &DescriptorNetwork, x: &Tensor, target: &TargetFeatures) -> Result<LossEval> {
    let fwd = net.forward(x, target.s)?;
    let desc = fwd.descriptor()?;
    let value = 1.0 - similarity(&desc, &target.descriptor)?;
    let up: Vec<f64> = target.descriptor.values().iter().map(|v| -v).collect();
    let grad = net.backward_from_descriptor(&fwd, &up)?;
    finish(&fwd, value, grad)
}

/// Mean squared difference of activation tensors and its gradient in `g`.
pub fn tensor_loss_from_activations(g: &Tensor, g_t: &Tensor) -> (f64, Tensor) {
    let n = g.len() as f64;
    let value = g.sq_distance(g_t) / n;
    let mut grad = g.clone();
    for (d, &t) in grad.data_mut().iter_mut().zip(g_t.data()) {
        *d = 2.0 * (*d - t) / n;
    }
    (value, grad)
}

pub fn loss_tensor(net: &DescriptorNetwork, x: &Tensor, target: &TargetFeatures) -> Result<LossEval> {
    let fwd = net.forward(x, target.s)?;
    let (value, g_act) = tensor_loss_from_activations(fwd.activations(), &target.activations);
    let grad = net.backward_from_activations(&fwd, &g_act)?;
    finish(&fwd, value, grad)
}

#[inline]
fn triangle(r: f64, spacing: f64) -> f64 {
    (1.0 - r.abs() / spacing).max(0.0)
}

/// Soft per-channel histogram with a triangular kernel of half-width equal
/// to the bin spacing. Returned in `(channel, bin)` order, each channel
/// normalized by the spatial size.
pub fn soft_histogram(g: &Tensor, bins: &Bins) -> Vec<f64> {
    let (d, k) = (g.channels(), bins.len());
    let mut hist = vec![0.0; d * k];
    let norm = 1.0 / (g.width() * g.height()) as f64;
    for px in g.data().chunks_exact(d) {
        for (ch, &v) in px.iter().enumerate() {
            let row = &mut hist[ch * k..(ch + 1) * k];
            for (slot, &b) in row.iter_mut().zip(bins.centers()) {
                *slot += triangle(v - b, bins.spacing) * norm;
            }
        }
    }
    hist
}

/// Mean over channels of the L1 distance between soft histograms, with its
/// gradient in `g`.
pub fn hist_loss_from_activations(g: &Tensor, target_hist: &[f64], bins: &Bins) -> (f64, Tensor) {
    let (d, k) = (g.channels(), bins.len());
    let hist = soft_histogram(g, bins);
    let diff_sign: Vec<f64> = hist.iter().zip(target_hist).map(|(a, b)| sign(a - b)).collect();
    let value = hist
        .iter()
        .zip(target_hist)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / d as f64;
    let scale = 1.0 / (d as f64 * (g.width() * g.height()) as f64 * bins.spacing);
    let mut grad = Tensor::zeros(g.width(), g.height(), d);
    for (gpx, px) in grad.data_mut().chunks_exact_mut(d).zip(g.data().chunks_exact(d)) {
        for (ch, (gv, &v)) in gpx.iter_mut().zip(px).enumerate() {
            let signs = &diff_sign[ch * k..(ch + 1) * k];
            let mut acc = 0.0;
            for (&s, &b) in signs.iter().zip(bins.centers()) {
                let r = v - b;
                if s != 0.0 && r.abs() < bins.spacing {
                    acc -= s * sign(r);
                }
            }
            *gv = acc * scale;
        }
    }
    (value, grad)
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn loss_hist(
    net: &DescriptorNetwork,
    x: &Tensor,
    target: &TargetFeatures,
    bins: &Bins,
) -> Result<LossEval> {
    let fwd = net.forward(x, target.s)?;
    let (value, g_act) = hist_loss_from_activations(fwd.activations(), &target.histogram, bins);
    let grad = net.backward_from_activations(&fwd, &g_act)?;
    finish(&fwd, value, grad)
}

pub fn performance_loss(
    cfg: &AttackConfig,
    net: &DescriptorNetwork,
    x: &Tensor,
    target: &TargetFeatures,
) -> Result<LossEval> {
    match cfg.loss_kind {
        LossKind::Global => loss_global(net, x, target),
        LossKind::Tensor => loss_tensor(net, x, target),
        LossKind::Hist => loss_hist(net, x, target, &cfg.bins),
    }
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub total: f64,
    pub perf: f64,
    pub distortion: f64,
    pub grad: Tensor,
    pub descriptor: Descriptor,
}

/// Selected performance loss plus `lambda * |x - x_c|^2`.
pub fn total_loss(
    cfg: &AttackConfig,
    net: &DescriptorNetwork,
    x: &Tensor,
    carrier: &Tensor,
    target: &TargetFeatures,
) -> Result<TotalLoss> {
    let perf = performance_loss(cfg, net, x, target)?;
    let distortion = x.sq_distance(carrier);
    let mut grad = perf.grad;
    if cfg.lambda != 0.0 {
        for ((g, &xv), &cv) in grad.data_mut().iter_mut().zip(x.data()).zip(carrier.data()) {
            *g += 2.0 * cfg.lambda * (xv - cv);
        }
    }
    Ok(TotalLoss {
        total: perf.value + cfg.lambda * distortion,
        perf: perf.value,
        distortion,
        grad,
        descriptor: perf.descriptor,
    })
}

/// Adam moments over the flattened image.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step `x - eta * m_hat / sqrt(v_hat + eps)`,
/// projected back onto the `[0, 1]` pixel box.
pub fn adam_step(state: &mut AdamState, x: &Tensor, grad: &Tensor, cfg: &AttackConfig) -> Tensor {
    assert_eq!(state.m.len(), x.len(), "adam state length mismatch");
    assert_eq!(grad.len(), x.len(), "gradient length mismatch");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let mut out = x.clone();
    for (i, (xv, &g)) in out.data_mut().iter_mut().zip(grad.data()).enumerate() {
        let m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let step = cfg.eta * (m / c1) / ((v / c2) + cfg.epsilon).sqrt();
        *xv = (*xv - step).clamp(0.0, 1.0);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub total_loss: f64,
    pub perf_loss: f64,
    pub distortion_loss: f64,
    pub sim_to_target: f64,
    pub sim_to_carrier: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttackTrace {
    pub records: Vec<TraceRecord>,
}

pub const TRACE_CSV_HEADER: &str = "iter,total,perf,distortion,sim_target,sim_carrier";

impl AttackTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> Option<&TraceRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn total_losses(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.total_loss)
    }

    /// First iteration whose total loss is within `fraction` of the overall
    /// decrease from the final value.
    pub fn plateau_iteration(&self, fraction: f64) -> usize {
        let (Some(first), Some(last)) = (self.first(), self.last()) else {
            return 0;
        };
        let span = (first.total_loss - last.total_loss).max(0.0);
        self.records
            .iter()
            .find(|r| r.total_loss - last.total_loss <= fraction * span)
            .map_or(last.iteration, |r| r.iteration)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iteration, r.total_loss, r.perf_loss, r.distortion_loss, r.sim_to_target, r.sim_to_carrier
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub adversarial: Tensor,
    pub trace: AttackTrace,
}

/// Minimizes the total loss from the carrier for `cfg.iterations` Adam steps.
/// The trace records every iterate, including the starting point.
pub fn run_attack(
    net: &DescriptorNetwork,
    instance: &AttackInstance,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    let target = TargetFeatures::new(net, &instance.target, cfg.s, &cfg.bins)?;
    let carrier_desc = net.extract_descriptor(&instance.carrier, cfg.s)?;
    let mut x = instance.carrier.clone();
    let mut state = AdamState::new(x.len());
    let mut trace = AttackTrace {
        records: Vec::with_capacity(cfg.iterations + 1),
    };
    for iteration in 0..=cfg.iterations {
        let eval = total_loss(cfg, net, &x, &instance.carrier, &target)?;
        let record = TraceRecord {
            iteration,
            total_loss: eval.total,
            perf_loss: eval.perf,
            distortion_loss: eval.distortion,
            sim_to_target: similarity(&eval.descriptor, &target.descriptor)?,
            sim_to_carrier: similarity(&eval.descriptor, &carrier_desc)?,
        };
        let finite = [record.total_loss, record.sim_to_target, record.sim_to_carrier]
            .iter()
            .all(|v| v.is_finite())
            && eval.grad.is_finite();
        if !finite {
            return Err(AttackError::NonFinite { iteration });
        }
        trace.records.push(record);
        if iteration < cfg.iterations {
            x = adam_step(&mut state, &x, &eval.grad, cfg);
        }
    }
    Ok(AttackOutcome {
        adversarial: x,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SplitMix64;

    fn rand_img(seed: u64, side: usize) -> Tensor {
        SplitMix64::new(seed).tensor(side, side, 3, 0.0, 1.0)
    }

    /// Gradient check on a subset of coordinates, normalized by the largest
    /// finite-difference magnitude seen.
    fn fd_check(x: &Tensor, grad: &Tensor, f: impl Fn(&Tensor) -> f64, stride: usize) -> f64 {
        let h = 1e-5;
        let (mut err, mut scale) = (0.0f64, 0.0f64);
        for i in (0..x.len()).step_by(stride) {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            err = err.max((fd - grad.data()[i]).abs());
            scale = scale.max(fd.abs());
        }
        err / scale.max(1e-12)
    }

    #[test]
    fn global_loss_zero_at_target() {
        let net = DescriptorNetwork::default();
        let t = rand_img(1, 32);
        let tf = TargetFeatures::new(&net, &t, 32, &Bins::default()).unwrap();
        assert!(loss_global(&net, &t, &tf).unwrap().value.abs() < 1e-9);
        assert_eq!(loss_tensor(&net, &t, &tf).unwrap().value, 0.0);
        assert_eq!(loss_hist(&net, &t, &tf, &Bins::default()).unwrap().value, 0.0);
    }

    #[test]
    fn global_loss_of_orthogonal_descriptors_is_one() {
        let a = Descriptor::from_unit(vec![1.0, 0.0]).unwrap();
        let b = Descriptor::from_unit(vec![0.0, 1.0]).unwrap();
        assert!((1.0 - similarity(&a, &b).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn tensor_loss_single_cell() {
        let g_t = Tensor::zeros(4, 4, 2);
        let mut g = g_t.clone();
        g.set(1, 2, 1, 2.0);
        let (v, _) = tensor_loss_from_activations(&g, &g_t);
        assert_eq!(v, 4.0 / 32.0);
    }

    #[test]
    fn soft_histogram_hand_values() {
        let bins = Bins::from_centers(vec![0.0, 0.5, 1.0]).unwrap();
        let g = Tensor::filled(2, 2, 1, 0.25);
        assert_eq!(soft_histogram(&g, &bins), vec![0.5, 0.5, 0.0]);
        let (v, _) = hist_loss_from_activations(&g, &[0.5, 0.5, 0.0], &bins);
        assert_eq!(v, 0.0);
        // Values {0.25, 0.25, 0.25, 0.75}: masses (0.375, 0.5, 0.125).
        let mut shifted = g.clone();
        shifted.set(1, 1, 0, 0.75);
        let h = soft_histogram(&shifted, &bins);
        assert_eq!(h, vec![0.375, 0.5, 0.125]);
        let (v, _) = hist_loss_from_activations(&shifted, &[0.5, 0.5, 0.0], &bins);
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bins_must_be_uniform() {
        assert!(Bins::from_centers(vec![0.0, 1.0, 3.0]).is_err());
        assert!(Bins::from_centers(vec![1.0, 0.0]).is_err());
        let b = Bins::default();
        assert_eq!(b.len(), 16);
        assert!((b.spacing() - 4.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let net = DescriptorNetwork::default();
        let bins = Bins::default();
        for seed in 0..4u64 {
            let x = rand_img(10 + seed, 16);
            let t = rand_img(20 + seed, 16);
            let tf = TargetFeatures::new(&net, &t, 16, &bins).unwrap();
            let e = loss_global(&net, &x, &tf).unwrap();
            assert!(fd_check(&x, &e.grad, |p| loss_global(&net, p, &tf).unwrap().value, 5) < 1e-3);
            let e = loss_tensor(&net, &x, &tf).unwrap();
            assert!(fd_check(&x, &e.grad, |p| loss_tensor(&net, p, &tf).unwrap().value, 5) < 1e-3);
            let e = loss_hist(&net, &x, &tf, &bins).unwrap();
            let err = fd_check(&x, &e.grad, |p| loss_hist(&net, p, &tf, &bins).unwrap().value, 5);
            assert!(err < 1e-3, "hist seed {seed}: {err}");
        }
    }

    #[test]
    fn total_loss_composition() {
        let net = DescriptorNetwork::default();
        let x = rand_img(1, 16);
        let t = rand_img(2, 16);
        let c = rand_img(3, 16);
        let mut cfg = AttackConfig {
            s: 16,
            ..AttackConfig::default()
        };
        let tf = TargetFeatures::new(&net, &t, 16, &cfg.bins).unwrap();
        let perf = loss_global(&net, &x, &tf).unwrap();
        let zero = total_loss(&cfg, &net, &x, &c, &tf).unwrap();
        assert_eq!(zero.total, perf.value);
        assert_eq!(zero.grad, perf.grad);

        cfg.lambda = 1.0;
        let at_c = total_loss(&cfg, &net, &c, &c, &tf).unwrap();
        assert_eq!(at_c.distortion, 0.0);
        let one = total_loss(&cfg, &net, &x, &c, &tf).unwrap();
        let manual = perf.value
            + x.data()
                .iter()
                .zip(c.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
        assert!((one.total - manual).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let cfg = AttackConfig::default();
        let x = rand_img(4, 4);
        let mut st = AdamState::new(x.len());
        let y = adam_step(&mut st, &x, &Tensor::zeros(4, 4, 3), &cfg);
        assert_eq!(x, y);
    }

    #[test]
    fn adam_matches_scalar_oracle() {
        let cfg = AttackConfig {
            eta: 0.1,
            ..AttackConfig::default()
        };
        // Reference: textbook Adam on one scalar with constant gradient 1.
        let (mut m, mut v, mut theta) = (0.0f64, 0.0f64, 0.8f64);
        let mut x = Tensor::filled(1, 1, 1, 0.8);
        let mut st = AdamState::new(1);
        let g = Tensor::filled(1, 1, 1, 1.0);
        for t in 1..=5 {
            m = 0.9 * m + 0.1;
            v = 0.999 * v + 0.001;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            theta = (theta - 0.1 * mh / (vh + 1e-8).sqrt()).clamp(0.0, 1.0);
            x = adam_step(&mut st, &x, &g, &cfg);
            assert!((x.data()[0] - theta).abs() < 1e-15);
            if t == 1 {
                assert!((0.8 - theta - 0.1 / (1.0f64 + 1e-8).sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_clamps_to_box() {
        let cfg = AttackConfig {
            eta: 0.5,
            ..AttackConfig::default()
        };
        let x = Tensor::filled(1, 1, 1, 0.1);
        let mut st = AdamState::new(1);
        let y = adam_step(&mut st, &x, &Tensor::filled(1, 1, 1, 1.0), &cfg);
        assert_eq!(y.data()[0], 0.0);
    }

    #[test]
    fn attack_on_own_target_stays_optimal() {
        let net = DescriptorNetwork::default();
        let img = rand_img(5, 32);
        let inst = AttackInstance::new(img.clone(), img).unwrap();
        let cfg = AttackConfig {
            iterations: 5,
            ..AttackConfig::default()
        };
        let out = run_attack(&net, &inst, &cfg).unwrap();
        assert_eq!(out.trace.len(), 6);
        assert!(out.trace.first().unwrap().total_loss.abs() < 1e-9);
        assert!(out.trace.last().unwrap().sim_to_target >= 0.999);
    }

    #[test]
    fn instance_validation() {
        assert!(AttackInstance::new(Tensor::zeros(4, 4, 3), Tensor::zeros(4, 5, 3)).is_err());
        assert!(AttackInstance::new(Tensor::filled(4, 4, 3, 1.5), Tensor::zeros(4, 4, 3)).is_err());
        assert!("hist".parse::<LossKind>().is_ok());
        assert!("max".parse::<LossKind>().is_err());
        let bad = AttackConfig {
            iterations: 0,
            ..AttackConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn plateau_iteration_definition() {
        let mk = |losses: &[f64]| AttackTrace {
            records: losses
                .iter()
                .enumerate()
                .map(|(i, &l)| TraceRecord {
                    iteration: i,
                    total_loss: l,
                    perf_loss: l,
                    distortion_loss: 0.0,
                    sim_to_target: 0.0,
                    sim_to_carrier: 0.0,
                })
                .collect(),
        };
        assert_eq!(mk(&[1.0, 0.5, 0.05, 0.0]).plateau_iteration(0.1), 2);
        assert_eq!(mk(&[1.0, 0.95, 0.5, 0.0]).plateau_iteration(0.1), 3);
        let csv = mk(&[1.0, 0.5]).to_csv();
        assert!(csv.starts_with(TRACE_CSV_HEADER));
        assert_eq!(csv.lines().count(), 3);
    }
}
