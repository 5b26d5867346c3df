//! Single-layer LSTM with a sigmoid read-out, evaluated on minibatches.
//!
//! Gate weights are stored stacked as one `4H x (H + F)` matrix acting on
//! the concatenation `[s_{t-1}, x_t]`, rows ordered forget, input, candidate,
//! output. The read-out maps the final hidden state to `p` probabilities.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::numerics::{splitmix64, RngStream};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-12;

/// How the flat feature vector is cut into a sequence: `timesteps` steps of
/// `features` values each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub timesteps: usize,
    pub features: usize,
}

impl Layout {
    pub fn new(timesteps: usize, features: usize) -> Result<Self> {
        if timesteps == 0 || features == 0 {
            return Err(invalid("layout needs at least one timestep and one feature"));
        }
        Ok(Self { timesteps, features })
    }

    pub fn input_len(&self) -> usize {
        self.timesteps * self.features
    }
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            timesteps: 2,
            features: 128,
        }
    }
}

/// Gate index within the stacked weight matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Forget = 0,
    Input = 1,
    Candidate = 2,
    Output = 3,
}

pub const GATES: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Candidate, Gate::Output];

/// All trainable parameters. The same shape doubles as a gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    hidden: usize,
    input: usize,
    outputs: usize,
    pub(crate) w: Array2<f64>,
    pub(crate) b: Array1<f64>,
    pub(crate) w_out: Array2<f64>,
    pub(crate) b_out: Array1<f64>,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize, outputs: usize) -> Self {
        Self {
            hidden,
            input,
            outputs,
            w: Array2::zeros((4 * hidden, hidden + input)),
            b: Array1::zeros(4 * hidden),
            w_out: Array2::zeros((outputs, hidden)),
            b_out: Array1::zeros(outputs),
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases except
    /// the forget gate, which starts at 1.
    pub fn init(hidden: usize, input: usize, outputs: usize, rng: &mut RngStream) -> Self {
        let mut p = Self::zeros(hidden, input, outputs);
        let a = 1.0 / ((hidden + input) as f64).sqrt();
        p.w.mapv_inplace(|_| (2.0 * rng.uniform() - 1.0) * a);
        let a_out = 1.0 / (hidden as f64).sqrt();
        p.w_out.mapv_inplace(|_| (2.0 * rng.uniform() - 1.0) * a_out);
        p.b.slice_mut(s![0..hidden]).fill(1.0);
        p
    }

    /// Build from explicit arrays; gate blocks are stacked in forget, input,
    /// candidate, output order.
    pub fn from_parts(
        w_gates: [Array2<f64>; 4],
        b_gates: [Array1<f64>; 4],
        w_out: Array2<f64>,
        b_out: Array1<f64>,
    ) -> Result<Self> {
        let (hidden, cols) = w_gates[0].dim();
        if hidden == 0 || cols <= hidden {
            return Err(invalid("gate weights must be hidden x (hidden + feature)"));
        }
        let input = cols - hidden;
        let outputs = w_out.nrows();
        let mut p = Self::zeros(hidden, input, outputs);
        for (g, (wg, bg)) in w_gates.iter().zip(&b_gates).enumerate() {
            if wg.dim() != (hidden, cols) || bg.len() != hidden {
                return Err(invalid("inconsistent gate shapes"));
            }
            p.w.slice_mut(s![g * hidden..(g + 1) * hidden, ..]).assign(wg);
            p.b.slice_mut(s![g * hidden..(g + 1) * hidden]).assign(bg);
        }
        if w_out.ncols() != hidden || b_out.len() != outputs || outputs == 0 {
            return Err(invalid("inconsistent read-out shapes"));
        }
        p.w_out = w_out;
        p.b_out = b_out;
        p.check_finite()?;
        Ok(p)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn gate_weights(&self, gate: Gate) -> ArrayView2<'_, f64> {
        let g = gate as usize;
        self.w.slice(s![g * self.hidden..(g + 1) * self.hidden, ..])
    }

    pub fn gate_bias(&self, gate: Gate) -> ArrayView1<'_, f64> {
        let g = gate as usize;
        self.b.slice(s![g * self.hidden..(g + 1) * self.hidden])
    }

    pub fn readout_weights(&self) -> ArrayView2<'_, f64> {
        self.w_out.view()
    }

    pub fn readout_bias(&self) -> ArrayView1<'_, f64> {
        self.b_out.view()
    }

    pub fn readout_bias_mut(&mut self) -> &mut Array1<f64> {
        &mut self.b_out
    }

    pub fn readout_weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.w_out
    }

    pub fn same_shape(&self, other: &LstmParams) -> bool {
        self.hidden == other.hidden && self.input == other.input && self.outputs == other.outputs
    }

    /// Flat views over every parameter: gate weights, gate biases, read-out
    /// weights, read-out bias.
    pub fn slices(&self) -> [&[f64]; 4] {
        [
            self.w.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
            self.w_out.as_slice().expect("standard layout"),
            self.b_out.as_slice().expect("standard layout"),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
            self.w_out.as_slice_mut().expect("standard layout"),
            self.b_out.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Sum of squared weights, biases excluded.
    pub fn weight_sq_sum(&self) -> f64 {
        self.w.iter().chain(self.w_out.iter()).map(|v| v * v).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.slices().iter().all(|s| s.iter().all(|v| v.is_finite())) {
            Ok(())
        } else {
            Err(invalid("parameters contain non-finite entries"))
        }
    }

    /// Hash of every parameter's bit pattern; used to tie caches to the
    /// parameters that produced them.
    pub fn fingerprint(&self) -> u64 {
        let mut h = splitmix64((self.hidden as u64) << 40 ^ (self.input as u64) << 20 ^ self.outputs as u64);
        for s in self.slices() {
            for v in s {
                h = splitmix64(h ^ v.to_bits());
            }
        }
        h
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Activations of one timestep for a batch.
#[derive(Clone, Debug)]
pub struct StepCache {
    /// `[s_{t-1}, x_t]`, B x (H + F).
    pub concat: Array2<f64>,
    /// Post-activation gates `[f, i, c~, o]`, B x 4H.
    pub gates: Array2<f64>,
    pub c_prev: Array2<f64>,
    pub c: Array2<f64>,
    pub tanh_c: Array2<f64>,
    pub s: Array2<f64>,
}

/// One LSTM step on a batch: `x` is B x F, states are B x H.
pub fn cell_step(
    params: &LstmParams,
    x: ArrayView2<'_, f64>,
    s_prev: ArrayView2<'_, f64>,
    c_prev: ArrayView2<'_, f64>,
) -> Result<StepCache> {
    let h = params.hidden;
    let batch = x.nrows();
    if x.ncols() != params.input || s_prev.dim() != (batch, h) || c_prev.dim() != (batch, h) {
        return Err(invalid(format!(
            "cell inputs have shapes {:?}, {:?}, {:?}; expected (B, {}), (B, {h}), (B, {h})",
            x.dim(),
            s_prev.dim(),
            c_prev.dim(),
            params.input
        )));
    }
    let mut concat = Array2::zeros((batch, h + params.input));
    concat.slice_mut(s![.., ..h]).assign(&s_prev);
    concat.slice_mut(s![.., h..]).assign(&x);

    let mut gates = concat.dot(&params.w.t());
    gates += &params.b;
    for mut row in gates.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if (2 * h..3 * h).contains(&j) { v.tanh() } else { sigmoid(*v) };
        }
    }

    let f = gates.slice(s![.., 0..h]);
    let i = gates.slice(s![.., h..2 * h]);
    let g = gates.slice(s![.., 2 * h..3 * h]);
    let o = gates.slice(s![.., 3 * h..4 * h]);
    let c = &f * &c_prev + &i * &g;
    let tanh_c = c.mapv(f64::tanh);
    let s_t = &o * &tanh_c;
    Ok(StepCache {
        concat,
        gates,
        c_prev: c_prev.to_owned(),
        c,
        tanh_c,
        s: s_t,
    })
}

/// Output of a single-example cell step.
#[derive(Clone, Debug)]
pub struct CellOutput {
    pub s: Vec<f64>,
    pub c: Vec<f64>,
    pub cache: StepCache,
}

impl CellOutput {
    pub fn gate(&self, gate: Gate) -> Vec<f64> {
        let h = self.s.len();
        let g = gate as usize;
        self.cache.gates.row(0).slice(s![g * h..(g + 1) * h]).to_vec()
    }
}

/// Single-example convenience wrapper over [`cell_step`].
pub fn lstm_cell_forward(x_t: &[f64], s_prev: &[f64], c_prev: &[f64], params: &LstmParams) -> Result<CellOutput> {
    check_len(params.input, x_t.len())?;
    check_len(params.hidden, s_prev.len())?;
    check_len(params.hidden, c_prev.len())?;
    let x = ArrayView2::from_shape((1, x_t.len()), x_t).expect("row vector");
    let sp = ArrayView2::from_shape((1, s_prev.len()), s_prev).expect("row vector");
    let cp = ArrayView2::from_shape((1, c_prev.len()), c_prev).expect("row vector");
    let cache = cell_step(params, x, sp, cp)?;
    Ok(CellOutput {
        s: cache.s.row(0).to_vec(),
        c: cache.c.row(0).to_vec(),
        cache,
    })
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    layout: Layout,
    fingerprint: u64,
    steps: Vec<StepCache>,
    /// B x p probabilities (unclamped).
    pub probs: Array2<f64>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.probs.nrows()
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn final_hidden(&self) -> ArrayView2<'_, f64> {
        self.steps.last().expect("at least one step").s.view()
    }
}

/// Run the sequence from zero state on a batch of flat inputs (B x T*F).
pub fn forward_batch(inputs: ArrayView2<'_, f64>, params: &LstmParams, layout: Layout) -> Result<ForwardCache> {
    if inputs.ncols() != layout.input_len() {
        return Err(invalid(format!(
            "input has {} features, layout {}x{} needs {}",
            inputs.ncols(),
            layout.timesteps,
            layout.features,
            layout.input_len()
        )));
    }
    if layout.features != params.input {
        return Err(invalid(format!(
            "layout step width {} does not match model input {}",
            layout.features, params.input
        )));
    }
    let batch = inputs.nrows();
    let h = params.hidden;
    let mut s_prev = Array2::zeros((batch, h));
    let mut c_prev = Array2::zeros((batch, h));
    let mut steps = Vec::with_capacity(layout.timesteps);
    for t in 0..layout.timesteps {
        let x = inputs.slice(s![.., t * layout.features..(t + 1) * layout.features]);
        let step = cell_step(params, x, s_prev.view(), c_prev.view())?;
        s_prev = step.s.clone();
        c_prev = step.c.clone();
        steps.push(step);
    }
    let mut probs = s_prev.dot(&params.w_out.t());
    probs += &params.b_out;
    probs.mapv_inplace(sigmoid);
    Ok(ForwardCache {
        layout,
        fingerprint: params.fingerprint(),
        steps,
        probs,
    })
}

/// Single-example forward pass; returns the `p` output probabilities.
pub fn forward(features: &[f64], params: &LstmParams, layout: Layout) -> Result<(Vec<f64>, ForwardCache)> {
    let x = ArrayView2::from_shape((1, features.len()), features).expect("row vector");
    let cache = forward_batch(x, params, layout)?;
    Ok((cache.probs.row(0).to_vec(), cache))
}

/// Binary cross-entropy `psi` summed over outputs, and `gamma = psi + (eta/2) * sum W^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Loss {
    pub psi: f64,
    pub gamma: f64,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Cross-entropy of one example.
pub fn cross_entropy(probs: &[f64], labels: &[f64]) -> Result<f64> {
    check_len(probs.len(), labels.len())?;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(&p, &d)| {
            let p = clamp_prob(p);
            -(d * p.ln() + (1.0 - d) * (1.0 - p).ln())
        })
        .sum())
}

pub fn loss(probs: &[f64], labels: &[f64], params: &LstmParams, weight_decay: f64) -> Result<Loss> {
    let psi = cross_entropy(probs, labels)?;
    Ok(Loss {
        psi,
        gamma: psi + 0.5 * weight_decay * params.weight_sq_sum(),
    })
}

/// Batch-mean cross-entropy plus the weight-decay term.
pub fn batch_loss(probs: ArrayView2<'_, f64>, labels: ArrayView2<'_, f64>, params: &LstmParams, weight_decay: f64) -> Result<Loss> {
    if probs.dim() != labels.dim() {
        return Err(invalid("probability and label shapes differ"));
    }
    let mut total = 0.0;
    for (p, d) in probs.rows().into_iter().zip(labels.rows()) {
        total += p
            .iter()
            .zip(d.iter())
            .map(|(&p, &d)| {
                let p = clamp_prob(p);
                -(d * p.ln() + (1.0 - d) * (1.0 - p).ln())
            })
            .sum::<f64>();
    }
    let psi = total / probs.nrows().max(1) as f64;
    Ok(Loss {
        psi,
        gamma: psi + 0.5 * weight_decay * params.weight_sq_sum(),
    })
}

/// Exact gradient of the batch-mean `gamma` by backpropagation through time.
pub fn backward(
    cache: &ForwardCache,
    labels: ArrayView2<'_, f64>,
    params: &LstmParams,
    weight_decay: f64,
) -> Result<LstmParams> {
    if cache.fingerprint != params.fingerprint() {
        return Err(invalid("forward cache was produced with different parameters"));
    }
    if labels.dim() != cache.probs.dim() {
        return Err(invalid(format!(
            "labels have shape {:?}, forward pass produced {:?}",
            labels.dim(),
            cache.probs.dim()
        )));
    }
    let h = params.hidden;
    let batch = cache.batch();
    let inv_b = 1.0 / batch as f64;

    // d psi / d logit for a sigmoid + clamped cross-entropy; the clamp has zero slope.
    let mut d_logits = Array2::zeros(cache.probs.dim());
    Zip::from(&mut d_logits)
        .and(&cache.probs)
        .and(&labels)
        .for_each(|g, &p, &d| {
            *g = if p > PROB_EPS && p < 1.0 - PROB_EPS { (p - d) * inv_b } else { 0.0 };
        });

    let mut grads = LstmParams::zeros(h, params.input, params.outputs);
    grads.w_out = d_logits.t().dot(&cache.final_hidden());
    grads.b_out = d_logits.sum_axis(Axis(0));

    let mut ds = d_logits.dot(&params.w_out);
    let mut dc: Array2<f64> = Array2::zeros((batch, h));
    let w_state = params.w.slice(s![.., 0..h]);
    let mut dz = Array2::zeros((batch, 4 * h));

    for step in cache.steps.iter().rev() {
        let g = &step.gates;
        for r in 0..batch {
            for j in 0..h {
                let f = g[[r, j]];
                let i = g[[r, h + j]];
                let cand = g[[r, 2 * h + j]];
                let o = g[[r, 3 * h + j]];
                let tc = step.tanh_c[[r, j]];
                let dsj = ds[[r, j]];
                let dcj = dc[[r, j]] + dsj * o * (1.0 - tc * tc);
                dz[[r, j]] = dcj * step.c_prev[[r, j]] * f * (1.0 - f);
                dz[[r, h + j]] = dcj * cand * i * (1.0 - i);
                dz[[r, 2 * h + j]] = dcj * i * (1.0 - cand * cand);
                dz[[r, 3 * h + j]] = dsj * tc * o * (1.0 - o);
                dc[[r, j]] = dcj * f;
            }
        }
        grads.w += &dz.t().dot(&step.concat);
        grads.b += &dz.sum_axis(Axis(0));
        ds = dz.dot(&w_state);
    }

    if weight_decay != 0.0 {
        grads.w.scaled_add(weight_decay, &params.w);
        grads.w_out.scaled_add(weight_decay, &params.w_out);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn random_params(rng: &mut RngStream, hidden: usize, input: usize, outputs: usize, scale: f64) -> LstmParams {
        let mut p = LstmParams::init(hidden, input, outputs, rng);
        for s in p.slices_mut() {
            s.iter_mut().for_each(|v| *v = (2.0 * rng.uniform() - 1.0) * scale);
        }
        p
    }

    #[test]
    fn zero_params_cell() {
        let p = LstmParams::zeros(1, 3, 1);
        let out = lstm_cell_forward(&[0.3, -1.0, 2.0], &[0.0], &[1.0], &p).unwrap();
        assert_eq!(out.gate(Gate::Forget), vec![0.5]);
        assert_eq!(out.gate(Gate::Input), vec![0.5]);
        assert_eq!(out.gate(Gate::Output), vec![0.5]);
        assert_eq!(out.gate(Gate::Candidate), vec![0.0]);
        assert!((out.c[0] - 0.5).abs() < 1e-15);
        assert!((out.s[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((out.s[0] - 0.23106).abs() < 1e-5);

        let out = lstm_cell_forward(&[0.0; 3], &[0.0], &[0.0], &p).unwrap();
        assert_eq!(out.c, vec![0.0]);
        assert_eq!(out.s, vec![0.0]);
    }

    #[test]
    fn cell_shape_errors() {
        let p = LstmParams::zeros(2, 3, 1);
        assert!(lstm_cell_forward(&[0.0; 2], &[0.0; 2], &[0.0; 2], &p).is_err());
        assert!(lstm_cell_forward(&[0.0; 3], &[0.0; 1], &[0.0; 2], &p).is_err());
    }

    #[test]
    fn gate_ranges_and_cell_bound() {
        let mut rng = RngStream::new(4, 4);
        for _ in 0..10_000 {
            let p = random_params(&mut rng, 3, 2, 1, 1.0);
            let x: Vec<f64> = (0..2).map(|_| rng.standard_normal()).collect();
            let sp: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
            let cp: Vec<f64> = (0..3).map(|_| rng.standard_normal() * 2.0).collect();
            let out = lstm_cell_forward(&x, &sp, &cp, &p).unwrap();
            let f = out.gate(Gate::Forget);
            let i = out.gate(Gate::Input);
            for gate in [Gate::Forget, Gate::Input, Gate::Output] {
                assert!(out.gate(gate).iter().all(|&v| v > 0.0 && v < 1.0));
            }
            for j in 0..3 {
                assert!(out.c[j].abs() <= (f[j] * cp[j]).abs() + i[j].abs() + 1e-15);
            }
        }
    }

    #[test]
    fn zero_params_forward_is_half() {
        let p = LstmParams::zeros(16, 128, 16);
        let x = vec![0.7; 256];
        let (probs, _) = forward(&x, &p, Layout::default()).unwrap();
        assert!(probs.iter().all(|&v| v == 0.5));
        assert!(forward(&x[..255], &p, Layout::default()).is_err());
    }

    #[test]
    fn saturated_outputs_stay_inside_unit_interval() {
        let mut rng = RngStream::new(10, 0);
        let mut p = LstmParams::init(4, 8, 4, &mut rng);
        p.scale(10.0);
        let x: Vec<f64> = (0..24).map(|_| rng.standard_normal()).collect();
        let (probs, _) = forward(&x, &p, Layout::new(3, 8).unwrap()).unwrap();
        let labels = [1.0, 0.0, 1.0, 0.0];
        for &v in &probs {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(cross_entropy(&probs, &labels).unwrap().is_finite());
    }

    #[test]
    fn batch_rows_are_independent() {
        let mut rng = RngStream::new(5, 0);
        let p = LstmParams::init(4, 8, 4, &mut rng);
        let layout = Layout::new(3, 8).unwrap();
        let x = Array2::from_shape_fn((2, 24), |_| rng.standard_normal());
        let mut swapped = x.clone();
        swapped.row_mut(0).assign(&x.row(1));
        swapped.row_mut(1).assign(&x.row(0));
        let a = forward_batch(x.view(), &p, layout).unwrap().probs;
        let b = forward_batch(swapped.view(), &p, layout).unwrap().probs;
        assert_eq!(a.row(0), b.row(1));
        assert_eq!(a.row(1), b.row(0));
    }

    #[test]
    fn loss_examples() {
        let p = LstmParams::zeros(2, 2, 16);
        let probs = vec![0.5; 16];
        let labels: Vec<f64> = (0..16).map(|i| (i % 2) as f64).collect();
        let l = loss(&probs, &labels, &p, 0.0).unwrap();
        assert!((l.psi - 16.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l.psi - 11.0904).abs() < 1e-4);
        assert_eq!(l.gamma, l.psi);

        let exact = loss(&labels, &labels, &p, 0.0).unwrap();
        assert!(exact.psi < 1e-10);

        let mut rng = RngStream::new(1, 1);
        let q = LstmParams::init(2, 2, 16, &mut rng);
        let l = loss(&probs, &labels, &q, 0.3).unwrap();
        assert!((l.gamma - l.psi - 0.15 * q.weight_sq_sum()).abs() < 1e-12);
        assert!(l.gamma > l.psi);
    }

    #[test]
    fn gradient_zero_at_perfect_fit() {
        let mut p = LstmParams::zeros(3, 4, 4);
        p.b_out = Array1::from(vec![-40.0, 40.0, 40.0, -40.0]);
        let x = vec![0.2; 8];
        let layout = Layout::new(2, 4).unwrap();
        let (_, cache) = forward(&x, &p, layout).unwrap();
        let labels = Array2::from_shape_vec((1, 4), vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let g = backward(&cache, labels.view(), &p, 0.0).unwrap();
        assert!(g.slices().iter().flat_map(|s| s.iter()).all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn weight_decay_isolated() {
        let mut rng = RngStream::new(2, 2);
        let mut p = LstmParams::init(3, 4, 4, &mut rng);
        p.b_out = Array1::from(vec![-40.0, 40.0, 40.0, -40.0]);
        p.w_out.fill(0.0);
        p.w_out[[0, 1]] = 0.25;
        let x = vec![0.2; 8];
        let layout = Layout::new(2, 4).unwrap();
        let (_, cache) = forward(&x, &p, layout).unwrap();
        let labels = Array2::from_shape_vec((1, 4), vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let eta = 0.01;
        let g = backward(&cache, labels.view(), &p, eta).unwrap();
        assert_eq!(g.w, &p.w * eta);
        assert_eq!(g.w_out, &p.w_out * eta);
        assert!(g.b.iter().chain(g.b_out.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = RngStream::new(3, 3);
        let mut p = LstmParams::init(3, 4, 2, &mut rng);
        let layout = Layout::new(2, 4).unwrap();
        let (_, cache) = forward(&[0.1; 8], &p, layout).unwrap();
        let labels = Array2::zeros((1, 2));
        assert!(backward(&cache, labels.view(), &p, 0.0).is_ok());
        assert!(backward(&cache, Array2::zeros((1, 3)).view(), &p, 0.0).is_err());
        p.w[[0, 0]] += 1e-3;
        assert!(backward(&cache, labels.view(), &p, 0.0).is_err());
    }

    #[test]
    fn batch_gradient_is_mean_of_examples() {
        let mut rng = RngStream::new(6, 6);
        let p = LstmParams::init(4, 5, 3, &mut rng);
        let layout = Layout::new(2, 5).unwrap();
        let x = Array2::from_shape_fn((3, 10), |_| rng.standard_normal());
        let y = Array2::from_shape_fn((3, 3), |_| f64::from(rng.bit()));
        let batch = backward(&forward_batch(x.view(), &p, layout).unwrap(), y.view(), &p, 0.0).unwrap();
        let mut acc = LstmParams::zeros(4, 5, 3);
        for r in 0..3 {
            let xr = x.slice(s![r..r + 1, ..]);
            let yr = y.slice(s![r..r + 1, ..]);
            let g = backward(&forward_batch(xr, &p, layout).unwrap(), yr, &p, 0.0).unwrap();
            for (a, b) in acc.slices_mut().into_iter().zip(g.slices()) {
                a.iter_mut().zip(b).for_each(|(u, v)| *u += v / 3.0);
            }
        }
        for (a, b) in acc.slices().iter().zip(batch.slices()) {
            for (u, v) in a.iter().zip(b) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }

    /// Central-difference check of every gradient entry.
    pub(crate) fn max_gradient_error(seed: u64, weight_decay: f64) -> f64 {
        let mut rng = RngStream::new(seed, 77);
        let layout = Layout::new(3, 8).unwrap();
        let params = random_params(&mut rng, 4, 8, 4, 0.8);
        let x = Array2::from_shape_fn((2, 24), |_| rng.standard_normal());
        let y = Array2::from_shape_fn((2, 4), |_| f64::from(rng.bit()));
        let cost = |p: &LstmParams| {
            let c = forward_batch(x.view(), p, layout).unwrap();
            batch_loss(c.probs.view(), y.view(), p, weight_decay).unwrap().gamma
        };
        let grads = backward(&forward_batch(x.view(), &params, layout).unwrap(), y.view(), &params, weight_decay).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for part in 0..4 {
            for j in 0..params.slices()[part].len() {
                let mut plus = params.clone();
                plus.slices_mut()[part][j] += h;
                let mut minus = params.clone();
                minus.slices_mut()[part][j] -= h;
                let numeric = (cost(&plus) - cost(&minus)) / (2.0 * h);
                let analytic = grads.slices()[part][j];
                let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
                worst = worst.max(err);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            assert!(max_gradient_error(seed, 0.0) < 1e-6);
        }
        assert!(max_gradient_error(11, 0.05) < 1e-6);
    }
}
