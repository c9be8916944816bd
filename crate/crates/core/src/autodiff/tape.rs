use super::conv::{self, ConvGeometry};
use super::tensor::{ParamId, Parameter, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Dense { x: Var, w: Var, b: Var },
    Conv3d { x: Var, w: Var, b: Var, geom: ConvGeometry },
    Relu { x: Var },
    AvgPool { x: Var },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Sum { x: Var },
    SumSquares { x: Var },
    WeightedSum { x: Var, weights: Vec<f64> },
    IntervalLogProb { logits: Var, first: usize, last: usize },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Define-by-run record of a forward computation.
///
/// Nodes are appended in execution order, so every operand precedes its
/// consumer and the reverse sweep in [`Tape::backward`] is a valid
/// topological order.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// How ReLU adjoints treat the incoming gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReluRule {
    /// Pass the gradient where the forward activation was positive.
    #[default]
    Standard,
    /// Guided backpropagation: pass only where the forward activation AND the
    /// incoming gradient are both positive.
    Guided,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input. Its gradient is still retrievable.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Records the current value of a parameter.
    pub fn param(&mut self, p: &Parameter) -> Var {
        self.push(p.value().clone(), Op::Param(p.id()))
    }

    /// `x·W + b` for `x` of shape `[d_in]` or `[n, d_in]`, `W` of shape
    /// `[d_in, d_out]` and `b` of shape `[d_out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        let (n, d_in) = match xs {
            [d] => (1, *d),
            [n, d] => (*n, *d),
            _ => return Err(dim("dense", xs, ws)),
        };
        if ws.len() != 2 || ws[0] != d_in {
            return Err(dim("dense", xs, ws));
        }
        let d_out = ws[1];
        if bs != [d_out] {
            return Err(dim("dense", ws, bs));
        }
        let out_shape = if xs.len() == 1 { vec![d_out] } else { vec![n, d_out] };
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![0.0; n * d_out];
        for i in 0..n {
            let row = &mut out[i * d_out..(i + 1) * d_out];
            row.copy_from_slice(bd);
            for k in 0..d_in {
                let xv = xd[i * d_in + k];
                if xv == 0.0 {
                    continue;
                }
                for (o, wv) in row.iter_mut().zip(&wd[k * d_out..(k + 1) * d_out]) {
                    *o += xv * wv;
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::Dense { x, w, b }))
    }

    /// 3D cross-correlation of `x: [c_in, X, Y, Z]` with cubic kernels
    /// `w: [c_out, c_in, k, k, k]` plus per-channel bias `b: [c_out]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 4 || ws.len() != 5 || ws[1] != xs[0] {
            return Err(dim("conv3d", xs, ws));
        }
        let k = ws[2];
        if ws[3] != k || ws[4] != k {
            return Err(Error::Config(format!("conv3d kernel must be cubic, got {ws:?}")));
        }
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv3d kernel extent must be odd, got {k}")));
        }
        if stride == 0 {
            return Err(Error::Config("conv3d stride must be positive".into()));
        }
        if bs != [ws[0]] {
            return Err(dim("conv3d", ws, bs));
        }
        let mut output = [0usize; 3];
        for a in 0..3 {
            output[a] = match conv::output_extent(xs[a + 1], k, stride, padding) {
                Some(e) if e >= 1 => e,
                _ => {
                    return Err(Error::Config(format!(
                        "conv3d output extent is not positive for input {xs:?}, kernel {k}, stride {stride}, padding {padding}"
                    )))
                }
            };
        }
        let geom = ConvGeometry {
            c_in: xs[0],
            c_out: ws[0],
            input: [xs[1], xs[2], xs[3]],
            output,
            kernel: k,
            stride,
            padding,
        };
        let out = conv::forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), &geom);
        let value = Tensor::new(vec![geom.c_out, output[0], output[1], output[2]], out)?;
        Ok(self.push(value, Op::Conv3d { x, w, b, geom }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(value, Op::Relu { x })
    }

    /// Per-channel spatial mean of `[c, ...]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        if xs.len() < 2 || xs[1..].contains(&0) {
            return Err(dim("global_avg_pool", xs, &[]));
        }
        let c = xs[0];
        let vol: usize = xs[1..].iter().product();
        let data = self.value(x).data();
        let out = (0..c)
            .map(|ch| data[ch * vol..(ch + 1) * vol].iter().sum::<f64>() / vol as f64)
            .collect();
        Ok(self.push(Tensor::vector(out), Op::AvgPool { x }))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 1 || bv.rank() != 1 {
            return Err(dim("concat", av.shape(), bv.shape()));
        }
        let mut out = av.data().to_vec();
        out.extend_from_slice(bv.data());
        Ok(self.push(Tensor::vector(out), Op::Concat { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(dim("add", av.shape(), bv.shape()));
        }
        let out = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| c * v);
        self.push(value, Op::Scale { x, c })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum { x })
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().map(|v| v * v).sum());
        self.push(value, Op::SumSquares { x })
    }

    /// `Σ_i weights[i]·x[i]` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != weights.len() {
            return Err(dim("weighted_sum", xv.shape(), &[weights.len()]));
        }
        let value = Tensor::scalar(xv.data().iter().zip(&weights).map(|(a, b)| a * b).sum());
        Ok(self.push(value, Op::WeightedSum { x, weights }))
    }

    /// Log-probability that an MTLR event falls in intervals `first..=last`
    /// (1-based, `last <= K`) given the `K-1` per-time-point logits.
    ///
    /// Sequence scores follow the cumulative encoding: the score of interval
    /// `i` is `Σ_{k >= i} logits[k]`, and interval `K` scores 0.
    pub fn interval_log_prob(&mut self, logits: Var, first: usize, last: usize) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 1 {
            return Err(dim("interval_log_prob", lv.shape(), &[]));
        }
        let k = lv.len() + 1;
        if first == 0 || first > last || last > k {
            return Err(Error::Usage(format!(
                "interval range {first}..={last} outside 1..={k}"
            )));
        }
        let scores = cumulative_scores(lv.data());
        let all = log_sum_exp(&scores);
        let part = log_sum_exp(&scores[first - 1..last]);
        Ok(self.push(
            Tensor::scalar(part - all),
            Op::IntervalLogProb { logits, first, last },
        ))
    }

    pub fn backward(&self, seed: Var) -> Result<Gradients> {
        self.backward_with(seed, ReluRule::Standard)
    }

    /// Reverse sweep from a scalar `seed`. Gradients are kept for every
    /// node reached, not just parameters.
    pub fn backward_with(&self, seed: Var, rule: ReluRule) -> Result<Gradients> {
        let sv = self.value(seed);
        if sv.len() != 1 {
            return Err(Error::Usage(format!(
                "backward seed must be scalar, got shape {:?}",
                sv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; seed.0 + 1];
        grads[seed.0] = Some(Tensor::full(sv.shape(), 1.0));

        for idx in (0..=seed.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::Dense { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let d_in = wv.shape()[0];
                    let d_out = wv.shape()[1];
                    let n = xv.len() / d_in;
                    let (xd, wd, gd) = (xv.data(), wv.data(), g.data());
                    let mut dx = vec![0.0; xv.len()];
                    let mut dw = vec![0.0; wv.len()];
                    let mut db = vec![0.0; d_out];
                    for i in 0..n {
                        let gi = &gd[i * d_out..(i + 1) * d_out];
                        for (acc, gv) in db.iter_mut().zip(gi) {
                            *acc += gv;
                        }
                        for k in 0..d_in {
                            let wrow = &wd[k * d_out..(k + 1) * d_out];
                            dx[i * d_in + k] = wrow.iter().zip(gi).map(|(a, b)| a * b).sum();
                            let xv = xd[i * d_in + k];
                            for (acc, gv) in dw[k * d_out..(k + 1) * d_out].iter_mut().zip(gi) {
                                *acc += xv * gv;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, xv.shape(), dx);
                    accumulate(&mut grads, *w, wv.shape(), dw);
                    accumulate(&mut grads, *b, &[d_out], db);
                }
                Op::Conv3d { x, w, b, geom } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (dx, dw, db) = conv::backward(xv.data(), wv.data(), g.data(), geom);
                    accumulate(&mut grads, *x, xv.shape(), dx);
                    accumulate(&mut grads, *w, wv.shape(), dw);
                    accumulate(&mut grads, *b, &[geom.c_out], db);
                }
                Op::Relu { x } => {
                    let out = node.value.data();
                    let dx = out
                        .iter()
                        .zip(g.data())
                        .map(|(&o, &gv)| match rule {
                            ReluRule::Standard if o > 0.0 => gv,
                            ReluRule::Guided if o > 0.0 && gv > 0.0 => gv,
                            _ => 0.0,
                        })
                        .collect();
                    accumulate(&mut grads, *x, node.value.shape(), dx);
                }
                Op::AvgPool { x } => {
                    let xs = self.value(*x).shape();
                    let vol: usize = xs[1..].iter().product();
                    let mut dx = Vec::with_capacity(xs[0] * vol);
                    for &gv in g.data() {
                        dx.extend(std::iter::repeat_n(gv / vol as f64, vol));
                    }
                    accumulate(&mut grads, *x, xs, dx);
                }
                Op::Concat { a, b } => {
                    let na = self.value(*a).len();
                    let gd = g.data();
                    accumulate(&mut grads, *a, &[na], gd[..na].to_vec());
                    accumulate(&mut grads, *b, &[gd.len() - na], gd[na..].to_vec());
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.shape(), g.data().to_vec());
                    accumulate(&mut grads, *b, g.shape(), g.data().to_vec());
                }
                Op::Scale { x, c } => {
                    let dx = g.data().iter().map(|v| c * v).collect();
                    accumulate(&mut grads, *x, g.shape(), dx);
                }
                Op::Sum { x } => {
                    let xv = self.value(*x);
                    accumulate(&mut grads, *x, xv.shape(), vec![g.data()[0]; xv.len()]);
                }
                Op::SumSquares { x } => {
                    let xv = self.value(*x);
                    let gs = g.data()[0];
                    let dx = xv.data().iter().map(|v| 2.0 * v * gs).collect();
                    accumulate(&mut grads, *x, xv.shape(), dx);
                }
                Op::WeightedSum { x, weights } => {
                    let xv = self.value(*x);
                    let gs = g.data()[0];
                    let dx = weights.iter().map(|w| w * gs).collect();
                    accumulate(&mut grads, *x, xv.shape(), dx);
                }
                Op::IntervalLogProb { logits, first, last } => {
                    let lv = self.value(*logits);
                    let gs = g.data()[0];
                    let scores = cumulative_scores(lv.data());
                    let all = log_sum_exp(&scores);
                    let part = log_sum_exp(&scores[first - 1..*last]);
                    // d/d score_i = 1[i in range]·q_i - p_i
                    let dscore: Vec<f64> = scores
                        .iter()
                        .enumerate()
                        .map(|(i, &s)| {
                            let p = (s - all).exp();
                            let q = if i + 1 >= *first && i < *last { (s - part).exp() } else { 0.0 };
                            gs * (q - p)
                        })
                        .collect();
                    // score_i = Σ_{k >= i} logit_k, so d/d logit_k = Σ_{i <= k} d/d score_i
                    let mut dl = Vec::with_capacity(lv.len());
                    let mut run = 0.0;
                    for ds in &dscore[..lv.len()] {
                        run += ds;
                        dl.push(run);
                    }
                    accumulate(&mut grads, *logits, lv.shape(), dl);
                }
            }
            grads[idx] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .take(seed.0 + 1)
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, d) in existing.data_mut().iter_mut().zip(delta) {
                *a += d;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), delta).expect("adjoint shape"));
        }
    }
}

/// Scores of the `K` legal cumulative sequences from `K-1` logits.
pub(crate) fn cumulative_scores(logits: &[f64]) -> Vec<f64> {
    let mut scores = vec![0.0; logits.len() + 1];
    for i in (0..logits.len()).rev() {
        scores[i] = scores[i + 1] + logits[i];
    }
    scores
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Result of a reverse sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient with respect to any recorded node, `None` if the seed does
    /// not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a parameter, summed over every leaf recorded from it.
    pub fn param(&self, id: ParamId) -> Option<Tensor> {
        let mut out: Option<Tensor> = None;
        for &(pid, idx) in &self.params {
            if pid != id {
                continue;
            }
            if let Some(g) = &self.grads[idx] {
                match &mut out {
                    Some(acc) => acc.add_scaled(g, 1.0),
                    None => out = Some(g.clone()),
                }
            }
        }
        out
    }

    /// Adds `scale` times this sweep's gradient into the parameter's
    /// accumulator.
    pub fn accumulate_into(&self, p: &mut Parameter, scale: f64) {
        if let Some(g) = self.param(p.id()) {
            p.grad_mut().add_scaled(&g, scale);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward_values() {
        let mut t = Tape::new();
        let x = t.input(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
        let x = t.input(Tensor::vector(vec![-3.0, -0.5]));
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut t = Tape::new();
        let x = t.input(Tensor::vector(vec![-1.0, 2.0, 0.0]));
        let y = t.relu(x);
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn identity_seed_has_unit_gradient() {
        let mut t = Tape::new();
        let x = t.input(Tensor::scalar(3.0));
        let g = t.backward(x).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn non_scalar_seed_is_usage_error() {
        let mut t = Tape::new();
        let x = t.input(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn dense_hand_sum() {
        let mut t = Tape::new();
        let x = t.input(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let w = t.input(Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap());
        let b = t.input(Tensor::vector(vec![0.5]));
        let y = t.dense(x, w, b).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 1]);
        assert_eq!(t.value(y).data(), &[3.5]);
    }

    #[test]
    fn dense_shape_mismatch_names_shapes() {
        let mut t = Tape::new();
        let x = t.input(Tensor::zeros(&[2, 3]));
        let w = t.input(Tensor::zeros(&[4, 1]));
        let b = t.input(Tensor::zeros(&[1]));
        let err = t.dense(x, w, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 1]"), "{msg}");
    }

    #[test]
    fn avg_pool_values_and_adjoint() {
        let mut t = Tape::new();
        let x = t.input(Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let p = t.global_avg_pool(x).unwrap();
        assert_eq!(t.value(p).data(), &[2.5]);
        let s = t.scale(p, 8.0);
        let s = t.sum(s);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0; 4]);
    }

    #[test]
    fn concat_values_and_split_gradient() {
        let mut t = Tape::new();
        let a = t.input(Tensor::vector(vec![1.0, 2.0]));
        let b = t.input(Tensor::vector(vec![3.0]));
        let c = t.concat(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0]);
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(g.get(b).unwrap().data(), &[1.0]);

        let e = t.input(Tensor::vector(vec![]));
        let f = t.input(Tensor::vector(vec![5.0]));
        let c = t.concat(e, f).unwrap();
        assert_eq!(t.value(c).data(), &[5.0]);
    }

    #[test]
    fn disconnected_parameter_gets_no_gradient() {
        let p1 = Parameter::new(Tensor::vector(vec![1.0, 2.0]));
        let mut p2 = Parameter::new(Tensor::vector(vec![3.0]));
        let mut t = Tape::new();
        let a = t.param(&p1);
        let _b = t.param(&p2);
        let s = t.sum_squares(a);
        let g = t.backward(s).unwrap();
        assert!(g.param(p2.id()).is_none());
        g.accumulate_into(&mut p2, 1.0);
        assert_eq!(p2.grad().data(), &[0.0]);
        assert_eq!(g.param(p1.id()).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn interval_log_prob_full_range_is_zero() {
        let mut t = Tape::new();
        let l = t.input(Tensor::vector(vec![0.3, -1.2, 2.0]));
        let v = t.interval_log_prob(l, 1, 4).unwrap();
        assert!(t.value(v).data()[0].abs() < 1e-15);
        assert!(t.interval_log_prob(l, 0, 2).is_err());
        assert!(t.interval_log_prob(l, 2, 5).is_err());
    }

    #[test]
    fn conv_rejects_even_kernel_and_empty_output() {
        let mut t = Tape::new();
        let x = t.input(Tensor::zeros(&[1, 2, 2, 2]));
        let w = t.input(Tensor::zeros(&[1, 1, 2, 2, 2]));
        let b = t.input(Tensor::zeros(&[1]));
        assert!(matches!(t.conv3d(x, w, b, 1, 0), Err(Error::Config(_))));
        let w = t.input(Tensor::zeros(&[1, 1, 3, 3, 3]));
        assert!(matches!(t.conv3d(x, w, b, 1, 0), Err(Error::Config(_))));
    }
}
