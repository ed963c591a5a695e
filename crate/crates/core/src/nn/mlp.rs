use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
    Tanh,
    Softplus,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

impl OutputActivation {
    /// Value, first and second derivative at `z`.
    #[inline]
    pub fn eval(self, z: f64) -> (f64, f64, f64) {
        match self {
            OutputActivation::Identity => (z, 1.0, 0.0),
            OutputActivation::Sigmoid => {
                let s = sigmoid(z);
                let d = s * (1.0 - s);
                (s, d, d * (1.0 - 2.0 * s))
            }
            OutputActivation::Tanh => {
                let t = z.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            OutputActivation::Softplus => {
                let s = sigmoid(z);
                (softplus(z), s, s * (1.0 - s))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Head {
    pub name: String,
    pub width: usize,
    pub activation: OutputActivation,
}

impl Head {
    pub fn new(name: impl Into<String>, width: usize, activation: OutputActivation) -> Self {
        Head {
            name: name.into(),
            width,
            activation,
        }
    }
}

/// Fully connected network: `hidden.len()` ReLU layers followed by one
/// linear layer whose outputs are split into named heads. With `skip_at =
/// Some(k)` the network input is concatenated onto the input of hidden
/// layer `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_width: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub skip_at: Option<usize>,
    pub heads: Vec<Head>,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 {
            return Err(Error::invalid("mlp input width must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        if let Some(k) = self.skip_at {
            if k == 0 || k >= self.hidden.len() {
                return Err(Error::invalid(format!(
                    "skip_at={k} must lie strictly inside 1..{}",
                    self.hidden.len()
                )));
            }
        }
        if self.heads.is_empty() || self.heads.iter().any(|h| h.width == 0) {
            return Err(Error::invalid("mlp needs at least one head of positive width"));
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        self.heads.iter().map(|h| h.width).sum()
    }

    fn layer_fan_in(&self, k: usize) -> usize {
        let prev = if k == 0 { self.input_width } else { self.hidden[k - 1] };
        if self.skip_at == Some(k) {
            prev + self.input_width
        } else {
            prev
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Linear {
    weight: usize,
    bias: usize,
    fan_in: usize,
    fan_out: usize,
}

impl Linear {
    fn weight<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape(
            (self.fan_out, self.fan_in),
            &params[self.weight..self.weight + self.fan_out * self.fan_in],
        )
        .expect("weight slice matches layout")
    }

    fn bias<'a>(&self, params: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&params[self.bias..self.bias + self.fan_out])
    }

    fn apply(&self, params: &[f64], input: &Array2<f64>) -> Array2<f64> {
        let mut z = input.dot(&self.weight(params).t());
        z += &self.bias(params);
        z
    }

    fn apply_no_bias(&self, params: &[f64], input: &Array2<f64>) -> Array2<f64> {
        input.dot(&self.weight(params).t())
    }

    fn grad_views<'a>(&self, grads: &'a mut [f64]) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        // weight and bias are registered back to back
        debug_assert_eq!(self.bias, self.weight + self.fan_out * self.fan_in);
        let (w, rest) = grads[self.weight..].split_at_mut(self.fan_out * self.fan_in);
        (
            ArrayViewMut2::from_shape((self.fan_out, self.fan_in), w).expect("grad layout"),
            ArrayViewMut1::from(&mut rest[..self.fan_out]),
        )
    }
}

/// Recorded activations of one forward evaluation.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    /// Input to every linear layer (after skip concatenation), output layer last.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of the output layer.
    out_pre: Array2<f64>,
    /// `tangent_inputs[k][j]`: tangent `j` of `inputs[k]`.
    tangent_inputs: Vec<Vec<Array2<f64>>>,
    out_tangent_pre: Vec<Array2<f64>>,
    param_len: usize,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn num_tangents(&self) -> usize {
        self.out_tangent_pre.len()
    }
}

#[derive(Debug, Clone)]
pub struct MlpOutput {
    /// Activated head outputs, one `batch × width` matrix per head.
    pub heads: Vec<Array2<f64>>,
    /// `tangents[j][h]`: directional derivative of head `h` along input tangent `j`.
    pub tangents: Vec<Vec<Array2<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Linear>,
    head_cols: Vec<(usize, usize)>,
}

impl Mlp {
    /// Registers weights `{prefix}.l{k}.weight` / `.bias` in `store`.
    pub fn new<R: Rng>(spec: MlpSpec, store: &mut ParamStore, prefix: &str, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.hidden.len() + 1);
        for k in 0..=spec.hidden.len() {
            let fan_in = spec.layer_fan_in(k);
            let fan_out = if k == spec.hidden.len() {
                spec.output_width()
            } else {
                spec.hidden[k]
            };
            let weight = store.add_uniform(format!("{prefix}.l{k}.weight"), &[fan_out, fan_in], fan_in, rng)?;
            let bias = store.add_uniform(format!("{prefix}.l{k}.bias"), &[fan_out], fan_in, rng)?;
            layers.push(Linear {
                weight,
                bias,
                fan_in,
                fan_out,
            });
        }
        let mut head_cols = Vec::new();
        let mut start = 0;
        for h in &spec.heads {
            head_cols.push((start, h.width));
            start += h.width;
        }
        Ok(Mlp {
            spec,
            layers,
            head_cols,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.spec.heads.iter().position(|h| h.name == name)
    }

    /// Flat range of all parameters owned by this network.
    pub fn param_range(&self) -> std::ops::Range<usize> {
        let first = self.layers.first().expect("at least one layer");
        let last = self.layers.last().expect("at least one layer");
        first.weight..last.bias + last.fan_out
    }

    fn check_input(&self, params: &[f64], x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.spec.input_width {
            return Err(Error::invalid(format!(
                "mlp input width {} does not match spec width {}",
                x.ncols(),
                self.spec.input_width
            )));
        }
        if params.len() < self.param_range().end {
            return Err(Error::Shape("parameter buffer too short for network".into()));
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], x: &Array2<f64>) -> Result<(MlpOutput, Tape)> {
        self.forward_tangent(params, x, &[])
    }

    /// Forward pass that also pushes input tangents `dx` through the network.
    pub fn forward_tangent(&self, params: &[f64], x: &Array2<f64>, dx: &[Array2<f64>]) -> Result<(MlpOutput, Tape)> {
        self.check_input(params, x)?;
        if dx.iter().any(|t| t.dim() != x.dim()) {
            return Err(Error::invalid("input tangents must match the input shape"));
        }
        let n_hidden = self.spec.hidden.len();
        let mut inputs = Vec::with_capacity(n_hidden + 1);
        let mut tangent_inputs = Vec::with_capacity(n_hidden + 1);
        let mut act = x.clone();
        let mut act_t: Vec<Array2<f64>> = dx.to_vec();
        for (k, layer) in self.layers.iter().enumerate().take(n_hidden) {
            let (inp, inp_t) = if self.spec.skip_at == Some(k) {
                let joined = concatenate(Axis(1), &[act.view(), x.view()]).expect("same rows");
                let joined_t: Vec<_> = act_t
                    .iter()
                    .zip(dx)
                    .map(|(a, d)| concatenate(Axis(1), &[a.view(), d.view()]).expect("same rows"))
                    .collect();
                (joined, joined_t)
            } else {
                (act, act_t)
            };
            let mut z = layer.apply(params, &inp);
            let mut zt: Vec<Array2<f64>> = inp_t.iter().map(|t| layer.apply_no_bias(params, t)).collect();
            z.mapv_inplace(|v| v.max(0.0));
            for t in zt.iter_mut() {
                ndarray::Zip::from(t).and(&z).for_each(|tv, &zv| {
                    if zv <= 0.0 {
                        *tv = 0.0;
                    }
                });
            }
            inputs.push(inp);
            tangent_inputs.push(inp_t);
            act = z;
            act_t = zt;
        }
        let out_layer = &self.layers[n_hidden];
        let out_pre = out_layer.apply(params, &act);
        let out_tangent_pre: Vec<Array2<f64>> = act_t.iter().map(|t| out_layer.apply_no_bias(params, t)).collect();
        inputs.push(act);
        tangent_inputs.push(act_t);

        let mut heads = Vec::with_capacity(self.spec.heads.len());
        let mut tangents = vec![Vec::with_capacity(self.spec.heads.len()); dx.len()];
        for (h, &(start, width)) in self.spec.heads.iter().zip(&self.head_cols) {
            let pre = out_pre.slice(s![.., start..start + width]);
            heads.push(pre.mapv(|z| h.activation.eval(z).0));
            for (j, zt) in out_tangent_pre.iter().enumerate() {
                let mut t = zt.slice(s![.., start..start + width]).to_owned();
                ndarray::Zip::from(&mut t)
                    .and(&pre)
                    .for_each(|tv, &z| *tv *= h.activation.eval(z).1);
                tangents[j].push(t);
            }
        }
        let tape = Tape {
            batch: x.nrows(),
            inputs,
            out_pre,
            tangent_inputs,
            out_tangent_pre,
            param_len: params.len(),
        };
        Ok((MlpOutput { heads, tangents }, tape))
    }

    /// Reverse pass. `d_heads[h]` is the gradient w.r.t. activated head `h`;
    /// `d_tangents[j][h]` (optional) the gradient w.r.t. its tangent `j`.
    /// Parameter gradients are accumulated into `grads`; the gradient
    /// w.r.t. the network input is returned.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &Tape,
        d_heads: &[Array2<f64>],
        d_tangents: Option<&[Vec<Array2<f64>>]>,
        grads: &mut [f64],
    ) -> Result<Array2<f64>> {
        if tape.param_len != params.len() || grads.len() != params.len() {
            return Err(Error::Shape("tape, parameter and gradient buffers disagree".into()));
        }
        if d_heads.len() != self.spec.heads.len() {
            return Err(Error::Shape("one output gradient per head expected".into()));
        }
        let n_t = tape.num_tangents();
        if let Some(dt) = d_tangents {
            if dt.len() != n_t {
                return Err(Error::Shape("tangent gradient count does not match tape".into()));
            }
        }
        let batch = tape.batch;
        let out_w = self.spec.output_width();
        let mut gz = Array2::<f64>::zeros((batch, out_w));
        let mut gzt: Vec<Array2<f64>> = (0..n_t).map(|_| Array2::zeros((batch, out_w))).collect();
        for (h, (head, &(start, width))) in self.spec.heads.iter().zip(&self.head_cols).enumerate() {
            if d_heads[h].dim() != (batch, width) {
                return Err(Error::Shape(format!("gradient for head {} has wrong shape", head.name)));
            }
            for r in 0..batch {
                for c in 0..width {
                    let z = tape.out_pre[[r, start + c]];
                    let (_, d1, d2) = head.activation.eval(z);
                    let mut g = d_heads[h][[r, c]] * d1;
                    if let Some(dt) = d_tangents {
                        for j in 0..n_t {
                            let gt = dt[j][h][[r, c]];
                            if gt != 0.0 {
                                g += gt * d2 * tape.out_tangent_pre[j][[r, start + c]];
                                gzt[j][[r, start + c]] = gt * d1;
                            }
                        }
                    }
                    gz[[r, start + c]] = g;
                }
            }
        }

        let n_hidden = self.spec.hidden.len();
        let mut d_input = Array2::<f64>::zeros((batch, self.spec.input_width));
        for k in (0..=n_hidden).rev() {
            let layer = &self.layers[k];
            let inp = &tape.inputs[k];
            {
                let (mut gw, mut gb) = layer.grad_views(grads);
                gw += &gz.t().dot(inp);
                for (j, t) in gzt.iter().enumerate() {
                    gw += &t.t().dot(&tape.tangent_inputs[k][j]);
                }
                gb += &gz.sum_axis(Axis(0));
            }
            let w = layer.weight(params);
            let mut g_in = gz.dot(&w);
            let mut g_in_t: Vec<Array2<f64>> = gzt.iter().map(|t| t.dot(&w)).collect();
            if self.spec.skip_at == Some(k) {
                let prev_w = g_in.ncols() - self.spec.input_width;
                d_input += &g_in.slice(s![.., prev_w..]);
                g_in = g_in.slice(s![.., ..prev_w]).to_owned();
                g_in_t = g_in_t
                    .into_iter()
                    .map(|t| t.slice(s![.., ..prev_w]).to_owned())
                    .collect();
            }
            if k == 0 {
                d_input += &g_in;
                break;
            }
            // through the ReLU of hidden layer k-1, whose output feeds inputs[k]
            let act = tape.inputs[k].slice(s![.., ..self.spec.hidden[k - 1]]);
            ndarray::Zip::from(&mut g_in).and(&act).for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            for t in g_in_t.iter_mut() {
                ndarray::Zip::from(t).and(&act).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            gz = g_in;
            gzt = g_in_t;
        }
        Ok(d_input)
    }

    /// Single-input convenience returning `(head name, values)` pairs.
    pub fn forward_single(&self, params: &[f64], input: &[f64]) -> Result<Vec<(String, Vec<f64>)>> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).map_err(|e| Error::Shape(e.to_string()))?;
        let (out, _) = self.forward(params, &x)?;
        Ok(self
            .spec
            .heads
            .iter()
            .zip(out.heads)
            .map(|(h, v)| (h.name.clone(), v.row(0).to_vec()))
            .collect())
    }
}

/// Row-major matrix from a slice of equally sized rows.
pub fn rows_to_array(rows: &[Vec<f64>], width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), width));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&Array1::from(r.clone()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec(skip: Option<usize>, act: OutputActivation) -> MlpSpec {
        MlpSpec {
            input_width: 4,
            hidden: vec![6, 5, 7],
            activation: Activation::Relu,
            skip_at: skip,
            heads: vec![Head::new("a", 2, act), Head::new("b", 1, OutputActivation::Sigmoid)],
        }
    }

    #[test]
    fn zero_network_sigmoid_is_half() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = small_spec(Some(1), OutputActivation::Sigmoid);
        let mlp = Mlp::new(spec, &mut store, "net", &mut rng).unwrap();
        store.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let out = mlp.forward_single(store.values(), &[0.3, -1.0, 2.0, 0.1]).unwrap();
        for (_, vals) in out {
            assert!(vals.iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = MlpSpec {
            input_width: 2,
            hidden: vec![],
            activation: Activation::Relu,
            skip_at: None,
            heads: vec![Head::new("y", 2, OutputActivation::Identity)],
        };
        let mlp = Mlp::new(spec, &mut store, "lin", &mut rng).unwrap();
        store
            .set_tensor("lin.l0.weight", &[2, 2], &[1.0, 2.0, 3.0, 4.0])
            .unwrap();
        store.set_tensor("lin.l0.bias", &[2], &[0.5, -0.5]).unwrap();
        let out = mlp.forward_single(store.values(), &[1.0, -1.0]).unwrap();
        assert_eq!(out[0].1, vec![1.0 - 2.0 + 0.5, 3.0 - 4.0 - 0.5]);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(small_spec(None, OutputActivation::Identity), &mut store, "n", &mut rng).unwrap();
        assert!(matches!(
            mlp.forward_single(store.values(), &[1.0, 2.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn skip_must_be_interior() {
        let mut spec = small_spec(Some(0), OutputActivation::Identity);
        assert!(spec.validate().is_err());
        spec.skip_at = Some(3);
        assert!(spec.validate().is_err());
        spec.skip_at = Some(2);
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn head_ranges() {
        for act in [
            OutputActivation::Sigmoid,
            OutputActivation::Softplus,
            OutputActivation::Tanh,
        ] {
            for seed in 0..20 {
                let mut store = ParamStore::new();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mlp = Mlp::new(small_spec(Some(2), act), &mut store, "n", &mut rng).unwrap();
                // blow weights up so activations saturate
                store.values_mut().iter_mut().for_each(|v| *v *= 25.0);
                let x = Array2::from_shape_fn((16, 4), |(i, j)| ((i * 5 + j * 3) % 7) as f64 - 3.0);
                let (out, _) = mlp.forward(store.values(), &x).unwrap();
                for &v in out.heads[0].iter() {
                    match act {
                        OutputActivation::Sigmoid => assert!((0.0..=1.0).contains(&v)),
                        OutputActivation::Softplus => assert!(v >= 0.0),
                        OutputActivation::Tanh => assert!((-1.0..=1.0).contains(&v)),
                        OutputActivation::Identity => {}
                    }
                }
            }
        }
    }

    #[test]
    fn tangents_match_finite_differences_of_outputs() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mlp = Mlp::new(small_spec(Some(1), OutputActivation::Tanh), &mut store, "n", &mut rng).unwrap();
        let x = Array2::from_shape_vec((1, 4), vec![0.3, -0.2, 0.5, 0.9]).unwrap();
        let dir = Array2::from_shape_vec((1, 4), vec![0.1, 0.4, -0.3, 0.2]).unwrap();
        let (out, _) = mlp
            .forward_tangent(store.values(), &x, std::slice::from_ref(&dir))
            .unwrap();
        let h = 1e-6;
        let (plus, _) = mlp.forward(store.values(), &(&x + &(&dir * h))).unwrap();
        let (minus, _) = mlp.forward(store.values(), &(&x - &(&dir * h))).unwrap();
        for head in 0..2 {
            for c in 0..out.heads[head].ncols() {
                let fd = (plus.heads[head][[0, c]] - minus.heads[head][[0, c]]) / (2.0 * h);
                let an = out.tangents[0][head][[0, c]];
                assert!((fd - an).abs() < 1e-7, "head {head} col {c}: {fd} vs {an}");
            }
        }
    }

    fn objective(
        mlp: &Mlp,
        params: &[f64],
        x: &Array2<f64>,
        dx: &[Array2<f64>],
        w: &[Array2<f64>],
        wt: &[Vec<Array2<f64>>],
    ) -> f64 {
        let (out, _) = mlp.forward_tangent(params, x, dx).unwrap();
        let mut total = 0.0;
        for (h, y) in out.heads.iter().enumerate() {
            total += (y * &w[h]).sum();
        }
        for (j, ts) in out.tangents.iter().enumerate() {
            for (h, t) in ts.iter().enumerate() {
                total += (t * &wt[j][h]).sum();
            }
        }
        total
    }

    #[test]
    fn backward_matches_finite_differences_with_tangents() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mlp = Mlp::new(
            small_spec(Some(2), OutputActivation::Softplus),
            &mut store,
            "n",
            &mut rng,
        )
        .unwrap();
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 * 0.7 - j as f64 * 0.3).sin());
        let dx: Vec<Array2<f64>> = (0..2)
            .map(|k| Array2::from_shape_fn((3, 4), |(i, j)| ((i + 2 * j + k) as f64).cos()))
            .collect();
        let w: Vec<Array2<f64>> = vec![
            Array2::from_shape_fn((3, 2), |(i, j)| 0.3 + (i * j) as f64 * 0.1),
            Array2::from_shape_fn((3, 1), |(i, _)| -0.5 + i as f64 * 0.2),
        ];
        let wt: Vec<Vec<Array2<f64>>> = (0..2)
            .map(|k| {
                vec![
                    Array2::from_shape_fn((3, 2), |(i, j)| ((i + j + k) as f64 * 0.37).sin()),
                    Array2::from_shape_fn((3, 1), |(i, _)| ((i + k) as f64 * 0.91).cos()),
                ]
            })
            .collect();
        let params = store.values().to_vec();
        let (_, tape) = mlp.forward_tangent(&params, &x, &dx).unwrap();
        let mut grads = vec![0.0; params.len()];
        let d_in = mlp.backward(&params, &tape, &w, Some(&wt), &mut grads).unwrap();

        let h = 1e-5;
        for idx in (0..params.len()).step_by(3) {
            let mut p = params.clone();
            p[idx] += h;
            let fp = objective(&mlp, &p, &x, &dx, &w, &wt);
            p[idx] -= 2.0 * h;
            let fm = objective(&mlp, &p, &x, &dx, &w, &wt);
            let fd = (fp - fm) / (2.0 * h);
            let denom = fd.abs().max(grads[idx].abs()).max(1e-6);
            assert!(
                (fd - grads[idx]).abs() / denom < 1e-4,
                "param {idx}: fd {fd} vs {}",
                grads[idx]
            );
        }
        // input gradient of the plain outputs
        let (_, tape) = mlp.forward(&params, &x).unwrap();
        let mut g2 = vec![0.0; params.len()];
        let d_in_plain = mlp.backward(&params, &tape, &w, None, &mut g2).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let fp = objective(&mlp, &params, &xp, &[], &w, &[]);
                xp[[r, c]] -= 2.0 * h;
                let fm = objective(&mlp, &params, &xp, &[], &w, &[]);
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - d_in_plain[[r, c]]).abs() < 1e-6, "input ({r},{c})");
            }
        }
        assert_eq!(d_in.dim(), (3, 4));
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mlp = Mlp::new(small_spec(None, OutputActivation::Identity), &mut store, "n", &mut rng).unwrap();
        let x = Array2::from_elem((2, 4), 0.5);
        let (_, tape) = mlp.forward(store.values(), &x).unwrap();
        let zeros = vec![Array2::zeros((2, 2)), Array2::zeros((2, 1))];
        let mut grads = vec![0.0; store.len()];
        mlp.backward(store.values(), &tape, &zeros, None, &mut grads).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));
    }
}
