//! Learned ambient radiance and material fields, and the learned gamma.

use ndarray::{concatenate, s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{feature_width, ile_cov_grad, ile_into, positional_encode_tangent, MAX_LEVELS};
use crate::error::{Error, Result};
use crate::math::{LobeGaussian, Vec3};
use crate::nn::{sigmoid, softplus, Activation, Head, Mlp, MlpSpec, OutputActivation, ParamStore, Tape};

/// Emitted colour and density of one lobe segment.
///
/// Also used for gradients w.r.t. those quantities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RadianceSample {
    pub color: Vec3,
    pub sigma: f64,
}

/// A radiance field evaluated on Gaussian lobe segments.
///
/// `dirs[i]` is the travel direction of the ray that owns segment `i`.
pub trait AmbientField: Sync {
    type Tape: Send;

    fn eval(&self, params: &[f64], g: &[LobeGaussian], dirs: &[Vec3]) -> Result<(Vec<RadianceSample>, Self::Tape)>;

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// w.r.t. each segment's covariance diagonal.
    fn backward(&self, params: &[f64], tape: &Self::Tape, d: &[RadianceSample], grads: &mut [f64])
        -> Result<Vec<Vec3>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub ile_levels: usize,
    pub dir_levels: usize,
    pub ambient_width: usize,
    pub ambient_depth: usize,
    pub color_width: usize,
    pub material_levels: usize,
    pub material_width: usize,
    pub material_depth: usize,
    /// Hidden layer that re-reads the input; stored as `0` when absent.
    #[serde(with = "skip_layer")]
    pub material_skip: Option<usize>,
    pub init_seed: u64,
}

mod skip_layer {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(v.unwrap_or(0) as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        Ok(match Option::<usize>::deserialize(d)? {
            Some(0) | None => None,
            v => v,
        })
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            ile_levels: 16,
            dir_levels: 4,
            ambient_width: 256,
            ambient_depth: 8,
            color_width: 128,
            material_levels: 6,
            material_width: 512,
            material_depth: 8,
            material_skip: Some(4),
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, l) in [
            ("ile_levels", self.ile_levels),
            ("dir_levels", self.dir_levels),
            ("material_levels", self.material_levels),
        ] {
            if l == 0 || l > MAX_LEVELS {
                return Err(Error::Config(format!("{name} must be in 1..={MAX_LEVELS}, got {l}")));
            }
        }
        if self.ambient_width == 0 || self.ambient_depth == 0 || self.color_width == 0 {
            return Err(Error::Config("ambient network sizes must be positive".into()));
        }
        if self.material_width == 0 || self.material_depth == 0 {
            return Err(Error::Config("material network sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Density and colour network over ILE features. Density depends on the
/// position features only; colour also sees the encoded ray direction.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientNet {
    trunk: Mlp,
    color: Mlp,
    levels: usize,
    dir_levels: usize,
    feature: usize,
}

pub struct AmbientTape {
    feats: Array2<f64>,
    trunk: Tape,
    color: Tape,
}

impl AmbientNet {
    pub fn new(cfg: &ModelConfig, store: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        let w = cfg.ambient_width;
        let trunk = Mlp::new(
            MlpSpec {
                input_width: feature_width(cfg.ile_levels),
                hidden: vec![w; cfg.ambient_depth],
                activation: Activation::Relu,
                skip_at: None,
                heads: vec![
                    Head::new("sigma", 1, OutputActivation::Softplus),
                    Head::new("feature", w, OutputActivation::Identity),
                ],
            },
            store,
            &format!("{prefix}.trunk"),
            rng,
        )?;
        let color = Mlp::new(
            MlpSpec {
                input_width: w + feature_width(cfg.dir_levels),
                hidden: vec![cfg.color_width],
                activation: Activation::Relu,
                skip_at: None,
                heads: vec![Head::new("rgb", 3, OutputActivation::Softplus)],
            },
            store,
            &format!("{prefix}.color"),
            rng,
        )?;
        Ok(AmbientNet {
            trunk,
            color,
            levels: cfg.ile_levels,
            dir_levels: cfg.dir_levels,
            feature: w,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn param_range(&self) -> std::ops::Range<usize> {
        self.trunk.param_range().start..self.color.param_range().end
    }

    /// Evaluation on precomputed features (rows of `6L`) and direction features.
    pub fn eval_features(
        &self,
        params: &[f64],
        feats: Array2<f64>,
        dir_feats: &Array2<f64>,
    ) -> Result<(Vec<RadianceSample>, AmbientTape)> {
        let (trunk_out, trunk) = self.trunk.forward(params, &feats)?;
        let cin = concatenate(Axis(1), &[trunk_out.heads[1].view(), dir_feats.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        let (color_out, color) = self.color.forward(params, &cin)?;
        let rgb = &color_out.heads[0];
        let sigma = &trunk_out.heads[0];
        let samples = (0..feats.nrows())
            .map(|i| RadianceSample {
                color: Vec3::new(rgb[[i, 0]], rgb[[i, 1]], rgb[[i, 2]]),
                sigma: sigma[[i, 0]],
            })
            .collect();
        Ok((samples, AmbientTape { feats, trunk, color }))
    }

    /// Gradient w.r.t. the input features, parameter gradients accumulated.
    pub fn backward_features(
        &self,
        params: &[f64],
        tape: &AmbientTape,
        d: &[RadianceSample],
        grads: &mut [f64],
    ) -> Result<Array2<f64>> {
        let n = tape.feats.nrows();
        if d.len() != n {
            return Err(Error::Shape("one radiance gradient per segment expected".into()));
        }
        let d_rgb = Array2::from_shape_fn((n, 3), |(i, c)| d[i].color[c]);
        let d_cin = self.color.backward(params, &tape.color, &[d_rgb], None, grads)?;
        let d_feature = d_cin.slice(s![.., ..self.feature]).to_owned();
        let d_sigma = Array2::from_shape_fn((n, 1), |(i, _)| d[i].sigma);
        self.trunk
            .backward(params, &tape.trunk, &[d_sigma, d_feature], None, grads)
    }
}

fn encode_rows(g: &[LobeGaussian], levels: usize) -> Array2<f64> {
    let w = feature_width(levels);
    let mut feats = Array2::zeros((g.len(), w));
    for (row, gi) in feats.rows_mut().into_iter().zip(g) {
        ile_into(gi, levels, row.into_slice().expect("standard layout"));
    }
    feats
}

/// Direction features for each row; consecutive equal directions are encoded once.
fn encode_dirs(dirs: &[Vec3], levels: usize) -> Array2<f64> {
    let w = feature_width(levels);
    let mut out = Array2::zeros((dirs.len(), w));
    let mut last: Option<(Vec3, usize)> = None;
    for (i, d) in dirs.iter().enumerate() {
        match last {
            Some((prev, row)) if prev == *d => {
                let src = out.row(row).to_owned();
                out.row_mut(i).assign(&src);
            }
            _ => {
                ile_into(
                    &LobeGaussian::point(*d),
                    levels,
                    out.row_mut(i).into_slice().expect("standard layout"),
                );
                last = Some((*d, i));
            }
        }
    }
    out
}

impl AmbientField for AmbientNet {
    type Tape = AmbientTape;

    fn eval(&self, params: &[f64], g: &[LobeGaussian], dirs: &[Vec3]) -> Result<(Vec<RadianceSample>, AmbientTape)> {
        if g.len() != dirs.len() {
            return Err(Error::Shape("one direction per segment expected".into()));
        }
        self.eval_features(params, encode_rows(g, self.levels), &encode_dirs(dirs, self.dir_levels))
    }

    fn backward(
        &self,
        params: &[f64],
        tape: &AmbientTape,
        d: &[RadianceSample],
        grads: &mut [f64],
    ) -> Result<Vec<Vec3>> {
        let d_feats = self.backward_features(params, tape, d, grads)?;
        Ok((0..tape.feats.nrows())
            .map(|i| {
                ile_cov_grad(
                    tape.feats.row(i).as_slice().expect("standard layout"),
                    d_feats.row(i).as_slice().expect("standard layout"),
                    self.levels,
                )
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub rho: f64,
    pub diffuse: Vec3,
    pub alpha: f64,
}

impl Material {
    pub fn zero() -> Self {
        Material {
            rho: 0.0,
            diffuse: Vec3::ZERO,
            alpha: 0.0,
        }
    }

    pub fn in_range(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.rho) && unit(self.alpha) && self.diffuse.to_array().iter().all(|&c| unit(c))
    }

    /// Per-channel scale `(α, ρ, C_d)` clamped back into `[0, 1]`.
    pub fn scaled(&self, alpha: f64, rho: f64, diffuse: f64) -> Material {
        Material {
            rho: (self.rho * rho).clamp(0.0, 1.0),
            diffuse: (self.diffuse * diffuse).map(|c| c.clamp(0.0, 1.0)),
            alpha: (self.alpha * alpha).clamp(0.0, 1.0),
        }
    }
}

/// Spatial gradients `∇ρ` and `∇α` at one surface point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MaterialSpatialGrad {
    pub rho: Vec3,
    pub alpha: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialNet {
    mlp: Mlp,
    levels: usize,
}

pub struct MaterialTape {
    tape: Tape,
}

const RHO: usize = 0;
const DIFFUSE: usize = 1;
const ALPHA: usize = 2;

impl MaterialNet {
    pub fn new(cfg: &ModelConfig, store: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        let sig = OutputActivation::Sigmoid;
        let mlp = Mlp::new(
            MlpSpec {
                input_width: feature_width(cfg.material_levels),
                hidden: vec![cfg.material_width; cfg.material_depth],
                activation: Activation::Relu,
                skip_at: cfg.material_skip,
                heads: vec![
                    Head::new("rho", 1, sig),
                    Head::new("diffuse", 3, sig),
                    Head::new("alpha", 1, sig),
                ],
            },
            store,
            prefix,
            rng,
        )?;
        Ok(MaterialNet {
            mlp,
            levels: cfg.material_levels,
        })
    }

    pub fn param_range(&self) -> std::ops::Range<usize> {
        self.mlp.param_range()
    }

    fn inputs(&self, xs: &[Vec3]) -> Array2<f64> {
        encode_rows(
            &xs.iter().map(|&x| LobeGaussian::point(x)).collect::<Vec<_>>(),
            self.levels,
        )
    }

    fn collect(out: &[Array2<f64>], n: usize) -> Vec<Material> {
        (0..n)
            .map(|i| Material {
                rho: out[RHO][[i, 0]],
                diffuse: Vec3::new(out[DIFFUSE][[i, 0]], out[DIFFUSE][[i, 1]], out[DIFFUSE][[i, 2]]),
                alpha: out[ALPHA][[i, 0]],
            })
            .collect()
    }

    pub fn eval(&self, params: &[f64], xs: &[Vec3]) -> Result<(Vec<Material>, MaterialTape)> {
        let (out, tape) = self.mlp.forward(params, &self.inputs(xs))?;
        Ok((Self::collect(&out.heads, xs.len()), MaterialTape { tape }))
    }

    /// Like [`eval`](Self::eval), also returning `∇ρ` and `∇α` w.r.t. position.
    pub fn eval_with_spatial_grad(
        &self,
        params: &[f64],
        xs: &[Vec3],
    ) -> Result<(Vec<Material>, Vec<MaterialSpatialGrad>, MaterialTape)> {
        let x = self.inputs(xs);
        let w = x.ncols();
        let tangents: Vec<Array2<f64>> = (0..3)
            .map(|axis| {
                let mut t = Array2::zeros((xs.len(), w));
                for (row, p) in t.rows_mut().into_iter().zip(xs) {
                    positional_encode_tangent(*p, self.levels, axis, row.into_slice().expect("standard layout"));
                }
                t
            })
            .collect();
        let (out, tape) = self.mlp.forward_tangent(params, &x, &tangents)?;
        let grads = (0..xs.len())
            .map(|i| MaterialSpatialGrad {
                rho: Vec3::new(
                    out.tangents[0][RHO][[i, 0]],
                    out.tangents[1][RHO][[i, 0]],
                    out.tangents[2][RHO][[i, 0]],
                ),
                alpha: Vec3::new(
                    out.tangents[0][ALPHA][[i, 0]],
                    out.tangents[1][ALPHA][[i, 0]],
                    out.tangents[2][ALPHA][[i, 0]],
                ),
            })
            .collect();
        Ok((Self::collect(&out.heads, xs.len()), grads, MaterialTape { tape }))
    }

    /// `d` holds gradients w.r.t. each material; `d_spatial`, if the tape
    /// carries tangents, gradients w.r.t. `∇ρ` and `∇α`.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &MaterialTape,
        d: &[Material],
        d_spatial: Option<&[MaterialSpatialGrad]>,
        grads: &mut [f64],
    ) -> Result<()> {
        let n = tape.tape.batch();
        if d.len() != n {
            return Err(Error::Shape("one material gradient per point expected".into()));
        }
        let heads = vec![
            Array2::from_shape_fn((n, 1), |(i, _)| d[i].rho),
            Array2::from_shape_fn((n, 3), |(i, c)| d[i].diffuse[c]),
            Array2::from_shape_fn((n, 1), |(i, _)| d[i].alpha),
        ];
        let tangent_grads: Option<Vec<Vec<Array2<f64>>>> = match d_spatial {
            Some(ds) => {
                if ds.len() != n || tape.tape.num_tangents() != 3 {
                    return Err(Error::Shape("spatial gradients need a tangent tape".into()));
                }
                Some(
                    (0..3)
                        .map(|axis| {
                            vec![
                                Array2::from_shape_fn((n, 1), |(i, _)| ds[i].rho[axis]),
                                Array2::zeros((n, 3)),
                                Array2::from_shape_fn((n, 1), |(i, _)| ds[i].alpha[axis]),
                            ]
                        })
                        .collect(),
                )
            }
            None => None,
        };
        self.mlp
            .backward(params, &tape.tape, &heads, tangent_grads.as_deref(), grads)?;
        Ok(())
    }
}

/// Floor inside the power when differentiating `hdr^(1/γ)` near zero.
pub const HDR_EPS: f64 = 1e-6;

/// `min(hdr^(1/γ), 1)` per channel.
pub fn apply_gamma(hdr: Vec3, gamma: f64) -> Result<Vec3> {
    if !(hdr.min_component() >= 0.0) {
        return Err(Error::invalid(format!("gamma input must be non-negative, got {hdr:?}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    Ok(hdr.map(|v| v.powf(1.0 / gamma).min(1.0)))
}

/// Jacobian pieces of [`apply_gamma`]: per-channel `∂out/∂hdr` and `∂out/∂γ`.
/// Both vanish where the output is clamped at 1.
pub fn apply_gamma_grad(hdr: Vec3, gamma: f64) -> (Vec3, Vec3) {
    let inv = 1.0 / gamma;
    let mut dh = [0.0; 3];
    let mut dg = [0.0; 3];
    for c in 0..3 {
        let v = hdr[c].max(0.0);
        if v.powf(inv) >= 1.0 {
            continue;
        }
        let ve = v + HDR_EPS;
        let p = ve.powf(inv);
        dh[c] = inv * p / ve;
        dg[c] = -p * ve.ln() * inv * inv;
    }
    (Vec3::from_array(dh), Vec3::from_array(dg))
}

/// `γ = softplus(raw)`; `raw` initialised so that `γ = 1`.
pub fn gamma_from_raw(raw: f64) -> f64 {
    softplus(raw)
}

pub fn gamma_raw_for(gamma: f64) -> f64 {
    // inverse softplus
    gamma + (-(-gamma).exp_m1()).ln()
}

pub fn gamma_raw_derivative(raw: f64) -> f64 {
    sigmoid(raw)
}

/// All learned state: coarse and fine ambient networks, the material
/// network and the gamma parameter, packed into one store.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub coarse: AmbientNet,
    pub fine: AmbientNet,
    pub material: MaterialNet,
    gamma_index: usize,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let coarse = AmbientNet::new(&config, &mut store, "ambient_coarse", &mut rng)?;
        let fine = AmbientNet::new(&config, &mut store, "ambient_fine", &mut rng)?;
        let material = MaterialNet::new(&config, &mut store, "material", &mut rng)?;
        let raw = gamma_raw_for(1.0);
        let gamma_index = store.add("gamma.raw", &[1], || raw)?;
        Ok(Model {
            config,
            store,
            coarse,
            fine,
            material,
            gamma_index,
        })
    }

    pub fn ambient(&self, level: Level) -> &AmbientNet {
        match level {
            Level::Coarse => &self.coarse,
            Level::Fine => &self.fine,
        }
    }

    pub fn params(&self) -> &[f64] {
        self.store.values()
    }

    pub fn gamma_index(&self) -> usize {
        self.gamma_index
    }

    pub fn gamma(&self) -> f64 {
        gamma_from_raw(self.store.values()[self.gamma_index])
    }

    pub fn gamma_of(&self, params: &[f64]) -> f64 {
        gamma_from_raw(params[self.gamma_index])
    }

    pub fn set_gamma(&mut self, gamma: f64) {
        let i = self.gamma_index;
        self.store.values_mut()[i] = gamma_raw_for(gamma);
    }
}
