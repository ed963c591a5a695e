use ndarray::Array2;
use neai::encoding::{feature_width, ile_into, positional_encode};
use neai::math::{LobeGaussian, Vec3};
use neai::nn::{Activation, Head, Mlp, MlpSpec, OutputActivation, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Case {
    mlp: Mlp,
    params: Vec<f64>,
    x: Array2<f64>,
    weights: Vec<Array2<f64>>,
}

impl Case {
    fn objective(&self, params: &[f64]) -> f64 {
        let (out, _) = self.mlp.forward(params, &self.x).unwrap();
        out.heads.iter().zip(&self.weights).map(|(h, w)| (h * w).sum()).sum()
    }

    fn check(&self, coords: usize, seed: u64) {
        let (_, tape) = self.mlp.forward(&self.params, &self.x).unwrap();
        let mut grads = vec![0.0; self.params.len()];
        self.mlp
            .backward(&self.params, &tape, &self.weights, None, &mut grads)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-4;
        for _ in 0..coords {
            let i = rng.random_range(self.mlp.param_range());
            let mut p = self.params.clone();
            p[i] += h;
            let up = self.objective(&p);
            p[i] -= 2.0 * h;
            let down = self.objective(&p);
            let fd = (up - down) / (2.0 * h);
            let scale = fd.abs().max(grads[i].abs()).max(1e-6);
            let rel = (fd - grads[i]).abs() / scale;
            assert!(rel <= 1e-4, "param {i}: backward {} vs fd {fd}", grads[i]);
        }
    }
}

fn build(spec: MlpSpec, rows: Vec<Vec<f64>>, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(spec, &mut store, "net", &mut rng).unwrap();
    let width = rows[0].len();
    let x = Array2::from_shape_fn((rows.len(), width), |(r, c)| rows[r][c]);
    let weights = mlp
        .spec()
        .heads
        .iter()
        .map(|h| Array2::from_shape_fn((rows.len(), h.width), |_| rng.random_range(-1.0..1.0)))
        .collect();
    Case {
        params: store.values().to_vec(),
        mlp,
        x,
        weights,
    }
}

#[test]
fn ambient_shape_gradients_with_lobe_features() {
    let levels = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let rows = (0..3)
        .map(|_| {
            let g = LobeGaussian {
                mean: Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
                cov_diag: Vec3::splat(rng.random_range(1e-5..1e-2)),
            };
            let mut f = vec![0.0; feature_width(levels)];
            ile_into(&g, levels, &mut f);
            f
        })
        .collect();
    let spec = MlpSpec {
        input_width: feature_width(levels),
        hidden: vec![256; 8],
        activation: Activation::Relu,
        skip_at: None,
        heads: vec![
            Head::new("sigma", 1, OutputActivation::Softplus),
            Head::new("feature", 256, OutputActivation::Identity),
        ],
    };
    build(spec, rows, 5).check(24, 1);
}

#[test]
fn material_shape_gradients_with_skip() {
    let levels = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let rows = (0..3)
        .map(|_| {
            let x = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            positional_encode(x, levels).unwrap().0
        })
        .collect();
    let sig = OutputActivation::Sigmoid;
    let spec = MlpSpec {
        input_width: feature_width(levels),
        hidden: vec![512; 8],
        activation: Activation::Relu,
        skip_at: Some(4),
        heads: vec![
            Head::new("rho", 1, sig),
            Head::new("diffuse", 3, sig),
            Head::new("alpha", 1, sig),
        ],
    };
    build(spec, rows, 6).check(24, 2);
}

#[test]
fn forward_is_bitwise_deterministic() {
    let spec = || MlpSpec {
        input_width: 4,
        hidden: vec![16; 3],
        activation: Activation::Relu,
        skip_at: Some(1),
        heads: vec![Head::new("out", 2, OutputActivation::Sigmoid)],
    };
    let rows = vec![vec![0.1, -0.4, 0.9, 0.3], vec![0.5, 0.5, -0.2, 0.0]];
    let (a, b) = (build(spec(), rows.clone(), 9), build(spec(), rows, 9));
    assert_eq!(a.params, b.params);
    let (oa, _) = a.mlp.forward(&a.params, &a.x).unwrap();
    let (ob, _) = b.mlp.forward(&b.params, &b.x).unwrap();
    assert_eq!(oa.heads, ob.heads);
}
