//! MLP encoders: the query/key feature encoders and the two projection
//! heads, plus JSON checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{softmax_rows, Matrix, Rng, Tape, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

/// Layer widths from input to output. The activation is applied between
/// layers, never after the last one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>) -> Result<Self> {
        let spec = Self {
            layer_widths,
            activation: Activation::Relu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 || self.layer_widths.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "MLP needs at least two positive widths, got {:?}",
                self.layer_widths
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }
}

/// `x W + b` with W stored input x output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub activation: Activation,
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Glorot-uniform weights in +/- sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn init(spec: &MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| limit * (2.0 * rng.uniform() - 1.0))
                    .collect();
                Ok(Dense {
                    weight: Matrix::new(fan_in, fan_out, data)?,
                    bias: Matrix::zeros(1, fan_out),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            activation: spec.activation,
            layers,
        })
    }

    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| Dense {
                weight: Matrix::zeros(w[0], w[1]),
                bias: Matrix::zeros(1, w[1]),
            })
            .collect();
        Ok(Self {
            activation: spec.activation,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    /// Weights and biases in layer order: w0, b0, w1, b1, ...
    pub fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|m| m.rows() * m.cols()).sum()
    }

    fn shapes_match(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .params()
                .iter()
                .zip(other.params())
                .all(|(a, b)| a.shape() == b.shape())
    }

    fn activate(&self, m: Matrix) -> Matrix {
        match self.activation {
            Activation::Relu => m.map(|v| v.max(0.0)),
            Activation::Identity => m,
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.matmul(&layer.weight)?.add_row(&layer.bias)?;
            if i < last {
                h = self.activate(h);
            }
        }
        Ok(h)
    }

    /// Records every parameter as a tape leaf, in [`Mlp::params`] order.
    pub fn register(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.params().into_iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Forward pass on the tape using previously registered parameters.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameter handles for {} layers",
                params.len(),
                self.layers.len()
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for i in 0..self.layers.len() {
            h = tape.matmul(h, params[2 * i])?;
            h = tape.add_row(h, params[2 * i + 1])?;
            if i < last && self.activation == Activation::Relu {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// Query and key feature encoders. The key encoder only ever changes by
/// [`EncoderPair::momentum_update`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderPair {
    pub query: Mlp,
    pub key: Mlp,
    pub momentum: f64,
}

impl EncoderPair {
    /// Key starts as an exact copy of the query.
    pub fn new(query: Mlp, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!("momentum={momentum} must be in [0, 1]")));
        }
        Ok(Self {
            key: query.clone(),
            query,
            momentum,
        })
    }

    /// `key = m key + (1 - m) query`, elementwise.
    pub fn momentum_update(&mut self) -> Result<()> {
        if !self.query.shapes_match(&self.key) {
            return Err(Error::InvalidArgument("query and key encoders differ in shape".into()));
        }
        let m = self.momentum;
        let q = self.query.params();
        for (k, q) in self.key.params_mut().into_iter().zip(q) {
            for (kv, qv) in k.data_mut().iter_mut().zip(q.data()) {
                // Equal entries stay put; the blend could move them by an ulp.
                if *kv != *qv {
                    *kv = m * *kv + (1.0 - m) * qv;
                }
            }
        }
        Ok(())
    }

    pub fn forward_features(&self, x: &Matrix) -> Result<Matrix> {
        self.query.forward(x)
    }
}

/// Instance projection (unnormalized) and cluster head (softmax over K).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heads {
    pub instance: Mlp,
    pub cluster: Mlp,
}

impl Heads {
    pub fn project_instance(&self, h: &Matrix) -> Result<Matrix> {
        self.instance.forward(h)
    }

    pub fn project_cluster(&self, h: &Matrix) -> Result<Matrix> {
        Ok(softmax_rows(&self.cluster.forward(h)?))
    }

    pub fn k(&self) -> usize {
        self.cluster.output_dim()
    }
}

/// Architecture widths for the encoder and both heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden widths of the feature encoder; the input width is G.
    pub encoder_hidden: Vec<usize>,
    /// Feature width P.
    pub feature_dim: usize,
    pub instance_hidden: Vec<usize>,
    pub instance_dim: usize,
    pub cluster_hidden: Vec<usize>,
    pub momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![256],
            feature_dim: 64,
            instance_hidden: vec![64],
            instance_dim: 32,
            cluster_hidden: vec![],
            momentum: 0.99,
        }
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

impl ModelConfig {
    pub fn encoder_spec(&self, n_genes: usize) -> Result<MlpSpec> {
        MlpSpec::new(widths(n_genes, &self.encoder_hidden, self.feature_dim))
    }

    pub fn instance_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(widths(self.feature_dim, &self.instance_hidden, self.instance_dim))
    }

    pub fn cluster_spec(&self, k: usize) -> Result<MlpSpec> {
        MlpSpec::new(widths(self.feature_dim, &self.cluster_hidden, k))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub encoder: EncoderPair,
    pub heads: Heads,
}

impl Model {
    /// Encoder, instance head and cluster head draw from separate streams.
    pub fn init(cfg: &ModelConfig, n_genes: usize, k: usize, rng: &Rng) -> Result<Self> {
        let query = Mlp::init(&cfg.encoder_spec(n_genes)?, &mut rng.derive(0))?;
        let instance = Mlp::init(&cfg.instance_spec()?, &mut rng.derive(1))?;
        let cluster = Mlp::init(&cfg.cluster_spec(k)?, &mut rng.derive(2))?;
        Ok(Self {
            encoder: EncoderPair::new(query, cfg.momentum)?,
            heads: Heads { instance, cluster },
        })
    }

    pub fn n_genes(&self) -> usize {
        self.encoder.query.input_dim()
    }

    pub fn k(&self) -> usize {
        self.heads.k()
    }

    /// Features, instance embeddings and cluster probabilities for `x`.
    pub fn embed(&self, x: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
        let h = self.encoder.forward_features(x)?;
        let z = self.heads.project_instance(&h)?;
        let y = self.heads.project_cluster(&h)?;
        Ok((h, z, y))
    }
}

/// Trained model plus the metadata needed to apply it to new data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub epoch: usize,
    pub gene_ids: Vec<String>,
    pub model: Model,
}

impl Checkpoint {
    pub const FORMAT: &'static str = "shrinkcl-checkpoint";
    pub const VERSION: u32 = 1;

    pub fn new(model: Model, epoch: usize, gene_ids: Vec<String>) -> Self {
        Self {
            format: Self::FORMAT.into(),
            version: Self::VERSION,
            epoch,
            gene_ids,
            model,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: not a valid checkpoint: {e}", path.display())))?;
        if ck.format != Self::FORMAT || ck.version != Self::VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        let m = &ck.model;
        if !m.encoder.query.shapes_match(&m.encoder.key) || m.heads.instance.input_dim() != m.encoder.query.output_dim() {
            return Err(Error::Format(format!("{}: inconsistent layer shapes", path.display())));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::gaussian_sample;
    use proptest::prelude::{any, prop_assert, proptest};

    fn mlp(weights: &[Vec<Vec<f64>>], biases: &[Vec<f64>]) -> Mlp {
        Mlp {
            activation: Activation::Relu,
            layers: weights
                .iter()
                .zip(biases)
                .map(|(w, b)| Dense {
                    weight: Matrix::from_rows(w).unwrap(),
                    bias: Matrix::row_vector(b.clone()),
                })
                .collect(),
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = Mlp::zeros(&MlpSpec::new(vec![4, 3, 2]).unwrap()).unwrap();
        let x = gaussian_sample(&mut Rng::new(1), 5, 4, 0.0, 1.0).unwrap();
        assert_eq!(m.forward(&x).unwrap(), Matrix::zeros(5, 2));
    }

    #[test]
    fn identity_layer() {
        let mut m = Mlp::zeros(&MlpSpec::new(vec![3, 3]).unwrap()).unwrap();
        m.layers[0].weight = Matrix::identity(3);
        let x = gaussian_sample(&mut Rng::new(2), 4, 3, 0.0, 1.0).unwrap();
        assert_eq!(m.forward(&x).unwrap(), x);
    }

    #[test]
    fn hand_computed_two_layer_net() {
        // Layer 1: [[1,-1],[2,0]] + (0, 1), ReLU; layer 2: [[1],[1]] + 0.5.
        let m = mlp(
            &[vec![vec![1.0, -1.0], vec![2.0, 0.0]], vec![vec![1.0], vec![1.0]]],
            &[vec![0.0, 1.0], vec![0.5]],
        );
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![-1.0, 0.0], vec![0.0, -2.0]]).unwrap();
        // Row 1: (3, 0) -> 3.5. Row 2: (-1, 2) -> (0, 2) -> 2.5. Row 3: (-4, 1) -> (0, 1) -> 1.5.
        assert_eq!(m.forward(&x).unwrap().data(), &[3.5, 2.5, 1.5]);
        let mut tape = Tape::new();
        let xv = tape.leaf(x).unwrap();
        let params = m.register(&mut tape).unwrap();
        let out = m.forward_tape(&mut tape, xv, &params).unwrap();
        assert_eq!(tape.value(out).unwrap().data(), &[3.5, 2.5, 1.5]);
    }

    #[test]
    fn shape_mismatch() {
        let m = Mlp::zeros(&MlpSpec::new(vec![4, 2]).unwrap()).unwrap();
        assert!(m.forward(&Matrix::zeros(2, 3)).is_err());
        assert!(MlpSpec::new(vec![4]).is_err());
        assert!(MlpSpec::new(vec![4, 0, 2]).is_err());
    }

    #[test]
    fn glorot_bounds() {
        let m = Mlp::init(&MlpSpec::new(vec![10, 20]).unwrap(), &mut Rng::new(3)).unwrap();
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(m.layers[0].weight.data().iter().all(|v| v.abs() <= limit));
        assert!(m.layers[0].bias.data().iter().all(|&v| v == 0.0));
    }

    fn scalar_pair(k: f64, q: f64, m: f64) -> EncoderPair {
        let mut enc = EncoderPair::new(mlp(&[vec![vec![q]]], &[vec![q]]), m).unwrap();
        enc.key.layers[0].weight.set(0, 0, k);
        enc.key.layers[0].bias.set(0, 0, k);
        enc
    }

    #[test]
    fn momentum_cases() {
        let mut e = scalar_pair(2.0, 4.0, 0.5);
        e.momentum_update().unwrap();
        assert_eq!(e.key.layers[0].weight.get(0, 0), 3.0);
        assert_eq!(e.query.layers[0].weight.get(0, 0), 4.0);
        let mut e = scalar_pair(2.0, 4.0, 1.0);
        e.momentum_update().unwrap();
        assert_eq!(e.key.layers[0].weight.get(0, 0), 2.0);
        let mut e = scalar_pair(0.123, 4.567, 0.0);
        e.momentum_update().unwrap();
        assert_eq!(e.key, e.query);
        assert!(EncoderPair::new(e.query.clone(), 1.5).is_err());
    }

    #[test]
    fn key_starts_equal_to_query() {
        let m = Model::init(&ModelConfig::default(), 12, 3, &Rng::new(4)).unwrap();
        assert_eq!(m.encoder.key, m.encoder.query);
        assert_eq!(m.k(), 3);
        assert_eq!(m.n_genes(), 12);
    }

    #[test]
    fn cluster_head_outputs() {
        let spec = MlpSpec::new(vec![5, 4]).unwrap();
        let heads = Heads {
            instance: Mlp::zeros(&MlpSpec::new(vec![5, 3]).unwrap()).unwrap(),
            cluster: Mlp::zeros(&spec).unwrap(),
        };
        let h = gaussian_sample(&mut Rng::new(5), 3, 5, 0.0, 1.0).unwrap();
        assert_eq!(heads.project_cluster(&h).unwrap(), Matrix::filled(3, 4, 0.25));
        assert_eq!(heads.project_instance(&h).unwrap(), Matrix::zeros(3, 3));
        let heads = Heads {
            cluster: Mlp::init(&spec, &mut Rng::new(6)).unwrap(),
            ..heads
        };
        let y = heads.project_cluster(&gaussian_sample(&mut Rng::new(7), 20, 5, 0.0, 5.0).unwrap()).unwrap();
        for r in y.row_iter() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(r.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Model::init(&ModelConfig::default(), 30, 4, &Rng::new(8)).unwrap();
        m.encoder.key.layers[0].weight.set(0, 0, 0.1 + 0.2);
        m.encoder.key.layers[0].bias.set(0, 1, 1e-300);
        let ck = Checkpoint::new(m, 7, (0..30).map(|i| format!("g{i}")).collect());
        let p = dir.path().join("ck.json");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        let bits = |c: &Checkpoint| -> Vec<u64> {
            c.model.encoder.key.params().iter().flat_map(|m| m.data().iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&back), bits(&ck));
    }

    #[test]
    fn corrupted_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, "{\"format\": \"shrinkcl-checkpoint\", \"version\": 1, \"epoch\": ").unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn momentum_contracts(seed in any::<u64>(), m in 0.0f64..1.0) {
            let mut rng = Rng::new(seed);
            let q = Mlp::init(&MlpSpec::new(vec![3, 4, 2]).unwrap(), &mut rng).unwrap();
            let mut pair = EncoderPair::new(q, m).unwrap();
            pair.key = Mlp::init(&MlpSpec::new(vec![3, 4, 2]).unwrap(), &mut rng).unwrap();
            let dist = |p: &EncoderPair| -> f64 {
                p.key.params().iter().zip(p.query.params()).map(|(a, b)| a.sub(b).unwrap().frobenius_norm().powi(2)).sum::<f64>().sqrt()
            };
            let mut prev = dist(&pair);
            for _ in 0..5 {
                pair.momentum_update().unwrap();
                let d = dist(&pair);
                prop_assert!(d <= prev * (1.0 + 1e-12) + 1e-15);
                prev = d;
            }
        }
    }
}
