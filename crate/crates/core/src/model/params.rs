use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError, Result};

/// Name and shape of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Xavier fan-in/fan-out; `None` for biases.
    fans: Option<(usize, usize)>,
}

impl TensorSpec {
    fn weight(name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Self {
        TensorSpec {
            name,
            shape,
            fans: Some((fan_in, fan_out)),
        }
    }

    fn bias(name: String, len: usize) -> Self {
        TensorSpec {
            name,
            shape: vec![len],
            fans: None,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Every tensor of a configuration in storage order:
/// `conv.weight [C, K, N]`, `conv.bias`, then per GRU layer `w_ih [3H, I]`,
/// `w_hh [3H, H]`, `b_ih`, `b_hh` (gate blocks ordered reset, update,
/// candidate), then `emb.weight [E, H]`, `emb.bias`, `head.weight [O, E]`,
/// `head.bias`.
pub fn tensor_specs(cfg: &ModelConfig) -> Vec<TensorSpec> {
    let (k, n, c) = (cfg.conv_kernel, cfg.input_dim, cfg.conv_channels);
    let (h, e, o) = (cfg.gru_units, cfg.embedding_dim, cfg.heads);
    let mut specs = vec![
        TensorSpec::weight("conv.weight".into(), vec![c, k, n], k * n, k * c),
        TensorSpec::bias("conv.bias".into(), c),
    ];
    for l in 0..cfg.gru_layers {
        let input = if l == 0 { c } else { h };
        specs.push(TensorSpec::weight(format!("gru{l}.w_ih"), vec![3 * h, input], input, 3 * h));
        specs.push(TensorSpec::weight(format!("gru{l}.w_hh"), vec![3 * h, h], h, 3 * h));
        specs.push(TensorSpec::bias(format!("gru{l}.b_ih"), 3 * h));
        specs.push(TensorSpec::bias(format!("gru{l}.b_hh"), 3 * h));
    }
    specs.push(TensorSpec::weight("emb.weight".into(), vec![e, h], h, e));
    specs.push(TensorSpec::bias("emb.bias".into(), e));
    specs.push(TensorSpec::weight("head.weight".into(), vec![o, e], e, o));
    specs.push(TensorSpec::bias("head.bias".into(), o));
    specs
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruWeights {
    pub w_ih: Vec<f64>,
    pub w_hh: Vec<f64>,
    pub b_ih: Vec<f64>,
    pub b_hh: Vec<f64>,
}

/// All network tensors, flattened row-major. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    pub gru: Vec<GruWeights>,
    pub emb_w: Vec<f64>,
    pub emb_b: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl Parameters {
    /// Zero tensors with the shapes of `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self::from_tensors(
            cfg,
            tensor_specs(cfg).iter().map(|s| vec![0.0; s.len()]).collect(),
        )
        .expect("shapes come from the same config")
    }

    pub(super) fn init(cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let tensors = tensor_specs(cfg)
            .iter()
            .map(|spec| match spec.fans {
                Some((fan_in, fan_out)) => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..spec.len()).map(|_| rng.random_range(-a..a)).collect()
                }
                None => vec![0.0; spec.len()],
            })
            .collect();
        Self::from_tensors(cfg, tensors).expect("shapes come from the same config")
    }

    /// Rebuilds parameters from tensors in [`tensor_specs`] order.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Vec<f64>>) -> Result<Self> {
        let specs = tensor_specs(cfg);
        if tensors.len() != specs.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (spec, t) in specs.iter().zip(&tensors) {
            if spec.len() != t.len() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {} has {} values, expected {}",
                    spec.name,
                    t.len(),
                    spec.len()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().unwrap();
        let conv_w = next();
        let conv_b = next();
        let gru = (0..cfg.gru_layers)
            .map(|_| GruWeights {
                w_ih: next(),
                w_hh: next(),
                b_ih: next(),
                b_hh: next(),
            })
            .collect();
        Ok(Parameters {
            conv_w,
            conv_b,
            gru,
            emb_w: next(),
            emb_b: next(),
            head_w: next(),
            head_b: next(),
        })
    }

    pub(super) fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = tensor_specs(cfg);
        let slices = self.tensors();
        if slices.len() != specs.len()
            || specs.iter().zip(&slices).any(|(s, t)| s.len() != t.len())
        {
            return Err(ModelError::Config(
                "parameter shapes do not match the config".into(),
            ));
        }
        Ok(())
    }

    /// Tensors in [`tensor_specs`] order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.conv_w, &self.conv_b];
        for g in &self.gru {
            out.extend([g.w_ih.as_slice(), &g.w_hh, &g.b_ih, &g.b_hh]);
        }
        out.extend([self.emb_w.as_slice(), &self.emb_b, &self.head_w, &self.head_b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.conv_w, &mut self.conv_b];
        for g in &mut self.gru {
            out.push(&mut g.w_ih);
            out.push(&mut g.w_hh);
            out.push(&mut g.b_ih);
            out.push(&mut g.b_hh);
        }
        out.push(&mut self.emb_w);
        out.push(&mut self.emb_b);
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += other`, tensor by tensor in a fixed order.
    pub fn add_assign(&mut self, other: &Parameters) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// All values concatenated in storage order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }
}
