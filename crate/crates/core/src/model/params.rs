use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ModelConfig, INIT_STD};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rotary::FusedRotary;

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Parameters per transformer layer, in declaration order.
pub(crate) const LAYER_PARAMS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Backbone parameters plus the config they were built for.
///
/// Declaration order: item embedding, optional position table, then per
/// layer attention norm, Q/K/V/O projections, FFN norm, FFN, and finally the
/// output norm.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Param>,
    rotary: Option<FusedRotary>,
}

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.d_model;
    let mut out = vec![("item_embedding".to_string(), vec![cfg.vocab_size, d], Init::Normal)];
    if !cfg.mode.is_rotary() {
        out.push(("position_embedding".to_string(), vec![cfg.max_len, d], Init::Normal));
    }
    for l in 0..cfg.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        out.extend([
            (p("attn_norm.gain"), vec![d], Init::Ones),
            (p("attn_norm.bias"), vec![d], Init::Zeros),
            (p("attn.w_q"), vec![d, d], Init::Normal),
            (p("attn.b_q"), vec![d], Init::Zeros),
            (p("attn.w_k"), vec![d, d], Init::Normal),
            (p("attn.b_k"), vec![d], Init::Zeros),
            (p("attn.w_v"), vec![d, d], Init::Normal),
            (p("attn.b_v"), vec![d], Init::Zeros),
            (p("attn.w_o"), vec![d, d], Init::Normal),
            (p("attn.b_o"), vec![d], Init::Zeros),
            (p("ffn_norm.gain"), vec![d], Init::Ones),
            (p("ffn_norm.bias"), vec![d], Init::Zeros),
            (p("ffn.w1"), vec![d, d], Init::Normal),
            (p("ffn.b1"), vec![d], Init::Zeros),
            (p("ffn.w2"), vec![d, d], Init::Normal),
            (p("ffn.b2"), vec![d], Init::Zeros),
        ]);
    }
    out.push(("final_norm.gain".to_string(), vec![d], Init::Ones));
    out.push(("final_norm.bias".to_string(), vec![d], Init::Zeros));
    out
}

/// Standard normal truncated to two standard deviations.
fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

impl Model {
    /// Truncated-normal (std 0.02) weights, zero biases, unit norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        Model::init_with_std(config, seed, INIT_STD)
    }

    pub fn init_with_std(config: ModelConfig, seed: u64, std: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layout(&config)
            .into_iter()
            .map(|(name, shape, init)| {
                let n: usize = shape.iter().product();
                let data = match init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Normal => (0..n).map(|_| std * truncated_normal(&mut rng)).collect(),
                };
                Param {
                    name,
                    tensor: Tensor::new(shape, data).expect("layout shapes are valid"),
                }
            })
            .collect();
        let mut model = Model::assemble(config, params)?;
        model.zero_padding_row();
        Ok(model)
    }

    /// Build from explicit tensors; names and shapes must match the layout.
    pub fn from_params(config: ModelConfig, params: Vec<Param>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape, _), p) in expected.iter().zip(&params) {
            if *name != p.name || shape.as_slice() != p.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "expected {name} {shape:?}, found {} {:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
        }
        Model::assemble(config, params)
    }

    fn assemble(config: ModelConfig, params: Vec<Param>) -> Result<Self> {
        let rotary = config.mode.rotary(&config.rote)?;
        Ok(Model { config, params, rotary })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param_tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|p| &mut p.tensor)
    }

    pub(crate) fn rotary(&self) -> Option<&FusedRotary> {
        self.rotary.as_ref()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn item_embedding(&self) -> &Tensor {
        &self.params[0].tensor
    }

    pub(crate) fn layer_offset(&self) -> usize {
        if self.config.mode.is_rotary() {
            1
        } else {
            2
        }
    }

    /// Row 0 of the item table is the padding id and stays at zero.
    pub fn zero_padding_row(&mut self) {
        let d = self.config.d_model;
        self.params[0].tensor.data_mut()[..d].fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncodingMode;

    #[test]
    fn init_is_deterministic_with_zero_padding() {
        let cfg = ModelConfig::new(20, EncodingMode::YearMonthDay);
        let a = Model::init(cfg.clone(), 7).unwrap();
        let b = Model::init(cfg.clone(), 7).unwrap();
        assert_eq!(a.params(), b.params());
        assert!(a.item_embedding().row(0).iter().all(|&v| v == 0.0));
        let c = Model::init(cfg, 8).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn init_is_truncated() {
        let cfg = ModelConfig::new(200, EncodingMode::PositionalEmbedding);
        let m = Model::init(cfg, 1).unwrap();
        let emb = m.item_embedding().data();
        assert!(emb.iter().all(|v| v.abs() <= 2.0 * INIT_STD));
        let mean = emb.iter().sum::<f64>() / emb.len() as f64;
        assert!(mean.abs() < 2e-3);
    }

    #[test]
    fn positional_table_only_in_positional_mode() {
        let pe = Model::init(ModelConfig::new(5, EncodingMode::PositionalEmbedding), 0).unwrap();
        let rt = Model::init(ModelConfig::new(5, EncodingMode::PureTimestamp), 0).unwrap();
        assert_eq!(pe.param("position_embedding").unwrap().shape(), &[50, 32]);
        assert!(rt.param("position_embedding").is_none());
        assert_eq!(pe.params().len(), rt.params().len() + 1);
    }

    #[test]
    fn from_params_checks_layout() {
        let m = Model::init(ModelConfig::new(5, EncodingMode::YearOnly), 0).unwrap();
        let mut params = m.params().to_vec();
        assert!(Model::from_params(m.config().clone(), params.clone()).is_ok());
        params.pop();
        assert!(matches!(
            Model::from_params(m.config().clone(), params),
            Err(Error::Checkpoint(_))
        ));
    }
}
