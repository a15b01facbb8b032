//! Full model assembly: extractor -> sequence head -> classifier.

use serde::{Deserialize, Serialize};

use crate::classifier::{classifier_init, classifier_logits, ClassifierDims};
use crate::data::WindowSample;
use crate::error::{CoreError, Result};
use crate::extractor::{fe_forward, fe_init, ExtractorDims};
use crate::heads::{head_embed, BiLstmDims, HeadKind, HeadSpec, TransformerDims};
use crate::tensor::{Graph, NodeId, ParamStore, Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_classes: usize,
    pub extractor: ExtractorDims,
    pub head: HeadSpec,
    pub classifier_hidden: usize,
}

impl ModelConfig {
    /// Paper-scale architecture for the chosen head.
    pub fn paper(head: HeadKind, n_classes: usize) -> Self {
        let extractor = ExtractorDims::paper();
        let head = match head {
            HeadKind::Bilstm => HeadSpec::Bilstm(BiLstmDims::paper(extractor.feature_dim())),
            HeadKind::Transformer => HeadSpec::Transformer(TransformerDims::paper(
                extractor.feature_dim(),
                extractor.seq_len(),
            )),
        };
        ModelConfig { n_classes, extractor, head, classifier_hidden: 100 }
    }

    /// Reduced architecture for gradient-oracle runs: 8 channels x 60
    /// samples, hidden 6 / d_model 16.
    pub fn surrogate(head: HeadKind, n_classes: usize) -> Self {
        let extractor = ExtractorDims::surrogate(8, 60);
        let head = match head {
            HeadKind::Bilstm => {
                HeadSpec::Bilstm(BiLstmDims { input_dim: extractor.feature_dim(), hidden: 6 })
            }
            HeadKind::Transformer => HeadSpec::Transformer(TransformerDims {
                input_dim: extractor.feature_dim(),
                seq_len: extractor.seq_len(),
                d_model: 16,
                heads: 8,
                d_ff: 24,
                pre_norm: false,
                positional: true,
            }),
        };
        ModelConfig { n_classes, extractor, head, classifier_hidden: 100 }
    }

    pub fn classifier_dims(&self) -> ClassifierDims {
        ClassifierDims {
            embedding_dim: self.head.embedding_dim(),
            hidden: self.classifier_hidden,
            n_classes: self.n_classes,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.head.embedding_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.extractor.validate()?;
        if self.n_classes < 2 {
            return Err(CoreError::Config("need at least 2 classes".into()));
        }
        let (head_in, head_seq) = match &self.head {
            HeadSpec::Bilstm(d) => (d.input_dim, None),
            HeadSpec::Transformer(d) => {
                d.validate()?;
                (d.input_dim, Some(d.seq_len))
            }
        };
        if head_in != self.extractor.feature_dim() {
            return Err(CoreError::Config(format!(
                "head expects {head_in} features, extractor emits {}",
                self.extractor.feature_dim()
            )));
        }
        if let Some(seq) = head_seq {
            if seq != self.extractor.seq_len() {
                return Err(CoreError::Config(format!(
                    "transformer expects {seq} steps, extractor emits {}",
                    self.extractor.seq_len()
                )));
            }
        }
        Ok(())
    }
}

/// A model: architecture plus all learnable weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
}

/// Deterministic Glorot initialization of every component.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let rng = Rng::new(seed);
    let mut store = ParamStore::new();
    fe_init(&config.extractor, &rng, &mut store)?;
    config.head.init(&rng, &mut store)?;
    classifier_init(&config.classifier_dims(), &rng, &mut store)?;
    Ok(ModelParams { config: config.clone(), store })
}

/// A window as the extractor's [1 x channels x window_len] input tensor.
pub fn window_tensor(w: &WindowSample) -> Result<Tensor> {
    Tensor::new(vec![1, w.channels(), w.window_len()], w.samples().to_vec())
}

/// Head embedding [1 x embedding_dim] for one window input node.
pub fn window_embedding(g: &mut Graph, model: &ModelParams, input: NodeId) -> Result<NodeId> {
    let seq = fe_forward(g, &model.store, &model.config.extractor, input)?;
    head_embed(g, &model.store, &model.config.head, seq)
}

/// Classifier logits [1 x K] for one window input node.
pub fn window_logits(g: &mut Graph, model: &ModelParams, input: NodeId) -> Result<NodeId> {
    let emb = window_embedding(g, model, input)?;
    classifier_logits(g, &model.store, &model.config.classifier_dims(), emb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window_input(g: &mut Graph, dims: &ExtractorDims, seed: u64) -> NodeId {
        let mut rng = Rng::new(seed).derive("w");
        let data: Vec<f64> =
            (0..dims.channels * dims.time_len).map(|_| rng.normal(0.0, 1.0)).collect();
        g.input(Tensor::new(vec![1, dims.channels, dims.time_len], data).unwrap())
    }

    #[test]
    fn paper_models_produce_k_logits() {
        for kind in [HeadKind::Bilstm, HeadKind::Transformer] {
            let config = ModelConfig::paper(kind, 39);
            config.validate().unwrap();
            let model = init_model(&config, 7).unwrap();
            let mut g = Graph::inference();
            let x = window_input(&mut g, &config.extractor, 1);
            let logits = window_logits(&mut g, &model, x).unwrap();
            assert_eq!(g.value(logits).shape(), &[1, 39]);
        }
    }

    #[test]
    fn init_is_deterministic() {
        let config = ModelConfig::surrogate(HeadKind::Bilstm, 4);
        let a = init_model(&config, 123).unwrap();
        let b = init_model(&config, 123).unwrap();
        assert_eq!(a.store, b.store);
        let c = init_model(&config, 124).unwrap();
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn zero_upstream_gradient_zeroes_parameter_gradients() {
        let config = ModelConfig::surrogate(HeadKind::Bilstm, 3);
        let model = init_model(&config, 5).unwrap();
        let mut g = Graph::new();
        let x = window_input(&mut g, &config.extractor, 9);
        let logits = window_logits(&mut g, &model, x).unwrap();
        let m = g.mean(logits);
        let loss = g.scale(m, 0.0);
        g.backward(loss).unwrap();
        let grads = g.param_gradients();
        for (name, grad) in grads.iter() {
            assert!(grad.iter().all(|&v| v == 0.0), "nonzero gradient in {name}");
        }
    }

    #[test]
    fn mismatched_head_dims_rejected() {
        let mut config = ModelConfig::paper(HeadKind::Bilstm, 39);
        config.head = HeadSpec::Bilstm(BiLstmDims { input_dim: 26, hidden: 22 });
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        for kind in [HeadKind::Bilstm, HeadKind::Transformer] {
            let config = ModelConfig::paper(kind, 39);
            let s = serde_json::to_string(&config).unwrap();
            let back: ModelConfig = serde_json::from_str(&s).unwrap();
            assert_eq!(back, config);
        }
    }
}
