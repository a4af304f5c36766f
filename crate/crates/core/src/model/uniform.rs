use super::{ModelFactory, ModelInput, ModelParams, SequenceModel};
use crate::corpus::TokenizedCorpus;
use crate::error::{Error, Result};
use crate::prompts::TrainingRecord;

/// Uniform over the allowed set. Baseline for learned models.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UniformModel;

impl SequenceModel for UniformModel {
    fn kind(&self) -> &'static str {
        "uniform"
    }

    fn next_token_logprobs(&self, _input: &ModelInput<'_>, _prefix: &[u32], allowed: &[u32]) -> Vec<f64> {
        vec![-(allowed.len() as f64).ln(); allowed.len()]
    }

    fn parameter_count(&self) -> usize {
        0
    }

    fn encode_payload(&self) -> Vec<u8> {
        Vec::new()
    }
}

pub(super) struct UniformFactory;

impl ModelFactory for UniformFactory {
    fn kind(&self) -> &'static str {
        "uniform"
    }

    fn train(
        &self,
        _mixture: &[TrainingRecord],
        _corpus: &TokenizedCorpus,
        _params: &ModelParams,
    ) -> Result<Box<dyn SequenceModel>> {
        Ok(Box::new(UniformModel))
    }

    fn decode(&self, payload: &[u8]) -> Result<Box<dyn SequenceModel>> {
        if !payload.is_empty() {
            return Err(Error::Format("uniform model carries no payload".into()));
        }
        Ok(Box::new(UniformModel))
    }
}
