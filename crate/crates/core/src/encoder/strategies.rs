use super::{
    DocumentRecurrence, EncoderDims, EncoderOptions, EncoderStrategy, EsnParams, HierarchicalEncoder, VariantKind, DOCUMENT_GROUP,
    SENTENCE_GROUP,
};
use crate::error::{Error, Result};
use crate::nn::{normal_tensor, LstmInit, LstmParams};
use crate::params::ParameterRegistry;

fn check(dims: EncoderDims) -> Result<()> {
    if dims.hidden == 0 || dims.input_dim == 0 {
        return Err(Error::contract("encoder dimensions must be positive"));
    }
    Ok(())
}

fn uniform_bound(hidden: usize) -> f64 {
    1.0 / (hidden as f64).sqrt()
}

/// Registers a bidirectional LSTM pair under `{prefix}.fwd` / `{prefix}.bwd`.
fn bilstm_pair(
    reg: &mut ParameterRegistry,
    prefix: &str,
    input_dim: usize,
    hidden: usize,
    init: LstmInit,
    trainable: bool,
    seed: u64,
) -> Result<(LstmParams, LstmParams)> {
    Ok((
        LstmParams::register(reg, &format!("{prefix}.fwd"), input_dim, hidden, init, trainable, seed)?,
        LstmParams::register(reg, &format!("{prefix}.bwd"), input_dim, hidden, init, trainable, seed)?,
    ))
}

fn lstm_encoder(
    kind: VariantKind,
    reg: &mut ParameterRegistry,
    dims: EncoderDims,
    init: LstmInit,
    seed: u64,
) -> Result<HierarchicalEncoder> {
    check(dims)?;
    let trainable = !kind.is_frozen();
    let d = dims.hidden;
    let (sent_fwd, sent_bwd) = bilstm_pair(reg, SENTENCE_GROUP, dims.input_dim, d, init, trainable, seed)?;
    let (fwd, bwd) = bilstm_pair(reg, DOCUMENT_GROUP, 2 * d, d, init, trainable, seed)?;
    Ok(HierarchicalEncoder {
        kind,
        hidden: d,
        sent_fwd,
        sent_bwd,
        document: DocumentRecurrence::BiLstm { fwd, bwd },
    })
}

/// Fully trainable bidirectional LSTMs.
pub struct TrainedStrategy;

impl EncoderStrategy for TrainedStrategy {
    fn name(&self) -> &'static str {
        "trained"
    }

    fn kind(&self) -> VariantKind {
        VariantKind::Trained
    }

    fn build(&self, reg: &mut ParameterRegistry, dims: EncoderDims, opts: &EncoderOptions, seed: u64) -> Result<HierarchicalEncoder> {
        let init = LstmInit::Trainable {
            bound: uniform_bound(dims.hidden),
            forget_bias: opts.forget_bias,
        };
        lstm_encoder(VariantKind::Trained, reg, dims, init, seed)
    }
}

/// Frozen LSTMs with every weight and bias drawn from `U(−1/√d, 1/√d)`.
pub struct RandomUniformStrategy;

impl EncoderStrategy for RandomUniformStrategy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn kind(&self) -> VariantKind {
        VariantKind::RandomUniform
    }

    fn build(&self, reg: &mut ParameterRegistry, dims: EncoderDims, _opts: &EncoderOptions, seed: u64) -> Result<HierarchicalEncoder> {
        let init = LstmInit::UniformAll {
            bound: uniform_bound(dims.hidden),
        };
        lstm_encoder(VariantKind::RandomUniform, reg, dims, init, seed)
    }
}

/// Frozen LSTMs whose gate matrices are (rectangular) identities and biases zero.
pub struct IdentityStrategy;

impl EncoderStrategy for IdentityStrategy {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn kind(&self) -> VariantKind {
        VariantKind::Identity
    }

    fn build(&self, reg: &mut ParameterRegistry, dims: EncoderDims, _opts: &EncoderOptions, seed: u64) -> Result<HierarchicalEncoder> {
        lstm_encoder(VariantKind::Identity, reg, dims, LstmInit::Identity, seed)
    }
}

/// Frozen random sentence LSTM plus a bidirectional echo-state document encoder.
pub struct EchoStateStrategy;

impl EncoderStrategy for EchoStateStrategy {
    fn name(&self) -> &'static str {
        "esn"
    }

    fn kind(&self) -> VariantKind {
        VariantKind::EchoState
    }

    fn build(&self, reg: &mut ParameterRegistry, dims: EncoderDims, opts: &EncoderOptions, seed: u64) -> Result<HierarchicalEncoder> {
        check(dims)?;
        let d = dims.hidden;
        let init = LstmInit::UniformAll { bound: uniform_bound(d) };
        let (sent_fwd, sent_bwd) = bilstm_pair(reg, SENTENCE_GROUP, dims.input_dim, d, init, false, seed)?;

        let mut register = |dir: &str| -> Result<_> {
            let in_name = format!("{DOCUMENT_GROUP}.esn.{dir}.W_in");
            let rec_name = format!("{DOCUMENT_GROUP}.esn.{dir}.W_rec");
            let w_in = normal_tensor(seed, &in_name, &[d, 2 * d]);
            let mut w_rec = normal_tensor(seed, &rec_name, &[d, d]);
            if let Some(rho) = opts.esn_spectral_radius {
                let current = super::spectral_radius(&w_rec);
                if current > 0.0 {
                    w_rec.data_mut().iter_mut().for_each(|v| *v *= rho / current);
                }
            }
            Ok((reg.register(&in_name, w_in, false)?, reg.register(&rec_name, w_rec, false)?))
        };
        let (fwd_in, fwd_rec) = register("fwd")?;
        let (bwd_in, bwd_rec) = register("bwd")?;
        Ok(HierarchicalEncoder {
            kind: VariantKind::EchoState,
            hidden: d,
            sent_fwd,
            sent_bwd,
            document: DocumentRecurrence::EchoState(EsnParams {
                fwd_in,
                fwd_rec,
                bwd_in,
                bwd_rec,
                input_dim: 2 * d,
                hidden: d,
            }),
        })
    }
}
