//! Assembly of the full policy: modality encoders, the force pathway chosen
//! by the variant, the frozen masked transformer, and the flow-matching
//! action head. One `PolicyModel` owns every parameter and exposes the two
//! entry points the harness needs: feature extraction and closed-loop action
//! sampling.

use crate::actionexpert::{ActionChunk, NormStats, PolicyHead};
use crate::config::{ModelConfig, Variant};
use crate::embedding::{LanguageEncoder, ModalityBundle, StateEncoder, VisionEncoder};
use crate::error::{Error, Result};
use crate::fdm::{FdmAttention, ForceDistiller, ForceToken};
use crate::fusion::{concat_fused, FrozenStack, FusedTokens, StreamLayout};
use crate::numerics::param::ParamStore;
use crate::numerics::rng::RngStream;
use crate::numerics::tape::{NodeId, Tape};
use crate::numerics::tensor::Tensor;

pub struct PolicyModel {
    pub cfg: ModelConfig,
    pub variant: Variant,
    pub store: ParamStore,
    pub vision: VisionEncoder,
    pub language: LanguageEncoder,
    pub state_enc: StateEncoder,
    pub fdm: ForceDistiller,
    pub frozen: FrozenStack,
    pub head: PolicyHead,
    pub norm: NormStats,
}

/// Everything one feature forward pass produces, with handles back into the
/// tape for loss construction and inspection.
pub struct ForwardPass {
    pub features: NodeId,
    pub layout: StreamLayout,
    /// FDM prediction-branch output, when the variant runs it.
    pub predicted: Option<ForceToken>,
    /// Encoded sensed wrench, when the variant consumed one.
    pub actual: Option<ForceToken>,
    pub attention: Option<FdmAttention>,
}

impl PolicyModel {
    /// Deterministic construction: identical (config, variant, seed) yields
    /// identical parameters, names, and store order.
    pub fn init(cfg: &ModelConfig, variant: Variant, norm: NormStats, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed).derive_str("model-init");
        let vision = VisionEncoder::init(&mut store, cfg, &mut rng)?;
        let language = LanguageEncoder::init(&mut store, cfg, &mut rng)?;
        let state_enc = StateEncoder::init(&mut store, cfg, &mut rng)?;
        let fdm = ForceDistiller::init(&mut store, cfg, &mut rng)?;
        let frozen = FrozenStack::init(&mut store, cfg, &mut rng)?;
        let head = PolicyHead::init(&mut store, cfg, &mut rng)?;
        Ok(PolicyModel {
            cfg: cfg.clone(),
            variant,
            store,
            vision,
            language,
            state_enc,
            fdm,
            frozen,
            head,
            norm,
        })
    }

    /// Encodes the bundle, routes the force pathway for the active variant,
    /// and runs the masked frozen stack. Sensor-free variants never read
    /// `bundle.force`; sensor variants surface a mode error when it is absent.
    pub fn forward_features(&self, tape: &mut Tape, bundle: &ModalityBundle) -> Result<ForwardPass> {
        bundle.validate()?;
        let f_v = self.vision.encode(tape, &bundle.vision)?;
        let f_l = self.language.encode(tape, &bundle.language)?;
        let f_s = self.state_enc.encode(tape, &bundle.state)?;

        let mut predicted = None;
        let mut actual = None;
        let mut attention = None;
        let force_token: Option<ForceToken> = match self.variant {
            Variant::NoForce => None,
            Variant::FdmLearnable => {
                let (token, attn) = self.fdm.predict(tape, &f_v, &f_s)?;
                predicted = Some(token);
                attention = Some(attn);
                Some(token)
            }
            Variant::NoFdm => {
                let token = self.fdm.encode_actual(tape, bundle.force.as_deref())?;
                actual = Some(token);
                Some(token)
            }
            Variant::FdmForceToken => {
                let enc = self.fdm.encode_actual(tape, bundle.force.as_deref())?;
                actual = Some(enc);
                let (token, attn) = self.fdm.predict_with_query(tape, enc.node, &f_v, &f_s)?;
                attention = Some(attn);
                Some(token)
            }
        };

        let fused: FusedTokens = concat_fused(tape, &f_v, &f_l, &f_s, force_token.as_ref())?;
        let features = self.frozen.forward(tape, &fused)?;
        Ok(ForwardPass {
            features,
            layout: fused.layout,
            predicted,
            actual,
            attention,
        })
    }

    /// Samples one de-normalized action chunk for the bundle.
    pub fn act(
        &self,
        bundle: &ModalityBundle,
        sampler_steps: usize,
        rng: &mut RngStream,
    ) -> Result<ActionChunk> {
        let mut tape = Tape::new(&self.store);
        let pass = self.forward_features(&mut tape, bundle)?;
        self.head
            .sample_actions(&mut tape, pass.features, sampler_steps, rng, &self.norm)
    }

    /// Value of the predicted force token for probing; errors for variants
    /// without a prediction branch.
    pub fn predicted_force_embedding(&self, bundle: &ModalityBundle) -> Result<Tensor> {
        let mut tape = Tape::new(&self.store);
        let pass = self.forward_features(&mut tape, bundle)?;
        let token = pass
            .predicted
            .ok_or_else(|| Error::Mode("variant has no prediction branch".into()))?;
        Ok(tape.value(token.node).clone())
    }
}
