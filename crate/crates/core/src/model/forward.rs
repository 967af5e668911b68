//! Forward passes for all variants, on a caller-provided tape.
//!
//! Rng discipline: every stochastic site draws from a stream keyed by
//! `(branch, frame, layer, site)` derived from the per-sample generator, so
//! disabling one site (or adding parameters, as the CrossView path does)
//! never shifts the draws of any other site. CrossView attention itself is
//! deterministic.

use crate::dataio::ProcessedSample;
use crate::error::{Error, Result};
use crate::model::{LayerIds, LinearIds, ModelParams, NormIds, TrunkIds, Variant};
use crate::model::{survival_probability, LAYER_NORM_EPS};
use crate::numerics::{ParamId, Rng, Tape, Tensor, Var};

const BR_SPATIAL: u64 = 1;
const BR_TEMPORAL: u64 = 2;
const BR_ACCEL: u64 = 3;

const SITE_EMBED_DROP: u64 = 0;
const SITE_ATTN_DROP: u64 = 1;
const SITE_PROJ_DROP: u64 = 2;
const SITE_MLP_DROP1: u64 = 3;
const SITE_MLP_DROP2: u64 = 4;
const SITE_DEPTH_ATTN: u64 = 5;
const SITE_DEPTH_MLP: u64 = 6;

/// Randomly skip a residual branch during training: with probability
/// `1 - survival_p` the branch output becomes zeros (identity shortcut
/// only), otherwise it is scaled by `1/survival_p`. Identity in eval mode
/// and at `survival_p == 1`.
pub fn stochastic_depth(
    tape: &mut Tape,
    branch: Var,
    survival_p: f64,
    rng: &mut Rng,
    training: bool,
) -> Result<Var> {
    if !(survival_p > 0.0 && survival_p <= 1.0) {
        return Err(Error::Config(format!(
            "stochastic depth survival probability {survival_p} outside (0, 1]"
        )));
    }
    if !training || survival_p >= 1.0 {
        return Ok(branch);
    }
    let factor = if rng.bernoulli(survival_p) {
        1.0 / survival_p
    } else {
        0.0
    };
    tape.scale(branch, factor)
}

/// CrossView attention: queries from `x`, keys/values from `y`, single
/// head, no biases or output projection:
/// `softmax((x Wq)(y Wk)^T / sqrt(d_k)) (y Wv)`.
pub fn cross_view_attention(
    tape: &mut Tape,
    x: Var,
    y: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    d_k: usize,
) -> Result<Var> {
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(y, wk)?;
    let v = tape.matmul(y, wv)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt())?;
    let probs = tape.softmax_rows(scaled)?;
    tape.matmul(probs, v)
}

/// A model's parameters bound to one tape as grad-enabled leaves.
pub struct BoundModel<'a> {
    pub params: &'a ModelParams,
    vars: Vec<Var>,
}

impl<'a> BoundModel<'a> {
    pub fn bind(tape: &mut Tape, params: &'a ModelParams) -> Result<Self> {
        let vars = (0..params.set.len())
            .map(|i| tape.leaf(params.set.tensor(i)))
            .collect::<Result<_>>()?;
        Ok(BoundModel { params, vars })
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }

    /// Gradients for every parameter, aligned with the parameter set.
    pub fn gradients(&self, tape: &Tape) -> Result<Vec<Tensor>> {
        (0..self.params.set.len())
            .map(|i| tape.grad_tensor(self.vars[i], self.params.set.tensor(i).shape()))
            .collect()
    }

    fn linear(&self, tape: &mut Tape, x: Var, ids: LinearIds) -> Result<Var> {
        let h = tape.matmul(x, self.var(ids.w))?;
        tape.add_bias_row(h, self.var(ids.b))
    }

    fn norm(&self, tape: &mut Tape, x: Var, ids: NormIds) -> Result<Var> {
        tape.layer_norm(x, self.var(ids.gain), self.var(ids.bias), LAYER_NORM_EPS)
    }

    fn site_rng(&self, rng: &Rng, branch: u64, frame: u64, layer: u64, site: u64) -> Rng {
        rng.stream(&[branch, frame, layer, site])
    }

    /// Multi-headed self-attention with pre-computed site keys.
    #[allow(clippy::too_many_arguments)]
    fn msa(
        &self,
        tape: &mut Tape,
        x: Var,
        layer: &LayerIds,
        rng: &Rng,
        keys: (u64, u64, u64),
        training: bool,
    ) -> Result<Var> {
        let cfg = &self.params.config;
        let (branch, frame, li) = keys;
        let q = self.linear(tape, x, layer.attn.q)?;
        let k = self.linear(tape, x, layer.attn.k)?;
        let v = self.linear(tape, x, layer.attn.v)?;
        // head width follows the trunk's embedding width (spatial trunks
        // run narrower than d_model)
        let d_k = tape.dims(q).1 / cfg.heads;
        let scale = 1.0 / (d_k as f64).sqrt();
        let mut attn_rng = self.site_rng(rng, branch, frame, li, SITE_ATTN_DROP);
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let (c0, c1) = (h * d_k, (h + 1) * d_k);
            let qh = tape.slice_cols(q, c0, c1)?;
            let kh = tape.slice_cols(k, c0, c1)?;
            let vh = tape.slice_cols(v, c0, c1)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scaled = tape.scale(scores, scale)?;
            let probs = tape.softmax_rows(scaled)?;
            let probs = tape.dropout(probs, cfg.attn_drop, &mut attn_rng, training)?;
            heads.push(tape.matmul(probs, vh)?);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let out = self.linear(tape, merged, layer.attn.o)?;
        let mut proj_rng = self.site_rng(rng, branch, frame, li, SITE_PROJ_DROP);
        tape.dropout(out, cfg.drop, &mut proj_rng, training)
    }

    fn mlp(
        &self,
        tape: &mut Tape,
        x: Var,
        layer: &LayerIds,
        rng: &Rng,
        keys: (u64, u64, u64),
        training: bool,
    ) -> Result<Var> {
        let cfg = &self.params.config;
        let (branch, frame, li) = keys;
        let h = self.linear(tape, x, layer.fc1)?;
        let h = tape.gelu(h)?;
        let mut r1 = self.site_rng(rng, branch, frame, li, SITE_MLP_DROP1);
        let h = tape.dropout(h, cfg.drop, &mut r1, training)?;
        let out = self.linear(tape, h, layer.fc2)?;
        let mut r2 = self.site_rng(rng, branch, frame, li, SITE_MLP_DROP2);
        tape.dropout(out, cfg.drop, &mut r2, training)
    }

    /// Pre-norm encoder layer. Returns `(output, post_attention_state)`;
    /// the latter is what a CrossView consumer attends to. When `cross_kv`
    /// is present, a residual CrossView attention block sits between the
    /// self-attention and feed-forward sub-blocks.
    #[allow(clippy::too_many_arguments)]
    fn encoder_layer(
        &self,
        tape: &mut Tape,
        x: Var,
        layer: &LayerIds,
        survival: f64,
        rng: &Rng,
        keys: (u64, u64, u64),
        training: bool,
        cross_kv: Option<Var>,
    ) -> Result<(Var, Var)> {
        let (branch, frame, li) = keys;
        let h = self.norm(tape, x, layer.norm1)?;
        let a = self.msa(tape, h, layer, rng, keys, training)?;
        let mut dp1 = self.site_rng(rng, branch, frame, li, SITE_DEPTH_ATTN);
        let a = stochastic_depth(tape, a, survival, &mut dp1, training)?;
        let after_attn = tape.add(x, a)?;

        let fused = match (layer.cva.as_ref(), cross_kv) {
            (Some(cva), Some(kv)) => {
                let q_in = self.norm(tape, after_attn, cva.norm_q)?;
                let kv_in = self.norm(tape, kv, cva.norm_kv)?;
                let c = cross_view_attention(
                    tape,
                    q_in,
                    kv_in,
                    self.var(cva.wq),
                    self.var(cva.wk),
                    self.var(cva.wv),
                    self.params.config.d_k(),
                )?;
                tape.add(after_attn, c)?
            }
            (Some(_), None) => {
                return Err(Error::Config(
                    "crossview layer executed without acceleration states".into(),
                ))
            }
            _ => after_attn,
        };

        let h2 = self.norm(tape, fused, layer.norm2)?;
        let m = self.mlp(tape, h2, layer, rng, keys, training)?;
        let mut dp2 = self.site_rng(rng, branch, frame, li, SITE_DEPTH_MLP);
        let m = stochastic_depth(tape, m, survival, &mut dp2, training)?;
        let out = tape.add(fused, m)?;
        Ok((out, after_attn))
    }

    /// Shared trunk: optional token embedding, CLS prepend, learned
    /// positions, encoder stack, final norm. Returns the normalized token
    /// sequence and (when recording) each layer's post-attention state.
    #[allow(clippy::too_many_arguments)]
    fn encode_trunk(
        &self,
        tape: &mut Tape,
        trunk: &TrunkIds,
        tokens: Var,
        cls_row: Var,
        branch: u64,
        frame: u64,
        rng: &Rng,
        training: bool,
        cross: Option<&[Var]>,
        record: bool,
    ) -> Result<(Var, Vec<Var>)> {
        let cfg = &self.params.config;
        let embedded = match trunk.embed {
            Some(ids) => self.linear(tape, tokens, ids)?,
            None => tokens,
        };
        let mut seq = tape.concat_rows(&[cls_row, embedded])?;
        seq = tape.add(seq, self.var(trunk.pos))?;
        let mut embed_rng = self.site_rng(rng, branch, frame, 0, SITE_EMBED_DROP);
        seq = tape.dropout(seq, cfg.drop, &mut embed_rng, training)?;

        let mut states = Vec::new();
        for (i, layer) in trunk.layers.iter().enumerate() {
            if let Some(kv) = cross {
                if kv.len() != trunk.layers.len() {
                    return Err(Error::Config(format!(
                        "crossview recorded {} acceleration states for {} temporal layers",
                        kv.len(),
                        trunk.layers.len()
                    )));
                }
            }
            let survival = survival_probability(trunk.layers.len(), i, cfg.stochastic_depth);
            let (next, state) = self.encoder_layer(
                tape,
                seq,
                layer,
                survival,
                rng,
                (branch, frame, i as u64),
                training,
                cross.map(|kv| kv[i]),
            )?;
            seq = next;
            if record {
                states.push(state);
            }
        }
        let out = self.norm(tape, seq, trunk.norm)?;
        Ok((out, states))
    }

    /// Spatial encoder over one frame's joints. Returns the projected
    /// frame feature `[1, d_model]` and the frame's spatial CLS
    /// `[1, d_spatial]`.
    pub fn spatial_encode(
        &self,
        tape: &mut Tape,
        frame_tokens: &Tensor,
        frame_idx: usize,
        rng: &Rng,
        training: bool,
    ) -> Result<(Var, Var)> {
        let cfg = &self.params.config;
        let trunk = self
            .params
            .layout
            .spatial
            .as_ref()
            .ok_or_else(|| Error::Config("variant has no spatial encoder".into()))?;
        let (rows, cols) = frame_tokens.as_2d();
        if rows != cfg.joints || cols != 3 {
            return Err(Error::ShapeMismatch {
                op: "spatial_encode",
                lhs: vec![rows, cols],
                rhs: vec![cfg.joints, 3],
            });
        }
        let tokens = tape.leaf(frame_tokens)?;
        let cls = self.var(trunk.cls.expect("spatial trunk has a CLS seed"));
        let (encoded, _) = self.encode_trunk(
            tape,
            trunk,
            tokens,
            cls,
            BR_SPATIAL,
            frame_idx as u64,
            rng,
            training,
            None,
            false,
        )?;
        let s_cls = tape.slice_rows(encoded, 0, 1)?;
        let joints = tape.slice_rows(encoded, 1, cfg.joints + 1)?;
        // row-major flatten of [J, d_s] is the per-joint feature concatenation
        let flat = tape.reshape(joints, 1, cfg.joints * cfg.d_spatial)?;
        let frame_feature = self.linear(
            tape,
            flat,
            self.params.layout.frame_proj.expect("skeleton variants project frames"),
        )?;
        Ok((frame_feature, s_cls))
    }

    /// Skeleton branch: spatial encoding per frame, temporal encoding over
    /// frame features with a projected CLS. Returns the temporal CLS
    /// feature `[1, d_model]`.
    fn skeleton_branch(
        &self,
        tape: &mut Tape,
        skeleton: &Tensor,
        rng: &Rng,
        training: bool,
        cross: Option<&[Var]>,
    ) -> Result<Var> {
        let cfg = &self.params.config;
        let shape = skeleton.shape();
        if shape != [cfg.frames, cfg.joints, 3] {
            return Err(Error::ShapeMismatch {
                op: "skeleton_branch",
                lhs: shape.to_vec(),
                rhs: vec![cfg.frames, cfg.joints, 3],
            });
        }
        let per_frame = cfg.joints * 3;
        let mut features = Vec::with_capacity(cfg.frames);
        let mut spatial_cls = Vec::with_capacity(cfg.frames);
        for f in 0..cfg.frames {
            let frame = Tensor::new(
                vec![cfg.joints, 3],
                skeleton.data()[f * per_frame..(f + 1) * per_frame].to_vec(),
            )?;
            let (feature, s_cls) = self.spatial_encode(tape, &frame, f, rng, training)?;
            features.push(feature);
            spatial_cls.push(s_cls);
        }
        // one classification token: average the per-frame spatial CLS, then
        // project it up to the temporal width
        let stacked_cls = tape.concat_rows(&spatial_cls)?;
        let mean_cls = tape.mean_rows(stacked_cls)?;
        let t_cls = self.linear(
            tape,
            mean_cls,
            self.params.layout.cls_proj.expect("skeleton variants project the CLS"),
        )?;
        let frames = tape.concat_rows(&features)?;

        let trunk = self.params.layout.temporal.as_ref().expect("temporal trunk");
        let (encoded, _) = self.encode_trunk(
            tape,
            trunk,
            frames,
            t_cls,
            BR_TEMPORAL,
            0,
            rng,
            training,
            cross,
            false,
        )?;
        tape.slice_rows(encoded, 0, 1)
    }

    /// Acceleration branch. Returns the encoded CLS feature `[1, d_model]`
    /// and, when `record` is set, each layer's post-attention token state
    /// for CrossView consumption.
    fn accel_branch(
        &self,
        tape: &mut Tape,
        accel: &Tensor,
        rng: &Rng,
        training: bool,
        record: bool,
    ) -> Result<(Var, Vec<Var>)> {
        let cfg = &self.params.config;
        if accel.shape() != [cfg.accel_tokens, 3] {
            return Err(Error::ShapeMismatch {
                op: "accel_branch",
                lhs: accel.shape().to_vec(),
                rhs: vec![cfg.accel_tokens, 3],
            });
        }
        let trunk = self
            .params
            .layout
            .accel
            .as_ref()
            .ok_or_else(|| Error::Config("variant has no acceleration encoder".into()))?;
        let tokens = tape.leaf(accel)?;
        let cls = self.var(trunk.cls.expect("accel trunk has a CLS seed"));
        let (encoded, states) = self.encode_trunk(
            tape,
            trunk,
            tokens,
            cls,
            BR_ACCEL,
            0,
            rng,
            training,
            None,
            record,
        )?;
        let a_cls = tape.slice_rows(encoded, 0, 1)?;
        Ok((a_cls, states))
    }

    /// Class logits `[1, C]` for one sample under the configured variant.
    pub fn sample_logits(
        &self,
        tape: &mut Tape,
        skeleton: &Tensor,
        accel: &Tensor,
        rng: &Rng,
        training: bool,
    ) -> Result<Var> {
        let cfg = &self.params.config;
        if cfg.variant.uses_accel() && accel.is_empty() {
            return Err(Error::Data(
                "acceleration stream missing; run the fill stage upstream".into(),
            ));
        }
        let feature = match cfg.variant {
            Variant::Skeleton => self.skeleton_branch(tape, skeleton, rng, training, None)?,
            Variant::Accel => self.accel_branch(tape, accel, rng, training, false)?.0,
            Variant::SimpleFusion => {
                let (a_cls, _) = self.accel_branch(tape, accel, rng, training, false)?;
                let t_cls = self.skeleton_branch(tape, skeleton, rng, training, None)?;
                tape.concat_cols(&[t_cls, a_cls])?
            }
            Variant::CrossViewFusion => {
                let (a_cls, states) = self.accel_branch(tape, accel, rng, training, true)?;
                let t_cls =
                    self.skeleton_branch(tape, skeleton, rng, training, Some(&states))?;
                tape.concat_cols(&[t_cls, a_cls])?
            }
        };
        self.linear(tape, feature, self.params.layout.head)
    }
}

/// Mean cross-entropy over a batch plus stacked logits `[B, C]`.
///
/// Per-sample randomness derives from `rng` by batch position, so batch
/// composition (not length) determines each sample's draws.
pub fn batch_loss(
    tape: &mut Tape,
    params: &ModelParams,
    batch: &[&ProcessedSample],
    rng: &Rng,
    training: bool,
) -> Result<(Var, Var)> {
    let bound = BoundModel::bind(tape, params)?;
    batch_loss_bound(tape, &bound, batch, rng, training)
}

fn batch_loss_bound(
    tape: &mut Tape,
    bound: &BoundModel,
    batch: &[&ProcessedSample],
    rng: &Rng,
    training: bool,
) -> Result<(Var, Var)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut rows = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    for (i, sample) in batch.iter().enumerate() {
        let sample_rng = rng.derive(i as u64);
        rows.push(bound.sample_logits(
            tape,
            &sample.skeleton_tokens,
            &sample.accel_tokens,
            &sample_rng,
            training,
        )?);
        labels.push(sample.label);
    }
    let logits = if rows.len() == 1 {
        rows[0]
    } else {
        tape.concat_rows(&rows)?
    };
    let loss = tape.cross_entropy_mean(logits, &labels)?;
    Ok((loss, logits))
}

/// Loss value and parameter gradients for one batch; builds and consumes a
/// fresh tape. This is the closure body the optimizers re-invoke.
pub fn loss_and_grads(
    params: &ModelParams,
    batch: &[&ProcessedSample],
    rng: &Rng,
    training: bool,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, params)?;
    let (loss, _) = batch_loss_bound(&mut tape, &bound, batch, rng, training)?;
    let value = tape.value(loss)[0];
    tape.backward(loss)?;
    let grads = bound.gradients(&tape)?;
    Ok((value, grads))
}

/// Deterministic eval-mode logits for one sample.
pub fn eval_logits(params: &ModelParams, sample: &ProcessedSample) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, params)?;
    let rng = Rng::new(0); // unused in eval mode
    let logits = bound.sample_logits(
        &mut tape,
        &sample.skeleton_tokens,
        &sample.accel_tokens,
        &rng,
        false,
    )?;
    Ok(tape.value(logits).to_vec())
}
