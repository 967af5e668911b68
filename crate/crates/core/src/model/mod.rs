//! The four network variants: spatio-temporal skeleton model, acceleration
//! model, simple CLS-concatenation fusion, and CrossView attention fusion.
//!
//! Skeleton branch: a spatial transformer correlates the joints of each
//! frame around a spatial CLS token; per-frame joint features are
//! concatenated and projected to the temporal width, the frame-averaged
//! spatial CLS is projected into a temporal CLS, and a temporal transformer
//! correlates frames. Acceleration branch: one transformer over 3-d
//! acceleration tokens with its own CLS. Fusion heads classify from the
//! concatenated CLS pair; the CrossView variant additionally lets every
//! temporal layer attend (queries) to the post-attention token state of the
//! same-depth acceleration layer (keys/values), one-way.

pub mod checkpoint;
pub mod forward;


pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{
    batch_loss, cross_view_attention, eval_logits, loss_and_grads, stochastic_depth, BoundModel,
};

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamSet, Rng, Tensor};
use serde::{Deserialize, Serialize};

pub const LAYER_NORM_EPS: f64 = 1e-5;
const POS_INIT_SIGMA: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Skeleton,
    Accel,
    SimpleFusion,
    CrossViewFusion,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Skeleton,
        Variant::Accel,
        Variant::SimpleFusion,
        Variant::CrossViewFusion,
    ];

    pub fn uses_skeleton(self) -> bool {
        !matches!(self, Variant::Accel)
    }

    pub fn uses_accel(self) -> bool {
        !matches!(self, Variant::Skeleton)
    }

    pub fn is_fusion(self) -> bool {
        matches!(self, Variant::SimpleFusion | Variant::CrossViewFusion)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Skeleton => "skeleton",
            Variant::Accel => "accel",
            Variant::SimpleFusion => "simple_fusion",
            Variant::CrossViewFusion => "crossview_fusion",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skeleton" => Ok(Variant::Skeleton),
            "accel" => Ok(Variant::Accel),
            "simple_fusion" => Ok(Variant::SimpleFusion),
            "crossview_fusion" => Ok(Variant::CrossViewFusion),
            other => Err(Error::Config(format!(
                "unknown model.variant `{other}`; allowed: skeleton, accel, simple_fusion, crossview_fusion"
            ))),
        }
    }
}

/// Architecture hyperparameters for one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Joints per skeleton frame (J).
    pub joints: usize,
    /// Skeleton frames fed to the temporal encoder (F).
    pub frames: usize,
    /// Acceleration tokens (N_a).
    pub accel_tokens: usize,
    pub classes: usize,
    pub d_spatial: usize,
    pub d_model: usize,
    pub heads: usize,
    pub depth_spatial: usize,
    pub depth_temporal: usize,
    pub depth_accel: usize,
    pub mlp_ratio: usize,
    pub drop: f64,
    pub attn_drop: f64,
    pub stochastic_depth: f64,
}

impl ModelConfig {
    /// Architecture defaults with the published per-variant training rates
    /// (fusion variants use the lower drop profile).
    pub fn defaults(variant: Variant) -> Self {
        let (drop, attn_drop) = match variant {
            Variant::SimpleFusion => (0.05, 0.05),
            _ => (0.0, 0.0),
        };
        ModelConfig {
            variant,
            joints: 29,
            frames: 120,
            accel_tokens: 120,
            classes: 6,
            d_spatial: 16,
            d_model: 64,
            heads: 4,
            depth_spatial: 2,
            depth_temporal: 3,
            depth_accel: 3,
            mlp_ratio: 2,
            drop,
            attn_drop,
            stochastic_depth: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model.d_model {} must be a positive multiple of model.heads {}",
                self.d_model, self.heads
            )));
        }
        if self.variant.uses_skeleton() && !self.d_spatial.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model.d_spatial {} must be a multiple of model.heads {}",
                self.d_spatial, self.heads
            )));
        }
        if self.variant == Variant::CrossViewFusion && self.depth_temporal != self.depth_accel {
            return Err(Error::Config(format!(
                "crossview_fusion requires equal temporal/accel depth, got {} vs {}",
                self.depth_temporal, self.depth_accel
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config("model.classes must be >= 2".into()));
        }
        if self.joints == 0 || self.frames == 0 || self.accel_tokens == 0 {
            return Err(Error::Config(
                "model.joints, model.frames and model.accel_tokens must be positive".into(),
            ));
        }
        if self.d_spatial == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config(
                "model.d_spatial and model.mlp_ratio must be positive".into(),
            ));
        }
        if self.variant.uses_skeleton()
            && (self.depth_spatial == 0 || self.depth_temporal == 0)
        {
            return Err(Error::Config(
                "skeleton variants need positive spatial and temporal depth".into(),
            ));
        }
        if self.variant.uses_accel() && self.depth_accel == 0 {
            return Err(Error::Config(
                "acceleration variants need positive accel depth".into(),
            ));
        }
        for (name, rate) in [
            ("model.drop", self.drop),
            ("model.attn_drop", self.attn_drop),
            ("model.stochastic_depth", self.stochastic_depth),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} {rate} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Per-head key width used as the attention scaling constant.
    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    /// Closed-form learnable parameter count.
    ///
    /// Building blocks (all widths in scalars):
    ///   linear(i, o) = i*o + o
    ///   norm(d)      = 2d
    ///   layer(d, m)  = 2*norm(d) + 4*linear(d, d) + linear(d, m) + linear(m, d)
    ///                = 4d^2 + 2dm + 9d + m
    ///   cva(d)       = 2*norm(d) + 3d^2
    /// Trunks add their embedding, CLS seed, `(tokens+1) x d` position
    /// table and a final norm; the head is one linear on d or 2d.
    pub fn param_count(&self) -> usize {
        let linear = |i: usize, o: usize| i * o + o;
        let norm = |d: usize| 2 * d;
        let layer = |d: usize, m: usize| 2 * norm(d) + 4 * linear(d, d) + linear(d, m) + linear(m, d);
        let cva = |d: usize| 2 * norm(d) + 3 * d * d;

        let ds = self.d_spatial;
        let d = self.d_model;
        let ms = self.mlp_ratio * ds;
        let m = self.mlp_ratio * d;

        let mut total = 0;
        if self.variant.uses_skeleton() {
            // spatial trunk
            total += linear(3, ds) + ds + (self.joints + 1) * ds;
            total += self.depth_spatial * layer(ds, ms) + norm(ds);
            // projections into the temporal stream
            total += linear(self.joints * ds, d) + linear(ds, d);
            // temporal trunk (no embed, derived CLS)
            total += (self.frames + 1) * d;
            total += self.depth_temporal * layer(d, m) + norm(d);
            if self.variant == Variant::CrossViewFusion {
                total += self.depth_temporal * cva(d);
            }
        }
        if self.variant.uses_accel() {
            total += linear(3, d) + d + (self.accel_tokens + 1) * d;
            total += self.depth_accel * layer(d, m) + norm(d);
        }
        let head_in = if self.variant.is_fusion() { 2 * d } else { d };
        total += linear(head_in, self.classes);
        total
    }
}

// ------------------------------------------------------------- layout

#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct NormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct AttnIds {
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub o: LinearIds,
}

#[derive(Debug, Clone, Copy)]
pub struct CvaIds {
    pub norm_q: NormIds,
    pub norm_kv: NormIds,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

#[derive(Debug, Clone)]
pub struct LayerIds {
    pub norm1: NormIds,
    pub attn: AttnIds,
    pub cva: Option<CvaIds>,
    pub norm2: NormIds,
    pub fc1: LinearIds,
    pub fc2: LinearIds,
}

#[derive(Debug, Clone)]
pub struct TrunkIds {
    pub embed: Option<LinearIds>,
    pub cls: Option<ParamId>,
    pub pos: ParamId,
    pub layers: Vec<LayerIds>,
    pub norm: NormIds,
}

#[derive(Debug, Clone)]
pub struct ModelLayout {
    pub spatial: Option<TrunkIds>,
    pub frame_proj: Option<LinearIds>,
    pub cls_proj: Option<LinearIds>,
    pub temporal: Option<TrunkIds>,
    pub accel: Option<TrunkIds>,
    pub head: LinearIds,
}

/// Learnable parameters plus the typed layout over them.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub set: ParamSet,
    pub layout: ModelLayout,
}

impl ModelParams {
    /// Initialize for a config. Each tensor draws from an rng stream keyed
    /// by its name, so variants sharing a parameter name initialize it
    /// identically under the same seed regardless of which other
    /// parameters exist.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = ParamBuilder {
            set: ParamSet::new(),
            rng: Rng::new(seed),
        };
        let ds = config.d_spatial;
        let d = config.d_model;

        let (spatial, frame_proj, cls_proj, temporal) = if config.variant.uses_skeleton() {
            let spatial = b.trunk(
                "spatial",
                Some((3, ds)),
                true,
                config.joints + 1,
                ds,
                config.mlp_ratio * ds,
                config.depth_spatial,
                false,
            );
            let frame_proj = b.linear("frame_proj", config.joints * ds, d);
            let cls_proj = b.linear("cls_proj", ds, d);
            let temporal = b.trunk(
                "temporal",
                None,
                false,
                config.frames + 1,
                d,
                config.mlp_ratio * d,
                config.depth_temporal,
                config.variant == Variant::CrossViewFusion,
            );
            (Some(spatial), Some(frame_proj), Some(cls_proj), Some(temporal))
        } else {
            (None, None, None, None)
        };

        let accel = config.variant.uses_accel().then(|| {
            b.trunk(
                "accel",
                Some((3, d)),
                true,
                config.accel_tokens + 1,
                d,
                config.mlp_ratio * d,
                config.depth_accel,
                false,
            )
        });

        let head_in = if config.variant.is_fusion() { 2 * d } else { d };
        let head = b.linear("head", head_in, config.classes);

        Ok(ModelParams {
            config: config.clone(),
            set: b.set,
            layout: ModelLayout {
                spatial,
                frame_proj,
                cls_proj,
                temporal,
                accel,
                head,
            },
        })
    }
}

/// Survival probability of layer `i` in a stack of `depth`: linear decay
/// from 1.0 at the first layer to `1 - rate` at the last.
pub fn survival_probability(depth: usize, layer: usize, rate: f64) -> f64 {
    if depth <= 1 {
        1.0 - rate
    } else {
        1.0 - rate * layer as f64 / (depth - 1) as f64
    }
}

struct ParamBuilder {
    set: ParamSet,
    rng: Rng,
}

impl ParamBuilder {
    fn name_rng(&self, name: &str) -> Rng {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &byte in name.as_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.rng.derive(h)
    }

    fn trunc_normal(&mut self, name: String, shape: &[usize], sigma: f64) -> ParamId {
        let mut rng = self.name_rng(&name);
        let t = Tensor::trunc_normal(shape, sigma, &mut rng);
        self.set.push(name, t)
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.set.push(name, Tensor::zeros(shape))
    }

    fn ones(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.set.push(name, Tensor::ones(shape))
    }

    /// Projection weights scale with fan-in; a fixed small sigma starves
    /// the narrow widths used here of gradient signal.
    fn projection(&mut self, name: String, in_dim: usize, out_dim: usize) -> ParamId {
        let sigma = 1.0 / (in_dim as f64).sqrt();
        self.trunc_normal(name, &[in_dim, out_dim], sigma)
    }

    fn linear(&mut self, name: &str, in_dim: usize, out_dim: usize) -> LinearIds {
        LinearIds {
            w: self.projection(format!("{name}.w"), in_dim, out_dim),
            b: self.zeros(format!("{name}.b"), &[out_dim]),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> NormIds {
        NormIds {
            gain: self.ones(format!("{name}.gain"), &[d]),
            bias: self.zeros(format!("{name}.bias"), &[d]),
        }
    }

    fn layer(&mut self, name: &str, d: usize, hidden: usize, with_cva: bool) -> LayerIds {
        LayerIds {
            norm1: self.norm(&format!("{name}.norm1"), d),
            attn: AttnIds {
                q: self.linear(&format!("{name}.attn.q"), d, d),
                k: self.linear(&format!("{name}.attn.k"), d, d),
                v: self.linear(&format!("{name}.attn.v"), d, d),
                o: self.linear(&format!("{name}.attn.o"), d, d),
            },
            cva: with_cva.then(|| CvaIds {
                norm_q: self.norm(&format!("{name}.cva.norm_q"), d),
                norm_kv: self.norm(&format!("{name}.cva.norm_kv"), d),
                wq: self.projection(format!("{name}.cva.wq"), d, d),
                wk: self.projection(format!("{name}.cva.wk"), d, d),
                wv: self.projection(format!("{name}.cva.wv"), d, d),
            }),
            norm2: self.norm(&format!("{name}.norm2"), d),
            fc1: self.linear(&format!("{name}.mlp.fc1"), d, hidden),
            fc2: self.linear(&format!("{name}.mlp.fc2"), hidden, d),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn trunk(
        &mut self,
        name: &str,
        embed: Option<(usize, usize)>,
        with_cls: bool,
        pos_rows: usize,
        d: usize,
        hidden: usize,
        depth: usize,
        with_cva: bool,
    ) -> TrunkIds {
        TrunkIds {
            embed: embed.map(|(i, o)| self.linear(&format!("{name}.embed"), i, o)),
            // CLS seeds start at zero; position tables are learned.
            cls: with_cls.then(|| self.zeros(format!("{name}.cls"), &[1, d])),
            pos: self.trunc_normal(format!("{name}.pos"), &[pos_rows, d], POS_INIT_SIGMA),
            layers: (0..depth)
                .map(|i| self.layer(&format!("{name}.l{i}"), d, hidden, with_cva))
                .collect(),
            norm: self.norm(&format!("{name}.norm"), d),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(variant: Variant) -> ModelConfig {
        ModelConfig {
            joints: 5,
            frames: 6,
            accel_tokens: 7,
            classes: 3,
            d_spatial: 8,
            d_model: 16,
            heads: 4,
            depth_spatial: 2,
            depth_temporal: 3,
            depth_accel: 3,
            ..ModelConfig::defaults(variant)
        }
    }

    #[test]
    fn param_count_formula_matches_construction() {
        for variant in Variant::ALL {
            let cfg = small(variant);
            let params = ModelParams::init(&cfg, 1).unwrap();
            assert_eq!(
                params.set.total_coords(),
                cfg.param_count(),
                "variant {variant}"
            );
        }
    }

    #[test]
    fn shared_names_share_initialization_across_variants() {
        let simple = ModelParams::init(&small(Variant::SimpleFusion), 9).unwrap();
        let cross = ModelParams::init(&small(Variant::CrossViewFusion), 9).unwrap();
        for (name, t) in simple.set.iter() {
            let i = cross.set.position(name).expect("shared name");
            assert_eq!(t.data(), cross.set.tensor(i).data(), "{name}");
        }
    }

    #[test]
    fn crossview_depth_mismatch_rejected_at_build_time() {
        let cfg = ModelConfig {
            depth_accel: 2,
            ..small(Variant::CrossViewFusion)
        };
        assert!(cfg.validate().is_err());
        assert!(ModelParams::init(&cfg, 0).is_err());
    }

    #[test]
    fn heads_must_divide_width() {
        let cfg = ModelConfig {
            heads: 3,
            ..small(Variant::Skeleton)
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn survival_schedule_endpoints() {
        assert_eq!(survival_probability(4, 0, 0.2), 1.0);
        assert!((survival_probability(4, 3, 0.2) - 0.8).abs() < 1e-15);
        assert!((survival_probability(1, 0, 0.2) - 0.8).abs() < 1e-15);
        // monotone within the stack
        for i in 1..4 {
            assert!(survival_probability(4, i, 0.2) < survival_probability(4, i - 1, 0.2));
        }
    }

    #[test]
    fn variant_strings_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("bogus".parse::<Variant>().is_err());
    }
}
