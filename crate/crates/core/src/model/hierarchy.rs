//! Network construction and the per-layer forward operations.

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::config::{InitScheme, ModelConfig};
use super::gaussian::{GaussianParams, LOG_SIGMA_MAX, LOG_SIGMA_MIN};
use super::nn::{Affine, ResBlock};
use super::params::{Binder, Init, ParamSet};
use super::ModelError;
use crate::autodiff::{Tape, Var};
use crate::rng::NormalRng;
use crate::spectral::{recompose, ScaleHeadMap, ScalePartition, ScaleSpectrum};
use crate::tensor::Tensor;

/// Gain of the final affine layers under [`InitScheme::Random`].
const RANDOM_HEAD_GAIN: f64 = 0.5;

/// One stochastic layer: its place in the hierarchy and its three networks.
#[derive(Clone, Debug)]
pub struct LayerSpec {
    pub index: usize,
    pub scale: usize,
    /// Position `m` of the layer within its scale's subset.
    pub position: usize,
    prior_block: ResBlock,
    prior_out: Affine,
    post_in: Affine,
    post_block: ResBlock,
    post_out: Affine,
    contrib_in: Affine,
    contrib_out: Affine,
}

impl LayerSpec {
    /// `[4^s, 1]`: one latent channel per grid position.
    pub fn latent_shape(&self) -> [usize; 2] {
        [1 << (2 * self.scale), 1]
    }
}

#[derive(Clone, Debug)]
struct Head {
    blocks: Vec<ResBlock>,
    out: Affine,
}

/// Which conditional was evaluated, for checking factorization order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Visit {
    Prior(usize),
    Posterior(usize),
}

/// Snapshot of the module-evaluation counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub contribute: u64,
    pub head: u64,
}

#[derive(Default)]
struct Counters {
    contribute: AtomicU64,
    head: AtomicU64,
}

/// The full model: layers grouped into scales, bottom-up encoder, scale
/// transitions and reconstruction heads, plus all their parameters.
pub struct Hierarchy {
    config: ModelConfig,
    partition: ScalePartition,
    params: ParamSet,
    layers: Vec<LayerSpec>,
    scale_ranges: Vec<Range<usize>>,
    enc_in: Affine,
    enc_blocks: Vec<Vec<ResBlock>>,
    up_blocks: Vec<Option<ResBlock>>,
    heads: Vec<Head>,
    head_maps: Vec<Arc<ScaleHeadMap>>,
    counters: Counters,
    probe: Mutex<Option<Vec<Visit>>>,
}

impl Clone for Hierarchy {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            partition: self.partition.clone(),
            params: self.params.clone(),
            layers: self.layers.clone(),
            scale_ranges: self.scale_ranges.clone(),
            enc_in: self.enc_in.clone(),
            enc_blocks: self.enc_blocks.clone(),
            up_blocks: self.up_blocks.clone(),
            heads: self.heads.clone(),
            head_maps: self.head_maps.clone(),
            counters: Counters::default(),
            probe: Mutex::new(None),
        }
    }
}

/// Decoder output: per-scale spectra and the recomposed image.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub spectra: Vec<ScaleSpectrum>,
    pub image: Tensor,
}

impl Hierarchy {
    /// Builds and initializes a model; parameters are a pure function of the
    /// config (including its seed).
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let partition = ScalePartition::new(config.resolution, config.resolution)?;
        let (c, inner) = (config.outer_channels(), config.inner_channels());
        let blocks = config.blocks_per_scale;
        let mut params = ParamSet::new();
        let mut rng = NormalRng::tagged(config.seed, &[0x1417]);
        let final_init = |fan_in: usize| match config.init {
            InitScheme::ZeroHeads => Init::Zeros,
            InitScheme::Random => Init::Scaled {
                fan_in,
                gain: RANDOM_HEAD_GAIN,
            },
        };
        let dense = |fan_in: usize| Init::Scaled { fan_in, gain: 1.0 };
        let scales = config.num_scales();

        let enc_in = Affine::new(&mut params, &mut rng, "enc.in", 1, c, dense(1));
        let enc_blocks = (0..scales)
            .map(|s| {
                (0..blocks)
                    .map(|i| {
                        ResBlock::new(&mut params, &mut rng, &format!("enc.s{s}.b{i}"), c, inner)
                    })
                    .collect()
            })
            .collect();

        let mut layers = Vec::with_capacity(config.depth());
        let mut scale_ranges = Vec::with_capacity(scales);
        let mut up_blocks = Vec::with_capacity(scales);
        for (s, &m) in config.layers_per_scale.iter().enumerate() {
            up_blocks.push(
                (s > 0)
                    .then(|| ResBlock::new(&mut params, &mut rng, &format!("up.s{s}"), c, inner)),
            );
            let start = layers.len();
            for position in 0..m {
                let l = layers.len();
                let name = format!("layer{l}");
                let p = &mut params;
                let r = &mut rng;
                layers.push(LayerSpec {
                    index: l,
                    scale: s,
                    position,
                    prior_block: ResBlock::new(p, r, &format!("{name}.prior.block"), c, inner),
                    prior_out: Affine::new(p, r, &format!("{name}.prior.out"), c, 2, final_init(c)),
                    post_in: Affine::new(p, r, &format!("{name}.post.in"), 2 * c, c, dense(2 * c)),
                    post_block: ResBlock::new(p, r, &format!("{name}.post.block"), c, inner),
                    post_out: Affine::new(p, r, &format!("{name}.post.out"), c, 2, final_init(c)),
                    contrib_in: Affine::new(
                        p,
                        r,
                        &format!("{name}.contrib.in"),
                        c + 1,
                        inner,
                        dense(c + 1),
                    ),
                    contrib_out: Affine::new(
                        p,
                        r,
                        &format!("{name}.contrib.out"),
                        inner,
                        c,
                        final_init(inner),
                    ),
                });
            }
            scale_ranges.push(start..layers.len());
        }

        let heads = (0..scales)
            .map(|s| Head {
                blocks: (0..blocks)
                    .map(|i| {
                        ResBlock::new(&mut params, &mut rng, &format!("head.s{s}.b{i}"), c, inner)
                    })
                    .collect(),
                out: Affine::new(
                    &mut params,
                    &mut rng,
                    &format!("head.s{s}.out"),
                    c,
                    2,
                    dense(c),
                ),
            })
            .collect();
        let head_maps = (0..scales)
            .map(|s| ScaleHeadMap::new(&partition, s).map(Arc::new))
            .collect::<Result<_, _>>()?;

        Ok(Self {
            config,
            partition,
            params,
            layers,
            scale_ranges,
            enc_in,
            enc_blocks,
            up_blocks,
            heads,
            head_maps,
            counters: Counters::default(),
            probe: Mutex::new(None),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn partition(&self) -> &ScalePartition {
        &self.partition
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> Result<&LayerSpec, ModelError> {
        self.layers.get(l).ok_or(ModelError::NoSuchLayer(l))
    }

    /// Total number of stochastic layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn num_scales(&self) -> usize {
        self.scale_ranges.len()
    }

    /// Layer indices forming the subset of scale `s`.
    pub fn scale_layers(&self, s: usize) -> Range<usize> {
        self.scale_ranges[s].clone()
    }

    /// Number of pixels `D`.
    pub fn pixels(&self) -> usize {
        self.config.resolution * self.config.resolution
    }

    pub fn channels(&self) -> usize {
        self.config.outer_channels()
    }

    pub fn eval_counts(&self) -> EvalCounts {
        EvalCounts {
            contribute: self.counters.contribute.load(Ordering::Relaxed),
            head: self.counters.head.load(Ordering::Relaxed),
        }
    }

    pub fn reset_counts(&self) {
        self.counters.contribute.store(0, Ordering::Relaxed);
        self.counters.head.store(0, Ordering::Relaxed);
    }

    /// Starts recording the order in which prior and posterior conditionals
    /// are evaluated.
    pub fn start_order_probe(&self) {
        *self.probe.lock().expect("probe lock") = Some(Vec::new());
    }

    pub fn take_order_probe(&self) -> Vec<Visit> {
        self.probe
            .lock()
            .expect("probe lock")
            .take()
            .unwrap_or_default()
    }

    fn visit(&self, v: Visit) {
        if let Some(log) = self.probe.lock().expect("probe lock").as_mut() {
            log.push(v);
        }
    }

    // ---- tape-level operations ------------------------------------------

    /// Zero context `[1, C]` at the `1×1` scale.
    pub fn initial_context_on<'t>(&self, b: &Binder<'t, '_>) -> Var<'t> {
        b.tape().constant(Tensor::zeros(&[1, self.channels()]))
    }

    fn check_image(&self, x: &[usize]) -> Result<(), ModelError> {
        let n = self.config.resolution;
        if x != [n, n] {
            return Err(ModelError::Shape {
                what: "image",
                expected: vec![n, n],
                actual: x.to_vec(),
            });
        }
        Ok(())
    }

    /// Per-scale features, index `s` holding `[4^s, C]`.
    pub fn bottom_up_on<'t>(
        &self,
        b: &Binder<'t, '_>,
        x: Var<'t>,
    ) -> Result<Vec<Var<'t>>, ModelError> {
        self.check_image(&x.shape())?;
        let scales = self.num_scales();
        let mut h = self.enc_in.forward(b, x.reshape(&[self.pixels(), 1])?)?;
        let mut feats = Vec::with_capacity(scales);
        for s in (0..scales).rev() {
            for block in &self.enc_blocks[s] {
                h = block.forward(b, h)?;
            }
            feats.push(h);
            if s > 0 {
                h = h.avg_pool2()?;
            }
        }
        feats.reverse();
        Ok(feats)
    }

    fn split_gaussian<'t>(o: Var<'t>) -> Result<(Var<'t>, Var<'t>), ModelError> {
        let mu = o.slice_cols(0, 1)?;
        let ls = o.slice_cols(1, 1)?.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX);
        Ok((mu, ls))
    }

    /// Prior `p(z_l | ĥ_{l-1})` as `(mu, log_sigma)`, each `[4^s, 1]`.
    pub fn prior_on<'t>(
        &self,
        b: &Binder<'t, '_>,
        l: usize,
        ctx: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>), ModelError> {
        let layer = self.layer(l)?;
        self.visit(Visit::Prior(l));
        let h = layer.prior_block.forward(b, ctx)?;
        Self::split_gaussian(layer.prior_out.forward(b, h)?)
    }

    /// Posterior `q(z_l | ĥ_{l-1}, x)` from the context and the scale's features.
    pub fn posterior_on<'t>(
        &self,
        b: &Binder<'t, '_>,
        l: usize,
        ctx: Var<'t>,
        feat: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>), ModelError> {
        let layer = self.layer(l)?;
        self.visit(Visit::Posterior(l));
        let h = layer.post_in.forward(b, ctx.concat_cols(feat)?)?;
        let h = layer.post_block.forward(b, h)?;
        Self::split_gaussian(layer.post_out.forward(b, h)?)
    }

    /// `ĥ_l = ĥ_{l-1} + g_l(ĥ_{l-1}, z_l)`.
    pub fn contribute_on<'t>(
        &self,
        b: &Binder<'t, '_>,
        l: usize,
        ctx: Var<'t>,
        z: Var<'t>,
    ) -> Result<Var<'t>, ModelError> {
        let layer = self.layer(l)?;
        let expected = layer.latent_shape();
        if z.shape() != expected {
            return Err(ModelError::Shape {
                what: "latent",
                expected: expected.to_vec(),
                actual: z.shape(),
            });
        }
        self.counters.contribute.fetch_add(1, Ordering::Relaxed);
        let h = layer.contrib_in.forward(b, ctx.concat_cols(z)?)?.swish();
        Ok(ctx.add(layer.contrib_out.forward(b, h)?)?)
    }

    /// Degrees of freedom of scale `s` predicted from its final context.
    pub fn head_on<'t>(
        &self,
        b: &Binder<'t, '_>,
        s: usize,
        ctx: Var<'t>,
    ) -> Result<Var<'t>, ModelError> {
        self.counters.head.fetch_add(1, Ordering::Relaxed);
        let head = &self.heads[s];
        let mut h = ctx;
        for block in &head.blocks {
            h = block.forward(b, h)?;
        }
        let field = head.out.forward(b, h)?;
        let map = self.head_maps[s].clone();
        Ok(field.linear_map(map, &[self.partition.dof_len(s)])?)
    }

    /// Carries the final context of scale `s - 1` onto the grid of scale `s`.
    pub fn ascend_on<'t>(
        &self,
        b: &Binder<'t, '_>,
        s: usize,
        ctx: Var<'t>,
    ) -> Result<Var<'t>, ModelError> {
        let block = self.up_blocks[s]
            .as_ref()
            .expect("scale transitions exist above scale 0");
        Ok(block.forward(b, ctx.upsample2()?)?)
    }

    // ---- tensor-level wrappers ------------------------------------------

    fn with_constants<T>(
        &self,
        f: impl for<'t> FnOnce(&Binder<'t, '_>) -> Result<T, ModelError>,
    ) -> Result<T, ModelError> {
        let tape = Tape::new();
        let binder = Binder::constants(&tape, &self.params);
        f(&binder)
    }

    pub fn bottom_up(&self, x: &Tensor) -> Result<Vec<Tensor>, ModelError> {
        self.with_constants(|b| {
            let feats = self.bottom_up_on(b, b.tape().constant(x.clone()))?;
            Ok(feats.iter().map(Var::to_tensor).collect())
        })
    }

    pub fn initial_context(&self) -> Tensor {
        Tensor::zeros(&[1, self.channels()])
    }

    pub fn prior_params(&self, l: usize, ctx: &Tensor) -> Result<GaussianParams, ModelError> {
        self.with_constants(|b| {
            let (mu, ls) = self.prior_on(b, l, b.tape().constant(ctx.clone()))?;
            Ok(GaussianParams::new(mu.to_tensor(), ls.to_tensor())?)
        })
    }

    pub fn posterior_params(
        &self,
        l: usize,
        ctx: &Tensor,
        feat: &Tensor,
    ) -> Result<GaussianParams, ModelError> {
        self.with_constants(|b| {
            let c = b.tape().constant(ctx.clone());
            let f = b.tape().constant(feat.clone());
            let (mu, ls) = self.posterior_on(b, l, c, f)?;
            Ok(GaussianParams::new(mu.to_tensor(), ls.to_tensor())?)
        })
    }

    pub fn contribute(&self, l: usize, ctx: &Tensor, z: &Tensor) -> Result<Tensor, ModelError> {
        self.with_constants(|b| {
            let t = b.tape();
            Ok(self
                .contribute_on(b, l, t.constant(ctx.clone()), t.constant(z.clone()))?
                .to_tensor())
        })
    }

    /// The scale's spectrum `h^s` from its final context.
    pub fn reconstruct_scale(&self, s: usize, ctx: &Tensor) -> Result<ScaleSpectrum, ModelError> {
        let dofs = self.with_constants(|b| {
            Ok(self
                .head_on(b, s, b.tape().constant(ctx.clone()))?
                .to_tensor())
        })?;
        Ok(ScaleSpectrum::from_dofs(&self.partition, s, dofs.data())?)
    }

    pub fn ascend(&self, s: usize, ctx: &Tensor) -> Result<Tensor, ModelError> {
        self.with_constants(|b| {
            Ok(self
                .ascend_on(b, s, b.tape().constant(ctx.clone()))?
                .to_tensor())
        })
    }

    /// Runs the decoder top-down on fixed latents.
    pub fn decode(&self, latents: &[Tensor]) -> Result<Decoded, ModelError> {
        if latents.len() != self.depth() {
            return Err(ModelError::Shape {
                what: "latent list",
                expected: vec![self.depth()],
                actual: vec![latents.len()],
            });
        }
        let spectra = self.with_constants(|b| {
            let t = b.tape();
            let mut ctx = self.initial_context_on(b);
            let mut spectra = Vec::with_capacity(self.num_scales());
            for s in 0..self.num_scales() {
                if s > 0 {
                    ctx = self.ascend_on(b, s, ctx)?;
                }
                for l in self.scale_layers(s) {
                    ctx = self.contribute_on(b, l, ctx, t.constant(latents[l].clone()))?;
                }
                let dofs = self.head_on(b, s, ctx)?.to_tensor();
                spectra.push(ScaleSpectrum::from_dofs(&self.partition, s, dofs.data())?);
            }
            Ok(spectra)
        })?;
        let image = recompose(&spectra, &self.partition)?;
        Ok(Decoded { spectra, image })
    }
}
