//! Shared-encoder U-Net with a de-lit decoder and a shading-offset decoder.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Block, BlockCache, HeadCache, ParamLayout, TanhHead};
use super::real::Real;
use super::tensor::{upsample2, upsample2_backward, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of stride-2 downsamplings; the bottleneck sits at `H / 2^depth`.
    pub depth: usize,
    /// Channel width per level, `depth` entries.
    pub widths: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Whether the offset decoder also receives the encoder skip connections.
    pub offset_skips: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 5,
            widths: vec![32, 64, 128, 256, 512],
            in_channels: 3,
            out_channels: 3,
            offset_skips: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// `depth` levels with widths doubling from `base`.
    pub fn scaled(depth: usize, base: usize, seed: u64) -> Self {
        Self {
            depth,
            widths: (0..depth).map(|i| base << i).collect(),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.widths.len() != self.depth {
            return Err(Error::contract(format!(
                "model depth {} needs exactly that many widths, got {:?}",
                self.depth, self.widths
            )));
        }
        if self.widths.contains(&0) || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::contract("model widths and channel counts must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Decoder {
    levels: Vec<(Block, Block)>,
    head: TanhHead,
    skips: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelightModel {
    config: ModelConfig,
    layout: ParamLayout,
    stem: Block,
    down: Vec<(Block, Block)>,
    bottleneck: (Block, Block),
    delit: Decoder,
    offset: Decoder,
}

pub struct ModelOutput<T> {
    pub dlt: Tensor<T>,
    pub off: Option<Tensor<T>>,
}

struct DecoderTape<T> {
    levels: Vec<(BlockCache<T>, BlockCache<T>)>,
    head: HeadCache<T>,
}

/// Activations retained by [`DelightModel::forward`] for the backward pass.
pub struct ModelTape<T> {
    stem: BlockCache<T>,
    down: Vec<(BlockCache<T>, BlockCache<T>)>,
    bottleneck: (BlockCache<T>, BlockCache<T>),
    delit: DecoderTape<T>,
    offset: Option<DecoderTape<T>>,
}

impl Decoder {
    fn new(layout: &mut ParamLayout, name: &str, cfg: &ModelConfig, skips: bool) -> Self {
        let d = cfg.depth;
        let mut levels = Vec::with_capacity(d);
        for i in (0..d).rev() {
            let cin = if i == d - 1 { cfg.widths[d - 1] } else { cfg.widths[i + 1] };
            let w = cfg.widths[i];
            let up = Block::new(layout, &format!("{name}.{i}.up"), cin, w, 1);
            let merge = Block::new(layout, &format!("{name}.{i}.merge"), if skips { 2 * w } else { w }, w, 1);
            levels.push((up, merge));
        }
        let head = TanhHead::new(layout, &format!("{name}.head"), cfg.widths[0], cfg.out_channels);
        Self { levels, head, skips }
    }

    fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.levels.iter().flat_map(|(a, b)| [a, b])
    }

    fn forward<T: Real>(&self, p: &[T], bottom: &Tensor<T>, skips: &[&Tensor<T>]) -> (Tensor<T>, DecoderTape<T>) {
        let d = self.levels.len();
        let mut x = bottom.clone();
        let mut caches = Vec::with_capacity(d);
        for (k, (up, merge)) in self.levels.iter().enumerate() {
            let level = d - 1 - k;
            let (a, ca) = up.forward(p, &upsample2(&x));
            let joined = if self.skips { Tensor::concat(&a, skips[level]) } else { a };
            let (y, cb) = merge.forward(p, &joined);
            caches.push((ca, cb));
            x = y;
        }
        let (out, head) = self.head.forward(p, &x);
        (out, DecoderTape { levels: caches, head })
    }

    /// Returns the bottleneck gradient and adds skip gradients into `dskips`.
    fn backward<T: Real>(
        &self,
        p: &[T],
        grads: &mut [T],
        tape: &DecoderTape<T>,
        dout: &Tensor<T>,
        dskips: &mut [Tensor<T>],
    ) -> Tensor<T> {
        let d = self.levels.len();
        let mut dx = self.head.backward(p, grads, &tape.head, dout);
        for k in (0..d).rev() {
            let level = d - 1 - k;
            let (up, merge) = &self.levels[k];
            let (ca, cb) = &tape.levels[k];
            let djoined = merge.backward(p, grads, cb, &dx);
            let da = if self.skips {
                let (da, dskip) = djoined.split(up.cout);
                dskips[level].add_assign(&dskip);
                da
            } else {
                djoined
            };
            dx = upsample2_backward(&up.backward(p, grads, ca, &da));
        }
        dx
    }
}

impl DelightModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut layout = ParamLayout::default();
        let w = &config.widths;
        let stem = Block::new(&mut layout, "enc.0.conv", config.in_channels, w[0], 1);
        let mut down = Vec::new();
        for i in 1..config.depth {
            down.push((
                Block::new(&mut layout, &format!("enc.{i}.down"), w[i - 1], w[i], 2),
                Block::new(&mut layout, &format!("enc.{i}.conv"), w[i], w[i], 1),
            ));
        }
        let last = w[config.depth - 1];
        let bottleneck = (
            Block::new(&mut layout, "enc.bottleneck.down", last, last, 2),
            Block::new(&mut layout, "enc.bottleneck.conv", last, last, 1),
        );
        let delit = Decoder::new(&mut layout, "dec_delit", &config, true);
        let offset = Decoder::new(&mut layout, "dec_offset", &config, config.offset_skips);
        Ok(Self {
            config,
            layout,
            stem,
            down,
            bottleneck,
            delit,
            offset,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// Deterministic initial parameters drawn from the config seed.
    pub fn init_params<T: Real>(&self) -> Vec<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut params = vec![T::zero(); self.layout.total];
        self.stem.init(&mut params, &mut rng);
        for (a, b) in &self.down {
            a.init(&mut params, &mut rng);
            b.init(&mut params, &mut rng);
        }
        self.bottleneck.0.init(&mut params, &mut rng);
        self.bottleneck.1.init(&mut params, &mut rng);
        for dec in [&self.delit, &self.offset] {
            for b in dec.blocks() {
                b.init(&mut params, &mut rng);
            }
            dec.head.init(&mut params, &mut rng);
        }
        params
    }

    /// Parameter range `[start, end)` owned by the offset decoder.
    pub fn offset_decoder_range(&self) -> (usize, usize) {
        let slots = &self.layout.slots;
        let first = slots.iter().find(|s| s.name.starts_with("dec_offset")).expect("offset decoder params");
        (first.offset, self.layout.total)
    }

    pub fn check_input<T: Real>(&self, x: &Tensor<T>) -> Result<()> {
        let m = 1usize << self.config.depth;
        if x.c != self.config.in_channels {
            return Err(Error::contract(format!(
                "model expects {} input channels, got {}",
                self.config.in_channels, x.c
            )));
        }
        if x.h == 0 || x.w == 0 || !x.h.is_multiple_of(m) || !x.w.is_multiple_of(m) {
            return Err(Error::contract(format!(
                "input {}x{} is not divisible by 2^{} = {m}",
                x.h, x.w, self.config.depth
            )));
        }
        Ok(())
    }

    /// Runs the encoder and the de-lit decoder, plus the offset decoder when
    /// `want_offset` is set.
    pub fn forward<T: Real>(&self, p: &[T], x: &Tensor<T>, want_offset: bool) -> Result<(ModelOutput<T>, ModelTape<T>)> {
        self.check_input(x)?;
        if p.len() != self.layout.total {
            return Err(Error::contract("parameter vector does not match the model layout"));
        }
        let (e0, stem) = self.stem.forward(p, x);
        let mut skips = vec![e0];
        let mut down = Vec::with_capacity(self.down.len());
        for (a, b) in &self.down {
            let (t, ca) = a.forward(p, skips.last().expect("stem output"));
            let (e, cb) = b.forward(p, &t);
            down.push((ca, cb));
            skips.push(e);
        }
        let (t, c0) = self.bottleneck.0.forward(p, skips.last().expect("encoder output"));
        let (bottom, c1) = self.bottleneck.1.forward(p, &t);
        let skip_refs: Vec<&Tensor<T>> = skips.iter().collect();
        let (dlt, delit) = self.delit.forward(p, &bottom, &skip_refs);
        let (off, offset) = if want_offset {
            let (o, t) = self.offset.forward(p, &bottom, &skip_refs);
            (Some(o), Some(t))
        } else {
            (None, None)
        };
        Ok((
            ModelOutput { dlt, off },
            ModelTape {
                stem,
                down,
                bottleneck: (c0, c1),
                delit,
                offset,
            },
        ))
    }

    /// De-lit prediction only (inference path).
    pub fn infer<T: Real>(&self, p: &[T], x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(p, x, false)?.0.dlt)
    }

    /// Accumulates parameter gradients for output gradients `d_dlt` / `d_off`.
    pub fn backward<T: Real>(
        &self,
        p: &[T],
        grads: &mut [T],
        tape: &ModelTape<T>,
        d_dlt: Option<&Tensor<T>>,
        d_off: Option<&Tensor<T>>,
    ) -> Result<()> {
        if grads.len() != self.layout.total {
            return Err(Error::contract("gradient vector does not match the model layout"));
        }
        let mut dskips: Vec<Tensor<T>> = Vec::with_capacity(self.config.depth);
        dskips.push(Tensor::zeros(self.stem.cout, tape.stem.out_h(), tape.stem.out_w()));
        for ((blk, _), (ca, _)) in self.down.iter().zip(&tape.down) {
            dskips.push(Tensor::zeros(blk.cout, ca.out_h(), ca.out_w()));
        }
        let (bc, bh, bw) = (self.bottleneck.1.cout, tape.bottleneck.1.out_h(), tape.bottleneck.1.out_w());
        let mut dbottom = Tensor::zeros(bc, bh, bw);
        if let Some(d) = d_dlt {
            dbottom.add_assign(&self.delit.backward(p, grads, &tape.delit, d, &mut dskips));
        }
        if let Some(d) = d_off {
            let t = tape
                .offset
                .as_ref()
                .ok_or_else(|| Error::contract("offset gradient given but the offset decoder did not run"))?;
            dbottom.add_assign(&self.offset.backward(p, grads, t, d, &mut dskips));
        }
        let dt = self.bottleneck.1.backward(p, grads, &tape.bottleneck.1, &dbottom);
        let mut de = self.bottleneck.0.backward(p, grads, &tape.bottleneck.0, &dt);
        for (k, ((a, b), (ca, cb))) in self.down.iter().zip(&tape.down).enumerate().rev() {
            de.add_assign(&dskips[k + 1]);
            let dt = b.backward(p, grads, cb, &de);
            de = a.backward(p, grads, ca, &dt);
        }
        de.add_assign(&dskips[0]);
        self.stem.backward(p, grads, &tape.stem, &de);
        Ok(())
    }
}
