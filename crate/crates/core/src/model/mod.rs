//! The four segmentation networks as explicit layer graphs.
//!
//! Every network is a U-Net variant with batchnorm after each convolution,
//! stride-2 convolutions in place of 2x2 pooling and nearest-neighbor
//! upsampling in the decoder. The dual-encoder network runs a SAR branch at
//! the fine grid, pools it 3x3 onto the MSI grid, and from there keeps the
//! two branches in lockstep: at every level their features are concatenated
//! and forwarded to the decoder through a skip connection.

mod checkpoint;
mod graph;
mod inputs;
mod shapes;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use graph::{InputGrid, ModelGraph, Node, NodeOp};
pub use inputs::{fuse_inputs_for_fusenet, target_tensor, ModelInput, Preprocess};
pub use shapes::{verify_shapes, ConcatSite, ShapeReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Concat, Conv2d, Layer, MaxPool3, Relu, Scalar, Sigmoid, Upsample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    VisualIced,
    Fusenet,
    MsiOnly,
    SarOnly,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::VisualIced,
        ModelKind::Fusenet,
        ModelKind::MsiOnly,
        ModelKind::SarOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::VisualIced => "visual_iced",
            ModelKind::Fusenet => "fusenet",
            ModelKind::MsiOnly => "msi_only",
            ModelKind::SarOnly => "sar_only",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model kind {s:?}")))
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputGrid {
    /// Output on the coarse (MSI, 240 m) grid: S/3 x S/3.
    Msi240m,
    /// Output on the fine (SAR, 80 m) grid: S x S.
    Sar80m,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub base_width: usize,
    /// Encoder levels after the SAR/MSI grids are aligned.
    pub depth: usize,
    pub msi_bands: usize,
    pub sar_bands: usize,
    /// Training patch side in SAR pixels.
    pub patch_s: usize,
    pub output_grid: OutputGrid,
    /// Seed for weight initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::VisualIced,
            base_width: 32,
            depth: 4,
            msi_bands: 3,
            sar_bands: 1,
            patch_s: 720,
            output_grid: OutputGrid::Msi240m,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        let mut c = Self {
            kind,
            ..Self::default()
        };
        if kind == ModelKind::SarOnly {
            c.output_grid = OutputGrid::Sar80m;
        }
        c
    }

    /// Total downsampling factor from the SAR grid to the bottleneck.
    pub fn alignment(&self) -> usize {
        3 << self.depth
    }

    /// Number of input channels seen by the first convolution of each input.
    pub fn input_channels(&self) -> Vec<usize> {
        match self.kind {
            ModelKind::VisualIced => vec![self.sar_bands, self.msi_bands],
            ModelKind::Fusenet => vec![self.sar_bands + 2],
            ModelKind::MsiOnly => vec![self.msi_bands],
            ModelKind::SarOnly => vec![self.sar_bands],
        }
    }

    /// Side of the output for a SAR patch of `s` pixels.
    pub fn output_side(&self, s: usize) -> usize {
        match self.output_grid {
            OutputGrid::Msi240m => s / 3,
            OutputGrid::Sar80m => s,
        }
    }

    /// Output pixels per SAR pixel along one axis, as a divisor of SAR sizes.
    pub fn output_ratio(&self) -> usize {
        match self.output_grid {
            OutputGrid::Msi240m => 3,
            OutputGrid::Sar80m => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::invalid(format!("depth must be in 1..=8, got {}", self.depth)));
        }
        if self.base_width < 4 {
            return Err(Error::invalid(format!("base_width must be at least 4, got {}", self.base_width)));
        }
        if self.msi_bands == 0 || self.sar_bands == 0 {
            return Err(Error::invalid("band counts must be positive"));
        }
        if self.kind == ModelKind::Fusenet && self.msi_bands < 2 {
            return Err(Error::invalid("fusenet needs at least two MSI bands"));
        }
        if self.patch_s == 0 || !self.patch_s.is_multiple_of(self.alignment()) {
            return Err(Error::invalid(format!(
                "patch_s {} must be a positive multiple of 3*2^depth = {}",
                self.patch_s,
                self.alignment()
            )));
        }
        if self.kind == ModelKind::SarOnly && self.output_grid != OutputGrid::Sar80m {
            return Err(Error::invalid("sar_only produces output on the SAR grid"));
        }
        if matches!(self.kind, ModelKind::Fusenet | ModelKind::MsiOnly) && self.output_grid != OutputGrid::Msi240m {
            return Err(Error::invalid("single-encoder MSI-grid networks produce output on the MSI grid"));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_width << level
    }
}

/// Build the network described by `config` with seeded He-uniform weights.
pub fn build<T: Scalar>(config: &ModelConfig) -> Result<ModelGraph<T>> {
    config.validate()?;
    let mut b = Builder::new(config.init_seed);
    match config.kind {
        ModelKind::VisualIced => build_dual(&mut b, config),
        ModelKind::Fusenet => {
            let x = b.input("fused", config.sar_bands + 2, InputGrid::Msi);
            build_unet(&mut b, config, x, config.sar_bands + 2)
        }
        ModelKind::MsiOnly => {
            let x = b.input("msi", config.msi_bands, InputGrid::Msi);
            build_unet(&mut b, config, x, config.msi_bands)
        }
        ModelKind::SarOnly => {
            let x = b.input("sar", config.sar_bands, InputGrid::Sar);
            build_unet(&mut b, config, x, config.sar_bands)
        }
    }
    Ok(b.finish(config.clone()))
}

struct Builder<T> {
    nodes: Vec<Node<T>>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<T> {
    fn new(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn push(&mut self, name: String, op: NodeOp<T>, inputs: Vec<usize>) -> usize {
        self.nodes.push(Node { name, op, inputs });
        self.nodes.len() - 1
    }

    fn input(&mut self, name: &str, channels: usize, grid: InputGrid) -> usize {
        self.push(name.to_string(), NodeOp::Input { channels, grid }, vec![])
    }

    fn layer(&mut self, name: String, layer: Layer<T>, inputs: Vec<usize>) -> usize {
        self.push(name, NodeOp::Layer(layer), inputs)
    }

    fn conv(&mut self, name: String, x: usize, cin: usize, cout: usize, stride: usize) -> usize {
        let conv = Conv2d::new(cin, cout, stride, &mut self.rng);
        self.layer(name, Layer::Conv(conv), vec![x])
    }

    /// conv -> batchnorm -> relu
    fn conv_bn_relu(&mut self, name: &str, x: usize, cin: usize, cout: usize, stride: usize) -> usize {
        let c = self.conv(format!("{name}.conv"), x, cin, cout, stride);
        let n = self.layer(format!("{name}.bn"), Layer::BatchNorm(BatchNorm2d::new(cout)), vec![c]);
        self.layer(format!("{name}.relu"), Layer::Relu(Relu::new()), vec![n])
    }

    /// Two conv-bn-relu blocks.
    fn conv_set(&mut self, name: &str, x: usize, cin: usize, cout: usize) -> usize {
        let a = self.conv_bn_relu(&format!("{name}.a"), x, cin, cout, 1);
        self.conv_bn_relu(&format!("{name}.b"), a, cout, cout, 1)
    }

    fn down(&mut self, name: &str, x: usize, c: usize) -> usize {
        self.conv_bn_relu(name, x, c, c, 2)
    }

    fn pool(&mut self, name: &str, x: usize) -> usize {
        self.layer(name.to_string(), Layer::MaxPool(MaxPool3::new()), vec![x])
    }

    fn upsample(&mut self, name: &str, x: usize, factor: usize) -> usize {
        self.layer(name.to_string(), Layer::Upsample(Upsample::new(factor)), vec![x])
    }

    fn concat(&mut self, name: &str, xs: Vec<usize>) -> usize {
        self.layer(name.to_string(), Layer::Concat(Concat::new()), xs)
    }

    fn head(&mut self, x: usize, cin: usize) -> usize {
        let c = self.conv("head.conv".into(), x, cin, 1, 1);
        self.layer("head.sigmoid".into(), Layer::Sigmoid(Sigmoid::new()), vec![c])
    }

    fn finish(self, config: ModelConfig) -> ModelGraph<T> {
        ModelGraph::new(config, self.nodes)
    }
}

fn build_dual<T: Scalar>(b: &mut Builder<T>, cfg: &ModelConfig) {
    let sar = b.input("sar", cfg.sar_bands, InputGrid::Sar);
    let msi = b.input("msi", cfg.msi_bands, InputGrid::Msi);
    let w0 = cfg.width(0);

    // Extra SAR stage on the fine grid, pooled onto the MSI grid.
    let sar_fine = b.conv_set("sar.enc0", sar, cfg.sar_bands, w0);
    let mut s = b.pool("sar.pool", sar_fine);
    let mut m = b.conv_set("msi.enc0", msi, cfg.msi_bands, w0);

    let mut skips = Vec::with_capacity(cfg.depth);
    for level in 1..=cfg.depth {
        let cin = cfg.width(level - 1);
        let cout = cfg.width(level);
        skips.push(b.concat(&format!("skip{}", level - 1), vec![s, m]));
        let sd = b.down(&format!("sar.down{level}"), s, cin);
        s = b.conv_set(&format!("sar.enc{level}"), sd, cin, cout);
        let md = b.down(&format!("msi.down{level}"), m, cin);
        m = b.conv_set(&format!("msi.enc{level}"), md, cin, cout);
    }
    let wd = cfg.width(cfg.depth);
    let fused = b.concat("bottleneck.cat", vec![s, m]);
    let mut x = b.conv_set("bottleneck", fused, 2 * wd, wd);
    let mut xc = wd;
    for level in (0..cfg.depth).rev() {
        let up = b.upsample(&format!("dec{level}.up"), x, 2);
        let cat = b.concat(&format!("dec{level}.cat"), vec![up, skips[level]]);
        let wl = cfg.width(level);
        x = b.conv_set(&format!("dec{level}"), cat, xc + 2 * wl, wl);
        xc = wl;
    }
    if cfg.output_grid == OutputGrid::Sar80m {
        let up = b.upsample("fine.up", x, 3);
        let cat = b.concat("fine.cat", vec![up, sar_fine]);
        x = b.conv_set("fine", cat, xc + w0, w0);
    }
    b.head(x, w0);
}

fn build_unet<T: Scalar>(b: &mut Builder<T>, cfg: &ModelConfig, input: usize, cin: usize) {
    let mut x = b.conv_set("enc0", input, cin, cfg.width(0));
    let mut skips = Vec::with_capacity(cfg.depth);
    for level in 1..=cfg.depth {
        skips.push(x);
        let c = cfg.width(level - 1);
        let d = b.down(&format!("down{level}"), x, c);
        x = b.conv_set(&format!("enc{level}"), d, c, cfg.width(level));
    }
    let mut xc = cfg.width(cfg.depth);
    for level in (0..cfg.depth).rev() {
        let up = b.upsample(&format!("dec{level}.up"), x, 2);
        let cat = b.concat(&format!("dec{level}.cat"), vec![up, skips[level]]);
        let wl = cfg.width(level);
        x = b.conv_set(&format!("dec{level}"), cat, xc + wl, wl);
        xc = wl;
    }
    b.head(x, cfg.width(0));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisibility() {
        let mut c = ModelConfig::default();
        c.patch_s = 240;
        assert!(c.validate().is_ok());
        c.patch_s = 200;
        assert!(c.validate().is_err());
        c.patch_s = 720;
        c.base_width = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_channel_plan() {
        let g = build::<f32>(&ModelConfig::default()).unwrap();
        let bottleneck = g
            .nodes()
            .iter()
            .find(|n| n.name == "bottleneck.b.conv")
            .unwrap();
        match &bottleneck.op {
            NodeOp::Layer(Layer::Conv(c)) => assert_eq!(c.cout, 512),
            _ => panic!(),
        }
    }

    #[test]
    fn kind_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
    }
}
