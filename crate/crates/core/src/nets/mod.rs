//! The five spatio-temporal regressors: convGRU-CNN, CNN-GRU, 2D CNN, 1D CNN and GRU.
//!
//! Every model maps a window `[batch, t_s, d_c]` of cropped A-scans to one force
//! estimate `[batch, 1]`. Parameters live in a name-ordered [`ModelParams`] map
//! and are bound to a [`Graph`] as leaves for each forward pass.

pub mod checkpoint;
pub mod layers;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use octforce_autodiff::{Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::NetError;
use layers::{convgru_cell, gru_cell, resblock_1d, resblock_2d, GruParams, Init, ResBlockParams};

type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArchId {
    ConvGruCnn,
    CnnGru,
    Cnn2d,
    Cnn1d,
    Gru,
}

impl ArchId {
    pub const ALL: [ArchId; 5] = [ArchId::ConvGruCnn, ArchId::CnnGru, ArchId::Cnn2d, ArchId::Cnn1d, ArchId::Gru];

    pub fn name(self) -> &'static str {
        match self {
            ArchId::ConvGruCnn => "convgru-cnn",
            ArchId::CnnGru => "cnn-gru",
            ArchId::Cnn2d => "2d-cnn",
            ArchId::Cnn1d => "1d-cnn",
            ArchId::Gru => "gru",
        }
    }

    fn code(self) -> f64 {
        Self::ALL.iter().position(|&a| a == self).unwrap() as f64
    }

    fn from_code(c: f64) -> Option<Self> {
        Self::ALL.get(c as usize).copied().filter(|_| c >= 0.0 && c.fract() == 0.0)
    }

    /// Whether the model sees more than the last A-scan of a window.
    pub fn is_temporal(self) -> bool {
        self != ArchId::Cnn1d
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchId {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| NetError::UnknownArch(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResGroup {
    pub blocks: usize,
    /// Feature maps of every block in the group.
    pub features: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGruSpec {
    pub layers: usize,
    pub maps: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruSpec {
    pub layers: usize,
    pub hidden: usize,
}

/// Sizes of every architecture's building blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    /// Residual trunk shared by the CNN-based models. The first block of each
    /// group uses `first_stride` and switches to the group's feature count.
    pub resnet_groups: Vec<ResGroup>,
    pub kernel: usize,
    pub first_stride: usize,
    pub convgru: ConvGruSpec,
    /// The pure recurrent model.
    pub gru: GruSpec,
    /// Recurrent layers on top of the per-step CNN in CNN-GRU.
    pub cnn_gru: GruSpec,
}

impl Default for LayerSpec {
    fn default() -> Self {
        Self {
            resnet_groups: vec![
                ResGroup { blocks: 2, features: 16 },
                ResGroup { blocks: 2, features: 32 },
                ResGroup { blocks: 2, features: 64 },
            ],
            kernel: 3,
            first_stride: 2,
            convgru: ConvGruSpec { layers: 2, maps: 8, kernel: 3 },
            gru: GruSpec { layers: 3, hidden: 32 },
            cnn_gru: GruSpec { layers: 2, hidden: 32 },
        }
    }
}

impl LayerSpec {
    /// Desk-scale configuration used for the calibration and comparison experiments.
    pub fn small() -> Self {
        Self {
            resnet_groups: vec![
                ResGroup { blocks: 1, features: 8 },
                ResGroup { blocks: 1, features: 16 },
                ResGroup { blocks: 1, features: 16 },
            ],
            kernel: 3,
            first_stride: 2,
            convgru: ConvGruSpec { layers: 1, maps: 6, kernel: 3 },
            gru: GruSpec { layers: 3, hidden: 24 },
            cnn_gru: GruSpec { layers: 2, hidden: 24 },
        }
    }

    /// Smallest sensible configuration, for gradient checks.
    pub fn tiny() -> Self {
        Self {
            resnet_groups: vec![ResGroup { blocks: 2, features: 2 }, ResGroup { blocks: 1, features: 3 }],
            kernel: 3,
            first_stride: 2,
            convgru: ConvGruSpec { layers: 2, maps: 2, kernel: 3 },
            gru: GruSpec { layers: 3, hidden: 3 },
            cnn_gru: GruSpec { layers: 2, hidden: 3 },
        }
    }

    pub fn validate(&self, arch: ArchId) -> Result<()> {
        let mut problems = Vec::new();
        let uses_trunk = matches!(arch, ArchId::ConvGruCnn | ArchId::CnnGru | ArchId::Cnn2d | ArchId::Cnn1d);
        if uses_trunk {
            if self.resnet_groups.is_empty() {
                problems.push("resnet_groups must not be empty".to_string());
            }
            if self.resnet_groups.iter().any(|g| g.blocks == 0 || g.features == 0) {
                problems.push("every resnet group needs >= 1 block and >= 1 feature map".to_string());
            }
            if self.resnet_groups.windows(2).any(|w| w[1].features < w[0].features) {
                problems.push("feature maps must be non-decreasing across groups".to_string());
            }
            if self.kernel % 2 == 0 {
                problems.push(format!("kernel {} must be odd", self.kernel));
            }
            if !(1..=2).contains(&self.first_stride) {
                problems.push(format!("first_stride {} must be 1 or 2", self.first_stride));
            }
        }
        if arch == ArchId::ConvGruCnn {
            let c = self.convgru;
            if c.layers == 0 || c.maps == 0 {
                problems.push("convgru needs >= 1 layer and >= 1 map".to_string());
            }
            if c.kernel % 2 == 0 {
                problems.push(format!("convgru kernel {} must be odd", c.kernel));
            }
        }
        for (used, name, g) in [(arch == ArchId::Gru, "gru", self.gru), (arch == ArchId::CnnGru, "cnn_gru", self.cnn_gru)] {
            if used && (g.layers == 0 || g.hidden == 0) {
                problems.push(format!("{name} needs >= 1 layer and >= 1 hidden unit"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(NetError::InvalidSpec(problems.join("; ")))
        }
    }

    /// Flat numeric encoding stored in checkpoints.
    pub fn encode(&self) -> Vec<f64> {
        let mut v = vec![self.kernel as f64, self.first_stride as f64, self.resnet_groups.len() as f64];
        for g in &self.resnet_groups {
            v.extend([g.blocks as f64, g.features as f64]);
        }
        let c = self.convgru;
        v.extend([c.layers, c.maps, c.kernel, self.gru.layers, self.gru.hidden, self.cnn_gru.layers, self.cnn_gru.hidden].map(|x| x as f64));
        v
    }

    pub fn decode(v: &[f64]) -> Result<Self> {
        let bad = || NetError::Checkpoint("malformed layer spec".into());
        let as_count = |x: &f64| -> Result<usize> {
            if *x >= 0.0 && x.fract() == 0.0 && *x < 1e9 {
                Ok(*x as usize)
            } else {
                Err(bad())
            }
        };
        let n: Vec<usize> = v.iter().map(as_count).collect::<Result<_>>()?;
        let groups = *n.get(2).ok_or_else(bad)?;
        if n.len() != 3 + 2 * groups + 7 {
            return Err(bad());
        }
        let resnet_groups = (0..groups).map(|i| ResGroup { blocks: n[3 + 2 * i], features: n[4 + 2 * i] }).collect();
        let r = &n[3 + 2 * groups..];
        Ok(Self {
            resnet_groups,
            kernel: n[0],
            first_stride: n[1],
            convgru: ConvGruSpec { layers: r[0], maps: r[1], kernel: r[2] },
            gru: GruSpec { layers: r[3], hidden: r[4] },
            cnn_gru: GruSpec { layers: r[5], hidden: r[6] },
        })
    }
}

/// Parameter count of a residual trunk whose convolutions have `kernel_area`
/// taps (`k` in 1D, `k*k` in 2D). Per block: two convolutions with bias plus a
/// 1-tap projection with bias whenever the stride or channel count changes.
pub fn trunk_param_count(spec: &LayerSpec, in_channels: usize, kernel_area: usize) -> usize {
    let mut c_in = in_channels;
    let mut total = 0;
    for g in &spec.resnet_groups {
        for b in 0..g.blocks {
            let f = g.features;
            let stride = if b == 0 { spec.first_stride } else { 1 };
            total += c_in * f * kernel_area + f + f * f * kernel_area + f;
            if stride != 1 || c_in != f {
                total += c_in * f + f;
            }
            c_in = f;
        }
    }
    total
}

/// Named parameter tensors in a stable (lexicographic) order.
pub type ModelParams = BTreeMap<String, Tensor>;

/// Parameters bound into one graph.
#[derive(Debug, Clone, Default)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.try_get(name).ok_or_else(|| NetError::MissingParam(name.to_string()))
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

impl FromIterator<(String, Var)> for ParamVars {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Self { vars: iter.into_iter().collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: ArchId,
    pub spec: LayerSpec,
    pub t_s: usize,
    pub d_c: usize,
    pub params: ModelParams,
}

/// Builds `arch` for `[batch, t_s, d_c]` inputs with parameters drawn from `seed`.
pub fn build(arch: ArchId, spec: &LayerSpec, t_s: usize, d_c: usize, seed: u64) -> Result<Model> {
    spec.validate(arch)?;
    if t_s == 0 || d_c == 0 {
        return Err(NetError::InvalidSpec(format!("input window {t_s}x{d_c} must be non-empty")));
    }
    let mut params = ModelParams::new();
    let mut init = Init { params: &mut params, rng: ChaCha8Rng::seed_from_u64(seed) };
    let k1 = [spec.kernel];
    let k2 = [spec.kernel, spec.kernel];
    let trunk = |init: &mut Init, c_in: usize, kernel: &[usize]| -> usize {
        let mut c = c_in;
        for (gi, g) in spec.resnet_groups.iter().enumerate() {
            for b in 0..g.blocks {
                let stride = if b == 0 { spec.first_stride } else { 1 };
                init.resblock(&format!("trunk.g{gi}.b{b}"), c, g.features, kernel, stride != 1 || c != g.features);
                c = g.features;
            }
        }
        c
    };
    let head_in = match arch {
        ArchId::ConvGruCnn => {
            let cg = spec.convgru;
            let mut c = 1;
            for l in 0..cg.layers {
                init.gru(&format!("convgru.{l}"), c, cg.maps, &[cg.kernel]);
                c = cg.maps;
            }
            trunk(&mut init, c, &k1)
        }
        ArchId::Cnn1d => trunk(&mut init, 1, &k1),
        ArchId::Cnn2d => trunk(&mut init, 1, &k2),
        ArchId::CnnGru => {
            let f = trunk(&mut init, 1, &k1);
            let mut n_in = f;
            for l in 0..spec.cnn_gru.layers {
                init.gru(&format!("gru.{l}"), n_in, spec.cnn_gru.hidden, &[]);
                n_in = spec.cnn_gru.hidden;
            }
            n_in
        }
        ArchId::Gru => {
            let mut n_in = d_c;
            for l in 0..spec.gru.layers {
                init.gru(&format!("gru.{l}"), n_in, spec.gru.hidden, &[]);
                n_in = spec.gru.hidden;
            }
            n_in
        }
    };
    init.uniform("head.w".into(), vec![1, head_in], head_in);
    init.zeros("head.b".into(), vec![1]);
    Ok(Model { arch, spec: spec.clone(), t_s, d_c, params })
}

impl Model {
    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Inserts every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> ParamVars {
        ParamVars { vars: self.params.iter().map(|(k, t)| (k.clone(), g.leaf(t.clone()))).collect() }
    }

    /// `x: [batch, t_s, d_c]` -> `[batch, 1]`.
    pub fn forward(&self, g: &mut Graph, pv: &ParamVars, x: Var) -> Result<Var> {
        let xs = g.shape(x).to_vec();
        if xs.len() != 3 || xs[1] != self.t_s || xs[2] != self.d_c {
            return Err(NetError::InputShape { found: xs, t_s: self.t_s, d_c: self.d_c });
        }
        let batch = xs[0];
        let features = match self.arch {
            ArchId::ConvGruCnn => {
                let h = self.convgru_stack(g, pv, x, batch)?;
                let y = self.trunk(g, pv, h, false)?;
                g.global_avg_pool(y)?
            }
            ArchId::Cnn1d => {
                let last = g.select(x, self.t_s - 1)?;
                let last = g.reshape(last, vec![batch, 1, self.d_c])?;
                let y = self.trunk(g, pv, last, false)?;
                g.global_avg_pool(y)?
            }
            ArchId::Cnn2d => {
                let img = g.reshape(x, vec![batch, 1, self.t_s, self.d_c])?;
                let y = self.trunk(g, pv, img, true)?;
                g.global_avg_pool(y)?
            }
            ArchId::CnnGru => {
                let steps = g.reshape(x, vec![batch * self.t_s, 1, self.d_c])?;
                let y = self.trunk(g, pv, steps, false)?;
                let f = g.global_avg_pool(y)?;
                let nf = g.shape(f)[1];
                let seq = g.reshape(f, vec![batch, self.t_s, nf])?;
                self.gru_stack(g, pv, seq, batch, self.spec.cnn_gru)?
            }
            ArchId::Gru => self.gru_stack(g, pv, x, batch, self.spec.gru)?,
        };
        Ok(g.dense(features, pv.get("head.w")?, Some(pv.get("head.b")?))?)
    }

    /// Runs the convGRU layers over time and returns the top layer's final state.
    fn convgru_stack(&self, g: &mut Graph, pv: &ParamVars, x: Var, batch: usize) -> Result<Var> {
        let cg = self.spec.convgru;
        let cells: Vec<GruParams> =
            (0..cg.layers).map(|l| GruParams::lookup(pv, &format!("convgru.{l}"))).collect::<Result<_>>()?;
        let mut hs: Vec<Var> =
            (0..cg.layers).map(|_| g.constant(Tensor::zeros(vec![batch, cg.maps, self.d_c]))).collect();
        for t in 0..self.t_s {
            let xt = g.select(x, t)?;
            let mut input = g.reshape(xt, vec![batch, 1, self.d_c])?;
            for (h, cell) in hs.iter_mut().zip(&cells) {
                *h = convgru_cell(g, input, *h, cell)?;
                input = *h;
            }
        }
        Ok(*hs.last().expect("at least one layer"))
    }

    /// Stacked GRUs over `seq: [batch, t_s, features]`; returns the top final state.
    fn gru_stack(&self, g: &mut Graph, pv: &ParamVars, seq: Var, batch: usize, spec: GruSpec) -> Result<Var> {
        let cells: Vec<GruParams> =
            (0..spec.layers).map(|l| GruParams::lookup(pv, &format!("gru.{l}"))).collect::<Result<_>>()?;
        let mut hs: Vec<Var> = (0..spec.layers).map(|_| g.constant(Tensor::zeros(vec![batch, spec.hidden]))).collect();
        for t in 0..self.t_s {
            let mut input = g.select(seq, t)?;
            for (h, cell) in hs.iter_mut().zip(&cells) {
                *h = gru_cell(g, input, *h, cell)?;
                input = *h;
            }
        }
        Ok(*hs.last().expect("at least one layer"))
    }

    fn trunk(&self, g: &mut Graph, pv: &ParamVars, mut x: Var, two_d: bool) -> Result<Var> {
        for (gi, grp) in self.spec.resnet_groups.iter().enumerate() {
            for b in 0..grp.blocks {
                let stride = if b == 0 { self.spec.first_stride } else { 1 };
                let p = ResBlockParams::lookup(pv, &format!("trunk.g{gi}.b{b}"))?;
                x = if two_d { resblock_2d(g, x, &p, stride)? } else { resblock_1d(g, x, &p, stride)? };
            }
        }
        Ok(x)
    }

    /// Forward pass without recording, `windows: [batch, t_s, d_c]` flattened.
    pub fn predict(&self, windows: Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::no_grad();
        let pv = self.bind(&mut g);
        let x = g.constant(windows);
        let y = self.forward(&mut g, &pv, x)?;
        Ok(g.value(y).data().to_vec())
    }

    /// Checkpoint entries: `meta/*` descriptors followed by the parameters.
    pub fn to_entries(&self) -> Vec<(String, Tensor)> {
        let mut e = vec![
            ("meta/arch".to_string(), Tensor::scalar(self.arch.code())),
            ("meta/input".to_string(), Tensor::new(vec![2], vec![self.t_s as f64, self.d_c as f64]).unwrap()),
            ("meta/spec".to_string(), {
                let v = self.spec.encode();
                Tensor::new(vec![v.len()], v).unwrap()
            }),
        ];
        e.extend(self.params.iter().map(|(k, t)| (k.clone(), t.clone())));
        e
    }

    /// Inverse of [`Model::to_entries`]; entries outside `meta/arch|input|spec` that
    /// start with `meta/` are ignored.
    pub fn from_entries(entries: &[(String, Tensor)]) -> Result<Self> {
        let find = |n: &str| {
            entries
                .iter()
                .find(|(k, _)| k == n)
                .map(|(_, t)| t)
                .ok_or_else(|| NetError::Checkpoint(format!("missing entry {n}")))
        };
        let arch_code = find("meta/arch")?.item().ok_or_else(|| NetError::Checkpoint("meta/arch not scalar".into()))?;
        let arch = ArchId::from_code(arch_code).ok_or_else(|| NetError::Checkpoint(format!("bad arch code {arch_code}")))?;
        let input = find("meta/input")?.data();
        if input.len() != 2 {
            return Err(NetError::Checkpoint("meta/input must hold t_s and d_c".into()));
        }
        let spec = LayerSpec::decode(find("meta/spec")?.data())?;
        let (t_s, d_c) = (input[0] as usize, input[1] as usize);
        let reference = build(arch, &spec, t_s, d_c, 0)?;
        let mut params = ModelParams::new();
        for (name, shape_ref) in &reference.params {
            let t = find(name)?;
            if t.shape() != shape_ref.shape() {
                return Err(NetError::Checkpoint(format!(
                    "{name}: shape {:?} does not match architecture ({:?})",
                    t.shape(),
                    shape_ref.shape()
                )));
            }
            params.insert(name.clone(), t.clone());
        }
        Ok(Self { arch, spec, t_s, d_c, params })
    }
}
