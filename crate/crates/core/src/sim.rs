//! Synthetic needle-tip physics and OCT A-scan rendering.
//!
//! The epoxy layer between shaft and cone tip is a Kelvin-Voigt element with a
//! linearly stiffening spring, `c * d(delta)/dt + k0 * (1 + alpha * delta) * delta = F`,
//! integrated with implicit Euler at the A-scan rate. Compression moves the tip's
//! lower surface towards the fiber, which shows up as a moving reflection peak in
//! each A-scan.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::KeyValues;
use crate::error::SimError;
use crate::streams::{AScan, ForceSample, ForceStream, OctStream};

pub const OCT_RATE_HZ: f64 = 5500.0;
pub const FORCE_RATE_HZ: f64 = 500.0;

/// Fraction of the rupture force that remains right after a rupture.
pub const POST_RUPTURE_FRACTION: f64 = 0.2;

const STREAM_TRAJECTORY: u64 = 1;
const STREAM_PHASE: u64 = 2;
const STREAM_SCAN: u64 = 3;
const STREAM_RESIDUAL: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `counter`-th draw of sub-stream `stream` under a master seed:
/// `splitmix64(master ^ splitmix64(splitmix64(stream) ^ counter))`.
pub fn derive_seed(master: u64, stream: u64, counter: u64) -> u64 {
    splitmix64(master ^ splitmix64(splitmix64(stream) ^ counter))
}

fn ensure_finite(what: &'static str, v: f64) -> Result<(), SimError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(SimError::NonFinite { what, value: v })
    }
}

/// Mechanical description of one needle's epoxy layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NeedlePreset {
    pub name: String,
    /// Base stiffness, mN per µm.
    pub k0: f64,
    /// Stiffening coefficient, 1/µm.
    pub alpha: f64,
    /// Damping, mN·s per µm.
    pub c: f64,
    /// Maximum force, mN.
    pub f_max: f64,
    pub layer_thickness_um: f64,
}

/// Stiffening coefficient shared by the built-in presets.
pub const DEFAULT_ALPHA: f64 = 0.002;
/// Relaxation time `c / k0` of the built-in presets, seconds.
pub const DEFAULT_RELAXATION_S: f64 = 0.02;
pub const DEFAULT_LAYER_UM: f64 = 500.0;
/// Steady-state deformation at `f_max` as a fraction of the layer.
pub const FULL_SCALE_FRACTION: f64 = 0.8;

impl NeedlePreset {
    pub fn new(
        name: impl Into<String>,
        k0: f64,
        alpha: f64,
        c: f64,
        f_max: f64,
        layer_thickness_um: f64,
    ) -> Result<Self, SimError> {
        let p = Self { name: name.into(), k0, alpha, c, f_max, layer_thickness_um };
        p.validate()?;
        Ok(p)
    }

    /// Preset whose steady-state deformation at `f_max` is 80% of a 500 µm layer,
    /// with the shared stiffening coefficient and a 20 ms relaxation time.
    pub fn scaled(name: impl Into<String>, f_max: f64) -> Result<Self, SimError> {
        let d = FULL_SCALE_FRACTION * DEFAULT_LAYER_UM;
        let k0 = f_max / ((1.0 + DEFAULT_ALPHA * d) * d);
        Self::new(name, k0, DEFAULT_ALPHA, DEFAULT_RELAXATION_S * k0, f_max, DEFAULT_LAYER_UM)
    }

    /// Softest epoxy, 379 mN full scale.
    pub fn needle1() -> Self {
        Self::scaled("needle1", 379.0).expect("valid preset")
    }

    /// Medium epoxy, 974 mN full scale.
    pub fn needle2() -> Self {
        Self::scaled("needle2", 974.0).expect("valid preset")
    }

    /// Stiffest epoxy, 3202 mN full scale.
    pub fn needle3() -> Self {
        Self::scaled("needle3", 3202.0).expect("valid preset")
    }

    pub fn builtin_names() -> [&'static str; 3] {
        ["needle1", "needle2", "needle3"]
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "needle1" => Some(Self::needle1()),
            "needle2" => Some(Self::needle2()),
            "needle3" => Some(Self::needle3()),
            _ => None,
        }
    }

    /// Reads `name`, `k0`, `alpha`, `c`, `f_max` and `layer_thickness_um` keys.
    /// Missing keys fall back to the built-in preset named by `base` (if given).
    pub fn from_key_values(kv: &KeyValues) -> Result<Self, SimError> {
        let base = match kv.get("base") {
            Some(b) => Some(Self::builtin(b).ok_or_else(|| SimError::UnknownPreset(b.to_string()))?),
            None => None,
        };
        let num = |key: &'static str, fallback: Option<f64>| -> Result<f64, SimError> {
            match kv.get_f64(key) {
                Some(Ok(v)) => Ok(v),
                Some(Err(raw)) => Err(SimError::InvalidPreset(format!("{key} = {raw:?} is not a number"))),
                None => fallback.ok_or_else(|| SimError::InvalidPreset(format!("missing key {key}"))),
            }
        };
        let name = kv
            .get("name")
            .map(str::to_string)
            .or_else(|| base.as_ref().map(|b| b.name.clone()))
            .ok_or_else(|| SimError::InvalidPreset("missing key name".into()))?;
        Self::new(
            name,
            num("k0", base.as_ref().map(|b| b.k0))?,
            num("alpha", base.as_ref().map(|b| b.alpha))?,
            num("c", base.as_ref().map(|b| b.c))?,
            num("f_max", base.as_ref().map(|b| b.f_max))?,
            num("layer_thickness_um", base.as_ref().map(|b| b.layer_thickness_um))?,
        )
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidPreset(m));
        for (what, v) in [
            ("k0", self.k0),
            ("alpha", self.alpha),
            ("c", self.c),
            ("f_max", self.f_max),
            ("layer_thickness_um", self.layer_thickness_um),
        ] {
            if !v.is_finite() {
                return bad(format!("{what} is not finite"));
            }
        }
        if self.k0 <= 0.0 {
            return bad(format!("k0 must be > 0, got {}", self.k0));
        }
        if self.c < 0.0 || self.alpha < 0.0 {
            return bad("c and alpha must be >= 0".into());
        }
        if self.f_max <= 0.0 || self.layer_thickness_um <= 0.0 {
            return bad("f_max and layer_thickness_um must be > 0".into());
        }
        let d = self.steady_state_deformation(self.f_max);
        if d > self.layer_thickness_um {
            return bad(format!(
                "steady-state deformation {d:.1} µm at f_max exceeds layer thickness {} µm",
                self.layer_thickness_um
            ));
        }
        Ok(())
    }

    pub fn stiffness(&self, delta_um: f64) -> f64 {
        self.k0 * (1.0 + self.alpha * delta_um)
    }

    /// Root `delta >= 0` of `k0 * (1 + alpha * delta) * delta = force`.
    pub fn steady_state_deformation(&self, force: f64) -> f64 {
        positive_root(self.k0 * self.alpha, self.k0, force)
    }

    pub fn relaxation_time(&self) -> f64 {
        self.c / self.k0
    }
}

/// Non-negative root of `a x^2 + b x = rhs` for `a >= 0`, `b > 0`, `rhs >= 0`,
/// in the cancellation-free form `2 rhs / (b + sqrt(b^2 + 4 a rhs))`.
fn positive_root(a: f64, b: f64, rhs: f64) -> f64 {
    2.0 * rhs / (b + (b * b + 4.0 * a * rhs).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DeformState {
    pub delta_um: f64,
    /// Timestamp of the last update, seconds.
    pub t_last: f64,
}

impl DeformState {
    pub fn at_rest(t: f64) -> Self {
        Self { delta_um: 0.0, t_last: t }
    }
}

/// One implicit-Euler step of `c * d(delta)/dt + k(delta) * delta = force`.
///
/// Returns the new deformation in µm (clamped to the layer) and the advanced state.
pub fn deform_step(
    state: DeformState,
    force_mn: f64,
    dt: f64,
    preset: &NeedlePreset,
) -> Result<(f64, DeformState), SimError> {
    ensure_finite("force", force_mn)?;
    ensure_finite("dt", dt)?;
    if dt <= 0.0 {
        return Err(SimError::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    if force_mn < 0.0 || force_mn > preset.f_max {
        return Err(SimError::InvalidInput(format!(
            "force {force_mn} mN outside [0, {}]",
            preset.f_max
        )));
    }
    // c (d' - d)/dt + k0 (1 + alpha d') d' = F
    //   -> k0 alpha d'^2 + (k0 + c/dt) d' = F + c d / dt
    let damp = preset.c / dt;
    let rhs = force_mn + damp * state.delta_um;
    let delta = positive_root(preset.k0 * preset.alpha, preset.k0 + damp, rhs)
        .clamp(0.0, preset.layer_thickness_um);
    Ok((delta, DeformState { delta_um: delta, t_last: state.t_last + dt }))
}

/// Geometry and noise model of the simulated A-scan.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalParams {
    pub depth_px: usize,
    pub px_per_um: f64,
    /// Cone-tip lower surface at zero force, px.
    pub tip_base_idx: usize,
    /// Epoxy upper surface (fiber side), px.
    pub epoxy_top_idx: usize,
    pub peak_amp: f64,
    /// Gaussian standard deviation of both reflection peaks, px.
    pub peak_width_px: f64,
    /// Log-normal speckle standard deviation (multiplicative).
    pub speckle_sigma: f64,
    /// Additive Gaussian noise standard deviation.
    pub noise_floor: f64,
    /// Weak bulk backscatter of the epoxy between the two surfaces.
    pub epoxy_scatter: f64,
}

impl Default for OpticalParams {
    fn default() -> Self {
        Self {
            depth_px: 256,
            px_per_um: 0.1,
            tip_base_idx: 62,
            epoxy_top_idx: 12,
            peak_amp: 0.8,
            peak_width_px: 2.0,
            speckle_sigma: 0.1,
            noise_floor: 0.02,
            epoxy_scatter: 0.2,
        }
    }
}

impl OpticalParams {
    /// Same geometry with speckle and additive noise switched off.
    pub fn noiseless(&self) -> Self {
        Self { speckle_sigma: 0.0, noise_floor: 0.0, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidOptics(m));
        if !(0 < self.epoxy_top_idx && self.epoxy_top_idx < self.tip_base_idx && self.tip_base_idx < self.depth_px) {
            return bad(format!(
                "need 0 < epoxy_top_idx ({}) < tip_base_idx ({}) < depth_px ({})",
                self.epoxy_top_idx, self.tip_base_idx, self.depth_px
            ));
        }
        for (what, v) in [
            ("px_per_um", self.px_per_um),
            ("peak_amp", self.peak_amp),
            ("peak_width_px", self.peak_width_px),
            ("speckle_sigma", self.speckle_sigma),
            ("noise_floor", self.noise_floor),
            ("epoxy_scatter", self.epoxy_scatter),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{what} must be finite and >= 0, got {v}"));
            }
        }
        if self.px_per_um <= 0.0 || self.peak_width_px <= 0.0 {
            return bad("px_per_um and peak_width_px must be > 0".into());
        }
        Ok(())
    }

    /// Largest renderable deformation: the tip surface reaching the epoxy top.
    pub fn max_deformation_px(&self) -> f64 {
        (self.tip_base_idx - self.epoxy_top_idx) as f64
    }

    /// Depth index past which the tip surface reflection has vanished.
    pub fn structure_end(&self, deformation_px: f64) -> f64 {
        self.tip_base_idx as f64 - deformation_px + 3.0 * self.peak_width_px
    }

    pub fn apply_key_values(&mut self, kv: &KeyValues) -> Result<(), SimError> {
        let parse_usize = |key: &str, raw: &str| {
            raw.parse::<usize>()
                .map_err(|_| SimError::InvalidOptics(format!("{key} = {raw:?} is not a count")))
        };
        let parse_f64 = |key: &str, raw: &str| {
            raw.parse::<f64>()
                .map_err(|_| SimError::InvalidOptics(format!("{key} = {raw:?} is not a number")))
        };
        for (key, raw) in kv.iter() {
            let Some(field) = key.strip_prefix("optics.") else { continue };
            match field {
                "depth_px" => self.depth_px = parse_usize(key, raw)?,
                "tip_base_idx" => self.tip_base_idx = parse_usize(key, raw)?,
                "epoxy_top_idx" => self.epoxy_top_idx = parse_usize(key, raw)?,
                "px_per_um" => self.px_per_um = parse_f64(key, raw)?,
                "peak_amp" => self.peak_amp = parse_f64(key, raw)?,
                "peak_width_px" => self.peak_width_px = parse_f64(key, raw)?,
                "speckle_sigma" => self.speckle_sigma = parse_f64(key, raw)?,
                "noise_floor" => self.noise_floor = parse_f64(key, raw)?,
                "epoxy_scatter" => self.epoxy_scatter = parse_f64(key, raw)?,
                other => return Err(SimError::InvalidOptics(format!("unknown optics key {other}"))),
            }
        }
        self.validate()
    }
}

/// Renders one A-scan for a tip compressed by `deformation_px`.
///
/// Structure: a fixed peak at the epoxy top, a moving peak at
/// `tip_base_idx - deformation_px`, and weak epoxy backscatter between them
/// (ending two peak widths before each surface). Speckle multiplies the
/// structure, additive noise is added everywhere, and the result is clipped to
/// `[0, 1]`. Past `structure_end` the signal is noise only. The returned scan
/// has `t = 0`; callers stamp it.
pub fn render_ascan(deformation_px: f64, optics: &OpticalParams, seed: u64) -> Result<AScan, SimError> {
    ensure_finite("deformation", deformation_px)?;
    if deformation_px < 0.0 || deformation_px > optics.max_deformation_px() {
        return Err(SimError::InvalidInput(format!(
            "deformation {deformation_px} px outside [0, {}]",
            optics.max_deformation_px()
        )));
    }
    let top = optics.epoxy_top_idx as f64;
    let tip = optics.tip_base_idx as f64 - deformation_px;
    let w = optics.peak_width_px;
    let inv_two_var = 1.0 / (2.0 * w * w);
    let end = optics.structure_end(deformation_px);
    let noisy = optics.speckle_sigma > 0.0 || optics.noise_floor > 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = (0..optics.depth_px)
        .map(|i| {
            let x = i as f64;
            let mut s = 0.0;
            if x <= end {
                s += optics.peak_amp * (-(x - top).powi(2) * inv_two_var).exp();
                s += optics.peak_amp * (-(x - tip).powi(2) * inv_two_var).exp();
                if x > top + 2.0 * w && x < tip - 2.0 * w {
                    s += optics.epoxy_scatter;
                }
            }
            if noisy {
                let n1: f64 = rng.sample(StandardNormal);
                let n2: f64 = rng.sample(StandardNormal);
                let sp = optics.speckle_sigma;
                s = s * (sp * n1 - 0.5 * sp * sp).exp() + optics.noise_floor * n2;
            }
            s.clamp(0.0, 1.0) as f32
        })
        .collect();
    Ok(AScan { t: 0.0, depth })
}

/// Piecewise-linear force trajectory through `(t, force)` knots.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceProfile {
    knots: Vec<(f64, f64)>,
}

impl ForceProfile {
    /// Random ramps: targets uniform in `[0, f_max]`, durations uniform in
    /// `[50 ms, 1 s]`, 10% of segments hold the previous level.
    pub fn random_ramps(f_max: f64, duration: f64, rng: &mut impl Rng) -> Self {
        let mut knots = vec![(0.0, 0.0)];
        let (mut t, mut f) = (0.0, 0.0);
        while t < duration {
            let seg = rng.random_range(0.05..=1.0);
            let hold = rng.random_bool(0.1);
            let target = if hold { f } else { rng.random_range(0.0..=f_max) };
            t += seg;
            f = target;
            knots.push((t, f));
        }
        Self { knots }
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn at(&self, t: f64) -> f64 {
        let k = &self.knots;
        let i = k.partition_point(|&(kt, _)| kt <= t);
        if i == 0 {
            return k[0].1;
        }
        if i >= k.len() {
            return k[k.len() - 1].1;
        }
        let (t0, f0) = k[i - 1];
        let (t1, f1) = k[i];
        f0 + (f1 - f0) * (t - t0) / (t1 - t0)
    }
}

/// Timestamps `phase + i / rate` below `duration`.
fn sample_times(duration: f64, rate: f64, phase: f64) -> Vec<f64> {
    (0..)
        .map(|i| phase + i as f64 / rate)
        .take_while(|&t| t < duration)
        .collect()
}

/// Drives the layer with a force signal sampled at the A-scan clock and renders every scan.
fn render_stream(
    preset: &NeedlePreset,
    optics: &OpticalParams,
    times: &[f64],
    force_at: impl Fn(f64) -> f64,
    seed: u64,
) -> Result<OctStream, SimError> {
    let max_px = optics.max_deformation_px();
    let mut state = DeformState::at_rest(0.0);
    let mut scans = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let dt = t - state.t_last;
        if dt > 0.0 {
            let f = force_at(t).clamp(0.0, preset.f_max);
            state = deform_step(state, f, dt, preset)?.1;
            state.t_last = t;
        }
        let px = (state.delta_um * optics.px_per_um).min(max_px);
        let mut scan = render_ascan(px, optics, derive_seed(seed, STREAM_SCAN, i as u64))?;
        scan.t = t;
        scans.push(scan);
    }
    Ok(OctStream { scans })
}

fn check_layer_fits(preset: &NeedlePreset, optics: &OpticalParams) -> Result<(), SimError> {
    let layer_px = preset.layer_thickness_um * optics.px_per_um;
    if layer_px > optics.max_deformation_px() + 1e-9 {
        return Err(SimError::InvalidOptics(format!(
            "layer of {layer_px:.2} px does not fit between epoxy top and tip ({} px)",
            optics.max_deformation_px()
        )));
    }
    Ok(())
}

fn stream_phases(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_PHASE, 0));
    let oct = rng.random_range(0.0..1.0) / OCT_RATE_HZ;
    let force = rng.random_range(0.0..1.0) / FORCE_RATE_HZ;
    (oct, force)
}

/// Calibration run against a rigid plate: random force ramps, A-scans at
/// 5500 Hz and force samples at 500 Hz on one clock with random phase offsets.
pub fn simulate_calibration(
    preset: &NeedlePreset,
    optics: &OpticalParams,
    duration: f64,
    seed: u64,
) -> Result<(OctStream, ForceStream), SimError> {
    ensure_finite("duration", duration)?;
    if duration <= 0.0 {
        return Err(SimError::InvalidInput(format!("duration must be > 0, got {duration}")));
    }
    preset.validate()?;
    optics.validate()?;
    check_layer_fits(preset, optics)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_TRAJECTORY, 0));
    let profile = ForceProfile::random_ramps(preset.f_max, duration, &mut rng);
    let (oct_phase, force_phase) = stream_phases(seed);
    let force = ForceStream {
        samples: sample_times(duration, FORCE_RATE_HZ, force_phase)
            .into_iter()
            .map(|t| ForceSample { t, f: profile.at(t) })
            .collect(),
    };
    let oct_times = sample_times(duration, OCT_RATE_HZ, oct_phase);
    let oct = render_stream(preset, optics, &oct_times, |t| profile.at(t), seed)?;
    Ok((oct, force))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TissueSegment {
    pub length_mm: f64,
    /// Loading slope while the tip advances, mN per mm.
    pub stiffness_mn_per_mm: f64,
    pub rupture_force_mn: Option<f64>,
}

/// Constant-velocity insertion through layered tissue.
#[derive(Debug, Clone, PartialEq)]
pub struct InsertionProfile {
    pub segments: Vec<TissueSegment>,
    /// Shaft friction per inserted millimetre, mN/mm.
    pub friction_per_mm: f64,
    pub velocity_mm_s: f64,
    /// Standard deviation of the imperfect decoupling seen by a shielded base sensor, mN.
    pub residual_noise_mn: f64,
}

impl Default for InsertionProfile {
    fn default() -> Self {
        Self {
            segments: vec![
                TissueSegment { length_mm: 4.0, stiffness_mn_per_mm: 60.0, rupture_force_mn: Some(180.0) },
                TissueSegment { length_mm: 12.0, stiffness_mn_per_mm: 25.0, rupture_force_mn: Some(260.0) },
                TissueSegment { length_mm: 8.0, stiffness_mn_per_mm: 20.0, rupture_force_mn: None },
            ],
            friction_per_mm: 10.0,
            velocity_mm_s: 2.0,
            residual_noise_mn: 0.5,
        }
    }
}

/// A linear piece of the tip force over insertion depth.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LoadPiece {
    x0: f64,
    f0: f64,
    slope: f64,
}

impl InsertionProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidProfile(m));
        if self.segments.is_empty() {
            return bad("no tissue segments".into());
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.length_mm.is_finite() && s.length_mm > 0.0) {
                return bad(format!("segment {i}: length must be > 0"));
            }
            if !(s.stiffness_mn_per_mm.is_finite() && s.stiffness_mn_per_mm >= 0.0) {
                return bad(format!("segment {i}: stiffness must be >= 0"));
            }
            if let Some(r) = s.rupture_force_mn {
                if !(r.is_finite() && r > 0.0) {
                    return bad(format!("segment {i}: rupture force must be > 0"));
                }
            }
        }
        if !(self.friction_per_mm.is_finite() && self.friction_per_mm >= 0.0) {
            return bad("friction_per_mm must be >= 0".into());
        }
        if !(self.velocity_mm_s.is_finite() && self.velocity_mm_s > 0.0) {
            return bad("velocity must be > 0".into());
        }
        if !(self.residual_noise_mn.is_finite() && self.residual_noise_mn >= 0.0) {
            return bad("residual noise must be >= 0".into());
        }
        Ok(())
    }

    pub fn total_length_mm(&self) -> f64 {
        self.segments.iter().map(|s| s.length_mm).sum()
    }

    pub fn duration(&self) -> f64 {
        self.total_length_mm() / self.velocity_mm_s
    }

    /// Loading pieces over depth; a rupture starts a new piece at the reduced level.
    fn pieces(&self) -> Vec<LoadPiece> {
        let mut pieces = Vec::new();
        let (mut x, mut f) = (0.0, 0.0);
        for seg in &self.segments {
            let end = x + seg.length_mm;
            let k = seg.stiffness_mn_per_mm;
            loop {
                pieces.push(LoadPiece { x0: x, f0: f, slope: k });
                match seg.rupture_force_mn {
                    Some(r) if k > 0.0 && f + k * (end - x) >= r && f < r => {
                        x += (r - f) / k;
                        f = POST_RUPTURE_FRACTION * r;
                    }
                    _ => {
                        f += k * (end - x);
                        x = end;
                        break;
                    }
                }
            }
        }
        pieces
    }

    /// Rupture depths in mm.
    pub fn rupture_depths(&self) -> Vec<f64> {
        let p = self.pieces();
        p.windows(2)
            .filter(|w| w[1].f0 < w[0].f0 + w[0].slope * (w[1].x0 - w[0].x0) - 1e-12)
            .map(|w| w[1].x0)
            .collect()
    }

    fn tip_force_at_depth(pieces: &[LoadPiece], x: f64) -> f64 {
        let i = pieces.partition_point(|p| p.x0 <= x).max(1) - 1;
        let p = pieces[i];
        p.f0 + p.slope * (x - p.x0)
    }
}

/// Streams recorded during an insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct InsertionRecord {
    pub oct: OctStream,
    /// What the base-mounted sensor reads.
    pub base_force: ForceStream,
    /// Frictionless axial tip force on the force clock.
    pub tip_force: ForceStream,
}

/// Insertion at constant velocity. The tip force loads linearly per segment and
/// drops to `POST_RUPTURE_FRACTION * r` at each rupture. Without the shielding
/// tube the base sensor adds shaft friction proportional to the inserted depth;
/// with it the base sees the tip force plus small residual noise.
pub fn simulate_insertion(
    preset: &NeedlePreset,
    optics: &OpticalParams,
    profile: &InsertionProfile,
    shielded: bool,
    seed: u64,
) -> Result<InsertionRecord, SimError> {
    preset.validate()?;
    optics.validate()?;
    profile.validate()?;
    check_layer_fits(preset, optics)?;
    let pieces = profile.pieces();
    let v = profile.velocity_mm_s;
    let tip_at = |t: f64| InsertionProfile::tip_force_at_depth(&pieces, v * t).clamp(0.0, preset.f_max);
    let duration = profile.duration();
    let (oct_phase, force_phase) = stream_phases(seed);

    let force_times = sample_times(duration, FORCE_RATE_HZ, force_phase);
    let tip_force = ForceStream {
        samples: force_times.iter().map(|&t| ForceSample { t, f: tip_at(t) }).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_RESIDUAL, 0));
    let base_force = ForceStream {
        samples: tip_force
            .samples
            .iter()
            .map(|s| {
                let extra = if shielded {
                    if profile.residual_noise_mn > 0.0 {
                        profile.residual_noise_mn * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    }
                } else {
                    profile.friction_per_mm * v * s.t
                };
                ForceSample { t: s.t, f: s.f + extra }
            })
            .collect(),
    };
    let oct_times = sample_times(duration, OCT_RATE_HZ, oct_phase);
    let oct = render_stream(preset, optics, &oct_times, tip_at, seed)?;
    Ok(InsertionRecord { oct, base_force, tip_force })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_presets_reach_eighty_percent_of_layer() {
        for (name, fmax) in [("needle1", 379.0), ("needle2", 974.0), ("needle3", 3202.0)] {
            let p = NeedlePreset::builtin(name).unwrap();
            assert_eq!(p.f_max, fmax);
            let d = p.steady_state_deformation(p.f_max);
            assert!((d - 400.0).abs() < 1e-9, "{name}: {d}");
            assert!(d <= p.layer_thickness_um);
            assert!((p.relaxation_time() - 0.02).abs() < 1e-15);
        }
        assert!(NeedlePreset::builtin("needle4").is_none());
    }

    #[test]
    fn preset_invariants_enforced() {
        assert!(NeedlePreset::new("x", 0.0, 0.0, 0.0, 1.0, 500.0).is_err());
        assert!(NeedlePreset::new("x", 1.0, -1.0, 0.0, 1.0, 500.0).is_err());
        assert!(NeedlePreset::new("x", 1.0, 0.0, -0.1, 1.0, 500.0).is_err());
        // 1000 mN on a 1 mN/µm spring needs 1000 µm > 500 µm
        assert!(NeedlePreset::new("x", 1.0, 0.0, 0.0, 1000.0, 500.0).is_err());
        assert!(NeedlePreset::new("x", 1.0, 0.0, 0.0, 400.0, 500.0).is_ok());
    }

    #[test]
    fn zero_force_from_rest_is_fixed_point() {
        let p = NeedlePreset::needle1();
        for dt in [1e-6, 1.0 / OCT_RATE_HZ, 0.5] {
            let s = DeformState::at_rest(0.0);
            let (d, s2) = deform_step(s, 0.0, dt, &p).unwrap();
            assert_eq!(d, 0.0);
            assert_eq!(s2.delta_um, 0.0);
        }
    }

    #[test]
    fn deform_step_rejects_bad_input() {
        let p = NeedlePreset::needle1();
        let s = DeformState::default();
        assert!(matches!(deform_step(s, f64::NAN, 0.1, &p), Err(SimError::NonFinite { .. })));
        assert!(matches!(deform_step(s, 1.0, f64::INFINITY, &p), Err(SimError::NonFinite { .. })));
        assert!(deform_step(s, 1.0, 0.0, &p).is_err());
        assert!(deform_step(s, p.f_max + 1.0, 0.1, &p).is_err());
        assert!(deform_step(s, -1.0, 0.1, &p).is_err());
    }

    #[test]
    fn implicit_step_solves_its_equation() {
        let p = NeedlePreset::needle2();
        let s = DeformState { delta_um: 120.0, t_last: 0.0 };
        let dt = 1.0 / OCT_RATE_HZ;
        let (d, _) = deform_step(s, 700.0, dt, &p).unwrap();
        let residual = p.c * (d - s.delta_um) / dt + p.stiffness(d) * d - 700.0;
        assert!(residual.abs() < 1e-9, "{residual}");
    }

    #[test]
    fn zero_deformation_peak_at_tip_base() {
        let o = OpticalParams::default().noiseless();
        let a = render_ascan(0.0, &o, 1).unwrap();
        assert_eq!(a.depth.len(), o.depth_px);
        let lo = o.epoxy_top_idx + 6;
        let arg = (lo..o.depth_px).max_by(|&i, &j| a.depth[i].total_cmp(&a.depth[j]).then(j.cmp(&i))).unwrap();
        assert_eq!(arg, o.tip_base_idx);
    }

    #[test]
    fn render_rejects_out_of_range() {
        let o = OpticalParams::default();
        assert!(render_ascan(-0.1, &o, 0).is_err());
        assert!(render_ascan(o.max_deformation_px() + 0.1, &o, 0).is_err());
        assert!(render_ascan(f64::NAN, &o, 0).is_err());
    }

    #[test]
    fn ramp_profile_interpolates() {
        let p = ForceProfile { knots: vec![(0.0, 0.0), (1.0, 10.0), (2.0, 4.0)] };
        assert_eq!(p.at(0.5), 5.0);
        assert_eq!(p.at(1.5), 7.0);
        assert_eq!(p.at(3.0), 4.0);
        assert_eq!(p.at(-1.0), 0.0);
    }

    #[test]
    fn seeds_differ_across_streams_and_counters() {
        let a = derive_seed(7, STREAM_SCAN, 0);
        assert_ne!(a, derive_seed(7, STREAM_SCAN, 1));
        assert_ne!(a, derive_seed(7, STREAM_TRAJECTORY, 0));
        assert_ne!(a, derive_seed(8, STREAM_SCAN, 0));
        assert_eq!(a, derive_seed(7, STREAM_SCAN, 0));
    }

    #[test]
    fn insertion_pieces_rupture_at_threshold() {
        let prof = InsertionProfile {
            segments: vec![TissueSegment { length_mm: 10.0, stiffness_mn_per_mm: 10.0, rupture_force_mn: Some(50.0) }],
            ..InsertionProfile::default()
        };
        let pieces = prof.pieces();
        // loads 0 -> 50 over 5 mm, drops to 10, reaches 50 again after 4 more mm
        assert_eq!(pieces.len(), 3);
        assert_eq!(prof.rupture_depths(), vec![5.0, 9.0]);
        assert!((InsertionProfile::tip_force_at_depth(&pieces, 4.999) - 49.99).abs() < 1e-9);
        assert!((InsertionProfile::tip_force_at_depth(&pieces, 5.0) - 10.0).abs() < 1e-9);
    }
}
