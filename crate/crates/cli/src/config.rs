//! Flat `key = value` run configuration shared by every command.
//!
//! The file format is UTF-8 text: one `key = value` pair per line, blank
//! lines and lines starting with `#` ignored. Every key has a default, so an
//! empty (or absent) file is a valid configuration. Serialization is
//! canonical — fixed key order, shortest round-tripping number format — and
//! `parse(to_text(cfg)) == cfg` holds exactly.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use nvf_core::camera::CameraIntrinsics;
use nvf_core::nn::model::{ModelConfig, ModelKind};
use nvf_core::nn::train::{per_step_sample_spec, TrainConfig};
use nvf_core::pose_field::{Space, VotingParams};
use nvf_core::sampling::TrainSampleSpec;
use nvf_core::scene::SceneOptions;
use nvf_core::{Error, Result};

/// Everything a run can configure, resolved to concrete values. Numeric
/// fields are stored as f64 and narrowed where the neural stack needs f32.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Space,
    pub model: ModelKind,
    pub scale_conditioning: bool,
    pub delta: f64,
    pub r: f64,
    pub k: usize,
    pub fraction: f64,
    pub step: f64,
    pub root_half_extent: f64,
    pub lambda: f64,
    pub lambda_dense: f64,
    pub steps: usize,
    pub batch_scenes: usize,
    pub lr: f64,
    pub log_every: usize,
    pub n_near_surface: usize,
    pub surface_noise_sigma: f64,
    pub n_bounding_sphere: usize,
    pub n_region: usize,
    pub n_inside: usize,
    pub n_outside: usize,
    pub n_scenes: usize,
    pub mesh_pitch: f64,
    pub occluder_prob: f64,
    pub scenes_dir: String,
    pub seed: u64,
}

impl Default for RunConfig {
    /// Defaults are pulled from the core modules so the two layers cannot
    /// drift apart.
    fn default() -> Self {
        let mc = ModelConfig::<f64>::new(ModelKind::Field, Space::Camera);
        let tc = TrainConfig::<f64>::default();
        let sample = per_step_sample_spec::<f64>();
        let opts = SceneOptions::<f64>::default();
        Self {
            mode: Space::Camera,
            model: ModelKind::Field,
            scale_conditioning: mc.scale_conditioning,
            delta: mc.voting.delta,
            r: mc.voting.r,
            k: mc.voting.k,
            fraction: mc.voting.fraction,
            step: 16.0,
            root_half_extent: mc.root_half_extent,
            lambda: mc.lambda,
            lambda_dense: mc.lambda_dense,
            steps: tc.steps,
            batch_scenes: tc.batch_scenes,
            lr: tc.lr,
            log_every: tc.log_every,
            n_near_surface: sample.n_near_surface,
            surface_noise_sigma: sample.surface_noise_sigma,
            n_bounding_sphere: sample.n_bounding_sphere,
            n_region: sample.n_region,
            n_inside: sample.n_inside,
            n_outside: sample.n_outside,
            n_scenes: 64,
            mesh_pitch: opts.mesh_pitch,
            occluder_prob: opts.occluder_prob,
            scenes_dir: "scenes".into(),
            seed: 0,
        }
    }
}

/// Loss weight that tracks the mode unless the file pins it explicitly.
fn default_lambda(mode: Space) -> f64 {
    match mode {
        Space::Camera => 0.1,
        Space::RootRelative => 10.0,
    }
}

/// Conversion between a field value and its config-file text.
trait Kv: Sized {
    fn to_kv(&self) -> String;
    fn from_kv(s: &str) -> std::result::Result<Self, String>;
}

impl Kv for f64 {
    fn to_kv(&self) -> String {
        format!("{self}")
    }
    fn from_kv(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("expected a number, got {s:?}"))
    }
}

impl Kv for usize {
    fn to_kv(&self) -> String {
        format!("{self}")
    }
    fn from_kv(s: &str) -> std::result::Result<Self, String> {
        s.parse()
            .map_err(|_| format!("expected a non-negative integer, got {s:?}"))
    }
}

impl Kv for u64 {
    fn to_kv(&self) -> String {
        format!("{self}")
    }
    fn from_kv(s: &str) -> std::result::Result<Self, String> {
        s.parse()
            .map_err(|_| format!("expected a non-negative integer, got {s:?}"))
    }
}

impl Kv for bool {
    fn to_kv(&self) -> String {
        format!("{self}")
    }
    fn from_kv(s: &str) -> std::result::Result<Self, String> {
        match s {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format!("expected true or false, got {s:?}")),
        }
    }
}

impl Kv for String {
    fn to_kv(&self) -> String {
        self.clone()
    }
    fn from_kv(s: &str) -> std::result::Result<Self, String> {
        Ok(s.to_string())
    }
}

impl Kv for Space {
    fn to_kv(&self) -> String {
        match self {
            Space::Camera => "camera_space".into(),
            Space::RootRelative => "root_relative".into(),
        }
    }
    fn from_kv(s: &str) -> std::result::Result<Self, String> {
        match s {
            "camera_space" => Ok(Space::Camera),
            "root_relative" => Ok(Space::RootRelative),
            _ => Err(format!(
                "expected camera_space or root_relative, got {s:?}"
            )),
        }
    }
}

impl Kv for ModelKind {
    fn to_kv(&self) -> String {
        match self {
            ModelKind::Field => "nvf".into(),
            ModelKind::Holistic => "holistic".into(),
            ModelKind::Dense2d => "dense2d".into(),
        }
    }
    fn from_kv(s: &str) -> std::result::Result<Self, String> {
        match s {
            "nvf" => Ok(ModelKind::Field),
            "holistic" => Ok(ModelKind::Holistic),
            "dense2d" => Ok(ModelKind::Dense2d),
            _ => Err(format!("expected nvf, holistic, or dense2d, got {s:?}")),
        }
    }
}

/// Single source of truth tying struct fields to key names, default
/// provenance, and one-line docs; serialization, parsing, and the `--help`
/// key table are all generated from it.
macro_rules! config_keys {
    ($(($field:ident, $name:literal, $doc:literal)),+ $(,)?) => {
        /// Canonical key order.
        #[cfg_attr(not(test), allow(dead_code))]
        pub const KEY_NAMES: &[&str] = &[$($name),+];

        impl RunConfig {
            fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($name => {
                        self.$field = Kv::from_kv(value)
                            .map_err(|msg| Error::Config(format!("key {key}: {msg}")))?;
                        Ok(())
                    })+
                    _ => Err(Error::Config(format!("unknown config key {key:?}"))),
                }
            }

            /// Canonical text form; parsing it reproduces `self` exactly.
            pub fn to_text(&self) -> String {
                let mut out = String::from("# nvf run configuration\n");
                $(let _ = writeln!(out, "{} = {}", $name, Kv::to_kv(&self.$field));)+
                out
            }

            /// The key table shown by `--help`: name, default, description.
            pub fn key_help() -> String {
                let d = RunConfig::default();
                let mut out = String::from(
                    "Config keys (flat key = value file, # comments; every key optional):\n",
                );
                $(let _ = writeln!(
                    out,
                    "  {:<20} = {:<13} {}",
                    $name,
                    Kv::to_kv(&d.$field),
                    $doc
                );)+
                out.push_str(
                    "\nDefaults marked [method] follow the published voting method; \
                     [artifact] are choices of this implementation.\n",
                );
                out
            }
        }
    };
}

config_keys![
    (mode, "mode", "camera_space or root_relative estimation space [run choice]"),
    (model, "model", "nvf, holistic, or dense2d [run choice]"),
    (scale_conditioning, "scale_conditioning", "feed the hand scale to the decoder [run choice]"),
    (delta, "delta", "clamping distance for losses and voter validity, mm [method]"),
    (r, "r", "vote ball radius, mm [method]"),
    (k, "k", "near-surface neighbor count for target construction [method]"),
    (fraction, "fraction", "top fraction of valid voters kept per joint [method]"),
    (step, "step", "inference grid step, mm [method]"),
    (root_half_extent, "root_half_extent", "root cube half-extent, mm [artifact]"),
    (lambda, "lambda", "vote-loss weight; default 0.1 camera_space, 10 root_relative [method]"),
    (lambda_dense, "lambda_dense", "vote-loss weight of the dense baseline [method]"),
    (steps, "steps", "training steps [artifact]"),
    (batch_scenes, "batch_scenes", "scenes per training step [artifact]"),
    (lr, "lr", "base learning rate; decays x0.1 at 2/3 and 5/6 of steps [method]"),
    (log_every, "log_every", "log the loss every N steps; 0 disables [artifact]"),
    (n_near_surface, "n_near_surface", "noisy surface points per scene per step [method]"),
    (surface_noise_sigma, "surface_noise_sigma", "sigma of surface sample noise, mm [method]"),
    (n_bounding_sphere, "n_bounding_sphere", "uniform bounding-sphere points per step [method]"),
    (n_region, "n_region", "uniform frustum/cube points per step [method]"),
    (n_inside, "n_inside", "inside-surface quota kept per scene per step [artifact]"),
    (n_outside, "n_outside", "outside-surface quota kept per scene per step [artifact]"),
    (n_scenes, "n_scenes", "scenes generated by gen [artifact]"),
    (mesh_pitch, "mesh_pitch", "surface extraction pitch for scene meshes, mm [artifact]"),
    (occluder_prob, "occluder_prob", "probability of a clutter occluder per scene [artifact]"),
    (scenes_dir, "scenes_dir", "default dataset directory [run choice]"),
    (seed, "seed", "master seed for gen and train [run choice]"),
];

/// Splits config text into (key, value) pairs, rejecting malformed lines.
fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value", lineno + 1))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub mode: Option<Space>,
    pub model: Option<ModelKind>,
    pub seed: Option<u64>,
}

impl RunConfig {
    #[cfg_attr(not(test), allow(dead_code))]
    pub fn parse_text(text: &str) -> Result<Self> {
        Self::from_pairs(parse_pairs(text)?)
    }

    fn from_pairs(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (key, _) in &pairs {
            if !seen.insert(key.as_str()) {
                return Err(Error::Config(format!("duplicate config key {key:?}")));
            }
        }
        let mut cfg = Self::default();
        // Mode first: lambda's default depends on it, and an explicit lambda
        // later in the file must win over the per-mode default.
        if let Some((_, value)) = pairs.iter().find(|(key, _)| key == "mode") {
            cfg.set_key("mode", value)?;
            cfg.lambda = default_lambda(cfg.mode);
        }
        for (key, value) in &pairs {
            if key != "mode" {
                cfg.set_key(key, value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the file (or starts from defaults), applies flag overrides, and
    /// validates. A `--mode` override participates in lambda resolution
    /// exactly as if it were the file's `mode` line.
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut pairs = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                parse_pairs(&text)?
            }
            None => Vec::new(),
        };
        let mut upsert = |key: &str, value: String| {
            match pairs.iter_mut().find(|(k, _)| k == key) {
                Some(pair) => pair.1 = value,
                None => pairs.push((key.to_string(), value)),
            }
        };
        if let Some(mode) = ov.mode {
            upsert("mode", mode.to_kv());
        }
        if let Some(model) = ov.model {
            upsert("model", model.to_kv());
        }
        if let Some(seed) = ov.seed {
            upsert("seed", seed.to_kv());
        }
        Self::from_pairs(pairs)
    }

    fn validate(&self) -> Result<()> {
        let positive: [(&str, f64); 8] = [
            ("delta", self.delta),
            ("r", self.r),
            ("fraction", self.fraction),
            ("step", self.step),
            ("root_half_extent", self.root_half_extent),
            ("lr", self.lr),
            ("mesh_pitch", self.mesh_pitch),
            ("surface_noise_sigma", self.surface_noise_sigma),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.fraction > 1.0 {
            return Err(Error::Config(format!(
                "fraction must be in (0, 1], got {}",
                self.fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.occluder_prob) {
            return Err(Error::Config(format!(
                "occluder_prob must be in [0, 1], got {}",
                self.occluder_prob
            )));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("lambda_dense", self.lambda_dense),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        for (name, n) in [
            ("k", self.k),
            ("steps", self.steps),
            ("batch_scenes", self.batch_scenes),
            ("n_scenes", self.n_scenes),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.n_inside + self.n_outside == 0 {
            return Err(Error::Config(
                "n_inside + n_outside must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Architecture/loss configuration for the given dataset camera.
    pub fn model_config(&self, cam: CameraIntrinsics<f32>) -> ModelConfig<f32> {
        let mut mc = ModelConfig::new(self.model, self.mode);
        mc.scale_conditioning = self.scale_conditioning;
        mc.frustum.cam = cam;
        mc.root_half_extent = self.root_half_extent as f32;
        mc.voting = self.voting();
        mc.lambda = self.lambda as f32;
        mc.lambda_dense = self.lambda_dense as f32;
        mc
    }

    pub fn voting(&self) -> VotingParams<f32> {
        VotingParams {
            delta: self.delta as f32,
            r: self.r as f32,
            k: self.k,
            fraction: self.fraction as f32,
        }
    }

    pub fn train_config(&self) -> TrainConfig<f32> {
        TrainConfig {
            steps: self.steps,
            batch_scenes: self.batch_scenes,
            lr: self.lr as f32,
            seed: self.seed,
            sample: TrainSampleSpec {
                n_near_surface: self.n_near_surface,
                surface_noise_sigma: self.surface_noise_sigma as f32,
                n_bounding_sphere: self.n_bounding_sphere,
                n_region: self.n_region,
                n_inside: self.n_inside,
                n_outside: self.n_outside,
                // The trainer re-seeds per (seed, step, scene); the base
                // value here is never used directly.
                rng_seed: 0,
            },
            log_every: self.log_every,
        }
    }

    pub fn scene_options(&self) -> SceneOptions<f32> {
        SceneOptions {
            mesh_pitch: self.mesh_pitch as f32,
            occluder_prob: self.occluder_prob as f32,
        }
    }
}

/// Parses the `--mode` flag value (same vocabulary as the config key).
pub fn parse_mode_flag(s: &str) -> Result<Space> {
    Kv::from_kv(s).map_err(|msg| Error::Config(format!("--mode: {msg}")))
}

/// Parses the `--model` flag value; accepts a `baseline=` prefix so model
/// selection reads naturally next to `nvf`.
pub fn parse_model_flag(s: &str) -> Result<ModelKind> {
    let name = s.strip_prefix("baseline=").unwrap_or(s);
    Kv::from_kv(name).map_err(|msg| Error::Config(format!("--model: {msg}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips_exactly() {
        let mut cfg = RunConfig::default();
        cfg.mode = Space::RootRelative;
        cfg.lambda = 2.5;
        cfg.fraction = 0.25;
        cfg.lr = 3.4e-5;
        cfg.seed = 987654321;
        cfg.scenes_dir = "data/train scenes".into();
        let parsed = RunConfig::parse_text(&cfg.to_text()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn defaults_parse_from_an_empty_file() {
        let cfg = RunConfig::parse_text("# nothing here\n\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.delta, 5.0);
        assert_eq!(cfg.r, 80.0);
        assert_eq!(cfg.k, 1024);
        assert_eq!(cfg.fraction, 0.5);
        assert_eq!(cfg.step, 16.0);
    }

    #[test]
    fn lambda_tracks_the_mode_unless_pinned() {
        let root = RunConfig::parse_text("mode = root_relative\n").unwrap();
        assert_eq!(root.lambda, 10.0);
        // Explicit lambda wins regardless of where the mode line sits.
        let pinned =
            RunConfig::parse_text("lambda = 0.7\nmode = root_relative\n").unwrap();
        assert_eq!(pinned.lambda, 0.7);
        let ov = Overrides {
            mode: Some(Space::RootRelative),
            ..Overrides::default()
        };
        let flagged = RunConfig::load(None, &ov).unwrap();
        assert_eq!(flagged.lambda, 10.0);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        assert!(RunConfig::parse_text("no_such_key = 1\n").is_err());
        assert!(RunConfig::parse_text("delta = 5\ndelta = 6\n").is_err());
        assert!(RunConfig::parse_text("delta\n").is_err());
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        for bad in [
            "delta = 0",
            "delta = -1",
            "fraction = 1.5",
            "fraction = 0",
            "occluder_prob = 2",
            "steps = 0",
            "k = 0",
            "lr = nope",
            "mode = orbit",
            "model = linear",
        ] {
            assert!(
                RunConfig::parse_text(bad).is_err(),
                "{bad:?} should be rejected"
            );
        }
    }

    #[test]
    fn help_covers_every_key() {
        let help = RunConfig::key_help();
        for key in KEY_NAMES {
            assert!(help.contains(key), "help is missing {key}");
        }
        // The canonical serialization and the help table agree on the keys.
        let text = RunConfig::default().to_text();
        for key in KEY_NAMES {
            assert!(text.lines().any(|l| l.starts_with(key)));
        }
    }

    #[test]
    fn model_flag_accepts_the_baseline_prefix() {
        assert_eq!(parse_model_flag("nvf").unwrap(), ModelKind::Field);
        assert_eq!(
            parse_model_flag("baseline=holistic").unwrap(),
            ModelKind::Holistic
        );
        assert_eq!(
            parse_model_flag("baseline=dense2d").unwrap(),
            ModelKind::Dense2d
        );
        assert!(parse_model_flag("baseline=nope").is_err());
    }

    #[test]
    fn config_maps_onto_the_core_types() {
        let text = "mode = root_relative\nmodel = dense2d\nscale_conditioning = true\n\
                    delta = 7\nk = 64\nsteps = 12\nbatch_scenes = 3\nseed = 9\n";
        let cfg = RunConfig::parse_text(text).unwrap();
        let cam = nvf_core::scene::reference_camera::<f32>();
        let mc = cfg.model_config(cam);
        assert_eq!(mc.kind, ModelKind::Dense2d);
        assert_eq!(mc.space, Space::RootRelative);
        assert!(mc.scale_conditioning);
        assert_eq!(mc.voting.delta, 7.0);
        assert_eq!(mc.voting.k, 64);
        assert_eq!(mc.lambda, 10.0);
        let tc = cfg.train_config();
        assert_eq!(tc.steps, 12);
        assert_eq!(tc.batch_scenes, 3);
        assert_eq!(tc.seed, 9);
    }
}
