//! Line-oriented `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use ipnseg_core::network::{
    GlobalNetConfig, IpnConfig, NetworkConfig, PatchConfig, PlanePerceptronConfig, StageConfig, Task, Variant,
};
use ipnseg_core::numerics::{AdamConfig, PoolMode};
use ipnseg_core::synthdata::PhantomSpec;

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn format_value(&self) -> String;
}

macro_rules! scalar_values {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
            fn format_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

scalar_values!(usize, u64, f64, String, Task, Variant, PoolMode);

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|p| T::parse_value(p.trim())).collect()
    }
    fn format_value(&self) -> String {
        self.iter().map(T::format_value).collect::<Vec<_>>().join(",")
    }
}

macro_rules! run_config {
    ($($(#[doc = $doc:literal])* $key:ident: $t:ty = $default:expr,)*) => {
        /// Every tunable of a run. Unset keys take the desk-scale defaults.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])* pub $key: $t,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($key: $default,)* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    $(stringify!($key) => {
                        self.$key = <$t as ConfigValue>::parse_value(value)
                            .map_err(|e| format!("invalid value `{value}` for `{key}`: {e}"))?;
                    })*
                    _ => return Err(format!("unknown key `{key}`")),
                }
                Ok(())
            }

            /// Complete effective configuration, one `key = value` per line.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(writeln!(s, "{} = {}", stringify!($key), self.$key.format_value()).unwrap();)*
                s
            }
        }
    };
}

run_config! {
    /// Master seed for data generation, initialization and sampling.
    seed: u64 = 1,
    /// `synthetic` or `octa500`.
    dataset: String = "synthetic".into(),
    /// Dataset directory; empty means `<out>/data`.
    data_dir: String = String::new(),
    /// Layout descriptor for `dataset = octa500`.
    octa500_layout: String = String::new(),
    n_samples: usize = 30,
    split: Vec<f64> = vec![0.6, 0.2, 0.2],
    phantom_l: usize = 64,
    phantom_w: usize = 64,
    phantom_h: usize = 32,
    vessel_count: usize = 8,
    vessel_radius_min: f64 = 1.0,
    vessel_radius_max: f64 = 2.0,
    faz_radius: f64 = 8.0,
    ilm_depth: f64 = 6.0,
    inner_thickness: f64 = 10.0,
    outer_thickness: f64 = 8.0,
    surface_amplitude: f64 = 2.0,
    noise_sigma: f64 = 0.1,
    vessel_intensity: f64 = 1.0,
    task: Task = Task::Rv,
    variant: Variant = Variant::IpnV2,
    plm_channels: Vec<usize> = vec![4, 8, 8],
    plm_strides: Vec<usize> = vec![2, 2, 4],
    convs_per_plm: usize = 2,
    pool_mode: PoolMode = PoolMode::Max,
    plane_depth: usize = 2,
    plane_base: usize = 8,
    penultimate_channels: usize = 8,
    global_depth: usize = 2,
    global_base: usize = 8,
    patch_l: usize = 32,
    patch_w: usize = 32,
    /// Height every volume is resampled to; must equal the stride product.
    target_h: usize = 16,
    /// Patch step `d` for inference and validation splicing.
    step: usize = 16,
    stage1_iters: usize = 2000,
    stage1_save_every: usize = 100,
    stage1_batch: usize = 1,
    stage1_lr: f64 = 1e-3,
    stage2_iters: usize = 1000,
    stage2_save_every: usize = 50,
    stage2_batch: usize = 2,
    stage2_lr: f64 = 3e-3,
    adam_beta1: f64 = 0.9,
    adam_beta2: f64 = 0.999,
    adam_eps: f64 = 1e-8,
    /// Split used by `infer`, `eval` and `project` when no ids are given.
    eval_split: String = "test".into(),
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment;
    /// repeated keys are rejected.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(format!("line {}: duplicate key `{k}`", n + 1));
            }
            cfg.set(k, v.trim()).map_err(|e| format!("line {}: {e}", n + 1))?;
            seen.push(k);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !["synthetic", "octa500"].contains(&self.dataset.as_str()) {
            return Err(format!("dataset must be synthetic|octa500, got `{}`", self.dataset));
        }
        if self.dataset == "octa500" && (self.octa500_layout.is_empty() || self.data_dir.is_empty()) {
            return Err("dataset = octa500 needs data_dir and octa500_layout".into());
        }
        if self.split.len() != 3 {
            return Err(format!("split needs three fractions, got {}", self.split.len()));
        }
        if !["train", "val", "test"].contains(&self.eval_split.as_str()) {
            return Err(format!("eval_split must be train|val|test, got `{}`", self.eval_split));
        }
        let prod: usize = self.plm_strides.iter().product();
        if prod != self.target_h {
            return Err(format!("target_h = {} must equal the plm stride product {prod}", self.target_h));
        }
        if self.step == 0 || self.step > self.patch_l.min(self.patch_w) {
            return Err(format!("step must be in 1..=min(patch_l, patch_w), got {}", self.step));
        }
        self.network().validate().map_err(|e| e.to_string())?;
        self.phantom().validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            variant: self.variant,
            ipn: IpnConfig {
                plm_channels: self.plm_channels.clone(),
                plm_strides: self.plm_strides.clone(),
                convs_per_plm: self.convs_per_plm,
                num_classes: self.task.num_classes(),
                input_channels: self.task.input_channels(),
                pool_mode: self.pool_mode,
            },
            plane: PlanePerceptronConfig {
                unet_depth: self.plane_depth,
                base_channels: self.plane_base,
                penultimate_channels: self.penultimate_channels,
            },
            global: GlobalNetConfig { unet_depth: self.global_depth, base_channels: self.global_base },
        }
    }

    pub fn phantom(&self) -> PhantomSpec {
        PhantomSpec {
            seed: self.seed,
            l: self.phantom_l,
            w: self.phantom_w,
            h: self.phantom_h,
            vessel_count: self.vessel_count,
            radius_min: self.vessel_radius_min,
            radius_max: self.vessel_radius_max,
            faz_radius: self.faz_radius,
            ilm_depth: self.ilm_depth,
            inner_thickness: self.inner_thickness,
            outer_thickness: self.outer_thickness,
            surface_amplitude: self.surface_amplitude,
            noise_sigma: self.noise_sigma,
            vessel_intensity: self.vessel_intensity,
        }
    }

    pub fn split_fractions(&self) -> (f64, f64, f64) {
        (self.split[0], self.split[1], self.split[2])
    }

    pub fn patch(&self) -> PatchConfig {
        PatchConfig { l: self.patch_l, w: self.patch_w, target_h: self.target_h, step: self.step }
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig { lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    pub fn stage1(&self) -> StageConfig {
        StageConfig {
            max_iters: self.stage1_iters,
            save_every: self.stage1_save_every,
            batch_size: self.stage1_batch,
            adam: self.adam(self.stage1_lr),
        }
    }

    pub fn stage2(&self) -> StageConfig {
        StageConfig {
            max_iters: self.stage2_iters,
            save_every: self.stage2_save_every,
            batch_size: self.stage2_batch,
            adam: self.adam(self.stage2_lr),
        }
    }

    pub fn data_root(&self, out: &std::path::Path) -> PathBuf {
        if self.data_dir.is_empty() {
            out.join("data")
        } else {
            PathBuf::from(&self.data_dir)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::parse("variant = ipnv2plus\ntask = faz # distance map\nplm_channels = 2, 3, 3\n").unwrap();
        assert_eq!(c.variant, Variant::IpnV2Plus);
        assert_eq!(c.plm_channels, vec![2, 3, 3]);
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(c.to_text().lines().count(), RunConfig::KEYS.len());
    }

    #[test]
    fn rejects_unknown_duplicate_and_invalid() {
        assert!(RunConfig::parse("bogus = 1").unwrap_err().contains("unknown key `bogus`"));
        assert!(RunConfig::parse("seed = 1\nseed = 2").unwrap_err().contains("duplicate"));
        assert!(RunConfig::parse("seed = x").is_err());
        assert!(RunConfig::parse("target_h = 20").unwrap_err().contains("stride product"));
        assert!(RunConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let c = RunConfig::parse(&std::fs::read_to_string(dir.join("paper_scale.conf")).unwrap()).unwrap();
        assert_eq!((c.patch_l, c.target_h, c.stage1_iters), (100, 160, 30000));
    }
}
