//! Run configuration.
//!
//! One nested TOML document drives every subcommand. Unknown keys are
//! rejected (a typo should fail loudly, not silently fall back to a
//! default), partial files are completed from the defaults, and dotted
//! `key.path=value` overrides are applied on top of the parsed tree before
//! the typed deserialization, so they obey exactly the same schema checks.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clairaut::DistanceCache;
use crate::coding::{BallParams, DistanceModel};
use crate::error::{Error, Result};
use crate::hyperbolic::SchottkyData;
use crate::profile::{CuspProfile, ProfileParams};
use crate::svf::SlowlyVaryingSpec;
use crate::transfer::{OperatorParams, TailMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for every randomized utility (prune calibration, spot checks).
    pub seed: u64,
    /// Slowly varying factor of the cusp profile.
    pub l: SlowlyVaryingSpec,
    pub profile: ProfileSection,
    pub schottky: SchottkySection,
    pub transfer: TransferSection,
    pub counting: CountingSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileSection {
    pub alpha: f64,
    pub pinch_a: f64,
    pub pinch_b: f64,
    /// Fixed glue point; omit to let the profile search for one.
    pub glue: Option<f64>,
    pub grid_points: usize,
    /// Displacement range covered by the geodesic-length cache.
    pub cache_lo: f64,
    pub cache_hi: f64,
    pub cache_knots: usize,
}

impl Default for ProfileSection {
    fn default() -> Self {
        ProfileSection {
            alpha: 1.5,
            pinch_a: 0.2,
            pinch_b: 2.0,
            glue: Some(8.0),
            grid_points: 10_000,
            cache_lo: 1.0,
            cache_hi: 1e9,
            cache_knots: 600,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Unperturbed constant-curvature distances.
    ExactH2,
    /// Parabolic letters priced through the perturbed cusp profile.
    ModifiedCusp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchottkySection {
    /// Parabolic translation length.
    pub tau: f64,
    /// Multiplier of the hyperbolic generator.
    pub lambda: f64,
    /// Coupling separation of the two-factor family.
    pub m: u32,
    pub model: ModelKind,
}

impl Default for SchottkySection {
    fn default() -> Self {
        SchottkySection { tau: 3.4, lambda: 5.0, m: 1, model: ModelKind::ModifiedCusp }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailModeKind {
    Raw,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSection {
    pub nodes_per_arc: usize,
    pub trunc_parabolic: i64,
    pub trunc_hyperbolic: i64,
    pub tail_mode: TailModeKind,
    pub tail_scale: f64,
    /// Floor of the critical-exponent search: the largest elementary factor
    /// exponent (1/2 for a standard parabolic factor). The exotic branch is
    /// the verdict when the spectral radius already sits below 1 here.
    pub delta_floor: f64,
    /// Upper cap of the critical-exponent search.
    pub s_cap: f64,
}

impl Default for TransferSection {
    fn default() -> Self {
        TransferSection {
            nodes_per_arc: 128,
            trunc_parabolic: 512,
            trunc_hyperbolic: 96,
            tail_mode: TailModeKind::Augmented,
            tail_scale: 1.0,
            delta_floor: 0.5,
            s_cap: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CountingSection {
    /// Renewal truncation depth.
    pub k_max: usize,
    /// Radii of the counting grid.
    pub r_grid: Vec<f64>,
    /// Mollification width of indicator-style test functions.
    pub mollify: f64,
    /// Word-length cap of ball enumerations.
    pub ball_k_cap: usize,
    pub node_budget: u64,
    /// Superadditivity slack; omit to calibrate it from random pairs.
    pub prune_slack: Option<f64>,
    pub prune_pairs: usize,
    pub prune_len: usize,
    pub prune_exp: i64,
    /// Window width of the level-constant plateau fit.
    pub window_width: f64,
    /// Radii of the plateau fit.
    pub plateau_r: Vec<f64>,
}

impl Default for CountingSection {
    fn default() -> Self {
        CountingSection {
            k_max: 3,
            r_grid: (20..=32).map(|i| i as f64).collect(),
            mollify: 1e-3,
            ball_k_cap: 12,
            node_budget: 50_000_000,
            prune_slack: None,
            prune_pairs: 400,
            prune_len: 5,
            prune_exp: 24,
            window_width: 1.0,
            plateau_r: vec![40.0, 44.0, 48.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            l: SlowlyVaryingSpec::constant(1.0),
            profile: ProfileSection::default(),
            schottky: SchottkySection::default(),
            transfer: TransferSection::default(),
            counting: CountingSection::default(),
            output: OutputSection::default(),
        }
    }
}

/// Parse a `--set` value: numbers, booleans and arrays go through the TOML
/// grammar; anything else is taken as a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Probe {
        v: toml::Value,
    }
    match toml::from_str::<Probe>(&format!("v = {raw}")) {
        Ok(p) => p.v,
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(tree: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not of the form key=value")))?;
    let segments: Vec<&str> = path.trim().split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::Config(format!("override key '{path}' has an empty segment")));
    }
    let mut cur = tree;
    for seg in &segments[..segments.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("key '{path}' descends into a non-table")))?;
        cur = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("key '{path}' descends into a non-table")))?;
    table.insert(segments[segments.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Load a configuration: the optional file first, then the dotted
    /// overrides, then the strict typed deserialization.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut tree: toml::Value = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("config {}: {e}", p.display())))?
            }
            None => toml::Value::Table(Default::default()),
        };
        for spec in overrides {
            apply_override(&mut tree, spec)?;
        }
        let cfg: RunConfig = tree.try_into().map_err(|e| Error::Config(e.to_string()))?;
        cfg.l.validate()?;
        Ok(cfg)
    }

    /// The fully resolved document, echoed so a run records exactly what it
    /// used.
    pub fn resolved(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn l_spec(&self) -> SlowlyVaryingSpec {
        self.l.clone()
    }

    pub fn build_profile(&self) -> Result<CuspProfile> {
        CuspProfile::build_with(ProfileParams {
            glue_guess: self.profile.glue,
            grid_points: self.profile.grid_points,
            ..ProfileParams::new(
                self.profile.alpha,
                self.l.clone(),
                self.profile.pinch_a,
                self.profile.pinch_b,
            )
        })
    }

    /// Assemble the group data and the distance model the config selects.
    pub fn build_instance(&self) -> Result<(SchottkyData, DistanceModel)> {
        match self.schottky.model {
            ModelKind::ExactH2 => {
                let data = SchottkyData::two_factor_family(
                    self.schottky.tau,
                    self.schottky.lambda,
                    self.schottky.m,
                    None,
                )?;
                Ok((data, DistanceModel::ExactH2))
            }
            ModelKind::ModifiedCusp => {
                let profile = self.build_profile()?;
                let cache = DistanceCache::build(
                    &profile,
                    self.profile.cache_lo,
                    self.profile.cache_hi,
                    self.profile.cache_knots,
                )?;
                let data = SchottkyData::two_factor_family(
                    self.schottky.tau,
                    self.schottky.lambda,
                    self.schottky.m,
                    Some(profile),
                )?;
                Ok((data, DistanceModel::ModifiedCusp { cache }))
            }
        }
    }

    pub fn operator_params(&self) -> OperatorParams {
        OperatorParams {
            nodes_per_arc: self.transfer.nodes_per_arc,
            trunc_parabolic: self.transfer.trunc_parabolic,
            trunc_hyperbolic: self.transfer.trunc_hyperbolic,
            mode: match self.transfer.tail_mode {
                TailModeKind::Raw => TailMode::Raw,
                TailModeKind::Augmented => TailMode::Augmented,
            },
            tail_scale: self.transfer.tail_scale,
        }
    }

    pub fn ball_params(&self, radius: f64, c_prune: f64) -> BallParams {
        BallParams {
            radius,
            k_cap: self.counting.ball_k_cap,
            c_prune,
            node_budget: self.counting.node_budget,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.resolved().unwrap();
        let dir = std::env::temp_dir().join("cusplab-config-roundtrip.toml");
        std::fs::write(&dir, &text).unwrap();
        let back = RunConfig::load(Some(&dir), &[]).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn empty_load_gives_defaults_and_overrides_apply() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());

        let cfg = RunConfig::load(
            None,
            &[
                "seed=99".into(),
                "counting.k_max=5".into(),
                "schottky.model=exact_h2".into(),
                "transfer.tail_scale=1.25".into(),
                "counting.r_grid=[5.0, 6.0, 7.0]".into(),
                "l.variant=power_of_log".into(),
                "l.beta=2.0".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.counting.k_max, 5);
        assert_eq!(cfg.schottky.model, ModelKind::ExactH2);
        assert_eq!(cfg.transfer.tail_scale, 1.25);
        assert_eq!(cfg.counting.r_grid, vec![5.0, 6.0, 7.0]);
        assert_eq!(cfg.l, SlowlyVaryingSpec::power_of_log(2.0));
    }

    #[test]
    fn unknown_keys_and_malformed_overrides_are_config_errors() {
        assert!(matches!(
            RunConfig::load(None, &["counting.k_maximum=4".into()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::load(None, &["no_equals_sign".into()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::load(None, &["seed=not_a_number".into()]),
            Err(Error::Config(_))
        ));
        let dir = std::env::temp_dir().join("cusplab-config-unknown.toml");
        std::fs::write(&dir, "[transfer]\nnodes = 12\n").unwrap();
        assert!(matches!(RunConfig::load(Some(&dir), &[]), Err(Error::Config(_))));
    }

    #[test]
    fn instances_build_from_both_model_kinds() {
        let cfg = RunConfig::load(None, &["schottky.model=exact_h2".into()]).unwrap();
        let (data, model) = cfg.build_instance().unwrap();
        assert!(!model.is_modified());
        assert_eq!(data.factors.len(), 2);

        // The modified build is heavier (profile + cache); shrink the cache.
        let cfg = RunConfig::load(
            None,
            &["profile.cache_hi=1000.0".into(), "profile.cache_knots=80".into()],
        )
        .unwrap();
        let (data, model) = cfg.build_instance().unwrap();
        assert!(model.is_modified());
        assert!(data.cusp_profile.is_some());
        let params = cfg.operator_params();
        assert_eq!(params.nodes_per_arc, 128);
    }
}
