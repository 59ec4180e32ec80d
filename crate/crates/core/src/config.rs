//! Run configuration with sparse and dense presets. A JSON config names a
//! preset and overrides any subset of its fields.

use serde::{Deserialize, Serialize};

use crate::assignment::CostConfig;
use crate::error::{Error, Result};
use crate::geometry::{ImageFrame, LpmConfig};
use crate::harness::io::parse_strict;
use crate::harness::pipeline::{ScoreRegime, SuppressionMode};
use crate::harness::{CandidateGenSpec, SceneKind, SceneSpec};
use crate::laneiou::DEFAULT_W_BASE;
use crate::o2o_head::HeadDims;
use crate::suppression::SuppressionThresholds;

/// Local-pole lattice settings. `lambda_l` has no default and must be
/// supplied before labels can be generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LpmSettings {
    pub grid_h: usize,
    pub grid_w: usize,
    pub top_k: usize,
    pub lambda_l: Option<f64>,
}

impl LpmSettings {
    pub fn resolve(&self) -> Result<LpmConfig> {
        let lambda_l = self
            .lambda_l
            .ok_or_else(|| Error::InvalidInput("lpm.lambda_l is required (config or --lambda-l)".into()))?;
        let cfg = LpmConfig { grid_h: self.grid_h, grid_w: self.grid_w, lambda_l, top_k: self.top_k };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Head sizes other than the per-anchor sample count, which follows the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSettings {
    pub channels: usize,
    pub d_r: usize,
    pub d_n: usize,
    pub hidden: usize,
}

impl HeadSettings {
    pub fn dims(&self, frame: &ImageFrame) -> HeadDims {
        HeadDims { n_points: frame.n_rows, channels: self.channels, d_r: self.d_r, d_n: self.d_n, hidden: self.hidden }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub iou_thresholds: Vec<f64>,
    /// Band semi-width of the evaluation IoU.
    pub w_base: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    pub ks: Vec<usize>,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: SceneKind,
    /// Scene template; its `seed` is a salt mixed into every per-scene seed.
    pub scene: SceneSpec,
    pub scene_count: usize,
    /// Candidate noise; `seed` is likewise a salt.
    pub candidates: CandidateGenSpec,
    pub thresholds: SuppressionThresholds,
    pub modes: Vec<SuppressionMode>,
    pub regime: ScoreRegime,
    pub head: HeadSettings,
    pub cost: CostConfig,
    pub eval: EvalSettings,
    pub lpm: LpmSettings,
    pub bench: BenchSettings,
}

impl RunConfig {
    /// Working frame 800×320 with 36 rows; 4×10 pole grid keeping 20 anchors
    /// for sparse scenes and 6×13 keeping 50 for dense ones.
    pub fn preset(kind: SceneKind) -> Self {
        let frame = ImageFrame { width: 800.0, height: 320.0, n_rows: 36 };
        let (grid_h, grid_w, top_k) = match kind {
            SceneKind::Sparse => (4, 10, 20),
            SceneKind::Dense => (6, 13, 50),
        };
        Self {
            preset: kind,
            scene: SceneSpec {
                frame,
                kind,
                lane_count: 4,
                curvature: [0.0, 60.0],
                top: [0.35, 0.45],
                fork_branch: 0.4,
                fork_separation: 60.0,
                w_base: DEFAULT_W_BASE,
                seed: 0,
            },
            scene_count: 50,
            candidates: CandidateGenSpec {
                per_gt: 5,
                sigma_theta: 0.02,
                sigma_r: 4.0,
                sigma_x: 8.0,
                sigma_s: 20.0,
                score_jitter: 0.05,
                background: 6,
                background_cap: 0.3,
                seed: 0,
            },
            thresholds: SuppressionThresholds::default(),
            modes: vec![
                SuppressionMode::Sequential { w_base: 15.0 },
                SuppressionMode::Sequential { w_base: 50.0 },
                SuppressionMode::FastGeometric { w_base: 15.0 },
                SuppressionMode::FastGeometric { w_base: 50.0 },
                SuppressionMode::DualConfidence {},
            ],
            regime: ScoreRegime::Oracle {},
            head: HeadSettings { channels: 4, d_r: 16, d_n: 5, hidden: 16 },
            cost: CostConfig::default(),
            eval: EvalSettings { iou_thresholds: vec![0.5], w_base: DEFAULT_W_BASE },
            lpm: LpmSettings { grid_h, grid_w, top_k, lambda_l: None },
            bench: BenchSettings { ks: vec![32, 64, 128, 256, 512, 1024], repetitions: 7 },
        }
    }

    /// Parse a JSON config: the optional `preset` key selects the base, and
    /// every other key overrides it (objects merge recursively).
    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let overrides: serde_json::Value = parse_strict(text, context)?;
        let serde_json::Value::Object(map) = &overrides else {
            return Err(Error::Parse { context: context.into(), message: "config must be a JSON object".into() });
        };
        let kind = match map.get("preset") {
            None => SceneKind::Dense,
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::Parse { context: context.into(), message: format!("at `preset`: {e}") })?,
        };
        let mut base = serde_json::to_value(Self::preset(kind)).expect("config serialises");
        merge(&mut base, overrides);
        let cfg: Self = parse_strict(&base.to_string(), context)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.candidates.validate()?;
        self.thresholds.validate()?;
        self.cost.validate()?;
        self.head.dims(&self.scene.frame).validate()?;
        if self.scene_count == 0 {
            return Err(Error::InvalidInput("scene_count must be positive".into()));
        }
        if self.eval.iou_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) || !(self.eval.w_base > 0.0) {
            return Err(Error::InvalidInput("eval thresholds must lie in [0, 1] and w_base be positive".into()));
        }
        if self.bench.ks.contains(&0) || self.bench.repetitions == 0 {
            return Err(Error::InvalidInput("bench sizes and repetitions must be positive".into()));
        }
        Ok(())
    }
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        // a tagged value switching to another variant is replaced, not merged
        (serde_json::Value::Object(b), serde_json::Value::Object(o))
            if !o.contains_key("kind") || o.get("kind") == b.get("kind") =>
        {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
