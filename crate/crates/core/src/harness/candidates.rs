//! Noisy detector output around ground-truth lanes, standing in for the
//! first-stage proposals and regression heads of a trained network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{ImageFrame, LaneGrid, PolarAnchor, Pole};
use crate::harness::io::round9;
use crate::losses::segment_params;
use crate::suppression::{Candidate, CandidateSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateGenSpec {
    /// Candidates per ground-truth lane.
    pub per_gt: usize,
    /// Anchor angle noise, radians.
    pub sigma_theta: f64,
    /// Anchor radius noise, pixels.
    pub sigma_r: f64,
    /// Lateral shift noise of the regressed lane, pixels; per-row jitter is a quarter of it.
    pub sigma_x: f64,
    /// Pixel deviation at which the confidence falls to `1/e`.
    pub sigma_s: f64,
    /// Half-width of the uniform noise added to confidences.
    pub score_jitter: f64,
    pub background: usize,
    /// Background confidences are drawn from `[0, background_cap)`.
    pub background_cap: f64,
    pub seed: u64,
}

impl CandidateGenSpec {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [self.sigma_theta, self.sigma_r, self.sigma_x, self.sigma_s].iter().all(|s| *s > 0.0);
        if !all_positive {
            return Err(Error::InvalidSpec("all noise scales must be positive".into()));
        }
        if !(self.score_jitter >= 0.0) || !(0.0 < self.background_cap && self.background_cap <= 1.0) {
            return Err(Error::InvalidSpec("score jitter must be >= 0 and background cap in (0, 1]".into()));
        }
        Ok(())
    }
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("validated positive sigma")
}

fn chord(lane: &LaneGrid, pole: &Pole) -> Result<PolarAnchor> {
    Ok(segment_params(lane, 1, pole)?[0])
}

fn rounded_anchor(theta: f64, radius: f64, pole: Pole) -> PolarAnchor {
    PolarAnchor::new(round9(theta), round9(radius), pole)
}

/// `per_gt` perturbed copies of each ground truth followed by `background`
/// low-confidence lanes. Deterministic per seed; every value is rounded to
/// nine significant digits so the set survives serialisation exactly.
pub fn gen_candidates(gts: &[LaneGrid], frame: &ImageFrame, spec: &CandidateGenSpec) -> Result<CandidateSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pole = frame.default_global_pole();
    let (n_theta, n_r, n_shift, n_row) =
        (normal(spec.sigma_theta), normal(spec.sigma_r), normal(spec.sigma_x), normal(0.25 * spec.sigma_x));
    let mut out = Vec::with_capacity(gts.len() * spec.per_gt + spec.background);
    for gt in gts {
        let base = chord(gt, &pole)?;
        for _ in 0..spec.per_gt {
            let anchor =
                rounded_anchor(base.theta + n_theta.sample(&mut rng), base.radius + n_r.sample(&mut rng), pole);
            let shift = n_shift.sample(&mut rng);
            let xs: Vec<f64> = gt.xs().iter().map(|x| round9(x + shift + n_row.sample(&mut rng))).collect();
            let mse = xs.iter().zip(gt.xs()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / xs.len() as f64;
            let noise =
                if spec.score_jitter > 0.0 { rng.random_range(-spec.score_jitter..=spec.score_jitter) } else { 0.0 };
            let score = round9(((-mse / (spec.sigma_s * spec.sigma_s)).exp() + noise).clamp(0.0, 1.0));
            out.push(Candidate {
                anchor,
                lane: LaneGrid::new(*frame, gt.start(), xs)?,
                score_o2m: score,
                score_o2o: None,
            });
        }
    }
    for _ in 0..spec.background {
        let lane = background_lane(frame, &mut rng)?;
        let c = chord(&lane, &pole)?;
        out.push(Candidate {
            anchor: rounded_anchor(c.theta, c.radius, pole),
            lane,
            score_o2m: round9(rng.random_range(0.0..spec.background_cap)),
            score_o2o: None,
        });
    }
    CandidateSet::new(out)
}

/// A straight lane from a random bottom position toward a random point near
/// the vanishing region.
fn background_lane(frame: &ImageFrame, rng: &mut ChaCha8Rng) -> Result<LaneGrid> {
    let n = frame.n_rows;
    let start = rng.random_range(n / 2..=n - 3);
    let bottom = rng.random_range(0.0..frame.width);
    let top = frame.width / 2.0 + rng.random_range(-0.3..=0.3) * frame.width;
    let span = (n - 1 - start) as f64;
    let xs = (start..n).map(|row| round9(bottom + (top - bottom) * (n - 1 - row) as f64 / span * 0.8)).collect();
    LaneGrid::new(*frame, start, xs)
}

/// SHA-256 over a canonical byte encoding of every candidate field.
pub fn candidate_hash(set: &CandidateSet) -> String {
    let mut h = Sha256::new();
    for c in &set.candidates {
        for v in [c.anchor.theta, c.anchor.radius, c.anchor.pole.position.x, c.anchor.pole.position.y] {
            h.update(v.to_le_bytes());
        }
        h.update((c.lane.start() as u64).to_le_bytes());
        h.update((c.lane.len() as u64).to_le_bytes());
        for x in c.lane.xs() {
            h.update(x.to_le_bytes());
        }
        h.update(c.score_o2m.to_le_bytes());
        h.update(c.score_o2o.map_or(f64::NAN, |s| s).to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (ImageFrame, Vec<LaneGrid>) {
        let f = ImageFrame::new(800.0, 320.0, 36).unwrap();
        let a = LaneGrid::new(f, 20, (0..16).map(|i| 200.0 - 3.0 * i as f64).collect()).unwrap();
        let b = LaneGrid::new(f, 18, (0..18).map(|i| 560.0 + 4.0 * i as f64).collect()).unwrap();
        (f, vec![a, b])
    }

    fn spec() -> CandidateGenSpec {
        CandidateGenSpec {
            per_gt: 5,
            sigma_theta: 0.02,
            sigma_r: 4.0,
            sigma_x: 8.0,
            sigma_s: 20.0,
            score_jitter: 0.05,
            background: 6,
            background_cap: 0.3,
            seed: 3,
        }
    }

    #[test]
    fn counts_and_determinism() {
        let (f, gts) = setup();
        let s = gen_candidates(&gts, &f, &spec()).unwrap();
        assert_eq!(s.len(), 16);
        assert_eq!(candidate_hash(&s), candidate_hash(&gen_candidates(&gts, &f, &spec()).unwrap()));
        let single = CandidateGenSpec { per_gt: 1, background: 0, ..spec() };
        assert_eq!(gen_candidates(&gts, &f, &single).unwrap().len(), 2);
    }

    #[test]
    fn noiseless_limit() {
        let (f, gts) = setup();
        let tiny = CandidateGenSpec { sigma_theta: 1e-12, sigma_r: 1e-12, sigma_x: 1e-12, score_jitter: 0.0, ..spec() };
        let s = gen_candidates(&gts, &f, &tiny).unwrap();
        for (i, c) in s.candidates.iter().take(10).enumerate() {
            let gt = &gts[i / 5];
            for (a, b) in c.lane.xs().iter().zip(gt.xs()) {
                assert!((a - b).abs() < 1e-9);
            }
            assert!(c.score_o2m > 0.999_999);
        }
        let min_fg = s.candidates[..10].iter().map(|c| c.score_o2m).fold(1.0, f64::min);
        assert!(s.candidates[10..].iter().all(|c| c.score_o2m < min_fg));
    }

    #[test]
    fn rejects_bad_sigma() {
        let (f, gts) = setup();
        let bad = CandidateGenSpec { sigma_r: 0.0, ..spec() };
        assert!(gen_candidates(&gts, &f, &bad).is_err());
    }
}
