//! Latency of the suppression stage alone (no network inference) as the
//! candidate count grows.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{ImageFrame, LaneGrid};
use crate::harness::derive_seed;
use crate::losses::segment_params;
use crate::suppression::{
    dual_confidence_select, fast_nms_geometric, sequential_nms, Candidate, CandidateSet, IouDistance,
    SuppressionThresholds,
};

pub const BENCH_HEADER: &str = "# suppression stage only (post-processing); network inference is not included";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mode: String,
    pub k: usize,
    pub repetitions: usize,
    pub median_ns: f64,
}

/// `k` random lanes with random confidences, deterministic per seed.
pub fn bench_candidates(k: usize, frame: &ImageFrame, seed: u64) -> Result<CandidateSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pole = frame.default_global_pole();
    let n = frame.n_rows;
    let out = (0..k)
        .map(|_| {
            let start = rng.random_range(n / 3..=n / 2);
            let bottom = rng.random_range(0.0..frame.width);
            let top = frame.width / 2.0 + rng.random_range(-0.1..=0.1) * frame.width;
            let span = (n - 1 - start) as f64;
            let xs = (start..n).map(|row| bottom + (top - bottom) * (n - 1 - row) as f64 / span * 0.7).collect();
            let lane = LaneGrid::new(*frame, start, xs)?;
            Ok(Candidate {
                anchor: segment_params(&lane, 1, &pole)?[0],
                lane,
                score_o2m: rng.random_range(0.0..1.0),
                score_o2o: Some(rng.random_range(0.0..1.0)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CandidateSet::new(out)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub const BENCH_MODES: [&str; 3] = ["fast_geometric", "sequential", "dual_confidence"];

/// Median wall time per `(mode, K)` over `repetitions` runs; the same
/// candidate set is used for every mode at a given `K`.
pub fn bench_suppression(
    ks: &[usize],
    repetitions: usize,
    seed: u64,
    frame: &ImageFrame,
    thresholds: &SuppressionThresholds,
) -> Result<Vec<BenchRow>> {
    let distance = IouDistance { w_base: crate::laneiou::DEFAULT_W_BASE };
    let mut rows = Vec::new();
    for &k in ks {
        let set = bench_candidates(k, frame, derive_seed(seed, 3, k as u64))?;
        for mode in BENCH_MODES {
            let mut times = Vec::with_capacity(repetitions);
            // one warm-up run keeps allocation effects out of the medians
            for rep in 0..=repetitions {
                let t0 = Instant::now();
                let sel = match mode {
                    "fast_geometric" => fast_nms_geometric(&set, thresholds, &distance)?,
                    "sequential" => sequential_nms(&set, &distance, thresholds.tau_d, thresholds.tau_o2m)?,
                    _ => dual_confidence_select(&set, thresholds.tau_o2o, thresholds.tau_o2m)?,
                };
                let dt = t0.elapsed().as_nanos() as f64;
                std::hint::black_box(sel);
                if rep > 0 {
                    times.push(dt);
                }
            }
            rows.push(BenchRow { mode: mode.to_string(), k, repetitions, median_ns: median(times) });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{BENCH_HEADER}\nmode,k,repetitions,median_ns\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{:.0}\n", r.mode, r.k, r.repetitions, r.median_ns));
    }
    out
}

/// Coefficient of determination of the least-squares fit `t ≈ a + b·K + c·K²`.
pub fn quadratic_fit_r2(ks: &[f64], ts: &[f64]) -> f64 {
    assert_eq!(ks.len(), ts.len());
    // scale K to keep the normal equations well conditioned
    let scale = ks.iter().cloned().fold(1.0, f64::max);
    let xs: Vec<f64> = ks.iter().map(|k| k / scale).collect();
    let mut m = [[0.0; 4]; 3];
    for (&x, &t) in xs.iter().zip(ts) {
        let basis = [1.0, x, x * x];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += basis[i] * basis[j];
            }
            m[i][3] += basis[i] * t;
        }
    }
    // Gaussian elimination with partial pivoting
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, piv);
        for row in 0..3 {
            if row != col && m[col][col] != 0.0 {
                let f = m[row][col] / m[col][col];
                let pivot = m[col];
                for (v, p) in m[row][col..].iter_mut().zip(&pivot[col..]) {
                    *v -= f * p;
                }
            }
        }
    }
    let coef: Vec<f64> = (0..3).map(|i| if m[i][i] == 0.0 { 0.0 } else { m[i][3] / m[i][i] }).collect();
    let mean = ts.iter().sum::<f64>() / ts.len() as f64;
    let ss_tot: f64 = ts.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ts).map(|(&x, &t)| (t - (coef[0] + coef[1] * x + coef[2] * x * x)).powi(2)).sum();
    if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// R² of the quadratic trend for one mode's rows.
pub fn mode_r2(rows: &[BenchRow], mode: &str) -> f64 {
    let (ks, ts): (Vec<f64>, Vec<f64>) =
        rows.iter().filter(|r| r.mode == mode).map(|r| (r.k as f64, r.median_ns)).unzip();
    quadratic_fit_r2(&ks, &ts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_quadratic_fits_perfectly() {
        let ks = [32.0, 64.0, 128.0, 256.0, 512.0, 1024.0];
        let ts: Vec<f64> = ks.iter().map(|k| 5.0 + 0.3 * k + 0.01 * k * k).collect();
        assert!((quadratic_fit_r2(&ks, &ts) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn selections_independent_of_timing() {
        let f = ImageFrame::new(800.0, 320.0, 36).unwrap();
        let a = bench_candidates(40, &f, 9).unwrap();
        let b = bench_candidates(40, &f, 9).unwrap();
        let th = SuppressionThresholds::default();
        let d = IouDistance { w_base: 15.0 };
        assert_eq!(fast_nms_geometric(&a, &th, &d).unwrap(), fast_nms_geometric(&b, &th, &d).unwrap());
    }

    #[test]
    fn csv_is_labelled() {
        let f = ImageFrame::new(800.0, 320.0, 36).unwrap();
        let rows = bench_suppression(&[1, 4], 2, 0, &f, &SuppressionThresholds::default()).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(bench_csv(&rows).starts_with(BENCH_HEADER));
    }
}
