//! Forward pass of the one-to-one classification head.
//!
//! RoI features are built from three feature levels (softmax-weighted sum,
//! then a linear projection). Pairwise edge features encode how candidate `i`
//! sees candidate `j`; they are max-pooled over the suppressor set of `j`
//! given by the confidence/geometry adjacency, and a small MLP turns the
//! pooled vector into the one-to-one score. Weights are supplied by the
//! caller; nothing here trains.

use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sample_anchor_xs, ImageFrame, PolarAnchor};
use crate::suppression::{suppression_adjacency, SuppressionThresholds};

/// Sizes of the head: `n_points` samples per anchor, `channels` per sample,
/// RoI width `d_r`, edge width `d_n`, hidden width of both MLPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadDims {
    pub n_points: usize,
    pub channels: usize,
    pub d_r: usize,
    pub d_n: usize,
    pub hidden: usize,
}

impl HeadDims {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 2 || self.channels == 0 || self.d_r == 0 || self.d_n == 0 || self.hidden == 0 {
            return Err(Error::Shape(format!("invalid head dimensions {self:?}")));
        }
        Ok(())
    }
}

/// Affine map `y = W x + b` with `W` stored out × in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn uniform(out: usize, inp: usize, rng: &mut ChaCha8Rng, bound: f64) -> Self {
        Self {
            weight: Array2::from_shape_simple_fn((out, inp), || rng.random_range(-bound..=bound)),
            bias: Array1::from_shape_simple_fn(out, || rng.random_range(-bound..=bound)),
        }
    }

    pub fn zeros(out: usize, inp: usize) -> Self {
        Self { weight: Array2::zeros((out, inp)), bias: Array1::zeros(out) }
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.weight.dot(&x) + &self.bias
    }

    fn check(&self, name: &str, out: usize, inp: usize) -> Result<()> {
        if self.weight.dim() != (out, inp) || self.bias.len() != out {
            return Err(Error::Shape(format!(
                "{name}: expected {out}x{inp} weight and {out} bias, got {:?} and {}",
                self.weight.dim(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

fn relu(mut v: Array1<f64>) -> Array1<f64> {
    v.mapv_inplace(|x| x.max(0.0));
    v
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parameters of the RoI path and the graph block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadWeights {
    /// 3 × N per-point level logits.
    pub level_weights: Array2<f64>,
    /// d_r × (N·C_f).
    pub pool_matrix: Array2<f64>,
    /// d_r → d_r.
    pub roi: Linear,
    /// d_n × d_r.
    pub in_matrix: Array2<f64>,
    /// d_n × d_r.
    pub out_matrix: Array2<f64>,
    /// N → d_n, applied to x-coordinate differences.
    pub sample: Linear,
    /// d_n → hidden → d_n.
    pub edge_mlp: [Linear; 2],
    /// d_n → hidden → hidden → 1, sigmoid output.
    pub node_mlp: [Linear; 3],
}

impl HeadWeights {
    /// Uniform `[-0.1, 0.1]` initialisation from a seed.
    pub fn seeded(dims: HeadDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = 0.1;
        let HeadDims { n_points: n, channels: c, d_r, d_n, hidden: h } = dims;
        let mat = |r: usize, k: usize, rng: &mut ChaCha8Rng| {
            Array2::from_shape_simple_fn((r, k), || rng.random_range(-b..=b))
        };
        let level_weights = mat(3, n, &mut rng);
        let pool_matrix = mat(d_r, n * c, &mut rng);
        let roi = Linear::uniform(d_r, d_r, &mut rng, b);
        let in_matrix = mat(d_n, d_r, &mut rng);
        let out_matrix = mat(d_n, d_r, &mut rng);
        let sample = Linear::uniform(d_n, n, &mut rng, b);
        let edge_mlp = [Linear::uniform(h, d_n, &mut rng, b), Linear::uniform(d_n, h, &mut rng, b)];
        let node_mlp = [
            Linear::uniform(h, d_n, &mut rng, b),
            Linear::uniform(h, h, &mut rng, b),
            Linear::uniform(1, h, &mut rng, b),
        ];
        Ok(Self { level_weights, pool_matrix, roi, in_matrix, out_matrix, sample, edge_mlp, node_mlp })
    }

    /// Dimensions implied by the stored arrays.
    pub fn dims(&self) -> Result<HeadDims> {
        let n = self.level_weights.ncols();
        let d_r = self.pool_matrix.nrows();
        let d_n = self.in_matrix.nrows();
        let hidden = self.edge_mlp[0].weight.nrows();
        if n == 0 || !self.pool_matrix.ncols().is_multiple_of(n) {
            return Err(Error::Shape("pool matrix width is not a multiple of N".into()));
        }
        let dims = HeadDims { n_points: n, channels: self.pool_matrix.ncols() / n, d_r, d_n, hidden };
        self.check(dims)?;
        Ok(dims)
    }

    fn check(&self, dims: HeadDims) -> Result<()> {
        dims.validate()?;
        let HeadDims { n_points: n, d_r, d_n, hidden: h, .. } = dims;
        if self.level_weights.nrows() != 3 {
            return Err(Error::Shape("level weights must have 3 rows".into()));
        }
        self.roi.check("roi", d_r, d_r)?;
        for (name, m) in [("in_matrix", &self.in_matrix), ("out_matrix", &self.out_matrix)] {
            if m.dim() != (d_n, d_r) {
                return Err(Error::Shape(format!("{name}: expected {d_n}x{d_r}, got {:?}", m.dim())));
            }
        }
        self.sample.check("sample", d_n, n)?;
        self.edge_mlp[0].check("edge_mlp[0]", h, d_n)?;
        self.edge_mlp[1].check("edge_mlp[1]", d_n, h)?;
        self.node_mlp[0].check("node_mlp[0]", self.node_mlp[0].weight.nrows(), d_n)?;
        let h1 = self.node_mlp[0].weight.nrows();
        self.node_mlp[1].check("node_mlp[1]", self.node_mlp[1].weight.nrows(), h1)?;
        let h2 = self.node_mlp[1].weight.nrows();
        self.node_mlp[2].check("node_mlp[2]", 1, h2)?;
        let finite = self.level_weights.iter().chain(self.pool_matrix.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("non-finite head weight".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("weights serialise")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let w: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            context: format!("head weights at `{}`", e.path()),
            message: e.inner().to_string(),
        })?;
        w.dims()?;
        Ok(w)
    }
}

/// Softmax-over-levels weighted sum of three `N × C_f` feature maps.
pub fn aggregate_levels(levels: &[Array2<f64>; 3], level_weights: &Array2<f64>) -> Result<Array2<f64>> {
    let dim = levels[0].dim();
    if levels.iter().any(|l| l.dim() != dim) {
        return Err(Error::Shape("feature levels differ in shape".into()));
    }
    if level_weights.dim() != (3, dim.0) {
        return Err(Error::Shape(format!("level weights {:?} for {} sample points", level_weights.dim(), dim.0)));
    }
    let mut out = Array2::zeros(dim);
    for n in 0..dim.0 {
        let logits = level_weights.column(n);
        let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let e: Vec<f64> = logits.iter().map(|w| (w - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let mut row = out.row_mut(n);
        for (k, level) in levels.iter().enumerate() {
            row.scaled_add(e[k] / z, &level.row(n));
        }
    }
    Ok(out)
}

/// Flatten row-major and project to the RoI width.
pub fn roi_project(aggregated: &Array2<f64>, pool_matrix: &Array2<f64>) -> Result<Array1<f64>> {
    if pool_matrix.ncols() != aggregated.len() {
        return Err(Error::Shape(format!(
            "pool matrix has {} columns for {} features",
            pool_matrix.ncols(),
            aggregated.len()
        )));
    }
    let flat = Array1::from_iter(aggregated.iter().copied());
    Ok(pool_matrix.dot(&flat))
}

/// `K × K × d_n` tensor of pairwise edge features; entry `(i, j)` is how
/// candidate `i` relates to candidate `j`.
pub fn edge_tensor(rois: &Array2<f64>, xs: &Array2<f64>, weights: &HeadWeights) -> Result<Array3<f64>> {
    let dims = weights.dims()?;
    let k = rois.nrows();
    if rois.ncols() != dims.d_r || xs.dim() != (k, dims.n_points) {
        return Err(Error::Shape(format!(
            "rois {:?} and xs {:?} do not match d_r = {}, N = {}",
            rois.dim(),
            xs.dim(),
            dims.d_r,
            dims.n_points
        )));
    }
    let hidden: Vec<Array1<f64>> = rois.outer_iter().map(|f| relu(weights.roi.forward(f))).collect();
    let incoming: Vec<Array1<f64>> = hidden.iter().map(|h| weights.in_matrix.dot(h)).collect();
    let outgoing: Vec<Array1<f64>> = hidden.iter().map(|h| weights.out_matrix.dot(h)).collect();

    let d_n = dims.d_n;
    let data: Vec<f64> = (0..k)
        .into_par_iter()
        .flat_map_iter(|i| {
            let (incoming, outgoing) = (&incoming, &outgoing);
            (0..k).flat_map(move |j| {
                let dx = &xs.row(j) - &xs.row(i);
                let pre = &incoming[j] - &outgoing[i] + weights.sample.forward(dx.view());
                let h = relu(weights.edge_mlp[0].forward(pre.view()));
                weights.edge_mlp[1].forward(h.view()).into_iter()
            })
        })
        .collect();
    Ok(Array3::from_shape_vec((k, k, d_n), data).expect("edge tensor shape"))
}

/// Column-wise masked max: row `j` of the result is the element-wise maximum of
/// `edge[i, j, :]` over `i` with `adjacency[i, j]`, or zeros if there is none.
pub fn masked_max_pool(edge: &Array3<f64>, adjacency: &Array2<bool>) -> Result<Array2<f64>> {
    let (k, k2, d_n) = edge.dim();
    if k != k2 || adjacency.dim() != (k, k) {
        return Err(Error::Shape(format!("edge {:?} with adjacency {:?}", edge.dim(), adjacency.dim())));
    }
    let mut out = Array2::zeros((k, d_n));
    for j in 0..k {
        let mut acc: Option<Array1<f64>> = None;
        for i in (0..k).filter(|&i| adjacency[[i, j]]) {
            let v = edge.index_axis(Axis(0), i).row(j).to_owned();
            acc = Some(match acc {
                None => v,
                Some(a) => ndarray::Zip::from(&a).and(&v).map_collect(|&x, &y| x.max(y)),
            });
        }
        if let Some(a) = acc {
            out.row_mut(j).assign(&a);
        }
    }
    Ok(out)
}

pub fn node_scores(pooled: &Array2<f64>, node_mlp: &[Linear; 3]) -> Result<Vec<f64>> {
    if node_mlp[0].weight.ncols() != pooled.ncols() {
        return Err(Error::Shape(format!(
            "node MLP expects width {}, pooled rows have {}",
            node_mlp[0].weight.ncols(),
            pooled.ncols()
        )));
    }
    Ok(pooled
        .outer_iter()
        .map(|row| {
            let h1 = relu(node_mlp[0].forward(row));
            let h2 = relu(node_mlp[1].forward(h1.view()));
            sigmoid(node_mlp[2].forward(h2.view())[0])
        })
        .collect())
}

/// Per-candidate inputs of the head.
#[derive(Debug, Clone)]
pub struct HeadInput {
    /// Three `N × C_f` feature maps sampled along each candidate's anchor.
    pub level_feats: Vec<[Array2<f64>; 3]>,
    /// One-to-many scores.
    pub scores: Vec<f64>,
    /// Global-frame anchors.
    pub anchors: Vec<PolarAnchor>,
}

#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub rois: Array2<f64>,
    pub adjacency: Array2<bool>,
    pub pooled: Array2<f64>,
    pub scores: Vec<f64>,
}

pub fn head_forward(
    input: &HeadInput,
    frame: &ImageFrame,
    thresholds: &SuppressionThresholds,
    weights: &HeadWeights,
) -> Result<HeadOutput> {
    let dims = weights.dims()?;
    let k = input.scores.len();
    if k == 0 || input.level_feats.len() != k || input.anchors.len() != k {
        return Err(Error::Shape(format!(
            "{} feature sets, {} scores, {} anchors",
            input.level_feats.len(),
            k,
            input.anchors.len()
        )));
    }
    if frame.n_rows != dims.n_points {
        return Err(Error::Shape(format!("frame has {} rows, head expects {}", frame.n_rows, dims.n_points)));
    }

    let mut rois = Array2::zeros((k, dims.d_r));
    for (j, levels) in input.level_feats.iter().enumerate() {
        let agg = aggregate_levels(levels, &weights.level_weights)?;
        rois.row_mut(j).assign(&roi_project(&agg, &weights.pool_matrix)?);
    }
    let mut xs = Array2::zeros((k, dims.n_points));
    for (j, a) in input.anchors.iter().enumerate() {
        xs.row_mut(j).assign(&Array1::from(sample_anchor_xs(a, frame)?));
    }
    let adjacency = suppression_adjacency(&input.scores, &input.anchors, thresholds)?;
    let edge = edge_tensor(&rois, &xs, weights)?;
    let pooled = masked_max_pool(&edge, &adjacency)?;
    let scores = node_scores(&pooled, &weights.node_mlp)?;
    Ok(HeadOutput { rois, adjacency, pooled, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array};

    fn dims() -> HeadDims {
        HeadDims { n_points: 4, channels: 2, d_r: 3, d_n: 5, hidden: 6 }
    }

    fn ramp(n: usize, c: usize, off: f64) -> Array2<f64> {
        Array::from_shape_fn((n, c), |(i, j)| off + i as f64 * 0.5 - j as f64)
    }

    #[test]
    fn identical_levels_pass_through() {
        let w = HeadWeights::seeded(dims(), 1).unwrap();
        let f = ramp(4, 2, 1.0);
        let out = aggregate_levels(&[f.clone(), f.clone(), f.clone()], &w.level_weights).unwrap();
        for (a, b) in out.iter().zip(f.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_and_uniform_weights() {
        let levels = [ramp(4, 2, 0.0), ramp(4, 2, 3.0), ramp(4, 2, -6.0)];
        let mut w = Array2::zeros((3, 4));
        w.row_mut(0).fill(1e3);
        let out = aggregate_levels(&levels, &w).unwrap();
        assert!(out.iter().zip(levels[0].iter()).all(|(a, b)| (a - b).abs() < 1e-12));

        let mean = aggregate_levels(&levels, &Array2::zeros((3, 4))).unwrap();
        let expect = (&levels[0] + &levels[1] + &levels[2]) / 3.0;
        assert!(mean.iter().zip(expect.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn aggregate_shape_error() {
        let levels = [ramp(4, 2, 0.0), ramp(3, 2, 0.0), ramp(4, 2, 0.0)];
        assert!(matches!(aggregate_levels(&levels, &Array2::zeros((3, 4))), Err(Error::Shape(_))));
    }

    #[test]
    fn roi_projection_is_linear() {
        let w = HeadWeights::seeded(dims(), 2).unwrap();
        let zero = roi_project(&Array2::zeros((4, 2)), &w.pool_matrix).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));

        let (a, b) = (ramp(4, 2, 0.3), ramp(4, 2, -1.7));
        let sum = roi_project(&(&a + &b), &w.pool_matrix).unwrap();
        let parts = roi_project(&a, &w.pool_matrix).unwrap() + roi_project(&b, &w.pool_matrix).unwrap();
        assert!(sum.iter().zip(parts.iter()).all(|(x, y)| (x - y).abs() < 1e-12));

        // selector picks flattened entries 1 and 6
        let mut sel = Array2::zeros((2, 8));
        sel[[0, 1]] = 1.0;
        sel[[1, 6]] = 1.0;
        let v = roi_project(&a, &sel).unwrap();
        assert_eq!(v.to_vec(), vec![a[[0, 1]], a[[3, 0]]]);
        assert!(roi_project(&a, &Array2::zeros((2, 7))).is_err());
    }

    #[test]
    fn edge_cancellation_for_identical_candidates() {
        let mut w = HeadWeights::seeded(dims(), 3).unwrap();
        w.out_matrix = w.in_matrix.clone();
        let rois = arr2(&[[0.2, -0.4, 0.9], [0.2, -0.4, 0.9]]);
        let xs = arr2(&[[10.0, 20.0, 30.0, 40.0], [10.0, 20.0, 30.0, 40.0]]);
        let e = edge_tensor(&rois, &xs, &w).unwrap();
        let h = relu(w.edge_mlp[0].forward(w.sample.bias.view()));
        let expect = w.edge_mlp[1].forward(h.view());
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(e.index_axis(Axis(0), i).row(j).to_owned(), expect);
            }
        }
    }

    #[test]
    fn single_candidate_tensor() {
        let w = HeadWeights::seeded(dims(), 4).unwrap();
        let e = edge_tensor(&arr2(&[[0.1, 0.2, 0.3]]), &arr2(&[[1.0, 2.0, 3.0, 4.0]]), &w).unwrap();
        assert_eq!(e.dim(), (1, 1, 5));
    }

    #[test]
    fn edge_entries_are_pairwise_local() {
        let w = HeadWeights::seeded(dims(), 5).unwrap();
        let mut rois = Array::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 * 0.1 - 0.5);
        let xs = Array::from_shape_fn((4, 4), |(i, j)| (i * 7 + j * 3) as f64);
        let before = edge_tensor(&rois, &xs, &w).unwrap();
        rois.row_mut(3).mapv_inplace(|v| v * 3.0 + 1.0);
        let after = edge_tensor(&rois, &xs, &w).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(before.index_axis(Axis(0), i).row(j), after.index_axis(Axis(0), i).row(j));
            }
        }
    }

    #[test]
    fn max_pool_semantics() {
        let mut edge = Array3::zeros((3, 3, 2));
        edge[[0, 2, 0]] = 1.0;
        edge[[0, 2, 1]] = -3.0;
        edge[[1, 2, 0]] = -1.0;
        edge[[1, 2, 1]] = 2.0;
        edge[[0, 1, 0]] = -5.0;
        edge[[0, 1, 1]] = -6.0;
        let none = Array2::from_elem((3, 3), false);
        assert!(masked_max_pool(&edge, &none).unwrap().iter().all(|&v| v == 0.0));

        let mut adj = none.clone();
        adj[[0, 1]] = true;
        adj[[0, 2]] = true;
        adj[[1, 2]] = true;
        let p = masked_max_pool(&edge, &adj).unwrap();
        assert_eq!(p.row(1).to_vec(), vec![-5.0, -6.0]);
        assert_eq!(p.row(2).to_vec(), vec![1.0, 2.0]);
        assert_eq!(p.row(0).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn node_scores_behaviour() {
        let mut mlp = [Linear::zeros(6, 5), Linear::zeros(6, 6), Linear::zeros(1, 6)];
        mlp[2].bias[0] = 0.7;
        let pooled = Array::from_shape_fn((3, 5), |(i, j)| (i + j) as f64);
        let s = node_scores(&pooled, &mlp).unwrap();
        assert!(s.iter().all(|&v| v == sigmoid(0.7)));

        let w = HeadWeights::seeded(dims(), 6).unwrap();
        let same = Array2::from_shape_fn((2, 5), |(_, j)| j as f64 * 0.3);
        let s = node_scores(&same, &w.node_mlp).unwrap();
        assert_eq!(s[0], s[1]);
        assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn weights_json_roundtrip() {
        let w = HeadWeights::seeded(dims(), 7).unwrap();
        let back = HeadWeights::from_json(&w.to_json()).unwrap();
        assert_eq!(w, back);
        assert_eq!(back.dims().unwrap(), dims());
        assert!(HeadWeights::from_json("{\"level_weights\": 3}").is_err());
    }
}
