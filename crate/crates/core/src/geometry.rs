//! Lane and anchor representations and the polar coordinate frames.
//!
//! Two coordinate conventions are in play. Files and lane grids use image
//! coordinates (y grows downwards). All polar math uses a Cartesian frame
//! with y growing upwards; [`ImageFrame::to_cartesian`] and
//! [`ImageFrame::to_image`] are the only places where the flip happens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anchors with `|cos θ|` at or below this are rejected by the sampler.
pub const EPS_ANGLE: f64 = 1e-6;

/// Tolerance used when deciding whether a grid row falls inside a polyline's y-span.
const ROW_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn distance(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

/// Working image frame: `n_rows` equally spaced sample rows at `y = i·H/N`, `i = 1..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageFrame {
    #[serde(rename = "w")]
    pub width: f64,
    #[serde(rename = "h")]
    pub height: f64,
    pub n_rows: usize,
}

impl ImageFrame {
    pub fn new(width: f64, height: f64, n_rows: usize) -> Result<Self> {
        let frame = Self { width, height, n_rows };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width.is_finite()) || !(self.height > 0.0 && self.height.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "frame dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if self.n_rows < 2 {
            return Err(Error::InvalidInput(format!("n_rows must be >= 2, got {}", self.n_rows)));
        }
        Ok(())
    }

    /// Spacing between consecutive sample rows in pixels.
    pub fn row_step(&self) -> f64 {
        self.height / self.n_rows as f64
    }

    /// Image-space y of the 0-based row `row`.
    pub fn row_y(&self, row: usize) -> f64 {
        (row + 1) as f64 * self.height / self.n_rows as f64
    }

    pub fn row_ys(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row_y(i)).collect()
    }

    pub fn to_cartesian(&self, p: Point) -> Point {
        Point::new(p.x, self.height - p.y)
    }

    pub fn to_image(&self, p: Point) -> Point {
        Point::new(p.x, self.height - p.y)
    }

    /// Default global pole: `(W/2, 0.4·H)` in image coordinates.
    pub fn default_global_pole(&self) -> Pole {
        Pole::global(self.to_cartesian(Point::new(self.width / 2.0, 0.4 * self.height)))
    }
}

/// A lane as x-coordinates on the frame's y-grid over a contiguous valid row range.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneGrid {
    frame: ImageFrame,
    start: usize,
    xs: Vec<f64>,
}

impl LaneGrid {
    /// `xs[k]` is the x-coordinate at row `start + k`.
    pub fn new(frame: ImageFrame, start: usize, xs: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::InvalidLane("lane has no valid rows".into()));
        }
        if start + xs.len() > frame.n_rows {
            return Err(Error::InvalidLane(format!(
                "rows {}..{} exceed frame with {} rows",
                start,
                start + xs.len(),
                frame.n_rows
            )));
        }
        if let Some(bad) = xs.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidLane(format!("non-finite x at row {}", start + bad)));
        }
        Ok(Self { frame, start, xs })
    }

    pub fn frame(&self) -> &ImageFrame {
        &self.frame
    }

    /// First valid row (0-based).
    pub fn start(&self) -> usize {
        self.start
    }

    /// Last valid row (0-based, inclusive).
    pub fn end(&self) -> usize {
        self.start + self.xs.len() - 1
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn rows(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end()
    }

    pub fn x(&self, row: usize) -> Option<f64> {
        row.checked_sub(self.start).and_then(|k| self.xs.get(k).copied())
    }

    /// Sample points in image coordinates, top row first.
    pub fn points(&self) -> Vec<Point> {
        self.rows().zip(&self.xs).map(|(row, &x)| Point::new(x, self.frame.row_y(row))).collect()
    }

    /// Sample points in the Cartesian frame.
    pub fn cartesian_points(&self) -> Vec<Point> {
        self.points().into_iter().map(|p| self.frame.to_cartesian(p)).collect()
    }

    /// Same rows, x shifted by `offsets` (one per valid row).
    pub fn with_offsets(&self, offsets: &[f64]) -> Result<Self> {
        if offsets.len() != self.xs.len() {
            return Err(Error::Shape(format!("{} offsets for a lane with {} rows", offsets.len(), self.xs.len())));
        }
        let xs = self.xs.iter().zip(offsets).map(|(x, d)| x + d).collect();
        LaneGrid::new(self.frame, self.start, xs)
    }

    /// Restrict to rows `start..=end` (clamped to the valid range).
    pub fn restrict(&self, start: usize, end: usize) -> Result<Self> {
        let s = start.max(self.start);
        let e = end.min(self.end());
        if s > e {
            return Err(Error::InvalidLane(format!("rows {start}..={end} do not intersect the lane")));
        }
        LaneGrid::new(self.frame, s, self.xs[s - self.start..=e - self.start].to_vec())
    }
}

/// Resample an ordered polyline (image coordinates) onto the frame's y-grid.
///
/// Rows inside the polyline's y-span get linearly interpolated x; the valid
/// range is the set of covered rows.
pub fn polyline_to_grid(points: &[Point], frame: &ImageFrame) -> Result<LaneGrid> {
    if points.len() < 2 {
        return Err(Error::InvalidLane(format!("need at least 2 points, got {}", points.len())));
    }
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::InvalidLane("non-finite polyline point".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.y.total_cmp(&b.y));
    if pts.windows(2).any(|w| w[1].y <= w[0].y) {
        return Err(Error::InvalidLane("polyline y-coordinates are not strictly monotonic".into()));
    }
    let (y_min, y_max) = (pts[0].y, pts[pts.len() - 1].y);
    if y_max - y_min < frame.row_step() - ROW_EPS {
        return Err(Error::InvalidLane(format!(
            "y-span {:.3} is shorter than one grid step {:.3}",
            y_max - y_min,
            frame.row_step()
        )));
    }

    let mut start = None;
    let mut xs = Vec::new();
    let mut seg = 0;
    for row in 0..frame.n_rows {
        let y = frame.row_y(row);
        if y < y_min - ROW_EPS || y > y_max + ROW_EPS {
            continue;
        }
        let y = y.clamp(y_min, y_max);
        while seg + 2 < pts.len() && pts[seg + 1].y < y {
            seg += 1;
        }
        let (a, b) = (pts[seg], pts[seg + 1]);
        let t = ((y - a.y) / (b.y - a.y)).clamp(0.0, 1.0);
        start.get_or_insert(row);
        xs.push(a.x + t * (b.x - a.x));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidLane(format!("polyline covers {} grid rows, need at least 2", xs.len())));
    }
    LaneGrid::new(*frame, start.unwrap_or(0), xs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoleKind {
    Local,
    Global,
}

/// Origin of a polar frame, positioned in Cartesian pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pole {
    pub position: Point,
    pub kind: PoleKind,
}

impl Pole {
    pub fn local(position: Point) -> Self {
        Self { position, kind: PoleKind::Local }
    }

    pub fn global(position: Point) -> Self {
        Self { position, kind: PoleKind::Global }
    }
}

/// A straight line in polar form relative to `pole`: every point `p` on the
/// line satisfies `cos θ·(p.x − c.x) + sin θ·(p.y − c.y) = radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarAnchor {
    pub theta: f64,
    pub radius: f64,
    pub pole: Pole,
}

impl PolarAnchor {
    pub fn new(theta: f64, radius: f64, pole: Pole) -> Self {
        Self { theta, radius, pole }
    }

    fn normal(&self) -> Point {
        Point::new(self.theta.cos(), self.theta.sin())
    }

    /// The line through two Cartesian points, expressed against `pole` with
    /// `θ ∈ (−π/2, π/2)`. The points must differ in y.
    pub fn through_points(a: Point, b: Point, pole: Pole) -> Result<Self> {
        let d = b.sub(a);
        if d.y == 0.0 {
            return Err(Error::NearHorizontalAnchor { cos_theta: 0.0 });
        }
        // normal (dy, -dx), flipped so its x component is positive
        let len = d.x.hypot(d.y);
        let (mut nx, mut ny) = (d.y / len, -d.x / len);
        if nx < 0.0 {
            nx = -nx;
            ny = -ny;
        }
        let theta = ny.atan2(nx);
        let radius = nx * (a.x - pole.position.x) + ny * (a.y - pole.position.y);
        Ok(Self::new(theta, radius, pole))
    }

    /// Fold an arbitrary angle into `(−π/2, π/2]`, negating the radius when the
    /// normal flips.
    pub fn canonical(self) -> Self {
        let mut theta = self.theta;
        let mut radius = self.radius;
        let two_pi = 2.0 * std::f64::consts::PI;
        theta = theta.rem_euclid(two_pi);
        if theta > std::f64::consts::PI {
            theta -= two_pi;
        }
        if theta > std::f64::consts::FRAC_PI_2 {
            theta -= std::f64::consts::PI;
            radius = -radius;
        } else if theta <= -std::f64::consts::FRAC_PI_2 {
            theta += std::f64::consts::PI;
            radius = -radius;
        }
        Self { theta, radius, pole: self.pole }
    }

    /// x on the anchor line at Cartesian height `y`.
    pub fn x_at(&self, y: f64) -> Result<f64> {
        let (s, c) = self.theta.sin_cos();
        if c.abs() <= EPS_ANGLE {
            return Err(Error::NearHorizontalAnchor { cos_theta: c });
        }
        let shift = self.radius + c * self.pole.position.x + s * self.pole.position.y;
        Ok(-y * self.theta.tan() + shift / c)
    }

    /// Signed residual of the line equation at a Cartesian point.
    pub fn residual(&self, p: Point) -> f64 {
        self.normal().dot(p.sub(self.pole.position)) - self.radius
    }
}

/// Re-express a local-pole anchor against the global pole. The angle is shared;
/// the radius shifts by the projection of the pole offset on the normal.
pub fn local_to_global_radius(anchor: &PolarAnchor, global_pole: &Pole) -> PolarAnchor {
    let offset = anchor.pole.position.sub(global_pole.position);
    PolarAnchor { theta: anchor.theta, radius: anchor.radius + anchor.normal().dot(offset), pole: *global_pole }
}

/// x-coordinates of the anchor at every grid row of `frame`, top row first.
pub fn sample_anchor_xs(anchor: &PolarAnchor, frame: &ImageFrame) -> Result<Vec<f64>> {
    (0..frame.n_rows).map(|row| anchor.x_at(frame.height - frame.row_y(row))).collect()
}

/// The anchor sampled on every row of `frame` as a lane.
pub fn anchor_lane(anchor: &PolarAnchor, frame: &ImageFrame) -> Result<LaneGrid> {
    LaneGrid::new(*frame, 0, sample_anchor_xs(anchor, frame)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LpmConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    /// Positive-pole radius threshold in pixels. No default.
    pub lambda_l: f64,
    pub top_k: usize,
}

impl LpmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::InvalidInput("pole grid must be non-empty".into()));
        }
        if !(self.lambda_l > 0.0) {
            return Err(Error::InvalidInput(format!("lambda_l must be positive, got {}", self.lambda_l)));
        }
        if self.top_k > self.grid_h * self.grid_w {
            return Err(Error::InvalidK { k: self.top_k, len: self.grid_h * self.grid_w });
        }
        Ok(())
    }
}

/// Local poles at the cell centres of a `grid_h × grid_w` partition of the
/// image, row-major from the top-left cell.
pub fn pole_lattice(frame: &ImageFrame, grid_h: usize, grid_w: usize) -> Vec<Pole> {
    let (cw, ch) = (frame.width / grid_w as f64, frame.height / grid_h as f64);
    (0..grid_h)
        .flat_map(|r| (0..grid_w).map(move |c| (r, c)))
        .map(|(r, c)| {
            let img = Point::new((c as f64 + 0.5) * cw, (r as f64 + 0.5) * ch);
            Pole::local(frame.to_cartesian(img))
        })
        .collect()
}

/// Per-pole regression and classification targets, row-major over the lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleGridLabels {
    pub grid_h: usize,
    pub grid_w: usize,
    /// Distance to the nearest lane; `+∞` when there are no lanes.
    pub r_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub s_hat: Vec<u8>,
}

impl PoleGridLabels {
    pub fn positives(&self) -> usize {
        self.s_hat.iter().filter(|&&s| s == 1).count()
    }
}

/// Closest point on segment `ab` to `p`.
pub fn nearest_on_segment(p: Point, a: Point, b: Point) -> Point {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return a;
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    Point::new(a.x + t * ab.x, a.y + t * ab.y)
}

/// Ground-truth targets for the local poles: distance and direction to the
/// nearest point on any lane polyline, positive iff strictly within `λ^l`.
pub fn lpm_labels(gt_lanes: &[LaneGrid], poles: &[Pole], cfg: &LpmConfig) -> Result<PoleGridLabels> {
    cfg.validate()?;
    if poles.len() != cfg.grid_h * cfg.grid_w {
        return Err(Error::Shape(format!("{} poles for a {}x{} grid", poles.len(), cfg.grid_h, cfg.grid_w)));
    }
    let polylines: Vec<Vec<Point>> = gt_lanes.iter().map(LaneGrid::cartesian_points).collect();

    let mut labels = PoleGridLabels {
        grid_h: cfg.grid_h,
        grid_w: cfg.grid_w,
        r_hat: Vec::with_capacity(poles.len()),
        theta_hat: Vec::with_capacity(poles.len()),
        s_hat: Vec::with_capacity(poles.len()),
    };
    for pole in poles {
        let c = pole.position;
        let mut best: Option<(f64, Point)> = None;
        for line in &polylines {
            for seg in line.windows(2) {
                let q = nearest_on_segment(c, seg[0], seg[1]);
                let d = c.distance(q);
                // strict "<" keeps the earlier lane on ties
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, q));
                }
            }
        }
        match best {
            Some((d, q)) => {
                let v = q.sub(c);
                let theta = if d == 0.0 { 0.0 } else { v.y.atan2(v.x) };
                labels.r_hat.push(d);
                labels.theta_hat.push(theta);
                labels.s_hat.push(u8::from(d < cfg.lambda_l));
            }
            None => {
                labels.r_hat.push(f64::INFINITY);
                labels.theta_hat.push(0.0);
                labels.s_hat.push(0);
            }
        }
    }
    Ok(labels)
}

/// Indices of the `k` highest scores, descending; ties go to the lower index.
pub fn top_k_select(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::InvalidK { k, len: scores.len() });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}
