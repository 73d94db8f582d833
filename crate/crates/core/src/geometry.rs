//! Rotation-invariant sampling coordinates and the constant offset fields
//! that turn a regular-grid convolution into a rotation-invariant one.
//!
//! Two frames are used throughout:
//!
//! * raster: 0-based `(row, col)` pixel indices, rows growing downward;
//! * centered Cartesian: origin at the image center, axis 1 to the right
//!   (columns) and axis 2 upward (rows flipped).
//!
//! For an `H × H` grid with even `H` the center sits at `((H-1)/2, (H-1)/2)`
//! in raster coordinates, which never coincides with a pixel, so every
//! pixel has a well-defined radial direction.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// A point in the centered Cartesian frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Anticlockwise rotation by `theta` radians.
    pub fn rotated(self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            x: c * self.x - s * self.y,
            y: s * self.x + c * self.y,
        }
    }
}

/// A point in raster coordinates (fractional rows and columns allowed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterPoint {
    pub row: f64,
    pub col: f64,
}

/// Kernel half-size `n` and square grid height `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridConfig {
    n: usize,
    height: usize,
}

impl GridConfig {
    pub fn new(n: usize, height: usize) -> Result<Self> {
        validate_height(height)?;
        Ok(Self { n, height })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn kernel_size(&self) -> usize {
        2 * self.n + 1
    }

    pub fn slots(&self) -> usize {
        self.kernel_size() * self.kernel_size()
    }
}

fn validate_height(height: usize) -> Result<()> {
    if height == 0 || !height.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "height must be a positive even integer, got {height}"
        )));
    }
    Ok(())
}

/// Center of an `H × H` grid in raster coordinates.
pub fn center_of(height: usize) -> Result<RasterPoint> {
    validate_height(height)?;
    let c = (height as f64 - 1.0) / 2.0;
    Ok(RasterPoint { row: c, col: c })
}

/// Maps a raster position to the centered Cartesian frame.
pub fn to_cartesian(row: f64, col: f64, center: RasterPoint) -> Point {
    Point {
        x: col - center.col,
        y: center.row - row,
    }
}

/// Maps a centered Cartesian point back to raster coordinates.
pub fn to_raster(p: Point, center: RasterPoint) -> RasterPoint {
    RasterPoint {
        row: center.row - p.y,
        col: center.col + p.x,
    }
}

/// Angle of the ray from `center` to the pixel, in `(-π, π]`.
pub fn radial_direction(row: f64, col: f64, center: RasterPoint) -> Result<f64> {
    let p = to_cartesian(row, col, center);
    if p.x == 0.0 && p.y == 0.0 {
        return Err(Error::DegenerateDirection { row, col });
    }
    Ok(wrap_angle(p.y.atan2(p.x)))
}

fn wrap_angle(phi: f64) -> f64 {
    if phi <= -PI {
        phi + 2.0 * PI
    } else {
        phi
    }
}

/// Sample points of the rotation-invariant coordinate system anchored at
/// angle `anchor_angle`, relative to the location they are taken around.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePointSet {
    pub points: Vec<Point>,
    pub anchor_angle: f64,
}

/// Center first, then ring-major with `8r` points equally spaced on the
/// circle of radius `r`, the first on the anchor ray, proceeding
/// anticlockwise.
pub fn sample_points(n: usize, anchor_angle: f64) -> SamplePointSet {
    let mut points = Vec::with_capacity((2 * n + 1) * (2 * n + 1));
    points.push(Point::ORIGIN);
    for r in 1..=n {
        let count = 8 * r;
        let radius = r as f64;
        for i in 0..count {
            let angle = anchor_angle + (i as f64) * 2.0 * PI / count as f64;
            let (s, c) = angle.sin_cos();
            points.push(Point::new(radius * c, radius * s));
        }
    }
    SamplePointSet { points, anchor_angle }
}

/// Integer lattice `{-n..n}²` in the ring-major order matching
/// [`sample_points`]: center first, then each Chebyshev ring anticlockwise
/// starting from `(r, 0)`.
pub fn regular_grid(n: usize) -> Vec<(i64, i64)> {
    let mut grid = vec![(0i64, 0i64)];
    let n = n as i64;
    for r in 1..=n {
        let mut ring: Vec<(i64, i64)> = (-r..=r)
            .flat_map(|a| (-r..=r).map(move |b| (a, b)))
            .filter(|&(a, b)| a.abs().max(b.abs()) == r)
            .collect();
        ring.sort_by(|&(a1, b1), &(a2, b2)| lattice_angle(a1, b1).total_cmp(&lattice_angle(a2, b2)));
        grid.extend(ring);
    }
    grid
}

// Angle in [0, 2π) so that (r, 0) sorts first.
fn lattice_angle(a: i64, b: i64) -> f64 {
    let t = (b as f64).atan2(a as f64);
    if t < 0.0 {
        t + 2.0 * PI
    } else {
        t
    }
}

/// For each kernel slot `kh * K + kw`, the ring-major index of its lattice
/// point. Slot `(kh, kw)` sits at raster displacement `(kh - n, kw - n)`,
/// i.e. Cartesian `(kw - n, n - kh)`.
pub fn slot_to_ring_index(n: usize) -> Vec<usize> {
    let grid = regular_grid(n);
    let k = 2 * n + 1;
    let lookup: HashMap<(i64, i64), usize> = grid.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    (0..k * k)
        .map(|slot| {
            let (kh, kw) = ((slot / k) as i64, (slot % k) as i64);
            lookup[&(kw - n as i64, n as i64 - kh)]
        })
        .collect()
}

/// Per-pixel constant displacements from the regular grid to the
/// rotation-invariant sample points.
///
/// Stored as `[2·K², H, H]` with channel `2·slot` the row displacement
/// `dy` and `2·slot + 1` the column displacement `dx`, both in raster
/// units, where `slot = kh * K + kw`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    config: GridConfig,
    data: Vec<f64>,
}

impl OffsetField {
    /// All-zero field: sampling reduces to the regular grid.
    pub fn zeros(config: GridConfig) -> Self {
        let h = config.height;
        Self {
            config,
            data: vec![0.0; 2 * config.slots() * h * h],
        }
    }

    pub fn config(&self) -> GridConfig {
        self.config
    }

    pub fn height(&self) -> usize {
        self.config.height
    }

    pub fn channels(&self) -> usize {
        2 * self.config.slots()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Raster displacement `(dy, dx)` of `slot` at pixel `(row, col)`.
    pub fn offset(&self, row: usize, col: usize, slot: usize) -> (f64, f64) {
        let plane = self.config.height * self.config.height;
        let pix = row * self.config.height + col;
        (
            self.data[2 * slot * plane + pix],
            self.data[(2 * slot + 1) * plane + pix],
        )
    }

    pub fn set_offset(&mut self, row: usize, col: usize, slot: usize, dy: f64, dx: f64) {
        let plane = self.config.height * self.config.height;
        let pix = row * self.config.height + col;
        self.data[2 * slot * plane + pix] = dy;
        self.data[(2 * slot + 1) * plane + pix] = dx;
    }

    /// Displacement of `slot` at `(row, col)` in the Cartesian frame.
    pub fn offset_cartesian(&self, row: usize, col: usize, slot: usize) -> Point {
        let (dy, dx) = self.offset(row, col, slot);
        Point::new(dx, -dy)
    }

    /// Absolute raster position sampled by `slot` for output pixel `(row, col)`.
    pub fn sample_position(&self, row: usize, col: usize, slot: usize) -> RasterPoint {
        let k = self.config.kernel_size();
        let n = self.config.n as f64;
        let (dy, dx) = self.offset(row, col, slot);
        RasterPoint {
            row: row as f64 + (slot / k) as f64 - n + dy,
            col: col as f64 + (slot % k) as f64 - n + dx,
        }
    }

    /// CSV with header `x0_row,x0_col,slot,dy,dx`, one row per
    /// (pixel, slot), values printed with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x0_row,x0_col,slot,dy,dx")?;
        let h = self.config.height;
        for row in 0..h {
            for col in 0..h {
                for slot in 0..self.config.slots() {
                    let (dy, dx) = self.offset(row, col, slot);
                    writeln!(out, "{row},{col},{slot},{dy:.16e},{dx:.16e}")?;
                }
            }
        }
        Ok(())
    }
}

/// Offsets `Q_α(φ(X0)) − P_α` for every pixel of the grid.
pub fn offset_field(config: GridConfig) -> Result<OffsetField> {
    let n = config.n;
    let k = config.kernel_size();
    let h = config.height;
    let center = center_of(h)?;
    let ring_index = slot_to_ring_index(n);
    let mut field = OffsetField::zeros(config);
    for row in 0..h {
        for col in 0..h {
            let phi = radial_direction(row as f64, col as f64, center)?;
            let q = sample_points(n, phi).points;
            for slot in 0..k * k {
                let qa = q[ring_index[slot]];
                // raster displacement of Q is (-q.y, q.x); of P is (kh-n, kw-n)
                let dy = -qa.y - ((slot / k) as f64 - n as f64);
                let dx = qa.x - ((slot % k) as f64 - n as f64);
                field.set_offset(row, col, slot, dy, dx);
            }
        }
    }
    Ok(field)
}

type FieldCache = Mutex<HashMap<(usize, usize), Arc<OffsetField>>>;

/// Process-wide cache of offset fields keyed by `(n, H)`.
pub fn cached_offset_field(n: usize, height: usize) -> Result<Arc<OffsetField>> {
    static CACHE: OnceLock<FieldCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(f) = cache.lock().expect("offset cache poisoned").get(&(n, height)) {
        return Ok(Arc::clone(f));
    }
    let field = Arc::new(offset_field(GridConfig::new(n, height)?)?);
    cache
        .lock()
        .expect("offset cache poisoned")
        .insert((n, height), Arc::clone(&field));
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2 as S;

    fn close(a: Point, b: Point, tol: f64) -> bool {
        (a.x - b.x).abs() <= tol && (a.y - b.y).abs() <= tol
    }

    #[test]
    fn center_examples() {
        for (h, c) in [(32, 15.5), (2, 0.5), (4, 1.5)] {
            let p = center_of(h).unwrap();
            assert_eq!((p.row, p.col), (c, c));
        }
    }

    #[test]
    fn odd_or_zero_height_rejected() {
        assert!(matches!(center_of(5), Err(Error::InvalidConfig(_))));
        assert!(matches!(center_of(0), Err(Error::InvalidConfig(_))));
        assert!(GridConfig::new(1, 7).is_err());
    }

    #[test]
    fn radial_direction_examples() {
        let c = RasterPoint { row: 0.0, col: 0.0 };
        // centered (1, 0), (0, 1), (-1, -1)
        assert_eq!(radial_direction(0.0, 1.0, c).unwrap(), 0.0);
        assert!((radial_direction(-1.0, 0.0, c).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!((radial_direction(1.0, -1.0, c).unwrap() + 3.0 * PI / 4.0).abs() < 1e-15);
        // negative x-axis maps to +π, never -π
        assert_eq!(radial_direction(0.0, -1.0, c).unwrap(), PI);
    }

    #[test]
    fn radial_direction_at_center_is_an_error() {
        let c = RasterPoint { row: 1.0, col: 1.0 };
        assert!(matches!(
            radial_direction(1.0, 1.0, c),
            Err(Error::DegenerateDirection { .. })
        ));
    }

    #[test]
    fn first_ring_at_zero_anchor() {
        let pts = sample_points(1, 0.0).points;
        let expected = [
            (0.0, 0.0),
            (1.0, 0.0),
            (S, S),
            (0.0, 1.0),
            (-S, S),
            (-1.0, 0.0),
            (-S, -S),
            (0.0, -1.0),
            (S, -S),
        ];
        assert_eq!(pts.len(), 9);
        for (p, &(x, y)) in pts.iter().zip(&expected) {
            assert!(close(*p, Point::new(x, y), 1e-15), "{p:?} vs {x},{y}");
        }
    }

    #[test]
    fn quarter_turn_anchor_rotates_ring() {
        let base = sample_points(1, 0.0).points;
        let turned = sample_points(1, PI / 2.0).points;
        assert!(close(turned[1], Point::new(0.0, 1.0), 1e-15));
        for (a, b) in base.iter().zip(&turned) {
            assert!(close(a.rotated(PI / 2.0), *b, 1e-15));
        }
    }

    #[test]
    fn second_ring_spacing() {
        let pts = sample_points(2, 0.3).points;
        assert_eq!(pts.len(), 25);
        let ring2 = &pts[9..];
        assert_eq!(ring2.len(), 16);
        for (i, p) in ring2.iter().enumerate() {
            assert!((p.norm() - 2.0).abs() < 1e-12);
            let expected = 0.3 + i as f64 * PI / 8.0;
            assert!(close(*p, Point::new(2.0 * expected.cos(), 2.0 * expected.sin()), 1e-12));
        }
    }

    #[test]
    fn regular_grid_orders() {
        assert_eq!(regular_grid(0), vec![(0, 0)]);
        assert_eq!(
            regular_grid(1),
            vec![
                (0, 0),
                (1, 0),
                (1, 1),
                (0, 1),
                (-1, 1),
                (-1, 0),
                (-1, -1),
                (0, -1),
                (1, -1)
            ]
        );
        let g2 = regular_grid(2);
        assert_eq!(g2.len(), 25);
        let ring2: Vec<_> = g2[9..].to_vec();
        assert_eq!(ring2.len(), 16);
        assert!(ring2.iter().all(|&(a, b)| a.abs().max(b.abs()) == 2));
        assert_eq!(ring2[0], (2, 0));
        assert_eq!(ring2[1], (2, 1));
    }

    #[test]
    fn slot_mapping_is_a_bijection() {
        for n in 0..4 {
            let mut m = slot_to_ring_index(n);
            m.sort_unstable();
            assert_eq!(m, (0..(2 * n + 1) * (2 * n + 1)).collect::<Vec<_>>());
        }
        // center slot of a 3x3 kernel is ring index 0; top-right (kh=0,kw=2)
        // is Cartesian (1, 1), ring index 2
        let m = slot_to_ring_index(1);
        assert_eq!(m[4], 0);
        assert_eq!(m[2], 2);
        assert_eq!(m[5], 1);
    }

    #[test]
    fn zero_half_size_has_zero_offsets() {
        let f = offset_field(GridConfig::new(0, 8).unwrap()).unwrap();
        assert_eq!(f.channels(), 2);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn offsets_stay_on_the_circles() {
        let cfg = GridConfig::new(2, 8).unwrap();
        let f = offset_field(cfg).unwrap();
        assert_eq!(f.channels(), 50);
        let grid = regular_grid(2);
        let ring = slot_to_ring_index(2);
        for row in 0..8 {
            for col in 0..8 {
                for slot in 0..25 {
                    let (a, b) = grid[ring[slot]];
                    let d = f.offset_cartesian(row, col, slot);
                    let q = Point::new(a as f64 + d.x, b as f64 + d.y);
                    let r = a.abs().max(b.abs()) as f64;
                    assert!((q.norm() - r).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn csv_export_row_count_and_header() {
        let f = offset_field(GridConfig::new(1, 4).unwrap()).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x0_row,x0_col,slot,dy,dx"));
        assert_eq!(lines.count(), 144);
    }

    #[test]
    fn cache_returns_shared_field() {
        let a = cached_offset_field(1, 6).unwrap();
        let b = cached_offset_field(1, 6).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert!(cached_offset_field(1, 5).is_err());
    }
}
