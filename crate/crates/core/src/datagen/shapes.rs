use rand::Rng;

use crate::error::{Error, Result};
use crate::voxel::VoxelGrid;

/// Procedural shape family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Head,
    Chair,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Head => "head",
            Family::Chair => "chair",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(Family::Head),
            "chair" => Ok(Family::Chair),
            other => Err(Error::Config(format!("unknown shape family {other:?}"))),
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Family::Head => 0,
            Family::Chair => 1,
        }
    }

    pub(crate) fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(Family::Head),
            1 => Ok(Family::Chair),
            other => Err(Error::Format(format!("unknown family code {other}"))),
        }
    }

    /// Inclusive `(low, high)` range of every parameter.
    pub fn param_ranges(self) -> &'static [(f64, f64)] {
        match self {
            Family::Head => &HEAD_RANGES,
            Family::Chair => &CHAIR_RANGES,
        }
    }

    /// Default binarization threshold for predictions of this family.
    pub fn default_threshold(self) -> f32 {
        match self {
            Family::Head => 0.01,
            Family::Chair => 0.2,
        }
    }
}

/// Head: half-axes x/y/z, nose length, nose half-width, nose height,
/// brow height, jaw taper.
const HEAD_RANGES: [(f64, f64); 8] = [
    (0.50, 0.70),
    (0.65, 0.90),
    (0.45, 0.62),
    (0.10, 0.25),
    (0.06, 0.14),
    (-0.20, 0.05),
    (0.10, 0.30),
    (0.00, 0.40),
];

/// Depth, as a fraction of the z half-axis, of the plane behind which a head
/// is cut away. A closed ellipsoid looks nearly the same from every azimuth.
const FACE_CUT: f64 = 0.3;

/// Chair: seat half-width, seat half-depth, seat height, back height,
/// back tilt (radians), leg half-thickness.
const CHAIR_RANGES: [(f64, f64); 6] = [
    (0.35, 0.60),
    (0.35, 0.55),
    (-0.20, 0.15),
    (0.35, 0.70),
    (0.00, 0.25),
    (0.05, 0.10),
];

/// Parameters of one procedural solid.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub family: Family,
    pub params: Vec<f64>,
    pub shape_id: usize,
}

/// Draws every parameter uniformly from its range.
pub fn sample_shape(family: Family, shape_id: usize, rng: &mut impl Rng) -> ShapeSpec {
    let params = family
        .param_ranges()
        .iter()
        .map(|&(lo, hi)| rng.gen_range(lo..=hi))
        .collect();
    ShapeSpec {
        family,
        params,
        shape_id,
    }
}

type V3 = [f64; 3];

fn ellipsoid(p: V3, c: V3, r: V3) -> f64 {
    let q = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
    let k0 = ((q[0] / r[0]).powi(2) + (q[1] / r[1]).powi(2) + (q[2] / r[2]).powi(2)).sqrt();
    let k1 = ((q[0] / (r[0] * r[0])).powi(2) + (q[1] / (r[1] * r[1])).powi(2) + (q[2] / (r[2] * r[2])).powi(2)).sqrt();
    if k1 == 0.0 {
        return -r[0].min(r[1]).min(r[2]);
    }
    k0 * (k0 - 1.0) / k1
}

fn boxed(p: V3, c: V3, half: V3) -> f64 {
    let q = [
        (p[0] - c[0]).abs() - half[0],
        (p[1] - c[1]).abs() - half[1],
        (p[2] - c[2]).abs() - half[2],
    ];
    let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
    outside + q[0].max(q[1]).max(q[2]).min(0.0)
}

impl ShapeSpec {
    /// Approximate signed distance: negative inside the solid.
    ///
    /// Coordinates live in `[-1, 1]^3` with `y` up and the front facing `+z`.
    pub fn sdf(&self, p: V3) -> f64 {
        let k = &self.params;
        match self.family {
            Family::Head => {
                let (ax, ay, az) = (k[0], k[1], k[2]);
                let (nose_len, nose_w, nose_y, brow_y, taper) = (k[3], k[4], k[5], k[6], k[7]);
                // narrow the lower half towards the chin
                let below = (-p[1] / ay).clamp(0.0, 1.0);
                let sx = 1.0 - taper * below;
                let cranium = ellipsoid([p[0] / sx, p[1], p[2]], [0.0; 3], [ax, ay, az]) * sx.min(1.0);
                let nose = ellipsoid(p, [0.0, nose_y, az * 0.85], [nose_w, 0.16, nose_len]);
                let brow = ellipsoid(p, [0.0, brow_y, az * 0.8], [ax * 0.6, 0.07, 0.14]);
                // keep only the front of the cranium, a face-like mask
                let face = cranium.max(FACE_CUT * az - p[2]);
                face.min(nose).min(brow)
            }
            Family::Chair => {
                let (sw, sd, sy, bh, tilt, lt) = (k[0], k[1], k[2], k[3], k[4], k[5]);
                let seat_half = 0.06;
                let seat = boxed(p, [0.0, sy - seat_half, 0.0], [sw, seat_half, sd]);
                let floor = -0.95;
                let leg_top = sy - 2.0 * seat_half;
                let leg_half = (leg_top - floor) / 2.0;
                let mut d = seat;
                for (sx, sz) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    let c = [sx * (sw - lt), floor + leg_half, sz * (sd - lt)];
                    d = d.min(boxed(p, c, [lt, leg_half + 0.01, lt]));
                }
                // backrest rotated backwards about its bottom edge
                let back_half = 0.05;
                let pivot = [0.0, sy, -sd + back_half];
                let (s, c) = tilt.sin_cos();
                let (ry, rz) = (p[1] - pivot[1], p[2] - pivot[2]);
                let local = [p[0], c * ry - s * rz, s * ry + c * rz];
                let back = boxed(local, [0.0, bh / 2.0, 0.0], [sw, bh / 2.0, back_half]);
                d.min(back)
            }
        }
    }

    pub fn contains(&self, p: V3) -> bool {
        self.sdf(p) <= 0.0
    }
}

/// Center of cell `i` of `res` along an axis spanning `[-1, 1]`; exactly
/// antisymmetric so mirrored cells map to negated coordinates.
pub fn cell_center(i: usize, res: usize) -> f64 {
    (2.0 * i as f64 + 1.0 - res as f64) / res as f64
}

/// Occupancy grid of any inside test; voxel `(z, y, x)` sits at world
/// `(x_c, -y_c, z_c)` so row 0 is the top, matching image rows.
pub fn voxelize_fn(res: usize, inside: impl Fn(V3) -> bool) -> VoxelGrid {
    VoxelGrid::from_fn([res; 3], |z, y, x| {
        let p = [cell_center(x, res), -cell_center(y, res), cell_center(z, res)];
        if inside(p) {
            1.0
        } else {
            0.0
        }
    })
}

/// Binary grid: a voxel is set iff its center lies inside the solid.
pub fn voxelize(spec: &ShapeSpec, res: usize) -> VoxelGrid {
    voxelize_fn(res, |p| spec.contains(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_seed_same_spec_and_params_in_range() {
        for family in [Family::Head, Family::Chair] {
            let a = sample_shape(family, 0, &mut ChaCha8Rng::seed_from_u64(5));
            let b = sample_shape(family, 0, &mut ChaCha8Rng::seed_from_u64(5));
            assert_eq!(a, b);
            let ranges = family.param_ranges();
            assert_eq!(a.params.len(), ranges.len());
            for (v, &(lo, hi)) in a.params.iter().zip(ranges) {
                assert!(*v >= lo && *v <= hi);
            }
        }
        assert_eq!(Family::Head.param_ranges().len(), 8);
        assert_eq!(Family::Chair.param_ranges().len(), 6);
    }

    #[test]
    fn ellipsoid_occupancy_matches_analytic_fraction() {
        let res = 32;
        let r = [0.5, 0.5, 0.5];
        let g = voxelize_fn(res, |p| ellipsoid(p, [0.0; 3], r) <= 0.0);
        let frac = g.count_at_least(0.5) as f64 / g.len() as f64;
        // (4/3) pi abc over the cube volume 8
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * r[0] * r[1] * r[2] / 8.0;
        assert!((frac - analytic).abs() / analytic < 0.03, "{frac} vs {analytic}");
    }

    #[test]
    fn heads_are_mirror_symmetric_voxel_grids() {
        let spec = sample_shape(Family::Head, 0, &mut ChaCha8Rng::seed_from_u64(1));
        let res = 32;
        let g = voxelize(&spec, res);
        for z in 0..res {
            for y in 0..res {
                for x in 0..res {
                    assert_eq!(g.get(z, y, x), g.get(z, y, res - 1 - x));
                }
            }
        }
    }

    #[test]
    fn sampled_shapes_voxelize_nonempty() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for family in [Family::Head, Family::Chair] {
            for i in 0..1000 {
                let spec = sample_shape(family, i, &mut rng);
                let res = if family == Family::Chair { 30 } else { 32 };
                assert!(voxelize(&spec, res).count_at_least(0.5) > 0);
            }
        }
    }

    #[test]
    fn solids_stay_inside_the_rotation_cylinder() {
        // every occupied voxel must lie within xz-radius 1 so any azimuth fits the view
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for family in [Family::Head, Family::Chair] {
            for i in 0..50 {
                let spec = sample_shape(family, i, &mut rng);
                let g = voxelize(&spec, 32);
                for z in 0..32 {
                    for y in 0..32 {
                        for x in 0..32 {
                            if g.get(z, y, x) > 0.5 {
                                let (px, pz) = (cell_center(x, 32), cell_center(z, 32));
                                assert!(px * px + pz * pz < 1.0, "{family:?} {i}");
                            }
                        }
                    }
                }
            }
        }
    }
}
