use super::Box3D;

/// Intersections smaller than this (m^2) are treated as empty.
pub const AREA_EPSILON: f64 = 1e-9;

type Vec2 = [f64; 2];

#[inline]
fn cross(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn polygon_area(poly: &[Vec2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * acc.abs()
}

/// Sutherland-Hodgman: clip `subject` by each edge of the convex,
/// counter-clockwise polygon `clip`.
fn clip_polygon(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    // Scale-aware tolerance so coincident edges keep their vertices.
    let scale = clip
        .iter()
        .chain(subject)
        .fold(1.0f64, |m, p| m.max(p[0].abs()).max(p[1].abs()));
    let tol = 1e-12 * scale * scale;

    let mut output: Vec<Vec2> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let c1 = clip[i];
        let c2 = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let d_cur = cross(c1, c2, cur);
            let d_prev = cross(c1, c2, prev);
            let cur_in = d_cur >= -tol;
            let prev_in = d_prev >= -tol;
            if cur_in {
                if !prev_in {
                    output.push(segment_hit(prev, cur, d_prev, d_cur));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_hit(prev, cur, d_prev, d_cur));
            }
        }
    }
    output
}

#[inline]
fn segment_hit(a: Vec2, b: Vec2, da: f64, db: f64) -> Vec2 {
    let t = da / (da - db);
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Area shared by the two yaw-rotated footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    if a == b {
        return a.bev_area();
    }
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    let reach = a.bev_radius() + b.bev_radius();
    if dx * dx + dy * dy > reach * reach {
        return 0.0;
    }
    let area = polygon_area(&clip_polygon(&a.bev_corners(), &b.bev_corners()));
    if area < AREA_EPSILON {
        0.0
    } else {
        area.min(a.bev_area()).min(b.bev_area())
    }
}

/// Bird's-eye-view IoU of the two `l x w` footprints.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = bev_intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.bev_area() + b.bev_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU: footprint intersection times z-overlap, over the union of volumes.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    if a == b {
        return 1.0;
    }
    let z_overlap = (a.z_max().min(b.z_max()) - a.z_min().max(b.z_min())).max(0.0);
    if z_overlap == 0.0 {
        return 0.0;
    }
    let inter_area = bev_intersection_area(a, b);
    if inter_area == 0.0 {
        return 0.0;
    }
    let inter = inter_area * z_overlap;
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn bx(cx: f64, cy: f64, cz: f64, l: f64, w: f64, h: f64, yaw: f64) -> Box3D {
        Box3D::new(cx, cy, cz, l, w, h, yaw).unwrap()
    }

    /// Stratified grid estimate of the footprint intersection: sample cell
    /// centers inside `a` and count those inside `b`.
    fn grid_intersection(a: &Box3D, b: &Box3D, n: usize) -> f64 {
        let mut hits = 0usize;
        for i in 0..n {
            for j in 0..n {
                let u = ((i as f64 + 0.5) / n as f64 - 0.5) * a.l;
                let v = ((j as f64 + 0.5) / n as f64 - 0.5) * a.w;
                let w = a.to_world([u, v, 0.0]);
                if b.contains_bev(w[0], w[1]) {
                    hits += 1;
                }
            }
        }
        a.bev_area() * hits as f64 / (n * n) as f64
    }

    #[test]
    fn identical_boxes_have_unit_iou() {
        let a = bx(3.0, -2.0, 0.5, 4.2, 1.8, 1.5, 0.7);
        assert!((bev_iou(&a, &a) - 1.0).abs() < 1e-12);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_along_shared_axis() {
        let a = bx(0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0);
        let b = bx(2.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0);
        assert_eq!(bev_iou(&a, &b), 0.0);
        let c = bx(5.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0);
        assert_eq!(bev_iou(&a, &c), 0.0);
    }

    #[test]
    fn half_shifted_unit_squares() {
        let a = bx(0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0);
        let b = bx(1.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0);
        assert!((bev_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        // z extents coincide, so the volumetric ratio equals the footprint one.
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn z_disjoint_boxes_have_zero_3d_iou() {
        let a = bx(0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0);
        let b = bx(0.0, 0.0, 5.0, 2.0, 2.0, 2.0, 0.0);
        assert_eq!(bev_iou(&a, &b), 1.0);
        assert_eq!(iou_3d(&a, &b), 0.0);
    }

    #[test]
    fn square_turned_a_quarter_is_identical_footprint() {
        let a = bx(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0);
        let b = bx(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, PI / 2.0);
        assert!((bev_iou(&a, &b) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn square_turned_eighth_matches_octagon_area() {
        // Intersection of two unit-half-width squares offset by 45 deg is a
        // regular octagon with inradius 1: area 8 * tan(pi/8).
        let a = bx(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0);
        let b = bx(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, PI / 4.0);
        let inter = 8.0 * (PI / 8.0).tan();
        assert!((bev_intersection_area(&a, &b) - inter).abs() < 1e-9);
        assert!((bev_iou(&a, &b) - inter / (8.0 - inter)).abs() < 1e-9);
    }

    #[test]
    fn rotated_pairs_match_grid_estimate() {
        let pairs = [
            (bx(0.0, 0.0, 0.0, 4.0, 2.0, 1.0, 0.3), bx(1.0, 0.5, 0.0, 3.0, 1.5, 1.0, -0.8)),
            (bx(10.0, -4.0, 0.0, 4.5, 1.9, 1.0, 2.9), bx(10.5, -3.5, 0.0, 4.0, 2.0, 1.0, -2.7)),
            (bx(0.0, 0.0, 0.0, 0.8, 0.6, 1.7, 1.2), bx(0.2, 0.1, 0.0, 0.7, 0.7, 1.7, 0.1)),
        ];
        for (a, b) in pairs {
            let est = grid_intersection(&a, &b, 600);
            assert!((bev_intersection_area(&a, &b) - est).abs() < 2e-3 * a.bev_area(), "{a:?} {b:?}");
        }
    }

    fn arb_box() -> impl Strategy<Value = Box3D> {
        (-3.0f64..3.0, -3.0f64..3.0, -1.0f64..1.0, 0.2f64..5.0, 0.2f64..5.0, 0.2f64..3.0, -PI..PI)
            .prop_map(|(x, y, z, l, w, h, yaw)| bx(x, y, z, l, w, h, yaw))
    }

    proptest! {
        #[test]
        fn iou_is_bounded_and_symmetric(a in arb_box(), b in arb_box()) {
            for f in [bev_iou as fn(&Box3D, &Box3D) -> f64, iou_3d] {
                let ab = f(&a, &b);
                let ba = f(&b, &a);
                prop_assert!((0.0..=1.0).contains(&ab));
                prop_assert!((ab - ba).abs() < 1e-9);
            }
        }

        #[test]
        fn intersection_never_exceeds_either_area(a in arb_box(), b in arb_box()) {
            let inter = bev_intersection_area(&a, &b);
            prop_assert!(inter <= a.bev_area() + 1e-12);
            prop_assert!(inter <= b.bev_area() + 1e-12);
        }
    }
}
