//! Independent oracles shared by integration and acceptance tests. Nothing
//! here calls the geometry code under test.
#![allow(dead_code)]

use rand::Rng;

pub type P = (f64, f64);

fn rot_x(a: f64) -> [[f64; 3]; 3] {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(a: f64) -> [[f64; 3]; 3] {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rot_z(a: f64) -> [[f64; 3]; 3] {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

/// Camera-to-world matrix `Rz(yaw) * Ry(-pitch) * Rx(roll)`, angles in degrees.
/// A positive pitch turns the optical axis (+x) upwards.
pub fn attitude(roll: f64, pitch: f64, yaw: f64) -> [[f64; 3]; 3] {
    mul(&rot_z(yaw.to_radians()), &mul(&rot_y(-pitch.to_radians()), &rot_x(roll.to_radians())))
}

/// Ground hits of the four corner rays, or `None` if any ray misses the ground.
pub fn footprint_corners(ground: P, alt: f64, roll: f64, pitch: f64, yaw: f64, hfov: f64, vfov: f64) -> Option<Vec<P>> {
    let r = attitude(roll, pitch, yaw);
    let th = (hfov.to_radians() / 2.0).tan();
    let tv = (vfov.to_radians() / 2.0).tan();
    let mut out = Vec::new();
    for (sh, sv) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
        let d = [1.0, sh * th, sv * tv];
        let w: Vec<f64> = (0..3).map(|i| (0..3).map(|k| r[i][k] * d[k]).sum()).collect();
        if w[2] >= 0.0 {
            return None;
        }
        let t = alt / -w[2];
        out.push((ground.0 + t * w[0], ground.1 + t * w[1]));
    }
    Some(out)
}

pub fn shoelace(p: &[P]) -> f64 {
    let n = p.len();
    (0..n).map(|i| p[i].0 * p[(i + 1) % n].1 - p[(i + 1) % n].0 * p[i].1).sum::<f64>() / 2.0
}

/// Counter-clockwise copy of a convex polygon.
pub fn ccw(p: &[P]) -> Vec<P> {
    let mut v = p.to_vec();
    if shoelace(&v) < 0.0 {
        v.reverse();
    }
    v
}

/// Point-in-convex test against a counter-clockwise polygon.
pub fn inside(p: &[P], q: P) -> bool {
    let n = p.len();
    (0..n).all(|i| {
        let a = p[i];
        let b = p[(i + 1) % n];
        (b.0 - a.0) * (q.1 - a.1) - (b.1 - a.1) * (q.0 - a.0) >= 0.0
    })
}

/// Jittered-grid Monte-Carlo estimate of the area of `{q : all polys contain q}`
/// inside the box, using `n * n` samples.
pub fn raster_area(polys: &[Vec<P>], bbox: (f64, f64, f64, f64), n: usize, rng: &mut impl Rng) -> f64 {
    let (x0, y0, x1, y1) = bbox;
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    let (hx, hy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let polys: Vec<Vec<P>> = polys.iter().map(|p| ccw(p)).collect();
    let mut hits = 0u64;
    for i in 0..n {
        for j in 0..n {
            let q = (x0 + (i as f64 + rng.random::<f64>()) * hx, y0 + (j as f64 + rng.random::<f64>()) * hy);
            if polys.iter().all(|p| inside(p, q)) {
                hits += 1;
            }
        }
    }
    hits as f64 * hx * hy
}

pub fn bbox(p: &[P]) -> (f64, f64, f64, f64) {
    p.iter().fold((f64::MAX, f64::MAX, f64::MIN, f64::MIN), |(a, b, c, d), &(x, y)| {
        (a.min(x), b.min(y), c.max(x), d.max(y))
    })
}

/// Area of a convex polygon clipped to an axis-aligned rectangle, by clipping
/// against each of the four rectangle sides in turn.
pub fn rect_clip_area(poly: &[P], x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    let mut v = poly.to_vec();
    // keep points with f(p) >= 0, interpolating crossings
    let sides: [Box<dyn Fn(P) -> f64>; 4] =
        [Box::new(move |p: P| p.0 - x0), Box::new(move |p: P| x1 - p.0), Box::new(move |p: P| p.1 - y0), Box::new(move |p: P| y1 - p.1)];
    for f in sides.iter() {
        if v.is_empty() {
            break;
        }
        let mut out = Vec::new();
        for i in 0..v.len() {
            let a = v[i];
            let b = v[(i + 1) % v.len()];
            let (fa, fb) = (f(a), f(b));
            if fa >= 0.0 {
                out.push(a);
            }
            if (fa >= 0.0) != (fb >= 0.0) {
                let t = fa / (fa - fb);
                out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
            }
        }
        v = out;
    }
    if v.len() < 3 {
        0.0
    } else {
        shoelace(&v).abs()
    }
}

/// IOU of a convex polygon against an axis-aligned rectangle.
pub fn rect_iou(poly: &[P], x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    let inter = rect_clip_area(poly, x0, y0, x1, y1);
    let union = shoelace(poly).abs() + (x1 - x0) * (y1 - y0) - inter;
    inter / union
}

/// Vertices of the intersection of two convex polygons, found by brute force:
/// corners of each polygon inside the other plus all edge crossings, ordered
/// by angle around their mean.
pub fn intersection_vertices(a: &[P], b: &[P]) -> Vec<P> {
    let (a, b) = (ccw(a), ccw(b));
    let mut pts: Vec<P> = a.iter().copied().filter(|&q| inside(&b, q)).collect();
    pts.extend(b.iter().copied().filter(|&q| inside(&a, q)));
    for i in 0..a.len() {
        let (p0, p1) = (a[i], a[(i + 1) % a.len()]);
        for j in 0..b.len() {
            let (q0, q1) = (b[j], b[(j + 1) % b.len()]);
            let r = (p1.0 - p0.0, p1.1 - p0.1);
            let s = (q1.0 - q0.0, q1.1 - q0.1);
            let den = r.0 * s.1 - r.1 * s.0;
            if den == 0.0 {
                continue;
            }
            let t = ((q0.0 - p0.0) * s.1 - (q0.1 - p0.1) * s.0) / den;
            let u = ((q0.0 - p0.0) * r.1 - (q0.1 - p0.1) * r.0) / den;
            if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
                pts.push((p0.0 + t * r.0, p0.1 + t * r.1));
            }
        }
    }
    if pts.len() < 3 {
        return Vec::new();
    }
    let n = pts.len() as f64;
    let c = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    pts.sort_by(|p, q| (p.1 - c.1).atan2(p.0 - c.0).total_cmp(&(q.1 - c.1).atan2(q.0 - c.0)));
    pts
}

/// Random convex quadrilateral inscribed in a rotated ellipse.
pub fn random_quad(rng: &mut impl Rng, center: P, radius: f64) -> Vec<P> {
    let a = radius * rng.random_range(0.4..1.0);
    let b = radius * rng.random_range(0.4..1.0);
    let rot = rng.random_range(0.0..std::f64::consts::TAU);
    let angles: Vec<f64> = loop {
        let mut t: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        t.sort_by(f64::total_cmp);
        // keep vertices apart so the quad is not nearly a triangle
        let gaps_ok = (0..4).all(|i| {
            let next = if i == 3 { t[0] + std::f64::consts::TAU } else { t[i + 1] };
            next - t[i] > 0.3
        });
        if gaps_ok {
            break t;
        }
    };
    angles.iter().map(|t| {
        let (x, y) = (a * t.cos(), b * t.sin());
        let (s, c) = rot.sin_cos();
        (center.0 + c * x - s * y, center.1 + s * x + c * y)
    })
    .collect()
}

/// Numerically stable log-sum-exp.
pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Two random quads of radius 100 whose centers are at most ~71 apart.
pub fn random_quad_pair(rng: &mut impl Rng) -> (Vec<P>, Vec<P>) {
    let a = random_quad(rng, (0.0, 0.0), 100.0);
    let c = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
    (a, random_quad(rng, c, 100.0))
}

/// Norm-wise relative error between an analytic gradient and central
/// differences of `f` at `x` with step `h`.
pub fn fd_relative_error(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut num = 0.0;
    let mut den_a = 0.0;
    let mut den_n = 0.0;
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        let g = (fp - fm) / (2.0 * h);
        num += (g - analytic[i]).powi(2);
        den_a += analytic[i].powi(2);
        den_n += g * g;
    }
    num.sqrt() / den_a.sqrt().max(den_n.sqrt()).max(1e-12)
}

/// Reference weighted-InfoNCE value computed straight from the definition:
/// mean over rows of the cross-entropy against `alpha * onehot + (1 - alpha) / N`,
/// averaged with the column direction when `symmetric`.
pub fn weighted_infonce_value(q: &[Vec<f64>], r: &[Vec<f64>], alphas: &[f64], tau: f64, symmetric: bool) -> f64 {
    let n = q.len();
    let logit = |i: usize, j: usize| q[i].iter().zip(&r[j]).map(|(a, b)| a * b).sum::<f64>() / tau;
    let direction = |row_major: bool| -> f64 {
        (0..n)
            .map(|i| {
                let l: Vec<f64> = (0..n).map(|j| if row_major { logit(i, j) } else { logit(j, i) }).collect();
                let lse = logsumexp(&l);
                (0..n)
                    .map(|j| {
                        let t = alphas[i] * f64::from(u8::from(i == j)) + (1.0 - alphas[i]) / n as f64;
                        -t * (l[j] - lse)
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n as f64
    };
    if symmetric {
        0.5 * (direction(true) + direction(false))
    } else {
        direction(true)
    }
}
