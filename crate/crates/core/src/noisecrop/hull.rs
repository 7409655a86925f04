use super::mask::BitMask;
use crate::error::{Error, Result};

type Point = (i64, i64);

fn cross(o: Point, a: Point, b: Point) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull vertices in counter-clockwise order (Andrew's monotone
/// chain), collinear points dropped. One point for a single pixel, two for
/// a collinear set.
pub(crate) fn hull_vertices(mut points: Vec<Point>) -> Vec<Point> {
    points.sort_unstable();
    points.dedup();
    if points.len() <= 2 {
        return points;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &points {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in points.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn inside(vertices: &[Point], p: Point) -> bool {
    match vertices.len() {
        1 => p == vertices[0],
        2 => {
            let (a, b) = (vertices[0], vertices[1]);
            cross(a, b, p) == 0
                && p.0 >= a.0.min(b.0)
                && p.0 <= a.0.max(b.0)
                && p.1 >= a.1.min(b.1)
                && p.1 <= a.1.max(b.1)
        }
        n => (0..n).all(|i| cross(vertices[i], vertices[(i + 1) % n], p) >= 0),
    }
}

/// Filled convex hull of the foreground pixel centers. Pixels on the hull
/// boundary count as inside; integer arithmetic makes the fill exact.
pub fn convex_hull(mask: &BitMask) -> Result<BitMask> {
    // only the extreme pixels of each row can be hull vertices
    let mut points = Vec::new();
    for y in 0..mask.height {
        let row: Vec<u32> = (0..mask.width).filter(|&x| mask.get(x, y)).collect();
        if let (Some(&first), Some(&last)) = (row.first(), row.last()) {
            points.push((i64::from(first), i64::from(y)));
            points.push((i64::from(last), i64::from(y)));
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyMask);
    }
    let vertices = hull_vertices(points);
    let (x0, y0, x1, y1) = mask.bbox().expect("mask is non-empty");
    let mut out = BitMask::new(mask.width, mask.height, mask.provenance);
    out.low_confidence = mask.low_confidence;
    for y in y0..=y1 {
        for x in x0..=x1 {
            if inside(&vertices, (i64::from(x), i64::from(y))) {
                out.set(x, y, true);
            }
        }
    }
    Ok(out)
}
