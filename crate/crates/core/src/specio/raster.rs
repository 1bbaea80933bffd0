use super::{BinaryMask, PolygonAnn, SpecioError};

/// Even-odd crossing test for a single point against a closed ring.
pub fn point_in_polygon(x: f64, y: f64, vertices: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = vertices.len();
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (xi, yi) = vertices[i];
        let (xj, yj) = vertices[j];
        if (yi > y) != (yj > y) && x < crossing_x(xi, yi, xj, yj, y) {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[inline]
fn crossing_x(xi: f64, yi: f64, xj: f64, yj: f64, y: f64) -> f64 {
    (xj - xi) * (y - yi) / (yj - yi) + xi
}

/// Rasterizes polygons by scanline: pixel `(i, j)` is set when its center
/// `(j + 0.5, i + 0.5)` lies inside any ring under the even-odd rule.
pub fn rasterize<'a, I>(polygons: I, height: usize, width: usize) -> Result<BinaryMask, SpecioError>
where
    I: IntoIterator<Item = &'a PolygonAnn>,
{
    let mut mask = BinaryMask::zeros(height, width)?;
    let mut crossings = Vec::new();
    for poly in polygons {
        let v = &poly.vertices;
        if v.len() < 3 {
            continue;
        }
        for row in 0..height {
            let y = row as f64 + 0.5;
            crossings.clear();
            let mut j = v.len() - 1;
            for i in 0..v.len() {
                let (xi, yi) = v[i];
                let (xj, yj) = v[j];
                if (yi > y) != (yj > y) {
                    crossings.push(crossing_x(xi, yi, xj, yj, y));
                }
                j = i;
            }
            crossings.sort_by(f64::total_cmp);
            // A center x is inside iff an odd number of crossings lie strictly
            // to its right, i.e. x falls in [c[2k], c[2k+1]).
            for span in crossings.chunks_exact(2) {
                let (lo, hi) = (span[0], span[1]);
                let mut col = first_center_at_or_after(lo);
                while col < width && (col as f64 + 0.5) < hi {
                    mask.set(row, col, true);
                    col += 1;
                }
            }
        }
    }
    Ok(mask)
}

fn first_center_at_or_after(x: f64) -> usize {
    if x <= 0.5 {
        return 0;
    }
    let mut col = (x - 0.5).ceil() as usize;
    while col > 0 && (col as f64 - 0.5) >= x {
        col -= 1;
    }
    while (col as f64 + 0.5) < x {
        col += 1;
    }
    col
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(v: &[(f64, f64)]) -> PolygonAnn {
        PolygonAnn {
            image_id: 0,
            annotation_id: 0,
            vertices: v.to_vec(),
        }
    }

    #[test]
    fn rectangle_covers_twelve_pixels() {
        let rect = poly(&[(0., 0.), (4., 0.), (4., 3.), (0., 3.)]);
        let m = rasterize([&rect], 8, 8).unwrap();
        assert_eq!(m.count_ones(), 12);
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(m.get(i, j), i < 3 && j < 4, "pixel {i},{j}");
            }
        }
    }

    #[test]
    fn empty_list_and_zero_dims() {
        let none: [&PolygonAnn; 0] = [];
        assert_eq!(rasterize(none, 4, 4).unwrap().count_ones(), 0);
        assert!(rasterize(none, 0, 4).is_err());
    }

    #[test]
    fn pip_helper_matches_rectangle() {
        let v = [(0., 0.), (4., 0.), (4., 3.), (0., 3.)];
        assert!(point_in_polygon(0.5, 0.5, &v));
        assert!(!point_in_polygon(4.5, 0.5, &v));
    }
}
