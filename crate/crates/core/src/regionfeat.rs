//! Per-region similarity features.
//!
//! Five scalar features describe each region: interior mean intensity, mean
//! intensity of the one-pixel outer shell, major axis length, mean stroke
//! width, and mean gradient magnitude along the region's inner border.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::imageio::Raster;
use crate::mser::Region;

pub const FEATURE_COUNT: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionFeatures {
    pub intensity_mean: f64,
    pub boundary_intensity_mean: f64,
    pub major_axis: f64,
    pub stroke_width_mean: f64,
    pub border_gradient_mean: f64,
}

impl RegionFeatures {
    /// Features in canonical index order: intensity, boundary intensity,
    /// major axis, stroke width, border gradient.
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.intensity_mean,
            self.boundary_intensity_mean,
            self.major_axis,
            self.stroke_width_mean,
            self.border_gradient_mean,
        ]
    }
}

/// Central-difference gradient magnitude of a raster, border-replicated.
#[derive(Clone, Debug)]
pub struct GradientField {
    width: usize,
    magnitude: Vec<f32>,
}

impl GradientField {
    pub fn new(raster: &Raster) -> Self {
        let (w, h) = (raster.width(), raster.height());
        let mut magnitude = Vec::with_capacity(w * h);
        for y in 0..h {
            let (ya, yb) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for x in 0..w {
                let (xa, xb) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let gx = (raster.get(xb, y) as f32 - raster.get(xa, y) as f32) * 0.5;
                let gy = (raster.get(x, yb) as f32 - raster.get(x, ya) as f32) * 0.5;
                magnitude.push((gx * gx + gy * gy).sqrt());
            }
        }
        GradientField { width: w, magnitude }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.magnitude[y * self.width + x] as f64
    }

    /// 99th-percentile magnitude over all pixels.
    pub fn percentile_99(&self) -> f64 {
        let mut v = self.magnitude.clone();
        let idx = ((v.len() - 1) as f64 * 0.99).round() as usize;
        let (_, nth, _) = v.select_nth_unstable_by(idx, f32::total_cmp);
        *nth as f64
    }
}

/// Computes all five features, deriving the gradient field on the fly.
pub fn compute_features(region: &Region, raster: &Raster) -> Result<RegionFeatures> {
    let grad = GradientField::new(raster);
    compute_features_with(region, raster, &grad)
}

/// Computes all five features against a precomputed gradient field of the
/// same raster.
pub fn compute_features_with(region: &Region, raster: &Raster, grad: &GradientField) -> Result<RegionFeatures> {
    let (w, h) = (raster.width(), raster.height());
    if region.pixels.is_empty() {
        return arg_err("region has no pixels");
    }
    if region.bbox.xmax as usize >= w || region.bbox.ymax as usize >= h {
        return arg_err(format!(
            "region box {:?} outside {w}x{h} raster",
            region.bbox
        ));
    }
    let mask = LocalMask::new(region);

    let n = region.pixels.len() as f64;
    let mut sum = 0.0;
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(x, y) in &region.pixels {
        if x as usize >= w || y as usize >= h {
            return arg_err(format!("region pixel ({x},{y}) outside {w}x{h} raster"));
        }
        sum += raster.get(x as usize, y as usize) as f64;
        sx += x as f64;
        sy += y as f64;
    }
    let intensity_mean = sum / n;

    // outer 8-connected shell, clipped to the image
    let mut seen = vec![false; mask.data.len()];
    let (mut shell_sum, mut shell_n) = (0.0, 0usize);
    // inner border: region pixels with a 4-neighbour outside the region
    let (mut border_sum, mut border_n) = (0.0, 0usize);
    for &(x, y) in &region.pixels {
        let (lx, ly) = mask.local(x, y);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (gx, gy) = (x as i64 + dx, y as i64 + dy);
                if gx < 0 || gy < 0 || gx >= w as i64 || gy >= h as i64 {
                    continue;
                }
                let li = mask.index((lx as i64 + dx) as usize, (ly as i64 + dy) as usize);
                if !mask.data[li] && !seen[li] {
                    seen[li] = true;
                    shell_sum += raster.get(gx as usize, gy as usize) as f64;
                    shell_n += 1;
                }
            }
        }
        let on_border = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)]
            .iter()
            .any(|&(dx, dy)| !mask.data[mask.index((lx as i64 + dx) as usize, (ly as i64 + dy) as usize)]);
        if on_border {
            border_sum += grad.at(x as usize, y as usize);
            border_n += 1;
        }
    }
    let boundary_intensity_mean = if shell_n == 0 {
        intensity_mean
    } else {
        shell_sum / shell_n as f64
    };
    let border_gradient_mean = if border_n == 0 { 0.0 } else { border_sum / border_n as f64 };

    let (mx, my) = (sx / n, sy / n);
    let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
    for &(x, y) in &region.pixels {
        let (dx, dy) = (x as f64 - mx, y as f64 - my);
        cxx += dx * dx;
        cxy += dx * dy;
        cyy += dy * dy;
    }
    let major_axis = major_axis_from_moments(cxx / n, cxy / n, cyy / n);

    Ok(RegionFeatures {
        intensity_mean,
        boundary_intensity_mean,
        major_axis,
        stroke_width_mean: stroke_width(&mask),
        border_gradient_mean,
    })
}

/// Length along the principal axis. A run of `w` collinear pixels has
/// variance `(w^2 - 1) / 12`, so `sqrt(12 * lambda + 1)` recovers `w` exactly.
pub fn major_axis_from_moments(cxx: f64, cxy: f64, cyy: f64) -> f64 {
    let half_tr = 0.5 * (cxx + cyy);
    let disc = (0.25 * (cxx - cyy) * (cxx - cyy) + cxy * cxy).sqrt();
    let lambda = (half_tr + disc).max(0.0);
    (12.0 * lambda + 1.0).sqrt()
}

/// Region mask over the bounding box padded by one background pixel.
struct LocalMask {
    x0: i64,
    y0: i64,
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl LocalMask {
    fn new(region: &Region) -> Self {
        let b = region.bbox;
        let width = b.width() as usize + 2;
        let height = b.height() as usize + 2;
        let x0 = b.xmin as i64 - 1;
        let y0 = b.ymin as i64 - 1;
        let mut data = vec![false; width * height];
        for &(x, y) in &region.pixels {
            data[(y as i64 - y0) as usize * width + (x as i64 - x0) as usize] = true;
        }
        LocalMask {
            x0,
            y0,
            width,
            height,
            data,
        }
    }

    #[inline]
    fn local(&self, x: u32, y: u32) -> (usize, usize) {
        ((x as i64 - self.x0) as usize, (y as i64 - self.y0) as usize)
    }

    #[inline]
    fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

/// Exact squared Euclidean distance to the nearest background pixel, with
/// the location of that pixel, for every cell of the mask.
struct DistanceMap {
    sq: Vec<f64>,
    nearest: Vec<(u32, u32)>,
}

fn distance_map(mask: &LocalMask) -> DistanceMap {
    let (w, h) = (mask.width, mask.height);
    // column pass: vertical distance and row of nearest background
    let mut col_row = vec![0u32; w * h];
    let mut col_d = vec![0f64; w * h];
    let big = (w + h) as f64 * 4.0;
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            let i = y * w + x;
            if !mask.data[i] {
                last = Some(y);
            }
            match last {
                Some(ly) => {
                    col_row[i] = ly as u32;
                    col_d[i] = (y - ly) as f64;
                }
                None => {
                    col_row[i] = u32::MAX;
                    col_d[i] = big;
                }
            }
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            let i = y * w + x;
            if !mask.data[i] {
                next = Some(y);
            }
            if let Some(ny) = next {
                let d = (ny - y) as f64;
                if d < col_d[i] {
                    col_d[i] = d;
                    col_row[i] = ny as u32;
                }
            }
        }
    }

    // row pass: lower envelope of parabolas
    let mut sq = vec![0f64; w * h];
    let mut nearest = vec![(0u32, 0u32); w * h];
    let mut f = vec![0f64; w];
    let mut v = vec![0usize; w];
    let mut z = vec![0f64; w + 1];
    for y in 0..h {
        for x in 0..w {
            let d = col_d[y * w + x];
            f[x] = d * d;
        }
        let mut k = 0usize;
        v[0] = 0;
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        let meet = |q: usize, p: usize, f: &[f64]| {
            ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
        };
        for q in 1..w {
            let mut s = meet(q, v[k], &f);
            while s <= z[k] {
                k -= 1;
                s = meet(q, v[k], &f);
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
        }
        k = 0;
        for x in 0..w {
            while z[k + 1] < x as f64 {
                k += 1;
            }
            let p = v[k];
            let dx = x as f64 - p as f64;
            let i = y * w + x;
            sq[i] = dx * dx + f[p];
            nearest[i] = (p as u32, col_row[y * w + p]);
        }
    }
    DistanceMap { sq, nearest }
}

/// Mean stroke width over the ridge of the distance map.
///
/// Ridge pixels are local maxima of the distance map in their 3x3
/// neighbourhood. At each ridge pixel the width is measured along the line
/// through its nearest background pixel: the distance back to that pixel plus
/// the distance forward to the first background pixel on the opposite side,
/// minus one (both ends sit on background pixel centres).
fn stroke_width(mask: &LocalMask) -> f64 {
    let dm = distance_map(mask);
    let (w, h) = (mask.width, mask.height);
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            if !mask.data[i] {
                continue;
            }
            let d = dm.sq[i];
            let mut ridge = true;
            'nb: for ny in y - 1..=y + 1 {
                for nx in x - 1..=x + 1 {
                    if dm.sq[ny * w + nx] > d {
                        ridge = false;
                        break 'nb;
                    }
                }
            }
            if !ridge {
                continue;
            }
            let back = d.sqrt();
            let (qx, qy) = dm.nearest[i];
            let ux = (x as f64 - qx as f64) / back;
            let uy = (y as f64 - qy as f64) / back;
            // a ridge sits mid-stroke, so the far side is at most one step
            // further than the near one; the cap stops runs along bar axes
            let cap = back.floor() as usize + 1;
            let mut step = 1usize;
            let forward = loop {
                if step >= cap {
                    break cap as f64;
                }
                let px = (x as f64 + ux * step as f64).round();
                let py = (y as f64 + uy * step as f64).round();
                if px < 0.0 || py < 0.0 || px >= w as f64 || py >= h as f64 {
                    break step as f64;
                }
                if !mask.data[py as usize * w + px as usize] {
                    break step as f64;
                }
                step += 1;
            };
            total += back + forward - 1.0;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mser::Polarity;

    fn region(pixels: Vec<(u32, u32)>) -> Region {
        Region::from_pixels(pixels, 0, Polarity::DarkOnLight)
    }

    fn bar(x0: u32, y0: u32, w: u32, h: u32) -> Vec<(u32, u32)> {
        let mut px = Vec::new();
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                px.push((x, y));
            }
        }
        px
    }

    fn paint(raster: &mut Raster, pixels: &[(u32, u32)], v: u8) {
        for &(x, y) in pixels {
            raster.set(x as usize, y as usize, v);
        }
    }

    #[test]
    fn single_pixel_region() {
        let mut r = Raster::filled(5, 5, 200).unwrap();
        r.set(2, 2, 50);
        let f = compute_features(&region(vec![(2, 2)]), &r).unwrap();
        assert_eq!(f.intensity_mean, 50.0);
        assert_eq!(f.boundary_intensity_mean, 200.0);
        assert_eq!(f.major_axis, 1.0);
        assert_eq!(f.stroke_width_mean, 1.0);
    }

    #[test]
    fn horizontal_bar_three_by_eleven() {
        let px = bar(4, 5, 11, 3);
        let mut r = Raster::filled(20, 14, 255).unwrap();
        paint(&mut r, &px, 0);
        let f = compute_features(&region(px), &r).unwrap();
        assert!((f.stroke_width_mean - 3.0).abs() <= 0.5, "{f:?}");
        assert!((f.major_axis - 11.0).abs() <= 1.5, "{f:?}");
        assert_eq!(f.intensity_mean, 0.0);
        assert_eq!(f.boundary_intensity_mean, 255.0);
    }

    #[test]
    fn uniform_raster_has_zero_border_gradient() {
        let r = Raster::filled(10, 10, 77).unwrap();
        let f = compute_features(&region(bar(2, 2, 4, 3)), &r).unwrap();
        assert_eq!(f.border_gradient_mean, 0.0);
    }

    #[test]
    fn collinear_run_reports_true_length() {
        assert_eq!(major_axis_from_moments((49.0 - 1.0) / 12.0, 0.0, 0.0), 7.0);
    }

    #[test]
    fn out_of_bounds_region_rejected() {
        let r = Raster::filled(4, 4, 0).unwrap();
        assert!(compute_features(&region(vec![(4, 1)]), &r).is_err());
    }

    #[test]
    fn even_thickness_bar() {
        let px = bar(3, 3, 20, 6);
        let r = Raster::filled(30, 14, 0).unwrap();
        let f = compute_features(&region(px), &r).unwrap();
        assert!((f.stroke_width_mean - 6.0).abs() <= 0.6, "{f:?}");
    }

    #[test]
    fn percentile_of_step_edge() {
        let mut r = Raster::filled(10, 10, 0).unwrap();
        for y in 0..10 {
            for x in 5..10 {
                r.set(x, y, 100);
            }
        }
        let g = GradientField::new(&r);
        assert_eq!(g.percentile_99(), 50.0);
        assert_eq!(g.at(0, 0), 0.0);
    }
}
