//! Forecast metrics and the convex-hull containment statistic.
//!
//! All functions here are pure f64 code, independent of the autodiff path.

use serde::{Deserialize, Serialize};

/// Metric suite over one prediction/target collection. Angle, norm and
/// per-axis bias fields exist only for 2-d outputs. Fields that would
/// divide by zero are left undefined rather than propagating NaN.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub angle_mae: Option<f64>,
    pub norm_mae: Option<f64>,
    pub rel_bias: Vec<Option<f64>>,
    pub r_std: Option<f64>,
    pub nse: Option<f64>,
    pub n_points: usize,
    pub hull_inside_fraction: Option<f64>,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str =
        "rmse,angle_mae,norm_mae,rel_bias_x,rel_bias_y,r_std,nse,n_points,hull_inside_fraction";

    /// Fixed-column CSV row matching [`Self::CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let bias = |i: usize| opt(&self.rel_bias.get(i).copied().flatten());
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.rmse,
            opt(&self.angle_mae),
            opt(&self.norm_mae),
            bias(0),
            bias(1),
            opt(&self.r_std),
            opt(&self.nse),
            self.n_points,
            opt(&self.hull_inside_fraction),
        )
    }

    pub fn mse(&self) -> f64 {
        self.rmse * self.rmse
    }
}

/// Compute the metric suite for `n` points of `o` output channels,
/// row-major. The RMSE aggregates the per-point error vector norm.
pub fn compute_metrics(pred: &[f64], target: &[f64], n: usize, o: usize) -> MetricReport {
    assert_eq!(pred.len(), n * o, "prediction layout");
    assert_eq!(target.len(), n * o, "target layout");
    assert!(n > 0, "metrics over an empty collection");

    let mut sq_err = 0.0;
    for (p, t) in pred.iter().zip(target) {
        sq_err += (p - t) * (p - t);
    }
    let rmse = (sq_err / n as f64).sqrt();

    // Per-channel means for NSE and bias.
    let mut mean_target = vec![0.0; o];
    let mut mean_pred = vec![0.0; o];
    let mut mean_diff = vec![0.0; o];
    for k in 0..n {
        for c in 0..o {
            mean_target[c] += target[k * o + c];
            mean_pred[c] += pred[k * o + c];
            mean_diff[c] += pred[k * o + c] - target[k * o + c];
        }
    }
    for c in 0..o {
        mean_target[c] /= n as f64;
        mean_pred[c] /= n as f64;
        mean_diff[c] /= n as f64;
    }

    // NSE = 1 - MSE(pred, target) / MSE(target, mean(target)); both sums
    // run in the same order so a mean predictor scores exactly zero.
    let mut denom = 0.0;
    for k in 0..n {
        for c in 0..o {
            let d = target[k * o + c] - mean_target[c];
            denom += d * d;
        }
    }
    let nse = if denom > 0.0 {
        Some(1.0 - sq_err / denom)
    } else if sq_err == 0.0 {
        Some(1.0)
    } else {
        None
    };

    let rel_bias: Vec<Option<f64>> = (0..o)
        .map(|c| {
            if mean_pred[c] == 0.0 {
                None
            } else {
                Some(mean_diff[c] / mean_pred[c])
            }
        })
        .collect();

    // Population standard deviations over all components.
    let flat_mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let flat_std = |xs: &[f64]| {
        let m = flat_mean(xs);
        (xs.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / xs.len() as f64).sqrt()
    };
    let std_t = flat_std(target);
    let r_std = if std_t > 0.0 {
        Some(flat_std(pred) / std_t)
    } else {
        None
    };

    let (angle_mae, norm_mae) = if o == 2 {
        let mut angle_sum = 0.0;
        let mut norm_sum = 0.0;
        for k in 0..n {
            let (px, py) = (pred[k * 2], pred[k * 2 + 1]);
            let (tx, ty) = (target[k * 2], target[k * 2 + 1]);
            let ap = py.atan2(px).to_degrees();
            let at = ty.atan2(tx).to_degrees();
            angle_sum += wrap_degrees(ap - at).abs();
            norm_sum += ((px * px + py * py).sqrt() - (tx * tx + ty * ty).sqrt()).abs();
        }
        (Some(angle_sum / n as f64), Some(norm_sum / n as f64))
    } else {
        (None, None)
    };

    MetricReport {
        rmse,
        angle_mae,
        norm_mae,
        rel_bias,
        r_std,
        nse,
        n_points: n,
        hull_inside_fraction: None,
    }
}

/// Wrap an angle difference into (-180, 180] degrees.
pub fn wrap_degrees(d: f64) -> f64 {
    let mut w = d % 360.0;
    if w <= -180.0 {
        w += 360.0;
    } else if w > 180.0 {
        w -= 360.0;
    }
    w
}

const HULL_TOL: f64 = 1e-9;

/// Convex hull of 2-d points by monotone chain, counter-clockwise, without
/// collinear boundary points. Degenerate inputs return fewer than 3 vertices.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let n = pts.len();
    if n <= 2 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        // all collinear: keep the two extremes
        let mut ends = vec![pts[0], pts[n - 1]];
        ends.dedup();
        return ends;
    }
    lower
}

/// Point membership in the convex hull of `hull` vertices (CCW), with a
/// distance tolerance for boundary points and degenerate hulls.
pub fn point_in_hull(point: (f64, f64), hull: &[(f64, f64)]) -> bool {
    match hull.len() {
        0 => false,
        1 => dist(point, hull[0]) <= HULL_TOL,
        2 => dist_to_segment(point, hull[0], hull[1]) <= HULL_TOL,
        _ => {
            for i in 0..hull.len() {
                let a = hull[i];
                let b = hull[(i + 1) % hull.len()];
                let cross = (b.0 - a.0) * (point.1 - a.1) - (b.1 - a.1) * (point.0 - a.0);
                // normalize by edge length so the tolerance is a distance
                let len = dist(a, b).max(1e-300);
                if cross / len < -HULL_TOL {
                    return false;
                }
            }
            true
        }
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0) * (a.0 - b.0) + (a.1 - b.1) * (a.1 - b.1)).sqrt()
}

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    dist(p, (a.0 + t * dx, a.1 + t * dy))
}

/// Fraction of predictions inside the convex hull of the context values.
/// Both arguments are rows of 2-d values.
pub fn hull_inside_fraction(context_values: &[(f64, f64)], preds: &[(f64, f64)]) -> f64 {
    assert!(!context_values.is_empty(), "hull of an empty context");
    if preds.is_empty() {
        return 1.0;
    }
    let hull = convex_hull(context_values);
    let inside = preds.iter().filter(|&&p| point_in_hull(p, &hull)).count();
    inside as f64 / preds.len() as f64
}
