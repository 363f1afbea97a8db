//! Pose error metrics.

use serde::Serialize;

use crate::geometry::{euler_to_matrix, geodesic_angle, Quaternion};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowError {
    pub window_id: usize,
    /// Euclidean translation error, meters.
    pub trans_err: f64,
    /// Rotation error, degrees.
    pub rot_err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RotationMetric {
    /// Angle of `R_pred^T R_gt`.
    #[default]
    Geodesic,
    /// Largest absolute per-axis Euler difference, wrapped to `[-pi, pi]`.
    EulerAxis,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub median_trans_err: f64,
    pub median_rot_err: f64,
    pub t_plus_r: f64,
    pub per_window: Vec<WindowError>,
}

/// Element at sorted position `(n - 1) / 2`.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// `100 * (trans + rot_deg * pi / 180)`.
pub fn t_plus_r(median_trans: f64, median_rot_deg: f64) -> f64 {
    100.0 * (median_trans + median_rot_deg.to_radians())
}

pub fn translation_error(p_hat: [f64; 3], p: [f64; 3]) -> f64 {
    ((p_hat[0] - p[0]).powi(2) + (p_hat[1] - p[1]).powi(2) + (p_hat[2] - p[2]).powi(2)).sqrt()
}

pub fn rotation_error_deg(euler_hat: [f64; 3], q: Quaternion, metric: RotationMetric) -> f64 {
    match metric {
        RotationMetric::Geodesic => {
            geodesic_angle(&euler_to_matrix(euler_hat), &q.normalized().to_matrix()).to_degrees()
        }
        RotationMetric::EulerAxis => {
            let gt = q.to_euler();
            (0..3)
                .map(|a| {
                    let d = (euler_hat[a] - gt[a]).rem_euclid(std::f64::consts::TAU);
                    d.min(std::f64::consts::TAU - d)
                })
                .fold(0.0f64, f64::max)
                .to_degrees()
        }
    }
}

impl EvalReport {
    pub fn from_errors(per_window: Vec<WindowError>) -> Result<Self, TrainError> {
        let trans: Vec<f64> = per_window.iter().map(|e| e.trans_err).collect();
        let rot: Vec<f64> = per_window.iter().map(|e| e.rot_err).collect();
        let (Some(mt), Some(mr)) = (lower_median(&trans), lower_median(&rot)) else {
            return Err(TrainError::Data("cannot evaluate an empty window set".into()));
        };
        Ok(Self { median_trans_err: mt, median_rot_err: mr, t_plus_r: t_plus_r(mt, mr), per_window })
    }

    /// Human-readable summary table.
    pub fn table(&self) -> String {
        format!(
            "windows        {}\nmedian trans   {:.4} m\nmedian rot     {:.3} deg\nT+R            {:.2}\n",
            self.per_window.len(),
            self.median_trans_err,
            self.median_rot_err,
            self.t_plus_r
        )
    }

    /// One JSON object per window followed by a summary object.
    pub fn json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.per_window {
            out.push_str(&serde_json::to_string(e).expect("plain struct"));
            out.push('\n');
        }
        let summary = serde_json::json!({
            "median_trans_err": self.median_trans_err,
            "median_rot_err": self.median_rot_err,
            "t_plus_r": self.t_plus_r,
            "windows": self.per_window.len(),
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_median_of_even_list() {
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&[5.0]), Some(5.0));
        assert_eq!(lower_median(&[]), None);
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let q = Quaternion::from_euler([0.3, -0.2, 1.1]);
        let r = rotation_error_deg(q.to_euler(), q, RotationMetric::Geodesic);
        assert!(r < 1e-6);
        let rep = EvalReport::from_errors(vec![WindowError { window_id: 0, trans_err: 0.0, rot_err: 0.0 }]).unwrap();
        assert_eq!((rep.median_trans_err, rep.median_rot_err, rep.t_plus_r), (0.0, 0.0, 0.0));
    }

    #[test]
    fn euler_axis_metric_wraps() {
        let q = Quaternion::from_euler([0.0, 0.0, 3.1]);
        let e = rotation_error_deg([0.0, 0.0, -3.1], q, RotationMetric::EulerAxis);
        assert!((e - (std::f64::consts::TAU - 6.2).to_degrees()).abs() < 1e-6);
    }
}
