use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{sigmoid, LocalPrediction, ObservationBuffer, PredictedPositions, Predictor, SoftClamp};
use crate::error::{Error, Result};

/// Parameters of the analytic interactive predictor.
///
/// Longitudinal acceleration of vehicle `i` (velocities from the last two rows):
///
/// ```text
/// a_i = k_speed (v_nom − u_i)
///     − yield_gain · h(u_i) · G(x_e − x_i, y_e − y_i)
///     + follow_gain · Σ_j W(x_j − x_i, y_j − y_i) (u_j − u_i)
/// G(dx, dy) = σ((c² − dy²)/s_lat) · σ((dx + o)/s_lon) · exp(−dx²/(2 L²))
/// W(dx, dy) = exp(−dy²/(2 σ_lane²)) · σ((dx − 1)/0.5) · exp(−dx²/(2 ℓ²))
/// h(u)      = σ((u − yield_min_speed)/0.5)
/// ```
///
/// `o = lon_offset` lets a vehicle yield to an ego that is still slightly
/// behind it.
///
/// Lateral acceleration: damping, a periodic lane-keeping pull and, when
/// `escape_gain > 0`, a push of `escape_direction` gated by the same `G`.
/// Next positions are `p + dt·ṗ + dt²·p̈`, then smoothly clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InteractiveParams {
    pub dt: f64,
    pub v_nom: f64,
    pub k_speed: f64,
    pub yield_gain: f64,
    pub yield_min_speed: f64,
    pub lateral_reach: f64,
    pub lateral_softness: f64,
    pub lon_softness: f64,
    pub lon_range: f64,
    pub lon_offset: f64,
    pub follow_gain: f64,
    pub follow_range: f64,
    pub lane_sigma: f64,
    pub lane_width: f64,
    pub lane_offset: f64,
    pub lane_keep: f64,
    pub lateral_damping: f64,
    pub escape_gain: f64,
    pub escape_direction: f64,
    pub s_x: f64,
    pub s_y: f64,
    pub clamp_margin_x: f64,
    pub clamp_margin_y: f64,
}

impl Default for InteractiveParams {
    fn default() -> Self {
        Self {
            dt: 0.25,
            v_nom: 8.0,
            k_speed: 0.5,
            yield_gain: 3.0,
            yield_min_speed: 2.0,
            lateral_reach: 2.9,
            lateral_softness: 0.7,
            lon_softness: 0.5,
            lon_range: 8.0,
            lon_offset: 0.0,
            follow_gain: 0.5,
            follow_range: 10.0,
            lane_sigma: 1.0,
            lane_width: 3.7,
            lane_offset: 0.0,
            lane_keep: 1.0,
            lateral_damping: 1.5,
            escape_gain: 0.0,
            escape_direction: 1.0,
            s_x: 300.0,
            s_y: 15.0,
            clamp_margin_x: 50.0,
            clamp_margin_y: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InteractivePredictor {
    p: InteractiveParams,
    clamp_x: SoftClamp,
    clamp_y: SoftClamp,
}

/// Encroachment gate and its partials.
struct Gate {
    g: f64,
    d_dx: f64,
    d_dy: f64,
}

impl InteractivePredictor {
    pub fn new(p: InteractiveParams) -> Result<Self> {
        let positive = [
            p.dt,
            p.lateral_softness,
            p.lon_softness,
            p.lon_range,
            p.follow_range,
            p.lane_sigma,
            p.lane_width,
            p.s_x,
            p.s_y,
            p.clamp_margin_x,
            p.clamp_margin_y,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParameter("interactive predictor scales must be positive".into()));
        }
        let gains = [
            p.v_nom,
            p.k_speed,
            p.yield_gain,
            p.yield_min_speed,
            p.lateral_reach,
            p.follow_gain,
            p.lon_offset,
            p.lane_keep,
            p.lateral_damping,
            p.escape_gain,
            p.escape_direction,
            p.lane_offset,
        ];
        if gains.iter().any(|v| !v.is_finite()) || p.clamp_margin_x >= p.s_x || p.clamp_margin_y >= p.s_y {
            return Err(Error::InvalidParameter("interactive predictor parameters out of range".into()));
        }
        Ok(Self {
            clamp_x: SoftClamp::new(p.s_x, p.clamp_margin_x),
            clamp_y: SoftClamp::new(p.s_y, p.clamp_margin_y),
            p,
        })
    }

    pub fn params(&self) -> &InteractiveParams {
        &self.p
    }

    fn gate(&self, dx: f64, dy: f64) -> Gate {
        let p = &self.p;
        let lat_arg = (p.lateral_reach * p.lateral_reach - dy * dy) / p.lateral_softness;
        let s_lat = sigmoid(lat_arg);
        let s_lat_d = s_lat * (1.0 - s_lat) * (-2.0 * dy / p.lateral_softness);
        let s_lon = sigmoid((dx + p.lon_offset) / p.lon_softness);
        let s_lon_d = s_lon * (1.0 - s_lon) / p.lon_softness;
        let l2 = p.lon_range * p.lon_range;
        let e = (-dx * dx / (2.0 * l2)).exp();
        let e_d = -e * dx / l2;
        Gate {
            g: s_lat * s_lon * e,
            d_dx: s_lat * (s_lon_d * e + s_lon * e_d),
            d_dy: s_lat_d * s_lon * e,
        }
    }

    /// Follower weight `W(dx, dy)` and its partials.
    fn follow_weight(&self, dx: f64, dy: f64) -> (f64, f64, f64) {
        let p = &self.p;
        let s2 = p.lane_sigma * p.lane_sigma;
        let lane = (-dy * dy / (2.0 * s2)).exp();
        let lane_d = -lane * dy / s2;
        let ahead = sigmoid((dx - 1.0) / 0.5);
        let ahead_d = ahead * (1.0 - ahead) / 0.5;
        let l2 = p.follow_range * p.follow_range;
        let e = (-dx * dx / (2.0 * l2)).exp();
        let e_d = -e * dx / l2;
        (lane * ahead * e, lane * (ahead_d * e + ahead * e_d), lane_d * ahead * e)
    }
}

impl Predictor for InteractivePredictor {
    fn name(&self) -> &'static str {
        "interactive"
    }

    fn history_depth(&self) -> usize {
        2
    }

    fn output_bounds(&self) -> (f64, f64) {
        (self.p.s_x, self.p.s_y)
    }

    fn predict(&self, buf: &ObservationBuffer, with_jacobian: bool) -> Result<LocalPrediction> {
        buf.require(2)?;
        let p = &self.p;
        let dt = p.dt;
        let dt2 = dt * dt;
        let n = buf.n_vehicles();
        let mut jac = with_jacobian.then(|| DMatrix::zeros(2 * n, buf.flat_len()));
        let mut positions = Vec::with_capacity(n);
        let ego = buf.get(0, 0);
        let vel = |col: usize| {
            let (c, q) = (buf.get(0, col), buf.get(1, col));
            [(c[0] - q[0]) / dt, (c[1] - q[1]) / dt]
        };

        for i in 0..n {
            let col = i + 1;
            let [xi, yi] = buf.get(0, col);
            let [ui, wi] = vel(col);
            let gate = self.gate(ego[0] - xi, ego[1] - yi);
            let h = sigmoid((ui - p.yield_min_speed) / 0.5);
            let h_d = h * (1.0 - h) / 0.5;

            // longitudinal
            let mut ax = p.k_speed * (p.v_nom - ui) - p.yield_gain * h * gate.g;
            let mut dax_dui = -p.k_speed - p.yield_gain * h_d * gate.g;
            let dax_dgx = -p.yield_gain * h * gate.d_dx;
            let dax_dgy = -p.yield_gain * h * gate.d_dy;
            // (col_j, ∂a/∂u_j, ∂a/∂ξ_j, ∂a/∂η_j)
            let mut followers = Vec::new();
            for j in 0..n {
                if j == i {
                    continue;
                }
                let cj = j + 1;
                let [xj, yj] = buf.get(0, cj);
                let uj = vel(cj)[0];
                let (w, w_dx, w_dy) = self.follow_weight(xj - xi, yj - yi);
                ax += p.follow_gain * w * (uj - ui);
                dax_dui -= p.follow_gain * w;
                followers.push((
                    cj,
                    p.follow_gain * w,
                    p.follow_gain * w_dx * (uj - ui),
                    p.follow_gain * w_dy * (uj - ui),
                ));
            }

            // lateral
            let phase = 2.0 * PI * (yi - p.lane_offset) / p.lane_width;
            let ay = -p.lateral_damping * wi - p.lane_keep * p.lane_width / (2.0 * PI) * phase.sin()
                + p.escape_gain * p.escape_direction * gate.g;
            let day_dyi_direct = -p.lane_keep * phase.cos();
            let day_dgx = p.escape_gain * p.escape_direction * gate.d_dx;
            let day_dgy = p.escape_gain * p.escape_direction * gate.d_dy;

            let (px, dpx) = self.clamp_x.eval(xi + dt * ui + dt2 * ax);
            let (py, dpy) = self.clamp_y.eval(yi + dt * wi + dt2 * ay);
            positions.push([px, py]);

            if let Some(j) = jac.as_mut() {
                let rx = 2 * i;
                let ry = 2 * i + 1;
                let idx = |row, c, k| buf.flat_index(row, c, k);
                let mut add = |r: usize, k: usize, v: f64| j[(r, k)] += v;

                // x̂_i = x_i + (x_i − x'_i) + dt² a_x
                add(rx, idx(0, col, 0), dpx * (2.0 + dt2 * (dax_dui / dt - dax_dgx)));
                add(rx, idx(1, col, 0), dpx * (-1.0 - dt2 * dax_dui / dt));
                add(rx, idx(0, col, 1), dpx * dt2 * (-dax_dgy));
                add(rx, idx(0, 0, 0), dpx * dt2 * dax_dgx);
                add(rx, idx(0, 0, 1), dpx * dt2 * dax_dgy);
                for &(cj, da_duj, da_dxi, da_deta) in &followers {
                    add(rx, idx(0, cj, 0), dpx * dt2 * (da_duj / dt + da_dxi));
                    add(rx, idx(1, cj, 0), dpx * dt2 * (-da_duj / dt));
                    add(rx, idx(0, cj, 1), dpx * dt2 * da_deta);
                    add(rx, idx(0, col, 0), dpx * dt2 * (-da_dxi));
                    add(rx, idx(0, col, 1), dpx * dt2 * (-da_deta));
                }

                // ŷ_i = y_i + (y_i − y'_i) + dt² a_y
                let day_dwi = -p.lateral_damping;
                add(ry, idx(0, col, 1), dpy * (2.0 + dt2 * (day_dwi / dt + day_dyi_direct - day_dgy)));
                add(ry, idx(1, col, 1), dpy * (-1.0 - dt2 * day_dwi / dt));
                add(ry, idx(0, col, 0), dpy * dt2 * (-day_dgx));
                add(ry, idx(0, 0, 0), dpy * dt2 * day_dgx);
                add(ry, idx(0, 0, 1), dpy * dt2 * day_dgy);
            }
        }

        Ok(LocalPrediction {
            positions: PredictedPositions { positions },
            jacobian: jac,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_vehicle_buffer(ego: [f64; 2], ego_prev: [f64; 2]) -> ObservationBuffer {
        ObservationBuffer::from_rows(vec![
            vec![ego, [10.0, 3.7], [18.0, 3.7]],
            vec![ego_prev, [8.0, 3.7], [16.0, 3.65]],
        ])
        .unwrap()
    }

    fn no_ego_prediction(pred: &InteractivePredictor) -> Vec<[f64; 2]> {
        // Ego placed far outside every interaction range.
        pred.predict_one(&two_vehicle_buffer([-5000.0, -200.0], [-5002.0, -200.0]))
            .unwrap()
            .positions
    }

    #[test]
    fn far_ego_matches_no_ego_prediction() {
        let pred = InteractivePredictor::new(InteractiveParams::default()).unwrap();
        let base = no_ego_prediction(&pred);
        for ego in [[-45.0, 3.7], [70.0, 3.7], [14.0, 60.0]] {
            let out = pred
                .predict_one(&two_vehicle_buffer(ego, [ego[0] - 2.0, ego[1]]))
                .unwrap();
            for (a, b) in out.positions.iter().zip(&base) {
                assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn encroaching_ego_makes_vehicle_yield() {
        let pred = InteractivePredictor::new(InteractiveParams::default()).unwrap();
        let base = no_ego_prediction(&pred);
        // 0.5 m ahead of vehicle 1 and laterally inside its lane
        let out = pred
            .predict_one(&two_vehicle_buffer([10.5, 2.5], [8.5, 2.4]))
            .unwrap();
        let x_now = 10.0;
        assert!(out.positions[0][0] - x_now < base[0][0] - x_now);
    }

    #[test]
    fn escape_pushes_in_configured_direction() {
        let p = InteractiveParams {
            escape_gain: 2.0,
            ..InteractiveParams::default()
        };
        let pred = InteractivePredictor::new(p).unwrap();
        let base = no_ego_prediction(&pred);
        let out = pred
            .predict_one(&two_vehicle_buffer([12.0, 2.5], [10.0, 2.4]))
            .unwrap();
        assert!(out.positions[0][1] > base[0][1]);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let pred = InteractivePredictor::new(InteractiveParams {
            escape_gain: 1.5,
            lon_offset: 1.5,
            ..InteractiveParams::default()
        })
        .unwrap();
        let buf = two_vehicle_buffer([11.0, 2.2], [9.2, 2.0]);
        let jac = pred.predict(&buf, true).unwrap().jacobian.unwrap();
        let flat = buf.flatten();
        let h = 1e-6;
        let rebuild = |v: &[f64]| {
            let rows = (0..2)
                .map(|r| (0..3).map(|c| [v[buf.flat_index(r, c, 0)], v[buf.flat_index(r, c, 1)]]).collect())
                .collect();
            ObservationBuffer::from_rows(rows).unwrap()
        };
        for k in 0..flat.len() {
            let mut up = flat.clone();
            let mut dn = flat.clone();
            up[k] += h;
            dn[k] -= h;
            let fu = pred.predict_one(&rebuild(&up)).unwrap().positions;
            let fd = pred.predict_one(&rebuild(&dn)).unwrap().positions;
            for i in 0..2 {
                for c in 0..2 {
                    let num = (fu[i][c] - fd[i][c]) / (2.0 * h);
                    let ana = jac[(2 * i + c, k)];
                    assert!((num - ana).abs() <= 1e-6 * (1.0 + ana.abs()), "entry ({i},{c},{k}): {ana} vs {num}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        let p = InteractiveParams {
            lateral_softness: 0.0,
            ..InteractiveParams::default()
        };
        assert!(InteractivePredictor::new(p).is_err());
    }
}
