//! Browser bindings: fixed-point diagram, bridge heatmap and LSI profile.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use bridgecert::fixedpoint::{alpha_bracket, fixed_point_map, solve_alpha_psi, ProblemParams};
use bridgecert::lsi::{contraction_coefficient, lsi_constant, LsiParams};
use bridgecert::potentials::Potential;
use bridgecert::schrodinger::{bridge_density, sinkhorn_solve, MarginalSpec};
use bridgecert::Grid1D;

/// The map `alpha -> alpha_nu - 1/T + G(alpha, 2)/(2T^2)` against the diagonal.
#[derive(Clone, Debug, Serialize)]
pub struct FixedPointDiagram {
    pub alphas: Vec<f64>,
    pub map: Vec<f64>,
    pub alpha_psi: f64,
    pub iterates: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

pub fn fixed_point_diagram(
    t: f64,
    beta_mu: f64,
    alpha_nu: f64,
    l: f64,
    points: usize,
) -> bridgecert::Result<FixedPointDiagram> {
    let p = ProblemParams::new(t, beta_mu, alpha_nu, l, None)?;
    let sol = solve_alpha_psi(&p)?;
    let (lower, upper) = alpha_bracket(&p)?;
    let lo = (alpha_nu - 1.0 / t).max(-0.95 / t);
    let hi = upper + 0.5 * (upper - lo).abs().max(0.5);
    let n = points.max(2);
    let alphas: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
    let map = alphas.iter().map(|&a| fixed_point_map(&p, a)).collect::<bridgecert::Result<Vec<_>>>()?;
    Ok(FixedPointDiagram { alphas, map, alpha_psi: sol.alpha_psi, iterates: sol.iterates, lower, upper })
}

/// Static bridge from a standard normal to a double well, masses row-major in `(x, y)`.
#[derive(Clone, Debug, Serialize)]
pub struct BridgeHeatmap {
    pub x: Vec<f64>,
    pub masses: Vec<f64>,
    pub iterations: usize,
    pub correlation: f64,
}

pub fn bridge_heatmap(height: f64, separation: f64, horizon: f64, n: usize) -> bridgecert::Result<BridgeHeatmap> {
    let half = 3.0 * separation.max(1.0) + 4.0 * horizon.sqrt();
    let grid = Grid1D::new(-half, half, n)?;
    let mu = MarginalSpec::from_potential(&Potential::Gaussian { mean: 0.0, var: 1.0 }, grid)?;
    let nu = MarginalSpec::from_potential(&Potential::DoubleWell { height, separation, alpha: None }, grid)?;
    let state = sinkhorn_solve(&mu, &nu, horizon, 1e-9, 5000)?;
    let bridge = bridge_density(&state, &mu, &nu)?;
    Ok(BridgeHeatmap {
        x: grid.points(),
        masses: bridge.masses().to_vec(),
        iterations: state.iterations,
        correlation: bridge.correlation(),
    })
}

/// `t -> C_{t,T}` together with the resulting LSI constant.
#[derive(Clone, Debug, Serialize)]
pub struct LsiProfile {
    pub times: Vec<f64>,
    pub contraction: Vec<f64>,
    pub constant: f64,
    pub mixing_constant: f64,
    pub squared_constant: f64,
}

pub fn lsi_profile(alpha_psi: f64, l: f64, t: f64, c_mu: f64, points: usize) -> bridgecert::Result<LsiProfile> {
    let p = LsiParams::new(alpha_psi, l, t, c_mu)?;
    let n = points.max(2);
    let times: Vec<f64> = (0..n).map(|k| t * k as f64 / (n - 1) as f64).collect();
    let contraction = times.iter().map(|&s| contraction_coefficient(&p, s)).collect();
    let report = lsi_constant(&p);
    Ok(LsiProfile {
        times,
        contraction,
        constant: report.constant,
        mixing_constant: report.mixing_constant,
        squared_constant: report.squared_constant,
    })
}

fn to_js<T: Serialize>(r: bridgecert::Result<T>) -> Result<JsValue, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_wasm_bindgen::to_value(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = fixedPointDiagram)]
pub fn fixed_point_diagram_js(t: f64, beta_mu: f64, alpha_nu: f64, l: f64, points: usize) -> Result<JsValue, JsError> {
    to_js(fixed_point_diagram(t, beta_mu, alpha_nu, l, points))
}

#[wasm_bindgen(js_name = bridgeHeatmap)]
pub fn bridge_heatmap_js(height: f64, separation: f64, horizon: f64, n: usize) -> Result<JsValue, JsError> {
    to_js(bridge_heatmap(height, separation, horizon, n))
}

#[wasm_bindgen(js_name = lsiProfile)]
pub fn lsi_profile_js(alpha_psi: f64, l: f64, t: f64, c_mu: f64, points: usize) -> Result<JsValue, JsError> {
    to_js(lsi_profile(alpha_psi, l, t, c_mu, points))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagram_crosses_diagonal_at_alpha_psi() {
        let d = fixed_point_diagram(1.0, 1.0, 1.0, 0.0, 50).unwrap();
        assert!((d.alpha_psi - 0.5 * (5f64.sqrt() - 1.0)).abs() < 1e-10);
        assert!(d.lower <= d.alpha_psi + 1e-10 && d.alpha_psi <= d.upper + 1e-10);
        for (a, m) in d.alphas.iter().zip(&d.map) {
            if *a < d.alpha_psi {
                assert!(m > a);
            }
        }
        assert!(d.alphas[0] < d.alpha_psi && *d.alphas.last().unwrap() > d.alpha_psi);
    }

    #[test]
    fn heatmap_is_a_coupling() {
        let h = bridge_heatmap(1.0, 1.5, 1.0, 64).unwrap();
        assert_eq!(h.masses.len(), 64 * 64);
        let total: f64 = h.masses.iter().sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
        assert!(h.masses.iter().all(|m| *m >= 0.0));
        assert!(h.correlation > 0.0 && h.correlation < 1.0);
    }

    #[test]
    fn profile_ends_at_one() {
        let p = lsi_profile(0.5, 0.3, 1.0, 1.0, 11).unwrap();
        assert!((p.contraction[10] - 1.0).abs() < 1e-12);
        assert!(p.constant >= p.mixing_constant && p.constant >= p.squared_constant);
    }

    #[test]
    fn invalid_inputs_are_errors() {
        assert!(fixed_point_diagram(-1.0, 1.0, 1.0, 0.0, 10).is_err());
        assert!(lsi_profile(0.5, -1.0, 1.0, 1.0, 10).is_err());
        assert!(bridge_heatmap(1.0, 1.5, 1.0, 4).is_err());
    }
}
