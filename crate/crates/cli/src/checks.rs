//! Registry of the checks a scenario run performs.

use serde::{Deserialize, Serialize};

pub struct CheckInfo {
    pub id: &'static str,
    pub summary: &'static str,
}

pub const CHECKS: &[CheckInfo] = &[
    CheckInfo { id: "sinkhorn.residual", summary: "both equations of the Schrödinger system hold on the interior" },
    CheckInfo {
        id: "fixedpoint.bracket",
        summary: "alpha_psi solves its fixed-point equation and lies in the closed-form bracket",
    },
    CheckInfo {
        id: "envelopes.potentials",
        summary: "weak convexity of psi and weak concavity of phi against the alpha_psi envelopes",
    },
    CheckInfo {
        id: "spacetime.transform",
        summary: "space-time rescaling of the HJB flow leaves a constant remainder",
    },
    CheckInfo {
        id: "hessian.covariance",
        summary: "second difference of psi_bar equals the conditional variance over T",
    },
    CheckInfo { id: "martingale.gradient", summary: "grad U_t(X_t) has constant mean along the h-transform diffusion" },
    CheckInfo { id: "coupling.gamma", summary: "Gamma_t is nonincreasing in mean under reflection coupling" },
    CheckInfo { id: "htransform.tv", summary: "simulated endpoints match the bridge in total variation" },
    CheckInfo {
        id: "lsi.empirical",
        summary: "random test functions satisfy the LSI of the bridge with the computed constant",
    },
    CheckInfo { id: "lsi.local", summary: "gradient estimate and local LSI of the drift semigroup" },
];

pub fn ids() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.id).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub id: String,
    pub status: Status,
    pub detail: serde_json::Value,
}

impl CheckOutcome {
    pub fn verdict(id: &str, passed: bool, detail: serde_json::Value) -> Self {
        Self { id: id.into(), status: if passed { Status::Pass } else { Status::Fail }, detail }
    }

    pub fn skipped(id: &str, reason: impl Into<String>) -> Self {
        Self { id: id.into(), status: Status::Skipped, detail: serde_json::json!({ "reason": reason.into() }) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_unique() {
        let mut v = ids();
        v.sort();
        v.dedup();
        assert_eq!(v.len(), CHECKS.len());
    }
}
