//! Flexible-scale semantic encoder economics: reconstruction quality as a
//! function of model scale, the computation energy it costs, and the
//! weighted utility that trades one against the other.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest admissible model scale ratio.
pub const ETA_MIN: f64 = 0.01;

/// Grid resolution used by [`optimal_eta`] unless told otherwise.
pub const DEFAULT_ETA_GRID: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticError {
    #[error("model scale {0} outside (0, 1]")]
    ScaleOutOfRange(f64),
    #[error("quality fit undefined at scale {0} (non-positive log argument)")]
    LogDomain(f64),
}

/// Coefficients of the logarithmic quality fit
/// `Q(eta) = w1 * ln(w2 / eta + w3) + w4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityParams {
    pub omega1: f64,
    pub omega2: f64,
    pub omega3: f64,
    pub omega4: f64,
}

impl Default for QualityParams {
    fn default() -> Self {
        Self {
            omega1: -0.0815,
            omega2: 10.7192,
            omega3: -0.7957,
            omega4: 1.0918,
        }
    }
}

impl QualityParams {
    /// The fit must stay defined on the whole admissible range. The log
    /// argument is monotone in eta, so checking both ends suffices.
    pub fn is_valid(&self) -> bool {
        [ETA_MIN, 1.0]
            .iter()
            .all(|&eta| self.omega2 / eta + self.omega3 > 0.0)
    }
}

/// Hardware and workload constants of the encoder/decoder pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyParams {
    /// Latent space size.
    pub latent_size: usize,
    pub eps_encoder: f64,
    pub eps_decoder: f64,
    pub freq_encoder_hz: f64,
    pub freq_decoder_hz: f64,
    /// Encoder workload in cycles.
    pub work_encoder: f64,
    /// Decoder workload in cycles.
    pub work_decoder: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            latent_size: 512,
            eps_encoder: 1e-26,
            eps_decoder: 1e-26,
            freq_encoder_hz: 1e9,
            freq_decoder_hz: 1e9,
            work_encoder: 0.65e6,
            work_decoder: 3.25e6,
        }
    }
}

impl EnergyParams {
    pub fn invalid_field(&self) -> Option<&'static str> {
        if self.latent_size == 0 {
            return Some("latent_size");
        }
        let fields = [
            ("eps_encoder", self.eps_encoder),
            ("eps_decoder", self.eps_decoder),
            ("freq_encoder_hz", self.freq_encoder_hz),
            ("freq_decoder_hz", self.freq_decoder_hz),
            ("work_encoder", self.work_encoder),
            ("work_decoder", self.work_decoder),
        ];
        fields
            .into_iter()
            .find(|(_, v)| !(*v > 0.0 && v.is_finite()))
            .map(|(name, _)| name)
    }

    /// Energy of the full-size model, the default utility normalizer.
    pub fn full_scale_energy(&self) -> f64 {
        self.latent_size as f64
            * (self.eps_encoder * self.freq_encoder_hz.powi(2) * self.work_encoder
                + self.eps_decoder * self.freq_decoder_hz.powi(2) * self.work_decoder)
    }
}

/// Importance factor between quality and energy, plus the energy scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtilityWeights {
    /// 1 is quality-first, 0 is energy-efficient.
    pub lambda: f64,
    /// Joules that count as one unit of utility. Defaults to the full-scale
    /// energy of the default hardware; set to 1.0 for raw joules.
    pub energy_norm: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            energy_norm: EnergyParams::default().full_scale_energy(),
        }
    }
}

fn check_eta(eta: f64) -> Result<(), SemanticError> {
    if eta > 0.0 && eta <= 1.0 {
        Ok(())
    } else {
        Err(SemanticError::ScaleOutOfRange(eta))
    }
}

pub fn quality(eta: f64, qp: &QualityParams) -> Result<f64, SemanticError> {
    check_eta(eta)?;
    let arg = qp.omega2 / eta + qp.omega3;
    if arg <= 0.0 {
        return Err(SemanticError::LogDomain(eta));
    }
    Ok(qp.omega1 * arg.ln() + qp.omega4)
}

/// Computation energy in joules of running a model at scale `eta`.
pub fn energy(eta: f64, ep: &EnergyParams) -> Result<f64, SemanticError> {
    check_eta(eta)?;
    Ok(eta * eta * ep.full_scale_energy())
}

/// Per-user utility contribution `lambda * Q - (1 - lambda) * E / norm`.
pub fn user_utility(
    eta: f64,
    weights: &UtilityWeights,
    qp: &QualityParams,
    ep: &EnergyParams,
) -> Result<f64, SemanticError> {
    Ok(weights.lambda * quality(eta, qp)?
        - (1.0 - weights.lambda) * energy(eta, ep)? / weights.energy_norm)
}

/// Utility summed over users.
pub fn utility(
    etas: &[f64],
    weights: &UtilityWeights,
    qp: &QualityParams,
    ep: &EnergyParams,
) -> Result<f64, SemanticError> {
    etas.iter()
        .map(|&eta| user_utility(eta, weights, qp, ep))
        .sum()
}

/// Grid-search the per-user utility maximizer on `[ETA_MIN, 1]`.
///
/// Ties go to the larger scale.
pub fn optimal_eta(
    lambda: f64,
    energy_norm: f64,
    grid_size: usize,
    qp: &QualityParams,
    ep: &EnergyParams,
) -> f64 {
    let weights = UtilityWeights {
        lambda,
        energy_norm,
    };
    let grid_size = grid_size.max(2);
    let step = (1.0 - ETA_MIN) / (grid_size - 1) as f64;
    let mut best = (f64::NEG_INFINITY, ETA_MIN);
    for i in 0..grid_size {
        let eta = if i == grid_size - 1 {
            1.0
        } else {
            ETA_MIN + step * i as f64
        };
        let u = user_utility(eta, &weights, qp, ep).unwrap_or(f64::NEG_INFINITY);
        if u >= best.0 {
            best = (u, eta);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norm() -> f64 {
        EnergyParams::default().full_scale_energy()
    }

    #[test]
    fn quality_examples() {
        let qp = QualityParams::default();
        assert!((quality(1.0, &qp).unwrap() - 0.90477).abs() < 1e-4);
        assert!((quality(0.1, &qp).unwrap() - 0.71143).abs() < 1e-4);
        assert_eq!(quality(0.0, &qp), Err(SemanticError::ScaleOutOfRange(0.0)));
        assert!(quality(1.2, &qp).is_err());
        assert!(qp.is_valid());
    }

    #[test]
    fn energy_examples() {
        let ep = EnergyParams::default();
        assert!((energy(1.0, &ep).unwrap() - 19.968).abs() < 1e-9);
        assert!((energy(0.5, &ep).unwrap() - 4.992).abs() < 1e-9);
        assert_eq!(energy(0.5, &ep).unwrap() / energy(1.0, &ep).unwrap(), 0.25);
        assert!(energy(-0.1, &ep).is_err());
    }

    #[test]
    fn utility_examples() {
        let qp = QualityParams::default();
        let ep = EnergyParams::default();
        let q1 = quality(1.0, &qp).unwrap();
        let w = |lambda| UtilityWeights {
            lambda,
            energy_norm: norm(),
        };
        assert!((utility(&[1.0], &w(1.0), &qp, &ep).unwrap() - 0.90477).abs() < 1e-4);
        assert!((utility(&[1.0], &w(0.0), &qp, &ep).unwrap() + 1.0).abs() < 1e-12);
        let both = utility(&[1.0, 1.0], &w(0.5), &qp, &ep).unwrap();
        assert!((both - (q1 - 1.0)).abs() < 1e-12);
        assert!((both + 0.09523).abs() < 1e-4);
        assert!(utility(&[1.0, 0.0], &w(0.5), &qp, &ep).is_err());
    }

    #[test]
    fn optimal_eta_endpoints_and_trend() {
        let qp = QualityParams::default();
        let ep = EnergyParams::default();
        assert_eq!(optimal_eta(1.0, norm(), DEFAULT_ETA_GRID, &qp, &ep), 1.0);
        assert_eq!(optimal_eta(0.0, norm(), DEFAULT_ETA_GRID, &qp, &ep), ETA_MIN);
        let etas: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&l| optimal_eta(l, norm(), DEFAULT_ETA_GRID, &qp, &ep))
            .collect();
        assert!(etas.windows(2).all(|w| w[0] <= w[1]), "{etas:?}");
    }

    proptest! {
        #[test]
        fn quality_is_monotone(a in ETA_MIN..=1.0f64, b in ETA_MIN..=1.0f64) {
            let qp = QualityParams::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quality(hi, &qp).unwrap() >= quality(lo, &qp).unwrap());
        }

        #[test]
        fn energy_is_quadratic(eta in ETA_MIN..=0.5f64, c in 1.0f64..2.0) {
            let ep = EnergyParams::default();
            let ratio = energy(c * eta, &ep).unwrap() / energy(eta, &ep).unwrap();
            prop_assert!((ratio - c * c).abs() <= 1e-12 * c * c);
        }

        #[test]
        fn utility_decomposes_at_extremes(etas in proptest::collection::vec(ETA_MIN..=1.0f64, 1..6)) {
            let qp = QualityParams::default();
            let ep = EnergyParams::default();
            let q: f64 = etas.iter().map(|&e| quality(e, &qp).unwrap()).sum();
            let e: f64 = etas.iter().map(|&x| energy(x, &ep).unwrap() / norm()).sum();
            let w1 = UtilityWeights { lambda: 1.0, energy_norm: norm() };
            let w0 = UtilityWeights { lambda: 0.0, energy_norm: norm() };
            prop_assert!((utility(&etas, &w1, &qp, &ep).unwrap() - q).abs() < 1e-12);
            prop_assert!((utility(&etas, &w0, &qp, &ep).unwrap() + e).abs() < 1e-12);
        }

        #[test]
        fn optimal_eta_monotone_in_lambda(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let qp = QualityParams::default();
            let ep = EnergyParams::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(optimal_eta(hi, norm(), 200, &qp, &ep) >= optimal_eta(lo, norm(), 200, &qp, &ep));
        }
    }
}
