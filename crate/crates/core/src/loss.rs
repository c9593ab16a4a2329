//! Pointwise losses `L(z, t)` and their derivatives in `t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A loss `L((y, x), t)` that depends on the observation through `y` only.
///
/// `deriv` returns the `order`-th partial derivative in `t` for
/// `order` in 1..=3. Callers validate responses once with
/// [`Loss::check_response`]; the evaluation methods assume admissible `y`.
pub trait Loss: Send + Sync {
    fn name(&self) -> &'static str;

    fn smooth(&self) -> bool;

    fn check_response(&self, y: f64) -> Result<()>;

    fn value(&self, y: f64, t: f64) -> f64;

    fn deriv(&self, order: u8, y: f64, t: f64) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(y - t)^2`
    Square,
    /// `(y - t)^2 / 2`, unit second derivative.
    RescaledSquare,
    /// `e^t - y t`, Poisson negative log-likelihood with log link.
    PoissonCount,
    /// `ln(1 + e^{-y t})` for `y` in {-1, +1}.
    Logistic,
    /// `y e^t - t` for durations `y > 0`.
    DurationHazard,
    /// `|y - t|`; only the first derivative exists, reported in the score
    /// sign convention `2 * 1{y >= t} - 1`.
    Absolute,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Square,
        LossKind::RescaledSquare,
        LossKind::PoissonCount,
        LossKind::Logistic,
        LossKind::DurationHazard,
        LossKind::Absolute,
    ];
}

impl Loss for LossKind {
    fn name(&self) -> &'static str {
        match self {
            LossKind::Square => "square",
            LossKind::RescaledSquare => "rescaled_square",
            LossKind::PoissonCount => "poisson_count",
            LossKind::Logistic => "logistic",
            LossKind::DurationHazard => "duration_hazard",
            LossKind::Absolute => "absolute",
        }
    }

    fn smooth(&self) -> bool {
        !matches!(self, LossKind::Absolute)
    }

    fn check_response(&self, y: f64) -> Result<()> {
        let ok = match self {
            LossKind::Square | LossKind::RescaledSquare | LossKind::Absolute => y.is_finite(),
            LossKind::PoissonCount => y.is_finite() && y >= 0.0,
            LossKind::Logistic => y == 1.0 || y == -1.0,
            LossKind::DurationHazard => y.is_finite() && y > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InadmissibleResponse { loss: self.name(), y })
        }
    }

    fn value(&self, y: f64, t: f64) -> f64 {
        match self {
            LossKind::Square => (y - t) * (y - t),
            LossKind::RescaledSquare => 0.5 * (y - t) * (y - t),
            LossKind::PoissonCount => t.exp() - y * t,
            LossKind::Logistic => softplus(-y * t),
            LossKind::DurationHazard => y * t.exp() - t,
            LossKind::Absolute => (y - t).abs(),
        }
    }

    fn deriv(&self, order: u8, y: f64, t: f64) -> Result<f64> {
        if !(1..=3).contains(&order) {
            return Err(Error::InvalidArgument(format!("derivative order {order} not in 1..=3")));
        }
        Ok(match (self, order) {
            (LossKind::Square, 1) => -2.0 * (y - t),
            (LossKind::Square, 2) => 2.0,
            (LossKind::Square, _) => 0.0,
            (LossKind::RescaledSquare, 1) => -(y - t),
            (LossKind::RescaledSquare, 2) => 1.0,
            (LossKind::RescaledSquare, _) => 0.0,
            (LossKind::PoissonCount, 1) => t.exp() - y,
            (LossKind::PoissonCount, _) => t.exp(),
            (LossKind::Logistic, 1) => -y * sigmoid(-y * t),
            (LossKind::Logistic, 2) => {
                // y^2 = 1
                let p = sigmoid(y * t);
                p * (1.0 - p)
            }
            (LossKind::Logistic, _) => {
                let p = sigmoid(y * t);
                y * p * (1.0 - p) * (1.0 - 2.0 * p)
            }
            (LossKind::DurationHazard, 1) => y * t.exp() - 1.0,
            (LossKind::DurationHazard, _) => y * t.exp(),
            // score 2 * 1{y - t >= 0} - 1; this is minus the slope in t, and the
            // kink y = t takes the value +1
            (LossKind::Absolute, 1) => {
                if y - t >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            (LossKind::Absolute, order) => return Err(Error::NonSmooth { loss: self.name(), order }),
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Validated `L(z, t)`.
pub fn loss_value(loss: &dyn Loss, y: f64, t: f64) -> Result<f64> {
    loss.check_response(y)?;
    if !t.is_finite() {
        return Err(Error::NonFinite(format!("loss argument t = {t}")));
    }
    Ok(loss.value(y, t))
}

/// Validated `d^order L(z, t) / dt^order`.
pub fn loss_deriv(loss: &dyn Loss, order: u8, y: f64, t: f64) -> Result<f64> {
    loss.check_response(y)?;
    if !t.is_finite() {
        return Err(Error::NonFinite(format!("loss argument t = {t}")));
    }
    loss.deriv(order, y, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn values() {
        assert_eq!(loss_value(&LossKind::Square, 1.0, 0.0).unwrap(), 1.0);
        assert_eq!(loss_value(&LossKind::PoissonCount, 0.0, 0.0).unwrap(), 1.0);
        assert_relative_eq!(
            loss_value(&LossKind::Logistic, 1.0, 0.0).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert!(loss_value(&LossKind::Logistic, 0.5, 0.0).is_err());
        assert!(loss_value(&LossKind::DurationHazard, 0.0, 0.0).is_err());
    }

    #[test]
    fn first_derivatives() {
        assert_eq!(loss_deriv(&LossKind::Square, 1, 2.0, 0.5).unwrap(), -3.0);
        assert_eq!(loss_deriv(&LossKind::Absolute, 1, 1.0, 0.0).unwrap(), 1.0);
        assert_eq!(loss_deriv(&LossKind::Absolute, 1, 0.3, 0.3).unwrap(), 1.0);
        assert_eq!(loss_deriv(&LossKind::Absolute, 1, 0.0, 1.0).unwrap(), -1.0);
    }

    #[test]
    fn absolute_loss_has_no_second_derivative() {
        assert!(matches!(
            loss_deriv(&LossKind::Absolute, 2, 1.0, 0.0),
            Err(Error::NonSmooth { order: 2, .. })
        ));
    }

    #[test]
    fn poisson_second_derivative_matches_finite_difference() {
        let h = 1e-5;
        let t = 0.3;
        let fd = (LossKind::PoissonCount.value(2.0, t + h) - 2.0 * LossKind::PoissonCount.value(2.0, t)
            + LossKind::PoissonCount.value(2.0, t - h))
            / (h * h);
        let got = loss_deriv(&LossKind::PoissonCount, 2, 2.0, t).unwrap();
        assert_relative_eq!(got, 0.3f64.exp(), max_relative = 1e-15);
        assert_relative_eq!(got, fd, max_relative = 1e-5);
    }

    #[test]
    fn rescaled_square_has_unit_curvature() {
        assert_eq!(LossKind::RescaledSquare.deriv(2, 0.7, -3.0).unwrap(), 1.0);
        assert_eq!(LossKind::RescaledSquare.deriv(1, 1.0, 0.0).unwrap(), -1.0);
    }
}
