use crate::real::Real;

pub const BCE_EPS: f64 = 1e-7;

/// Binary cross-entropy with the prediction clamped to `[ε, 1-ε]`.
pub fn bce_loss<T: Real>(y_hat: T, y: T) -> T {
    let eps = T::of(BCE_EPS);
    let p = y_hat.max(eps).min(T::one() - eps);
    -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
}

/// Gradient of the (unclamped) loss with respect to the output logit when
/// `y_hat = sigmoid(logit)`.
#[inline]
pub fn bce_logit_grad<T: Real>(y_hat: T, y: T) -> T {
    y_hat - y
}
