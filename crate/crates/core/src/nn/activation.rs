use super::Tensor3;
use crate::real::Real;

pub fn tanh_inplace<T: Real>(x: &mut Tensor3<T>) {
    x.data_mut().iter_mut().for_each(|v| *v = v.tanh());
}

pub fn tanh_map<T: Real>(x: &Tensor3<T>) -> Tensor3<T> {
    x.map(|v| v.tanh())
}

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_points() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        let t = Tensor3::<f64>::zeros(1, 2, 2);
        assert!(tanh_map(&t).data().iter().all(|&v| v == 0.0));
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
    }

    proptest! {
        #[test]
        fn tanh_is_odd(x in -20.0f64..20.0) {
            let a = Tensor3::new(1, 1, 2, vec![x, -x]).unwrap();
            let b = tanh_map(&a);
            prop_assert_eq!(b.data()[0], -b.data()[1]);
        }

        #[test]
        fn logistic_symmetry(z in -30.0f64..30.0) {
            prop_assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() < 1e-15);
        }
    }
}
