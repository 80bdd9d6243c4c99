use std::fmt;
use std::str::FromStr;

use crate::scalar::{fast_tanh, Scalar};

/// Smooth elementwise nonlinearity. All variants are at least twice
/// differentiable, which the controller needs since it consumes `∇V`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub const ALL: [Activation; 4] = [Self::Identity, Self::Tanh, Self::Sigmoid, Self::Softplus];

    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
            Self::Softplus => "softplus",
        }
    }

    #[inline]
    pub fn value<T: Scalar>(self, x: T) -> T {
        self.eval(x).0
    }

    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        self.eval(x).1
    }

    #[inline]
    pub fn second_derivative<T: Scalar>(self, x: T) -> T {
        self.eval(x).2
    }

    /// `(σ(x), σ'(x), σ''(x))` in one go.
    #[inline]
    pub fn eval<T: Scalar>(self, x: T) -> (T, T, T) {
        let one = T::one();
        let two = T::lit(2.0);
        match self {
            Self::Identity => (x, one, T::zero()),
            Self::Tanh => {
                let h = fast_tanh(x);
                let d1 = one - h * h;
                (h, d1, -two * h * d1)
            }
            Self::Sigmoid => {
                let s = sigmoid(x);
                let d1 = s * (one - s);
                (s, d1, d1 * (one - two * s))
            }
            Self::Softplus => {
                let s = sigmoid(x);
                let v = x.max(T::zero()) + (-x.abs()).exp().ln_1p();
                (v, s, s * (one - s))
            }
        }
    }

    /// Value and first derivative only.
    #[inline]
    pub fn eval2<T: Scalar>(self, x: T) -> (T, T) {
        match self {
            Self::Identity => (x, T::one()),
            Self::Tanh => {
                let h = fast_tanh(x);
                (h, T::one() - h * h)
            }
            _ => {
                let (v, d1, _) = self.eval(x);
                (v, d1)
            }
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown activation `{s}` (expected identity, tanh, sigmoid or softplus)"))
    }
}
