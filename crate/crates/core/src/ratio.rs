//! Exact non-negative rationals for precision parameters.
//!
//! Precision values such as ε or λ feed integer budgets (`floor(ε·n)`) and
//! integer thresholds (`ceil((1+λ)·r)`). Doing that in `f64` gets the wrong
//! answer for inputs like `floor(0.29 * 100)`, so they are kept as a reduced
//! fraction and parsed from their shortest decimal representation.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RatioError {
    #[error("zero denominator")]
    ZeroDenominator,
    #[error("cannot parse {0:?} as a non-negative rational")]
    Parse(String),
    #[error("value {0} does not fit a 64-bit fraction")]
    Overflow(String),
}

/// A reduced fraction `num / den` with `den > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Ratio {
    num: u64,
    den: u64,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Ratio {
    pub const ZERO: Ratio = Ratio { num: 0, den: 1 };
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self, RatioError> {
        Self::from_u128(num as u128, den as u128)
    }

    fn from_u128(num: u128, den: u128) -> Result<Self, RatioError> {
        if den == 0 {
            return Err(RatioError::ZeroDenominator);
        }
        let g = gcd(num, den).max(1);
        let (num, den) = (num / g, den / g);
        if num > u64::MAX as u128 || den > u64::MAX as u128 {
            return Err(RatioError::Overflow(format!("{num}/{den}")));
        }
        Ok(Ratio {
            num: num as u64,
            den: den as u64,
        })
    }

    /// Converts through the shortest decimal string that round-trips `x`,
    /// so `0.1` becomes exactly `1/10`.
    pub fn from_f64(x: f64) -> Result<Self, RatioError> {
        if !x.is_finite() || x < 0.0 {
            return Err(RatioError::Parse(x.to_string()));
        }
        format!("{x}").parse()
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    /// `floor(self · n)`.
    pub fn floor_mul(&self, n: u64) -> u64 {
        ((self.num as u128 * n as u128) / self.den as u128) as u64
    }

    /// `ceil(self · n)`.
    pub fn ceil_mul(&self, n: u64) -> u64 {
        (self.num as u128 * n as u128).div_ceil(self.den as u128) as u64
    }

    /// `self / d` for a positive integer `d`.
    pub fn div_int(&self, d: u64) -> Ratio {
        Self::from_u128(self.num as u128, self.den as u128 * d.max(1) as u128)
            .expect("divisor keeps the fraction in range")
    }

    pub fn mul(&self, other: Ratio) -> Ratio {
        Self::from_u128(
            self.num as u128 * other.num as u128,
            self.den as u128 * other.den as u128,
        )
        .expect("product of precision parameters stays in range")
    }

    /// `1 + self`.
    pub fn one_plus(&self) -> Ratio {
        Self::from_u128(self.den as u128 + self.num as u128, self.den as u128)
            .expect("1 + ratio stays in range")
    }

    /// Strictly between zero and one.
    pub fn is_open_unit(&self) -> bool {
        self.num > 0 && self.num < self.den
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Ratio {
    type Err = RatioError;

    /// Accepts `a/b`, integers, and plain decimals such as `0.125`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || RatioError::Parse(s.to_string());
        if let Some((a, b)) = s.split_once('/') {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            return Ratio::new(a, b);
        }
        let (int, frac) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if !int.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        if frac.len() > 18 {
            return Err(RatioError::Overflow(s.to_string()));
        }
        let den = 10u128.pow(frac.len() as u32);
        let int_v: u128 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac_v: u128 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        Ratio::from_u128(int_v * den + frac_v, den)
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if let Ok(back) = Ratio::from_f64(self.as_f64()) {
            if back == *self {
                return s.serialize_f64(self.as_f64());
            }
        }
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ratio::from_f64(x).map_err(serde::de::Error::custom),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_parsing_is_exact() {
        let r = Ratio::from_f64(0.29).unwrap();
        assert_eq!((r.num(), r.den()), (29, 100));
        assert_eq!(r.floor_mul(100), 29);
        assert_eq!(Ratio::from_f64(0.1).unwrap().floor_mul(30), 3);
        assert_eq!("1/3".parse::<Ratio>().unwrap().ceil_mul(4), 2);
        assert_eq!("2".parse::<Ratio>().unwrap(), Ratio::new(2, 1).unwrap());
    }

    #[test]
    fn arithmetic() {
        let eps = Ratio::from_f64(0.1).unwrap();
        assert_eq!(eps.div_int(12), Ratio::new(1, 120).unwrap());
        assert_eq!(eps.one_plus(), Ratio::new(11, 10).unwrap());
        assert!(eps.is_open_unit());
        assert!(!Ratio::ONE.is_open_unit());
    }

    #[test]
    fn rejects_garbage() {
        assert!("abc".parse::<Ratio>().is_err());
        assert!("1/0".parse::<Ratio>().is_err());
        assert!(Ratio::from_f64(-0.5).is_err());
    }

    #[test]
    fn serde_roundtrip() {
        let r = Ratio::new(1, 3).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, "\"1/3\"");
        assert_eq!(serde_json::from_str::<Ratio>(&s).unwrap(), r);
        let e: Ratio = serde_json::from_str("0.25").unwrap();
        assert_eq!(e, Ratio::new(1, 4).unwrap());
        assert_eq!(serde_json::to_string(&e).unwrap(), "0.25");
    }
}
