//! Text encodings for floats that must survive a write/read cycle exactly.

/// Scientific notation with 17 significant digits, enough to round-trip any `f64`.
pub(crate) fn exact(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn parse(what: &'static str, s: &str) -> crate::Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| crate::Error::format(what, format!("`{s}` is not a number")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(exact(0.1), "1.0000000000000001e-1");
        assert_eq!(exact(-2.0), "-2.0000000000000000e0");
    }

    proptest! {
        #[test]
        fn round_trips_bit_exactly(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            prop_assert_eq!(parse("test", &exact(x)).unwrap().to_bits(), x.to_bits());
        }
    }
}
