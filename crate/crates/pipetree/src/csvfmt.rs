//! Deterministic float formatting for CSV output: 17 significant digits,
//! `.` decimal separator, no locale dependence.

pub(crate) fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::sig17;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(sig17(1.0), "1.0000000000000000e0");
        assert_eq!(sig17(-0.25), "-2.5000000000000000e-1");
        let third: f64 = 1.0 / 3.0;
        assert_eq!(sig17(third), "3.3333333333333331e-1");
    }
}
