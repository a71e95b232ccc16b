//! Small numeric helpers shared across modules.

/// Round half-up to the nearest integer: 0.5 rounds toward +inf.
///
/// Used for every real-to-pixel conversion so results are identical across
/// platforms (`f64::round` rounds half away from zero, which differs for
/// negative inputs).
pub(crate) fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Compensated (Kahan) summation accumulator.
///
/// Region and background means are taken over tens of thousands of 16-bit
/// intensities; naive accumulation can lose enough precision to break the
/// 1e-9 shift-invariance contract of the quantify step.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_up_at_midpoint() {
        assert_eq!(round_half_up(10.5), 11);
        assert_eq!(round_half_up(20.5), 21);
        assert_eq!(round_half_up(-0.5), 0);
        assert_eq!(round_half_up(-1.5), -1);
        assert_eq!(round_half_up(2.49), 2);
        assert_eq!(round_half_up(100.0), 100);
    }

    #[test]
    fn kahan_recovers_small_terms() {
        let mut acc = KahanSum::default();
        acc.add(1e16);
        for _ in 0..1000 {
            acc.add(1.0);
        }
        acc.add(-1e16);
        assert_eq!(acc.value(), 1000.0);
    }
}
