//! Index arithmetic on the periodic `L`-point time/frequency lattice.

use crate::error::{Result, TfError};

/// Checks that `len` is a usable grid length (even, at least 4).
pub fn check_len(len: usize) -> Result<()> {
    if len < 4 || !len.is_multiple_of(2) {
        return Err(TfError::InvalidLength(len));
    }
    Ok(())
}

/// Reduces an integer index modulo `len` into `0..len`.
#[inline]
pub fn wrap(i: i64, len: usize) -> usize {
    i.rem_euclid(len as i64) as usize
}

/// Centered representative of `i` in `[-len/2, len/2)`.
#[inline]
pub fn centered(i: usize, len: usize) -> i64 {
    let half = (len / 2) as i64;
    let i = i as i64;
    if i >= half {
        i - len as i64
    } else {
        i
    }
}

/// Lag-Doppler product used by the alpha phase of the spreading function.
///
/// Interior cells use the plain product of centered indices. On the Nyquist
/// row or column (centered index `-len/2`) that index is read as `-len/2`
/// or `+len/2`, whichever has the opposite sign to the partner index, so the
/// product becomes `-(len/2)|partner|`. This keeps the alpha = 0 symbol of a
/// Hermitian operator exactly real on even grids.
#[inline]
pub fn lag_doppler_product(m: usize, k: usize, len: usize) -> i64 {
    let half = (len / 2) as i64;
    let mc = centered(m, len);
    let kc = centered(k, len);
    if mc == -half {
        -half * kc.abs()
    } else if kc == -half {
        -half * mc.abs()
    } else {
        mc * kc
    }
}

/// Sample offsets `-floor(t/2) ..= ceil(t/2) - 1` of a `t`-sample interval
/// centered on index 0, mapped onto the periodic grid.
pub fn centered_interval(t: usize, len: usize) -> Vec<usize> {
    let start = -((t / 2) as i64);
    (0..t as i64).map(|j| wrap(start + j, len)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_range() {
        let c: Vec<i64> = (0..8).map(|i| centered(i, 8)).collect();
        assert_eq!(c, vec![0, 1, 2, 3, -4, -3, -2, -1]);
    }

    #[test]
    fn nyquist_product_is_symmetric_under_negation() {
        let len = 8;
        for m in 0..len {
            for k in 0..len {
                let mn = wrap(-(m as i64), len);
                let kn = wrap(-(k as i64), len);
                let sum = lag_doppler_product(m, k, len) + lag_doppler_product(mn, kn, len);
                let want = 2 * (m as i64) * (k as i64);
                assert_eq!((sum - want).rem_euclid(2 * len as i64), 0, "m={m} k={k}");
            }
        }
    }

    #[test]
    fn interval_offsets() {
        assert_eq!(centered_interval(4, 8), vec![6, 7, 0, 1]);
        assert_eq!(centered_interval(3, 8), vec![7, 0, 1]);
        assert_eq!(centered_interval(1, 8), vec![0]);
    }

    #[test]
    fn rejects_odd_and_tiny() {
        assert!(check_len(7).is_err());
        assert!(check_len(2).is_err());
        assert!(check_len(4).is_ok());
    }
}
