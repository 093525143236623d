//! Causal min-max scaling into `[0.1, 1]`.

pub const SCALE_MIN: f64 = 0.1;
pub const SCALE_MAX: f64 = 1.0;
/// Output for a column whose running minimum equals its running maximum.
pub const DEGENERATE_SCALE: f64 = 0.55;

/// Scales each column with its running min/max over rows `0..=i`.
///
/// Row `i` of the output never depends on rows after `i`.
pub fn scale_expanding<const N: usize>(raw: &[[f64; N]]) -> Vec<[f64; N]> {
    let mut lo = [f64::INFINITY; N];
    let mut hi = [f64::NEG_INFINITY; N];
    raw.iter()
        .map(|row| {
            let mut out = [0.0; N];
            for j in 0..N {
                let x = row[j];
                lo[j] = lo[j].min(x);
                hi[j] = hi[j].max(x);
                let range = hi[j] - lo[j];
                out[j] = if range > 0.0 {
                    (SCALE_MIN + (SCALE_MAX - SCALE_MIN) * (x - lo[j]) / range)
                        .clamp(SCALE_MIN, SCALE_MAX)
                } else {
                    DEGENERATE_SCALE
                };
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_midpoint() {
        let out = scale_expanding(&[[2.0], [4.0], [3.0], [1.0]]);
        assert_eq!(out[0], [DEGENERATE_SCALE]);
        assert_eq!(out[1], [1.0]);
        assert!((out[2][0] - 0.55).abs() < 1e-15);
        assert_eq!(out[3], [0.1]);
    }

    #[test]
    fn constant_column() {
        let out = scale_expanding(&[[7.0, 1.0], [7.0, 2.0], [7.0, 0.0]]);
        assert!(out.iter().all(|r| r[0] == DEGENERATE_SCALE));
        assert_eq!(out[2][1], 0.1);
    }

    proptest! {
        #[test]
        fn bounded_and_causal(xs in prop::collection::vec(-1e6f64..1e6, 1..80), cut in 0usize..80) {
            let raw: Vec<[f64; 1]> = xs.iter().map(|&x| [x]).collect();
            let full = scale_expanding(&raw);
            for r in &full {
                prop_assert!((SCALE_MIN..=SCALE_MAX).contains(&r[0]));
            }
            let cut = cut.min(raw.len());
            let prefix = scale_expanding(&raw[..cut]);
            prop_assert_eq!(&full[..cut], &prefix[..]);
        }
    }
}
