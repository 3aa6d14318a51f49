use super::{TokenId, TokenSeq};
use crate::error::{Error, Result};

/// Uniform value binning. Out-of-range values are clamped into `[lo, hi]`;
/// `hi` itself lands in the top bin.
pub fn bin_encode(values: &[f64], levels: usize, lo: f64, hi: f64, modality: usize) -> Result<TokenSeq> {
    if levels < 2 {
        return Err(Error::input(format!("levels must be >= 2, got {levels}")));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::input(format!("need finite lo < hi, got [{lo}, {hi}]")));
    }
    let tokens = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if !v.is_finite() {
                return Err(Error::Encoding {
                    symbol: v.to_string(),
                    index: i,
                    reason: "non-finite value".into(),
                });
            }
            let v = v.clamp(lo, hi);
            let bin = ((v - lo) / (hi - lo) * levels as f64).floor() as usize;
            Ok(bin.min(levels - 1) as TokenId)
        })
        .collect::<Result<Vec<_>>>()?;
    TokenSeq::new(modality, tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bytes_map_to_themselves() {
        let bytes: Vec<f64> = (0..256).map(f64::from).collect();
        let seq = bin_encode(&bytes, 256, 0.0, 256.0, 0).unwrap();
        assert!(seq.tokens().iter().enumerate().all(|(i, &t)| t as usize == i));
    }

    #[test]
    fn hand_computed_bins_and_cap() {
        let seq = bin_encode(&[0.0, 0.5, 1.0], 2, 0.0, 1.0, 0).unwrap();
        assert_eq!(seq.tokens(), &[0, 1, 1]);
        let seq = bin_encode(&[7.0, -3.0, 99.0], 4, 0.0, 7.0, 0).unwrap();
        assert_eq!(seq.tokens(), &[3, 0, 3]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(bin_encode(&[f64::NAN], 4, 0.0, 1.0, 0).is_err());
        assert!(bin_encode(&[0.1], 1, 0.0, 1.0, 0).is_err());
        assert!(bin_encode(&[0.1], 4, 1.0, 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn monotone(a in -2.0f64..3.0, b in -2.0f64..3.0, levels in 2usize..40) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let t = bin_encode(&[lo, hi], levels, -1.0, 2.0, 0).unwrap();
            prop_assert!(t.tokens()[0] <= t.tokens()[1]);
            prop_assert!((t.tokens()[1] as usize) < levels);
        }
    }
}
