//! Run-length mask wire format: rows concatenated, runs of equal class ids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Mask;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: usize,
    pub height: usize,
    /// `[value, length]` pairs; lengths are positive.
    pub runs: Vec<[u32; 2]>,
}

pub fn encode_values(width: usize, height: usize, values: &[u8]) -> RleMask {
    let mut runs: Vec<[u32; 2]> = Vec::new();
    for &v in values {
        match runs.last_mut() {
            Some(run) if run[0] == v as u32 => run[1] += 1,
            _ => runs.push([v as u32, 1]),
        }
    }
    RleMask {
        width,
        height,
        runs,
    }
}

pub fn encode(mask: &Mask) -> RleMask {
    encode_values(mask.width(), mask.height(), mask.data())
}

/// Expands the runs; the total length must equal `width * height`.
pub fn decode_values(rle: &RleMask) -> Result<Vec<u8>> {
    let total = rle.width * rle.height;
    let mut out = Vec::with_capacity(total);
    for &[value, len] in &rle.runs {
        if len == 0 {
            return Err(Error::Format {
                what: "rle mask",
                reason: "zero-length run".into(),
            });
        }
        let value = u8::try_from(value).map_err(|_| Error::Format {
            what: "rle mask",
            reason: format!("run value {value} exceeds u8"),
        })?;
        if out.len() + len as usize > total {
            return Err(Error::Format {
                what: "rle mask",
                reason: "runs exceed width*height".into(),
            });
        }
        out.extend(std::iter::repeat_n(value, len as usize));
    }
    if out.len() != total {
        return Err(Error::Format {
            what: "rle mask",
            reason: format!("runs cover {} of {} pixels", out.len(), total),
        });
    }
    Ok(out)
}

pub fn decode(rle: &RleMask) -> Result<Mask> {
    Mask::from_vec(rle.width, rle.height, decode_values(rle)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn merges_adjacent_equal_values_across_rows() {
        let m = Mask::from_vec(3, 2, vec![0, 0, 1, 1, 1, 0]).unwrap();
        let rle = encode(&m);
        assert_eq!(rle.runs, vec![[0, 2], [1, 3], [0, 1]]);
        assert_eq!(decode(&rle).unwrap(), m);
    }

    #[test]
    fn rejects_short_and_long_runs() {
        let short = RleMask {
            width: 2,
            height: 2,
            runs: vec![[0, 3]],
        };
        assert!(decode(&short).is_err());
        let long = RleMask {
            width: 2,
            height: 2,
            runs: vec![[0, 5]],
        };
        assert!(decode(&long).is_err());
        let zero = RleMask {
            width: 1,
            height: 1,
            runs: vec![[0, 0], [1, 1]],
        };
        assert!(decode(&zero).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_identity(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            let mut rng = crate::rng::SplitMix64::new(seed);
            let data: Vec<u8> = (0..w * h).map(|_| rng.below(7) as u8).collect();
            let m = Mask::from_vec(w, h, data).unwrap();
            prop_assert_eq!(decode(&encode(&m)).unwrap(), m);
        }
    }
}
