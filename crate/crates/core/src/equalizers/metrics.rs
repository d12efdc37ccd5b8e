use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::SymbolFrame;
use crate::error::{Error, Result};

/// Ambiguities resolved before counting symbol errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignSearch {
    None,
    Phase4,
    Phase4Delay { max_delay: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment {
    pub ser: f64,
    pub errors: usize,
    pub compared: usize,
    /// `decided[k + delay]` is compared against `truth[k]`.
    pub delay: isize,
    pub rotation: Complex64,
}

const ROTATIONS: [Complex64; 4] = [
    Complex64::new(1.0, 0.0),
    Complex64::new(0.0, 1.0),
    Complex64::new(-1.0, 0.0),
    Complex64::new(0.0, -1.0),
];

fn count_errors(decided: &SymbolFrame, truth: &SymbolFrame, delay: isize, rot: Complex64) -> (usize, usize) {
    let c = &decided.constellation;
    let n = truth.len() as isize;
    let lo = 0.max(-delay);
    let hi = n.min(decided.len() as isize - delay);
    let mut errors = 0;
    for k in lo..hi {
        let d = decided.indices[(k + delay) as usize] as usize;
        let idx = if rot == ROTATIONS[0] { d } else { c.nearest(c.point(d) * rot) };
        if idx != truth.indices[k as usize] as usize {
            errors += 1;
        }
    }
    (errors, (hi - lo).max(0) as usize)
}

/// Symbol error rate minimized over the requested ambiguity set. The
/// rotation multiplies the decisions (square QAM is closed under it).
pub fn align_and_ser(decided: &SymbolFrame, truth: &SymbolFrame, search: AlignSearch) -> Result<Alignment> {
    if decided.is_empty() || truth.is_empty() {
        return Err(Error::EmptyFrame);
    }
    let (rots, max_delay): (&[Complex64], isize) = match search {
        AlignSearch::None => (&ROTATIONS[..1], 0),
        AlignSearch::Phase4 => (&ROTATIONS[..], 0),
        AlignSearch::Phase4Delay { max_delay } => (&ROTATIONS[..], max_delay as isize),
    };
    let mut best: Option<Alignment> = None;
    for delay in -max_delay..=max_delay {
        for &rot in rots {
            let (errors, compared) = count_errors(decided, truth, delay, rot);
            if compared == 0 {
                continue;
            }
            let ser = errors as f64 / compared as f64;
            if best.is_none_or(|b| ser < b.ser) {
                best = Some(Alignment { ser, errors, compared, delay, rotation: rot });
            }
        }
    }
    best.ok_or(Error::EmptyFrame)
}

/// Errors under a known delay and rotation.
pub fn ser_fixed(decided: &SymbolFrame, truth: &SymbolFrame, delay: isize, rotation: Complex64) -> Result<Alignment> {
    let (errors, compared) = count_errors(decided, truth, delay, rotation);
    if compared == 0 {
        return Err(Error::EmptyFrame);
    }
    Ok(Alignment { ser: errors as f64 / compared as f64, errors, compared, delay, rotation })
}

/// Error vector magnitude (RMS, relative to the reference RMS).
pub fn evm(x: &[Complex64], reference: &[Complex64]) -> f64 {
    let err: f64 = x.iter().zip(reference).map(|(a, b)| (a - b).norm_sqr()).sum();
    let pow: f64 = reference.iter().map(|b| b.norm_sqr()).sum();
    (err / pow).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{draw_symbols, make_qam};
    use crate::rng::SeededRng;
    use std::sync::Arc;

    fn frame(seed: u64, n: usize) -> SymbolFrame {
        let c = Arc::new(make_qam(16).unwrap());
        draw_symbols(&c, n, &mut SeededRng::new(seed)).unwrap()
    }

    #[test]
    fn identical_frames() {
        let f = frame(1, 100);
        let a = align_and_ser(&f, &f, AlignSearch::None).unwrap();
        assert_eq!(a.ser, 0.0);
    }

    #[test]
    fn rotated_frame_resolved() {
        let f = frame(2, 200);
        let c = f.constellation.clone();
        let rotated: Vec<u16> =
            f.symbols.iter().map(|&s| c.nearest(s * Complex64::new(0.0, 1.0)) as u16).collect();
        let r = SymbolFrame::from_indices(rotated, c);
        assert!(align_and_ser(&r, &f, AlignSearch::None).unwrap().ser > 0.5);
        let a = align_and_ser(&r, &f, AlignSearch::Phase4).unwrap();
        assert_eq!(a.ser, 0.0);
        // decisions are j·truth, so undoing them needs −j
        assert_eq!(a.rotation, Complex64::new(0.0, -1.0));
    }

    #[test]
    fn delayed_frame_resolved() {
        let f = frame(3, 300);
        let shifted = f.slice(2..300);
        let a = align_and_ser(&shifted, &f, AlignSearch::Phase4Delay { max_delay: 3 }).unwrap();
        assert_eq!(a.ser, 0.0);
        assert_eq!(a.delay, -2);
    }

    #[test]
    fn single_error_counts() {
        let f = frame(4, 10_000);
        let mut idx = f.indices.clone();
        idx[17] = (idx[17] + 1) % 16;
        let g = SymbolFrame::from_indices(idx, f.constellation.clone());
        let a = align_and_ser(&g, &f, AlignSearch::None).unwrap();
        assert_eq!(a.errors, 1);
        assert!((a.ser - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn empty_frames_error() {
        let f = frame(5, 4);
        let e = f.slice(0..0);
        assert!(matches!(align_and_ser(&e, &f, AlignSearch::None), Err(Error::EmptyFrame)));
    }
}
