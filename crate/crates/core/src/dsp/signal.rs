use std::sync::Arc;

use num_complex::Complex64;

use super::Constellation;
use crate::error::{invalid, Result};
use crate::rng::SeededRng;

/// Symbols drawn from a constellation, kept alongside their point indices.
#[derive(Clone, Debug)]
pub struct SymbolFrame {
    pub symbols: Vec<Complex64>,
    pub indices: Vec<u16>,
    pub constellation: Arc<Constellation>,
}

impl SymbolFrame {
    pub fn from_indices(indices: Vec<u16>, constellation: Arc<Constellation>) -> Self {
        let symbols = indices
            .iter()
            .map(|&i| constellation.point(i as usize))
            .collect();
        Self {
            symbols,
            indices,
            constellation,
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            symbols: self.symbols[range.clone()].to_vec(),
            indices: self.indices[range].to_vec(),
            constellation: self.constellation.clone(),
        }
    }
}

/// Complex samples at an integer number of samples per symbol.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSignal {
    pub samples: Vec<Complex64>,
    pub sps: usize,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>, sps: usize) -> Self {
        assert!(sps >= 1, "samples per symbol must be positive");
        Self { samples, sps }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn scaled(mut self, k: f64) -> Self {
        self.samples.iter_mut().for_each(|s| *s *= k);
        self
    }
}

pub fn draw_symbols(c: &Arc<Constellation>, n: usize, rng: &mut SeededRng) -> Result<SymbolFrame> {
    if n == 0 {
        return Err(invalid("symbol count must be positive"));
    }
    let m = c.order();
    let indices = (0..n).map(|_| rng.index(m) as u16).collect();
    Ok(SymbolFrame::from_indices(indices, c.clone()))
}
