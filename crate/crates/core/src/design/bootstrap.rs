//! Simple and moving block bootstrap of pooled residuals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::ResidualSeries;

const MODULE: &str = "bootstrap-design";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ResamplingMode {
    SingleObservation,
    MovingBlock { block_length: usize },
}

/// Pooled gap-free residual segments and the valid draw positions.
#[derive(Debug, Clone)]
pub struct BootstrapSource {
    mode: ResamplingMode,
    segments: Vec<Vec<f64>>,
    /// `(segment, start)` of every admissible block, or every observation
    /// for single-observation draws.
    starts: Vec<(u32, u32)>,
}

impl BootstrapSource {
    /// Builds a source from already gap-free segments.
    pub fn from_segments(segments: Vec<Vec<f64>>, mode: ResamplingMode) -> Result<Self> {
        if segments.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::data(MODULE, "bootstrap source contains non-finite residuals"));
        }
        let width = match mode {
            ResamplingMode::SingleObservation => 1,
            ResamplingMode::MovingBlock { block_length: 0 } => {
                return Err(Error::config(MODULE, "block length must be at least 1"));
            }
            ResamplingMode::MovingBlock { block_length } => block_length,
        };
        let segments: Vec<Vec<f64>> = segments.into_iter().filter(|s| s.len() >= width).collect();
        let mut starts = Vec::new();
        for (i, s) in segments.iter().enumerate() {
            starts.extend((0..=s.len() - width).map(|j| (i as u32, j as u32)));
        }
        if starts.is_empty() {
            return Err(match mode {
                ResamplingMode::SingleObservation => Error::data(MODULE, "bootstrap source has no observations"),
                ResamplingMode::MovingBlock { block_length } => Error::config(
                    MODULE,
                    format!("no gap-free residual segment is at least as long as the block length {block_length}"),
                ),
            });
        }
        Ok(BootstrapSource { mode, segments, starts })
    }

    /// Builds a source from residual series, splitting at gaps.
    pub fn from_residuals(series: &[ResidualSeries], mode: ResamplingMode) -> Result<Self> {
        let segments: Vec<Vec<f64>> = series.iter().flat_map(|s| s.segments()).collect();
        let longest = segments.iter().map(Vec::len).max().unwrap_or(0);
        Self::from_segments(segments, mode).map_err(|e| match (e, mode) {
            (Error::Config { .. }, ResamplingMode::MovingBlock { block_length }) => Error::config(
                MODULE,
                format!(
                    "block length {block_length} exceeds the longest gap-free residual segment ({longest}); \
                     lower the block length or supply longer records"
                ),
            ),
            (e, _) => e,
        })
    }

    pub fn mode(&self) -> ResamplingMode {
        self.mode
    }

    pub fn segments(&self) -> &[Vec<f64>] {
        &self.segments
    }

    pub fn n_starts(&self) -> usize {
        self.starts.len()
    }

    fn block(&self, draw: usize) -> &[f64] {
        let (s, j) = self.starts[draw];
        let seg = &self.segments[s as usize];
        let j = j as usize;
        match self.mode {
            ResamplingMode::SingleObservation => &seg[j..j + 1],
            ResamplingMode::MovingBlock { block_length } => &seg[j..j + block_length],
        }
    }

    /// Concatenates the blocks at the given start indices (into the list of
    /// valid starts) and truncates to `length`.
    pub fn resample_with_draws(&self, length: usize, draws: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(length);
        for &d in draws {
            if out.len() >= length {
                break;
            }
            if d >= self.starts.len() {
                return Err(Error::config(MODULE, format!("draw {d} out of range 0..{}", self.starts.len())));
            }
            out.extend_from_slice(self.block(d));
        }
        if out.len() < length {
            return Err(Error::config(MODULE, format!("{} draws cover only {} of {length} samples", draws.len(), out.len())));
        }
        out.truncate(length);
        Ok(out)
    }

    pub fn resample<R: Rng + ?Sized>(&self, length: usize, rng: &mut R) -> Vec<f64> {
        self.stream(rng).take(length).collect()
    }

    /// Endless bootstrap series, generated a block at a time.
    pub fn stream<'a, R: Rng + ?Sized>(&'a self, rng: &'a mut R) -> BootstrapStream<'a, R> {
        BootstrapStream { source: self, rng, block: &[] }
    }
}

pub struct BootstrapStream<'a, R: Rng + ?Sized> {
    source: &'a BootstrapSource,
    rng: &'a mut R,
    block: &'a [f64],
}

impl<R: Rng + ?Sized> Iterator for BootstrapStream<'_, R> {
    type Item = f64;

    #[inline]
    fn next(&mut self) -> Option<f64> {
        if self.block.is_empty() {
            let d = self.rng.random_range(0..self.source.starts.len());
            self.block = self.source.block(d);
        }
        let (first, rest) = self.block.split_first()?;
        self.block = rest;
        Some(*first)
    }
}
