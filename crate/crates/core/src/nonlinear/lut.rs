//! Fixed-point lookup tables for `1/sqrt`, GELU and `2^r`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::MAX_LUT_BITS;
use crate::error::{Error, Result};
use crate::mxint::rounding::Scaled;

/// Which function a table approximates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LutKind {
    InvSqrt,
    Gelu,
    Pow2,
}

impl LutKind {
    pub fn name(self) -> &'static str {
        match self {
            LutKind::InvSqrt => "inv_sqrt",
            LutKind::Gelu => "gelu",
            LutKind::Pow2 => "pow2",
        }
    }
}

impl std::str::FromStr for LutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inv_sqrt" | "inv-sqrt" | "layernorm" => Ok(LutKind::InvSqrt),
            "gelu" => Ok(LutKind::Gelu),
            "pow2" | "softmax" => Ok(LutKind::Pow2),
            other => Err(Error::Config(format!("unknown LUT kind `{other}`"))),
        }
    }
}

/// Where inside each bucket the reference function is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPoint {
    #[default]
    LeftEdge,
    Midpoint,
}

/// Extra fractional bits an entry carries beyond its index width.
pub const ENTRY_GUARD_BITS: u32 = 4;

/// A table of `2^index_bits` fixed-point entries over `[lo, hi)`.
///
/// Entries are two's-complement integers with `frac_bits` fractional bits.
#[derive(Debug, Clone, PartialEq)]
pub struct LutTable {
    kind: LutKind,
    index_bits: u32,
    domain: (f64, f64),
    frac_bits: u32,
    eval_point: EvalPoint,
    entries: Vec<i64>,
}

impl LutTable {
    /// `1/sqrt(v)` over `[0.5, 2)`.
    ///
    /// The table is addressed by the exponent parity and the top
    /// `index_bits - 1` mantissa bits of a normalized input: the lower half
    /// covers `[0.5, 1)` (odd exponents, where the mantissa is halved) and the
    /// upper half covers `[1, 2)` (even exponents). Each half is uniform.
    pub fn inv_sqrt(index_bits: u32) -> Result<Self> {
        Self::inv_sqrt_with(index_bits, EvalPoint::LeftEdge)
    }

    pub fn inv_sqrt_with(index_bits: u32, eval_point: EvalPoint) -> Result<Self> {
        check_bits(index_bits)?;
        let half = 1usize << (index_bits - 1);
        let points: Vec<f64> = (0..2 * half)
            .map(|i| {
                let (base, step, j) = if i < half {
                    (0.5, 0.5 / half as f64, i)
                } else {
                    (1.0, 1.0 / half as f64, i - half)
                };
                base + step * (j as f64 + eval_offset(eval_point))
            })
            .collect();
        Ok(Self::tabulate(
            LutKind::InvSqrt,
            index_bits,
            (0.5, 2.0),
            eval_point,
            &points,
            |v| 1.0 / v.sqrt(),
        ))
    }

    /// GELU over `[-a, a)` with a uniform step of `2a / 2^index_bits`.
    pub fn gelu(index_bits: u32, a: f64) -> Result<Self> {
        Self::gelu_with(index_bits, a, EvalPoint::LeftEdge)
    }

    pub fn gelu_with(index_bits: u32, a: f64, eval_point: EvalPoint) -> Result<Self> {
        check_bits(index_bits)?;
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::Config(format!(
                "GELU domain must be positive, got {a}"
            )));
        }
        let n = 1usize << index_bits;
        let step = 2.0 * a / n as f64;
        let points: Vec<f64> = (0..n)
            .map(|i| -a + step * (i as f64 + eval_offset(eval_point)))
            .collect();
        Ok(Self::tabulate(
            LutKind::Gelu,
            index_bits,
            (-a, a),
            eval_point,
            &points,
            gelu_exact,
        ))
    }

    /// `2^r` over `[0, 1)`.
    pub fn pow2(index_bits: u32) -> Result<Self> {
        Self::pow2_with(index_bits, EvalPoint::LeftEdge)
    }

    pub fn pow2_with(index_bits: u32, eval_point: EvalPoint) -> Result<Self> {
        check_bits(index_bits)?;
        let n = 1usize << index_bits;
        let points: Vec<f64> = (0..n)
            .map(|i| (i as f64 + eval_offset(eval_point)) / n as f64)
            .collect();
        Ok(Self::tabulate(
            LutKind::Pow2,
            index_bits,
            (0.0, 1.0),
            eval_point,
            &points,
            f64::exp2,
        ))
    }

    fn tabulate(
        kind: LutKind,
        index_bits: u32,
        domain: (f64, f64),
        eval_point: EvalPoint,
        points: &[f64],
        f: impl Fn(f64) -> f64,
    ) -> Self {
        let frac_bits = index_bits + ENTRY_GUARD_BITS;
        let scale = (frac_bits as f64).exp2();
        let entries = points
            .iter()
            .map(|&p| (f(p) * scale).round_ties_even() as i64)
            .collect();
        Self {
            kind,
            index_bits,
            domain,
            frac_bits,
            eval_point,
            entries,
        }
    }

    /// Builds a table from explicit raw entries, e.g. a fault-injection fixture.
    pub fn from_raw(
        kind: LutKind,
        index_bits: u32,
        domain: (f64, f64),
        frac_bits: u32,
        eval_point: EvalPoint,
        entries: Vec<i64>,
    ) -> Result<Self> {
        check_bits(index_bits)?;
        if entries.len() != 1 << index_bits {
            return Err(Error::Config(format!(
                "{} entries for a {index_bits}-bit table",
                entries.len()
            )));
        }
        Ok(Self {
            kind,
            index_bits,
            domain,
            frac_bits,
            eval_point,
            entries,
        })
    }

    /// A copy with `delta` raw units added to every entry.
    pub fn with_entry_offset(&self, delta: i64) -> Self {
        Self {
            entries: self.entries.iter().map(|e| e + delta).collect(),
            ..self.clone()
        }
    }

    pub fn kind(&self) -> LutKind {
        self.kind
    }

    pub fn index_bits(&self) -> u32 {
        self.index_bits
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn eval_point(&self) -> EvalPoint {
        self.eval_point
    }

    pub fn entries(&self) -> &[i64] {
        &self.entries
    }

    pub fn raw(&self, index: usize) -> i64 {
        self.entries[index]
    }

    /// Entry `index` as an exact dyadic value.
    pub fn entry(&self, index: usize) -> Scaled {
        Scaled::new(self.entries[index] as i128, -(self.frac_bits as i32))
    }

    pub fn entry_f64(&self, index: usize) -> f64 {
        self.entries[index] as f64 / (self.frac_bits as f64).exp2()
    }

    /// Sample point of entry `index`.
    pub fn eval_point_of(&self, index: usize) -> f64 {
        let off = eval_offset(self.eval_point);
        let n = self.entries.len();
        match self.kind {
            LutKind::InvSqrt => {
                let half = n / 2;
                if index < half {
                    0.5 + 0.5 * (index as f64 + off) / half as f64
                } else {
                    1.0 + (index - half) as f64 / half as f64 + off / half as f64
                }
            }
            LutKind::Gelu | LutKind::Pow2 => {
                let (lo, hi) = self.domain;
                lo + (hi - lo) * (index as f64 + off) / n as f64
            }
        }
    }

    /// Width of one stored word: sign, integer and fractional bits.
    pub fn word_bits(&self) -> u32 {
        let widest = self
            .entries
            .iter()
            .map(|&e| {
                if e >= 0 {
                    64 - e.leading_zeros()
                } else {
                    64 - (!e).leading_zeros()
                }
            })
            .max()
            .unwrap_or(0);
        (widest + 1).max(self.frac_bits + 2)
    }

    /// One entry per line as fixed-width lowercase two's-complement hex,
    /// suitable for `$readmemh`-style memory initialization.
    pub fn to_hex(&self) -> String {
        let bits = self.word_bits();
        let digits = bits.div_ceil(4) as usize;
        let mask: u64 = if bits >= 64 {
            u64::MAX
        } else {
            (1u64 << bits) - 1
        };
        let mut out = String::with_capacity(self.entries.len() * (digits + 1));
        for &e in &self.entries {
            let _ = writeln!(out, "{:0digits$x}", (e as u64) & mask);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,eval_point,raw,value\n");
        for i in 0..self.entries.len() {
            let _ = writeln!(
                out,
                "{i},{},{},{}",
                self.eval_point_of(i),
                self.entries[i],
                self.entry_f64(i)
            );
        }
        out
    }
}

fn check_bits(index_bits: u32) -> Result<()> {
    if (1..=MAX_LUT_BITS).contains(&index_bits) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "LUT index width {index_bits} outside 1..={MAX_LUT_BITS}"
        )))
    }
}

fn eval_offset(p: EvalPoint) -> f64 {
    match p {
        EvalPoint::LeftEdge => 0.0,
        EvalPoint::Midpoint => 0.5,
    }
}

/// `x * Phi(x)` with the error function from `libm`.
pub fn gelu_exact(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn build_inv_sqrt_lut(index_bits: u32) -> Result<LutTable> {
    LutTable::inv_sqrt(index_bits)
}

pub fn build_gelu_lut(index_bits: u32, a: f64) -> Result<LutTable> {
    LutTable::gelu(index_bits, a)
}

pub fn build_pow2_lut(index_bits: u32) -> Result<LutTable> {
    LutTable::pow2(index_bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inv_sqrt_table_layout() {
        let lut = build_inv_sqrt_lut(5).unwrap();
        assert_eq!(lut.len(), 32);
        assert_eq!(lut.eval_point_of(0), 0.5);
        assert_eq!(lut.eval_point_of(16), 1.0);
        assert_eq!(lut.entry_f64(16), 1.0);
        assert_eq!(
            lut.entry_f64(0),
            (std::f64::consts::SQRT_2 * 512.0).round() / 512.0
        );
        assert!(lut.eval_point_of(31) < 2.0);
    }

    #[test]
    fn gelu_table_layout() {
        let lut = build_gelu_lut(5, 3.0).unwrap();
        assert_eq!(lut.len(), 32);
        assert_eq!(lut.eval_point_of(0), -3.0);
        assert_eq!(lut.eval_point_of(16), 0.0);
        assert_eq!(lut.raw(16), 0);
    }

    #[test]
    fn pow2_table_layout() {
        let lut = build_pow2_lut(2).unwrap();
        assert_eq!(lut.len(), 4);
        assert_eq!(lut.entry_f64(0), 1.0);
        assert_eq!(lut.eval_point_of(2), 0.5);
    }

    #[test]
    fn pow2_hex_dump() {
        let lut = build_pow2_lut(2).unwrap();
        // 6 fractional bits: 64, 76, 91, 108.
        assert_eq!(lut.to_hex(), "40\n4c\n5b\n6c\n");
    }

    #[test]
    fn negative_entries_are_twos_complement() {
        let lut = build_gelu_lut(3, 3.0).unwrap();
        let first = lut.to_hex().lines().next().unwrap().to_string();
        let bits = lut.word_bits();
        let raw = u64::from_str_radix(&first, 16).unwrap();
        let sign_extended = ((raw << (64 - bits)) as i64) >> (64 - bits);
        assert_eq!(sign_extended, lut.raw(0));
        assert!(lut.raw(0) < 0);
    }

    #[test]
    fn rejects_zero_bits_and_bad_domain() {
        assert!(build_pow2_lut(0).is_err());
        assert!(build_gelu_lut(4, 0.0).is_err());
        assert!(LutTable::from_raw(
            LutKind::Pow2,
            2,
            (0.0, 1.0),
            6,
            EvalPoint::LeftEdge,
            vec![1; 3]
        )
        .is_err());
    }

    #[test]
    fn kind_names_parse() {
        for k in [LutKind::InvSqrt, LutKind::Gelu, LutKind::Pow2] {
            assert_eq!(k.name().parse::<LutKind>().unwrap(), k);
        }
        assert!("tanh".parse::<LutKind>().is_err());
    }
}
