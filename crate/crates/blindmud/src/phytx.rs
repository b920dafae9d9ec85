//! Per-user transmit chain: payload assembly, BPSK mapping, and symbol-level
//! spreading onto spread units.

use num_complex::Complex64;
use thiserror::Error;

use crate::codec::{self, CodecError};
use crate::pool::SpreadSequence;

#[derive(Debug, Error, PartialEq)]
pub enum TxError {
    #[error("spreading factor {0} unsupported (expected 2, 4 or 8)")]
    BadSpreadingFactor(usize),
    #[error("{units} spread units insufficient for spreading factor {sf} (need at least {min})")]
    TooFewSpreadUnits { units: usize, sf: usize, min: usize },
    #[error("payload must be {expected} bits for this geometry, got {got}")]
    PayloadSizeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Frame geometry: one coded BPSK symbol per spread unit, `spread_units`
/// units per frame, each occupying `spreading_factor` samples under one
/// coherent channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ResourceGeometry {
    spreading_factor: usize,
    spread_units: usize,
}

impl ResourceGeometry {
    /// Covariance estimation needs a healthy number of samples per dimension.
    pub const MIN_UNITS_PER_SF: usize = 8;

    pub fn new(spreading_factor: usize, spread_units: usize) -> Result<Self, TxError> {
        if !matches!(spreading_factor, 2 | 4 | 8) {
            return Err(TxError::BadSpreadingFactor(spreading_factor));
        }
        let min = Self::MIN_UNITS_PER_SF * spreading_factor;
        if spread_units < min {
            return Err(TxError::TooFewSpreadUnits {
                units: spread_units,
                sf: spreading_factor,
                min,
            });
        }
        Ok(Self {
            spreading_factor,
            spread_units,
        })
    }

    pub fn spreading_factor(&self) -> usize {
        self.spreading_factor
    }

    pub fn spread_units(&self) -> usize {
        self.spread_units
    }

    /// Payload bits that exactly fill the frame after CRC, termination and
    /// rate-1/2 encoding.
    pub fn payload_len(&self) -> usize {
        codec::info_len(self.spread_units) - codec::CRC_LEN
    }
}

/// A stream of BPSK symbols, one per spread unit.
#[derive(Debug, Clone, PartialEq)]
pub struct BpskSymbols(Vec<f64>);

impl BpskSymbols {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|s| -s).collect())
    }
}

/// Maps bits to antipodal symbols: 0 -> +1, 1 -> -1.
pub fn bpsk_map(bits: &[u8]) -> BpskSymbols {
    BpskSymbols(
        bits.iter()
            .map(|&b| {
                debug_assert!(b <= 1);
                1.0 - 2.0 * b as f64
            })
            .collect(),
    )
}

/// Hard sign demap, the inverse of `bpsk_map` on clean symbols.
pub fn bpsk_demap(symbols: &BpskSymbols) -> Vec<u8> {
    symbols.0.iter().map(|&s| if s < 0.0 { 1 } else { 0 }).collect()
}

/// A spread frame: column `i` is the user's sequence scaled by symbol `i`.
/// Samples are stored column-major so each spread unit is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct TxFrame {
    spreading_factor: usize,
    units: usize,
    data: Vec<Complex64>,
    pool_index: usize,
}

impl TxFrame {
    pub fn spreading_factor(&self) -> usize {
        self.spreading_factor
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn pool_index(&self) -> usize {
        self.pool_index
    }

    pub fn unit(&self, i: usize) -> &[Complex64] {
        let l = self.spreading_factor;
        &self.data[i * l..(i + 1) * l]
    }

    /// The frame flattened in unit-major order, as used by the joint
    /// channel-estimation solver.
    pub fn samples(&self) -> &[Complex64] {
        &self.data
    }

    pub fn energy(&self) -> f64 {
        crate::cplx::norm_sq(&self.data)
    }
}

/// Spreads a symbol stream with a unit-norm sequence.
pub fn spread(symbols: &BpskSymbols, sequence: &SpreadSequence) -> TxFrame {
    let l = sequence.spreading_factor();
    let mut data = Vec::with_capacity(l * symbols.len());
    for &s in symbols.values() {
        data.extend(sequence.elements().iter().map(|c| c * s));
    }
    TxFrame {
        spreading_factor: l,
        units: symbols.len(),
        data,
        pool_index: sequence.pool_index(),
    }
}

/// Full transmit chain: embed the sequence index, attach the CRC, encode,
/// map to BPSK and spread. Deterministic in its inputs.
pub fn build_transmission(
    payload: &[u8],
    sequence: &SpreadSequence,
    geometry: &ResourceGeometry,
    pool_size: usize,
) -> Result<TxFrame, TxError> {
    if payload.len() != geometry.payload_len() {
        return Err(TxError::PayloadSizeMismatch {
            expected: geometry.payload_len(),
            got: payload.len(),
        });
    }
    let mut bits = payload.to_vec();
    codec::embed_sequence_index(&mut bits, sequence.pool_index(), pool_size)?;
    let coded = codec::fec_encode(&codec::crc_attach(&bits));
    debug_assert_eq!(coded.len(), geometry.spread_units());
    Ok(spread(&bpsk_map(&coded), sequence))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::musa_pool_sf4;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn geometry_validation() {
        assert!(ResourceGeometry::new(4, 192).is_ok());
        assert!(ResourceGeometry::new(8, 192).is_ok());
        assert!(matches!(
            ResourceGeometry::new(3, 192),
            Err(TxError::BadSpreadingFactor(3))
        ));
        assert!(matches!(
            ResourceGeometry::new(8, 32),
            Err(TxError::TooFewSpreadUnits { .. })
        ));
    }

    #[test]
    fn default_geometry_payload() {
        let g = ResourceGeometry::new(4, 192).unwrap();
        assert_eq!(g.payload_len(), 74);
    }

    #[test]
    fn bpsk_mapping() {
        let s = bpsk_map(&[0, 1, 0]);
        assert_eq!(s.values(), &[1.0, -1.0, 1.0]);
        assert!(bpsk_map(&[0; 16]).values().iter().all(|&v| v == 1.0));
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let bits: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2u8)).collect();
        assert_eq!(bpsk_demap(&bpsk_map(&bits)), bits);
    }

    #[test]
    fn spread_single_symbols() {
        let pool = musa_pool_sf4();
        // Row 4 is all ones; +1 and -1 symbols give the sequence and its
        // negation.
        let seq = pool.sequence(3);
        let plus = spread(&BpskSymbols(vec![1.0]), seq);
        let minus = spread(&BpskSymbols(vec![-1.0]), seq);
        for k in 0..4 {
            assert_relative_eq!(plus.unit(0)[k].re, 0.5, epsilon = 1e-15);
            assert_relative_eq!(minus.unit(0)[k].re, -0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn spread_is_linear_in_symbols() {
        let pool = musa_pool_sf4();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let bits: Vec<u8> = (0..32).map(|_| rng.gen_range(0..2u8)).collect();
        let s = bpsk_map(&bits);
        let f = spread(&s, pool.sequence(17));
        let g = spread(&s.negated(), pool.sequence(17));
        for (a, b) in f.samples().iter().zip(g.samples()) {
            assert_eq!(*a, -b);
        }
    }

    #[test]
    fn frame_columns_unit_norm_and_energy() {
        let pool = musa_pool_sf4();
        let geometry = ResourceGeometry::new(4, 192).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let payload: Vec<u8> = (0..geometry.payload_len())
            .map(|_| rng.gen_range(0..2u8))
            .collect();
        let frame = build_transmission(&payload, pool.sequence(9), &geometry, pool.len()).unwrap();
        assert_eq!(frame.units(), 192);
        for i in 0..frame.units() {
            assert_relative_eq!(crate::cplx::norm_sq(frame.unit(i)), 1.0, epsilon = 1e-12);
        }
        assert_relative_eq!(frame.energy(), 192.0, epsilon = 1e-9);
    }

    #[test]
    fn build_transmission_checks_payload_size() {
        let pool = musa_pool_sf4();
        let geometry = ResourceGeometry::new(4, 192).unwrap();
        let err = build_transmission(&[0u8; 10], pool.sequence(0), &geometry, 64).unwrap_err();
        assert!(matches!(err, TxError::PayloadSizeMismatch { expected: 74, got: 10 }));
    }

    #[test]
    fn different_indices_differ_everywhere() {
        // Two frames from different sequences differ in every column
        // direction (no two pool sequences are parallel).
        let pool = musa_pool_sf4();
        let geometry = ResourceGeometry::new(4, 192).unwrap();
        let payload = vec![0u8; 74];
        let a = build_transmission(&payload, pool.sequence(5), &geometry, 64).unwrap();
        let b = build_transmission(&payload, pool.sequence(6), &geometry, 64).unwrap();
        for i in 0..a.units() {
            let corr = crate::cplx::dot_conj(a.unit(i), b.unit(i)).norm();
            assert!(corr < 1.0 - 1e-6);
        }
    }

    #[test]
    fn build_transmission_regression_vector() {
        // Frozen fingerprint of the full chain on a fixed input; guards the
        // codec, mapper and spreader against silent convention drift.
        let pool = musa_pool_sf4();
        let geometry = ResourceGeometry::new(4, 192).unwrap();
        let mut payload = vec![0u8; 74];
        for k in (0..74).step_by(3) {
            payload[k] = 1;
        }
        let frame = build_transmission(&payload, pool.sequence(33), &geometry, 64).unwrap();
        let fingerprint: f64 = frame
            .samples()
            .iter()
            .enumerate()
            .map(|(k, v)| (k as f64 + 1.0).sqrt() * (v.re + 0.5 * v.im))
            .sum();
        assert_relative_eq!(fingerprint, -11.067980548181177, epsilon = 1e-9);
    }
}
