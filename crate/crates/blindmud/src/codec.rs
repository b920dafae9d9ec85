//! Bit-level coding chain: CRC-16 attach/check, a rate-1/2 tail-terminated
//! convolutional code with soft Viterbi decoding, and the embedding of the
//! transmitter's sequence index into the payload head.
//!
//! Bits are represented as `u8` values 0/1 throughout.

use thiserror::Error;

/// CRC polynomial x^16 + x^12 + x^5 + 1 (CCITT), zero initial register.
pub const CRC_POLY: u16 = 0x1021;
pub const CRC_LEN: usize = 16;

/// Constraint length of the convolutional code.
pub const CONSTRAINT_LEN: usize = 7;
/// Tail bits appended to drive the encoder back to the zero state.
pub const TAIL_LEN: usize = CONSTRAINT_LEN - 1;
/// Generators 133 and 171 (octal), newest input in the LSB.
const GENERATORS: [u32; 2] = [0o133, 0o171];
const NUM_STATES: usize = 1 << TAIL_LEN;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("sequence index {index} out of range for pool size {pool_size}")]
    IndexOutOfRange { index: usize, pool_size: usize },
    #[error("payload of {payload} bits cannot hold a {k_idx}-bit sequence index")]
    PayloadTooShort { payload: usize, k_idx: usize },
    #[error("soft stream length {got} is not a valid codeword length")]
    BadStreamLength { got: usize },
}

/// Bit-serial CRC-16 over an arbitrary-length bit message.
pub fn crc16(bits: &[u8]) -> u16 {
    let mut reg: u16 = 0;
    for &b in bits {
        debug_assert!(b <= 1);
        let top = ((reg >> 15) as u8) ^ b;
        reg <<= 1;
        if top != 0 {
            reg ^= CRC_POLY;
        }
    }
    reg
}

/// Appends the 16 CRC parity bits (MSB first) to the message.
pub fn crc_attach(bits: &[u8]) -> Vec<u8> {
    let parity = crc16(bits);
    let mut out = Vec::with_capacity(bits.len() + CRC_LEN);
    out.extend_from_slice(bits);
    for k in (0..CRC_LEN).rev() {
        out.push(((parity >> k) & 1) as u8);
    }
    out
}

/// Checks a message with trailing CRC parity.
pub fn crc_check(bits_with_crc: &[u8]) -> bool {
    if bits_with_crc.len() <= CRC_LEN {
        return false;
    }
    let (msg, parity) = bits_with_crc.split_at(bits_with_crc.len() - CRC_LEN);
    let mut expected = crc16(msg);
    for &b in parity {
        if ((expected >> 15) & 1) as u8 != b {
            return false;
        }
        expected <<= 1;
    }
    true
}

/// Rate-1/2 convolutional encoding with `TAIL_LEN` zero termination bits.
/// Output length is `2 * (bits.len() + TAIL_LEN)`.
pub fn fec_encode(bits: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 * (bits.len() + TAIL_LEN));
    let mut reg: u32 = 0;
    for &b in bits.iter().chain(std::iter::repeat(&0u8).take(TAIL_LEN)) {
        debug_assert!(b <= 1);
        reg = ((reg << 1) | b as u32) & 0x7F;
        for g in GENERATORS {
            out.push(((reg & g).count_ones() & 1) as u8);
        }
    }
    out
}

/// Number of coded bits produced for a given number of information bits.
pub fn coded_len(info_bits: usize) -> usize {
    2 * (info_bits + TAIL_LEN)
}

/// Information-bit capacity (payload + CRC) of a coded block of `coded` bits.
pub fn info_len(coded: usize) -> usize {
    coded / 2 - TAIL_LEN
}

/// Soft-input Viterbi decode of a tail-terminated rate-1/2 stream.
///
/// LLR convention: positive favors bit 0 (BPSK symbol +1). Returns the
/// decoded information bits (including any trailing CRC) together with the
/// CRC verdict.
pub fn fec_decode(llrs: &[f64]) -> Result<(Vec<u8>, bool), CodecError> {
    if llrs.len() % 2 != 0 || llrs.len() / 2 <= TAIL_LEN {
        return Err(CodecError::BadStreamLength { got: llrs.len() });
    }
    let steps = llrs.len() / 2;
    let info = steps - TAIL_LEN;

    // Per-transition coded bits are a pure function of (state, input); the
    // table is tiny so we rebuild it per call and keep the decoder stateless.
    let mut branch = [[0u8; 2]; NUM_STATES * 2];
    for state in 0..NUM_STATES {
        for input in 0..2u32 {
            let reg = ((state as u32) << 1) | input;
            for (g, slot) in GENERATORS.iter().zip(0..2) {
                branch[state * 2 + input as usize][slot] = ((reg & g).count_ones() & 1) as u8;
            }
        }
    }

    let mut metric = vec![f64::NEG_INFINITY; NUM_STATES];
    metric[0] = 0.0;
    let mut survivors: Vec<[u8; NUM_STATES]> = Vec::with_capacity(steps);

    for step in 0..steps {
        let l0 = llrs[2 * step];
        let l1 = llrs[2 * step + 1];
        let mut next = vec![f64::NEG_INFINITY; NUM_STATES];
        let mut chosen = [0u8; NUM_STATES];
        for state in 0..NUM_STATES {
            let base = metric[state];
            if base == f64::NEG_INFINITY {
                continue;
            }
            let max_input = if step < info { 1 } else { 0 };
            for input in 0..=max_input {
                let bits = branch[state * 2 + input];
                // Correlation metric: +llr/2 for bit 0, -llr/2 for bit 1,
                // with the constant factor dropped.
                let gain = if bits[0] == 0 { l0 } else { -l0 }
                    + if bits[1] == 0 { l1 } else { -l1 };
                let ns = ((state << 1) | input) & (NUM_STATES - 1);
                let cand = base + gain;
                if cand > next[ns] {
                    next[ns] = cand;
                    chosen[ns] = ((state >> (TAIL_LEN - 1)) as u8) << 1 | input as u8;
                }
            }
        }
        survivors.push(chosen);
        metric = next;
    }

    // Termination pins the final state to zero.
    let mut state = 0usize;
    let mut decoded = vec![0u8; steps];
    for step in (0..steps).rev() {
        let packed = survivors[step][state];
        let input = packed & 1;
        let oldest = (packed >> 1) as usize;
        decoded[step] = input;
        state = ((state >> 1) | (oldest << (TAIL_LEN - 1))) & (NUM_STATES - 1);
    }
    decoded.truncate(info);
    let pass = crc_check(&decoded);
    Ok((decoded, pass))
}

/// Writes `pool_index` into the first `k_idx` bits of the payload, MSB first.
pub fn embed_sequence_index(
    payload: &mut [u8],
    pool_index: usize,
    pool_size: usize,
) -> Result<(), CodecError> {
    let k_idx = index_bits(pool_size);
    if pool_index >= pool_size {
        return Err(CodecError::IndexOutOfRange {
            index: pool_index,
            pool_size,
        });
    }
    if payload.len() < k_idx {
        return Err(CodecError::PayloadTooShort {
            payload: payload.len(),
            k_idx,
        });
    }
    for k in 0..k_idx {
        payload[k] = ((pool_index >> (k_idx - 1 - k)) & 1) as u8;
    }
    Ok(())
}

/// Reads the sequence index back out of a decoded payload. Returns an error
/// if the embedded value does not name a pool entry (possible after a CRC
/// false pass).
pub fn extract_sequence_index(payload: &[u8], pool_size: usize) -> Result<usize, CodecError> {
    let k_idx = index_bits(pool_size);
    if payload.len() < k_idx {
        return Err(CodecError::PayloadTooShort {
            payload: payload.len(),
            k_idx,
        });
    }
    let mut index = 0usize;
    for &b in &payload[..k_idx] {
        index = (index << 1) | b as usize;
    }
    if index >= pool_size {
        return Err(CodecError::IndexOutOfRange {
            index,
            pool_size,
        });
    }
    Ok(index)
}

/// Bits reserved at the payload head for the sequence index.
pub fn index_bits(pool_size: usize) -> usize {
    (usize::BITS - (pool_size.max(1) - 1).leading_zeros()) as usize
}
