//! The blind receiver: sequence detection from the received sample
//! covariance, blind MMSE despreading, constellation-partition equalization,
//! bi-stream decoding and the codeword-level SIC loop.
//!
//! Nothing in this module reads a true channel, a true sequence choice or the
//! noise floor; the only inputs are the received frame and the public pool.

mod datapilot;
mod equalize;

pub use datapilot::{ls_channel_estimates, reconstruct_and_subtract, LsEstimates};
pub use equalize::{blind_equalize, hard_detection_sinr, Boundary, EqualizedStream};

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::channel::RxFrame;
use crate::cplx::{dot_conj, CovarianceAccumulator, HermitianMatrix, LinalgError};
use crate::codec;
use crate::phytx::{bpsk_map, spread, BpskSymbols, TxFrame};
use crate::pool::{SequencePool, SpreadSequence};

#[derive(Debug, Error)]
pub enum MudError {
    #[error("residual frame degenerate: {0}")]
    DegenerateResidual(LinalgError),
    #[error("joint channel estimation failed: {0}")]
    ChannelEstimation(LinalgError),
    #[error("frame has {units} spread units, need at least the spreading factor {sf}")]
    TooFewUnits { units: usize, sf: usize },
}

/// Detection metrics for every pool sequence, plus the covariance inverse
/// they were computed from (reused by the despreader).
#[derive(Debug, Clone)]
pub struct MetricScan {
    pub metrics: Vec<f64>,
    pub cov_inverse: HermitianMatrix,
}

/// Ranks every pool sequence by the quadratic form `c* R⁻¹ c` of the
/// residual's sample covariance. Low metric means the sequence direction
/// carries energy the MMSE filter cannot suppress, i.e. a likely active user.
pub fn compute_metrics(residual: &RxFrame, pool: &SequencePool) -> Result<MetricScan, MudError> {
    let sf = residual.spreading_factor();
    if residual.units() < sf {
        return Err(MudError::TooFewUnits {
            units: residual.units(),
            sf,
        });
    }
    let mut acc = CovarianceAccumulator::new(sf);
    for i in 0..residual.units() {
        acc.add(residual.unit(i));
    }
    let cov = acc.mean();
    let cov_inverse = cov
        .inverse(cov.default_ridge())
        .map_err(MudError::DegenerateResidual)?;
    let metrics = pool
        .iter()
        .map(|seq| cov_inverse.quadratic_form(seq.elements()))
        .collect();
    Ok(MetricScan {
        metrics,
        cov_inverse,
    })
}

/// The `n_cs` pool indices with the smallest metrics, ascending; ties break
/// toward the lower pool index.
pub fn select_candidates(metrics: &[f64], n_cs: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..metrics.len()).collect();
    order.sort_by(|&a, &b| {
        metrics[a]
            .partial_cmp(&metrics[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(n_cs.min(metrics.len()));
    order
}

/// A despread soft-symbol stream prior to equalization.
#[derive(Debug, Clone)]
pub struct UnequalizedStream {
    pub values: Vec<Complex64>,
    pub candidate_sequence: usize,
}

/// Applies the blind MMSE filter `c* R⁻¹` to every spread unit.
pub fn blind_mmse_despread(
    sequence: &SpreadSequence,
    cov_inverse: &HermitianMatrix,
    frame: &RxFrame,
) -> UnequalizedStream {
    let filter = cov_inverse.matvec(sequence.elements());
    let values = (0..frame.units())
        .map(|i| dot_conj(&filter, frame.unit(i)))
        .collect();
    UnequalizedStream {
        values,
        candidate_sequence: sequence.pool_index(),
    }
}

/// Which of the two antipodal decode attempts passed the CRC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Polarity {
    Original,
    Inverted,
}

impl Polarity {
    pub fn flipped(self) -> Self {
        match self {
            Polarity::Original => Polarity::Inverted,
            Polarity::Inverted => Polarity::Original,
        }
    }
}

/// A successfully decoded user as the receiver sees it.
#[derive(Debug, Clone)]
pub struct DecodedUe {
    /// Payload bits, sequence-index field included.
    pub payload: Vec<u8>,
    /// True transmit sequence, recovered from the payload after the CRC pass.
    pub pool_index: usize,
    /// Candidate sequence the stream was despread with; may differ from
    /// `pool_index` when an ambiguous candidate captured this user.
    pub despread_with: usize,
    /// Refined scalar channel estimate; starts at the blind estimate and is
    /// re-fit jointly after every SIC round.
    pub gain: Complex64,
    /// Clean re-encoded symbol stream.
    pub symbols: BpskSymbols,
    /// Clean spread frame used as the reconstruction pilot.
    pub frame: TxFrame,
    pub sic_round: usize,
    pub polarity: Polarity,
}

/// Forms LLRs from an equalized stream and tries both polarities against the
/// decoder, resolving the BPSK phase ambiguity. On a CRC pass the payload's
/// sequence-index field replaces the despreading candidate and the clean
/// transmit frame is rebuilt for reconstruction.
pub fn attempt_decode_bistream(
    eq: &EqualizedStream,
    pool: &SequencePool,
) -> Option<DecodedUe> {
    let gain_mag = eq.gain_estimate.norm();
    let noise = equalize::intra_cluster_power(&eq.values);
    // Only the relative LLR scale matters to the path metric; fall back to
    // raw signs when the cluster spread collapses to zero.
    let scale = if noise > 0.0 { 2.0 * gain_mag / noise } else { 1.0 };
    let llrs: Vec<f64> = eq.values.iter().map(|v| scale * v.re).collect();

    let (bits, polarity) = match codec::fec_decode(&llrs) {
        Ok((bits, true)) => (bits, Polarity::Original),
        _ => {
            let negated: Vec<f64> = llrs.iter().map(|l| -l).collect();
            match codec::fec_decode(&negated) {
                Ok((bits, true)) => (bits, Polarity::Inverted),
                _ => return None,
            }
        }
    };

    let payload = bits[..bits.len() - codec::CRC_LEN].to_vec();
    // A CRC false pass can surface an index outside the pool; reject it.
    let pool_index = codec::extract_sequence_index(&payload, pool.len()).ok()?;
    let coded = codec::fec_encode(&bits);
    let symbols = bpsk_map(&coded);
    let frame = spread(&symbols, pool.sequence(pool_index));
    Some(DecodedUe {
        payload,
        pool_index,
        despread_with: eq.candidate_sequence,
        gain: eq.gain_estimate,
        symbols,
        frame,
        sic_round: 0,
        polarity,
    })
}

/// Knobs of the SIC loop.
#[derive(Debug, Clone)]
pub struct SicParams {
    /// Candidate sequences kept per round.
    pub n_cs: usize,
    /// Equalized streams handed to the decoder per round.
    pub decode_per_round: usize,
    pub max_rounds: usize,
    /// SINR reported for a noiseless stream.
    pub sinr_cap: f64,
    /// Retain equalized sample streams in the diagnostics.
    pub capture_streams: bool,
}

impl Default for SicParams {
    fn default() -> Self {
        Self {
            n_cs: 10,
            decode_per_round: 5,
            max_rounds: 16,
            sinr_cap: 1e12,
            capture_streams: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DecodeOutcome {
    /// Ranked below the per-round decode budget.
    Skipped,
    /// Both polarities failed the CRC.
    Failed,
    /// CRC pass; `duplicate` marks a re-decode of a ledger entry.
    Decoded { duplicate: bool },
}

/// Per-candidate record within one SIC round.
#[derive(Debug, Clone, Serialize)]
pub struct StreamDiag {
    pub candidate: usize,
    pub metric: f64,
    pub boundary: Boundary,
    pub sinr: f64,
    pub outcome: DecodeOutcome,
    #[serde(skip)]
    pub captured: Option<Vec<Complex64>>,
}

/// One SIC round as observed from outside the receiver.
#[derive(Debug, Clone, Serialize)]
pub struct RoundDiagnostics {
    pub round: usize,
    pub candidates: Vec<usize>,
    pub candidate_metrics: Vec<f64>,
    pub streams: Vec<StreamDiag>,
    pub crc_passes: usize,
    pub new_decodes: usize,
    pub residual_energy: f64,
    /// Ledger entries dropped from the joint fit as near-duplicates.
    pub ls_dropped: usize,
}

#[derive(Debug)]
pub struct SicOutcome {
    pub ledger: Vec<DecodedUe>,
    pub rounds: Vec<RoundDiagnostics>,
}

/// Runs codeword-level SIC until a round decodes nothing new or the round
/// budget is exhausted.
///
/// Every round recomputes the residual covariance, keeps the `n_cs`
/// best-metric candidates, equalizes each despread stream, and hands the
/// `decode_per_round` highest-SINR streams to the bi-stream decoder. After a
/// round with fresh decodes the whole ledger is jointly re-fit against the
/// pristine received frame and subtracted from it, so earlier rounds'
/// reconstructions never go stale.
pub fn run_sic(
    received: &RxFrame,
    pool: &SequencePool,
    params: &SicParams,
) -> Result<SicOutcome, MudError> {
    let mut ledger: Vec<DecodedUe> = Vec::new();
    let mut rounds: Vec<RoundDiagnostics> = Vec::new();
    let mut residual = received.clone();

    for round in 1..=params.max_rounds {
        let scan = compute_metrics(&residual, pool)?;
        let candidates = select_candidates(&scan.metrics, params.n_cs);

        let mut equalized: Vec<(EqualizedStream, f64)> = candidates
            .iter()
            .map(|&k| {
                let un = blind_mmse_despread(pool.sequence(k), &scan.cov_inverse, &residual);
                let eq = blind_equalize(&un);
                let sinr = hard_detection_sinr(&eq, params.sinr_cap);
                (eq, sinr)
            })
            .collect();

        // Decode order: SINR descending, candidate (metric) order on ties.
        let mut order: Vec<usize> = (0..equalized.len()).collect();
        order.sort_by(|&a, &b| {
            equalized[b].1
                .partial_cmp(&equalized[a].1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });

        let mut outcomes = vec![DecodeOutcome::Skipped; equalized.len()];
        let mut crc_passes = 0;
        let mut new_decodes = 0;
        for &slot in order.iter().take(params.decode_per_round) {
            match attempt_decode_bistream(&equalized[slot].0, pool) {
                Some(mut dec) => {
                    crc_passes += 1;
                    let duplicate = ledger
                        .iter()
                        .any(|d| d.payload == dec.payload && d.pool_index == dec.pool_index);
                    if !duplicate {
                        dec.sic_round = round;
                        ledger.push(dec);
                        new_decodes += 1;
                    }
                    outcomes[slot] = DecodeOutcome::Decoded { duplicate };
                }
                None => outcomes[slot] = DecodeOutcome::Failed,
            }
        }

        let mut ls_dropped = 0;
        if new_decodes > 0 {
            let estimates = {
                let frames: Vec<&TxFrame> = ledger.iter().map(|d| &d.frame).collect();
                ls_channel_estimates(received, &frames).map_err(MudError::ChannelEstimation)?
            };
            ls_dropped = estimates.dropped.len();
            for (entry, gain) in ledger.iter_mut().zip(&estimates.gains) {
                entry.gain = *gain;
            }
            let frames: Vec<&TxFrame> = ledger.iter().map(|d| &d.frame).collect();
            residual = reconstruct_and_subtract(received, &frames, &estimates.gains);
        }

        let candidate_metrics = candidates.iter().map(|&k| scan.metrics[k]).collect();
        let streams = equalized
            .iter_mut()
            .enumerate()
            .map(|(slot, (eq, sinr))| StreamDiag {
                candidate: eq.candidate_sequence,
                metric: scan.metrics[eq.candidate_sequence],
                boundary: eq.boundary,
                sinr: *sinr,
                outcome: outcomes[slot],
                captured: params.capture_streams.then(|| std::mem::take(&mut eq.values)),
            })
            .collect();
        rounds.push(RoundDiagnostics {
            round,
            candidates,
            candidate_metrics,
            streams,
            crc_passes,
            new_decodes,
            residual_energy: residual.energy(),
            ls_dropped,
        });

        if new_decodes == 0 {
            break;
        }
    }

    Ok(SicOutcome { ledger, rounds })
}
