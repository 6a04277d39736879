//! Subband time-domain digital backpropagation (DBP) for single-polarization
//! coherent fiber links.
//!
//! The crate is organised along the receiver chain:
//!
//! * [`signal`]: complex baseband waveforms, Gaussian symbol sources,
//!   root-raised-cosine shaping, matched filtering and SNR metrics.
//! * [`channel`]: split-step Fourier propagation with lumped EDFA noise,
//!   exact dispersion operators and the linear / full-DBP reference receivers.
//! * [`filterbank`]: the uniformly modulated, oversampled analysis and
//!   synthesis filter banks.
//! * [`engine`]: the per-step subband datapath (shared symmetric CD filters,
//!   walk-off delay lines, sparse MIMO intensity filters, phase rotation) and
//!   the frequency-domain subband reference.
//! * [`train`]: reverse-mode differentiation over the unrolled receiver,
//!   Adam, L1 regularisation, thresholding and least-squares pre-training.
//! * [`experiment`]: configuration, persistence formats, dataset generation,
//!   evaluation sweeps and real-multiplication accounting.

pub mod channel;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod filterbank;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
