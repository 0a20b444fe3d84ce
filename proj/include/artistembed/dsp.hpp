#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace artistembed::dsp {

inline constexpr int kSampleRate = 22050;
inline constexpr int kFftSize = 1024;
inline constexpr int kHopSize = 512;
inline constexpr int kFreqBins = kFftSize / 2 + 1;
inline constexpr int kMelBins = 128;
inline constexpr double kLogFloor = 1e-10;

/// Samples in one 3 s network context window.
inline constexpr std::size_t kContextSamples = 3 * kSampleRate;
/// Frames produced by one context window (1 + (66150 - 1024) / 512).
inline constexpr int kContextFrames = 128;

struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
};

/// Log-mel matrix, mel bins in rows and frames in columns.
struct MelSpectrogram {
  Eigen::MatrixXd values;
  bool standardized = false;

  Eigen::Index frames() const { return values.cols(); }
};

struct NormStats {
  double mean = 0.0;
  double std = 1.0;
};

/// Number of STFT frames for a signal of `n` samples (no centre padding).
/// Returns 0 when n is shorter than one analysis window.
std::size_t frame_count(std::size_t n);

/// Periodic Hann window of length kFftSize.
const std::vector<double>& hann_window();

/// Squared-magnitude STFT, kFreqBins rows x frame_count(len) columns.
/// Throws "unsupported sample rate" or "clip too short".
Eigen::MatrixXd power_spectrogram(const AudioClip& clip);

/// HTK-scale triangular filterbank, kMelBins x kFreqBins, unnormalised
/// (peak weight <= 1). Built once and shared.
const Eigen::MatrixXd& mel_filterbank();

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// ln(max(M * P, kLogFloor)); unstandardised.
MelSpectrogram log_mel(const AudioClip& clip);

/// Pooled scalar mean and population standard deviation over every cell.
/// Throws "no training data" or "degenerate training data".
NormStats compute_norm_stats(std::span<const MelSpectrogram> mels);

/// (x - mean) / std per cell. Throws "double standardization".
MelSpectrogram standardize(const MelSpectrogram& mel, const NormStats& stats);

/// Inverse of standardize.
MelSpectrogram destandardize(const MelSpectrogram& mel, const NormStats& stats);

/// Validates sample rate and length without computing anything.
void validate_clip(const AudioClip& clip);

}  // namespace artistembed::dsp
