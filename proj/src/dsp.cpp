#include "artistembed/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include <fftw3.h>

#include "artistembed/error.hpp"

namespace artistembed::dsp {
namespace {

// Plans are created once; fftw_execute_dft_r2c on a shared plan is
// thread-safe, plan creation is not.
class RealFft {
 public:
  RealFft() {
    std::vector<double> in(kFftSize);
    std::vector<std::complex<double>> out(kFreqBins);
    plan_ = fftw_plan_dft_r2c_1d(kFftSize, in.data(),
                                 reinterpret_cast<fftw_complex*>(out.data()),
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  ~RealFft() { fftw_destroy_plan(plan_); }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  void operator()(double* in, std::complex<double>* out) const {
    fftw_execute_dft_r2c(plan_, in, reinterpret_cast<fftw_complex*>(out));
  }

 private:
  fftw_plan plan_;
};

const RealFft& real_fft() {
  static const RealFft fft;
  return fft;
}

}  // namespace

std::size_t frame_count(std::size_t n) {
  if (n < static_cast<std::size_t>(kFftSize)) return 0;
  return 1 + (n - kFftSize) / kHopSize;
}

const std::vector<double>& hann_window() {
  static const std::vector<double> window = [] {
    std::vector<double> w(kFftSize);
    for (int n = 0; n < kFftSize; ++n) {
      w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / kFftSize);
    }
    return w;
  }();
  return window;
}

void validate_clip(const AudioClip& clip) {
  if (clip.sample_rate != kSampleRate) throw Error("unsupported sample rate");
  if (clip.samples.size() < static_cast<std::size_t>(kFftSize)) throw Error("clip too short");
}

Eigen::MatrixXd power_spectrogram(const AudioClip& clip) {
  validate_clip(clip);
  const auto frames = static_cast<Eigen::Index>(frame_count(clip.samples.size()));
  const auto& window = hann_window();
  const auto& fft = real_fft();

  Eigen::MatrixXd power(kFreqBins, frames);
  std::vector<double> frame(kFftSize);
  std::vector<std::complex<double>> spectrum(kFreqBins);
  for (Eigen::Index t = 0; t < frames; ++t) {
    const float* src = clip.samples.data() + t * kHopSize;
    for (int n = 0; n < kFftSize; ++n) frame[n] = window[n] * static_cast<double>(src[n]);
    fft(frame.data(), spectrum.data());
    for (int k = 0; k < kFreqBins; ++k) power(k, t) = std::norm(spectrum[k]);
  }
  return power;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

const Eigen::MatrixXd& mel_filterbank() {
  static const Eigen::MatrixXd bank = [] {
    const double mel_max = hz_to_mel(kSampleRate / 2.0);
    std::vector<double> edges(kMelBins + 2);
    for (int i = 0; i < kMelBins + 2; ++i) {
      edges[i] = mel_to_hz(mel_max * i / (kMelBins + 1));
    }
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(kMelBins, kFreqBins);
    for (int f = 0; f < kMelBins; ++f) {
      const double lo = edges[f], centre = edges[f + 1], hi = edges[f + 2];
      for (int k = 0; k < kFreqBins; ++k) {
        const double hz = static_cast<double>(k) * kSampleRate / kFftSize;
        const double rising = (hz - lo) / (centre - lo);
        const double falling = (hi - hz) / (hi - centre);
        m(f, k) = std::max(0.0, std::min(rising, falling));
      }
    }
    return m;
  }();
  return bank;
}

MelSpectrogram log_mel(const AudioClip& clip) {
  const Eigen::MatrixXd power = power_spectrogram(clip);
  MelSpectrogram mel;
  mel.values = (mel_filterbank() * power).array().max(kLogFloor).log().matrix();
  return mel;
}

NormStats compute_norm_stats(std::span<const MelSpectrogram> mels) {
  double sum = 0.0;
  double count = 0.0;
  for (const auto& mel : mels) {
    if (mel.standardized) throw Error("double standardization");
    sum += mel.values.sum();
    count += static_cast<double>(mel.values.size());
  }
  if (count == 0.0) throw Error("no training data");
  const double mean = sum / count;
  double sq = 0.0;
  for (const auto& mel : mels) sq += (mel.values.array() - mean).square().sum();
  const double std = std::sqrt(sq / count);
  if (!(std > 0.0) || !std::isfinite(std)) throw Error("degenerate training data");
  return {mean, std};
}

MelSpectrogram standardize(const MelSpectrogram& mel, const NormStats& stats) {
  if (mel.standardized) throw Error("double standardization");
  if (!(stats.std > 0.0)) throw Error("degenerate training data");
  MelSpectrogram out;
  out.values = ((mel.values.array() - stats.mean) / stats.std).matrix();
  out.standardized = true;
  return out;
}

MelSpectrogram destandardize(const MelSpectrogram& mel, const NormStats& stats) {
  if (!mel.standardized) throw Error("not standardized");
  MelSpectrogram out;
  out.values = (mel.values.array() * stats.std + stats.mean).matrix();
  return out;
}

}  // namespace artistembed::dsp
