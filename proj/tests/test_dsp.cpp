#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "artistembed/dsp.hpp"
#include "artistembed/error.hpp"
#include "artistembed/wav.hpp"
#include "support.hpp"

using namespace artistembed;

namespace {

dsp::AudioClip sine(double freq, std::size_t n, double amp = 0.5) {
  dsp::AudioClip clip;
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    clip.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * freq * i / dsp::kSampleRate));
  }
  return clip;
}

dsp::AudioClip noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  dsp::AudioClip clip;
  clip.samples.resize(n);
  for (auto& s : clip.samples) s = static_cast<float>(u(rng));
  return clip;
}

// Power spectrum of one Hann-windowed frame by the textbook DFT sum.
std::vector<double> naive_frame_power(const dsp::AudioClip& clip, std::size_t start) {
  std::vector<double> power(dsp::kFreqBins);
  for (int k = 0; k < dsp::kFreqBins; ++k) {
    std::complex<double> acc = 0.0;
    for (int n = 0; n < dsp::kFftSize; ++n) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / dsp::kFftSize);
      acc += w * static_cast<double>(clip.samples[start + n]) *
             std::polar(1.0, -2.0 * std::numbers::pi * k * n / dsp::kFftSize);
    }
    power[k] = std::norm(acc);
  }
  return power;
}

}  // namespace

TEST_CASE("frame count follows 1 + floor((n - 1024) / 512)") {
  CHECK(dsp::frame_count(1023) == 0);
  CHECK(dsp::frame_count(1024) == 1);
  CHECK(dsp::frame_count(1535) == 1);
  CHECK(dsp::frame_count(1536) == 2);
  CHECK(dsp::frame_count(dsp::kContextSamples) == 128);
  for (std::size_t n : {1024u, 5000u, 66150u, 661500u}) {
    CHECK(dsp::frame_count(n) == 1 + (n - 1024) / 512);
  }
}

TEST_CASE("periodic hann window") {
  const auto& w = dsp::hann_window();
  REQUIRE(w.size() == 1024);
  CHECK(w[0] == 0.0);
  CHECK(w[512] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(w[256] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(w[1023]).epsilon(1e-12));
}

TEST_CASE("power spectrogram shape and zero input") {
  dsp::AudioClip silent;
  silent.samples.assign(dsp::kContextSamples, 0.0f);
  const auto p = dsp::power_spectrogram(silent);
  CHECK(p.rows() == 513);
  CHECK(p.cols() == 128);
  CHECK(p.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("power spectrogram matches the naive DFT") {
  const auto clip = noise(4096, 3);
  const auto p = dsp::power_spectrogram(clip);
  for (std::size_t t : {0u, 3u, 5u}) {
    const auto oracle = naive_frame_power(clip, t * 512);
    double total = 0.0, oracle_total = 0.0;
    for (int k = 0; k < dsp::kFreqBins; ++k) {
      CHECK(p(k, static_cast<Eigen::Index>(t)) == doctest::Approx(oracle[k]).epsilon(1e-8).scale(1e-6));
      total += p(k, static_cast<Eigen::Index>(t));
      oracle_total += oracle[k];
    }
    CHECK(std::abs(total - oracle_total) / oracle_total < 1e-6);
  }
}

TEST_CASE("bin-centred sine concentrates its energy") {
  const double freq = 10.0 * dsp::kSampleRate / dsp::kFftSize;
  const auto clip = sine(freq, dsp::kContextSamples);
  const auto p = dsp::power_spectrogram(clip);
  const auto oracle = naive_frame_power(clip, 0);
  double in_band = 0.0, total = 0.0;
  for (int k = 0; k < dsp::kFreqBins; ++k) {
    total += oracle[k];
    if (k >= 9 && k <= 11) in_band += oracle[k];
  }
  CHECK(in_band / total >= 0.9);
  for (Eigen::Index t = 0; t < p.cols(); ++t) {
    CHECK(p.col(t).segment(9, 3).sum() / p.col(t).sum() >= 0.9);
  }
}

TEST_CASE("rejects bad clips") {
  dsp::AudioClip clip = noise(1023, 1);
  CHECK_THROWS_WITH_AS(dsp::power_spectrogram(clip), doctest::Contains("clip too short"), Error);
  clip = noise(4096, 1);
  clip.sample_rate = 44100;
  CHECK_THROWS_WITH_AS(dsp::power_spectrogram(clip), doctest::Contains("unsupported sample rate"), Error);
}

TEST_CASE("mel filterbank layout") {
  const auto& m = dsp::mel_filterbank();
  REQUIRE(m.rows() == 128);
  REQUIRE(m.cols() == 513);
  CHECK(m.minCoeff() >= 0.0);
  CHECK(m.maxCoeff() <= 1.0 + 1e-12);
  Eigen::Index prev_peak = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    CHECK(m.row(r).maxCoeff() > 0.0);
    Eigen::Index peak;
    m.row(r).maxCoeff(&peak);
    CHECK(peak >= prev_peak);
    prev_peak = peak;
  }
  // Filter 0's support lies below filter 127's peak bin.
  Eigen::Index last_support = 0;
  for (Eigen::Index k = 0; k < m.cols(); ++k) {
    if (m(0, k) > 0.0) last_support = k;
  }
  Eigen::Index top_peak;
  m.row(127).maxCoeff(&top_peak);
  CHECK(last_support < top_peak);
  CHECK(dsp::hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)).epsilon(1e-12));
  CHECK(dsp::mel_to_hz(dsp::hz_to_mel(1234.5)) == doctest::Approx(1234.5).epsilon(1e-12));
}

TEST_CASE("log mel floor, scaling and shape") {
  dsp::AudioClip silent;
  silent.samples.assign(dsp::kContextSamples, 0.0f);
  const auto zero = dsp::log_mel(silent);
  CHECK(zero.values.rows() == 128);
  CHECK(zero.values.cols() == 128);
  CHECK_FALSE(zero.standardized);
  CHECK((zero.values.array() == std::log(1e-10)).all());

  const auto quiet = noise(dsp::kContextSamples, 9);
  dsp::AudioClip loud = quiet;
  for (auto& s : loud.samples) s *= 8.0f;
  const auto a = dsp::log_mel(quiet);
  const auto b = dsp::log_mel(loud);
  CHECK(a.values.allFinite());
  for (Eigen::Index i = 0; i < a.values.size(); ++i) {
    if (a.values.data()[i] > std::log(1e-10) + 1.0) {
      CHECK(b.values.data()[i] - a.values.data()[i] == doctest::Approx(std::log(64.0)).epsilon(1e-9));
    }
  }
}

TEST_CASE("pooled normalisation statistics") {
  SUBCASE("constant input is degenerate") {
    dsp::MelSpectrogram m{Eigen::MatrixXd::Constant(128, 4, 5.0), false};
    CHECK_THROWS_WITH_AS(dsp::compute_norm_stats(std::span(&m, 1)), doctest::Contains("degenerate training data"), Error);
  }
  SUBCASE("two-point statistics") {
    std::vector<dsp::MelSpectrogram> m{{Eigen::MatrixXd::Constant(128, 1, 0.0), false},
                                       {Eigen::MatrixXd::Constant(128, 1, 2.0), false}};
    const auto s = dsp::compute_norm_stats(m);
    CHECK(s.mean == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(s.std == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("empty input") {
    CHECK_THROWS_WITH_AS(dsp::compute_norm_stats({}), doctest::Contains("no training data"), Error);
  }
  SUBCASE("matches a flatten-and-aggregate oracle") {
    std::mt19937_64 rng(4);
    std::vector<dsp::MelSpectrogram> mels;
    for (int i = 0; i < 100; ++i) mels.push_back({testsupport::random_matrix<double>(128, 1 + i % 7, rng, -20, 5), false});
    long double sum = 0, sq = 0, n = 0;
    for (const auto& m : mels)
      for (Eigen::Index j = 0; j < m.values.size(); ++j) {
        sum += m.values.data()[j];
        sq += static_cast<long double>(m.values.data()[j]) * m.values.data()[j];
        n += 1;
      }
    const double mean = static_cast<double>(sum / n);
    const double std = static_cast<double>(std::sqrt(sq / n - (sum / n) * (sum / n)));
    const auto s = dsp::compute_norm_stats(mels);
    CHECK(std::abs(s.mean - mean) / std::abs(mean) < 1e-9);
    CHECK(std::abs(s.std - std) / std < 1e-9);

    // Standardised corpus has pooled (0, 1) statistics.
    std::vector<dsp::MelSpectrogram> z;
    for (const auto& m : mels) {
      auto out = dsp::standardize(m, s);
      out.standardized = false;
      z.push_back(out);
    }
    const auto zs = dsp::compute_norm_stats(z);
    CHECK(std::abs(zs.mean) < 1e-9);
    CHECK(std::abs(zs.std - 1.0) < 1e-9);
  }
}

TEST_CASE("standardize semantics") {
  dsp::MelSpectrogram m{Eigen::MatrixXd::Constant(128, 3, 4.0), false};
  const auto centred = dsp::standardize(m, {4.0, 2.0});
  CHECK(centred.standardized);
  CHECK(centred.values.cwiseAbs().maxCoeff() == 0.0);
  std::mt19937_64 rng(5);
  dsp::MelSpectrogram r{testsupport::random_matrix<double>(128, 9, rng), false};
  CHECK(dsp::standardize(r, {0.0, 1.0}).values == r.values);
  CHECK_THROWS_WITH_AS(dsp::standardize(centred, {0.0, 1.0}), doctest::Contains("double standardization"), Error);
  const auto round = dsp::destandardize(dsp::standardize(r, {-3.0, 2.5}), {-3.0, 2.5});
  CHECK((round.values - r.values).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("dsp is bit-reproducible") {
  const auto clip = noise(dsp::kContextSamples, 11);
  CHECK(dsp::log_mel(clip).values == dsp::log_mel(clip).values);
}

TEST_CASE("wav round trip and format checks") {
  const auto dir = testsupport::scratch_dir("wav");
  const auto clip = noise(3000, 2);
  wav::write_pcm16(dir / "a.wav", clip.samples);
  const auto back = wav::read(dir / "a.wav");
  REQUIRE(back.samples.size() == clip.samples.size());
  for (std::size_t i = 0; i < clip.samples.size(); ++i) CHECK(std::abs(back.samples[i] - clip.samples[i]) <= 1.0f / 32767.0f);

  auto bytes = wav::encode_pcm16(clip.samples);
  // Stereo header.
  auto stereo = bytes;
  stereo[22] = 2;
  CHECK_THROWS_WITH_AS(wav::decode(stereo), doctest::Contains("unsupported channel count"), Error);
  auto rate = bytes;
  rate[24] = 0x44;
  rate[25] = 0xAC;
  rate[26] = 0;
  CHECK_THROWS_WITH_AS(wav::decode(rate), doctest::Contains("unsupported sample rate"), Error);
}
