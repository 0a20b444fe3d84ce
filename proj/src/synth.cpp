#include "artistembed/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include "artistembed/error.hpp"
#include "artistembed/wav.hpp"

namespace artistembed::synth {
namespace {

constexpr int kArtistsPerGenre = 5;
constexpr int kMaxHarmonics = 12;
// Per-song nuisance: gain drawn from [-kGainRangeDb, 0] dB and a background
// whose level relative to the artist's signal is drawn from [low, high] dB.
constexpr double kGainRangeDb = 30.0;
constexpr double kRoomLowDb = -5.0;
constexpr double kRoomHighDb = 5.0;

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t a, std::uint32_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), a, b, 0x5eedu};
  return std::mt19937_64(seq);
}

std::string padded(int value, int width) {
  std::string s = std::to_string(value);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

std::string artist_name(int a) { return "artist_" + padded(a, 3); }
std::string track_name(int a, int s) { return artist_name(a) + "_song_" + padded(s, 2); }

// RBJ band-pass biquad (constant 0 dB peak gain).
class BandPass {
 public:
  BandPass(double centre, double q) {
    const double w0 = 2.0 * std::numbers::pi * centre / dsp::kSampleRate;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    b0_ = alpha / a0;
    b2_ = -alpha / a0;
    a1_ = -2.0 * std::cos(w0) / a0;
    a2_ = (1.0 - alpha) / a0;
  }
  double operator()(double x) {
    const double y = b0_ * x + b2_ * x2_ - a1_ * y1_ - a2_ * y2_;
    x2_ = x1_;
    x1_ = x;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  double b0_, b2_, a1_, a2_;
  double x1_ = 0, x2_ = 0, y1_ = 0, y2_ = 0;
};

}  // namespace

int genre_count(int n_artists) { return (n_artists + kArtistsPerGenre - 1) / kArtistsPerGenre; }

std::vector<ArtistStyle> make_artists(int n_artists, std::uint64_t seed) {
  if (n_artists < 1) throw Error("invalid synthetic dataset", "need at least one artist");
  const int genres = genre_count(n_artists);

  // Genre regions: band centres on a log grid and harmonic decay on a
  // shuffled grid. Within a genre, artists take distinct pitch, modulation
  // rate and tempo slots.
  auto rng = stream(seed, 1);
  std::vector<int> decay_slot(static_cast<std::size_t>(genres));
  for (int g = 0; g < genres; ++g) decay_slot[g] = g;
  std::shuffle(decay_slot.begin(), decay_slot.end(), rng);
  std::vector<std::array<int, kArtistsPerGenre>> pitch_slot(static_cast<std::size_t>(genres)),
      am_slot(static_cast<std::size_t>(genres)), tempo_slot(static_cast<std::size_t>(genres));
  for (std::size_t g = 0; g < am_slot.size(); ++g) {
    for (int k = 0; k < kArtistsPerGenre; ++k) pitch_slot[g][k] = am_slot[g][k] = tempo_slot[g][k] = k;
    std::shuffle(pitch_slot[g].begin(), pitch_slot[g].end(), rng);
    std::shuffle(am_slot[g].begin(), am_slot[g].end(), rng);
    std::shuffle(tempo_slot[g].begin(), tempo_slot[g].end(), rng);
  }
  const auto grid = [genres](int slot, double lo, double hi) {
    return genres == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * slot / (genres - 1);
  };

  std::vector<ArtistStyle> artists;
  for (int a = 0; a < n_artists; ++a) {
    const int g = a / kArtistsPerGenre;
    auto r = stream(seed, 2, static_cast<std::uint32_t>(a));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    ArtistStyle s;
    s.index = a;
    s.artist_id = artist_name(a);
    s.genre_index = g;
    s.genre = "genre_" + std::to_string(g);
    const double band = std::exp(grid(g, std::log(400.0), std::log(4000.0)));
    s.band_centre = std::clamp(band * std::exp(0.15 * normal(r)), 150.0, 9000.0);
    s.band_q = 6.0 + 4.0 * unit(r);
    s.harmonic_decay = grid(decay_slot[g], 0.6, 2.4) + 0.4 * (unit(r) - 0.5);
    const int k = a % kArtistsPerGenre;
    s.am_rate = 2.0 * std::pow(1.45, am_slot[g][k] + 0.2 * (unit(r) - 0.5));
    s.am_depth = 0.3 + 0.4 * unit(r);
    s.noise_mix = 1.0 + 1.0 * unit(r);
    const double f0_centre = 110.0 * std::pow(6.0, (pitch_slot[g][k] + 0.3 + 0.4 * unit(r)) / kArtistsPerGenre);
    s.f0_low = f0_centre / 1.12;
    s.f0_high = f0_centre * 1.12;
    s.note_rate = 1.5 * std::pow(1.4, tempo_slot[g][k] + 0.2 * (unit(r) - 0.5));
    artists.push_back(s);
  }
  return artists;
}

std::vector<float> render_song(const ArtistStyle& artist, int song, double seconds, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(std::llround(seconds * dsp::kSampleRate));
  std::vector<double> voice(n), room(n);
  auto rng = stream(seed, 3, static_cast<std::uint32_t>(artist.index * 1000 + song));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double gain_db = -kGainRangeDb * unit(rng);
  const double two_pi = 2.0 * std::numbers::pi;
  const std::complex<double> am_step = std::polar(1.0, two_pi * artist.am_rate / dsp::kSampleRate);
  std::complex<double> am_phase = std::polar(1.0, two_pi * unit(rng));
  BandPass noise_filter(artist.band_centre, artist.band_q);
  // Song-specific background: coloured noise unrelated to the artist.
  const double room_centre = std::exp(std::log(150.0) + (std::log(8000.0) - std::log(150.0)) * unit(rng));
  BandPass room_filter(room_centre, 0.7 + 1.3 * unit(rng));
  const double room_db = kRoomLowDb + (kRoomHighDb - kRoomLowDb) * unit(rng);

  std::size_t pos = 0;
  std::array<std::complex<double>, kMaxHarmonics> phasor{}, step{};
  std::array<double, kMaxHarmonics> amp{};
  while (pos < n) {
    const double duration = (0.8 + 0.4 * unit(rng)) / artist.note_rate;
    const auto len = std::min(n - pos, static_cast<std::size_t>(duration * dsp::kSampleRate) + 1);
    const double f0 = artist.f0_low * std::pow(artist.f0_high / artist.f0_low, unit(rng));
    const int harmonics = std::clamp(static_cast<int>(9000.0 / f0), 1, kMaxHarmonics);
    double norm = 0.0;
    for (int h = 0; h < harmonics; ++h) {
      amp[h] = std::pow(h + 1.0, -artist.harmonic_decay);
      norm += amp[h];
      phasor[h] = std::polar(1.0, two_pi * unit(rng));
      step[h] = std::polar(1.0, two_pi * f0 * (h + 1) / dsp::kSampleRate);
    }
    const double attack = 0.01 * dsp::kSampleRate;
    const double decay = std::exp(-1.0 / (0.6 * duration * dsp::kSampleRate));
    double env = 1.0;
    for (std::size_t i = 0; i < len; ++i) {
      double tone = 0.0;
      for (int h = 0; h < harmonics; ++h) {
        tone += amp[h] * phasor[h].imag();
        phasor[h] *= step[h];
      }
      const double shape = (static_cast<double>(i) < attack ? static_cast<double>(i) / attack : 1.0) * env;
      env *= decay;
      const double noise = noise_filter(normal(rng));
      const double modulation = 1.0 + artist.am_depth * am_phase.imag();
      am_phase *= am_step;
      voice[pos + i] = modulation * (shape * tone / norm + artist.noise_mix * noise);
      room[pos + i] = room_filter(normal(rng));
    }
    am_phase /= std::abs(am_phase);
    pos += len;
  }
  const auto rms = [](const std::vector<double>& x) {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return std::sqrt(acc / static_cast<double>(std::max<std::size_t>(x.size(), 1)));
  };
  const double voice_rms = std::max(rms(voice), 1e-12);
  const double room_gain = voice_rms * std::pow(10.0, room_db / 20.0) / std::max(rms(room), 1e-12);
  const double scale = 0.1 * std::pow(10.0, gain_db / 20.0) / voice_rms;
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>(std::clamp(scale * (voice[i] + room_gain * room[i]), -1.0, 1.0));
  }
  return out;
}

data::SplitSpec synthetic_split(int songs_per_artist) {
  data::SplitSpec spec;
  spec.songs_per_artist = songs_per_artist;
  if (songs_per_artist == 20) return spec;
  if (songs_per_artist < 3) {
    spec.train = songs_per_artist;
    spec.val = spec.test = 0;
    return spec;
  }
  spec.test = std::max(1, static_cast<int>(std::lround(0.1 * songs_per_artist)));
  spec.val = std::max(1, static_cast<int>(std::lround(0.15 * songs_per_artist)));
  spec.train = songs_per_artist - spec.val - spec.test;
  return spec;
}

data::Catalog synthetic_catalog(int n_artists, int songs_per_artist, std::uint64_t seed) {
  if (songs_per_artist < 1) throw Error("invalid synthetic dataset", "need at least one song per artist");
  data::Catalog catalog;
  for (const auto& artist : make_artists(n_artists, seed)) {
    const int a = static_cast<int>(catalog.tracks.size()) / songs_per_artist;
    for (int s = 0; s < songs_per_artist; ++s) {
      data::TrackRecord rec;
      rec.track_id = track_name(a, s);
      rec.artist_id = artist.artist_id;
      rec.audio_path = std::filesystem::path("audio") / (rec.track_id + ".wav");
      rec.genre = artist.genre;
      catalog.tracks.push_back(std::move(rec));
    }
  }
  return catalog;
}

GenerateResult generate_synthetic_dataset(int n_artists, int songs_per_artist, double clip_seconds,
                                          std::uint64_t seed, const std::filesystem::path& out_dir) {
  if (!(clip_seconds * dsp::kSampleRate >= dsp::kFftSize)) throw Error("invalid synthetic dataset", "clip too short");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "audio", ec);
  if (ec) throw Error("disk write failure", (out_dir / "audio").string() + ": " + ec.message());

  data::Catalog catalog = data::make_splits(synthetic_catalog(n_artists, songs_per_artist, seed),
                                            synthetic_split(songs_per_artist), seed);
  catalog.base_dir = out_dir;
  const auto artists = make_artists(n_artists, seed);

  GenerateResult result;
  result.tracks = catalog.tracks.size();
  const auto write_if_changed = [&](const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    if (std::ifstream in{path, std::ios::binary}) {
      const std::vector<std::uint8_t> existing((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      if (existing == bytes) return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("disk write failure", path.string());
    ++result.files_written;
  };

  for (std::size_t i = 0; i < catalog.tracks.size(); ++i) {
    const auto& rec = catalog.tracks[i];
    const int a = static_cast<int>(i) / songs_per_artist;
    const int s = static_cast<int>(i) % songs_per_artist;
    const auto samples = render_song(artists[static_cast<std::size_t>(a)], s, clip_seconds, seed);
    write_if_changed(catalog.resolve(rec), wav::encode_pcm16(samples));
  }
  const std::string text = data::to_jsonl(catalog);
  result.catalog_path = out_dir / "catalog.jsonl";
  write_if_changed(result.catalog_path, std::vector<std::uint8_t>(text.begin(), text.end()));
  return result;
}

}  // namespace artistembed::synth
