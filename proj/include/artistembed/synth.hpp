#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "artistembed/data.hpp"

namespace artistembed::synth {

/// Parameter bundle of one synthetic artist. Genre fixes the noise band and
/// harmonic decay region; within a genre each artist takes its own pitch
/// range, modulation rate and note rate.
struct ArtistStyle {
  int index = 0;
  std::string artist_id;
  std::string genre;
  int genre_index = 0;
  double f0_low = 0.0;          // Hz
  double f0_high = 0.0;         // Hz
  double harmonic_decay = 1.0;  // amplitude of harmonic h is h^-decay
  double am_rate = 0.0;         // Hz
  double am_depth = 0.0;
  double noise_mix = 0.0;
  double band_centre = 0.0;     // Hz, band-pass centre of the noise layer
  double band_q = 1.0;
  double note_rate = 0.0;       // notes per second
};

int genre_count(int n_artists);

/// Deterministic artist bundles for `seed`; artists are grouped five per genre.
std::vector<ArtistStyle> make_artists(int n_artists, std::uint64_t seed);

/// Renders one song: a harmonic stack following a per-song pitch contour plus
/// band-passed noise, amplitude modulated, over a per-song coloured
/// background and with a per-song gain.
std::vector<float> render_song(const ArtistStyle& artist, int song, double seconds, std::uint64_t seed);

/// Per-artist split counts used for generated catalogs: 15/3/2 for twenty
/// songs, roughly 75/15/10 percent otherwise, all train below three songs.
data::SplitSpec synthetic_split(int songs_per_artist);

/// Catalog records of the synthetic dataset without rendering any audio.
data::Catalog synthetic_catalog(int n_artists, int songs_per_artist, std::uint64_t seed);

struct GenerateResult {
  std::filesystem::path catalog_path;
  std::size_t tracks = 0;
  std::size_t files_written = 0;  // 0 when everything on disk already matched
};

/// Writes <out_dir>/catalog.jsonl (with split assignments) and <out_dir>/audio/*.wav (16-bit PCM,
/// mono, 22050 Hz). Files whose bytes already match are left untouched.
GenerateResult generate_synthetic_dataset(int n_artists, int songs_per_artist, double clip_seconds,
                                          std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace artistembed::synth
