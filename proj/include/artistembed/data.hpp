#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "artistembed/dsp.hpp"
#include "artistembed/nn/tensor.hpp"

namespace artistembed::data {

enum class Split { unassigned, train, val, test };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct TrackRecord {
  std::string track_id;
  std::string artist_id;
  std::filesystem::path audio_path;
  std::optional<std::string> genre;
  std::vector<std::string> tags;
  Split split = Split::unassigned;
};

struct Catalog {
  std::vector<TrackRecord> tracks;
  /// Relative audio paths resolve against this directory.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const TrackRecord& track) const;
  std::vector<std::size_t> indices(Split split) const;
  std::size_t size() const { return tracks.size(); }
};

/// JSON lines, one record per line; blank lines are ignored. Diagnostics
/// name the offending line.
Catalog parse_catalog(std::istream& in, const std::filesystem::path& base_dir = {});
Catalog load_catalog(const std::filesystem::path& path);
std::string to_jsonl(const Catalog& catalog);
void save_catalog(const Catalog& catalog, const std::filesystem::path& path);

/// Digest of the catalog content (ids, labels, paths, splits).
std::string catalog_digest(const Catalog& catalog);

struct SplitSpec {
  int songs_per_artist = 20;
  int train = 15;
  int val = 3;
  int test = 2;
  /// Number of artists to retain; 0 keeps every eligible artist.
  int artist_set_size = 0;

  void validate() const;

  /// 15/3/2 below 10,000 artists, 17/1/2 at 10,000 and above.
  static SplitSpec for_artist_count(int artists);
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0, unassigned = 0;
};

SplitCounts count_splits(const Catalog& catalog);

/// Drops artists with fewer than songs_per_artist tracks, keeps
/// artist_set_size of the rest (seeded choice), subsamples each to
/// songs_per_artist tracks and cuts a seeded permutation at the
/// (train, val, test) boundaries. Non-retained tracks become unassigned.
/// Throws "insufficient artists".
Catalog make_splits(const Catalog& catalog, const SplitSpec& spec, std::uint64_t seed);

/// Independent stream for batch `index` of stream `stream`; batch contents
/// depend only on (seed, stream, index).
nn::Rng batch_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// Contiguous kContextSamples slice at a uniform random offset.
/// Throws "clip shorter than context".
dsp::AudioClip sample_context_window(const dsp::AudioClip& clip, nn::Rng& rng);
dsp::AudioClip context_window_at(const dsp::AudioClip& clip, std::size_t offset);
/// Hop-aligned offset of the centred window used for deterministic validation.
std::size_t centre_offset(std::size_t clip_samples);
/// Uniform hop-aligned offset j * kHopSize with j * kHopSize + kContextSamples <= clip_samples.
std::size_t aligned_random_offset(std::size_t clip_samples, nn::Rng& rng);

/// Lazily decodes and caches the catalog's audio.
class AudioStore {
 public:
  explicit AudioStore(const Catalog& catalog) : catalog_(&catalog) {}
  const dsp::AudioClip& clip(std::size_t track_index);
  /// Decodes without caching (returns the cached copy when present).
  dsp::AudioClip read(std::size_t track_index) const;

 private:
  const Catalog* catalog_;
  mutable std::mutex mutex_;
  std::map<std::size_t, std::unique_ptr<dsp::AudioClip>> cache_;
};

/// Sorted label vocabulary with dense ids.
class LabelIndex {
 public:
  LabelIndex() = default;
  explicit LabelIndex(std::vector<std::string> labels);

  int id(const std::string& label) const;
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> ids_;
};

LabelIndex artist_index(const Catalog& catalog, const std::vector<std::size_t>& tracks);
LabelIndex tag_index(const Catalog& catalog, const std::vector<std::size_t>& tracks);

/// Log-mel and standardise one window; DSP errors carry the track id.
dsp::MelSpectrogram window_features(const dsp::AudioClip& window, const dsp::NormStats& stats,
                                    const std::string& track_id);

/// Pooled statistics over the full-length log-mel of every listed track.
dsp::NormStats training_norm_stats(const Catalog& catalog, AudioStore& store,
                                   const std::vector<std::size_t>& tracks);

/// Standardised full-clip log-mels, computed on first use. A window whose
/// offset is a multiple of kHopSize is exactly a 128-column slice of the
/// full-clip spectrogram, so aligned windows are served without any DSP.
class FeatureCache {
 public:
  FeatureCache(AudioStore& store, const Catalog& catalog, const dsp::NormStats& stats)
      : store_(&store), catalog_(&catalog), stats_(stats) {}

  /// Standardised window starting at sample `offset` (must be hop-aligned).
  dsp::MelSpectrogram window(std::size_t track, std::size_t offset);
  std::size_t clip_samples(std::size_t track);

 private:
  struct Entry {
    Eigen::MatrixXf features;
    std::size_t samples = 0;
  };
  const Entry& entry(std::size_t track);

  AudioStore* store_;
  const Catalog* catalog_;
  dsp::NormStats stats_;
  std::mutex mutex_;
  std::map<std::size_t, std::unique_ptr<Entry>> cache_;
};

/// Everything the samplers need to draw training examples. With a feature
/// cache, training windows start at hop-aligned offsets; without one they
/// start at any sample and go through the full DSP path.
struct TrainingView {
  const Catalog* catalog = nullptr;
  AudioStore* store = nullptr;
  FeatureCache* cache = nullptr;
  dsp::NormStats stats;
  std::vector<std::size_t> tracks;
  LabelIndex artists;
  LabelIndex tags;
};

struct BasicBatch {
  std::vector<dsp::MelSpectrogram> mels;
  std::vector<int> labels;              // artist ids
  nn::Matrix<float> tag_targets;        // tags x batch multi-hot; empty without tags
  std::vector<std::size_t> tracks;
};

/// Deterministic centred window of one track.
dsp::MelSpectrogram centre_window(const TrainingView& view, std::size_t track);

/// Uniformly sampled tracks, one random context window each.
BasicBatch next_basic_batch(const TrainingView& view, std::size_t batch_size, nn::Rng& rng);

struct TripletIndices {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::vector<std::size_t> negatives;
};

/// Draws anchor/positive/negative track indices: the positive is another
/// track of the anchor's artist, each negative is one track of a distinct
/// other artist.
class TripletSampler {
 public:
  /// Throws "insufficient artists" when fewer than n_negatives + 1 artists
  /// exist or no artist has two tracks. Single-track artists are excluded
  /// from anchors with a one-time warning on stderr.
  TripletSampler(const Catalog& catalog, const std::vector<std::size_t>& tracks, int n_negatives);

  std::vector<TripletIndices> sample(std::size_t batch_size, nn::Rng& rng) const;
  int negatives() const { return n_negatives_; }
  const std::string& artist_of(std::size_t track) const;

 private:
  const Catalog* catalog_;
  int n_negatives_;
  std::vector<std::string> artists_;
  std::vector<std::vector<std::size_t>> tracks_by_artist_;
  std::vector<std::size_t> anchor_pool_;
  std::map<std::size_t, std::size_t> artist_of_track_;
};

struct TripletBatch {
  std::vector<dsp::MelSpectrogram> anchors;
  std::vector<dsp::MelSpectrogram> positives;
  std::vector<dsp::MelSpectrogram> negatives;  // batch * n_negatives, grouped by anchor
  std::vector<TripletIndices> indices;
  std::vector<std::string> anchor_artists;
};

TripletBatch next_siamese_batch(const TrainingView& view, const TripletSampler& sampler,
                                std::size_t batch_size, nn::Rng& rng);

/// Builds a TripletBatch for given indices using deterministic centre windows.
TripletBatch centre_triplets(const TrainingView& view, const TripletSampler& sampler,
                             const std::vector<TripletIndices>& indices);

}  // namespace artistembed::data
