#include "artistembed/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "artistembed/error.hpp"
#include "artistembed/model.hpp"
#include "artistembed/wav.hpp"

namespace artistembed::data {

using nlohmann::json;

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
  }
  return "unassigned";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  if (name == "unassigned") return Split::unassigned;
  throw Error("unknown split", name);
}

std::filesystem::path Catalog::resolve(const TrackRecord& track) const {
  if (track.audio_path.is_absolute() || base_dir.empty()) return track.audio_path;
  return base_dir / track.audio_path;
}

std::vector<std::size_t> Catalog::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    if (tracks[i].split == split) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON lines

namespace {

std::string required_string(const json& obj, const char* key, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw Error("missing field", "line " + std::to_string(line) + ": '" + key + "'");
  if (!it->is_string()) throw Error("malformed catalog line", "line " + std::to_string(line) + ": '" + key + "' must be a string");
  return it->get<std::string>();
}

TrackRecord parse_record(const std::string& text, std::size_t line) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error("malformed catalog line", "line " + std::to_string(line) + ": " + e.what());
  }
  if (!obj.is_object()) throw Error("malformed catalog line", "line " + std::to_string(line) + ": not an object");
  TrackRecord rec;
  rec.track_id = required_string(obj, "track_id", line);
  rec.artist_id = required_string(obj, "artist_id", line);
  rec.audio_path = required_string(obj, "audio_path", line);
  try {
    if (auto it = obj.find("genre"); it != obj.end() && !it->is_null()) rec.genre = it->get<std::string>();
    if (auto it = obj.find("tags"); it != obj.end() && !it->is_null()) rec.tags = it->get<std::vector<std::string>>();
    if (auto it = obj.find("split"); it != obj.end() && !it->is_null()) rec.split = split_from_string(it->get<std::string>());
  } catch (const json::exception& e) {
    throw Error("malformed catalog line", "line " + std::to_string(line) + ": " + e.what());
  } catch (const Error& e) {
    throw Error("malformed catalog line", "line " + std::to_string(line) + ": " + e.what());
  }
  return rec;
}

json record_json(const TrackRecord& r) {
  json obj{{"track_id", r.track_id}, {"artist_id", r.artist_id}, {"audio_path", r.audio_path.generic_string()}};
  if (r.genre) obj["genre"] = *r.genre;
  if (!r.tags.empty()) obj["tags"] = r.tags;
  if (r.split != Split::unassigned) obj["split"] = to_string(r.split);
  return obj;
}

}  // namespace

Catalog parse_catalog(std::istream& in, const std::filesystem::path& base_dir) {
  Catalog catalog;
  catalog.base_dir = base_dir;
  std::unordered_map<std::string, std::size_t> first_line;
  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    TrackRecord rec = parse_record(text, line);
    const auto [it, inserted] = first_line.emplace(rec.track_id, line);
    if (!inserted) {
      throw Error("duplicate track_id", "'" + rec.track_id + "' on lines " + std::to_string(it->second) + " and " +
                                            std::to_string(line));
    }
    catalog.tracks.push_back(std::move(rec));
  }
  return catalog;
}

Catalog load_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open catalog", path.string());
  return parse_catalog(in, path.parent_path());
}

std::string to_jsonl(const Catalog& catalog) {
  std::string out;
  for (const auto& r : catalog.tracks) {
    out += record_json(r).dump();
    out += '\n';
  }
  return out;
}

void save_catalog(const Catalog& catalog, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write catalog", path.string());
  out << to_jsonl(catalog);
  if (!out) throw Error("cannot write catalog", path.string());
}

std::string catalog_digest(const Catalog& catalog) {
  const std::string text = to_jsonl(catalog);
  return model::hex64(model::fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
}

// ---------------------------------------------------------------------------
// Splits

void SplitSpec::validate() const {
  if (songs_per_artist < 1 || train < 0 || val < 0 || test < 0) throw Error("invalid split spec", "negative count");
  if (train + val + test != songs_per_artist) {
    throw Error("invalid split spec", "train + val + test must equal songs_per_artist");
  }
  if (artist_set_size < 0) throw Error("invalid split spec", "artist_set_size < 0");
}

SplitSpec SplitSpec::for_artist_count(int artists) {
  SplitSpec spec;
  spec.artist_set_size = artists;
  if (artists >= 10000) {
    spec.train = 17;
    spec.val = 1;
  }
  return spec;
}

SplitCounts count_splits(const Catalog& catalog) {
  SplitCounts counts;
  for (const auto& t : catalog.tracks) {
    switch (t.split) {
      case Split::train: ++counts.train; break;
      case Split::val: ++counts.val; break;
      case Split::test: ++counts.test; break;
      case Split::unassigned: ++counts.unassigned; break;
    }
  }
  return counts;
}

Catalog make_splits(const Catalog& catalog, const SplitSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::map<std::string, std::vector<std::size_t>> by_artist;
  for (std::size_t i = 0; i < catalog.tracks.size(); ++i) by_artist[catalog.tracks[i].artist_id].push_back(i);

  std::vector<const std::vector<std::size_t>*> eligible;
  for (auto& [artist, tracks] : by_artist) {
    std::sort(tracks.begin(), tracks.end(),
              [&](std::size_t a, std::size_t b) { return catalog.tracks[a].track_id < catalog.tracks[b].track_id; });
    if (static_cast<int>(tracks.size()) >= spec.songs_per_artist) eligible.push_back(&tracks);
  }
  const std::size_t wanted = spec.artist_set_size > 0 ? static_cast<std::size_t>(spec.artist_set_size) : eligible.size();
  if (eligible.empty() || eligible.size() < wanted) {
    throw Error("insufficient artists", std::to_string(eligible.size()) + " artists have at least " +
                                            std::to_string(spec.songs_per_artist) + " songs, " +
                                            std::to_string(wanted) + " required");
  }

  nn::Rng rng(seed);
  if (wanted < eligible.size()) {
    std::shuffle(eligible.begin(), eligible.end(), rng);
    eligible.resize(wanted);
    std::sort(eligible.begin(), eligible.end(), [&](const auto* a, const auto* b) {
      return catalog.tracks[a->front()].artist_id < catalog.tracks[b->front()].artist_id;
    });
  }

  Catalog out = catalog;
  for (auto& t : out.tracks) t.split = Split::unassigned;
  for (const auto* tracks : eligible) {
    std::vector<std::size_t> order = *tracks;
    std::shuffle(order.begin(), order.end(), rng);
    for (int k = 0; k < spec.songs_per_artist; ++k) {
      Split s = k < spec.train ? Split::train : k < spec.train + spec.val ? Split::val : Split::test;
      out.tracks[order[static_cast<std::size_t>(k)]].split = s;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Windows

nn::Rng batch_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return nn::Rng(seq);
}

dsp::AudioClip context_window_at(const dsp::AudioClip& clip, std::size_t offset) {
  if (clip.samples.size() < dsp::kContextSamples) throw Error("clip shorter than context");
  if (offset + dsp::kContextSamples > clip.samples.size()) throw Error("window out of range");
  dsp::AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                     clip.samples.begin() + static_cast<std::ptrdiff_t>(offset + dsp::kContextSamples));
  return out;
}

dsp::AudioClip sample_context_window(const dsp::AudioClip& clip, nn::Rng& rng) {
  if (clip.samples.size() < dsp::kContextSamples) throw Error("clip shorter than context");
  std::uniform_int_distribution<std::size_t> pick(0, clip.samples.size() - dsp::kContextSamples);
  return context_window_at(clip, pick(rng));
}

std::size_t centre_offset(std::size_t clip_samples) {
  if (clip_samples < dsp::kContextSamples) throw Error("clip shorter than context");
  return (clip_samples - dsp::kContextSamples) / 2 / dsp::kHopSize * dsp::kHopSize;
}

std::size_t aligned_random_offset(std::size_t clip_samples, nn::Rng& rng) {
  if (clip_samples < dsp::kContextSamples) throw Error("clip shorter than context");
  std::uniform_int_distribution<std::size_t> pick(0, (clip_samples - dsp::kContextSamples) / dsp::kHopSize);
  return pick(rng) * dsp::kHopSize;
}

dsp::AudioClip AudioStore::read(std::size_t track_index) const {
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(track_index); it != cache_.end() && it->second) return *it->second;
  }
  const auto& track = catalog_->tracks.at(track_index);
  try {
    return wav::read(catalog_->resolve(track));
  } catch (const Error& e) {
    throw Error(e.what(), "track " + track.track_id);
  }
}

const dsp::AudioClip& AudioStore::clip(std::size_t track_index) {
  std::lock_guard lock(mutex_);
  auto& slot = cache_[track_index];
  if (!slot) {
    const auto& track = catalog_->tracks.at(track_index);
    try {
      slot = std::make_unique<dsp::AudioClip>(wav::read(catalog_->resolve(track)));
    } catch (const Error& e) {
      cache_.erase(track_index);
      throw Error(e.what(), "track " + track.track_id);
    }
  }
  return *slot;
}

dsp::MelSpectrogram window_features(const dsp::AudioClip& window, const dsp::NormStats& stats,
                                    const std::string& track_id) {
  try {
    return dsp::standardize(dsp::log_mel(window), stats);
  } catch (const Error& e) {
    throw Error(e.what(), "track " + track_id);
  }
}

dsp::NormStats training_norm_stats(const Catalog& catalog, AudioStore& store, const std::vector<std::size_t>& tracks) {
  // Per-clip two-pass moments merged pairwise, one clip in memory at a time.
  double count = 0.0, mean = 0.0, m2 = 0.0;
  for (std::size_t t : tracks) {
    dsp::MelSpectrogram mel;
    try {
      mel = dsp::log_mel(store.read(t));
    } catch (const Error& e) {
      throw Error(e.what(), "track " + catalog.tracks[t].track_id);
    }
    const auto n = static_cast<double>(mel.values.size());
    const double clip_mean = mel.values.mean();
    const double clip_m2 = (mel.values.array() - clip_mean).square().sum();
    const double total = count + n;
    const double delta = clip_mean - mean;
    mean += delta * n / total;
    m2 += clip_m2 + delta * delta * count * n / total;
    count = total;
  }
  if (count == 0.0) throw Error("no training data");
  const double std = std::sqrt(m2 / count);
  if (!(std > 0.0) || !std::isfinite(std)) throw Error("degenerate training data");
  return {mean, std};
}

const FeatureCache::Entry& FeatureCache::entry(std::size_t track) {
  std::lock_guard lock(mutex_);
  auto& slot = cache_[track];
  if (!slot) {
    const auto clip = store_->read(track);
    auto e = std::make_unique<Entry>();
    e->features = window_features(clip, stats_, catalog_->tracks[track].track_id).values.cast<float>();
    e->samples = clip.samples.size();
    slot = std::move(e);
  }
  return *slot;
}

std::size_t FeatureCache::clip_samples(std::size_t track) { return entry(track).samples; }

dsp::MelSpectrogram FeatureCache::window(std::size_t track, std::size_t offset) {
  const auto& e = entry(track);
  if (offset % dsp::kHopSize != 0) throw Error("window out of range", "offset not hop-aligned");
  if (offset + dsp::kContextSamples > e.samples) throw Error("window out of range");
  dsp::MelSpectrogram mel;
  mel.values = e.features.middleCols(static_cast<Eigen::Index>(offset / dsp::kHopSize), dsp::kContextFrames)
                   .cast<double>();
  mel.standardized = true;
  return mel;
}

// ---------------------------------------------------------------------------
// Labels and samplers

LabelIndex::LabelIndex(std::vector<std::string> labels) {
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  names_ = std::move(labels);
  for (std::size_t i = 0; i < names_.size(); ++i) ids_[names_[i]] = static_cast<int>(i);
}

int LabelIndex::id(const std::string& label) const {
  const auto it = ids_.find(label);
  if (it == ids_.end()) throw Error("bad label", label);
  return it->second;
}

LabelIndex artist_index(const Catalog& catalog, const std::vector<std::size_t>& tracks) {
  std::vector<std::string> names;
  for (std::size_t t : tracks) names.push_back(catalog.tracks[t].artist_id);
  return LabelIndex(std::move(names));
}

LabelIndex tag_index(const Catalog& catalog, const std::vector<std::size_t>& tracks) {
  std::vector<std::string> names;
  for (std::size_t t : tracks) names.insert(names.end(), catalog.tracks[t].tags.begin(), catalog.tracks[t].tags.end());
  return LabelIndex(std::move(names));
}

namespace {

dsp::MelSpectrogram random_window(const TrainingView& view, std::size_t track, nn::Rng& rng) {
  const std::string& id = view.catalog->tracks[track].track_id;
  if (view.cache) {
    try {
      return view.cache->window(track, aligned_random_offset(view.cache->clip_samples(track), rng));
    } catch (const Error& e) {
      throw Error(e.what(), "track " + id);
    }
  }
  const auto& clip = view.store->clip(track);
  dsp::AudioClip window;
  try {
    window = sample_context_window(clip, rng);
  } catch (const Error& e) {
    throw Error(e.what(), "track " + id);
  }
  return window_features(window, view.stats, id);
}

}  // namespace

dsp::MelSpectrogram centre_window(const TrainingView& view, std::size_t track) {
  const std::string& id = view.catalog->tracks[track].track_id;
  try {
    if (view.cache) return view.cache->window(track, centre_offset(view.cache->clip_samples(track)));
    const auto& clip = view.store->clip(track);
    return window_features(context_window_at(clip, centre_offset(clip.samples.size())), view.stats, id);
  } catch (const Error& e) {
    throw Error(e.what(), "track " + id);
  }
}

BasicBatch next_basic_batch(const TrainingView& view, std::size_t batch_size, nn::Rng& rng) {
  if (view.tracks.empty()) throw Error("no training data");
  BasicBatch batch;
  std::uniform_int_distribution<std::size_t> pick(0, view.tracks.size() - 1);
  for (std::size_t b = 0; b < batch_size; ++b) batch.tracks.push_back(view.tracks[pick(rng)]);
  if (view.tags.size() > 0) {
    batch.tag_targets = nn::Matrix<float>::Zero(static_cast<Eigen::Index>(view.tags.size()),
                                                static_cast<Eigen::Index>(batch_size));
  }
  for (std::size_t b = 0; b < batch_size; ++b) {
    const auto& track = view.catalog->tracks[batch.tracks[b]];
    batch.labels.push_back(view.artists.size() > 0 ? view.artists.id(track.artist_id) : 0);
    for (const auto& tag : track.tags) {
      if (view.tags.size() > 0) batch.tag_targets(view.tags.id(tag), static_cast<Eigen::Index>(b)) = 1.0f;
    }
    batch.mels.push_back(random_window(view, batch.tracks[b], rng));
  }
  return batch;
}

TripletSampler::TripletSampler(const Catalog& catalog, const std::vector<std::size_t>& tracks, int n_negatives)
    : catalog_(&catalog), n_negatives_(n_negatives) {
  if (n_negatives < 1) throw Error("invalid negative count");
  std::map<std::string, std::vector<std::size_t>> grouped;
  for (std::size_t t : tracks) grouped[catalog.tracks[t].artist_id].push_back(t);
  std::size_t singletons = 0;
  for (auto& [artist, list] : grouped) {
    const std::size_t a = artists_.size();
    artists_.push_back(artist);
    for (std::size_t t : list) artist_of_track_[t] = a;
    if (list.size() >= 2) {
      anchor_pool_.insert(anchor_pool_.end(), list.begin(), list.end());
    } else {
      ++singletons;
    }
    tracks_by_artist_.push_back(std::move(list));
  }
  if (artists_.size() < static_cast<std::size_t>(n_negatives) + 1 || anchor_pool_.empty()) {
    throw Error("insufficient artists", std::to_string(artists_.size()) + " artists for " +
                                            std::to_string(n_negatives) + " negatives");
  }
  if (singletons > 0) {
    static std::once_flag warned;
    std::call_once(warned, [&] {
      std::cerr << "warning: " << singletons << " artist(s) with a single track excluded from anchors\n";
    });
  }
}

const std::string& TripletSampler::artist_of(std::size_t track) const {
  return artists_.at(artist_of_track_.at(track));
}

std::vector<TripletIndices> TripletSampler::sample(std::size_t batch_size, nn::Rng& rng) const {
  std::vector<TripletIndices> out;
  out.reserve(batch_size);
  std::vector<std::size_t> others;
  for (std::size_t b = 0; b < batch_size; ++b) {
    TripletIndices tri;
    tri.anchor = anchor_pool_[std::uniform_int_distribution<std::size_t>(0, anchor_pool_.size() - 1)(rng)];
    const std::size_t artist = artist_of_track_.at(tri.anchor);
    const auto& own = tracks_by_artist_[artist];
    // Uniform over the artist's other tracks.
    std::size_t k = std::uniform_int_distribution<std::size_t>(0, own.size() - 2)(rng);
    const auto anchor_pos = static_cast<std::size_t>(std::find(own.begin(), own.end(), tri.anchor) - own.begin());
    if (k >= anchor_pos) ++k;
    tri.positive = own[k];

    // Partial Fisher-Yates over the other artists.
    others.clear();
    for (std::size_t a = 0; a < artists_.size(); ++a) {
      if (a != artist) others.push_back(a);
    }
    for (int n = 0; n < n_negatives_; ++n) {
      const auto i = static_cast<std::size_t>(n);
      std::swap(others[i], others[std::uniform_int_distribution<std::size_t>(i, others.size() - 1)(rng)]);
      const auto& pool = tracks_by_artist_[others[i]];
      tri.negatives.push_back(pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)]);
    }
    out.push_back(std::move(tri));
  }
  return out;
}

TripletBatch next_siamese_batch(const TrainingView& view, const TripletSampler& sampler, std::size_t batch_size,
                                nn::Rng& rng) {
  TripletBatch batch;
  batch.indices = sampler.sample(batch_size, rng);
  for (const auto& tri : batch.indices) {
    batch.anchor_artists.push_back(sampler.artist_of(tri.anchor));
    batch.anchors.push_back(random_window(view, tri.anchor, rng));
    batch.positives.push_back(random_window(view, tri.positive, rng));
    for (std::size_t n : tri.negatives) batch.negatives.push_back(random_window(view, n, rng));
  }
  return batch;
}

TripletBatch centre_triplets(const TrainingView& view, const TripletSampler& sampler,
                             const std::vector<TripletIndices>& indices) {
  TripletBatch batch;
  batch.indices = indices;
  for (const auto& tri : indices) {
    batch.anchor_artists.push_back(sampler.artist_of(tri.anchor));
    batch.anchors.push_back(centre_window(view, tri.anchor));
    batch.positives.push_back(centre_window(view, tri.positive));
    for (std::size_t n : tri.negatives) batch.negatives.push_back(centre_window(view, n));
  }
  return batch;
}

}  // namespace artistembed::data
