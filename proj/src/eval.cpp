#include "artistembed/eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "artistembed/error.hpp"
#include "artistembed/nn/losses.hpp"
#include "artistembed/wav.hpp"

namespace artistembed::eval {

using nlohmann::json;

void EmbeddingMatrix::validate() const {
  if (static_cast<std::size_t>(rows.rows()) != ids.size() || labels.size() != ids.size()) {
    throw Error("shape error", "embedding rows, ids and labels disagree in length");
  }
  if (!rows.allFinite()) throw Error("numerical failure", "non-finite embedding entry");
  std::set<std::string> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) throw Error("shape error", "duplicate song id '" + id + "'");
  }
}

Eigen::VectorXd extract_song_embedding(const dsp::AudioClip& clip, model::ArtistNet& net, const dsp::NormStats& stats,
                                       std::ostream* warn) {
  const std::size_t available = clip.samples.size() / dsp::kContextSamples;
  if (available == 0) throw Error("clip too short", std::to_string(clip.samples.size()) + " samples, need 66150");
  const std::size_t segments = std::min<std::size_t>(available, kSongSegments);
  if (segments < kSongSegments && warn) {
    *warn << "warning: clip shorter than 30 s, using " << segments << " segment(s)\n";
  }
  std::vector<dsp::MelSpectrogram> mels;
  mels.reserve(segments);
  for (std::size_t i = 0; i < segments; ++i) {
    mels.push_back(dsp::standardize(dsp::log_mel(data::context_window_at(clip, i * dsp::kContextSamples)), stats));
  }
  const Eigen::MatrixXd windows = model::embed_windows(net, mels).cast<double>();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(windows.rows());
  for (Eigen::Index i = 0; i < windows.cols(); ++i) mean += windows.col(i);
  return mean / static_cast<double>(windows.cols());
}

EmbeddingMatrix extract_embeddings(const data::Catalog& catalog, const std::vector<std::size_t>& tracks,
                                   model::ArtistNet& net, const dsp::NormStats& stats, LabelField field,
                                   std::ostream* warn) {
  EmbeddingMatrix emb;
  emb.rows.resize(static_cast<Eigen::Index>(tracks.size()), net.spec().embedding_dim);
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const auto& rec = catalog.tracks[tracks[i]];
    dsp::AudioClip clip;
    try {
      clip = wav::read(catalog.resolve(rec));
      emb.rows.row(static_cast<Eigen::Index>(i)) = extract_song_embedding(clip, net, stats, warn).transpose();
    } catch (const Error& e) {
      throw Error(e.what(), "track " + rec.track_id);
    }
    emb.ids.push_back(rec.track_id);
    emb.labels.push_back(field == LabelField::artist ? rec.artist_id : rec.genre.value_or(""));
  }
  emb.validate();
  return emb;
}

std::optional<double> average_precision(std::span<const int> relevance, std::size_t n_relevant) {
  if (n_relevant == 0) return std::nullopt;
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < relevance.size(); ++k) {
    if (relevance[k] != 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return sum / static_cast<double>(n_relevant);
}

namespace {

double cosine(const Eigen::MatrixXd& rows, Eigen::Index a, const Eigen::VectorXd& b) {
  return nn::cosine_relevance<double>(rows.row(a).transpose(), b);
}

}  // namespace

MapResult mean_average_precision(const EmbeddingMatrix& emb) {
  emb.validate();
  const std::size_t n = emb.size();
  if (n < 2) throw Error("no relevant pairs", "need at least two songs");
  MapResult result;
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<std::pair<double, std::size_t>> scored;
  std::vector<int> relevance;
  for (std::size_t q = 0; q < n; ++q) {
    const Eigen::VectorXd query = emb.rows.row(static_cast<Eigen::Index>(q)).transpose();
    scored.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != q) scored.emplace_back(cosine(emb.rows, static_cast<Eigen::Index>(j), query), j);
    }
    std::sort(scored.begin(), scored.end(), [&](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return emb.ids[x.second] < emb.ids[y.second];
    });
    relevance.clear();
    std::size_t n_relevant = 0;
    for (const auto& [_, j] : scored) {
      const int rel = emb.labels[j] == emb.labels[q] ? 1 : 0;
      relevance.push_back(rel);
      n_relevant += static_cast<std::size_t>(rel);
    }
    const auto ap = average_precision(relevance, n_relevant);
    result.per_query.push_back(ap);
    if (ap) {
      total += *ap;
      ++counted;
    } else {
      ++result.skipped;
    }
  }
  if (counted == 0) throw Error("no relevant pairs", "every query was skipped");
  result.map = total / static_cast<double>(counted);
  return result;
}

std::string knn_classify(const EmbeddingMatrix& train, const Eigen::VectorXd& query, int k) {
  if (train.size() == 0) throw Error("no reference data");
  if (k < 1 || static_cast<std::size_t>(k) > train.size()) {
    throw Error("invalid k", "k=" + std::to_string(k) + " with " + std::to_string(train.size()) + " reference rows");
  }
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(train.size());
  for (std::size_t j = 0; j < train.size(); ++j) {
    scored.emplace_back(cosine(train.rows, static_cast<Eigen::Index>(j), query), j);
  }
  std::partial_sort(scored.begin(), scored.begin() + k, scored.end(), [&](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return train.ids[x.second] < train.ids[y.second];
  });
  struct Vote {
    int count = 0;
    double distance = 0.0;
  };
  std::map<std::string, Vote> votes;
  for (int i = 0; i < k; ++i) {
    auto& v = votes[train.labels[scored[static_cast<std::size_t>(i)].second]];
    ++v.count;
    v.distance += 1.0 - scored[static_cast<std::size_t>(i)].first;
  }
  // std::map iterates in label order, so strict comparisons keep the
  // lexicographically smallest label on a full tie.
  const std::string* best = nullptr;
  Vote best_vote;
  for (const auto& [label, v] : votes) {
    const double mean = v.distance / v.count;
    if (!best || v.count > best_vote.count ||
        (v.count == best_vote.count && mean < best_vote.distance / best_vote.count)) {
      best = &label;
      best_vote = v;
    }
  }
  return *best;
}

ProbeResult train_linear_probe(const EmbeddingMatrix& train, const EmbeddingMatrix& test, const ProbeOptions& options) {
  train.validate();
  test.validate();
  if (train.rows.cols() != test.rows.cols()) throw Error("shape error", "train and test embedding widths differ");
  std::vector<std::string> classes(train.labels.begin(), train.labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw Error("degenerate labels", "linear probe needs at least two classes");
  std::map<std::string, Eigen::Index> class_id;
  for (std::size_t c = 0; c < classes.size(); ++c) class_id[classes[c]] = static_cast<Eigen::Index>(c);

  // Per-dimension standardisation by train statistics.
  const Eigen::RowVectorXd mean = train.rows.colwise().mean();
  Eigen::RowVectorXd scale = ((train.rows.rowwise() - mean).array().square().colwise().mean()).sqrt();
  for (Eigen::Index d = 0; d < scale.size(); ++d) scale(d) = scale(d) > 0.0 ? 1.0 / scale(d) : 1.0;
  const Eigen::MatrixXd x = ((train.rows.rowwise() - mean).array().rowwise() * scale.array()).matrix().transpose();
  const Eigen::MatrixXd x_test = ((test.rows.rowwise() - mean).array().rowwise() * scale.array()).matrix().transpose();

  const auto c = static_cast<Eigen::Index>(classes.size());
  const Eigen::Index n = x.cols();
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(c, n);
  for (Eigen::Index i = 0; i < n; ++i) y(class_id.at(train.labels[static_cast<std::size_t>(i)]), i) = 1.0;

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(c, x.rows());
  Eigen::VectorXd b = Eigen::VectorXd::Zero(c);
  const auto objective = [&](Eigen::MatrixXd* probs) {
    Eigen::MatrixXd logits = (w * x).colwise() + b;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double top = logits.col(i).maxCoeff();
      logits.col(i) = (logits.col(i).array() - top).exp().matrix();
      const double z = logits.col(i).sum();
      logits.col(i) /= z;
      loss -= std::log(std::max((logits.col(i).array() * y.col(i).array()).sum(), 1e-300));
    }
    if (probs) *probs = std::move(logits);
    return loss / static_cast<double>(n) + 0.5 * options.l2 * w.squaredNorm();
  };

  ProbeResult result;
  Eigen::MatrixXd probs;
  for (int it = 0; it < options.iterations; ++it) {
    result.loss_trace.push_back(objective(&probs));
    const Eigen::MatrixXd d_logits = (probs - y) / static_cast<double>(n);
    w -= options.learning_rate * (d_logits * x.transpose() + options.l2 * w);
    b -= options.learning_rate * d_logits.rowwise().sum();
  }
  result.loss_trace.push_back(objective(nullptr));

  const Eigen::MatrixXd scores = (w * x_test).colwise() + b;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < scores.cols(); ++i) {
    Eigen::Index best;
    scores.col(i).maxCoeff(&best);
    result.predictions.push_back(classes[static_cast<std::size_t>(best)]);
    correct += result.predictions.back() == test.labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  result.accuracy = test.size() ? static_cast<double>(correct) / static_cast<double>(test.size()) : 0.0;
  return result;
}

GenreTable per_genre_breakdown(const std::vector<std::string>& predictions, const std::vector<std::string>& labels) {
  if (predictions.size() != labels.size()) {
    throw Error("shape error", std::to_string(predictions.size()) + " predictions for " +
                                   std::to_string(labels.size()) + " labels");
  }
  std::map<std::string, GenreRow> rows;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& row = rows[labels[i]];
    row.label = labels[i];
    ++row.support;
    if (predictions[i] == labels[i]) {
      ++row.correct;
      ++correct;
    }
  }
  GenreTable table;
  for (auto& [_, row] : rows) {
    row.accuracy = static_cast<double>(row.correct) / static_cast<double>(row.support);
    table.rows.push_back(row);
  }
  table.overall = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
  return table;
}

void export_embeddings(const EmbeddingMatrix& emb, const std::filesystem::path& path, ExportFormat format) {
  emb.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("disk write failure", path.string());
  if (format == ExportFormat::csv) {
    out << "song_id,label";
    for (Eigen::Index d = 0; d < emb.rows.cols(); ++d) out << ",e" << d;
    out << "\n" << std::setprecision(9);
    for (std::size_t i = 0; i < emb.size(); ++i) {
      out << emb.ids[i] << "," << emb.labels[i];
      for (Eigen::Index d = 0; d < emb.rows.cols(); ++d) out << "," << static_cast<float>(emb.rows(static_cast<Eigen::Index>(i), d));
      out << "\n";
    }
  } else {
    const auto put_u32 = [&](std::uint32_t v) {
      const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
      out.write(reinterpret_cast<const char*>(b), 4);
    };
    put_u32(static_cast<std::uint32_t>(emb.size()));
    put_u32(static_cast<std::uint32_t>(emb.rows.cols()));
    for (Eigen::Index i = 0; i < emb.rows.rows(); ++i) {
      for (Eigen::Index d = 0; d < emb.rows.cols(); ++d) put_u32(std::bit_cast<std::uint32_t>(static_cast<float>(emb.rows(i, d))));
    }
  }
  if (!out) throw Error("disk write failure", path.string());
}

EmbeddingMatrix import_embeddings(const std::filesystem::path& path, ExportFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("missing file", path.string());
  EmbeddingMatrix emb;
  if (format == ExportFormat::csv) {
    std::string line;
    std::getline(in, line);
    if (line.rfind("song_id,label", 0) != 0) throw Error("malformed embeddings", "bad csv header");
    const auto dim = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') - 1);
    std::vector<std::vector<double>> values;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream row(line);
      std::string cell;
      std::getline(row, cell, ',');
      emb.ids.push_back(cell);
      std::getline(row, cell, ',');
      emb.labels.push_back(cell);
      auto& v = values.emplace_back();
      while (std::getline(row, cell, ',')) v.push_back(std::stod(cell));
      if (static_cast<Eigen::Index>(v.size()) != dim) throw Error("malformed embeddings", "row width mismatch");
    }
    emb.rows.resize(static_cast<Eigen::Index>(values.size()), dim);
    for (std::size_t i = 0; i < values.size(); ++i) {
      for (Eigen::Index d = 0; d < dim; ++d) emb.rows(static_cast<Eigen::Index>(i), d) = values[i][static_cast<std::size_t>(d)];
    }
  } else {
    const auto get_u32 = [&]() {
      unsigned char b[4];
      if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error("malformed embeddings", "truncated raw file");
      return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
             static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
    };
    const std::uint32_t count = get_u32();
    const std::uint32_t dim = get_u32();
    emb.rows.resize(count, dim);
    for (std::uint32_t i = 0; i < count; ++i) {
      for (std::uint32_t d = 0; d < dim; ++d) emb.rows(i, d) = std::bit_cast<float>(get_u32());
      emb.ids.push_back(std::to_string(i));
      emb.labels.emplace_back();
    }
    if (in.peek() != std::char_traits<char>::eof()) throw Error("malformed embeddings", "trailing bytes");
  }
  return emb;
}

json to_json(const EvalReport& report, bool include_per_query) {
  json j = json::object();
  j["config"] = report.config;
  if (report.map) {
    j["map"] = {{"value", report.map->map}, {"skipped", report.map->skipped}};
    if (include_per_query) {
      json aps = json::array();
      for (const auto& ap : report.map->per_query) aps.push_back(ap ? json(*ap) : json(nullptr));
      j["map"]["per_query"] = aps;
    }
  }
  if (report.knn_accuracy) {
    j["knn"] = {{"accuracy", *report.knn_accuracy}, {"k", report.k}, {"tie_policy", "mean_cosine_distance_then_label"}};
  }
  if (report.probe) {
    j["probe"] = {{"accuracy", report.probe->accuracy},
                  {"iterations", static_cast<int>(report.probe->loss_trace.size()) - 1},
                  {"final_loss", report.probe->loss_trace.empty() ? 0.0 : report.probe->loss_trace.back()}};
  }
  if (report.per_genre) {
    json rows = json::array();
    for (const auto& r : report.per_genre->rows) {
      rows.push_back({{"label", r.label}, {"accuracy", r.accuracy}, {"correct", r.correct}, {"support", r.support}});
    }
    j["per_genre"] = {{"rows", rows}, {"overall", report.per_genre->overall}};
  }
  return j;
}

}  // namespace artistembed::eval
