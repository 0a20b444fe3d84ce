#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "artistembed/data.hpp"
#include "artistembed/model.hpp"

namespace artistembed::eval {

inline constexpr int kSongSegments = 10;
inline constexpr int kDefaultK = 20;

/// One embedding per song, stored as rows.
struct EmbeddingMatrix {
  Eigen::MatrixXd rows;  // songs x dim
  std::vector<std::string> ids;
  std::vector<std::string> labels;
  std::string source_digest;

  std::size_t size() const { return ids.size(); }
  /// Throws "shape error" or "numerical failure" on a broken matrix.
  void validate() const;
};

/// Mean of the infer-mode embeddings of consecutive non-overlapping 3 s
/// segments (at most ten). Clips shorter than 30 s use every whole segment
/// and log a warning to `warn`. Throws "clip too short" below 3 s.
Eigen::VectorXd extract_song_embedding(const dsp::AudioClip& clip, model::ArtistNet& net, const dsp::NormStats& stats,
                                       std::ostream* warn = nullptr);

/// Which catalog field labels each song.
enum class LabelField { genre, artist };

/// Song embeddings of `tracks`, labelled by `field` (empty when missing).
EmbeddingMatrix extract_embeddings(const data::Catalog& catalog, const std::vector<std::size_t>& tracks,
                                   model::ArtistNet& net, const dsp::NormStats& stats, LabelField field,
                                   std::ostream* warn = nullptr);

/// Average precision of a ranked 0/1 relevance list. nullopt when
/// n_relevant is zero (the query is skipped).
std::optional<double> average_precision(std::span<const int> relevance, std::size_t n_relevant);

struct MapResult {
  double map = 0.0;
  std::vector<std::optional<double>> per_query;
  std::size_t skipped = 0;
};

/// Every song queries the rest, ranked by descending cosine with ties on
/// ascending song id; same label means relevant. Throws "no relevant pairs".
MapResult mean_average_precision(const EmbeddingMatrix& emb);

/// Majority label among the k nearest rows by cosine. Ties go to the label
/// with the smallest mean cosine distance, then to the smaller label.
/// Throws "no reference data".
std::string knn_classify(const EmbeddingMatrix& train, const Eigen::VectorXd& query, int k = kDefaultK);

struct ProbeOptions {
  double learning_rate = 0.1;
  int iterations = 500;
  double l2 = 1e-4;
};

struct ProbeResult {
  double accuracy = 0.0;
  std::vector<std::string> predictions;
  /// Training objective before each update and after the last one.
  std::vector<double> loss_trace;
};

/// Multinomial logistic regression on standardised frozen embeddings,
/// full-batch gradient descent. Throws "degenerate labels" with one class.
ProbeResult train_linear_probe(const EmbeddingMatrix& train, const EmbeddingMatrix& test,
                               const ProbeOptions& options = {});

struct GenreRow {
  std::string label;
  std::size_t correct = 0;
  std::size_t support = 0;
  double accuracy = 0.0;
};

struct GenreTable {
  std::vector<GenreRow> rows;  // sorted by label
  double overall = 0.0;
};

/// Throws "shape error" when the lists differ in length.
GenreTable per_genre_breakdown(const std::vector<std::string>& predictions, const std::vector<std::string>& labels);

enum class ExportFormat { csv, raw };

/// csv: header song_id,label,e0..e{dim-1}; raw: u32 count, u32 dim, float32
/// values row by row (little-endian). Throws "disk write failure".
void export_embeddings(const EmbeddingMatrix& emb, const std::filesystem::path& path, ExportFormat format);
/// Raw files carry no ids or labels; they come back as "0", "1", ... and "".
EmbeddingMatrix import_embeddings(const std::filesystem::path& path, ExportFormat format);

struct EvalReport {
  std::optional<MapResult> map;
  std::optional<double> knn_accuracy;
  int k = kDefaultK;
  std::optional<ProbeResult> probe;
  std::optional<GenreTable> per_genre;
  nlohmann::json config;
};

nlohmann::json to_json(const EvalReport& report, bool include_per_query = false);

}  // namespace artistembed::eval
