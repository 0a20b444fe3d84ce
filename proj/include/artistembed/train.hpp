#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "artistembed/data.hpp"
#include "artistembed/model.hpp"

namespace artistembed::train {

enum class TrainMode { basic_artist, basic_tag, siamese };
enum class TagLoss { multilabel, softmax };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

struct PlateauConfig {
  double factor = 0.2;
  int patience = 3;
  double min_lr = 1e-5;
  double min_delta = 1e-4;
};

struct TrainConfig {
  TrainMode mode = TrainMode::basic_artist;
  /// Unset means the mode default: 0.015 for basic models, 0.1 for Siamese.
  std::optional<double> initial_lr;
  double momentum = 0.9;
  double decay = 1e-6;
  double dropout = 0.5;
  double margin = 0.4;
  int negatives = 4;
  int batch_size = 64;
  int max_epochs = 50;
  /// 0 means ceil(train tracks / batch_size).
  int steps_per_epoch = 0;
  PlateauConfig plateau;
  int early_stop_patience = 10;
  std::uint64_t seed = 0;
  TagLoss tag_loss = TagLoss::multilabel;
  /// Reuse the same batch sequence every epoch.
  bool fixed_batches = false;
  /// Serve hop-aligned windows from cached full-clip log-mels.
  bool feature_cache = true;

  double learning_rate() const;
  /// Throws "invalid config" naming the field.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Unknown keys throw "invalid config".
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::optional<double> val_acc;
  double lr = 0.0;
  double seconds = 0.0;
  /// Validation loss per tag (multi-label tag training only; not in the CSV).
  std::vector<double> val_tag_loss;
};

struct History {
  std::vector<EpochRecord> epochs;

  /// epoch,train_loss,val_loss,val_acc,lr,seconds
  std::string to_csv() const;
  static History from_csv(const std::string& text);
  /// Digest over every column except wall-clock seconds.
  std::string digest() const;
};

struct PlateauState {
  double best = 0.0;
  int wait = 0;
  bool started = false;
};

/// Reduce-on-plateau: when the validation loss has not improved on the best
/// seen by at least min_delta for `patience` consecutive epochs, the rate
/// drops to max(lr * factor, min_lr) and the counter resets.
double plateau_step(double val_loss, PlateauState& state, double lr, const PlateauConfig& config);
/// Feeds the last recorded epoch of `history`. Throws if history is empty.
double plateau_step(const History& history, PlateauState& state, double lr, const PlateauConfig& config);

struct TrainOptions {
  /// Best-so-far checkpoint is rewritten here on every improvement.
  std::optional<std::filesystem::path> checkpoint_path;
  /// Progress lines; nullptr silences them.
  std::ostream* progress = nullptr;
};

struct TrainResult {
  model::ArtistNet net;  // best-validation parameters
  dsp::NormStats stats;
  History history;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  nlohmann::json metadata;
};

/// Artist-softmax or tag-head training with categorical (or sigmoid) cross
/// entropy. Throws "divergence" on a non-finite loss.
TrainResult train_basic(model::ArtistNet net, const data::Catalog& catalog, const TrainConfig& config,
                        const TrainOptions& options = {});

/// Shared-weight triplet training with the max-margin loss over negatives.
TrainResult train_siamese(model::ArtistNet net, const data::Catalog& catalog, const TrainConfig& config,
                          const TrainOptions& options = {});

/// Dispatches on config.mode, building the network with the right head.
TrainResult train(const data::Catalog& catalog, const TrainConfig& config, const TrainOptions& options = {},
                  const model::ArchSpec& backbone = {});

/// One triplet step's forward and backward pass. Every window of the batch
/// goes through the shared network in a single pass; each triplet draws one
/// dropout mask that its anchor, positive and negatives share. Returns the
/// mean loss over anchors and leaves parameter gradients in `net`.
template <class T>
double siamese_objective(model::ArtistNetT<T>& net, nn::Dropout<T>& dropout, const data::TripletBatch& batch,
                         double margin, nn::Rng& rng);

struct ClassifierScore {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean cross-entropy and accuracy on centred windows (inference mode).
ClassifierScore evaluate_artist_classifier(model::ArtistNet& net, const data::TrainingView& view,
                                           const std::vector<std::size_t>& tracks);

/// Mean margin loss of fixed triplets on centred windows (inference mode).
double evaluate_triplets(model::ArtistNet& net, const data::TrainingView& view, const data::TripletSampler& sampler,
                         const std::vector<data::TripletIndices>& triplets, double margin);

/// Loss of one basic step on a fixed batch followed by an update, repeated;
/// returns the loss before each update and after the last one. Dropout masks
/// are redrawn from the same seed each time so the objective is fixed.
std::vector<double> fixed_batch_descent_basic(model::ArtistNet& net, const data::BasicBatch& batch,
                                              const TrainConfig& config, int steps);
std::vector<double> fixed_batch_descent_siamese(model::ArtistNet& net, const data::TripletBatch& batch,
                                                const TrainConfig& config, int steps);

}  // namespace artistembed::train
