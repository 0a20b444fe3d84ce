#include "artistembed/train.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "artistembed/error.hpp"
#include "artistembed/nn/losses.hpp"
#include "artistembed/nn/optim.hpp"

namespace artistembed::train {

using nlohmann::json;
using nn::Matrix;
using nn::Mode;

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::basic_artist: return "basic-artist";
    case TrainMode::basic_tag: return "basic-tag";
    case TrainMode::siamese: return "siamese";
  }
  return "basic-artist";
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "basic-artist" || name == "basic_artist") return TrainMode::basic_artist;
  if (name == "basic-tag" || name == "basic_tag") return TrainMode::basic_tag;
  if (name == "siamese") return TrainMode::siamese;
  throw Error("invalid config", "unknown mode '" + name + "'");
}

double TrainConfig::learning_rate() const {
  if (initial_lr) return *initial_lr;
  return mode == TrainMode::siamese ? 0.1 : 0.015;
}

void TrainConfig::validate() const {
  const auto fail = [](const std::string& why) { throw Error("invalid config", why); };
  if (!(learning_rate() >= 0.0) || !std::isfinite(learning_rate())) fail("learning_rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (!(decay >= 0.0)) fail("decay must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(margin > 0.0 && margin < 2.0)) fail("margin must lie in (0, 2)");
  if (negatives < 1) fail("negatives must be >= 1");
  if (batch_size < 2) fail("batch_size must be >= 2");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (steps_per_epoch < 0) fail("steps_per_epoch must be >= 0");
  if (!(plateau.factor > 0.0 && plateau.factor < 1.0)) fail("plateau.factor must lie in (0, 1)");
  if (plateau.patience < 1) fail("plateau.patience must be >= 1");
  if (!(plateau.min_lr >= 0.0)) fail("plateau.min_lr must be >= 0");
  if (!(plateau.min_delta >= 0.0)) fail("plateau.min_delta must be >= 0");
  if (early_stop_patience < 1) fail("early_stop_patience must be >= 1");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"mode", to_string(c.mode)},
           {"learning_rate", c.learning_rate()},
           {"momentum", c.momentum},
           {"decay", c.decay},
           {"dropout", c.dropout},
           {"margin", c.margin},
           {"negatives", c.negatives},
           {"batch_size", c.batch_size},
           {"max_epochs", c.max_epochs},
           {"steps_per_epoch", c.steps_per_epoch},
           {"plateau",
            {{"factor", c.plateau.factor},
             {"patience", c.plateau.patience},
             {"min_lr", c.plateau.min_lr},
             {"min_delta", c.plateau.min_delta}}},
           {"early_stop_patience", c.early_stop_patience},
           {"seed", c.seed},
           {"tag_loss", c.tag_loss == TagLoss::multilabel ? "multilabel" : "softmax"},
           {"fixed_batches", c.fixed_batches},
           {"feature_cache", c.feature_cache}};
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw Error("invalid config", where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw Error("invalid config", "unknown key '" + where + key + "'");
  }
}

}  // namespace

void from_json(const json& j, TrainConfig& c) {
  reject_unknown(j,
                 {"mode", "learning_rate", "momentum", "decay", "dropout", "margin", "negatives", "batch_size",
                  "max_epochs", "steps_per_epoch", "plateau", "early_stop_patience", "seed", "tag_loss",
                  "fixed_batches", "feature_cache"},
                 "");
  try {
    TrainConfig d;
    c.mode = train_mode_from_string(j.value("mode", to_string(d.mode)));
    c.initial_lr.reset();
    if (auto it = j.find("learning_rate"); it != j.end() && !it->is_null()) c.initial_lr = it->get<double>();
    c.momentum = j.value("momentum", d.momentum);
    c.decay = j.value("decay", d.decay);
    c.dropout = j.value("dropout", d.dropout);
    c.margin = j.value("margin", d.margin);
    c.negatives = j.value("negatives", d.negatives);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.max_epochs = j.value("max_epochs", d.max_epochs);
    c.steps_per_epoch = j.value("steps_per_epoch", d.steps_per_epoch);
    c.plateau = d.plateau;
    if (auto it = j.find("plateau"); it != j.end()) {
      reject_unknown(*it, {"factor", "patience", "min_lr", "min_delta"}, "plateau.");
      c.plateau.factor = it->value("factor", d.plateau.factor);
      c.plateau.patience = it->value("patience", d.plateau.patience);
      c.plateau.min_lr = it->value("min_lr", d.plateau.min_lr);
      c.plateau.min_delta = it->value("min_delta", d.plateau.min_delta);
    }
    c.early_stop_patience = j.value("early_stop_patience", d.early_stop_patience);
    c.seed = j.value("seed", d.seed);
    const std::string tag_loss = j.value("tag_loss", std::string("multilabel"));
    if (tag_loss != "multilabel" && tag_loss != "softmax") throw Error("invalid config", "tag_loss '" + tag_loss + "'");
    c.tag_loss = tag_loss == "multilabel" ? TagLoss::multilabel : TagLoss::softmax;
    c.fixed_batches = j.value("fixed_batches", d.fixed_batches);
    c.feature_cache = j.value("feature_cache", d.feature_cache);
  } catch (const json::exception& e) {
    throw Error("invalid config", e.what());
  }
}

// ---------------------------------------------------------------------------
// History

namespace {

std::string format_number(double v) {
  std::ostringstream out;
  out << std::setprecision(12) << v;
  return out.str();
}

std::string row_without_seconds(const EpochRecord& e) {
  return std::to_string(e.epoch) + "," + format_number(e.train_loss) + "," + format_number(e.val_loss) + "," +
         (e.val_acc ? format_number(*e.val_acc) : std::string()) + "," + format_number(e.lr);
}

}  // namespace

std::string History::to_csv() const {
  std::string out = "epoch,train_loss,val_loss,val_acc,lr,seconds\n";
  for (const auto& e : epochs) out += row_without_seconds(e) + "," + format_number(e.seconds) + "\n";
  return out;
}

History History::from_csv(const std::string& text) {
  History h;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "epoch,train_loss,val_loss,val_acc,lr,seconds") throw Error("malformed history", "bad header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() == 5 && line.back() == ',') cells.emplace_back();
    if (cells.size() != 6) throw Error("malformed history", line);
    EpochRecord e;
    e.epoch = std::stoi(cells[0]);
    e.train_loss = std::stod(cells[1]);
    e.val_loss = std::stod(cells[2]);
    if (!cells[3].empty()) e.val_acc = std::stod(cells[3]);
    e.lr = std::stod(cells[4]);
    e.seconds = cells[5].empty() ? 0.0 : std::stod(cells[5]);
    h.epochs.push_back(e);
  }
  return h;
}

std::string History::digest() const {
  std::string text;
  for (const auto& e : epochs) text += row_without_seconds(e) + "\n";
  return model::hex64(model::fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
}

double plateau_step(double val_loss, PlateauState& state, double lr, const PlateauConfig& config) {
  if (!state.started || val_loss < state.best - config.min_delta) {
    state.best = state.started ? std::min(state.best, val_loss) : val_loss;
    state.started = true;
    state.wait = 0;
    return lr;
  }
  if (++state.wait >= config.patience) {
    state.wait = 0;
    return std::max(lr * config.factor, config.min_lr) < lr ? std::max(lr * config.factor, config.min_lr) : lr;
  }
  return lr;
}

double plateau_step(const History& history, PlateauState& state, double lr, const PlateauConfig& config) {
  if (history.epochs.empty()) throw Error("invalid config", "plateau_step needs at least one epoch");
  return plateau_step(history.epochs.back().val_loss, state, lr, config);
}

// ---------------------------------------------------------------------------
// Objectives

namespace {

std::vector<const dsp::MelSpectrogram*> pointers(const std::vector<dsp::MelSpectrogram>& mels) {
  std::vector<const dsp::MelSpectrogram*> out;
  out.reserve(mels.size());
  for (const auto& m : mels) out.push_back(&m);
  return out;
}

void check_finite(double loss, const std::string& where) {
  if (!std::isfinite(loss)) throw Error("divergence", where);
}

struct BasicContext {
  TrainMode mode;
  TagLoss tag_loss;
  const data::TrainingView* view;
};

// Forward + backward of one basic batch; gradients are left in the network.
double basic_objective(model::ArtistNet& net, const data::BasicBatch& batch, const BasicContext& ctx, nn::Rng& rng) {
  const auto ptrs = pointers(batch.mels);
  const auto input = model::make_input<float>(ptrs, net.spec().n_mels, net.spec().context_frames);
  net.zero_grad();
  const Matrix<float> embedding = net.forward_backbone(input, Mode::train);
  const Matrix<float> logits = net.forward_head(embedding, Mode::train, rng);
  nn::BatchLoss<float> loss;
  if (ctx.mode == TrainMode::basic_tag && ctx.tag_loss == TagLoss::multilabel) {
    loss = nn::sigmoid_cross_entropy<float>(logits, batch.tag_targets);
  } else if (ctx.mode == TrainMode::basic_tag) {
    std::vector<int> first_tag;
    for (std::size_t t : batch.tracks) {
      const auto& tags = ctx.view->catalog->tracks[t].tags;
      if (tags.empty()) throw Error("bad label", "track " + ctx.view->catalog->tracks[t].track_id + " has no tags");
      first_tag.push_back(ctx.view->tags.id(tags.front()));
    }
    loss = nn::softmax_cross_entropy<float>(logits, first_tag);
  } else {
    loss = nn::softmax_cross_entropy<float>(logits, batch.labels);
  }
  if (!std::isfinite(loss.loss)) return loss.loss;
  net.backward_backbone(net.backward_head(loss.grad));
  return loss.loss;
}

struct Validation {
  double loss = 0.0;
  std::optional<double> accuracy;
  std::vector<double> per_tag;
};

struct LoopHooks {
  std::function<double(std::uint64_t step)> train_step;      // returns batch loss
  std::function<Validation()> validate;
};

class Trainer {
 public:
  Trainer(model::ArtistNet& net, const TrainConfig& config, const TrainOptions& options, const dsp::NormStats& stats)
      : net_(net), config_(config), options_(options), stats_(stats) {}

  TrainResult run(const LoopHooks& hooks, int steps_per_epoch, json metadata) {
    nn::NesterovSgd<float> sgd{config_.momentum, config_.decay};
    state_ = nn::OptState<float>::initial(config_.learning_rate());
    auto params = net_.params();
    PlateauState plateau;
    TrainResult result;
    result.stats = stats_;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    result.net = net_;
    int since_best = 0;
    std::uint64_t global_step = 0;
    metadata["seed"] = config_.seed;
    metadata["mode"] = to_string(config_.mode);
    if (config_.mode == TrainMode::siamese) metadata["siamese_dropout"] = "shared_per_triplet";

    for (int epoch = 1; epoch <= config_.max_epochs; ++epoch) {
      const auto start = std::chrono::steady_clock::now();
      double sum = 0.0;
      for (int s = 0; s < steps_per_epoch; ++s, ++global_step) {
        const std::uint64_t batch_index = config_.fixed_batches ? static_cast<std::uint64_t>(s) : global_step;
        const double loss = hooks.train_step(batch_index);
        check_finite(loss, "epoch " + std::to_string(epoch) + " step " + std::to_string(s) + "; last good checkpoint: " +
                               (last_saved_.empty() ? std::string("none") : last_saved_));
        sgd.step(params, state_);
        sum += loss;
      }
      const auto [val_loss, val_acc, per_tag] = hooks.validate();
      check_finite(val_loss, "validation loss at epoch " + std::to_string(epoch) + "; last good checkpoint: " +
                                 (last_saved_.empty() ? std::string("none") : last_saved_));
      EpochRecord rec;
      rec.epoch = epoch;
      rec.train_loss = sum / steps_per_epoch;
      rec.val_loss = val_loss;
      rec.val_acc = val_acc;
      rec.lr = state_.current_lr;
      rec.val_tag_loss = per_tag;
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.history.epochs.push_back(rec);

      if (val_loss < result.best_val_loss) {
        result.best_val_loss = val_loss;
        result.best_epoch = epoch;
        result.net = net_;
        since_best = 0;
        if (options_.checkpoint_path) {
          json meta = metadata;
          meta["epoch"] = epoch;
          meta["loss_history_digest"] = result.history.digest();
          model::save(net_, stats_, meta, *options_.checkpoint_path);
          last_saved_ = options_.checkpoint_path->string();
        }
      } else {
        ++since_best;
      }
      if (options_.progress) {
        *options_.progress << "epoch " << epoch << "/" << config_.max_epochs << " train_loss=" << rec.train_loss
                           << " val_loss=" << rec.val_loss;
        if (val_acc) *options_.progress << " val_acc=" << *val_acc;
        if (!per_tag.empty()) {
          *options_.progress << " tag_val_loss=";
          for (std::size_t i = 0; i < per_tag.size(); ++i) *options_.progress << (i ? "," : "") << per_tag[i];
        }
        *options_.progress << " lr=" << rec.lr << " (" << std::fixed << std::setprecision(1) << rec.seconds << "s)"
                           << std::defaultfloat << std::setprecision(6) << std::endl;
      }
      state_.current_lr = plateau_step(val_loss, plateau, state_.current_lr, config_.plateau);
      if (since_best >= config_.early_stop_patience) break;
    }
    metadata["epoch"] = result.best_epoch;
    metadata["epochs_run"] = static_cast<int>(result.history.epochs.size());
    metadata["loss_history_digest"] = result.history.digest();
    metadata["best_val_loss"] = result.best_val_loss;
    result.metadata = std::move(metadata);
    return result;
  }

 private:
  model::ArtistNet& net_;
  const TrainConfig& config_;
  const TrainOptions& options_;
  dsp::NormStats stats_;
  nn::OptState<float> state_;
  std::string last_saved_;
};

int resolve_steps(const TrainConfig& config, std::size_t train_tracks) {
  if (config.steps_per_epoch > 0) return config.steps_per_epoch;
  return static_cast<int>((train_tracks + static_cast<std::size_t>(config.batch_size) - 1) /
                          static_cast<std::size_t>(config.batch_size));
}

// Stream ids passed to data::batch_rng.
constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kValStream = 3;

}  // namespace

template <class T>
double siamese_objective(model::ArtistNetT<T>& net, nn::Dropout<T>& dropout, const data::TripletBatch& batch,
                         double margin, nn::Rng& rng) {
  const auto b = static_cast<Eigen::Index>(batch.anchors.size());
  const auto n_neg = static_cast<Eigen::Index>(batch.negatives.size()) / std::max<Eigen::Index>(b, 1);
  std::vector<const dsp::MelSpectrogram*> ptrs;
  for (const auto* group : {&batch.anchors, &batch.positives, &batch.negatives}) {
    for (const auto& m : *group) ptrs.push_back(&m);
  }
  const auto input = model::make_input<T>(ptrs, net.spec().n_mels, net.spec().context_frames);
  net.zero_grad();
  const Matrix<T> embedding = net.forward_backbone(input, Mode::train);
  // One dropout mask per triplet, shared by its anchor, positive and negatives.
  const Matrix<T> draw = dropout.forward(Matrix<T>::Ones(embedding.rows(), b), Mode::train, rng);
  Matrix<T> mask(embedding.rows(), embedding.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    mask.col(i) = draw.col(i);
    mask.col(b + i) = draw.col(i);
    for (Eigen::Index k = 0; k < n_neg; ++k) mask.col(2 * b + i * n_neg + k) = draw.col(i);
  }
  const Matrix<T> dropped = dropout.forward_with_mask(embedding, mask);

  Matrix<T> grad = Matrix<T>::Zero(dropped.rows(), dropped.cols());
  double total = 0.0;
  std::vector<nn::Vector<T>> negatives(static_cast<std::size_t>(n_neg));
  for (Eigen::Index i = 0; i < b; ++i) {
    const Eigen::Index first_neg = 2 * b + i * n_neg;
    bool degenerate = dropped.col(i).squaredNorm() == T(0) || dropped.col(b + i).squaredNorm() == T(0);
    for (Eigen::Index k = 0; k < n_neg; ++k) {
      negatives[static_cast<std::size_t>(k)] = dropped.col(first_neg + k);
      degenerate = degenerate || negatives[static_cast<std::size_t>(k)].squaredNorm() == T(0);
    }
    // A dead embedding has no defined cosine; such triplets contribute nothing.
    if (degenerate) continue;
    const auto loss = nn::max_margin_loss<T>(dropped.col(i), dropped.col(b + i), negatives, static_cast<T>(margin));
    total += loss.loss;
    grad.col(i) += loss.d_anchor;
    grad.col(b + i) += loss.d_positive;
    for (Eigen::Index k = 0; k < n_neg; ++k) grad.col(first_neg + k) += loss.d_negatives[static_cast<std::size_t>(k)];
  }
  const double mean = total / static_cast<double>(b);
  if (!std::isfinite(mean)) return mean;
  grad /= static_cast<T>(b);
  net.backward_backbone(dropout.backward(grad));
  return mean;
}

template double siamese_objective<float>(model::ArtistNetT<float>&, nn::Dropout<float>&, const data::TripletBatch&,
                                         double, nn::Rng&);
template double siamese_objective<double>(model::ArtistNetT<double>&, nn::Dropout<double>&, const data::TripletBatch&,
                                          double, nn::Rng&);


// ---------------------------------------------------------------------------
// Evaluation helpers

ClassifierScore evaluate_artist_classifier(model::ArtistNet& net, const data::TrainingView& view,
                                           const std::vector<std::size_t>& tracks) {
  if (!net.has_head()) throw Error("no head");
  std::vector<dsp::MelSpectrogram> mels;
  std::vector<int> labels;
  for (std::size_t t : tracks) {
    const auto& artist = view.catalog->tracks[t].artist_id;
    const auto& names = view.artists.names();
    if (!std::binary_search(names.begin(), names.end(), artist)) continue;
    mels.push_back(data::centre_window(view, t));
    labels.push_back(view.artists.id(artist));
  }
  if (mels.empty()) throw Error("no validation data");
  const Matrix<float> embedding = model::embed_windows(net, mels);
  nn::Rng unused(0);
  const Matrix<double> logits = net.forward_head(embedding, Mode::infer, unused).cast<double>();
  ClassifierScore score;
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    const auto one = nn::softmax_cross_entropy<double>(logits.col(b), labels[static_cast<std::size_t>(b)]);
    score.loss += one.loss;
    Eigen::Index best;
    logits.col(b).maxCoeff(&best);
    score.accuracy += best == labels[static_cast<std::size_t>(b)] ? 1.0 : 0.0;
  }
  score.loss /= static_cast<double>(logits.cols());
  score.accuracy /= static_cast<double>(logits.cols());
  return score;
}

double evaluate_triplets(model::ArtistNet& net, const data::TrainingView& view, const data::TripletSampler& sampler,
                         const std::vector<data::TripletIndices>& triplets, double margin) {
  (void)sampler;
  std::map<std::size_t, Eigen::Index> column;
  std::vector<dsp::MelSpectrogram> mels;
  const auto add = [&](std::size_t t) {
    if (column.emplace(t, static_cast<Eigen::Index>(mels.size())).second) mels.push_back(data::centre_window(view, t));
  };
  for (const auto& tri : triplets) {
    add(tri.anchor);
    add(tri.positive);
    for (std::size_t n : tri.negatives) add(n);
  }
  const Matrix<double> embedding = model::embed_windows(net, mels).cast<double>();
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& tri : triplets) {
    std::vector<nn::Vector<double>> negatives;
    for (std::size_t n : tri.negatives) negatives.push_back(embedding.col(column.at(n)));
    try {
      total += nn::max_margin_loss<double>(embedding.col(column.at(tri.anchor)), embedding.col(column.at(tri.positive)),
                                           negatives, margin)
                   .loss;
      ++counted;
    } catch (const Error&) {
      // A dead embedding leaves every hinge term at its worst case.
      total += static_cast<double>(tri.negatives.size()) * (margin + 2.0);
      ++counted;
    }
  }
  if (counted == 0) throw Error("no validation data");
  return total / static_cast<double>(counted);
}

// ---------------------------------------------------------------------------
// Trainers

namespace {

struct Prepared {
  std::vector<std::size_t> train_tracks;
  std::vector<std::size_t> val_tracks;
  std::unique_ptr<data::AudioStore> store;
  std::unique_ptr<data::FeatureCache> cache;
  data::TrainingView view;
};

Prepared prepare(const data::Catalog& catalog, const TrainConfig& config, std::ostream* progress) {
  Prepared p;
  p.train_tracks = catalog.indices(data::Split::train);
  p.val_tracks = catalog.indices(data::Split::val);
  if (p.train_tracks.empty()) throw Error("no training data", "catalog has no train split");
  if (p.val_tracks.empty()) throw Error("no validation data", "catalog has no val split");
  p.store = std::make_unique<data::AudioStore>(catalog);
  if (progress) *progress << "computing normalisation statistics over " << p.train_tracks.size() << " tracks\n";
  p.view.catalog = &catalog;
  p.view.store = p.store.get();
  p.view.stats = data::training_norm_stats(catalog, *p.store, p.train_tracks);
  if (config.feature_cache) {
    p.cache = std::make_unique<data::FeatureCache>(*p.store, catalog, p.view.stats);
    p.view.cache = p.cache.get();
  }
  p.view.tracks = p.train_tracks;
  p.view.artists = data::artist_index(catalog, p.train_tracks);
  if (config.mode == TrainMode::basic_tag) p.view.tags = data::tag_index(catalog, p.train_tracks);
  return p;
}

}  // namespace

TrainResult train_basic(model::ArtistNet net, const data::Catalog& catalog, const TrainConfig& config,
                        const TrainOptions& options) {
  config.validate();
  if (config.mode == TrainMode::siamese) throw Error("invalid config", "train_basic called with siamese mode");
  const auto want = config.mode == TrainMode::basic_artist ? model::HeadKind::artist_softmax : model::HeadKind::tag;
  if (net.spec().head != want) {
    throw Error("invalid config", "mode " + to_string(config.mode) + " needs a " + model::to_string(want) +
                                      " head, network has " + model::to_string(net.spec().head));
  }
  Prepared p = prepare(catalog, config, options.progress);
  const std::size_t classes = config.mode == TrainMode::basic_artist ? p.view.artists.size() : p.view.tags.size();
  if (classes == 0) throw Error("bad label", "no training labels");
  if (static_cast<std::size_t>(net.spec().head_size) != classes) {
    throw Error("invalid config", "head has " + std::to_string(net.spec().head_size) + " outputs, training data has " +
                                      std::to_string(classes) + " labels");
  }
  net.head_dropout() = nn::Dropout<float>(config.dropout);

  BasicContext ctx{config.mode, config.tag_loss, &p.view};
  LoopHooks hooks;
  hooks.train_step = [&](std::uint64_t index) {
    auto rng = data::batch_rng(config.seed, kTrainStream, index);
    const auto batch = data::next_basic_batch(p.view, static_cast<std::size_t>(config.batch_size), rng);
    return basic_objective(net, batch, ctx, rng);
  };

  // Validation: centred window of every val track, inference mode.
  std::vector<dsp::MelSpectrogram> val_mels;
  std::vector<std::size_t> val_used;
  for (std::size_t t : p.val_tracks) {
    const auto& track = catalog.tracks[t];
    if (config.mode == TrainMode::basic_artist) {
      const auto& names = p.view.artists.names();
      if (!std::binary_search(names.begin(), names.end(), track.artist_id)) continue;
    } else if (track.tags.empty()) {
      continue;
    }
    val_used.push_back(t);
    val_mels.push_back(data::centre_window(p.view, t));
  }
  if (val_mels.empty()) throw Error("no validation data");
  hooks.validate = [&]() -> Validation {
    const Matrix<float> embedding = model::embed_windows(net, val_mels);
    nn::Rng unused(0);
    const Matrix<double> logits = net.forward_head(embedding, Mode::infer, unused).cast<double>();
    if (config.mode == TrainMode::basic_tag && config.tag_loss == TagLoss::multilabel) {
      Matrix<double> targets = Matrix<double>::Zero(logits.rows(), logits.cols());
      for (std::size_t b = 0; b < val_used.size(); ++b) {
        for (const auto& tag : catalog.tracks[val_used[b]].tags) {
          const auto& names = p.view.tags.names();
          if (std::binary_search(names.begin(), names.end(), tag)) targets(p.view.tags.id(tag), static_cast<Eigen::Index>(b)) = 1.0;
        }
      }
      const auto loss = nn::sigmoid_cross_entropy<double>(logits, targets);
      return {loss.loss, std::nullopt, {loss.per_output.data(), loss.per_output.data() + loss.per_output.size()}};
    }
    double loss = 0.0, correct = 0.0;
    for (std::size_t b = 0; b < val_used.size(); ++b) {
      const auto& track = catalog.tracks[val_used[b]];
      int label = 0;
      if (config.mode == TrainMode::basic_artist) {
        label = p.view.artists.id(track.artist_id);
      } else {
        const auto& names = p.view.tags.names();
        if (!std::binary_search(names.begin(), names.end(), track.tags.front())) continue;
        label = p.view.tags.id(track.tags.front());
      }
      const auto col = static_cast<Eigen::Index>(b);
      loss += nn::softmax_cross_entropy<double>(logits.col(col), label).loss;
      Eigen::Index best;
      logits.col(col).maxCoeff(&best);
      correct += best == label ? 1.0 : 0.0;
    }
    const auto n = static_cast<double>(val_used.size());
    return {loss / n, correct / n, {}};
  };

  json metadata{{"labels", config.mode == TrainMode::basic_artist ? p.view.artists.names() : p.view.tags.names()},
                {"siamese_branch_dropout", false},
                {"train_config", config}};
  Trainer trainer(net, config, options, p.view.stats);
  return trainer.run(hooks, resolve_steps(config, p.train_tracks.size()), std::move(metadata));
}

TrainResult train_siamese(model::ArtistNet net, const data::Catalog& catalog, const TrainConfig& config,
                          const TrainOptions& options) {
  config.validate();
  if (config.mode != TrainMode::siamese) throw Error("invalid config", "train_siamese needs siamese mode");
  if (net.has_head()) throw Error("invalid config", "siamese mode needs a network without a head");
  Prepared p = prepare(catalog, config, options.progress);
  const data::TripletSampler sampler(catalog, p.train_tracks, config.negatives);
  const data::TripletSampler val_sampler(catalog, p.val_tracks, config.negatives);
  nn::Dropout<float> dropout(config.dropout);

  LoopHooks hooks;
  hooks.train_step = [&](std::uint64_t index) {
    auto rng = data::batch_rng(config.seed, kTrainStream, index);
    const auto batch = data::next_siamese_batch(p.view, sampler, static_cast<std::size_t>(config.batch_size), rng);
    return siamese_objective(net, dropout, batch, config.margin, rng);
  };

  // Fixed validation triplets: one per val track with a same-artist partner.
  auto val_rng = data::batch_rng(config.seed, kValStream, 0);
  std::vector<data::TripletIndices> val_triplets;
  {
    std::map<std::string, std::size_t> per_artist;
    for (std::size_t t : p.val_tracks) ++per_artist[catalog.tracks[t].artist_id];
    const std::size_t anchors = std::count_if(p.val_tracks.begin(), p.val_tracks.end(), [&](std::size_t t) {
      return per_artist[catalog.tracks[t].artist_id] >= 2;
    });
    val_triplets = val_sampler.sample(anchors, val_rng);
  }
  hooks.validate = [&]() -> Validation {
    return {evaluate_triplets(net, p.view, val_sampler, val_triplets, config.margin), std::nullopt, {}};
  };

  json metadata{{"labels", json::array()}, {"siamese_branch_dropout", config.dropout > 0.0}, {"train_config", config}};
  Trainer trainer(net, config, options, p.view.stats);
  return trainer.run(hooks, resolve_steps(config, p.train_tracks.size()), std::move(metadata));
}

TrainResult train(const data::Catalog& catalog, const TrainConfig& config, const TrainOptions& options,
                  const model::ArchSpec& backbone) {
  config.validate();
  model::ArchSpec spec = backbone;
  spec.dropout = config.dropout;
  const auto train_tracks = catalog.indices(data::Split::train);
  switch (config.mode) {
    case TrainMode::basic_artist:
      spec.head = model::HeadKind::artist_softmax;
      spec.head_size = static_cast<int>(data::artist_index(catalog, train_tracks).size());
      break;
    case TrainMode::basic_tag:
      spec.head = model::HeadKind::tag;
      spec.head_size = static_cast<int>(data::tag_index(catalog, train_tracks).size());
      break;
    case TrainMode::siamese:
      spec.head = model::HeadKind::none;
      spec.head_size = 0;
      break;
  }
  if (spec.head != model::HeadKind::none && spec.head_size == 0) throw Error("bad label", "no training labels");
  auto net = model::ArtistNet::build(spec, config.seed);
  return config.mode == TrainMode::siamese ? train_siamese(std::move(net), catalog, config, options)
                                           : train_basic(std::move(net), catalog, config, options);
}

// ---------------------------------------------------------------------------

std::vector<double> fixed_batch_descent_basic(model::ArtistNet& net, const data::BasicBatch& batch,
                                              const TrainConfig& config, int steps) {
  nn::NesterovSgd<float> sgd{config.momentum, config.decay};
  auto state = nn::OptState<float>::initial(config.learning_rate());
  auto params = net.params();
  net.head_dropout() = nn::Dropout<float>(config.dropout);
  BasicContext ctx{config.mode, config.tag_loss, nullptr};
  std::vector<double> losses;
  for (int s = 0; s <= steps; ++s) {
    nn::Rng rng(config.seed);
    const double loss = basic_objective(net, batch, ctx, rng);
    check_finite(loss, "fixed batch step " + std::to_string(s));
    losses.push_back(loss);
    if (s < steps) sgd.step(params, state);
  }
  return losses;
}

std::vector<double> fixed_batch_descent_siamese(model::ArtistNet& net, const data::TripletBatch& batch,
                                                const TrainConfig& config, int steps) {
  nn::NesterovSgd<float> sgd{config.momentum, config.decay};
  auto state = nn::OptState<float>::initial(config.learning_rate());
  auto params = net.params();
  nn::Dropout<float> dropout(config.dropout);
  std::vector<double> losses;
  for (int s = 0; s <= steps; ++s) {
    nn::Rng rng(config.seed);
    const double loss = siamese_objective(net, dropout, batch, config.margin, rng);
    check_finite(loss, "fixed batch step " + std::to_string(s));
    losses.push_back(loss);
    if (s < steps) sgd.step(params, state);
  }
  return losses;
}

}  // namespace artistembed::train
