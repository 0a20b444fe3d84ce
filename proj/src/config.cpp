#include "artistembed/config.hpp"

#include <algorithm>
#include <fstream>

#include "artistembed/error.hpp"

namespace artistembed::config {

using nlohmann::json;

namespace {

const std::vector<std::string> kTrainKeys{"mode",       "learning_rate",   "momentum",      "decay",
                                          "dropout",    "margin",          "negatives",     "batch_size",
                                          "max_epochs", "steps_per_epoch", "plateau",       "early_stop_patience",
                                          "seed",       "tag_loss",        "fixed_batches", "feature_cache"};

bool contains(const std::vector<std::string>& keys, const std::string& key) {
  return std::find(keys.begin(), keys.end(), key) != keys.end();
}

void check_keys(const json& j, const std::vector<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw Error("invalid config", where.empty() ? "document must be an object" : where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!contains(known, key)) throw Error("invalid config", "unknown key '" + where + key + "'");
  }
}

json arch_json(const model::ArchSpec& arch) {
  json j = arch;
  j.erase("head");
  j.erase("head_size");
  j.erase("dropout");
  return j;
}

}  // namespace

model::HeadKind head_for_mode(train::TrainMode mode) {
  switch (mode) {
    case train::TrainMode::basic_artist: return model::HeadKind::artist_softmax;
    case train::TrainMode::basic_tag: return model::HeadKind::tag;
    case train::TrainMode::siamese: return model::HeadKind::none;
  }
  return model::HeadKind::none;
}

void RunConfig::validate() const {
  train.validate();
  if (head && *head != head_for_mode(train.mode)) {
    throw Error("invalid config", "mode " + train::to_string(train.mode) + " conflicts with head " +
                                      model::to_string(*head) + " (expected " +
                                      model::to_string(head_for_mode(train.mode)) + ")");
  }
  model::ArchSpec backbone = arch;
  backbone.head = model::HeadKind::none;
  backbone.head_size = 0;
  try {
    backbone.validate();
  } catch (const Error& e) {
    throw Error("invalid config", e.what());
  }
  try {
    split.validate();
  } catch (const Error& e) {
    throw Error("invalid config", e.what());
  }
  if (eval.k < 1) throw Error("invalid config", "eval.k must be >= 1");
  if (eval.label != "genre" && eval.label != "artist") throw Error("invalid config", "eval.label must be genre or artist");
  if (eval.probe.iterations < 1 || !(eval.probe.learning_rate > 0.0) || !(eval.probe.l2 >= 0.0)) {
    throw Error("invalid config", "eval.probe out of range");
  }
  if (threads < 1) throw Error("invalid config", "threads must be >= 1");
}

json to_json(const RunConfig& c) {
  json j = c.train;
  j["head"] = c.head ? json(model::to_string(*c.head)) : json(nullptr);
  j["arch"] = arch_json(c.arch);
  j["catalog"] = c.catalog;
  j["out_dir"] = c.out_dir;
  j["checkpoint"] = c.checkpoint;
  j["split"] = {{"songs_per_artist", c.split.songs_per_artist},
                {"train", c.split.train},
                {"val", c.split.val},
                {"test", c.split.test},
                {"artist_set_size", c.split.artist_set_size}};
  j["eval"] = {{"k", c.eval.k},
               {"label", c.eval.label},
               {"reference_split", c.eval.reference_split},
               {"query_splits", c.eval.query_splits},
               {"probe",
                {{"learning_rate", c.eval.probe.learning_rate},
                 {"iterations", c.eval.probe.iterations},
                 {"l2", c.eval.probe.l2}}}};
  j["threads"] = c.threads;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  std::vector<std::string> known = kTrainKeys;
  for (const char* k : {"head", "arch", "catalog", "out_dir", "checkpoint", "split", "eval", "threads"}) known.emplace_back(k);
  check_keys(j, known, "");
  RunConfig c;
  json train_part = json::object();
  for (const auto& [key, value] : j.items()) {
    if (contains(kTrainKeys, key)) train_part[key] = value;
  }
  c.train = train_part.get<train::TrainConfig>();
  try {
    if (auto it = j.find("head"); it != j.end() && !it->is_null()) {
      try {
        c.head = model::head_kind_from_string(it->get<std::string>());
      } catch (const Error& e) {
        throw Error("invalid config", e.what());
      }
    }
    if (auto it = j.find("arch"); it != j.end()) {
      check_keys(*it, {"n_mels", "context_frames", "channels", "kernels", "pools", "embedding_dim", "bn_eps", "bn_momentum"},
                 "arch.");
      c.arch = it->get<model::ArchSpec>();
    }
    c.catalog = j.value("catalog", std::string());
    c.out_dir = j.value("out_dir", std::string());
    c.checkpoint = j.value("checkpoint", std::string());
    if (auto it = j.find("split"); it != j.end()) {
      check_keys(*it, {"songs_per_artist", "train", "val", "test", "artist_set_size"}, "split.");
      data::SplitSpec d;
      c.split.songs_per_artist = it->value("songs_per_artist", d.songs_per_artist);
      c.split.train = it->value("train", d.train);
      c.split.val = it->value("val", d.val);
      c.split.test = it->value("test", d.test);
      c.split.artist_set_size = it->value("artist_set_size", d.artist_set_size);
    }
    if (auto it = j.find("eval"); it != j.end()) {
      check_keys(*it, {"k", "label", "reference_split", "query_splits", "probe"}, "eval.");
      EvalOptions d;
      c.eval.k = it->value("k", d.k);
      c.eval.label = it->value("label", d.label);
      c.eval.reference_split = it->value("reference_split", d.reference_split);
      c.eval.query_splits = it->value("query_splits", d.query_splits);
      if (auto p = it->find("probe"); p != it->end()) {
        check_keys(*p, {"learning_rate", "iterations", "l2"}, "eval.probe.");
        c.eval.probe.learning_rate = p->value("learning_rate", d.probe.learning_rate);
        c.eval.probe.iterations = p->value("iterations", d.probe.iterations);
        c.eval.probe.l2 = p->value("l2", d.probe.l2);
      }
    }
    c.threads = j.value("threads", 1);
  } catch (const json::exception& e) {
    throw Error("invalid config", e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing file", path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("invalid config", path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace artistembed::config
