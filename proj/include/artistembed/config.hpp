#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "artistembed/data.hpp"
#include "artistembed/eval.hpp"
#include "artistembed/model.hpp"
#include "artistembed/train.hpp"

namespace artistembed::config {

struct EvalOptions {
  int k = eval::kDefaultK;
  /// "genre" or "artist".
  std::string label = "genre";
  std::string reference_split = "train";
  std::vector<std::string> query_splits{"val", "test"};
  eval::ProbeOptions probe;
};

/// One JSON document holding every knob of a run. Training fields sit at
/// the top level next to paths, the split layout, the backbone and the
/// evaluation options.
struct RunConfig {
  train::TrainConfig train;
  /// Optional explicit head; must agree with train.mode.
  std::optional<model::HeadKind> head;
  model::ArchSpec arch;
  std::string catalog;
  std::string out_dir;
  std::string checkpoint;
  data::SplitSpec split;
  EvalOptions eval;
  int threads = 1;

  /// Throws "invalid config" when mode and head disagree or any field is
  /// out of range.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Unknown keys throw "invalid config".
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

model::HeadKind head_for_mode(train::TrainMode mode);

}  // namespace artistembed::config
