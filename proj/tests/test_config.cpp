#include <doctest.h>

#include <fstream>

#include "artistembed/config.hpp"
#include "support.hpp"

namespace ae = artistembed;
using ae::Error;
using nlohmann::json;

TEST_CASE("run config defaults") {
  const auto c = ae::config::run_config_from_json(json::object());
  CHECK(c.train.mode == ae::train::TrainMode::basic_artist);
  CHECK(c.train.learning_rate() == 0.015);
  CHECK(c.train.margin == 0.4);
  CHECK(c.train.negatives == 4);
  CHECK(c.train.dropout == 0.5);
  CHECK(c.train.momentum == 0.9);
  CHECK(c.train.decay == 1e-6);
  CHECK(c.eval.k == 20);
  CHECK(c.arch.n_mels == 128);
  CHECK(c.arch.context_frames == 128);
  CHECK(c.split.train == 15);
  CHECK(c.split.val == 3);
  CHECK(c.split.test == 2);
  CHECK(c.threads == 1);
  CHECK_NOTHROW(c.validate());

  const auto s = ae::config::run_config_from_json({{"mode", "siamese"}});
  CHECK(s.train.learning_rate() == 0.1);
}

TEST_CASE("run config round trip") {
  auto c = ae::config::run_config_from_json(
      {{"mode", "siamese"}, {"margin", 0.3}, {"arch", {{"channels", {8, 8, 16, 16, 16}}, {"embedding_dim", 16}}},
       {"eval", {{"k", 5}, {"label", "artist"}}}, {"split", {{"train", 10}, {"val", 5}, {"test", 5}}}, {"catalog", "c.jsonl"}});
  const json j = ae::config::to_json(c);
  CHECK(j["margin"] == 0.3);
  CHECK(j["arch"]["embedding_dim"] == 16);
  CHECK(j["eval"]["label"] == "artist");
  CHECK(j["split"]["train"] == 10);
  CHECK(ae::config::to_json(ae::config::run_config_from_json(j)) == j);

  const auto path = testsupport::scratch_dir("config") / "run.json";
  std::ofstream(path) << j.dump(2);
  CHECK(ae::config::to_json(ae::config::load_run_config(path)) == j);
}

TEST_CASE("run config rejects bad documents") {
  const auto fails = [](const json& j, const std::string& what) {
    CHECK_THROWS_WITH_AS(ae::config::run_config_from_json(j).validate(), doctest::Contains(what.c_str()), Error);
  };
  fails({{"margn", 0.4}}, "unknown key 'margn'");
  fails({{"arch", {{"layers", 3}}}}, "arch.layers");
  fails({{"eval", {{"probe", {{"steps", 3}}}}}}, "eval.probe.steps");
  fails({{"mode", "siamese"}, {"head", "artist_softmax"}}, "conflicts with head");
  fails({{"mode", "basic_artist"}, {"head", "none"}}, "conflicts with head");
  fails({{"eval", {{"k", 0}}}}, "eval.k");
  fails({{"eval", {{"label", "tag"}}}}, "eval.label");
  fails({{"threads", 0}}, "threads");
  fails({{"margin", 2.5}}, "margin");
  fails({{"batch_size", "many"}}, "invalid config");
  fails(json::array(), "must be an object");
  CHECK_THROWS_AS(ae::config::load_run_config("/nonexistent/run.json"), Error);
}

TEST_CASE("head follows the mode") {
  CHECK(ae::config::head_for_mode(ae::train::TrainMode::basic_artist) == ae::model::HeadKind::artist_softmax);
  CHECK(ae::config::head_for_mode(ae::train::TrainMode::basic_tag) == ae::model::HeadKind::tag);
  CHECK(ae::config::head_for_mode(ae::train::TrainMode::siamese) == ae::model::HeadKind::none);
}
