// artistembed: synthetic data, training, embedding extraction and evaluation.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "artistembed/config.hpp"
#include "artistembed/error.hpp"
#include "artistembed/eval.hpp"
#include "artistembed/synth.hpp"
#include "artistembed/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace artistembed;

namespace {

// Usage problems detected after flag parsing; mapped to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error("disk write failure", path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("invalid config: " + path.string() + ": " + e.what());
  }
}

config::RunConfig parse_run_config(const json& j) {
  try {
    return config::run_config_from_json(j);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("ARTISTEMBED_THREADS"); env && *env) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("ARTISTEMBED_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  int artists = 0;
  int songs = 0;
  std::uint64_t seed = 0;
  double seconds = 30.0;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  const auto result = synth::generate_synthetic_dataset(a.artists, a.songs, a.seconds, a.seed, a.out);
  std::cout << result.catalog_path.string() << "\n";
  std::cout << result.tracks << " tracks";
  if (result.files_written == 0) {
    std::cout << ", up to date\n";
  } else {
    std::cout << ", " << result.files_written << " files written\n";
  }
  return 0;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string mode;
  std::string catalog;
  std::string config;
  std::string out;
};

int run_train(const TrainArgs& a, int threads) {
  json raw = a.config.empty() ? json::object() : read_json(a.config);
  if (!raw.is_object()) throw UsageError("invalid config: document must be an object");
  if (!a.mode.empty()) {
    train::TrainMode flag_mode;
    try {
      flag_mode = train::train_mode_from_string(a.mode);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    if (raw.contains("mode") && raw["mode"].is_string()) {
      train::TrainMode file_mode;
      try {
        file_mode = train::train_mode_from_string(raw["mode"].get<std::string>());
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
      if (file_mode != flag_mode) {
        throw UsageError("--mode " + a.mode + " conflicts with config mode " + raw["mode"].get<std::string>());
      }
    }
    raw["mode"] = train::to_string(flag_mode);
  } else if (!raw.contains("mode")) {
    throw UsageError("--mode is required (or a config with \"mode\")");
  }
  auto run = parse_run_config(raw);
  if (!a.catalog.empty()) run.catalog = a.catalog;
  if (!a.out.empty()) run.out_dir = a.out;
  if (run.catalog.empty()) throw UsageError("--catalog is required");
  if (run.out_dir.empty()) throw UsageError("--out is required");
  run.threads = threads;
  try {
    run.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  const fs::path out_dir = run.out_dir;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error("disk write failure", out_dir.string() + ": " + ec.message());
  run.checkpoint = (out_dir / "model.ckpt").string();

  auto catalog = data::load_catalog(run.catalog);
  if (catalog.indices(data::Split::train).empty()) {
    std::cerr << "catalog has no split assignments; splitting " << run.split.train << "/" << run.split.val << "/"
              << run.split.test << " per artist\n";
    const auto base = catalog.base_dir;
    catalog = data::make_splits(catalog, run.split, run.train.seed);
    catalog.base_dir = base;
  }
  write_text(out_dir / "config.echo.json", config::to_json(run).dump(2) + "\n");

  train::TrainOptions options;
  options.checkpoint_path = fs::path(run.checkpoint);
  options.progress = &std::cerr;
  auto result = train::train(catalog, run.train, options, run.arch);
  result.metadata["catalog_digest"] = data::catalog_digest(catalog);
  model::save(result.net, result.stats, result.metadata, run.checkpoint);
  write_text(out_dir / "history.csv", result.history.to_csv());
  std::cout << "best epoch " << result.best_epoch << " val_loss " << result.best_val_loss << "\n";
  std::cout << run.checkpoint << "\n";
  return 0;
}

// --- extract / eval --------------------------------------------------------

std::vector<std::size_t> all_tracks(const data::Catalog& catalog) {
  std::vector<std::size_t> out(catalog.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

eval::LabelField label_field(const std::string& name) {
  if (name == "genre") return eval::LabelField::genre;
  if (name == "artist") return eval::LabelField::artist;
  throw UsageError("--label must be genre or artist");
}

struct ExtractArgs {
  std::string ckpt;
  std::string catalog;
  std::string out;
  std::string format;
  std::string label = "genre";
};

int run_extract(const ExtractArgs& a) {
  const auto field = label_field(a.label);
  std::string format = a.format;
  if (format.empty()) format = fs::path(a.out).extension() == ".bin" || fs::path(a.out).extension() == ".raw" ? "raw" : "csv";
  if (format != "csv" && format != "raw") throw UsageError("--format must be csv or raw");
  auto ckpt = model::load(a.ckpt);
  const auto catalog = data::load_catalog(a.catalog);
  auto emb = eval::extract_embeddings(catalog, all_tracks(catalog), ckpt.net, ckpt.stats, field, &std::cerr);
  emb.source_digest = ckpt.metadata.value("blob_fnv1a64", std::string());
  eval::export_embeddings(emb, a.out, format == "csv" ? eval::ExportFormat::csv : eval::ExportFormat::raw);
  std::cout << emb.size() << " embeddings written to " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string catalog;
  std::string metrics = "map,knn,probe";
  std::string out;
  std::string config;
  int k = 0;
  std::string label;
  bool per_query = false;
};

eval::EmbeddingMatrix subset(const eval::EmbeddingMatrix& emb, const std::vector<std::size_t>& rows) {
  eval::EmbeddingMatrix out;
  out.rows.resize(static_cast<Eigen::Index>(rows.size()), emb.rows.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.rows.row(static_cast<Eigen::Index>(i)) = emb.rows.row(static_cast<Eigen::Index>(rows[i]));
    out.ids.push_back(emb.ids[rows[i]]);
    out.labels.push_back(emb.labels[rows[i]]);
  }
  out.source_digest = emb.source_digest;
  return out;
}

int run_eval(const EvalArgs& a) {
  std::set<std::string> metrics;
  {
    std::stringstream list(a.metrics);
    std::string m;
    while (std::getline(list, m, ',')) {
      if (m != "map" && m != "knn" && m != "probe") throw UsageError("unknown metric '" + m + "'");
      metrics.insert(m);
    }
    if (metrics.empty()) throw UsageError("--metrics is empty");
  }
  auto run = a.config.empty() ? config::RunConfig{} : parse_run_config(read_json(a.config));
  if (a.k > 0) run.eval.k = a.k;
  if (!a.label.empty()) run.eval.label = a.label;
  try {
    run.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const auto field = label_field(run.eval.label);

  auto ckpt = model::load(a.ckpt);
  const auto catalog = data::load_catalog(a.catalog);

  // Songs without a label take no part in evaluation.
  std::vector<std::size_t> tracks;
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    const auto& t = catalog.tracks[i];
    if (field == eval::LabelField::artist || (t.genre && !t.genre->empty())) tracks.push_back(i);
  }
  if (tracks.empty()) throw Error("no reference data", "no labelled songs in catalog");
  auto emb = eval::extract_embeddings(catalog, tracks, ckpt.net, ckpt.stats, field, &std::cerr);
  emb.source_digest = ckpt.metadata.value("blob_fnv1a64", std::string());

  const bool has_splits = std::any_of(tracks.begin(), tracks.end(),
                                      [&](std::size_t t) { return catalog.tracks[t].split != data::Split::unassigned; });
  std::vector<std::size_t> ref_rows, query_rows;
  if (has_splits) {
    const auto ref_split = data::split_from_string(run.eval.reference_split);
    std::set<data::Split> query_splits;
    for (const auto& s : run.eval.query_splits) query_splits.insert(data::split_from_string(s));
    for (std::size_t i = 0; i < tracks.size(); ++i) {
      const auto split = catalog.tracks[tracks[i]].split;
      if (split == ref_split) ref_rows.push_back(i);
      else if (query_splits.count(split)) query_rows.push_back(i);
    }
  }

  eval::EvalReport report;
  report.k = run.eval.k;
  json cfg = config::to_json(run)["eval"];
  cfg["metrics"] = std::vector<std::string>(metrics.begin(), metrics.end());
  cfg["checkpoint"] = a.ckpt;
  cfg["catalog"] = a.catalog;
  cfg["catalog_digest"] = data::catalog_digest(catalog);
  cfg["songs"] = emb.size();
  report.config = cfg;

  if (metrics.count("map")) report.map = eval::mean_average_precision(emb);

  // k-NN predictions: reference split against query splits, or leave-one-out
  // over all songs when the catalog carries no splits.
  std::vector<std::string> knn_pred, knn_truth;
  const bool want_genre_table = field == eval::LabelField::genre;
  if (metrics.count("knn") || want_genre_table) {
    if (has_splits) {
      if (ref_rows.empty() || query_rows.empty()) throw Error("no reference data", "empty reference or query split");
      const auto ref = subset(emb, ref_rows);
      const int k = std::min<int>(run.eval.k, static_cast<int>(ref.size()));
      for (std::size_t q : query_rows) {
        knn_pred.push_back(eval::knn_classify(ref, emb.rows.row(static_cast<Eigen::Index>(q)).transpose(), k));
        knn_truth.push_back(emb.labels[q]);
      }
    } else if (emb.size() >= 2) {
      for (std::size_t q = 0; q < emb.size(); ++q) {
        std::vector<std::size_t> others;
        for (std::size_t j = 0; j < emb.size(); ++j) {
          if (j != q) others.push_back(j);
        }
        const auto ref = subset(emb, others);
        const int k = std::min<int>(run.eval.k, static_cast<int>(ref.size()));
        knn_pred.push_back(eval::knn_classify(ref, emb.rows.row(static_cast<Eigen::Index>(q)).transpose(), k));
        knn_truth.push_back(emb.labels[q]);
      }
    }
    if (metrics.count("knn")) {
      if (knn_pred.empty()) throw Error("no reference data", "k-NN needs at least two songs");
      report.knn_accuracy = eval::per_genre_breakdown(knn_pred, knn_truth).overall;
    }
  }
  if (metrics.count("probe")) {
    if (!has_splits || ref_rows.empty() || query_rows.empty()) {
      throw Error("no reference data", "the linear probe needs reference and query splits");
    }
    report.probe = eval::train_linear_probe(subset(emb, ref_rows), subset(emb, query_rows), run.eval.probe);
  }
  if (want_genre_table && !knn_pred.empty()) report.per_genre = eval::per_genre_breakdown(knn_pred, knn_truth);

  const json out = eval::to_json(report, a.per_query);
  write_text(a.out, out.dump(2) + "\n");
  if (report.map) std::cout << "map " << report.map->map << "\n";
  if (report.knn_accuracy) std::cout << "knn_accuracy " << *report.knn_accuracy << " (k=" << report.k << ")\n";
  if (report.probe) std::cout << "probe_accuracy " << report.probe->accuracy << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Artist-label audio embeddings: synthetic data, training, extraction and evaluation"};
  app.require_subcommand(1);
  int threads_flag = 0;
  app.add_option("--threads", threads_flag, "Worker threads (falls back to ARTISTEMBED_THREADS)")
      ->check(CLI::PositiveNumber);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Render a deterministic synthetic dataset");
  synth_cmd->add_option("--artists", synth_args.artists, "Number of artists")->required()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--songs", synth_args.songs, "Songs per artist")->required()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth_args.seed, "Generator seed");
  synth_cmd->add_option("--seconds", synth_args.seconds, "Clip length in seconds")->capture_default_str();
  synth_cmd->add_option("--out", synth_args.out, "Output directory")->required();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a basic or Siamese model");
  train_cmd->add_option("--mode", train_args.mode, "basic-artist | basic-tag | siamese")
      ->check(CLI::IsMember({"basic-artist", "basic-tag", "siamese"}));
  train_cmd->add_option("--catalog", train_args.catalog, "Catalog (JSON lines)");
  train_cmd->add_option("--config", train_args.config, "Run configuration (JSON)");
  train_cmd->add_option("--out", train_args.out, "Output directory");

  ExtractArgs extract_args;
  auto* extract_cmd = app.add_subcommand("extract", "Export song-level embeddings");
  extract_cmd->add_option("--ckpt", extract_args.ckpt, "Checkpoint")->required();
  extract_cmd->add_option("--catalog", extract_args.catalog, "Catalog (JSON lines)")->required();
  extract_cmd->add_option("--out", extract_args.out, "Output file")->required();
  extract_cmd->add_option("--format", extract_args.format, "csv | raw (default from extension)")
      ->check(CLI::IsMember({"csv", "raw"}));
  extract_cmd->add_option("--label", extract_args.label, "genre | artist")->check(CLI::IsMember({"genre", "artist"}));

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate song-level embeddings");
  eval_cmd->add_option("--ckpt", eval_args.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--catalog", eval_args.catalog, "Catalog (JSON lines)")->required();
  eval_cmd->add_option("--metrics", eval_args.metrics, "Comma-separated subset of map,knn,probe")->capture_default_str();
  eval_cmd->add_option("--out", eval_args.out, "Report path (JSON)")->required();
  eval_cmd->add_option("--config", eval_args.config, "Run configuration (JSON) for evaluation options");
  eval_cmd->add_option("--k", eval_args.k, "Neighbours for k-NN")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--label", eval_args.label, "genre | artist")->check(CLI::IsMember({"genre", "artist"}));
  eval_cmd->add_flag("--per-query", eval_args.per_query, "Include per-query average precision");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const int threads = resolve_threads(threads_flag);
    if (synth_cmd->parsed()) return run_synth(synth_args);
    if (train_cmd->parsed()) return run_train(train_args, threads);
    if (extract_cmd->parsed()) return run_extract(extract_args);
    if (eval_cmd->parsed()) return run_eval(eval_args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
