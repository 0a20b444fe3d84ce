#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "artistembed/data.hpp"
#include "artistembed/dsp.hpp"
#include "artistembed/error.hpp"
#include "artistembed/eval.hpp"
#include "artistembed/model.hpp"
#include "artistembed/synth.hpp"
#include "artistembed/wav.hpp"

namespace py = pybind11;
namespace ae = artistembed;
namespace fs = std::filesystem;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

ae::dsp::AudioClip to_clip(const FloatArray& samples) {
  if (samples.ndim() != 1) throw ae::Error("shape error", "audio must be one-dimensional");
  ae::dsp::AudioClip clip;
  clip.samples.assign(samples.data(), samples.data() + samples.size());
  return clip;
}

FloatArray to_array(const std::vector<float>& samples) {
  FloatArray out(static_cast<py::ssize_t>(samples.size()));
  std::copy(samples.begin(), samples.end(), out.mutable_data());
  return out;
}

ae::eval::EmbeddingMatrix to_matrix(const Eigen::MatrixXd& rows, std::vector<std::string> ids,
                                    std::vector<std::string> labels) {
  ae::eval::EmbeddingMatrix e;
  e.rows = rows;
  e.ids = std::move(ids);
  e.labels = std::move(labels);
  if (static_cast<std::size_t>(e.rows.rows()) != e.ids.size() || e.ids.size() != e.labels.size()) {
    throw ae::Error("shape error", "rows, ids and labels differ in length");
  }
  e.validate();
  return e;
}

// A loaded checkpoint with its normalisation statistics.
class Model {
 public:
  explicit Model(const fs::path& path) : ckpt_(ae::model::load(path)) {}

  int embedding_dim() const { return ckpt_.net.spec().embedding_dim; }
  std::string head() const { return ae::model::to_string(ckpt_.net.spec().head); }
  std::pair<double, double> norm_stats() const { return {ckpt_.stats.mean, ckpt_.stats.std}; }

  Eigen::VectorXd embed_song(const FloatArray& samples) {
    std::ostringstream warn;
    return ae::eval::extract_song_embedding(to_clip(samples), ckpt_.net, ckpt_.stats, &warn);
  }

  py::tuple embed_catalog(const fs::path& catalog_path, const std::string& label) {
    if (label != "genre" && label != "artist") throw ae::Error("invalid config", "label must be genre or artist");
    const auto catalog = ae::data::load_catalog(catalog_path);
    std::vector<std::size_t> all(catalog.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::ostringstream warn;
    const auto field = label == "genre" ? ae::eval::LabelField::genre : ae::eval::LabelField::artist;
    auto e = ae::eval::extract_embeddings(catalog, all, ckpt_.net, ckpt_.stats, field, &warn);
    return py::make_tuple(e.rows, e.ids, e.labels);
  }

 private:
  ae::model::Checkpoint ckpt_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Convolutional audio embeddings for artist and genre similarity.";
  py::register_exception<ae::Error>(m, "Error", PyExc_RuntimeError);

  m.def("read_wav", [](const fs::path& path) { return to_array(ae::wav::read(path).samples); }, py::arg("path"),
        "Decode a 22050 Hz mono WAV file into float32 samples.");
  m.def(
      "write_wav",
      [](const fs::path& path, const FloatArray& samples) {
        ae::wav::write_pcm16(path, std::span<const float>(samples.data(), static_cast<std::size_t>(samples.size())));
      },
      py::arg("path"), py::arg("samples"), "Write float samples as 16-bit PCM.");
  m.def(
      "log_mel", [](const FloatArray& samples) { return ae::dsp::log_mel(to_clip(samples)).values; }, py::arg("samples"),
      "Log-mel spectrogram with mel bins in rows and frames in columns.");
  m.def(
      "generate_synthetic_dataset",
      [](int artists, int songs, double seconds, std::uint64_t seed, const fs::path& out_dir) {
        const auto r = ae::synth::generate_synthetic_dataset(artists, songs, seconds, seed, out_dir);
        py::dict d;
        d["catalog_path"] = r.catalog_path;
        d["tracks"] = r.tracks;
        d["files_written"] = r.files_written;
        return d;
      },
      py::arg("artists"), py::arg("songs"), py::arg("seconds"), py::arg("seed"), py::arg("out_dir"));
  m.def(
      "average_precision",
      [](const std::vector<int>& relevance) {
        std::size_t n = 0;
        for (int r : relevance) n += r != 0;
        return ae::eval::average_precision(relevance, n);
      },
      py::arg("relevance"), "Average precision of a ranked 0/1 list, or None without relevant items.");
  m.def(
      "mean_average_precision",
      [](const Eigen::MatrixXd& rows, std::vector<std::string> ids, std::vector<std::string> labels) {
        return ae::eval::mean_average_precision(to_matrix(rows, std::move(ids), std::move(labels))).map;
      },
      py::arg("embeddings"), py::arg("ids"), py::arg("labels"));

  py::class_<Model>(m, "Model")
      .def(py::init<const fs::path&>(), py::arg("checkpoint"))
      .def_property_readonly("embedding_dim", &Model::embedding_dim)
      .def_property_readonly("head", &Model::head)
      .def_property_readonly("norm_stats", &Model::norm_stats)
      .def("embed_song", &Model::embed_song, py::arg("samples"))
      .def("embed_catalog", &Model::embed_catalog, py::arg("catalog"), py::arg("label") = "genre");
}
