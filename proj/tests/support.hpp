#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "artistembed/model.hpp"
#include "artistembed/nn/tensor.hpp"

namespace testsupport {

namespace ae = artistembed;

/// Fresh scratch directory under the build tree's temp area.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const char* base = std::getenv("ARTISTEMBED_TEST_TMP");
  std::filesystem::path dir = base ? std::filesystem::path(base) : std::filesystem::temp_directory_path() / "artistembed_tests";
  dir /= name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Shared dataset directory that persists across tests (generation is
/// skipped when the files already match).
inline std::filesystem::path data_dir(const std::string& name) {
  const char* base = std::getenv("ARTISTEMBED_TEST_TMP");
  std::filesystem::path dir = base ? std::filesystem::path(base) : std::filesystem::temp_directory_path() / "artistembed_tests";
  dir /= name;
  std::filesystem::create_directories(dir);
  return dir;
}

template <class T>
ae::nn::Matrix<T> random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double lo = -1.0,
                                double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ae::nn::Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(u(rng));
  return m;
}

/// Small backbone that still takes 128 x 128 windows (used where the full
/// network would make a test slow).
inline ae::model::ArchSpec small_spec() {
  ae::model::ArchSpec s;
  s.channels = {8, 8, 16, 16, 16};
  s.embedding_dim = 16;
  return s;
}

/// Tiny backbone for exhaustive finite-difference checks.
inline ae::model::ArchSpec tiny_spec() {
  ae::model::ArchSpec s;
  s.n_mels = 5;
  s.context_frames = 16;
  s.channels = {3, 4, 4, 3, 3};
  s.kernels = {3, 4, 2, 3, 4};
  s.pools = {2, 2, 2, 1, 2};
  s.embedding_dim = 3;
  return s;
}

/// Flattened copy of every learnable parameter, in params() order.
template <class Net>
std::vector<double> flatten_params(Net& net) {
  std::vector<double> out;
  for (auto* p : net.params()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) out.push_back(static_cast<double>(p->value.data()[i]));
  }
  return out;
}

template <class Net>
void assign_params(Net& net, const std::vector<double>& values) {
  std::size_t k = 0;
  for (auto* p : net.params()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = values.at(k++);
  }
}

template <class Net>
std::vector<double> flatten_grads(Net& net) {
  std::vector<double> out;
  for (auto* p : net.params()) {
    for (Eigen::Index i = 0; i < p->grad.size(); ++i) out.push_back(static_cast<double>(p->grad.data()[i]));
  }
  return out;
}

}  // namespace testsupport
