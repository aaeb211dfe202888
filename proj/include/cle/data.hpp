#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cle/rng.hpp"
#include "cle/tensor.hpp"

namespace cle {

struct Dataset {
  Tensor inputs;            // N x D, values in [0,1]
  std::vector<int> labels;  // N
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const {
    return inputs.shape().size() == 2 ? inputs.shape()[1] : 0;
  }
};

struct Task {
  Dataset train, test;
  std::size_t head_classes = 0;
  std::vector<int> class_map;           // task label -> original class id
  std::vector<std::size_t> permutation; // pixel permutation (permuted streams)
};

struct TaskStream {
  std::vector<Task> tasks;
};

// ---- IDX format ---------------------------------------------------------

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

struct IdxError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

IdxArray read_idx(const std::string& path);
void write_idx(const IdxArray& arr, const std::string& path);

// Images (N,r,c) + labels (N) -> Dataset with pixels / 255. Optionally
// block-mean downsamples to 8x8 and caps examples per class.
Dataset make_image_dataset(const IdxArray& images, const IdxArray& labels,
                           std::size_t classes, bool downsample_to_8x8,
                           std::size_t per_class_cap);

// ---- task streams -------------------------------------------------------

TaskStream make_split_stream(const Dataset& train, const Dataset& test,
                             const std::vector<std::pair<int, int>>& pairs);

TaskStream make_permuted_stream(const Dataset& train, const Dataset& test,
                                std::size_t t_count, std::uint64_t seed);

// ---- synthetic generators -----------------------------------------------

struct SyntheticParams {
  std::string kind = "gauss-blobs";  // gauss-blobs | two-moons | cluster-images
  std::size_t classes = 2;
  std::size_t dim = 2;               // gauss-blobs only
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  double spread = 1.0;               // noise scale
  double separation = 10.0;          // gauss-blobs, in units of spread
};

struct DataPair {
  Dataset train, test;
};

DataPair make_synthetic(const SyntheticParams& p, std::uint64_t seed);

}  // namespace cle
