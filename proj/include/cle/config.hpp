#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cle/data.hpp"

namespace cle {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// All defaults are desk-scale; see README for the rationale behind each value.
struct ExperimentConfig {
  std::string mode = "npbcl";        // npbcl | vcl | naive
  std::string problem = "supervised";  // supervised | vae
  std::uint64_t seed = 1;
  std::string output_dir = "runs/out";

  struct DataCfg {
    std::string source = "synthetic";  // synthetic | idx
    SyntheticParams synthetic;
    std::string idx_train_images, idx_train_labels;
    std::string idx_test_images, idx_test_labels;
    bool idx_downsample = true;
    std::size_t idx_train_cap = 500, idx_test_cap = 200;
    std::string stream = "split";      // split | permuted
    std::vector<std::pair<int, int>> split_pairs = {
        {0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}};
    std::size_t permuted_tasks = 3;
  } data;

  struct ArchCfg {
    std::vector<std::size_t> hidden = {8};
    std::size_t expansion_reserve = 0;  // 0 disables dynamic expansion
    std::size_t latent = 4;             // vae
    std::vector<std::size_t> vae_hidden = {16};
  } arch;

  struct HyperCfg {
    double alpha = 30.0;
    double sigma0 = 0.6;
    double lr = 0.001;
    double lr_ibp = 0.01;
    double lr_finetune = 0.0001;
    double lr_ml = 0.01;
    double lambda_start = 10.0;
    double lambda_min = 0.25;
    int epochs = 5;
    int finetune_epochs = 5;
    int ml_init_epochs = 1;
    int s_train = 10;
    int s_test = 100;
    std::size_t batch = 64;
    std::string coreset_method = "random";  // random | k-center
    std::size_t coreset_size = 10;
    int coreset_epochs = 5;
  } hyper;
};

// Parses + validates; unknown keys and out-of-range values raise ConfigError
// naming the offending key.
ExperimentConfig config_parse(const std::string& text);
ExperimentConfig config_load(const std::string& path);

// Resolved-config echo; config_parse(config_dump(c)) == c field-for-field.
std::string config_dump(const ExperimentConfig& c);

TaskStream build_stream(const ExperimentConfig& c);

}  // namespace cle
