#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fmms/attack.hpp"
#include "fmms/data.hpp"
#include "fmms/fmms.hpp"
#include "fmms/model.hpp"

namespace fmms {

struct ModelSpec {
  std::string id;
  ModelKind kind = ModelKind::Aligned;
  std::string checkpoint;
  std::optional<uint64_t> seed;
};

enum class Method { PgdOnly, TextOnly, Sep, SgaLike, Fmms };

struct MethodSpec {
  Method method = Method::Fmms;
  // Fmms only; unset means the search section's strategy.
  std::optional<SearchStrategy> strategy;
  std::string label;  // as written in the config / report
};

struct ExperimentConfig {
  std::vector<std::string> surrogates;
  std::vector<std::string> targets;
  std::vector<MethodSpec> methods;
  std::vector<int> rounds_values;  // grid of T for fmms methods
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  int workers = 0;      // 0 = hardware parallelism
  int pairs_limit = 0;  // 0 = every gallery pair
  std::string report;   // CSV output path
};

struct Config {
  uint64_t global_seed = 0;

  DataConfig data;
  std::string data_path;
  std::optional<uint64_t> data_seed;

  int model_hidden = 64;
  int model_embed_dim = 64;
  int model_token_dim = 0;  // 0 = one-hot features (token_dim = vocab_size)

  TrainConfig train;
  std::vector<ModelSpec> models;
  std::optional<uint64_t> train_seed;

  ImageAttackBudget image_budget;
  TextAttackBudget text_budget;
  std::vector<double> scales = {0.50, 0.75, 1.00, 1.25, 1.50};
  LossVariant variant;
  PipelineOptions pipeline;

  SearchConfig search;
  ExperimentConfig experiment;

  uint64_t effective_data_seed() const;
  uint64_t effective_train_seed(size_t model_index) const;
  ModelDims model_dims() const;
  ScaleSet scale_set() const { return ScaleSet::validated(scales); }
  const ModelSpec& model_by_id(const std::string& id) const;
};

// Strict parse: unknown or ill-typed keys raise ConfigError naming the key.
Config load_config(const std::string& path);
Config parse_config(const std::string& json_text);

// The effective config (defaults filled in, seeds resolved) as JSON text;
// written next to each report for reproducibility.
std::string dump_config(const Config& cfg);

}  // namespace fmms
