#pragma once

#include <nlohmann/json.hpp>
#include <string>

#include "marsrec/backbone.hpp"
#include "marsrec/metric_losses.hpp"
#include "marsrec/transforms.hpp"

namespace marsrec {

struct TrainConfig {
  int epochs = 150;
  int batch_size = 32;
  double lr = 1e-3;
  std::string optimizer = "adam";
  uint64_t seed = 0;
  std::string dataset_path;
  ModelConfig model;
  std::string loss = "ntxent";
  LossParams loss_params;
  TransformRanges transforms;
  int checkpoint_every = 0;  // epochs between periodic checkpoints; 0 = final only

  void validate() const;
};

struct EvalConfig {
  std::vector<std::string> protocols;  // subset of known_protocols()
  double threshold = 0.9;
  std::string transform_subset = "all";
  uint64_t seed = 0;

  void validate() const;
};

// One self-contained experiment: training setup, evaluation selections,
// and where the artifacts land. Archived verbatim into the output dir.
struct RunConfig {
  TrainConfig train;
  EvalConfig eval;
  std::string out_dir;

  void validate() const;
};

const std::vector<std::string>& known_protocols();
const std::vector<std::string>& known_subsets();

// strict=true rejects unknown keys, for user-supplied files; internal
// round-trips use strict=false.
nlohmann::json model_config_json(const ModelConfig& m);
ModelConfig model_config_from_json(const nlohmann::json& j, bool strict);
nlohmann::json transform_ranges_json(const TransformRanges& t);
TransformRanges transform_ranges_from_json(const nlohmann::json& j, bool strict);
nlohmann::json train_config_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, bool strict);
nlohmann::json run_config_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j, bool strict);

}  // namespace marsrec
