#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "marsrec/config.hpp"
#include "marsrec/data.hpp"
#include "marsrec/evaluator.hpp"
#include "marsrec/mars.hpp"
#include "marsrec/metric_losses.hpp"

namespace marsrec {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MetricsRow {
  int64_t step = 0;
  int epoch = 0;
  double ml_loss = 0;
  std::vector<double> block_ch, block_sp;  // one entry per backbone block
};

std::string metrics_csv_header(int num_blocks);
std::string metrics_csv_row(const MetricsRow& row);

// Everything needed to continue or replay a run bit-for-bit.
struct Checkpoint {
  TrainConfig config;
  int epoch = 0;  // completed epochs
  int64_t step = 0;
  int64_t metrics_rows = 0;  // rows already written to the metrics log
  std::array<uint64_t, 4> rng_state = {0, 0, 0, 0};
  std::vector<std::pair<std::string, Tensor<float>>> tensors;  // params then buffers
  std::vector<std::pair<std::string, Tensor<float>>> opt_m, opt_v;
  int64_t opt_t = 0;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);  // corrupt file → InputError

// Adaptive-moment optimizer over a named parameter set.
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void attach(nn::ParamSet<float>& params);  // sizes state to the parameters
  void step(nn::ParamSet<float>& params);    // consumes accumulated gradients
  int64_t t() const { return t_; }

 private:
  friend class Trainer;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor<float>> m_, v_;
};

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const PatchDataset& ds, std::vector<int> train_ids);

  // One pass over the training split; appends one metrics row per step.
  void train_epoch();

  // Runs to cfg.epochs with periodic and final checkpoints plus metrics.csv
  // in out_dir; picks up from the newest checkpoint there when resume=true.
  Checkpoint fit(const std::string& out_dir, bool resume = false);

  Checkpoint snapshot() const;
  void restore(const Checkpoint& ck);

  nn::Model<float>& model() { return *model_; }
  const std::vector<MetricsRow>& metrics() const { return metrics_; }
  int completed_epochs() const { return epoch_; }
  nn::ParamSet<float>& parameters() { return params_; }

 private:
  void build(uint64_t init_seed);

  TrainConfig cfg_;
  const PatchDataset* ds_;
  std::vector<int> train_ids_;
  std::shared_ptr<nn::Model<float>> model_;
  std::shared_ptr<MarsRegularizer<float>> mars_;
  ad::NodePtr<float> proxies_;  // only for proxy-based losses
  nn::ParamSet<float> params_;
  Adam opt_;
  Rng rng_;
  int epoch_ = 0;
  int64_t step_ = 0;
  int64_t metrics_logged_ = 0;  // rows already flushed to metrics.csv
  std::vector<MetricsRow> metrics_;
};

// Wraps a trained model as an evaluation-protocol embedder (eval mode,
// single-image batches).
Embedder make_embedder(std::shared_ptr<nn::Model<float>> model);

// Convenience: rebuild a model (eval use) from a checkpoint's tensors.
std::shared_ptr<nn::Model<float>> model_from_checkpoint(const Checkpoint& ck);

}  // namespace marsrec
