#include "marsrec/config.hpp"

#include <algorithm>
#include <set>

using nlohmann::json;

namespace marsrec {

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
void pull(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("config: bad value for '") + key + "'");
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (batch_size < 2 || batch_size % 2 != 0)
    throw ConfigError("train config: batch size must be even and >= 2");
  if (!(lr >= 0.0)) throw ConfigError("train config: learning rate must be >= 0");
  if (optimizer != "adam") throw ConfigError("train config: unknown optimizer '" + optimizer + "'");
  if (checkpoint_every < 0) throw ConfigError("train config: checkpoint_every must be >= 0");
  model.validate();
  transforms.validate();
}

json model_config_json(const ModelConfig& m) {
  json j;
  j["conv_kind"] = m.conv_kind;
  j["attention_kind"] = m.attention_kind;
  j["mars_enabled"] = m.mars_enabled;
  j["num_blocks"] = m.num_blocks;
  j["channels"] = m.channels;
  j["embedding_dim"] = m.embedding_dim;
  j["gem_p_init"] = m.gem_p_init;
  j["reduction_r"] = m.reduction_r;
  j["gamma_ch"] = m.gamma_ch;
  j["gamma_sp"] = m.gamma_sp;
  j["input_h"] = m.input_h;
  j["input_w"] = m.input_w;
  j["cardinality"] = m.cardinality;
  j["se_reduction"] = m.se_reduction;
  return j;
}

ModelConfig model_config_from_json(const json& j, bool strict) {
  if (!j.is_object()) throw ConfigError("model config: expected an object");
  if (strict)
    reject_unknown(j,
                   {"conv_kind", "attention_kind", "mars_enabled", "num_blocks", "channels",
                    "embedding_dim", "gem_p_init", "reduction_r", "gamma_ch", "gamma_sp",
                    "input_h", "input_w", "cardinality", "se_reduction"},
                   "model config");
  ModelConfig m;
  pull(j, "conv_kind", m.conv_kind);
  pull(j, "attention_kind", m.attention_kind);
  pull(j, "mars_enabled", m.mars_enabled);
  pull(j, "num_blocks", m.num_blocks);
  pull(j, "channels", m.channels);
  pull(j, "embedding_dim", m.embedding_dim);
  pull(j, "gem_p_init", m.gem_p_init);
  pull(j, "reduction_r", m.reduction_r);
  pull(j, "gamma_ch", m.gamma_ch);
  pull(j, "gamma_sp", m.gamma_sp);
  pull(j, "input_h", m.input_h);
  pull(j, "input_w", m.input_w);
  pull(j, "cardinality", m.cardinality);
  pull(j, "se_reduction", m.se_reduction);
  return m;
}

json transform_ranges_json(const TransformRanges& t) {
  json j;
  j["brightness_lo"] = t.brightness_lo;
  j["brightness_hi"] = t.brightness_hi;
  j["rotation_lo"] = t.rotation_lo;
  j["rotation_hi"] = t.rotation_hi;
  j["translate_frac"] = t.translate_frac;
  return j;
}

TransformRanges transform_ranges_from_json(const json& j, bool strict) {
  if (!j.is_object()) throw ConfigError("transform ranges: expected an object");
  if (strict)
    reject_unknown(
        j, {"brightness_lo", "brightness_hi", "rotation_lo", "rotation_hi", "translate_frac"},
        "transform ranges");
  TransformRanges t;
  pull(j, "brightness_lo", t.brightness_lo);
  pull(j, "brightness_hi", t.brightness_hi);
  pull(j, "rotation_lo", t.rotation_lo);
  pull(j, "rotation_hi", t.rotation_hi);
  pull(j, "translate_frac", t.translate_frac);
  return t;
}

json train_config_json(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["optimizer"] = c.optimizer;
  j["seed"] = c.seed;
  j["dataset_path"] = c.dataset_path;
  j["model"] = model_config_json(c.model);
  j["loss"] = c.loss;
  j["loss_params"] = {{"tau", c.loss_params.tau},
                      {"delta", c.loss_params.delta},
                      {"alpha", c.loss_params.alpha}};
  j["transforms"] = transform_ranges_json(c.transforms);
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

TrainConfig train_config_from_json(const json& j, bool strict) {
  if (!j.is_object()) throw ConfigError("train config: expected an object");
  if (strict)
    reject_unknown(j,
                   {"epochs", "batch_size", "lr", "optimizer", "seed", "dataset_path", "model",
                    "loss", "loss_params", "transforms", "checkpoint_every"},
                   "train config");
  TrainConfig c;
  pull(j, "epochs", c.epochs);
  pull(j, "batch_size", c.batch_size);
  pull(j, "lr", c.lr);
  pull(j, "optimizer", c.optimizer);
  pull(j, "seed", c.seed);
  pull(j, "dataset_path", c.dataset_path);
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"), strict);
  pull(j, "loss", c.loss);
  if (j.contains("loss_params")) {
    const json& lp = j.at("loss_params");
    if (strict) reject_unknown(lp, {"tau", "delta", "alpha"}, "loss params");
    pull(lp, "tau", c.loss_params.tau);
    pull(lp, "delta", c.loss_params.delta);
    pull(lp, "alpha", c.loss_params.alpha);
  }
  if (j.contains("transforms"))
    c.transforms = transform_ranges_from_json(j.at("transforms"), strict);
  pull(j, "checkpoint_every", c.checkpoint_every);
  return c;
}

const std::vector<std::string>& known_protocols() {
  static const std::vector<std::string> p{"recall1", "incremental", "navigation",
                                          "lost-in-space", "ablation"};
  return p;
}

const std::vector<std::string>& known_subsets() {
  static const std::vector<std::string> s{"all", "brightness", "rotation", "translation",
                                          "identity"};
  return s;
}

namespace {
std::string joined(const std::vector<std::string>& xs) {
  std::string out;
  for (size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + xs[i];
  return out;
}
}  // namespace

void EvalConfig::validate() const {
  for (const auto& p : protocols)
    if (std::find(known_protocols().begin(), known_protocols().end(), p) ==
        known_protocols().end())
      throw ConfigError("eval config: unknown protocol '" + p +
                        "'; options: " + joined(known_protocols()));
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw ConfigError("eval config: threshold must be in (0,1]");
  if (std::find(known_subsets().begin(), known_subsets().end(), transform_subset) ==
      known_subsets().end())
    throw ConfigError("eval config: unknown transform subset '" + transform_subset +
                      "'; options: " + joined(known_subsets()));
}

void RunConfig::validate() const {
  train.validate();
  eval.validate();
  if (out_dir.empty()) throw ConfigError("run config: out_dir must not be empty");
}

json run_config_json(const RunConfig& c) {
  json j;
  j["train"] = train_config_json(c.train);
  j["eval"] = {{"protocols", c.eval.protocols},
               {"threshold", c.eval.threshold},
               {"transform_subset", c.eval.transform_subset},
               {"seed", c.eval.seed}};
  j["out_dir"] = c.out_dir;
  return j;
}

RunConfig run_config_from_json(const json& j, bool strict) {
  if (!j.is_object()) throw ConfigError("run config: expected an object");
  if (strict) reject_unknown(j, {"train", "eval", "out_dir"}, "run config");
  RunConfig c;
  if (!j.contains("train")) throw ConfigError("run config: missing 'train' section");
  c.train = train_config_from_json(j.at("train"), strict);
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    if (strict) reject_unknown(e, {"protocols", "threshold", "transform_subset", "seed"}, "eval config");
    if (e.contains("protocols")) {
      if (!e.at("protocols").is_array()) throw ConfigError("eval config: protocols must be an array");
      c.eval.protocols = e.at("protocols").get<std::vector<std::string>>();
    }
    pull(e, "threshold", c.eval.threshold);
    pull(e, "transform_subset", c.eval.transform_subset);
    pull(e, "seed", c.eval.seed);
  }
  pull(j, "out_dir", c.out_dir);
  return c;
}

}  // namespace marsrec
