#include "marsrec/trainer.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace marsrec {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void write_i64(std::ostream& os, int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw InputError("corrupt checkpoint: truncated");
  return v;
}
uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) throw InputError("corrupt checkpoint: truncated");
  return v;
}
int64_t read_i64(std::istream& is) { return static_cast<int64_t>(read_u64(is)); }

void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string read_string(std::istream& is) {
  const uint64_t n = read_u64(is);
  if (n > (1ull << 30)) throw InputError("corrupt checkpoint: absurd string length");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n)))
    throw InputError("corrupt checkpoint: truncated");
  return s;
}

void write_tensors(std::ostream& os,
                   const std::vector<std::pair<std::string, Tensor<float>>>& ts) {
  write_u64(os, ts.size());
  for (const auto& [name, t] : ts) {
    write_string(os, name);
    write_u32(os, static_cast<uint32_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) write_u32(os, static_cast<uint32_t>(t.dim(d)));
    write_u64(os, static_cast<uint64_t>(t.size()));
    os.write(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
  }
}

std::vector<std::pair<std::string, Tensor<float>>> read_tensors(std::istream& is) {
  const uint64_t count = read_u64(is);
  if (count > 100000) throw InputError("corrupt checkpoint: absurd tensor count");
  std::vector<std::pair<std::string, Tensor<float>>> out;
  for (uint64_t i = 0; i < count; ++i) {
    const std::string name = read_string(is);
    const uint32_t rank = read_u32(is);
    if (rank > 4) throw InputError("corrupt checkpoint: tensor rank > 4");
    std::vector<int> shape;
    int64_t expect = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<int>(read_u32(is)));
      expect *= shape.back();
    }
    const uint64_t n = read_u64(is);
    if (static_cast<int64_t>(n) != expect || n > (1ull << 28))
      throw InputError("corrupt checkpoint: tensor size mismatch");
    Tensor<float> t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(n * sizeof(float))))
      throw InputError("corrupt checkpoint: truncated tensor data");
    out.emplace_back(name, std::move(t));
  }
  return out;
}

constexpr uint32_t kMagic = 0x4353524Du;  // "MRSC"
constexpr uint32_t kVersion = 1;

void assign_by_name(const std::vector<std::pair<std::string, Tensor<float>>>& src,
                    const std::string& name, Tensor<float>& dst) {
  for (const auto& [n, t] : src)
    if (n == name) {
      if (t.shape() != dst.shape())
        throw InputError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape()) +
                         ", expected " + shape_str(dst.shape()));
      dst = t;
      return;
    }
  throw InputError("checkpoint is missing tensor '" + name + "'");
}

}  // namespace

std::string metrics_csv_header(int num_blocks) {
  std::string h = "step,epoch,ml_loss";
  for (int i = 1; i <= num_blocks; ++i) {
    h += ",mars_block_" + std::to_string(i) + "_ch";
    h += ",mars_block_" + std::to_string(i) + "_sp";
  }
  return h + "\n";
}

std::string metrics_csv_row(const MetricsRow& row) {
  std::string s = std::to_string(row.step) + "," + std::to_string(row.epoch) + "," +
                  fmt_double(row.ml_loss);
  for (size_t i = 0; i < row.block_ch.size(); ++i)
    s += "," + fmt_double(row.block_ch[i]) + "," + fmt_double(row.block_sp[i]);
  return s + "\n";
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot write checkpoint: " + path);
  write_u32(os, kMagic);
  write_u32(os, kVersion);
  write_string(os, train_config_json(ck.config).dump());
  write_u32(os, static_cast<uint32_t>(ck.epoch));
  write_i64(os, ck.step);
  write_i64(os, ck.metrics_rows);
  for (uint64_t s : ck.rng_state) write_u64(os, s);
  write_i64(os, ck.opt_t);
  write_tensors(os, ck.tensors);
  write_tensors(os, ck.opt_m);
  write_tensors(os, ck.opt_v);
  if (!os) throw InputError("short write for checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot read checkpoint: " + path);
  if (read_u32(is) != kMagic) throw InputError("corrupt checkpoint: bad magic in " + path);
  if (read_u32(is) != kVersion) throw InputError("unsupported checkpoint version in " + path);
  Checkpoint ck;
  try {
    ck.config = train_config_from_json(nlohmann::json::parse(read_string(is)), false);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("corrupt checkpoint: bad config block: ") + e.what());
  }
  ck.epoch = static_cast<int>(read_u32(is));
  ck.step = read_i64(is);
  ck.metrics_rows = read_i64(is);
  for (auto& s : ck.rng_state) s = read_u64(is);
  ck.opt_t = read_i64(is);
  ck.tensors = read_tensors(is);
  ck.opt_m = read_tensors(is);
  ck.opt_v = read_tensors(is);
  return ck;
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::attach(nn::ParamSet<float>& params) {
  m_.clear();
  v_.clear();
  t_ = 0;
  for (auto& [name, p] : params.params) {
    m_.emplace_back(p->value.shape());
    m_.back().fill(0.0f);
    v_.emplace_back(p->value.shape());
    v_.back().fill(0.0f);
  }
}

void Adam::step(nn::ParamSet<float>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t k = 0; k < params.params.size(); ++k) {
    auto& p = params.params[k].second;
    if (!p->grad_alloc) continue;  // parameter unused by this graph
    auto& m = m_[k];
    auto& v = v_[k];
    for (int64_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      m[i] = static_cast<float>(beta1_ * m[i] + (1 - beta1_) * g);
      v[i] = static_cast<float>(beta2_ * v[i] + (1 - beta2_) * g * g);
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      p->value[i] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
    p->clear_grad();
  }
}

Trainer::Trainer(const TrainConfig& cfg, const PatchDataset& ds, std::vector<int> train_ids)
    : cfg_(cfg), ds_(&ds), train_ids_(std::move(train_ids)), opt_(cfg.lr), rng_(cfg.seed) {
  cfg_.validate();
  if (train_ids_.empty()) throw InputError("trainer: empty training split");
  for (int id : train_ids_)
    if (id < 0 || id >= ds.num_instances()) throw InputError("trainer: train id out of range");
  build(cfg_.seed);
}

void Trainer::build(uint64_t init_seed) {
  const Rng base(init_seed);
  Rng model_rng = base.fork(1);
  model_ = std::make_shared<nn::Model<float>>(cfg_.model, model_rng);
  params_ = model_->parameters();
  if (cfg_.model.mars_enabled) {
    Rng mars_rng = base.fork(2);
    mars_ = std::make_shared<MarsRegularizer<float>>(cfg_.model, mars_rng);
    mars_->collect(params_);
  }
  if (cfg_.loss == "proxy_anchor") {
    Rng prng = base.fork(3);
    const int D = cfg_.model.embedding_dim;
    proxies_ = ad::leaf(
        nn::uniform_init<float>({ds_->num_instances(), D}, 1.0 / std::sqrt(double(D)), prng), true);
    params_.add("proxies", proxies_);
  }
  opt_.attach(params_);
  rng_ = base.fork(4);
}

void Trainer::train_epoch() {
  if (epoch_ >= cfg_.epochs)
    throw InputError("train_epoch: configured epoch budget already spent");
  ++epoch_;
  Rng erng(rng_.next_u64());
  std::vector<int> order = train_ids_;
  erng.shuffle(order);

  const size_t half = static_cast<size_t>(cfg_.batch_size) / 2;
  for (size_t pos = 0; pos < order.size(); pos += half) {
    std::vector<int> chunk(order.begin() + pos,
                           order.begin() + std::min(pos + half, order.size()));
    if (chunk.size() < 2) break;  // a lone instance cannot form a contrastive batch
    const uint64_t batch_seed = erng.next_u64();
    PairBatch batch = build_pair_batch(*ds_, chunk, static_cast<int>(2 * chunk.size()), batch_seed,
                                       cfg_.transforms);

    auto images = ad::leaf(batch.images, false);
    auto out = model_->forward(images, true);
    MinedIndices mined = ms_mine(out.embeddings->value, batch.labels, batch.twin_index);

    LossContext<float> ctx;
    ctx.embeddings = out.embeddings;
    ctx.labels = &batch.labels;
    ctx.mined = &mined;
    ctx.proxies = proxies_;
    ad::NodePtr<float> ml = resolve_loss<float>(cfg_.loss)(ctx, cfg_.loss_params);

    MetricsRow row;
    row.step = ++step_;
    row.epoch = epoch_;
    row.ml_loss = static_cast<double>(ml->value[0]);
    row.block_ch.assign(cfg_.model.num_blocks, 0.0);
    row.block_sp.assign(cfg_.model.num_blocks, 0.0);

    ad::NodePtr<float> total = ml;
    if (mars_) {
      const auto pairs = twin_pairs(mined);
      auto reg = mars_->forward(out.attention, batch.transforms, pairs, true);
      total = ad::add(total, reg.total);
      row.block_ch = reg.block_ch;
      row.block_sp = reg.block_sp;
    }

    const double value = static_cast<double>(total->value[0]);
    if (!std::isfinite(value))
      throw TrainError("non-finite loss at epoch " + std::to_string(epoch_) + " step " +
                       std::to_string(step_) + ", batch seed " + std::to_string(batch_seed));

    ad::backward(total);
    opt_.step(params_);
    // Pooling exponents stay in their valid domain.
    for (auto& [name, p] : params_.params)
      if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".p") == 0)
        for (int64_t i = 0; i < p->value.size(); ++i)
          p->value[i] = std::max(p->value[i], 1.0f);

    metrics_.push_back(std::move(row));
  }
}

Checkpoint Trainer::snapshot() const {
  Checkpoint ck;
  ck.config = cfg_;
  ck.epoch = epoch_;
  ck.step = step_;
  ck.metrics_rows = metrics_logged_;
  ck.rng_state = rng_.state();
  for (const auto& [name, p] : params_.params) ck.tensors.emplace_back(name, p->value);
  for (const auto& [name, b] : params_.buffers) ck.tensors.emplace_back(name, *b);
  for (size_t k = 0; k < params_.params.size(); ++k) {
    ck.opt_m.emplace_back(params_.params[k].first, opt_.m_[k]);
    ck.opt_v.emplace_back(params_.params[k].first, opt_.v_[k]);
  }
  ck.opt_t = opt_.t_;
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  if (model_config_json(ck.config.model) != model_config_json(cfg_.model))
    throw InputError("checkpoint was written for a different model configuration");
  for (auto& [name, p] : params_.params) assign_by_name(ck.tensors, name, p->value);
  for (auto& [name, b] : params_.buffers) assign_by_name(ck.tensors, name, *b);
  for (size_t k = 0; k < params_.params.size(); ++k) {
    assign_by_name(ck.opt_m, params_.params[k].first, opt_.m_[k]);
    assign_by_name(ck.opt_v, params_.params[k].first, opt_.v_[k]);
  }
  opt_.t_ = ck.opt_t;
  rng_.set_state(ck.rng_state);
  epoch_ = ck.epoch;
  step_ = ck.step;
  metrics_.clear();
  metrics_logged_ = ck.metrics_rows;
}

Checkpoint Trainer::fit(const std::string& out_dir, bool resume) {
  fs::create_directories(out_dir);
  const fs::path csv_path = fs::path(out_dir) / "metrics.csv";

  if (resume) {
    fs::path best;
    int best_epoch = -1;
    for (const auto& e : fs::directory_iterator(out_dir)) {
      const std::string name = e.path().filename().string();
      int ep = -1;
      if (name == "checkpoint_final.ckpt")
        ep = 1 << 29;
      else if (std::sscanf(name.c_str(), "checkpoint_epoch_%d.ckpt", &ep) != 1)
        continue;
      if (ep > best_epoch) {
        best_epoch = ep;
        best = e.path();
      }
    }
    if (best.empty()) throw InputError("fit: resume requested but no checkpoint in " + out_dir);
    restore(load_checkpoint(best.string()));

    // Keep only the rows the checkpoint vouches for.
    std::ifstream in(csv_path);
    if (!in) throw InputError("fit: resume requested but no metrics log in " + out_dir);
    std::string kept, line;
    for (int64_t i = 0; std::getline(in, line) && i <= metrics_logged_; ++i) kept += line + "\n";
    in.close();
    std::ofstream(csv_path, std::ios::trunc) << kept;
  } else {
    std::ofstream(csv_path, std::ios::trunc) << metrics_csv_header(cfg_.model.num_blocks);
  }

  std::ofstream csv(csv_path, std::ios::app);
  size_t flushed = metrics_.size();
  while (epoch_ < cfg_.epochs) {
    train_epoch();
    for (; flushed < metrics_.size(); ++flushed, ++metrics_logged_)
      csv << metrics_csv_row(metrics_[flushed]);
    csv.flush();
    if (cfg_.checkpoint_every > 0 && epoch_ % cfg_.checkpoint_every == 0 && epoch_ < cfg_.epochs)
      save_checkpoint(snapshot(), (fs::path(out_dir) /
                                   ("checkpoint_epoch_" + std::to_string(epoch_) + ".ckpt"))
                                      .string());
  }
  Checkpoint final = snapshot();
  save_checkpoint(final, (fs::path(out_dir) / "checkpoint_final.ckpt").string());
  return final;
}

Embedder make_embedder(std::shared_ptr<nn::Model<float>> model) {
  return [model](const Image& img, int) {
    const auto& cfg = model->cfg;
    if (img.dim(0) != cfg.input_h || img.dim(1) != cfg.input_w)
      throw InputError("embedder: image resolution does not match the model input");
    Tensor<float> batch({1, 1, cfg.input_h, cfg.input_w});
    std::copy(img.vec().begin(), img.vec().end(), batch.data());
    auto out = model->forward(ad::leaf(std::move(batch), false), false);
    Embedding e(out.embeddings->value.size());
    for (size_t i = 0; i < e.size(); ++i) e[i] = static_cast<double>(out.embeddings->value[i]);
    return e;
  };
}

std::shared_ptr<nn::Model<float>> model_from_checkpoint(const Checkpoint& ck) {
  Rng rng = Rng(ck.config.seed).fork(1);
  auto model = std::make_shared<nn::Model<float>>(ck.config.model, rng);
  nn::ParamSet<float> ps = model->parameters();
  for (auto& [name, p] : ps.params) assign_by_name(ck.tensors, name, p->value);
  for (auto& [name, b] : ps.buffers) assign_by_name(ck.tensors, name, *b);
  return model;
}

}  // namespace marsrec
