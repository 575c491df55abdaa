#include "training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "error.hpp"
#include "metrics.hpp"
#include "random.hpp"

namespace itnet {

void TrainConfig::validate() const {
  model.validate();
  if (steps < 1) throw Error(ErrorCode::Config, "steps must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::Config, "batch_size must be >= 1");
  if (!(lr_initial > 0.0)) throw Error(ErrorCode::Config, "lr must be > 0");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) throw Error(ErrorCode::Config, "lr_decay_factor must lie in (0, 1]");
  if (lr_decay_every < 1) throw Error(ErrorCode::Config, "lr_decay_every must be >= 1");
  if (!(grad_clip_norm > 0.0)) throw Error(ErrorCode::Config, "grad_clip_norm must be > 0");
  if (!(bn_decay_start >= 0.0 && bn_decay_end < 1.0 && bn_decay_start <= bn_decay_end))
    throw Error(ErrorCode::Config, "bn decay endpoints must satisfy 0 <= start <= end < 1");
  if (!(reg_weight >= 0.0)) throw Error(ErrorCode::Config, "reg_weight must be >= 0");
}

TrainConfig preset_config(const std::string& name, Task task, std::size_t train_size) {
  TrainConfig c;
  c.model.task = task;
  if (name == "paper") {
    if (task == Task::Pose) {
      c.steps = 20000;
      c.batch_size = 100;
      c.lr_decay_every = 2000;
    } else {
      c.batch_size = 32;
      c.steps = 50 * std::max<std::size_t>(1, (train_size + 31) / 32);
      c.lr_decay_every = 6250;
    }
  } else if (name == "desk") {
    c.model.transformer_arch.width_multiplier = 0.25;
    c.model.classifier_arch.width_multiplier = 0.25;
    c.batch_size = 32;
    if (task == Task::Pose) {
      c.steps = 1500;
      c.lr_decay_every = 150;
    } else {
      c.steps = 1000;
      c.lr_decay_every = 400;
    }
  } else {
    throw Error(ErrorCode::Config, "unknown preset '" + name + "' (paper | desk)");
  }
  return c;
}

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  return cfg.lr_initial * std::pow(cfg.lr_decay_factor, static_cast<double>(step / cfg.lr_decay_every));
}

double bn_decay(const TrainConfig& cfg, std::size_t step) {
  const double f = cfg.steps <= 1 ? 1.0 : static_cast<double>(step) / static_cast<double>(cfg.steps - 1);
  return cfg.bn_decay_start + (cfg.bn_decay_end - cfg.bn_decay_start) * std::min(1.0, f);
}

void adam_step(ag::ParamStore& params, const ag::GradMap& grads, ag::GradMap& m, ag::GradMap& v, std::uint64_t t,
               double lr, const AdamConfig& adam) {
  if (t < 1) throw Error(ErrorCode::Config, "adam step count is 1-based");
  const double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(t));
  for (const auto& [name, g] : grads) {
    ag::Tensor& p = params.value(name);
    if (!p.same_shape(g)) throw Error(ErrorCode::ShapeMismatch, "gradient shape differs from parameter " + name);
    auto [mit, m_new] = m.try_emplace(name, g.rows(), g.cols(), 0.0);
    auto [vit, v_new] = v.try_emplace(name, g.rows(), g.cols(), 0.0);
    ag::Tensor& mm = mit->second;
    ag::Tensor& vv = vit->second;
    if (!mm.same_shape(g) || !vv.same_shape(g)) throw Error(ErrorCode::ShapeMismatch, "moment shape differs for " + name);
    for (std::size_t i = 0; i < g.size(); ++i) {
      mm[i] = adam.beta1 * mm[i] + (1.0 - adam.beta1) * g[i];
      vv[i] = adam.beta2 * vv[i] + (1.0 - adam.beta2) * g[i] * g[i];
      const double mhat = mm[i] / c1;
      const double vhat = vv[i] / c2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + adam.eps);
    }
  }
}

double global_norm(const ag::GradMap& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads) s += g.squared_norm();
  return std::sqrt(s);
}

double clip_grad_norm(ag::GradMap& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw Error(ErrorCode::Config, "max_norm must be > 0");
  const double n = global_norm(grads);
  if (n > max_norm) {
    const double s = max_norm / n;
    for (auto& [name, g] : grads)
      for (auto& x : g.span()) x *= s;
  }
  return n;
}

void apply_bn_updates(ag::ParamStore& params, const std::vector<ag::BnStatUpdate>& updates, double decay) {
  for (const auto& u : updates) {
    ag::Tensor& mean = params.value(u.mean_name);
    ag::Tensor& var = params.value(u.var_name);
    if (!mean.same_shape(u.mean) || !var.same_shape(u.var))
      throw Error(ErrorCode::ShapeMismatch, "batch statistics shape differs for " + u.mean_name);
    for (std::size_t i = 0; i < mean.size(); ++i) {
      mean[i] = decay * mean[i] + (1.0 - decay) * u.mean[i];
      var[i] = decay * var[i] + (1.0 - decay) * u.var[i];
    }
  }
}

TrainSet load_train_set(const std::filesystem::path& manifest_path, Task task) {
  const Manifest manifest = read_manifest(manifest_path, task == Task::Pose);
  if (manifest.records.empty()) throw Error(ErrorCode::EmptyEvaluation, "manifest has no records: " + manifest_path.string());
  TrainSet set;
  set.clouds.resize(manifest.records.size());
  parallel_for(manifest.records.size(), worker_count(),
               [&](std::size_t i) { set.clouds[i] = read_cloud(manifest.cloud_path(manifest.records[i])); });
  int max_label = -1;
  for (const auto& r : manifest.records) {
    if (task == Task::Pose) set.poses.push_back(r.pose.matrix());
    else set.labels.push_back(r.label);
    max_label = std::max(max_label, r.label);
  }
  set.num_classes = std::max(static_cast<int>(manifest.labels.size()), max_label + 1);
  return set;
}

namespace {

class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(order_.begin(), order_.end());
  }
  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    while (out.size() < batch) {
      if (pos_ == order_.size()) {
        rng_.shuffle(order_.begin(), order_.end());
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }
  const Rng& rng() const { return rng_; }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

}  // namespace

TrainResult train(const TrainSet& data, const TrainConfig& cfg_in) {
  TrainConfig cfg = cfg_in;
  const ModelSpec& spec = cfg.model;
  if (spec.task == Task::Classify && cfg.model.num_classes == 0) cfg.model.num_classes = data.num_classes;
  cfg.validate();
  const std::size_t n = data.clouds.size();
  if (n == 0) throw Error(ErrorCode::EmptyEvaluation, "empty training set");
  if (spec.task == Task::Pose && data.poses.size() != n) throw Error(ErrorCode::ShapeMismatch, "pose labels missing");
  if (spec.task == Task::Classify) {
    if (data.labels.size() != n) throw Error(ErrorCode::ShapeMismatch, "class labels missing");
    for (int l : data.labels)
      if (l < 0 || l >= spec.num_classes)
        throw Error(ErrorCode::Config, "label " + std::to_string(l) + " outside the " + std::to_string(spec.num_classes) + " classes");
  }

  TrainResult res;
  Checkpoint& ck = res.checkpoint;
  ck.spec = spec;
  Rng init_rng(derive_seed(cfg.seed, 0));
  init_model(ck.params, spec, init_rng);
  BatchSampler sampler(n, derive_seed(cfg.seed, 1));
  const std::size_t batch = std::min(cfg.batch_size, n);
  const int iterations = spec.unfold.train_iterations;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto start = std::chrono::steady_clock::now();
    const auto idx = sampler.next(batch);
    std::vector<const PointCloud*> clouds;
    for (auto i : idx) clouds.push_back(&data.clouds[i]);

    ag::Graph g(ag::Mode::Train);
    ag::Var points = g.constant(stack_points(clouds));
    const ModelOutputs out = model_forward(g, ck.params, spec, points, batch, iterations);
    ag::Var loss;
    if (spec.task == Task::Pose) {
      ag::Tensor truth(batch, 16);
      for (std::size_t b = 0; b < batch; ++b) std::copy_n(data.poses[idx[b]].m.begin(), 16, &truth(b, 0));
      loss = ploss(out.trace.composed.back(), g.constant(std::move(truth)), points);
    } else {
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(data.labels[i]);
      loss = ag::softmax_cross_entropy(out.logits, labels);
      if (spec.has_transformer && spec.unfold.variant == Variant::AffineRegularized && cfg.reg_weight > 0.0)
        for (const auto& raw : out.trace.raw) loss = ag::add(loss, ag::scale(affine_regularizer(raw), cfg.reg_weight));
    }
    const double loss_value = loss.value().item();
    ag::GradMap grads;
    try {
      g.backward(loss);
      grads = g.param_grads(ck.params);
    } catch (const Error& e) {
      throw Error(e.code(), "step " + std::to_string(step) + ": " + e.what());
    }
    const double norm = cfg.clipping_enabled() ? clip_grad_norm(grads, cfg.grad_clip_norm) : global_norm(grads);
    const double lr = learning_rate(cfg, step);
    adam_step(ck.params, grads, ck.adam_m, ck.adam_v, step + 1, lr);
    apply_bn_updates(ck.params, g.bn_updates(), bn_decay(cfg, step));
    const auto stop = std::chrono::steady_clock::now();
    res.log.push_back({step, loss_value, lr, norm, std::chrono::duration<double, std::milli>(stop - start).count()});
  }
  ck.step = cfg.steps;
  ck.rng_state = sampler.rng().state();
  return res;
}

std::string training_log_csv(const std::vector<LogRow>& log) {
  std::string out = "step,loss,lr,grad_norm,wall_ms\n";
  char buf[160];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.3f\n", r.step, r.loss, r.lr, r.grad_norm, r.wall_ms);
    out += buf;
  }
  return out;
}

}  // namespace itnet
