#include <algorithm>
#include <cmath>
#include <cstring>

#include "nestcv/error.h"
#include "nestcv/prng.h"
#include "nestcv/trainer.h"

namespace nestcv {

namespace {

constexpr char kMagic[8] = {'N', 'C', 'V', 'T', 'I', 'N', 'Y', '1'};

struct Hyper {
  int hidden = 32;
  std::size_t batch = 32;
  double lr = 0.01;
  double decay = 0.0;
  double momentum = 0.0;
  bool nesterov = false;
};

std::string require(const HyperparameterConfig& cfg, const char* axis) {
  auto v = cfg.get(axis);
  if (!v) throw UsageError(std::string("tiny learner needs config axis '") + axis + "'");
  return *v;
}

Hyper parse_hyper(const HyperparameterConfig& cfg) {
  Hyper h;
  try {
    h.hidden = TinyLearnerBackend::hidden_width(require(cfg, "architecture"));
    const long batch = std::stol(require(cfg, "batch_size"));
    if (batch < 1) throw UsageError("batch_size must be >= 1");
    h.batch = static_cast<std::size_t>(batch);
    h.lr = std::stod(require(cfg, "learning_rate"));
    h.decay = std::stod(require(cfg, "decay"));
    h.momentum = std::stod(require(cfg, "momentum"));
  } catch (const std::logic_error&) {
    throw UsageError("config h_" + std::to_string(cfg.index) +
                     ": non-numeric tiny learner hyperparameter");
  }
  const auto nesterov = require(cfg, "nesterov");
  h.nesterov = nesterov == "enabled" || nesterov == "true" || nesterov == "1";
  if (h.lr < 0 || h.decay < 0 || h.momentum < 0 || h.momentum >= 1)
    throw UsageError("config h_" + std::to_string(cfg.index) +
                     ": hyperparameter out of range");
  return h;
}

// Parameters laid out as [W1 (H x D) | b1 (H) | W2 (C x H) | b2 (C)].
class Network {
 public:
  Network(std::size_t dim, std::size_t hidden, std::size_t classes)
      : d_(dim), h_(hidden), c_(classes), params_(size()), grad_(size()),
        hidden_act_(hidden), probs_(classes) {}

  std::size_t size() const { return h_ * d_ + h_ + c_ * h_ + c_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& grad() const { return grad_; }

  double* w1() { return params_.data(); }
  double* b1() { return w1() + h_ * d_; }
  double* w2() { return b1() + h_; }
  double* b2() { return w2() + c_ * h_; }

  // Forward pass; leaves activations for backward(). Returns predicted class.
  std::size_t forward(const double* x) {
    const double* W1 = w1();
    const double* B1 = b1();
    for (std::size_t j = 0; j < h_; ++j) {
      double a = B1[j];
      for (std::size_t i = 0; i < d_; ++i) a += W1[j * d_ + i] * x[i];
      hidden_act_[j] = a > 0 ? a : 0.0;
    }
    const double* W2 = w2();
    const double* B2 = b2();
    double zmax = -INFINITY;
    std::size_t best = 0;
    for (std::size_t c = 0; c < c_; ++c) {
      double z = B2[c];
      for (std::size_t j = 0; j < h_; ++j) z += W2[c * h_ + j] * hidden_act_[j];
      probs_[c] = z;
      if (z > zmax) {
        zmax = z;
        best = c;
      }
    }
    double total = 0;
    for (auto& p : probs_) {
      p = std::exp(p - zmax);
      total += p;
    }
    for (auto& p : probs_) p /= total;
    return best;
  }

  // Accumulates d(cross-entropy)/d(params) for the last forward(); returns
  // the sample loss.
  double backward(const double* x, std::size_t label) {
    const double loss = -std::log(std::max(probs_[label], 1e-300));
    double* gW1 = grad_.data();
    double* gB1 = gW1 + h_ * d_;
    double* gW2 = gB1 + h_;
    double* gB2 = gW2 + c_ * h_;
    const double* W2 = w2();
    for (std::size_t c = 0; c < c_; ++c) {
      const double delta = probs_[c] - (c == label ? 1.0 : 0.0);
      gB2[c] += delta;
      for (std::size_t j = 0; j < h_; ++j) gW2[c * h_ + j] += delta * hidden_act_[j];
    }
    for (std::size_t j = 0; j < h_; ++j) {
      if (hidden_act_[j] <= 0) continue;
      double back = 0;
      for (std::size_t c = 0; c < c_; ++c)
        back += W2[c * h_ + j] * (probs_[c] - (c == label ? 1.0 : 0.0));
      gB1[j] += back;
      for (std::size_t i = 0; i < d_; ++i) gW1[j * d_ + i] += back * x[i];
    }
    return loss;
  }

  void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

 private:
  std::size_t d_, h_, c_;
  std::vector<double> params_;
  std::vector<double> grad_;
  std::vector<double> hidden_act_;
  std::vector<double> probs_;
};

std::vector<char> encode_state(int epoch, const std::vector<double>& params,
                               const std::vector<double>& velocity) {
  std::vector<char> blob(sizeof kMagic + sizeof(std::int32_t) + sizeof(std::uint64_t) +
                         2 * params.size() * sizeof(double));
  char* p = blob.data();
  std::memcpy(p, kMagic, sizeof kMagic);
  p += sizeof kMagic;
  const std::int32_t e = epoch;
  std::memcpy(p, &e, sizeof e);
  p += sizeof e;
  const std::uint64_t n = params.size();
  std::memcpy(p, &n, sizeof n);
  p += sizeof n;
  std::memcpy(p, params.data(), n * sizeof(double));
  p += n * sizeof(double);
  std::memcpy(p, velocity.data(), n * sizeof(double));
  return blob;
}

int decode_state(const std::vector<char>& blob, std::vector<double>& params,
                 std::vector<double>& velocity) {
  const std::size_t header = sizeof kMagic + sizeof(std::int32_t) + sizeof(std::uint64_t);
  if (blob.size() < header || std::memcmp(blob.data(), kMagic, sizeof kMagic) != 0)
    throw TrainerFailure("tiny learner checkpoint has a bad header");
  const char* p = blob.data() + sizeof kMagic;
  std::int32_t epoch = 0;
  std::memcpy(&epoch, p, sizeof epoch);
  p += sizeof epoch;
  std::uint64_t n = 0;
  std::memcpy(&n, p, sizeof n);
  p += sizeof n;
  if (n != params.size() || blob.size() != header + 2 * n * sizeof(double))
    throw TrainerFailure("tiny learner checkpoint does not match the network shape");
  std::memcpy(params.data(), p, n * sizeof(double));
  p += n * sizeof(double);
  std::memcpy(velocity.data(), p, n * sizeof(double));
  return epoch;
}

}  // namespace

int TinyLearnerBackend::hidden_width(const std::string& architecture) {
  if (architecture == "ResNet50") return 32;
  if (architecture == "InceptionV3") return 48;
  if (architecture == "Xception") return 64;
  throw UsageError("tiny learner has no width for architecture '" + architecture + "'");
}

TaskResult TinyLearnerBackend::run(const TrainingTask& task, TaskContext& ctx) {
  if (!ctx.data || !ctx.data->manifest || !ctx.data->folds)
    throw UsageError("tiny learner needs manifest and folds");
  const auto& manifest = *ctx.data->manifest;
  const auto& folds = *ctx.data->folds;
  const Hyper hp = parse_hyper(task.config);
  std::size_t dim = 0;
  try {
    dim = manifest.feature_dim();
  } catch (const IntegrityError& e) {
    throw UsageError(std::string("tiny learner: ") + e.what());
  }
  const std::size_t classes = manifest.class_names().size();

  std::vector<std::size_t> train_idx, eval_idx;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const int f = folds.fold_of[i];
    if (std::binary_search(task.train_folds.begin(), task.train_folds.end(), f))
      train_idx.push_back(i);
    else if (task.eval_fold && f == *task.eval_fold)
      eval_idx.push_back(i);
  }
  if (!task.eval_fold) eval_idx = train_idx;
  if (train_idx.empty()) throw TrainerFailure(task.task_id + ": empty training set");
  if (eval_idx.empty()) throw TrainerFailure(task.task_id + ": empty evaluation set");

  // Standardize with training-set statistics.
  std::vector<double> mean(dim, 0.0), scale(dim, 0.0);
  for (auto i : train_idx)
    for (std::size_t f = 0; f < dim; ++f) mean[f] += (*manifest.items()[i].features)[f];
  for (auto& m : mean) m /= static_cast<double>(train_idx.size());
  for (auto i : train_idx)
    for (std::size_t f = 0; f < dim; ++f) {
      const double dv = (*manifest.items()[i].features)[f] - mean[f];
      scale[f] += dv * dv;
    }
  for (auto& s : scale) {
    s = std::sqrt(s / static_cast<double>(train_idx.size()));
    s = s > 1e-12 ? 1.0 / s : 1.0;
  }
  std::vector<double> x(manifest.size() * dim);
  std::vector<std::size_t> y(manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& item = manifest.items()[i];
    for (std::size_t f = 0; f < dim; ++f)
      x[i * dim + f] = ((*item.features)[f] - mean[f]) * scale[f];
    y[i] = static_cast<std::size_t>(manifest.class_index(item.label));
  }

  Network net(dim, static_cast<std::size_t>(hp.hidden), classes);
  std::vector<double> velocity(net.size(), 0.0);
  const std::uint64_t task_seed = ctx.seed ^ fnv1a64(task.task_id);

  if (task.resume_from_epoch > 0) {
    const auto blob =
        ctx.store->load_model(ctx.store->model_ref(task.task_id, task.resume_from_epoch));
    if (decode_state(blob, net.params(), velocity) != task.resume_from_epoch)
      throw TrainerFailure(task.task_id + ": checkpoint epoch mismatch",
                           task.resume_from_epoch);
  } else {
    // Hidden layer: Glorot-uniform. Output layer: zero weights with biases at
    // the log class priors, so an untrained network predicts the training
    // majority class.
    auto init = DeterministicPrng::for_stream(task_seed, 0);
    const double limit =
        std::sqrt(6.0 / static_cast<double>(dim + static_cast<std::size_t>(hp.hidden)));
    double* w1 = net.w1();
    for (std::size_t k = 0; k < static_cast<std::size_t>(hp.hidden) * dim; ++k)
      w1[k] = (2.0 * init.uniform() - 1.0) * limit;
    std::vector<double> prior(classes, 1.0);
    for (auto i : train_idx) prior[y[i]] += 1.0;
    for (std::size_t c = 0; c < classes; ++c)
      net.b2()[c] = std::log(prior[c] / static_cast<double>(train_idx.size() + classes));
  }

  auto accuracy = [&]() {
    std::size_t hits = 0;
    for (auto i : eval_idx)
      if (net.forward(&x[i * dim]) == y[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(eval_idx.size());
  };

  TaskResult result{task.task_id, 0.0, task.resume_from_epoch, ""};
  if (task.resume_from_epoch > 0) {
    result.checkpoint_ref = ctx.store->model_ref(task.task_id, task.resume_from_epoch);
    result.metric = accuracy();
  }

  std::vector<std::size_t> order = train_idx;
  auto& params = net.params();
  for (int epoch = task.resume_from_epoch + 1; epoch <= task.epochs; ++epoch) {
    if (ctx.cancelled()) throw TrainerFailure(task.task_id + ": cancelled", epoch - 1);
    const double lr = hp.lr / (1.0 + hp.decay * static_cast<double>(epoch - 1));
    order = train_idx;
    auto shuffle = DeterministicPrng::for_stream(task_seed, static_cast<std::uint64_t>(epoch));
    shuffle.shuffle(std::span(order));

    for (std::size_t start = 0; start < order.size(); start += hp.batch) {
      const std::size_t end = std::min(order.size(), start + hp.batch);
      net.zero_grad();
      double loss = 0;
      for (std::size_t b = start; b < end; ++b) {
        const auto i = order[b];
        net.forward(&x[i * dim]);
        loss += net.backward(&x[i * dim], y[i]);
      }
      if (!std::isfinite(loss))
        throw TrainerFailure(task.task_id + ": non-finite loss", epoch - 1);
      const double inv = 1.0 / static_cast<double>(end - start);
      const auto& grad = net.grad();
      for (std::size_t p = 0; p < params.size(); ++p) {
        const double g = grad[p] * inv;
        velocity[p] = hp.momentum * velocity[p] - lr * g;
        params[p] += hp.nesterov ? hp.momentum * velocity[p] - lr * g : velocity[p];
      }
    }
    for (double p : params)
      if (!std::isfinite(p))
        throw TrainerFailure(task.task_id + ": weights diverged", epoch - 1);

    const auto blob = encode_state(epoch, params, velocity);
    result.checkpoint_ref = ctx.store->save_model(task.task_id, epoch, blob);
    result.metric = accuracy();
    result.epochs_completed = epoch;
    if (ctx.on_epoch) ctx.on_epoch(epoch, result.metric, result.checkpoint_ref);
  }
  return result;
}

}  // namespace nestcv
