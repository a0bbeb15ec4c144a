#include "mtmil/mil_net.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mtmil/parallel.hpp"
#include "mtmil/rng.hpp"

namespace mtmil {

namespace {

constexpr double kProbClampLo = 1e-7;
constexpr double kProbClampHi = 1.0 - 1e-7;
constexpr char kMagic[4] = {'M', 'I', 'L', 'M'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint16_t kFlagGated = 1u << 0;

void check_finite(const Eigen::Ref<const FeatureMatrix>& tiles) {
  if (!tiles.allFinite())
    throw Error(ErrorCode::NumericError, "non-finite tile features");
}

// Encoder activations for a tile matrix, double precision.
Matrix encode(const ModelParams& p,
              const Eigen::Ref<const FeatureMatrix>& tiles) {
  Matrix h = (tiles.cast<double>() * p.encoder_w.transpose()).rowwise() +
             p.encoder_b.transpose();
  return h.cwiseMax(0.0);
}

Vector attention_scores(const ModelParams& p, const Matrix& hidden,
                        Matrix* out_tanh, Matrix* out_gate) {
  Matrix t = (hidden * p.attn_v.transpose()).array().tanh();
  Vector scores;
  if (p.gated) {
    Matrix g =
        (1.0 / (1.0 + (-(hidden * p.attn_u.transpose())).array().exp()))
            .matrix();
    scores = (t.array() * g.array()).matrix() * p.attn_w;
    if (out_gate) *out_gate = std::move(g);
  } else {
    scores = t * p.attn_w;
  }
  if (out_tanh) *out_tanh = std::move(t);
  return scores;
}

Vector stable_softmax(const Vector& scores) {
  const double m = scores.maxCoeff();
  Vector e = (scores.array() - m).exp();
  return e / e.sum();
}

}  // namespace

void ModelParams::validate() const {
  if (dim < 1 || hidden < 1 || attn_dim < 1 || n_tasks < 1)
    throw Error(ErrorCode::ShapeError, "model dimensions must be >= 1");
  auto bad = [](const Matrix& m, std::int64_t r, std::int64_t c) {
    return m.rows() != r || m.cols() != c || !m.allFinite();
  };
  if (bad(encoder_w, hidden, dim) || encoder_b.size() != hidden ||
      bad(attn_v, attn_dim, hidden) || attn_w.size() != attn_dim ||
      (gated && bad(attn_u, attn_dim, hidden)) ||
      static_cast<std::int64_t>(head_w.size()) != n_tasks ||
      static_cast<std::int64_t>(head_b.size()) != n_tasks)
    throw Error(ErrorCode::ShapeError, "inconsistent parameter shapes");
  for (std::int64_t t = 0; t < n_tasks; ++t)
    if (bad(head_w[t], 2, hidden) || head_b[t].size() != 2)
      throw Error(ErrorCode::ShapeError, "inconsistent head shapes");
  if (!encoder_b.allFinite() || !attn_w.allFinite())
    throw Error(ErrorCode::NumericError, "non-finite parameters");
}

ModelParams ModelParams::zeros_like(const ModelParams& other) {
  ModelParams z;
  z.dim = other.dim;
  z.hidden = other.hidden;
  z.attn_dim = other.attn_dim;
  z.n_tasks = other.n_tasks;
  z.gated = other.gated;
  z.encoder_w = Matrix::Zero(other.hidden, other.dim);
  z.encoder_b = Vector::Zero(other.hidden);
  z.attn_v = Matrix::Zero(other.attn_dim, other.hidden);
  z.attn_w = Vector::Zero(other.attn_dim);
  if (other.gated) z.attn_u = Matrix::Zero(other.attn_dim, other.hidden);
  for (std::int64_t t = 0; t < other.n_tasks; ++t) {
    z.head_w.emplace_back(Matrix::Zero(2, other.hidden));
    z.head_b.emplace_back(Vector::Zero(2));
  }
  return z;
}

void TrainConfig::validate() const {
  if (learning_rate <= 0)
    throw Error(ErrorCode::ConfigError, "learning_rate must be positive");
  if (weight_decay < 0)
    throw Error(ErrorCode::ConfigError, "weight_decay must be nonnegative");
  if (batch_size < 1 || train_bag_size < 1 || infer_bag_size < 1)
    throw Error(ErrorCode::ConfigError, "batch and bag sizes must be >= 1");
  if (max_epochs < 1)
    throw Error(ErrorCode::ConfigError, "max_epochs must be >= 1");
  if (patience < 0)
    throw Error(ErrorCode::ConfigError, "patience must be >= 0");
  if (hidden < 1 || attn_dim < 1)
    throw Error(ErrorCode::ConfigError, "hidden and attn_dim must be >= 1");
}

std::vector<std::string> TrainConfig::config_keys() {
  return {"learning_rate", "weight_decay", "batch_size", "train_bag_size",
          "infer_bag_size", "max_epochs",  "patience",   "gated_attention",
          "hidden",        "attn_dim",    "train_seed"};
}

TrainConfig TrainConfig::from_keyval(const KeyValueFile& kv) {
  TrainConfig cfg;
  cfg.learning_rate = kv.number("learning_rate", cfg.learning_rate);
  cfg.weight_decay = kv.number("weight_decay", cfg.weight_decay);
  cfg.batch_size = kv.integer("batch_size", cfg.batch_size);
  cfg.train_bag_size = kv.integer("train_bag_size", cfg.train_bag_size);
  cfg.infer_bag_size = kv.integer("infer_bag_size", cfg.infer_bag_size);
  cfg.max_epochs = kv.integer("max_epochs", cfg.max_epochs);
  cfg.patience = kv.integer("patience", cfg.patience);
  cfg.gated_attention = kv.boolean("gated_attention", cfg.gated_attention);
  cfg.hidden = kv.integer("hidden", cfg.hidden);
  cfg.attn_dim = kv.integer("attn_dim", cfg.attn_dim);
  cfg.seed = static_cast<std::uint64_t>(
      kv.integer("train_seed", static_cast<std::int64_t>(cfg.seed)));
  cfg.validate();
  return cfg;
}

AdamState AdamState::init(const ModelParams& params) {
  AdamState s;
  s.m = ModelParams::zeros_like(params);
  s.v = ModelParams::zeros_like(params);
  s.step = 0;
  return s;
}

ModelParams init_params(std::int64_t dim, std::int64_t hidden,
                        std::int64_t attn_dim, std::int64_t n_tasks,
                        std::uint64_t seed, bool gated) {
  if (dim < 1 || hidden < 1 || attn_dim < 1 || n_tasks < 1)
    throw Error(ErrorCode::ShapeError, "model dimensions must be >= 1");
  ModelParams p;
  p.dim = dim;
  p.hidden = hidden;
  p.attn_dim = attn_dim;
  p.n_tasks = n_tasks;
  p.gated = gated;

  Rng rng(seed, 0x494e4954ULL);  // "INIT"
  auto glorot = [&](std::int64_t rows, std::int64_t cols, std::int64_t fan_in,
                    std::int64_t fan_out) {
    const double range = std::sqrt(6.0 / double(fan_in + fan_out));
    Matrix m(rows, cols);
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < cols; ++c)
        m(r, c) = rng.uniform(-range, range);
    return m;
  };
  p.encoder_w = glorot(hidden, dim, dim, hidden);
  p.encoder_b = Vector::Zero(hidden);
  p.attn_v = glorot(attn_dim, hidden, hidden, attn_dim);
  p.attn_w = glorot(attn_dim, 1, attn_dim, 1).col(0);
  if (gated) p.attn_u = glorot(attn_dim, hidden, hidden, attn_dim);
  for (std::int64_t t = 0; t < n_tasks; ++t) {
    p.head_w.push_back(glorot(2, hidden, hidden, 2));
    p.head_b.emplace_back(Vector::Zero(2));
  }
  return p;
}

ForwardResult forward(const ModelParams& params,
                      const Eigen::Ref<const FeatureMatrix>& tiles) {
  if (tiles.rows() < 1)
    throw Error(ErrorCode::ShapeError, "bag must contain at least one tile");
  if (tiles.cols() != params.dim)
    throw Error(ErrorCode::ShapeError, "tile dim does not match model");
  check_finite(tiles);

  const Matrix hidden = encode(params, tiles);
  const Vector scores = attention_scores(params, hidden, nullptr, nullptr);
  ForwardResult out;
  out.attention = stable_softmax(scores);
  out.embedding = hidden.transpose() * out.attention;
  out.task_probs.resize(params.n_tasks, 2);
  for (std::int64_t t = 0; t < params.n_tasks; ++t) {
    Vector logits = params.head_w[t] * out.embedding + params.head_b[t];
    const double m = logits.maxCoeff();
    Vector e = (logits.array() - m).exp();
    out.task_probs.row(t) = (e / e.sum()).transpose();
  }
  return out;
}

std::pair<double, double> weights_from_prevalence(double prevalence) {
  if (!(prevalence > 0.0 && prevalence < 1.0))
    throw Error(ErrorCode::DegeneratePrevalence,
                "prevalence must lie strictly inside (0,1)");
  return {prevalence, 1.0 - prevalence};
}

double multitask_loss(const Matrix& task_probs,
                      const std::vector<std::int8_t>& labels,
                      const std::vector<std::pair<double, double>>& weights) {
  const auto n_tasks = task_probs.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n_tasks ||
      static_cast<Eigen::Index>(weights.size()) != n_tasks)
    throw Error(ErrorCode::ShapeError, "labels/weights size mismatch");
  double sum = 0.0;
  std::int64_t active = 0;
  for (Eigen::Index t = 0; t < n_tasks; ++t) {
    const auto y = labels[t];
    if (y == kLabelNA) continue;
    const double w = y == 1 ? weights[t].second : weights[t].first;
    if (w < 0)
      throw Error(ErrorCode::ConfigError, "class weights must be nonnegative");
    const double p =
        std::clamp(task_probs(t, y), kProbClampLo, kProbClampHi);
    sum += w * -std::log(p);
    ++active;
  }
  if (active == 0)
    throw Error(ErrorCode::NoSupervision, "all labels are NA");
  return sum / double(active);
}

namespace {

// Loss and parameter gradients for one bag, accumulated into `grad`.
double bag_backward(const ModelParams& p, const BagSample& bag,
                    const std::vector<std::pair<double, double>>& weights,
                    ModelParams& grad) {
  const auto& tiles = *bag.tiles;
  if (tiles.cols() != p.dim)
    throw Error(ErrorCode::ShapeError, "tile dim does not match model");
  check_finite(tiles);
  const auto n = tiles.rows();

  const Matrix hidden = encode(p, tiles);
  Matrix tanh_act, gate_act;
  const Vector scores = attention_scores(p, hidden, &tanh_act, &gate_act);
  const Vector attn = stable_softmax(scores);
  const Vector z = hidden.transpose() * attn;

  std::int64_t active = 0;
  for (const auto y : bag.labels)
    if (y != kLabelNA) ++active;
  if (active == 0)
    throw Error(ErrorCode::NoSupervision, "all labels are NA");

  double loss = 0.0;
  Vector dz = Vector::Zero(p.hidden);
  for (std::int64_t t = 0; t < p.n_tasks; ++t) {
    const auto y = bag.labels[t];
    if (y == kLabelNA) continue;
    const double w = y == 1 ? weights[t].second : weights[t].first;
    Vector logits = p.head_w[t] * z + p.head_b[t];
    const double m = logits.maxCoeff();
    Vector e = (logits.array() - m).exp();
    Vector prob = e / e.sum();
    const double p_y = prob[y];
    const double p_clamped = std::clamp(p_y, kProbClampLo, kProbClampHi);
    loss += w / double(active) * -std::log(p_clamped);
    // When the clamp saturates, the log contributes no gradient.
    if (p_y > kProbClampLo && p_y < kProbClampHi) {
      Vector dlogits = prob;
      dlogits[y] -= 1.0;
      dlogits *= w / double(active);
      grad.head_w[t].noalias() += dlogits * z.transpose();
      grad.head_b[t] += dlogits;
      dz.noalias() += p.head_w[t].transpose() * dlogits;
    }
  }

  // Pooling: z = H^T a.
  Matrix dhidden = attn * dz.transpose();  // n x h
  Vector dattn = hidden * dz;              // n

  // Softmax over scores.
  const double dot = attn.dot(dattn);
  Vector dscores = attn.array() * (dattn.array() - dot);

  if (p.gated) {
    Matrix ds_w = dscores * p.attn_w.transpose();  // n x a
    Matrix dtanh = ds_w.cwiseProduct(gate_act);
    Matrix dgate = ds_w.cwiseProduct(tanh_act);
    grad.attn_w.noalias() +=
        tanh_act.cwiseProduct(gate_act).transpose() * dscores;
    Matrix dpre_v =
        dtanh.cwiseProduct((1.0 - tanh_act.array().square()).matrix());
    Matrix dpre_u = dgate.cwiseProduct(
        (gate_act.array() * (1.0 - gate_act.array())).matrix());
    grad.attn_v.noalias() += dpre_v.transpose() * hidden;
    grad.attn_u.noalias() += dpre_u.transpose() * hidden;
    dhidden.noalias() += dpre_v * p.attn_v;
    dhidden.noalias() += dpre_u * p.attn_u;
  } else {
    grad.attn_w.noalias() += tanh_act.transpose() * dscores;
    Matrix dpre = (dscores * p.attn_w.transpose())
                      .cwiseProduct((1.0 - tanh_act.array().square()).matrix());
    grad.attn_v.noalias() += dpre.transpose() * hidden;
    dhidden.noalias() += dpre * p.attn_v;
  }

  // Encoder: ReLU mask, then the affine map.
  Matrix dact =
      dhidden.cwiseProduct((hidden.array() > 0.0).cast<double>().matrix());
  grad.encoder_w.noalias() += dact.transpose() * tiles.cast<double>();
  grad.encoder_b += dact.colwise().sum().transpose();
  (void)n;
  return loss;
}

}  // namespace

ModelParams backward(const ModelParams& params,
                     const std::vector<BagSample>& batch,
                     const std::vector<std::pair<double, double>>& weights,
                     double* out_loss) {
  if (batch.empty())
    throw Error(ErrorCode::ShapeError, "empty batch");
  params.validate();
  // Per-bag gradients land in per-bag slots and are reduced in a fixed
  // order, so the result does not depend on scheduling.
  std::vector<ModelParams> slots;
  std::vector<double> losses(batch.size(), 0.0);
  slots.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    slots.push_back(ModelParams::zeros_like(params));
  std::vector<std::exception_ptr> errors(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    try {
      losses[i] = bag_backward(params, batch[i], weights, slots[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);

  ModelParams total = ModelParams::zeros_like(params);
  double loss = 0.0;
  const double inv = 1.0 / double(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    loss += losses[i];
    total.encoder_w += slots[i].encoder_w;
    total.encoder_b += slots[i].encoder_b;
    total.attn_v += slots[i].attn_v;
    total.attn_w += slots[i].attn_w;
    if (params.gated) total.attn_u += slots[i].attn_u;
    for (std::int64_t t = 0; t < params.n_tasks; ++t) {
      total.head_w[t] += slots[i].head_w[t];
      total.head_b[t] += slots[i].head_b[t];
    }
  }
  total.for_each_param([&](double& v) { v *= inv; });
  if (out_loss) *out_loss = loss * inv;
  if (!total.encoder_w.allFinite())
    throw Error(ErrorCode::NumericError, "non-finite gradients");
  return total;
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const TrainConfig& config) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.adam_beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(config.adam_beta2, double(state.step));

  auto update = [&](Matrix& theta, const Matrix& g, Matrix& m, Matrix& v) {
    // Decoupled weight decay precedes the Adam update.
    theta -= config.learning_rate * config.weight_decay * theta;
    m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * g;
    v = config.adam_beta2 * v +
        (1.0 - config.adam_beta2) * g.cwiseProduct(g);
    theta -= (config.learning_rate * (m / bc1).array() /
              ((v / bc2).array().sqrt() + config.adam_eps))
                 .matrix();
  };
  auto update_vec = [&](Vector& theta, const Vector& g, Vector& m, Vector& v) {
    theta -= config.learning_rate * config.weight_decay * theta;
    m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * g;
    v = config.adam_beta2 * v +
        (1.0 - config.adam_beta2) * g.cwiseProduct(g);
    theta -= (config.learning_rate * (m / bc1).array() /
              ((v / bc2).array().sqrt() + config.adam_eps))
                 .matrix();
  };

  update(params.encoder_w, grads.encoder_w, state.m.encoder_w,
         state.v.encoder_w);
  update_vec(params.encoder_b, grads.encoder_b, state.m.encoder_b,
             state.v.encoder_b);
  update(params.attn_v, grads.attn_v, state.m.attn_v, state.v.attn_v);
  update_vec(params.attn_w, grads.attn_w, state.m.attn_w, state.v.attn_w);
  if (params.gated)
    update(params.attn_u, grads.attn_u, state.m.attn_u, state.v.attn_u);
  for (std::int64_t t = 0; t < params.n_tasks; ++t) {
    update(params.head_w[t], grads.head_w[t], state.m.head_w[t],
           state.v.head_w[t]);
    update_vec(params.head_b[t], grads.head_b[t], state.m.head_b[t],
               state.v.head_b[t]);
  }
}

double grad_check(const ModelParams& params,
                  const std::vector<BagSample>& batch,
                  const std::vector<std::pair<double, double>>& weights,
                  double eps) {
  if (eps <= 0.0)
    throw Error(ErrorCode::InvalidEpsilon, "eps must be positive");
  ModelParams analytic = backward(params, batch, weights);

  ModelParams perturbed = params;
  const auto batch_loss = [&]() {
    double total = 0.0;
    for (const auto& bag : batch)
      total += multitask_loss(forward(perturbed, *bag.tiles).task_probs,
                              bag.labels, weights);
    return total / double(batch.size());
  };

  double max_rel = 0.0;
  std::vector<double*> analytic_ptrs;
  analytic.for_each_param([&](double& v) { analytic_ptrs.push_back(&v); });
  std::size_t idx = 0;
  perturbed.for_each_param([&](double& v) {
    const double saved = v;
    v = saved + eps;
    const double up = batch_loss();
    v = saved - eps;
    const double down = batch_loss();
    v = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = *analytic_ptrs[idx++];
    const double rel = std::abs(a - numeric) /
                       std::max({std::abs(a), std::abs(numeric), 1e-8});
    max_rel = std::max(max_rel, rel);
  });
  return max_rel;
}

std::vector<std::uint8_t> serialize_params(const ModelParams& params) {
  params.validate();
  std::vector<std::uint8_t> out;
  auto put_u16 = [&](std::uint16_t v) {
    out.push_back(v & 0xff);
    out.push_back(v >> 8);
  };
  auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
  };
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(kVersion);
  put_u32(static_cast<std::uint32_t>(params.dim));
  put_u32(static_cast<std::uint32_t>(params.hidden));
  put_u32(static_cast<std::uint32_t>(params.attn_dim));
  put_u32(static_cast<std::uint32_t>(params.n_tasks));
  put_u16(params.gated ? kFlagGated : 0);
  ModelParams copy = params;
  copy.for_each_param([&](double& v) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(bits);
  });
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, out.data(), static_cast<uInt>(out.size())));
  put_u32(crc);
  return out;
}

ModelParams deserialize_params(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size())
      throw Error(ErrorCode::FormatError, "truncated checkpoint");
  };
  auto get_u16 = [&]() {
    need(2);
    std::uint16_t v = bytes[pos] | (std::uint16_t(bytes[pos + 1]) << 8);
    pos += 2;
    return v;
  };
  auto get_u32 = [&]() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  };
  need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(ErrorCode::FormatError, "bad checkpoint magic");
  pos = 4;
  if (get_u16() != kVersion)
    throw Error(ErrorCode::FormatError, "unsupported checkpoint version");
  ModelParams p;
  p.dim = get_u32();
  p.hidden = get_u32();
  p.attn_dim = get_u32();
  p.n_tasks = get_u32();
  p.gated = (get_u16() & kFlagGated) != 0;
  p = ModelParams::zeros_like(p);
  p.for_each_param([&](double& v) {
    const std::uint32_t bits = get_u32();
    float f;
    std::memcpy(&f, &bits, 4);
    v = f;
  });
  const auto stored_crc = get_u32();
  const auto computed = static_cast<std::uint32_t>(
      crc32(0L, bytes.data(), static_cast<uInt>(bytes.size() - 4)));
  if (stored_crc != computed)
    throw Error(ErrorCode::FormatError, "checkpoint CRC mismatch");
  if (pos != bytes.size())
    throw Error(ErrorCode::FormatError, "trailing bytes in checkpoint");
  p.validate();
  return p;
}

void save_params(const ModelParams& params, const std::string& path) {
  const auto bytes = serialize_params(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::StoreIo, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::StoreIo, "checkpoint write failed");
}

ModelParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::StoreIo, "cannot read " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

}  // namespace mtmil
