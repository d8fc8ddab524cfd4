#include "silobench/network.hpp"

#include <nlohmann/json.hpp>
#include <bit>
#include <cmath>
#include <cstring>
#include <random>

#include "silobench/errors.hpp"

namespace silobench {

namespace {

constexpr double kLogClamp = 1e-12;

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd shifted = logits.colwise() - logits.rowwise().maxCoeff();
  Eigen::MatrixXd e = shifted.array().exp().matrix();
  return (e.array().colwise() / e.rowwise().sum().array()).matrix();
}

}  // namespace

void ArchConfig::validate() const {
  for (std::size_t w : extractor_widths) {
    if (w == 0) throw ConfigError("extractor layer with width 0");
  }
  if (bottleneck_width == 0) throw ConfigError("bottleneck width 0");
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) {
    throw ConfigError("BN momentum must lie in (0,1)");
  }
  if (!(bn_epsilon > 0.0)) throw ConfigError("BN epsilon must be positive");
}

void ModelParams::validate() const {
  if (input_dim == 0) throw ConfigError("model input dimension is 0");
  Eigen::Index prev = static_cast<Eigen::Index>(input_dim);
  auto check_layer = [&](const DenseLayer& l, const char* what) {
    if (l.weight.cols() != prev) {
      throw ValidationError(std::string(what) + ": weight columns do not chain");
    }
    if (l.bias.size() != l.weight.rows()) {
      throw ValidationError(std::string(what) + ": bias size mismatch");
    }
    if (!l.weight.allFinite() || !l.bias.allFinite()) {
      throw ValidationError(std::string(what) + ": non-finite entries");
    }
    prev = l.weight.rows();
  };
  for (const auto& l : extractor) check_layer(l, "extractor layer");
  check_layer(bottleneck, "bottleneck");
  const Eigen::Index m = bottleneck.weight.rows();
  if (bn.gamma.size() != m || bn.beta.size() != m ||
      bn.running_mean.size() != m || bn.running_var.size() != m) {
    throw ValidationError("BN vectors do not share the bottleneck width");
  }
  if ((bn.running_var.array() < 0.0).any()) {
    throw ValidationError("negative running variance");
  }
  if (!bn.gamma.allFinite() || !bn.beta.allFinite() ||
      !bn.running_mean.allFinite() || !bn.running_var.allFinite()) {
    throw ValidationError("BN state: non-finite entries");
  }
  check_layer(classifier, "classifier");
  if (classifier.weight.rows() != kNumClasses) {
    throw ValidationError("classifier must produce exactly 2 logits");
  }
}

ModelParams init_params(std::size_t input_dim, const ArchConfig& arch,
                        std::uint64_t seed) {
  if (input_dim == 0) throw ConfigError("input_dim must be positive");
  arch.validate();

  std::mt19937_64 rng(seed);
  auto make_layer = [&rng](std::size_t out, std::size_t in, double gain) {
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(in)));
    DenseLayer l;
    l.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = dist(rng);
    }
    l.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out));
    return l;
  };

  ModelParams p;
  p.input_dim = input_dim;
  std::size_t prev = input_dim;
  for (std::size_t w : arch.extractor_widths) {
    p.extractor.push_back(make_layer(w, prev, 2.0));  // ReLU fan-in scaling
    prev = w;
  }
  p.bottleneck = make_layer(arch.bottleneck_width, prev, 2.0);
  const auto m = static_cast<Eigen::Index>(arch.bottleneck_width);
  p.bn.gamma = Eigen::VectorXd::Ones(m);
  p.bn.beta = Eigen::VectorXd::Zero(m);
  p.bn.running_mean = Eigen::VectorXd::Zero(m);
  p.bn.running_var = Eigen::VectorXd::Ones(m);
  p.bn.momentum = arch.bn_momentum;
  p.bn.epsilon = arch.bn_epsilon;
  p.classifier = make_layer(kNumClasses, arch.bottleneck_width, 1.0);
  p.validate();
  return p;
}

// -- tensor visitors ----------------------------------------------------------

namespace {

template <typename Params, typename Fn>
void visit_params(Params& p, Fn&& fn) {
  for (auto& l : p.extractor) {
    fn(l.weight);
    fn(l.bias);
  }
  fn(p.bottleneck.weight);
  fn(p.bottleneck.bias);
  fn(p.bn.gamma);
  fn(p.bn.beta);
  fn(p.classifier.weight);
  fn(p.classifier.bias);
}

template <typename Grads, typename Fn>
void visit_grads(Grads& g, Fn&& fn) {
  for (auto& l : g.extractor) {
    fn(l.weight);
    fn(l.bias);
  }
  fn(g.bottleneck.weight);
  fn(g.bottleneck.bias);
  fn(g.bn_gamma);
  fn(g.bn_beta);
  fn(g.classifier.weight);
  fn(g.classifier.bias);
}

}  // namespace

void for_each_tensor(ModelParams& p,
                     const std::function<void(Eigen::Ref<Eigen::MatrixXd>)>& fn) {
  visit_params(p, [&fn](auto& t) { fn(t); });
}
void for_each_tensor(const ModelParams& p,
                     const std::function<void(const Eigen::Ref<const Eigen::MatrixXd>&)>& fn) {
  visit_params(p, [&fn](const auto& t) { fn(t); });
}
void for_each_tensor(Gradients& g,
                     const std::function<void(Eigen::Ref<Eigen::MatrixXd>)>& fn) {
  visit_grads(g, [&fn](auto& t) { fn(t); });
}
void for_each_tensor(const Gradients& g,
                     const std::function<void(const Eigen::Ref<const Eigen::MatrixXd>&)>& fn) {
  visit_grads(g, [&fn](const auto& t) { fn(t); });
}

Gradients Gradients::zeros_like(const ModelParams& params) {
  Gradients g;
  for (const auto& l : params.extractor) {
    g.extractor.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                           Eigen::VectorXd::Zero(l.bias.size())});
  }
  g.bottleneck = {Eigen::MatrixXd::Zero(params.bottleneck.weight.rows(),
                                        params.bottleneck.weight.cols()),
                  Eigen::VectorXd::Zero(params.bottleneck.bias.size())};
  g.bn_gamma = Eigen::VectorXd::Zero(params.bn.gamma.size());
  g.bn_beta = Eigen::VectorXd::Zero(params.bn.beta.size());
  g.classifier = {Eigen::MatrixXd::Zero(params.classifier.weight.rows(),
                                        params.classifier.weight.cols()),
                  Eigen::VectorXd::Zero(params.classifier.bias.size())};
  return g;
}

double Gradients::max_abs() const {
  double m = 0.0;
  for_each_tensor(*this, [&m](const Eigen::Ref<const Eigen::MatrixXd>& t) {
    if (t.size() > 0) m = std::max(m, t.array().abs().maxCoeff());
  });
  return m;
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for_each_tensor(*this, [&s](const Eigen::Ref<const Eigen::MatrixXd>& t) {
    s += t.squaredNorm();
  });
  return s;
}

std::uint64_t params_fingerprint(const ModelParams& params) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const double* data, std::size_t n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for_each_tensor(params, [&mix](const Eigen::Ref<const Eigen::MatrixXd>& t) {
    mix(t.data(), static_cast<std::size_t>(t.size()));
  });
  mix(params.bn.running_mean.data(),
      static_cast<std::size_t>(params.bn.running_mean.size()));
  mix(params.bn.running_var.data(),
      static_cast<std::size_t>(params.bn.running_var.size()));
  return h;
}

// -- forward ------------------------------------------------------------------

ForwardResult forward(ModelParams& params, const Eigen::MatrixXd& batch,
                      ForwardMode mode) {
  params.validate();
  if (batch.cols() != static_cast<Eigen::Index>(params.input_dim)) {
    throw ValidationError("batch has " + std::to_string(batch.cols()) +
                          " columns, model expects " +
                          std::to_string(params.input_dim));
  }
  const Eigen::Index n = batch.rows();
  if ((mode == ForwardMode::train || mode == ForwardMode::tent) && n < 2) {
    throw BatchSizeError("batch statistics need at least 2 rows");
  }
  if (n == 0) throw ValidationError("empty batch");

  ForwardCache cache;
  cache.mode = mode;
  cache.input = batch;

  Eigen::MatrixXd h = batch;
  for (const auto& l : params.extractor) {
    Eigen::MatrixXd z = (h * l.weight.transpose()).rowwise() + l.bias.transpose();
    cache.pre_acts.push_back(z);
    h = z.cwiseMax(0.0);
    cache.post_acts.push_back(h);
  }

  Eigen::MatrixXd zb = (h * params.bottleneck.weight.transpose()).rowwise() +
                       params.bottleneck.bias.transpose();
  cache.bottleneck_pre = zb;

  Eigen::RowVectorXd mean, var;
  if (mode == ForwardMode::eval) {
    mean = params.bn.running_mean.transpose();
    var = params.bn.running_var.transpose();
  } else {
    mean = zb.colwise().mean();
    var = (zb.rowwise() - mean).array().square().matrix().colwise().mean();
    if (mode == ForwardMode::train) {
      const double m = params.bn.momentum;
      params.bn.running_mean =
          (1.0 - m) * params.bn.running_mean + m * mean.transpose();
      params.bn.running_var =
          (1.0 - m) * params.bn.running_var + m * var.transpose();
    }
  }
  const Eigen::RowVectorXd inv_std_row =
      (var.array() + params.bn.epsilon).rsqrt().matrix();
  cache.bn_inv_std = inv_std_row.transpose();
  cache.bn_xhat =
      ((zb.rowwise() - mean).array().rowwise() * inv_std_row.array()).matrix();
  cache.bn_out = ((cache.bn_xhat.array().rowwise() *
                   params.bn.gamma.transpose().array())
                      .rowwise() +
                  params.bn.beta.transpose().array())
                     .matrix();

  Eigen::MatrixXd logits =
      (cache.bn_out * params.classifier.weight.transpose()).rowwise() +
      params.classifier.bias.transpose();
  cache.probs = softmax_rows(logits);
  cache.params_fingerprint = params_fingerprint(params);
  return {cache.probs, std::move(cache)};
}

Eigen::MatrixXd predict(const ModelParams& params, const Eigen::MatrixXd& batch) {
  // Eval mode never mutates; the const_cast is confined here.
  return forward(const_cast<ModelParams&>(params), batch, ForwardMode::eval).probs;
}

// -- losses -------------------------------------------------------------------

LossGrad cross_entropy_grad(const Eigen::MatrixXd& probs,
                            const std::vector<int>& labels,
                            const Eigen::Vector2d& class_weights) {
  const Eigen::Index n = probs.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw ValidationError("labels/probs length mismatch");
  }
  LossGrad out;
  out.dlogits = Eigen::MatrixXd::Zero(n, kNumClasses);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y != 0 && y != 1) throw ValidationError("labels must be 0/1");
    const double w = class_weights(y);
    loss += -w * std::log(std::max(probs(i, y), kLogClamp));
    for (int c = 0; c < kNumClasses; ++c) {
      out.dlogits(i, c) = w * (probs(i, c) - (c == y ? 1.0 : 0.0));
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  out.value = loss * inv_n;
  out.dlogits *= inv_n;
  return out;
}

LossGrad entropy_grad(const Eigen::MatrixXd& probs) {
  const Eigen::Index n = probs.rows();
  LossGrad out;
  out.dlogits = Eigen::MatrixXd::Zero(n, kNumClasses);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double h = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
      h -= probs(i, c) * std::log(std::max(probs(i, c), kLogClamp));
    }
    total += h;
    for (int c = 0; c < kNumClasses; ++c) {
      out.dlogits(i, c) =
          -probs(i, c) * (std::log(std::max(probs(i, c), kLogClamp)) + h);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  out.value = total * inv_n;
  out.dlogits *= inv_n;
  return out;
}

LossGrad diversity_grad(const Eigen::MatrixXd& probs) {
  const Eigen::Index n = probs.rows();
  Eigen::Vector2d pbar = probs.colwise().mean().transpose();
  LossGrad out;
  out.value = 0.0;
  Eigen::Vector2d logp1;
  for (int c = 0; c < kNumClasses; ++c) {
    const double lp = std::log(std::max(pbar(c), kLogClamp));
    out.value += pbar(c) * lp;  // = -H(mean p)
    logp1(c) = lp + 1.0;
  }
  out.dlogits = Eigen::MatrixXd::Zero(n, kNumClasses);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double inner = probs.row(i).dot(logp1);
    for (int c = 0; c < kNumClasses; ++c) {
      out.dlogits(i, c) = inv_n * probs(i, c) * (logp1(c) - inner);
    }
  }
  return out;
}

// -- backward -----------------------------------------------------------------

Gradients backward_from_dlogits(const ModelParams& params,
                                const ForwardCache& cache,
                                const Eigen::MatrixXd& dlogits) {
  if (cache.params_fingerprint != params_fingerprint(params)) {
    throw StateError("forward cache does not belong to these parameters");
  }
  const Eigen::Index n = cache.input.rows();
  Gradients g = Gradients::zeros_like(params);

  g.classifier.weight = dlogits.transpose() * cache.bn_out;
  g.classifier.bias = dlogits.colwise().sum().transpose();
  Eigen::MatrixXd d_bn_out = dlogits * params.classifier.weight;

  g.bn_gamma = (d_bn_out.array() * cache.bn_xhat.array())
                   .colwise()
                   .sum()
                   .matrix()
                   .transpose();
  g.bn_beta = d_bn_out.colwise().sum().transpose();

  Eigen::MatrixXd d_zb;
  if (cache.mode == ForwardMode::eval) {
    const Eigen::RowVectorXd scale =
        (params.bn.gamma.array() * cache.bn_inv_std.array())
            .matrix()
            .transpose();
    d_zb = (d_bn_out.array().rowwise() * scale.array()).matrix();
  } else {
    // Batch statistics participate in the graph.
    Eigen::MatrixXd dxhat =
        (d_bn_out.array().rowwise() * params.bn.gamma.transpose().array())
            .matrix();
    const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
    const Eigen::RowVectorXd sum_dxhat_xhat =
        (dxhat.array() * cache.bn_xhat.array()).colwise().sum().matrix();
    const double inv_n = 1.0 / static_cast<double>(n);
    Eigen::MatrixXd tmp =
        (dxhat * static_cast<double>(n)).rowwise() - sum_dxhat;
    tmp = (tmp.array() -
           (cache.bn_xhat.array().rowwise() * sum_dxhat_xhat.array()))
              .matrix();
    const Eigen::RowVectorXd inv_std_row = cache.bn_inv_std.transpose();
    d_zb = ((tmp.array().rowwise() * inv_std_row.array()) * inv_n).matrix();
  }

  const Eigen::MatrixXd& h_last =
      cache.post_acts.empty() ? cache.input : cache.post_acts.back();
  g.bottleneck.weight = d_zb.transpose() * h_last;
  g.bottleneck.bias = d_zb.colwise().sum().transpose();
  Eigen::MatrixXd dh = d_zb * params.bottleneck.weight;

  for (std::size_t li = params.extractor.size(); li-- > 0;) {
    Eigen::MatrixXd dz =
        (dh.array() * (cache.pre_acts[li].array() > 0.0).cast<double>())
            .matrix();
    const Eigen::MatrixXd& h_prev = li == 0 ? cache.input : cache.post_acts[li - 1];
    g.extractor[li].weight = dz.transpose() * h_prev;
    g.extractor[li].bias = dz.colwise().sum().transpose();
    dh = dz * params.extractor[li].weight;
  }
  return g;
}

std::pair<double, Gradients> backward(const ModelParams& params,
                                      const ForwardCache& cache,
                                      const std::vector<int>& labels,
                                      LossKind loss,
                                      const Eigen::Vector2d& class_weights) {
  LossGrad lg;
  switch (loss) {
    case LossKind::cross_entropy:
      lg = cross_entropy_grad(cache.probs, labels, {1.0, 1.0});
      break;
    case LossKind::weighted_cross_entropy:
      lg = cross_entropy_grad(cache.probs, labels, class_weights);
      break;
    case LossKind::entropy:
      lg = entropy_grad(cache.probs);
      break;
  }
  return {lg.value, backward_from_dlogits(params, cache, lg.dlogits)};
}

// -- optimizers ---------------------------------------------------------------

UpdateMask UpdateMask::all() { return {}; }
UpdateMask UpdateMask::bn_affine_only() {
  return {false, false, true, true, false};
}
UpdateMask UpdateMask::freeze_classifier() {
  return {true, true, true, true, false};
}

OptState OptState::init(const ModelParams& params) {
  return {Gradients::zeros_like(params), Gradients::zeros_like(params), 0};
}

namespace {

template <typename Fn>
void zip_masked(ModelParams& p, const Gradients& g, OptState& s,
                const UpdateMask& mask, Fn&& fn) {
  for (std::size_t l = 0; l < p.extractor.size(); ++l) {
    if (mask.extractor) {
      fn(p.extractor[l].weight, g.extractor[l].weight, s.m.extractor[l].weight,
         s.v.extractor[l].weight);
      fn(p.extractor[l].bias, g.extractor[l].bias, s.m.extractor[l].bias,
         s.v.extractor[l].bias);
    }
  }
  if (mask.bottleneck) {
    fn(p.bottleneck.weight, g.bottleneck.weight, s.m.bottleneck.weight,
       s.v.bottleneck.weight);
    fn(p.bottleneck.bias, g.bottleneck.bias, s.m.bottleneck.bias,
       s.v.bottleneck.bias);
  }
  if (mask.bn_gamma) fn(p.bn.gamma, g.bn_gamma, s.m.bn_gamma, s.v.bn_gamma);
  if (mask.bn_beta) fn(p.bn.beta, g.bn_beta, s.m.bn_beta, s.v.bn_beta);
  if (mask.classifier) {
    fn(p.classifier.weight, g.classifier.weight, s.m.classifier.weight,
       s.v.classifier.weight);
    fn(p.classifier.bias, g.classifier.bias, s.m.classifier.bias,
       s.v.classifier.bias);
  }
}

}  // namespace

void optimizer_step(ModelParams& params, const Gradients& grads,
                    OptState& state, const OptConfig& opt,
                    const UpdateMask& mask) {
  if (!(opt.learning_rate > 0.0)) {
    throw ConfigError("nonpositive learning rate");
  }
  if (opt.kind == OptKind::sgd) {
    zip_masked(params, grads, state, mask,
               [&opt](auto&& theta, const auto& g, auto&&, auto&&) {
                 theta -= opt.learning_rate * g;
               });
    ++state.step;
    return;
  }
  ++state.step;
  const double b1 = opt.beta1, b2 = opt.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  zip_masked(params, grads, state, mask,
             [&](auto&& theta, const auto& g, auto&& m, auto&& v) {
               m = b1 * m + (1.0 - b1) * g;
               v = (b2 * v.array() + (1.0 - b2) * g.array().square()).matrix();
               theta.array() -= opt.learning_rate * (m.array() / bc1) /
                                ((v.array() / bc2).sqrt() + opt.epsilon);
             });
}

// -- serialization ------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'B', 'N', 'M'};
constexpr std::uint32_t kVersion = 1;

void push_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void push_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void push_f64(std::vector<std::uint8_t>& out, double d) {
  push_u64(out, std::bit_cast<std::uint64_t>(d));
}

struct Reader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw FormatError("truncated parameter blob");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string tag() {
    need(4);
    std::string t(reinterpret_cast<const char*>(buf.data() + pos), 4);
    pos += 4;
    return t;
  }
};

void push_matrix(std::vector<std::uint8_t>& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) push_f64(out, m(r, c));
  }
}
void read_matrix(Reader& rd, Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rd.f64();
  }
}
void read_vector(Reader& rd, Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rd.f64();
}

}  // namespace

std::vector<std::uint8_t> serialize_params(const ModelParams& params) {
  params.validate();
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  push_u32(out, kVersion);

  // ARCH section
  std::vector<std::uint8_t> arch;
  push_u64(arch, params.input_dim);
  push_u64(arch, params.extractor.size());
  for (const auto& l : params.extractor) {
    push_u64(arch, static_cast<std::uint64_t>(l.weight.rows()));
  }
  push_u64(arch, static_cast<std::uint64_t>(params.bottleneck.weight.rows()));
  push_f64(arch, params.bn.momentum);
  push_f64(arch, params.bn.epsilon);
  out.insert(out.end(), {'A', 'R', 'C', 'H'});
  push_u64(out, arch.size());
  out.insert(out.end(), arch.begin(), arch.end());

  // WGHT section: every tensor in canonical order, then BN running stats.
  std::vector<std::uint8_t> w;
  for_each_tensor(params, [&w](const Eigen::Ref<const Eigen::MatrixXd>& t) {
    push_matrix(w, t);
  });
  push_matrix(w, params.bn.running_mean);
  push_matrix(w, params.bn.running_var);
  out.insert(out.end(), {'W', 'G', 'H', 'T'});
  push_u64(out, w.size());
  out.insert(out.end(), w.begin(), w.end());
  return out;
}

ModelParams deserialize_params(const std::vector<std::uint8_t>& bytes) {
  Reader rd{bytes};
  if (rd.tag() != std::string(kMagic, 4)) throw FormatError("bad magic");
  if (rd.u32() != kVersion) throw FormatError("unsupported format version");

  if (rd.tag() != "ARCH") throw FormatError("expected ARCH section");
  const std::uint64_t arch_len = rd.u64();
  const std::size_t arch_end = rd.pos + arch_len;
  ModelParams p;
  p.input_dim = rd.u64();
  const std::uint64_t n_layers = rd.u64();
  if (n_layers > 64) throw FormatError("implausible layer count");
  std::vector<std::size_t> widths;
  for (std::uint64_t i = 0; i < n_layers; ++i) widths.push_back(rd.u64());
  const std::size_t bwidth = rd.u64();
  p.bn.momentum = rd.f64();
  p.bn.epsilon = rd.f64();
  if (rd.pos != arch_end) throw FormatError("ARCH section length mismatch");

  std::size_t prev = p.input_dim;
  for (std::size_t w : widths) {
    if (w == 0 || prev == 0) throw FormatError("zero width in blob");
    p.extractor.push_back({Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(w),
                                                 static_cast<Eigen::Index>(prev)),
                           Eigen::VectorXd::Zero(static_cast<Eigen::Index>(w))});
    prev = w;
  }
  p.bottleneck = {Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(bwidth),
                                        static_cast<Eigen::Index>(prev)),
                  Eigen::VectorXd::Zero(static_cast<Eigen::Index>(bwidth))};
  const auto m = static_cast<Eigen::Index>(bwidth);
  p.bn.gamma.resize(m);
  p.bn.beta.resize(m);
  p.bn.running_mean.resize(m);
  p.bn.running_var.resize(m);
  p.classifier = {Eigen::MatrixXd::Zero(kNumClasses, m),
                  Eigen::VectorXd::Zero(kNumClasses)};

  if (rd.tag() != "WGHT") throw FormatError("expected WGHT section");
  const std::uint64_t w_len = rd.u64();
  const std::size_t w_end = rd.pos + w_len;
  for (auto& l : p.extractor) {
    read_matrix(rd, l.weight);
    read_vector(rd, l.bias);
  }
  read_matrix(rd, p.bottleneck.weight);
  read_vector(rd, p.bottleneck.bias);
  read_vector(rd, p.bn.gamma);
  read_vector(rd, p.bn.beta);
  read_matrix(rd, p.classifier.weight);
  read_vector(rd, p.classifier.bias);
  read_vector(rd, p.bn.running_mean);
  read_vector(rd, p.bn.running_var);
  if (rd.pos != w_end) throw FormatError("WGHT section length mismatch");
  if (rd.pos != bytes.size()) throw FormatError("trailing bytes in blob");
  p.validate();
  return p;
}

std::string params_debug_json(const ModelParams& params) {
  nlohmann::json j;
  j["input_dim"] = params.input_dim;
  auto dump_layer = [](const DenseLayer& l) {
    nlohmann::json out;
    out["weight"] = std::vector<std::vector<double>>();
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      std::vector<double> row(l.weight.cols());
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) row[c] = l.weight(r, c);
      out["weight"].push_back(row);
    }
    out["bias"] = std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size());
    return out;
  };
  j["extractor"] = nlohmann::json::array();
  for (const auto& l : params.extractor) j["extractor"].push_back(dump_layer(l));
  j["bottleneck"] = dump_layer(params.bottleneck);
  auto vec = [](const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  j["bn"] = {{"gamma", vec(params.bn.gamma)},
             {"beta", vec(params.bn.beta)},
             {"running_mean", vec(params.bn.running_mean)},
             {"running_var", vec(params.bn.running_var)},
             {"momentum", params.bn.momentum},
             {"epsilon", params.bn.epsilon}};
  j["classifier"] = dump_layer(params.classifier);
  return j.dump(2);
}

}  // namespace silobench
