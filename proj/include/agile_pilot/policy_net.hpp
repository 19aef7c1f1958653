#pragma once

// Shared-trunk actor-critic MLP with hand-written forward and backward passes.
//
// Trunk: Linear+ReLU layers (21 -> 512 -> 512 -> 256 -> 128 by default).
// Actor head: Linear -> tanh, giving the Gaussian mean in [-1, 1]^4.
// Critic head: Linear, giving the state value.
// A state-independent log standard deviation completes the diagonal Gaussian.
//
// All parameters live in one flat vector so the optimizer, checkpoints and
// gradient checks can treat them uniformly.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace agile {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)

struct LayerShape {
  int in = 0;
  int out = 0;
  bool operator==(const LayerShape&) const = default;
};

template <typename Scalar>
class ActorCritic {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

  struct Output {
    Mat mean;     // act_dim x B, tanh-squashed
    RowVec value; // 1 x B
    Vec log_std;  // act_dim, clamped
  };

  /// Activations kept from forward() for backward().
  struct Cache {
    std::vector<Mat> acts;  // acts[0] = input, acts[l + 1] = ReLU output of trunk layer l
    Mat mean;
  };

  /// widths = trunk widths including the input, e.g. {21, 512, 512, 256, 128}.
  explicit ActorCritic(std::vector<int> widths = {21, 512, 512, 256, 128}, int act_dim = 4)
      : act_dim_(act_dim) {
    if (widths.size() < 2 || act_dim < 1) throw std::invalid_argument("ActorCritic: bad architecture");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) shapes_.push_back({widths[i], widths[i + 1]});
    shapes_.push_back({widths.back(), act_dim});  // actor head
    shapes_.push_back({widths.back(), 1});        // critic head
    std::size_t off = 0;
    for (const auto& s : shapes_) {
      w_off_.push_back(off);
      off += static_cast<std::size_t>(s.in) * s.out;
      b_off_.push_back(off);
      off += s.out;
    }
    log_std_off_ = off;
    off += act_dim;
    params_ = Vec::Zero(static_cast<Eigen::Index>(off));
  }

  int obs_dim() const { return shapes_.front().in; }
  int act_dim() const { return act_dim_; }
  int trunk_layers() const { return static_cast<int>(shapes_.size()) - 2; }
  int actor_layer() const { return trunk_layers(); }
  int critic_layer() const { return trunk_layers() + 1; }
  const std::vector<LayerShape>& shapes() const { return shapes_; }
  Eigen::Index num_params() const { return params_.size(); }

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  Eigen::Map<Mat> weight(int l) { return {params_.data() + w_off_[l], shapes_[l].out, shapes_[l].in}; }
  Eigen::Map<const Mat> weight(int l) const {
    return {params_.data() + w_off_[l], shapes_[l].out, shapes_[l].in};
  }
  Eigen::Map<Vec> bias(int l) { return {params_.data() + b_off_[l], shapes_[l].out}; }
  Eigen::Map<const Vec> bias(int l) const { return {params_.data() + b_off_[l], shapes_[l].out}; }
  Eigen::Map<Vec> log_std() { return {params_.data() + log_std_off_, act_dim_}; }
  Eigen::Map<const Vec> log_std() const { return {params_.data() + log_std_off_, act_dim_}; }

  /// Offsets of a layer's weight and bias blocks inside params().
  std::size_t weight_offset(int l) const { return w_off_[l]; }
  std::size_t bias_offset(int l) const { return b_off_[l]; }
  std::size_t log_std_offset() const { return log_std_off_; }

  /// Orthogonal initialization: gain trunk_gain on the trunk, head_gain on both
  /// heads, zero biases, log_std set to init_log_std.
  template <typename Urbg>
  void initialize(Urbg& rng, double trunk_gain = std::sqrt(2.0), double head_gain = 0.01,
                  double init_log_std = -0.5) {
    params_.setZero();
    for (int l = 0; l < static_cast<int>(shapes_.size()); ++l) {
      const double gain = l < trunk_layers() ? trunk_gain : head_gain;
      weight(l) = orthogonal(shapes_[l].out, shapes_[l].in, gain, rng).template cast<Scalar>();
    }
    log_std().setConstant(static_cast<Scalar>(init_log_std));
  }

  Output forward(const Mat& x, Cache* cache = nullptr) const {
    if (x.rows() != obs_dim()) {
      throw std::invalid_argument("ActorCritic::forward: expected " + std::to_string(obs_dim()) +
                                  " inputs, got " + std::to_string(x.rows()));
    }
    Mat h = x;
    if (cache) {
      cache->acts.clear();
      cache->acts.push_back(x);
    }
    for (int l = 0; l < trunk_layers(); ++l) {
      Mat z = weight(l) * h;
      z.colwise() += bias(l);
      h = z.cwiseMax(Scalar(0));
      if (cache) cache->acts.push_back(h);
    }
    Output out;
    Mat za = weight(actor_layer()) * h;
    za.colwise() += bias(actor_layer());
    out.mean = za.array().tanh().matrix();
    out.value = (weight(critic_layer()) * h).row(0);
    out.value.array() += bias(critic_layer())(0);
    out.log_std = log_std().cwiseMax(Scalar(kLogStdMin)).cwiseMin(Scalar(kLogStdMax));
    if (cache) cache->mean = out.mean;
    return out;
  }

  /// Accumulates into grad (same layout as params()) the gradient of a scalar
  /// loss given its derivatives w.r.t. the forward outputs of the cached batch.
  /// d_log_std is w.r.t. the clamped log_std; it is masked where the clamp binds.
  void backward(const Cache& cache, const Mat& d_mean, const RowVec& d_value, const Vec& d_log_std,
                Vec& grad) const {
    if (grad.size() != params_.size()) grad = Vec::Zero(params_.size());
    const Mat& h_top = cache.acts.back();

    const Mat dza = (d_mean.array() * (Scalar(1) - cache.mean.array().square())).matrix();
    grad_block(grad, actor_layer()) += dza * h_top.transpose();
    grad_bias(grad, actor_layer()) += dza.rowwise().sum();
    grad_block(grad, critic_layer()) += d_value * h_top.transpose();
    grad_bias(grad, critic_layer())(0) += d_value.sum();

    Mat dh = weight(actor_layer()).transpose() * dza;
    dh.noalias() += weight(critic_layer()).transpose() * d_value;

    for (int l = trunk_layers() - 1; l >= 0; --l) {
      const Mat dz = (dh.array() * (cache.acts[l + 1].array() > Scalar(0)).template cast<Scalar>()).matrix();
      grad_block(grad, l).noalias() += dz * cache.acts[l].transpose();
      grad_bias(grad, l) += dz.rowwise().sum();
      if (l > 0) dh.noalias() = weight(l).transpose() * dz;
    }

    const auto raw = log_std();
    for (int j = 0; j < act_dim_; ++j) {
      if (raw(j) >= Scalar(kLogStdMin) && raw(j) <= Scalar(kLogStdMax)) {
        grad(static_cast<Eigen::Index>(log_std_off_) + j) += d_log_std(j);
      }
    }
  }

  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f << "agile-pilot-checkpoint 1\n";
    f << "scalar " << (sizeof(Scalar) == 4 ? "float32" : "float64") << "\n";
    f << "layers " << shapes_.size() << "\n";
    for (const auto& s : shapes_) f << s.in << " " << s.out << "\n";
    f << "log_std " << act_dim_ << "\n";
    f << std::hexfloat;
    for (int l = 0; l < static_cast<int>(shapes_.size()); ++l) {
      const auto W = weight(l);
      for (int r = 0; r < W.rows(); ++r) {
        for (int c = 0; c < W.cols(); ++c) f << (c ? " " : "") << static_cast<double>(W(r, c));
        f << "\n";
      }
      const auto b = bias(l);
      for (int r = 0; r < b.size(); ++r) f << (r ? " " : "") << static_cast<double>(b(r));
      f << "\n";
    }
    const auto ls = log_std();
    for (int j = 0; j < act_dim_; ++j) f << (j ? " " : "") << static_cast<double>(ls(j));
    f << "\n";
    if (!f) throw std::runtime_error("failed writing checkpoint: " + path);
  }

  /// Loads parameters saved by save(). The stored layer shapes must equal this
  /// network's shapes.
  void load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string tag, scalar_word, scalar_name;
    int version = 0;
    f >> tag >> version;
    if (tag != "agile-pilot-checkpoint" || version != 1) {
      throw std::runtime_error("not a version-1 checkpoint: " + path);
    }
    std::string key;
    std::size_t n_layers = 0;
    f >> scalar_word >> scalar_name >> key >> n_layers;
    if (!f || scalar_word != "scalar" || key != "layers") throw std::runtime_error("malformed checkpoint header");
    std::vector<LayerShape> stored(n_layers);
    for (auto& s : stored) f >> s.in >> s.out;
    int n_log_std = 0;
    f >> key >> n_log_std;
    if (!f || key != "log_std") throw std::runtime_error("malformed checkpoint header");
    if (stored != shapes_ || n_log_std != act_dim_) {
      throw std::runtime_error("checkpoint layer shapes " + describe(stored) + " do not match expected " +
                               describe(shapes_));
    }
    auto read = [&]() -> Scalar {
      std::string tok;
      if (!(f >> tok)) throw std::runtime_error("checkpoint truncated: " + path);
      return static_cast<Scalar>(std::strtod(tok.c_str(), nullptr));
    };
    for (int l = 0; l < static_cast<int>(shapes_.size()); ++l) {
      auto W = weight(l);
      for (int r = 0; r < W.rows(); ++r)
        for (int c = 0; c < W.cols(); ++c) W(r, c) = read();
      auto b = bias(l);
      for (int r = 0; r < b.size(); ++r) b(r) = read();
    }
    auto ls = log_std();
    for (int j = 0; j < act_dim_; ++j) ls(j) = read();
    if (!params_.allFinite()) throw std::runtime_error("checkpoint contains non-finite values");
  }

  static std::string describe(const std::vector<LayerShape>& shapes) {
    std::ostringstream s;
    s << "[";
    for (std::size_t i = 0; i < shapes.size(); ++i) s << (i ? ", " : "") << shapes[i].in << "x" << shapes[i].out;
    s << "]";
    return s.str();
  }

 private:
  Eigen::Map<Mat> grad_block(Vec& g, int l) const {
    return {g.data() + w_off_[l], shapes_[l].out, shapes_[l].in};
  }
  Eigen::Map<Vec> grad_bias(Vec& g, int l) const { return {g.data() + b_off_[l], shapes_[l].out}; }

  template <typename Urbg>
  static Eigen::MatrixXd orthogonal(int rows, int cols, double gain, Urbg& rng) {
    std::normal_distribution<double> n01;
    const int big = std::max(rows, cols);
    const int small = std::min(rows, cols);
    Eigen::MatrixXd a(big, small);
    for (int c = 0; c < small; ++c)
      for (int r = 0; r < big; ++r) a(r, c) = n01(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
    const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(small, small);
    for (int c = 0; c < small; ++c) {
      if (r(c, c) < 0) q.col(c) *= -1.0;
    }
    Eigen::MatrixXd w = rows >= cols ? q : Eigen::MatrixXd(q.transpose());
    return gain * w;
  }

  int act_dim_;
  std::vector<LayerShape> shapes_;
  std::vector<std::size_t> w_off_;
  std::vector<std::size_t> b_off_;
  std::size_t log_std_off_ = 0;
  Vec params_;
};

/// Diagonal Gaussian log-density of u under N(mean, exp(log_std)^2).
template <typename DerivedU, typename DerivedM, typename DerivedS>
double gaussian_log_prob(const Eigen::MatrixBase<DerivedU>& u, const Eigen::MatrixBase<DerivedM>& mean,
                         const Eigen::MatrixBase<DerivedS>& log_std) {
  double lp = 0.0;
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    const double ls = static_cast<double>(log_std(j));
    const double z = (static_cast<double>(u(j)) - static_cast<double>(mean(j))) * std::exp(-ls);
    lp += -0.5 * z * z - ls - kHalfLog2Pi;
  }
  return lp;
}

/// Entropy of a diagonal Gaussian.
template <typename Derived>
double gaussian_entropy(const Eigen::MatrixBase<Derived>& log_std) {
  double h = 0.0;
  for (Eigen::Index j = 0; j < log_std.size(); ++j) h += static_cast<double>(log_std(j)) + 0.5 + kHalfLog2Pi;
  return h;
}

struct ActionSample {
  Eigen::Vector4d action;  // clipped to [-1, 1]
  Eigen::Vector4d raw;     // pre-clip Gaussian sample
  double log_prob = 0.0;   // of raw
};

/// Draws a = clip(mean + std * eps, -1, 1). In deterministic mode returns the mean.
template <typename DerivedM, typename DerivedS, typename Urbg>
ActionSample sample_action(const Eigen::MatrixBase<DerivedM>& mean, const Eigen::MatrixBase<DerivedS>& log_std,
                           Urbg& rng, bool deterministic = false) {
  ActionSample s;
  std::normal_distribution<double> n01;
  for (int j = 0; j < 4; ++j) {
    const double m = static_cast<double>(mean(j));
    s.raw(j) = deterministic ? m : m + std::exp(static_cast<double>(log_std(j))) * n01(rng);
    s.action(j) = std::clamp(s.raw(j), -1.0, 1.0);
  }
  s.log_prob = gaussian_log_prob(s.raw, mean, log_std);
  return s;
}

}  // namespace agile
