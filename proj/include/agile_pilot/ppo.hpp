#pragma once

// Proximal Policy Optimization: vectorized rollouts, GAE, clipped surrogate
// with value and entropy terms, Adam with global gradient-norm clipping.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "agile_pilot/policy_net.hpp"
#include "agile_pilot/world.hpp"

namespace agile {

struct PpoConfig {
  int n_envs = 8;
  int n_steps = 2048;
  int batch_size = 256;
  double clip = 0.2;
  double gamma = 0.99;
  double entropy_coef = 0.01;
  double lr = 1e-4;
  long total_steps = 2'000'000;
  double gae_lambda = 0.95;
  double value_coef = 0.5;
  int epochs = 10;
  double max_grad_norm = 0.5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double reward_scale = 0.05;  // applied to rewards seen by the learner only
  int eval_interval = 5;       // updates between model-selection evaluations (0 = never)
  int eval_episodes = 20;

  long rollout_size() const { return static_cast<long>(n_envs) * n_steps; }

  void validate() const {
    if (n_envs < 1 || n_steps < 1 || batch_size < 1 || epochs < 1) {
      throw std::invalid_argument("PpoConfig: sizes must be positive");
    }
    if (rollout_size() % batch_size != 0) {
      throw std::invalid_argument("PpoConfig: batch_size must divide n_envs * n_steps");
    }
    if (!(clip > 0.0 && clip < 1.0)) throw std::invalid_argument("PpoConfig: clip must lie in (0, 1)");
    if (!(gamma > 0.0 && gamma <= 1.0) || !(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
      throw std::invalid_argument("PpoConfig: gamma in (0, 1], gae_lambda in [0, 1]");
    }
    if (lr < 0.0 || max_grad_norm <= 0.0 || reward_scale <= 0.0) {
      throw std::invalid_argument("PpoConfig: lr >= 0, max_grad_norm > 0, reward_scale > 0");
    }
  }
};

/// Generalized advantage estimation over one environment's sequence.
/// dones[t] marks that the episode ended after step t, so values[t + 1] (or
/// last_value) must not be bootstrapped through.
inline void gae(std::span<const double> rewards, std::span<const double> values, std::span<const std::uint8_t> dones,
                double last_value, double gamma, double lambda, std::span<double> advantages) {
  const std::size_t n = rewards.size();
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double next_value = k + 1 < n ? values[k + 1] : last_value;
    const double nonterminal = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next_value * nonterminal - values[k];
    next_adv = delta + gamma * lambda * nonterminal * next_adv;
    advantages[k] = next_adv;
  }
}

/// Transitions stored env-major: index = env * n_steps + step.
struct RolloutBuffer {
  int n_envs = 0;
  int n_steps = 0;
  Eigen::MatrixXf obs;      // obs_dim x N
  Eigen::MatrixXf actions;  // act_dim x N, pre-clip samples
  std::vector<double> log_probs, rewards, values, advantages, returns;
  std::vector<std::uint8_t> dones;
  std::vector<double> last_values;  // per env, value of the state after the final step

  void resize(int envs, int steps, int obs_dim = kObsDim, int act_dim = kActDim) {
    n_envs = envs;
    n_steps = steps;
    const long n = static_cast<long>(envs) * steps;
    obs.resize(obs_dim, n);
    actions.resize(act_dim, n);
    log_probs.assign(n, 0.0);
    rewards.assign(n, 0.0);
    values.assign(n, 0.0);
    advantages.assign(n, 0.0);
    returns.assign(n, 0.0);
    dones.assign(n, 0);
    last_values.assign(envs, 0.0);
  }
  long size() const { return static_cast<long>(n_envs) * n_steps; }
  long index(int env, int step) const { return static_cast<long>(env) * n_steps + step; }
};

inline void compute_gae(RolloutBuffer& buf, double gamma, double lambda) {
  for (int e = 0; e < buf.n_envs; ++e) {
    const long o = buf.index(e, 0);
    const std::size_t n = buf.n_steps;
    gae(std::span<const double>(buf.rewards.data() + o, n), std::span<const double>(buf.values.data() + o, n),
        std::span<const std::uint8_t>(buf.dones.data() + o, n), buf.last_values[e], gamma, lambda,
        std::span<double>(buf.advantages.data() + o, n));
    for (std::size_t k = 0; k < n; ++k) buf.returns[o + k] = buf.advantages[o + k] + buf.values[o + k];
  }
}

/// Shifts and scales to zero mean and unit (population) standard deviation.
inline void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  for (double& a : adv) a = (a - mean) / (sd + 1e-8);
}

/// PPO-clip surrogate for one sample: min(rho * A, clip(rho, 1 - eps, 1 + eps) * A).
inline double clipped_surrogate(double ratio, double adv, double eps) {
  return std::min(ratio * adv, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv);
}

struct LossCoefficients {
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
};

struct LossTerms {
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double total = 0.0;
};

/// Loss value and its derivatives with respect to the network outputs.
template <typename Scalar>
struct LossGrad {
  using Net = ActorCritic<Scalar>;
  LossTerms terms;
  typename Net::Mat d_mean;
  typename Net::RowVec d_value;
  typename Net::Vec d_log_std;
};

/// total = -mean(clipped surrogate) + value_coef * mean((v - R)^2) - entropy_coef * H.
template <typename Scalar>
LossGrad<Scalar> ppo_loss(const typename ActorCritic<Scalar>::Output& out,
                          const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& actions,
                          std::span<const double> old_log_probs, std::span<const double> adv,
                          std::span<const double> returns, const LossCoefficients& k) {
  const Eigen::Index batch = out.mean.cols();
  const Eigen::Index act = out.mean.rows();
  const double inv_b = 1.0 / static_cast<double>(batch);
  LossGrad<Scalar> g;
  g.d_mean.setZero(act, batch);
  g.d_value.setZero(batch);
  g.d_log_std.setZero(act);

  std::vector<double> inv_std(act);
  for (Eigen::Index j = 0; j < act; ++j) inv_std[j] = std::exp(-static_cast<double>(out.log_std(j)));

  for (Eigen::Index i = 0; i < batch; ++i) {
    const double logp = gaussian_log_prob(actions.col(i), out.mean.col(i), out.log_std);
    const double log_ratio = logp - old_log_probs[i];
    const double ratio = std::exp(log_ratio);
    const double a = adv[i];
    const double unclipped = ratio * a;
    const double clipped = std::clamp(ratio, 1.0 - k.clip, 1.0 + k.clip) * a;
    const bool clip_active = clipped < unclipped;
    g.terms.policy -= std::min(unclipped, clipped) * inv_b;
    g.terms.approx_kl += ((ratio - 1.0) - log_ratio) * inv_b;
    if (std::abs(ratio - 1.0) > k.clip) g.terms.clip_fraction += inv_b;

    const double d_logp = clip_active ? 0.0 : -ratio * a * inv_b;
    if (d_logp != 0.0) {
      for (Eigen::Index j = 0; j < act; ++j) {
        const double z = (static_cast<double>(actions(j, i)) - static_cast<double>(out.mean(j, i))) * inv_std[j];
        g.d_mean(j, i) += static_cast<Scalar>(d_logp * z * inv_std[j]);
        g.d_log_std(j) += static_cast<Scalar>(d_logp * (z * z - 1.0));
      }
    }

    const double err = static_cast<double>(out.value(i)) - returns[i];
    g.terms.value += err * err * inv_b;
    g.d_value(i) = static_cast<Scalar>(2.0 * k.value_coef * err * inv_b);
  }
  g.terms.entropy = gaussian_entropy(out.log_std);
  for (Eigen::Index j = 0; j < act; ++j) g.d_log_std(j) += static_cast<Scalar>(-k.entropy_coef);
  g.terms.total = g.terms.policy + k.value_coef * g.terms.value - k.entropy_coef * g.terms.entropy;
  return g;
}

template <typename Scalar>
class Adam {
 public:
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Adam(Eigen::Index n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(Vec::Zero(n)), v_(Vec::Zero(n)), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Vec& params, const Vec& grad, double lr) {
    ++t_;
    const Scalar b1 = static_cast<Scalar>(beta1_), b2 = static_cast<Scalar>(beta2_);
    m_ = b1 * m_ + (Scalar(1) - b1) * grad;
    v_ = b2 * v_ + (Scalar(1) - b2) * grad.cwiseProduct(grad);
    const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(beta1_, t_));
    const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(beta2_, t_));
    const Scalar step = static_cast<Scalar>(lr);
    params.array() -= step * (m_.array() / c1) / ((v_.array() / c2).sqrt() + static_cast<Scalar>(eps_));
  }

  long steps() const { return t_; }

 private:
  Vec m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

/// Scales grad in place so its Euclidean norm is at most max_norm. Returns the
/// norm before clipping.
template <typename Derived>
double clip_grad_norm(Eigen::MatrixBase<Derived>& grad, double max_norm) {
  const double n = static_cast<double>(grad.norm());
  if (n > max_norm) grad *= static_cast<typename Derived::Scalar>(max_norm / n);
  return n;
}

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct UpdateStats {
  LossTerms loss;  // averaged over minibatches
  double grad_norm = 0.0;
};

using Policy = ActorCritic<float>;

inline UpdateStats ppo_update(Policy& net, Adam<float>& opt, RolloutBuffer& buf, const PpoConfig& cfg, Rng& rng) {
  normalize_advantages(buf.advantages);
  const long n = buf.size();
  std::vector<long> order(n);
  std::iota(order.begin(), order.end(), 0L);
  const LossCoefficients k{cfg.clip, cfg.value_coef, cfg.entropy_coef};

  UpdateStats stats;
  long batches = 0;
  Policy::Mat x(buf.obs.rows(), cfg.batch_size), a(buf.actions.rows(), cfg.batch_size);
  std::vector<double> old_lp(cfg.batch_size), adv(cfg.batch_size), ret(cfg.batch_size);
  Policy::Cache cache;
  Policy::Vec grad(net.num_params());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (long start = 0; start < n; start += cfg.batch_size) {
      for (int i = 0; i < cfg.batch_size; ++i) {
        const long s = order[start + i];
        x.col(i) = buf.obs.col(s);
        a.col(i) = buf.actions.col(s);
        old_lp[i] = buf.log_probs[s];
        adv[i] = buf.advantages[s];
        ret[i] = buf.returns[s];
      }
      const auto out = net.forward(x, &cache);
      const auto lg = ppo_loss<float>(out, a, old_lp, adv, ret, k);
      if (!std::isfinite(lg.terms.total)) {
        throw TrainingDiverged("ppo_update: non-finite loss at epoch " + std::to_string(epoch));
      }
      grad.setZero();
      net.backward(cache, lg.d_mean, lg.d_value, lg.d_log_std, grad);
      stats.grad_norm += clip_grad_norm(grad, cfg.max_grad_norm);
      opt.step(net.params(), grad, cfg.lr);
      stats.loss.policy += lg.terms.policy;
      stats.loss.value += lg.terms.value;
      stats.loss.entropy += lg.terms.entropy;
      stats.loss.approx_kl += lg.terms.approx_kl;
      stats.loss.clip_fraction += lg.terms.clip_fraction;
      stats.loss.total += lg.terms.total;
      ++batches;
    }
  }
  if (!net.params().allFinite()) throw TrainingDiverged("ppo_update: parameters became non-finite");
  const double inv = 1.0 / static_cast<double>(batches);
  stats.loss.policy *= inv;
  stats.loss.value *= inv;
  stats.loss.entropy *= inv;
  stats.loss.approx_kl *= inv;
  stats.loss.clip_fraction *= inv;
  stats.loss.total *= inv;
  stats.grad_norm *= inv;
  return stats;
}

struct EpisodeRecord {
  double ret = 0.0;  // undiscounted, unscaled
  long length = 0;
  bool success = false;
  bool collision = false;
};

/// n_envs environments stepped in lockstep; episodes auto-reset and continue
/// across rollouts.
class VecEnv {
 public:
  VecEnv(int n_envs, const std::function<Environment(int)>& make) {
    for (int i = 0; i < n_envs; ++i) envs_.push_back(make(i));
    for (auto& e : envs_) obs_.push_back(e.reset());
    ep_return_.assign(n_envs, 0.0);
    ep_len_.assign(n_envs, 0);
  }

  int size() const { return static_cast<int>(envs_.size()); }
  Environment& env(int i) { return envs_[i]; }
  const Observation& obs(int i) const { return obs_[i]; }
  Observation& obs(int i) { return obs_[i]; }
  double& episode_return(int i) { return ep_return_[i]; }
  long& episode_length(int i) { return ep_len_[i]; }

 private:
  std::vector<Environment> envs_;
  std::vector<Observation> obs_;
  std::vector<double> ep_return_;
  std::vector<long> ep_len_;
};

/// Fixed invertible affine map from an observation to the network input: the
/// goal is taken relative to the drone and lengths are brought to unit scale.
/// A linear map ahead of the first layer leaves the function class unchanged
/// and only conditions the optimization.
inline Eigen::Matrix<float, kObsDim, 1> network_input(const Observation& o) {
  constexpr double kLength = 4.0, kSpeed = 3.0;
  Observation x = o;
  x.segment<3>(12) -= o.segment<3>(0);
  x.segment<3>(0) /= kLength;
  x.segment<3>(6) /= kSpeed;
  x.segment<3>(12) /= kLength;
  x.segment<3>(17) /= kLength;
  return x.cast<float>();
}

inline Policy::Mat observations_to_matrix(const std::vector<Observation>& obs) {
  Policy::Mat x(kObsDim, static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = network_input(obs[i]);
  return x;
}

struct RolloutStats {
  std::vector<EpisodeRecord> episodes;
  double mean_step_reward = 0.0;  // unscaled
};

/// Fills buf with n_envs x n_steps transitions. Episodes that end by success or
/// timeout are truncations: gamma * V(final observation) is folded into the
/// last reward so the advantage recursion can treat every episode end alike.
inline RolloutStats collect_rollouts(const Policy& net, VecEnv& venv, RolloutBuffer& buf, const PpoConfig& cfg,
                                     Rng& rng) {
  const int n_envs = venv.size();
  buf.resize(n_envs, cfg.n_steps);
  RolloutStats stats;
  double reward_sum = 0.0;
  std::vector<Observation> cur(n_envs);

  for (int step = 0; step < cfg.n_steps; ++step) {
    for (int e = 0; e < n_envs; ++e) cur[e] = venv.obs(e);
    const Policy::Mat x = observations_to_matrix(cur);
    const auto out = net.forward(x);

    std::vector<int> truncated;
    std::vector<Observation> final_obs;
    for (int e = 0; e < n_envs; ++e) {
      const long idx = buf.index(e, step);
      const ActionSample s = sample_action(out.mean.col(e), out.log_std, rng);
      buf.obs.col(idx) = x.col(e);
      buf.actions.col(idx) = s.raw.cast<float>();
      buf.log_probs[idx] = s.log_prob;
      buf.values[idx] = out.value(e);

      const StepResult r = venv.env(e).step(s.action);
      if (!r.obs.allFinite()) {
        std::ostringstream msg;
        msg << "collect_rollouts: non-finite observation in env " << e << " at step " << step
            << " (drone at " << venv.env(e).state().drone.position.transpose() << ")";
        throw std::runtime_error(msg.str());
      }
      reward_sum += r.reward;
      buf.rewards[idx] = r.reward * cfg.reward_scale;
      buf.dones[idx] = r.done ? 1 : 0;
      venv.episode_return(e) += r.reward;
      ++venv.episode_length(e);
      if (r.done) {
        stats.episodes.push_back({venv.episode_return(e), venv.episode_length(e), r.info.success, r.info.collided()});
        venv.episode_return(e) = 0.0;
        venv.episode_length(e) = 0;
        if (!r.info.collided()) {
          truncated.push_back(e);
          final_obs.push_back(r.obs);
        }
        venv.obs(e) = venv.env(e).reset();
      } else {
        venv.obs(e) = r.obs;
      }
    }
    if (!truncated.empty()) {
      const auto tail = net.forward(observations_to_matrix(final_obs));
      for (std::size_t k = 0; k < truncated.size(); ++k) {
        buf.rewards[buf.index(truncated[k], step)] += cfg.gamma * static_cast<double>(tail.value(k));
      }
    }
  }
  for (int e = 0; e < n_envs; ++e) cur[e] = venv.obs(e);
  const auto last = net.forward(observations_to_matrix(cur));
  for (int e = 0; e < n_envs; ++e) buf.last_values[e] = last.value(e);
  stats.mean_step_reward = reward_sum / static_cast<double>(buf.size());
  return stats;
}

/// Deterministic (mean-action) controller backed by a policy network.
inline Controller policy_controller(const Policy& net) {
  return [&net](const WorldState& w) {
    const auto out = net.forward(network_input(observe(w)));
    const Eigen::Vector4d a = out.mean.col(0).cast<double>();
    return map_action(a);
  };
}

struct EvalResult {
  double mean_reward = 0.0;
  double std_reward = 0.0;
  double success_rate = 0.0;
  double mean_length = 0.0;
};

inline EvalResult evaluate(Environment& env, const Controller& ctl, int n_episodes) {
  if (n_episodes < 1) throw std::invalid_argument("evaluate: n_episodes must be >= 1");
  std::vector<double> returns;
  double successes = 0.0, lengths = 0.0;
  for (int ep = 0; ep < n_episodes; ++ep) {
    env.reset();
    double ret = 0.0;
    for (;;) {
      const StepResult r = env.step(ctl(env.state()));
      ret += r.reward;
      if (r.done) {
        successes += r.info.success ? 1.0 : 0.0;
        lengths += static_cast<double>(env.state().steps);
        break;
      }
    }
    returns.push_back(ret);
  }
  EvalResult res;
  const double n = static_cast<double>(n_episodes);
  res.mean_reward = std::accumulate(returns.begin(), returns.end(), 0.0) / n;
  double var = 0.0;
  for (double r : returns) var += (r - res.mean_reward) * (r - res.mean_reward);
  res.std_reward = std::sqrt(var / n);
  res.success_rate = successes / n;
  res.mean_length = lengths / n;
  return res;
}

inline EvalResult evaluate_policy(const Policy& net, Environment& env, int n_episodes) {
  return evaluate(env, policy_controller(net), n_episodes);
}

struct CurveRow {
  long step = 0;
  double mean_reward = 0.0;  // per transition, over the rollout
  double mean_ep_return = 0.0;
  double mean_ep_len = 0.0;
  double success_rate = 0.0;
  double collision_rate = 0.0;
  long episodes = 0;
  LossTerms loss;
  double eval_mean_reward = std::nan("");
  double eval_success = std::nan("");
};

struct TrainResult {
  Policy best;
  Policy last;
  std::vector<CurveRow> curve;
  EvalResult best_eval;
};

/// Independent seeds for the initializer, sampler, evaluator and each env.
inline std::vector<std::uint64_t> derive_seeds(std::uint64_t seed, int n_envs) {
  std::seed_seq seq{seed, std::uint64_t{0x5eed}};
  std::vector<std::uint64_t> seeds(n_envs + 3);
  seq.generate(seeds.begin(), seeds.end());
  return seeds;
}

/// From start_step on, training layouts use these scene settings. Episodes in
/// flight finish under the previous ones.
struct CurriculumStage {
  long start_step = 0;
  int obstacle_count = 0;
  double gate_probability = 0.0;
  double d_lat_min = 0.0;
  double d_lat_max = 0.5;
};

struct TrainSetup {
  PpoConfig ppo;
  WorldConfig world;  // also the evaluation scene
  RewardConfig reward;
  std::vector<CurriculumStage> curriculum;  // empty: train on `world` throughout
  std::uint64_t seed = 0;
  std::shared_ptr<const Policy> initial;  // warm start; fresh initialization when null

  /// Scene settings in force at the given step.
  WorldConfig world_at(long step) const {
    WorldConfig w = world;
    for (const auto& st : curriculum) {
      if (st.start_step > step) break;
      w.obstacle_count = st.obstacle_count;
      w.gate_probability = st.gate_probability;
      w.d_lat_min = st.d_lat_min;
      w.d_lat_max = st.d_lat_max;
    }
    return w;
  }

  void validate() const {
    ppo.validate();
    reward.validate();
    for (std::size_t i = 1; i < curriculum.size(); ++i) {
      if (curriculum[i].start_step <= curriculum[i - 1].start_step) {
        throw std::invalid_argument("curriculum: start steps must increase");
      }
    }
    for (const auto& st : curriculum) {
      if (st.obstacle_count < 0 || st.gate_probability < 0.0 || st.gate_probability > 1.0) {
        throw std::invalid_argument("curriculum: obstacle_count >= 0 and gate_probability in [0, 1]");
      }
      if (!(st.d_lat_min >= 0.0 && st.d_lat_max > 0.0 && st.d_lat_min <= st.d_lat_max)) {
        throw std::invalid_argument("curriculum: need 0 <= d_lat_min <= d_lat_max, d_lat_max > 0");
      }
    }
  }
};

/// Full PPO loop. The kept "best" policy is the one with the highest
/// evaluation success rate, ties broken by mean evaluation return.
inline TrainResult train(const TrainSetup& setup, const std::function<void(const CurveRow&)>& on_row = {}) {
  const PpoConfig& cfg = setup.ppo;
  setup.validate();
  const auto seeds = derive_seeds(setup.seed, cfg.n_envs);

  Rng rng(seeds[0]);
  Policy net;
  net.initialize(rng);
  if (setup.initial) net = *setup.initial;
  Adam<float> opt(net.num_params(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  WorldConfig scene = setup.world_at(0);
  VecEnv venv(cfg.n_envs, [&](int i) { return Environment(scene, setup.reward, seeds[3 + i]); });
  Rng sample_rng(seeds[1]);
  RolloutBuffer buf;

  TrainResult res{net, net, {}, {}};
  bool have_best = false;
  auto eval_now = [&](const Policy& p) {
    Environment eval_env(setup.world, setup.reward, seeds[2]);
    return evaluate_policy(p, eval_env, cfg.eval_episodes);
  };
  auto better = [](const EvalResult& a, const EvalResult& b) {
    return a.success_rate > b.success_rate || (a.success_rate == b.success_rate && a.mean_reward > b.mean_reward);
  };

  const long updates = std::max(1L, cfg.total_steps / cfg.rollout_size());
  for (long u = 0; u < updates; ++u) {
    const WorldConfig next = setup.world_at(u * cfg.rollout_size());
    if (next.obstacle_count != scene.obstacle_count || next.gate_probability != scene.gate_probability ||
        next.d_lat_min != scene.d_lat_min || next.d_lat_max != scene.d_lat_max) {
      scene = next;
      for (int i = 0; i < venv.size(); ++i) venv.env(i).set_world(scene);
    }
    const RolloutStats rs = collect_rollouts(net, venv, buf, cfg, sample_rng);
    compute_gae(buf, cfg.gamma, cfg.gae_lambda);
    const Policy before = net;
    UpdateStats us;
    try {
      us = ppo_update(net, opt, buf, cfg, rng);
    } catch (const TrainingDiverged&) {
      res.last = before;
      if (!have_best) res.best = before;
      throw;
    }

    CurveRow row;
    row.step = (u + 1) * cfg.rollout_size();
    row.mean_reward = rs.mean_step_reward;
    row.episodes = static_cast<long>(rs.episodes.size());
    for (const auto& ep : rs.episodes) {
      row.mean_ep_return += ep.ret;
      row.mean_ep_len += static_cast<double>(ep.length);
      row.success_rate += ep.success ? 1.0 : 0.0;
      row.collision_rate += ep.collision ? 1.0 : 0.0;
    }
    if (row.episodes > 0) {
      row.mean_ep_return /= static_cast<double>(row.episodes);
      row.mean_ep_len /= static_cast<double>(row.episodes);
      row.success_rate /= static_cast<double>(row.episodes);
      row.collision_rate /= static_cast<double>(row.episodes);
    }
    row.loss = us.loss;
    if (cfg.eval_interval > 0 && ((u + 1) % cfg.eval_interval == 0 || u + 1 == updates)) {
      const EvalResult ev = eval_now(net);
      row.eval_mean_reward = ev.mean_reward;
      row.eval_success = ev.success_rate;
      if (!have_best || better(ev, res.best_eval)) {
        res.best = net;
        res.best_eval = ev;
        have_best = true;
      }
    }
    res.curve.push_back(row);
    if (on_row) on_row(row);
  }
  res.last = net;
  if (!have_best) res.best = net;
  return res;
}

}  // namespace agile
