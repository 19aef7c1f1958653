#pragma once

// Command-line front end. run_cli returns the process exit code:
// 0 ok, 1 config error, 2 runtime failure, 3 self-test failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "agile_pilot/config.hpp"
#include "agile_pilot/selftest.hpp"

namespace agile {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitRuntime = 2, kExitSelftest = 3 };

namespace cli_detail {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::optional<int> case_id;
};

inline RunConfig resolve(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.output_dir = o.out;
  c.validate();
  return c;
}

inline fs::path prepare_dir(const std::string& dir) {
  const fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
  return p;
}

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << s;
}

inline std::unique_ptr<Policy> load_policy(const std::string& path) {
  if (path.empty()) return nullptr;
  if (!fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path);
  auto p = std::make_unique<Policy>();
  p->load(path);
  return p;
}

inline void write_curve(const fs::path& path, const std::vector<CurveRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "step,mean_reward,mean_step_reward,mean_episode_length,success_rate,collision_rate,episodes,policy_loss,"
       "value_loss,entropy,approx_kl,clip_fraction,eval_mean_reward,eval_success_rate\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%ld,%.6f,%.6f,%.3f,%.4f,%.4f,%ld,%.6g,%.6g,%.6g,%.6g,%.6g,%s,%s\n", r.step,
                  r.mean_ep_return, r.mean_reward, r.mean_ep_len, r.success_rate, r.collision_rate, r.episodes,
                  r.loss.policy, r.loss.value, r.loss.entropy, r.loss.approx_kl, r.loss.clip_fraction,
                  std::isnan(r.eval_mean_reward) ? "" : fmt(r.eval_mean_reward, 4).c_str(),
                  std::isnan(r.eval_success) ? "" : fmt(r.eval_success, 4).c_str());
    f << buf;
  }
}

inline Controller apf_controller(const ApfConfig& cfg) {
  return [cfg](const WorldState& w) { return apf_step(w, cfg); };
}

/// Trial controller factory for an agent on a case; perception cases put the
/// tracker between the world and the agent.
inline ControllerFactory agent_factory(const Controller& base, const CaseSpec& c, const RunConfig& cfg) {
  if (!c.perception) return stateless(base);
  return [base, pc = cfg.perception](const WorldState& initial, std::uint64_t seed) {
    auto pcs = std::make_shared<PerceivedController>(base, pc, initial, seed);
    return Controller([pcs](const WorldState& w) { return (*pcs)(w); });
  };
}

inline CaseSpec configured_case(int id, const RunConfig& cfg) {
  CaseSpec c = case_by_id(id);
  c.n_trials = cfg.eval.n_trials;
  c.time_cap = cfg.eval.time_cap;
  return c;
}

inline AgentCaseResult run_agent(const std::string& agent, const Controller& ctl, int id, const RunConfig& cfg) {
  const CaseSpec c = configured_case(id, cfg);
  return {agent, c, run_case(c, agent_factory(ctl, c, cfg), cfg.seed)};
}

inline void write_results(const fs::path& dir, const std::string& stem, const std::vector<AgentCaseResult>& rows,
                          bool trajectories) {
  write_report_csv(dir / (stem + "_report.csv"), rows);
  write_trials_csv(dir / (stem + "_trials.csv"), rows);
  if (!trajectories) return;
  const fs::path tdir = prepare_dir((dir / "trajectories").string());
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < r.trials.size(); ++k) {
      write_trajectory_csv(tdir / ("case" + std::to_string(r.spec.id) + "_" + r.agent + "_trial" +
                                   std::to_string(k) + ".csv"),
                           r.trials[k].trajectory);
    }
  }
}

inline void print_summary(const std::vector<AgentCaseResult>& rows) {
  for (const auto& r : rows) {
    const CaseMetrics m = compute_metrics(r.trials);
    std::printf("case %d %-4s success %5.1f%%  ME %s cm  SD %s cm  TT %s s\n", r.spec.id, r.agent.c_str(),
                m.success_rate, fmt_or_na(m.tracking_me, 2).c_str(), fmt_or_na(m.tracking_sd, 2).c_str(),
                fmt_or_na(m.mean_time, 2).c_str());
  }
}

inline int cmd_train(const Options& o) {
  const RunConfig cfg = resolve(o);
  const fs::path dir = prepare_dir(cfg.output_dir);
  write_text(dir / "config.json", dump_config(cfg));
  const TrainResult res = train(cfg.train_setup(), [](const CurveRow& r) {
    std::printf("step %9ld  reward/ep %9.2f  len %6.1f  success %.2f", r.step, r.mean_ep_return, r.mean_ep_len,
                r.success_rate);
    if (!std::isnan(r.eval_success)) std::printf("  eval success %.2f", r.eval_success);
    std::printf("\n");
    std::fflush(stdout);
  });
  res.best.save((dir / "policy.ckpt").string());
  res.last.save((dir / "policy_last.ckpt").string());
  write_curve(dir / "training_curve.csv", res.curve);
  std::printf("wrote %s\n", (dir / "policy.ckpt").string().c_str());
  return kExitOk;
}

inline int cmd_eval(const Options& o) {
  const RunConfig cfg = resolve(o);
  const auto policy = load_policy(o.checkpoint);
  const Controller ctl = policy ? policy_controller(*policy) : apf_controller(cfg.apf);
  const std::string agent = policy ? "drl" : "apf";
  std::vector<int> ids;
  if (o.case_id) {
    ids = {*o.case_id};
  } else {
    ids = cfg.eval.cases;
    ids.insert(ids.end(), cfg.eval.perception_cases.begin(), cfg.eval.perception_cases.end());
  }
  std::vector<AgentCaseResult> rows;
  for (int id : ids) rows.push_back(run_agent(agent, ctl, id, cfg));
  const fs::path dir = prepare_dir(cfg.output_dir);
  write_results(dir, "eval", rows, cfg.eval.write_trajectories);
  print_summary(rows);
  return kExitOk;
}

inline int cmd_compare(const Options& o) {
  const RunConfig cfg = resolve(o);
  if (o.checkpoint.empty()) throw ConfigError("compare needs --checkpoint");
  const auto policy = load_policy(o.checkpoint);
  std::vector<AgentCaseResult> rows;
  const std::vector<int> ids = o.case_id ? std::vector<int>{*o.case_id} : cfg.eval.cases;
  for (int id : ids) {
    rows.push_back(run_agent("drl", policy_controller(*policy), id, cfg));
    rows.push_back(run_agent("apf", apf_controller(cfg.apf), id, cfg));
  }
  const fs::path dir = prepare_dir(cfg.output_dir);
  write_results(dir, "compare", rows, cfg.eval.write_trajectories);
  print_summary(rows);
  return kExitOk;
}

inline int cmd_selftest(const Options& o) {
  const RunConfig cfg = resolve(o);
  const SelftestReport rep = run_perception_selftest(cfg.perception, cfg.seed);
  for (const auto& c : rep.checks) {
    std::printf("%s  %s: %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
  }
  if (!o.out.empty()) write_measurement_log(prepare_dir(cfg.output_dir) / "measurement_log.csv", rep.log);
  return rep.passed() ? kExitOk : kExitSelftest;
}

/// Flies a single trial of one case and writes its trajectory.
inline int cmd_replay(const Options& o) {
  RunConfig cfg = resolve(o);
  if (!o.case_id) throw ConfigError("replay needs --case");
  const auto policy = load_policy(o.checkpoint);
  const Controller ctl = policy ? policy_controller(*policy) : apf_controller(cfg.apf);
  const std::string agent = policy ? "drl" : "apf";
  cfg.eval.n_trials = 1;
  const AgentCaseResult r = run_agent(agent, ctl, *o.case_id, cfg);
  const TrialResult& t = r.trials.front();
  const fs::path dir = prepare_dir(cfg.output_dir);
  const fs::path file = dir / ("replay_case" + std::to_string(*o.case_id) + "_" + agent + ".csv");
  write_trajectory_csv(file, t.trajectory);
  std::printf("case %d %s: %s after %.2f s, target error %.3f m, wrote %s\n", *o.case_id, agent.c_str(),
              t.success ? "success" : (t.collision ? "collision" : "timeout"), t.time, t.target_error,
              file.string().c_str());
  return kExitOk;
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv) {
  using namespace cli_detail;
  CLI::App app{"Drone gate-and-obstacle planner: PPO training, APF baseline, perception and evaluation"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* s) {
    s->add_option("--config", o.config, "JSON run configuration");
    s->add_option("--seed", o.seed, "override the configured seed");
    s->add_option("--out", o.out, "output directory");
  };
  auto* train_cmd = app.add_subcommand("train", "train a policy with PPO");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate one agent on the configured cases");
  auto* compare_cmd = app.add_subcommand("compare", "policy vs potential field on cases 1-5");
  auto* self_cmd = app.add_subcommand("perception-selftest", "check the perception pipeline");
  auto* replay_cmd = app.add_subcommand("replay", "fly one trial and write its trajectory");
  for (auto* s : {train_cmd, eval_cmd, compare_cmd, self_cmd, replay_cmd}) add_common(s);
  for (auto* s : {eval_cmd, compare_cmd, replay_cmd}) {
    s->add_option("--checkpoint", o.checkpoint, "policy checkpoint (eval/replay: potential field if omitted)");
    s->add_option("--case", o.case_id, "case id (1-5 comparison, 6-8 tracked)")->check(CLI::Range(1, 8));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd) return cmd_train(o);
    if (*eval_cmd) return cmd_eval(o);
    if (*compare_cmd) return cmd_compare(o);
    if (*self_cmd) return cmd_selftest(o);
    if (*replay_cmd) return cmd_replay(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}

}  // namespace agile
