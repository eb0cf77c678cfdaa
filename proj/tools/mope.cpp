// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

// Command-line driver: train, eval, gradcheck, sweep, ablate, routes.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mope/allocator.hpp"
#include "mope/config.hpp"
#include "mope/diagnostics.hpp"
#include "mope/errors.hpp"
#include "mope/experiment.hpp"
#include "mope/fusion.hpp"
#include "mope/metrics.hpp"
#include "mope/model_check.hpp"
#include "mope/tasks.hpp"
#include "mope/trainer.hpp"

namespace fs = std::filesystem;
using namespace mope;

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> precision;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "key = value config file (defaults: desk scale)");
  cmd->add_option("--set", o.overrides, "override one key, e.g. --set prompt.experts=4");
  cmd->add_option("--seed", o.seed, "model and training seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--precision", o.precision, "32 or 64");
}

RunConfig resolve_config(const CommonOptions& o, KeyValues base = {}) {
  KeyValues kv = std::move(base);
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw ConfigError("cannot read config file '" + o.config_path + "'");
    const KeyValues file = KeyValues::parse(in);
    for (const auto& [k, v] : file.entries()) kv.set(k, v);
  }
  for (const auto& item : o.overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + item + "'");
    kv.set(item.substr(0, eq), item.substr(eq + 1));
  }
  if (o.out) kv.set("run.out_dir", *o.out);
  if (o.precision) kv.set("run.precision", *o.precision);
  RunConfig rc = RunConfig::from_kv(kv);
  if (o.seed) rc.set_seed(*o.seed);
  return rc;
}

/// Writes config.resolved into the output directory and prints it.
void echo_config(const RunConfig& rc) {
  fs::create_directories(rc.out_dir);
  const std::string text = rc.str();
  std::ofstream(fs::path(rc.out_dir) / "config.resolved") << text;
  std::cout << "# resolved config\n" << text << std::flush;
}

const Split& pick_split(const Dataset& ds, const std::string& name) {
  if (name == "train") return ds.train;
  if (name == "val") return ds.val;
  if (name == "test") return ds.test;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

void print_report(std::ostream& os, const std::string& split, const MetricReport& r) {
  os << "{\n  \"split\": \"" << split << "\",\n  \"instances\": " << r.instances << ",\n  \"accuracy\": " << r.accuracy
     << ",\n  \"f1_macro\": " << r.f1_macro << ",\n  \"f1_micro\": " << r.f1_micro << "\n}\n";
}

void write_report_csv(const fs::path& path, const std::string& split, const MetricReport& r) {
  std::ofstream os(path);
  os << std::setprecision(10) << "split,instances,accuracy,f1_macro,f1_micro\n"
     << split << ',' << r.instances << ',' << r.accuracy << ',' << r.f1_macro << ',' << r.f1_micro << '\n';
}

template <typename T>
int cmd_train(const RunConfig& rc) {
  const Dataset ds = generate(rc.task);
  FusionModel<T> model(rc.model);
  const fs::path out(rc.out_dir);
  std::ofstream metrics(out / "metrics.csv");
  metrics << std::setprecision(10) << "step,task_loss,imp_loss_value,imp_loss_applied,total,lr\n";
  const auto log = train(model, ds.train, rc.train, [&](const StepLog& s) {
    metrics << s.step << ',' << s.loss.task_loss << ',' << s.loss.importance_loss << ','
            << s.loss.applied_importance << ',' << s.loss.total << ',' << s.lr << '\n';
  });
  metrics.close();
  {
    std::ofstream diag(out / "diagnostics.csv");
    diag << std::setprecision(10);
    write_diagnostics_csv(diag, log);
  }
  if (model.routes()) {
    std::ofstream cont(out / "contingency.csv");
    write_contingency_csv(cont, diagnose(model, ds.val, rc.task.num_groups));
  }
  const auto report = evaluate(model, ds.val);
  print_report(std::cout, "val", report);
  write_report_csv(out / "eval.csv", "val", report);
  KeyValues extra;
  rc.task.to_kv(extra);
  rc.train.to_kv(extra);
  save_checkpoint(model, (out / "checkpoint.bin").string(), extra);
  const auto params = model.count_params();
  std::cout << "trainable parameters: " << params.trainable << ", frozen: " << params.frozen << "\n";
  return 0;
}

/// Run config recorded in a checkpoint header (task and optimizer included
/// when the checkpoint came from `train`).
RunConfig config_from_checkpoint(const std::string& path, const CommonOptions& o) {
  const auto header = read_checkpoint_header(path);
  KeyValues kv;
  for (const auto& [k, v] : header.entries.entries())
    if (k != "precision") kv.set(k, v);
  kv.set("run.precision", header.precision);
  return resolve_config(o, kv);
}

template <typename T>
int cmd_eval(const RunConfig& rc, const std::string& checkpoint, const std::string& split) {
  const Dataset ds = generate(rc.task);
  const auto model = load_checkpoint<T>(checkpoint);
  const auto report = evaluate(model, pick_split(ds, split));
  print_report(std::cout, split, report);
  write_report_csv(fs::path(rc.out_dir) / "eval.csv", split, report);
  return 0;
}

template <typename T>
int cmd_routes(const RunConfig& rc, const std::string& checkpoint, const std::string& split) {
  const Dataset ds = generate(rc.task);
  const auto model = load_checkpoint<T>(checkpoint);
  const auto dump = diagnose(model, pick_split(ds, split), rc.task.num_groups);
  const fs::path out(rc.out_dir);
  {
    std::ofstream os(out / "routes.csv");
    os << std::setprecision(10);
    write_routing_csv(os, dump.records);
  }
  {
    std::ofstream os(out / "contingency.csv");
    write_contingency_csv(os, dump);
  }
  std::cout << std::setprecision(6) << "mutual information (argmax expert; group) at last layer: "
            << dump.mutual_information_bits << " bits\n";
  for (std::size_t l = 0; l < dump.layer_entropy_bits.size(); ++l)
    std::cout << "layer " << l << ": mean entropy " << dump.layer_entropy_bits[l] << " bits, importance cv "
              << dump.layer_importance[l].cv << "\n";
  return 0;
}

int cmd_gradcheck(RunConfig rc, std::size_t samples, std::size_t batch_size) {
  rc.model.prompts.noise_std = 0.0;
  rc.precision = 64;
  echo_config(rc);
  const Dataset ds = generate(rc.task);
  FusionModel<double> model(rc.model);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < std::min(batch_size, ds.train.size()); ++i) rows.push_back(i);
  const auto batch = make_batch<double>(ds.train, rows, rc.model.comp.max_seq_len);
  Rng rng(rc.model.seed);
  const auto report = gradcheck_model(model, batch, samples, rng, 1e-5);
  std::ofstream os(fs::path(rc.out_dir) / "gradcheck.csv");
  os << std::setprecision(12) << "parameter,index,analytic,numeric,rel_error\n";
  for (const auto& s : report.samples)
    os << s.name << ',' << s.index << ',' << s.analytic << ',' << s.numeric << ',' << s.rel_error << '\n';
  constexpr double kTolerance = 1e-3;
  std::cout << "gradcheck: " << report.samples.size() << " parameters, max relative error " << report.max_rel_error
            << (report.passed(kTolerance) ? " (pass)\n" : " (FAIL)\n");
  return report.passed(kTolerance) ? 0 : 3;
}

template <typename T>
int cmd_sweep(const RunConfig& rc, const std::string& spec, const std::vector<std::uint64_t>& seeds) {
  std::cout << std::setprecision(4);
  run_experiment<T>(spec, rc, seeds, rc.out_dir, [](const CellResult& r) {
    std::cout << r.id << " seed " << r.seed << ": accuracy " << r.test.accuracy << ", f1_macro " << r.test.f1_macro
              << ", trainable " << r.trainable_params << ", seq_len " << r.seq_len << ", " << r.wall_clock_s
              << " s\n";
  });
  return 0;
}

template <typename F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Mixture-of-prompt-experts fusion on a frozen transformer"};
  app.require_subcommand(1);

  CommonOptions train_opts, eval_opts, grad_opts, sweep_opts, ablate_opts, routes_opts;
  auto* train_cmd = app.add_subcommand("train", "train a model and save checkpoint.bin");
  add_common(train_cmd, train_opts);

  std::string eval_ckpt, eval_split = "test";
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a split");
  add_common(eval_cmd, eval_opts);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--split", eval_split, "train, val or test");

  std::size_t grad_samples = 256, grad_batch = 8;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the full objective (64-bit)");
  add_common(grad_cmd, grad_opts);
  grad_cmd->add_option("--samples", grad_samples, "parameters to compare");
  grad_cmd->add_option("--batch", grad_batch, "instances in the probe batch");

  std::string sweep_spec;
  std::vector<std::uint64_t> sweep_seeds;
  auto* sweep_cmd = app.add_subcommand("sweep", "run a named experiment");
  add_common(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--spec", sweep_spec, "ablation, k_vs_l, shots, dense_vs_sparse, importance_on_off")
      ->required();
  sweep_cmd->add_option("--seeds", sweep_seeds, "seeds per cell (default: the config seed)");

  std::vector<std::uint64_t> ablate_seeds;
  auto* ablate_cmd = app.add_subcommand("ablate", "train all seven prompt-kind combinations");
  add_common(ablate_cmd, ablate_opts);
  ablate_cmd->add_option("--seeds", ablate_seeds, "seeds per cell (default: the config seed)");

  std::string routes_ckpt, routes_split = "test";
  auto* routes_cmd = app.add_subcommand("routes", "dump routing records and expert/group statistics");
  add_common(routes_cmd, routes_opts);
  routes_cmd->add_option("--checkpoint", routes_ckpt, "checkpoint file")->required();
  routes_cmd->add_option("--split", routes_split, "train, val or test");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto by_precision = [](const RunConfig& rc, auto&& f32, auto&& f64) {
    return rc.precision == 64 ? f64() : f32();
  };

  if (*train_cmd) {
    return guarded([&] {
      const auto rc = resolve_config(train_opts);
      echo_config(rc);
      return by_precision(rc, [&] { return cmd_train<float>(rc); }, [&] { return cmd_train<double>(rc); });
    });
  }
  if (*eval_cmd) {
    return guarded([&] {
      const auto rc = config_from_checkpoint(eval_ckpt, eval_opts);
      echo_config(rc);
      return by_precision(rc, [&] { return cmd_eval<float>(rc, eval_ckpt, eval_split); },
                          [&] { return cmd_eval<double>(rc, eval_ckpt, eval_split); });
    });
  }
  if (*grad_cmd) return guarded([&] { return cmd_gradcheck(resolve_config(grad_opts), grad_samples, grad_batch); });
  if (*sweep_cmd || *ablate_cmd) {
    const bool ablate = ablate_cmd->parsed();
    return guarded([&] {
      const auto rc = resolve_config(ablate ? ablate_opts : sweep_opts);
      echo_config(rc);
      auto seeds = ablate ? ablate_seeds : sweep_seeds;
      if (seeds.empty()) seeds.push_back(rc.model.seed);
      const std::string spec = ablate ? "ablation" : sweep_spec;
      return by_precision(rc, [&] { return cmd_sweep<float>(rc, spec, seeds); },
                          [&] { return cmd_sweep<double>(rc, spec, seeds); });
    });
  }
  if (*routes_cmd) {
    return guarded([&] {
      const auto rc = config_from_checkpoint(routes_ckpt, routes_opts);
      echo_config(rc);
      return by_precision(rc, [&] { return cmd_routes<float>(rc, routes_ckpt, routes_split); },
                          [&] { return cmd_routes<double>(rc, routes_ckpt, routes_split); });
    });
  }
  return 2;
}
