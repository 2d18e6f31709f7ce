// Command-line driver: gen, selftest, train, eval-curve, compare and run.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "rankmerge/binary_io.hpp"
#include "rankmerge/experiment.hpp"
#include "rankmerge/trainer.hpp"

namespace fs = std::filesystem;
using namespace rankmerge;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::string method;
  std::vector<std::string> reports;
  bool serial = false;
};

ExperimentConfig load(const Options& opt) {
  ExperimentConfig config = load_experiment_config(opt.config_path);
  if (opt.out) config.output_dir = *opt.out;
  return config;
}

std::uint64_t seed_of(const Options& opt, const ExperimentConfig& config) {
  return opt.seed ? *opt.seed : config.seeds.front();
}

UpgradeDataset dataset_for(const ExperimentConfig& config, std::uint64_t seed) {
  const fs::path dir = seed_dir(config, seed) / "data";
  if (!fs::exists(dir)) throw IoError("no dataset in " + dir.string() + " (run gen first)");
  return read_dataset(dir);
}

int cmd_gen(const Options& opt) {
  const ExperimentConfig config = load(opt);
  const std::uint64_t seed = seed_of(opt, config);
  write_dataset(generate(scenario_for_seed(config, seed)), seed_dir(config, seed) / "data");
  std::cout << (seed_dir(config, seed) / "data").string() << "\n";
  return 0;
}

int cmd_selftest(const Options& opt) {
  const ExperimentConfig config = load(opt);
  const std::uint64_t seed = seed_of(opt, config);
  const UpgradeDataset data = dataset_for(config, seed);
  const auto old_report = self_test(ModelSide::old_model, data.query, data.gallery, config.distance);
  const auto new_report = self_test(ModelSide::new_model, data.query, data.gallery, config.distance);
  const std::string csv = selftest_csv(config.config_hash(), old_report, new_report);
  io::write_file_atomic(seed_dir(config, seed) / "selftest.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_train(const Options& opt) {
  const ExperimentConfig config = load(opt);
  const std::uint64_t seed = seed_of(opt, config);
  const Method method = parse_method(opt.method);
  if (!is_trained(method)) throw ConfigError("method " + opt.method + " has nothing to train");
  const UpgradeDataset data = dataset_for(config, seed);
  FitResult fitted = fit(loss_kind_for(method), data.train, train_config_for_seed(config, seed), config.distance);
  const fs::path dir = method_dir(config, seed, method);
  fs::create_directories(dir);
  io::write_file_atomic(dir / "train_log.csv", with_hash_comment(config.config_hash(), training_log_csv(fitted.history)));
  write_transforms({std::move(fitted.psi), std::move(fitted.rho)}, dir);
  std::cout << dir.string() << "\n";
  return 0;
}

int cmd_eval_curve(const Options& opt) {
  const ExperimentConfig config = load(opt);
  const std::uint64_t seed = seed_of(opt, config);
  const Method method = parse_method(opt.method);
  const UpgradeDataset data = dataset_for(config, seed);
  const fs::path dir = method_dir(config, seed, method);
  const Transforms transforms = read_transforms(method, dir);
  const MethodEvaluation ev = evaluate_method(method, data.query, data.gallery, transforms, partition_seed_for(seed),
                                              config.distance, opt.serial ? Execution::serial : Execution::parallel);
  fs::create_directories(dir);
  const std::string curve = with_hash_comment(config.config_hash(), curve_csv(ev.curve));
  io::write_file_atomic(dir / "curve.csv", curve);
  io::write_file_atomic(dir / "report.csv", report_csv(config, {summarize(method, {ev.curve})}));
  std::cout << curve;
  return 0;
}

int cmd_compare(const Options& opt) {
  std::vector<fs::path> paths(opt.reports.begin(), opt.reports.end());
  const std::string table = compare(paths);
  if (opt.out) io::write_file_atomic(*opt.out, table);
  std::cout << table;
  return 0;
}

int cmd_run(const Options& opt) {
  const ExperimentConfig config = load(opt);
  const ExperimentReport report = run(config, opt.serial ? Execution::serial : Execution::parallel);
  std::cout << report_csv(config, report.summaries);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online backfilling by distance rank merge"};
  app.require_subcommand(1);
  Options opt;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "experiment config file")->required();
    sub->add_option("--out", opt.out, "output directory (overrides output_dir)");
  };
  auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", opt.seed, "run seed (default: first of seeds)"); };
  auto add_method = [&](CLI::App* sub) { sub->add_option("--method", opt.method, "method name")->required(); };

  auto* gen = app.add_subcommand("gen", "generate the synthetic upgrade dataset");
  add_config(gen);
  add_seed(gen);
  auto* selftest = app.add_subcommand("selftest", "old and new model self-tests");
  add_config(selftest);
  add_seed(selftest);
  auto* train = app.add_subcommand("train", "train the transforms of one method");
  add_config(train);
  add_seed(train);
  add_method(train);
  auto* eval = app.add_subcommand("eval-curve", "backfill curve of one method");
  add_config(eval);
  add_seed(eval);
  add_method(eval);
  eval->add_flag("--serial", opt.serial, "use the serial kernels");
  auto* cmp = app.add_subcommand("compare", "method x metric table over report CSVs");
  cmp->add_option("reports", opt.reports, "report or summary CSVs")->required();
  cmp->add_option("--out", opt.out, "write the table to this file");
  auto* run_all = app.add_subcommand("run", "every stage for every seed and method");
  add_config(run_all);
  run_all->add_flag("--serial", opt.serial, "use the serial kernels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen(opt);
    if (*selftest) return cmd_selftest(opt);
    if (*train) return cmd_train(opt);
    if (*eval) return cmd_eval_curve(opt);
    if (*cmp) return cmd_compare(opt);
    return cmd_run(opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
