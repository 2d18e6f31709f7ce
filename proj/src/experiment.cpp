#include "rankmerge/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "rankmerge/binary_io.hpp"
#include "rankmerge/random.hpp"
#include "rankmerge/trainer.hpp"

namespace fs = std::filesystem;

namespace rankmerge {

namespace {

constexpr std::pair<Method, std::string_view> kMethodNames[] = {
    {Method::rm_naive, "rm_naive"}, {Method::rm_rqt, "rm_rqt"},   {Method::rm_cl, "rm_cl"},
    {Method::rm_cl_m, "rm_cl_m"},   {Method::rm_cmcl, "rm_cmcl"}, {Method::rm_cmcl_rho, "rm_cmcl_rho"},
};

std::string real_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_row(std::initializer_list<std::string> cells) {
  std::string out;
  for (const auto& c : cells) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out + '\n';
}

// Re-throws `e` with a stage prefix, preserving the error category.
[[noreturn]] void rethrow_in_stage(const std::string& stage) {
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(stage + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(stage + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(stage + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(stage + ": " + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(stage + ": " + e.what());
  }
}

template <typename Fn>
auto in_stage(const std::string& stage, Fn&& fn) {
  try {
    return fn();
  } catch (...) {
    rethrow_in_stage(stage);
  }
}

LabeledEmbeddings rows_as_set(const std::vector<float>& values, const LabeledEmbeddings& like, std::size_t dim) {
  return LabeledEmbeddings(dim, values, {like.labels().begin(), like.labels().end()},
                           {like.ids().begin(), like.ids().end()});
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

double sample_std(const std::vector<double>& v, double mean_value) {
  if (v.size() < 2) return 0.0;
  double sq = 0.0;
  for (double x : v) sq += (x - mean_value) * (x - mean_value);
  return std::sqrt(sq / static_cast<double>(v.size() - 1));
}

}  // namespace

Method parse_method(std::string_view name) {
  for (const auto& [m, n] : kMethodNames) {
    if (n == name) return m;
  }
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

std::string_view to_string(Method method) {
  for (const auto& [m, n] : kMethodNames) {
    if (m == method) return n;
  }
  return "?";
}

bool is_trained(Method method) { return method != Method::rm_naive; }

LossKind loss_kind_for(Method method) {
  switch (method) {
    case Method::rm_rqt: return LossKind::rqt;
    case Method::rm_cl: return LossKind::cl;
    case Method::rm_cl_m: return LossKind::cl_m;
    case Method::rm_cmcl: return LossKind::cmcl;
    case Method::rm_cmcl_rho: return LossKind::cmcl_with_rho;
    case Method::rm_naive: break;
  }
  throw ConfigError("rm_naive has no training objective");
}

std::string ExperimentConfig::canonical_text() const {
  std::map<std::string, std::string> kv;
  std::string methods_text, seeds_text;
  for (Method m : methods) methods_text += (methods_text.empty() ? "" : ",") + std::string(to_string(m));
  for (auto s : seeds) seeds_text += (seeds_text.empty() ? "" : ",") + std::to_string(s);
  kv["methods"] = methods_text;
  kv["seeds"] = seeds_text;
  kv["distance"] = std::string(to_string(distance));
  const auto& sc = scenario;
  kv["scenario.num_classes"] = std::to_string(sc.num_classes);
  kv["scenario.per_class_gallery"] = std::to_string(sc.per_class_gallery);
  kv["scenario.num_queries"] = std::to_string(sc.num_queries);
  kv["scenario.per_class_train"] = std::to_string(sc.per_class_train);
  kv["scenario.d_old"] = std::to_string(sc.d_old);
  kv["scenario.d_new"] = std::to_string(sc.d_new);
  kv["scenario.sigma_old"] = real_text(sc.sigma_old);
  kv["scenario.sigma_new"] = real_text(sc.sigma_new);
  kv["scenario.cross_space_map"] = std::string(to_string(sc.cross_space_map));
  kv["scenario.seed"] = std::to_string(sc.seed);
  const auto& t = train;
  kv["train.epochs"] = std::to_string(t.epochs);
  kv["train.lr0"] = real_text(t.lr0);
  kv["train.batch_size"] = std::to_string(t.batch_size);
  kv["train.classes_per_batch"] = std::to_string(t.classes_per_batch);
  kv["train.adam_beta1"] = real_text(t.adam_beta1);
  kv["train.adam_beta2"] = real_text(t.adam_beta2);
  kv["train.adam_eps"] = real_text(t.adam_eps);
  kv["train.bn_momentum"] = real_text(t.bn_momentum);
  kv["train.bn_eps"] = real_text(t.bn_eps);
  kv["train.psi_blocks"] = std::to_string(t.psi_blocks);
  kv["train.rho_blocks"] = std::to_string(t.rho_blocks);
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::string ExperimentConfig::config_hash() const { return hex64(fnv1a64(canonical_text())); }

std::string ExperimentConfig::scenario_hash() const {
  std::string text;
  std::istringstream in(canonical_text());
  for (std::string line; std::getline(in, line);) {
    if ((line.starts_with("scenario.") && !line.starts_with("scenario.seed=")) || line.starts_with("seeds=") ||
        line.starts_with("distance=")) {
      text += line + "\n";
    }
  }
  return hex64(fnv1a64(text));
}

ExperimentConfig parse_experiment_config(std::string_view text) {
  const KeyValueConfig kv = KeyValueConfig::parse(text);
  static const std::vector<std::string> known = {
      "methods", "distance", "output_dir", "seeds",
      "scenario.num_classes", "scenario.per_class_gallery", "scenario.num_queries", "scenario.per_class_train",
      "scenario.d_old", "scenario.d_new", "scenario.sigma_old", "scenario.sigma_new",
      "scenario.cross_space_map", "scenario.seed",
      "train.epochs", "train.lr0", "train.batch_size", "train.classes_per_batch", "train.adam_beta1",
      "train.adam_beta2", "train.adam_eps", "train.bn_momentum", "train.bn_eps", "train.psi_blocks",
      "train.rho_blocks"};
  if (auto unknown = kv.unknown_keys(known); !unknown.empty()) {
    throw ConfigError("unknown config key '" + unknown.front() + "'");
  }

  ExperimentConfig c;
  if (kv.contains("methods")) {
    c.methods.clear();
    for (const auto& name : kv.get_list("methods")) c.methods.push_back(parse_method(name));
  }
  c.distance = parse_distance_kind(kv.get_string("distance", "cosine"));
  c.output_dir = kv.get_string("output_dir", "out");

  auto& s = c.scenario;
  s.num_classes = kv.get_uint("scenario.num_classes", s.num_classes);
  s.per_class_gallery = kv.get_uint("scenario.per_class_gallery", s.per_class_gallery);
  s.num_queries = kv.get_uint("scenario.num_queries", s.num_queries);
  s.per_class_train = kv.get_uint("scenario.per_class_train", s.per_class_train);
  s.d_old = kv.get_uint("scenario.d_old", s.d_old);
  s.d_new = kv.get_uint("scenario.d_new", s.d_new);
  s.sigma_old = kv.get_real("scenario.sigma_old", s.sigma_old);
  s.sigma_new = kv.get_real("scenario.sigma_new", s.sigma_new);
  s.cross_space_map = parse_cross_space_map(kv.get_string("scenario.cross_space_map", "rotation"));
  s.seed = kv.get_uint("scenario.seed", s.seed);
  s.validate();

  if (kv.contains("seeds")) {
    c.seeds.clear();
    for (const auto& v : kv.get_list("seeds")) c.seeds.push_back(parse_uint(v, "seeds"));
  } else {
    c.seeds = {s.seed};
  }

  auto& t = c.train;
  t.epochs = kv.get_uint("train.epochs", t.epochs);
  t.lr0 = kv.get_real("train.lr0", t.lr0);
  t.batch_size = kv.get_uint("train.batch_size", t.batch_size);
  t.classes_per_batch = kv.get_uint("train.classes_per_batch", t.classes_per_batch);
  t.adam_beta1 = kv.get_real("train.adam_beta1", t.adam_beta1);
  t.adam_beta2 = kv.get_real("train.adam_beta2", t.adam_beta2);
  t.adam_eps = kv.get_real("train.adam_eps", t.adam_eps);
  t.bn_momentum = kv.get_real("train.bn_momentum", t.bn_momentum);
  t.bn_eps = kv.get_real("train.bn_eps", t.bn_eps);
  t.psi_blocks = kv.get_uint("train.psi_blocks", t.psi_blocks);
  t.rho_blocks = kv.get_uint("train.rho_blocks", t.rho_blocks);
  t.validate();

  const bool any_trained = std::ranges::any_of(c.methods, is_trained);
  if (any_trained && !kv.has_section("train")) {
    throw ConfigError("trained methods require a [train] section");
  }
  if (c.methods.empty()) throw ConfigError("methods must not be empty");
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_experiment_config(buffer.str());
}

UpgradeScenario scenario_for_seed(const ExperimentConfig& config, std::uint64_t seed) {
  UpgradeScenario s = config.scenario;
  s.seed = seed;
  return s;
}

TrainConfig train_config_for_seed(const ExperimentConfig& config, std::uint64_t seed) {
  TrainConfig t = config.train;
  t.seed = seed;
  return t;
}

std::uint64_t partition_seed_for(std::uint64_t seed) { return derive_seed(seed, 100); }

fs::path seed_dir(const ExperimentConfig& config, std::uint64_t seed) {
  return config.output_dir / ("seed_" + std::to_string(seed));
}

fs::path method_dir(const ExperimentConfig& config, std::uint64_t seed, Method method) {
  return seed_dir(config, seed) / std::string(to_string(method));
}

CurveSetup build_curve_setup(Method method, QueryExtractor& extractor, const EmbeddingPairSet& gallery,
                             const Transforms& transforms) {
  const EmbeddingPairSet& queries = extractor.queries();
  const std::size_t nq = queries.size();
  if (method == Method::rm_naive) {
    std::vector<float> old_rows, new_rows;
    for (std::size_t i = 0; i < nq; ++i) {
      auto o = extractor.extract_old(i);
      auto n = extractor.extract_new(i);
      old_rows.insert(old_rows.end(), o.begin(), o.end());
      new_rows.insert(new_rows.end(), n.begin(), n.end());
    }
    return {rows_as_set(old_rows, queries.old_side(), queries.old_side().dim()),
            rows_as_set(new_rows, queries.new_side(), queries.new_side().dim()), gallery.old_side(),
            gallery.new_side()};
  }
  if (!transforms.psi) throw std::invalid_argument(std::string(to_string(method)) + " needs a trained psi");
  if (method == Method::rm_cmcl_rho && !transforms.rho) throw std::invalid_argument("rm_cmcl_rho needs a trained rho");
  std::vector<float> new_rows;
  for (std::size_t i = 0; i < nq; ++i) {
    auto n = extractor.extract_new(i);
    new_rows.insert(new_rows.end(), n.begin(), n.end());
  }
  LabeledEmbeddings fresh_queries = rows_as_set(new_rows, queries.new_side(), queries.new_side().dim());
  const MlpTransform* rho = transforms.rho ? &*transforms.rho : nullptr;
  if (rho) fresh_queries = rho->transform(fresh_queries);
  LabeledEmbeddings backward_queries = transforms.psi->transform(fresh_queries);
  LabeledEmbeddings fresh_gallery = rho ? rho->transform(gallery.new_side()) : gallery.new_side();
  return {std::move(backward_queries), std::move(fresh_queries), gallery.old_side(), std::move(fresh_gallery)};
}

MethodEvaluation evaluate_method(Method method, const EmbeddingPairSet& query, const EmbeddingPairSet& gallery,
                                 const Transforms& transforms, std::uint64_t partition_seed, DistanceKind kind,
                                 Execution exec) {
  MethodEvaluation ev;
  ev.method = method;
  ev.old_self_test = evaluate_system(query.old_side(), gallery.old_side(), kind, exec);
  ev.new_self_test = evaluate_system(query.new_side(), gallery.new_side(), kind, exec);
  QueryExtractor extractor(query);
  const CurveSetup setup = build_curve_setup(method, extractor, gallery, transforms);
  ev.num_queries = query.size();
  ev.old_extractions = extractor.old_extractions();
  ev.new_extractions = extractor.new_extractions();
  ev.backward_self_test = evaluate_system(setup.backward_queries, setup.old_gallery, kind, exec);
  ev.fresh_self_test = evaluate_system(setup.fresh_queries, setup.fresh_gallery, kind, exec);
  ev.curve = backfill_curve(setup, ev.old_self_test.per_query_top1, partition_seed, kind, exec);
  return ev;
}

void write_dataset(const UpgradeDataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  const std::pair<const EmbeddingPairSet*, const char*> parts[] = {
      {&data.train, "train"}, {&data.query, "query"}, {&data.gallery, "gallery"}};
  for (const auto& [set, name] : parts) {
    save(set->old_side(), dir / (std::string(name) + "_old.bmeb"));
    save(set->new_side(), dir / (std::string(name) + "_new.bmeb"));
  }
}

UpgradeDataset read_dataset(const fs::path& dir) {
  auto pair = [&](const char* name) {
    return EmbeddingPairSet(load(dir / (std::string(name) + "_old.bmeb")),
                            load(dir / (std::string(name) + "_new.bmeb")));
  };
  return {pair("train"), pair("query"), pair("gallery")};
}

void write_transforms(const Transforms& t, const fs::path& dir) {
  fs::create_directories(dir);
  if (t.psi) save_checkpoint(*t.psi, dir / "psi.bmck");
  if (t.rho) save_checkpoint(*t.rho, dir / "rho.bmck");
}

Transforms read_transforms(Method method, const fs::path& dir) {
  Transforms t;
  if (is_trained(method)) t.psi = load_checkpoint(dir / "psi.bmck");
  if (method == Method::rm_cmcl_rho) t.rho = load_checkpoint(dir / "rho.bmck");
  return t;
}

MethodSummary summarize(Method method, const std::vector<BackfillCurve>& per_seed) {
  MethodSummary s{.method = method, .num_seeds = per_seed.size()};
  if (per_seed.empty()) return s;
  std::vector<double> aucs_map, aucs_cmc;
  for (const auto& c : per_seed) {
    aucs_map.push_back(c.auc_map);
    aucs_cmc.push_back(c.auc_cmc);
    for (double f : c.neg_flip_at) s.max_neg_flip = std::max(s.max_neg_flip, f);
  }
  s.auc_map_mean = mean(aucs_map);
  s.auc_cmc_mean = mean(aucs_cmc);
  s.auc_map_std = sample_std(aucs_map, s.auc_map_mean);
  s.auc_cmc_std = sample_std(aucs_cmc, s.auc_cmc_mean);
  for (std::size_t k = 0; k < kNumSlices; ++k) {
    std::vector<double> m, c, f;
    for (const auto& curve : per_seed) {
      m.push_back(curve.map_at[k]);
      c.push_back(curve.cmc_at[k]);
      f.push_back(curve.neg_flip_at[k]);
    }
    s.mean_map_at[k] = mean(m);
    s.mean_cmc_at[k] = mean(c);
    s.mean_neg_flip_at[k] = mean(f);
  }
  return s;
}

std::string with_hash_comment(const std::string& config_hash, const std::string& body) {
  return "# config_hash=" + config_hash + "\n" + body;
}

std::string report_csv(const ExperimentConfig& config, const std::vector<MethodSummary>& summaries) {
  std::string out = "# config_hash=" + config.config_hash() + "\n# scenario_hash=" + config.scenario_hash() + "\n";
  out += "method,num_seeds,auc_map_mean,auc_map_std,auc_cmc_mean,auc_cmc_std,max_neg_flip\n";
  for (const auto& s : summaries) {
    out += csv_row({std::string(to_string(s.method)), std::to_string(s.num_seeds), real_text(s.auc_map_mean),
                    real_text(s.auc_map_std), real_text(s.auc_cmc_mean), real_text(s.auc_cmc_std),
                    real_text(s.max_neg_flip)});
  }
  return out;
}

std::string selftest_csv(const std::string& config_hash, const EvalReport& old_report, const EvalReport& new_report) {
  std::string body = "system,mAP,CMC1,num_queries_scored,num_queries_excluded\n";
  for (const auto& [name, r] : {std::pair{"old", &old_report}, std::pair{"new", &new_report}}) {
    body += csv_row({name, real_text(r->map_value), real_text(r->cmc_top1), std::to_string(r->num_queries_scored),
                     std::to_string(r->num_queries_excluded)});
  }
  return with_hash_comment(config_hash, body);
}

namespace {

std::string mean_curve_csv(const std::string& config_hash, const MethodSummary& s) {
  std::string body = "t,mAP,CMC1,neg_flip_rate\n";
  for (std::size_t k = 0; k < kNumSlices; ++k) {
    body += csv_row({real_text(slice_fraction(k)), real_text(s.mean_map_at[k]), real_text(s.mean_cmc_at[k]),
                     real_text(s.mean_neg_flip_at[k])});
  }
  return with_hash_comment(config_hash, body);
}

void run_seed(const ExperimentConfig& config, std::uint64_t seed, Execution exec, std::string& stage,
              std::vector<std::vector<MethodEvaluation>>& evaluations) {
  const std::string hash = config.config_hash();
  const std::string tag = "seed " + std::to_string(seed);
  stage = "gen (" + tag + ")";
  const UpgradeDataset data = generate(scenario_for_seed(config, seed));
  write_dataset(data, seed_dir(config, seed) / "data");

  stage = "selftest (" + tag + ")";
  const auto old_report = self_test(ModelSide::old_model, data.query, data.gallery, config.distance);
  const auto new_report = self_test(ModelSide::new_model, data.query, data.gallery, config.distance);
  io::write_file_atomic(seed_dir(config, seed) / "selftest.csv", selftest_csv(hash, old_report, new_report));

  for (std::size_t m = 0; m < config.methods.size(); ++m) {
    const Method method = config.methods[m];
    const fs::path dir = method_dir(config, seed, method);
    fs::create_directories(dir);
    Transforms transforms;
    if (is_trained(method)) {
      stage = "train " + std::string(to_string(method)) + " (" + tag + ")";
      FitResult fitted = fit(loss_kind_for(method), data.train, train_config_for_seed(config, seed), config.distance);
      io::write_file_atomic(dir / "train_log.csv", with_hash_comment(hash, training_log_csv(fitted.history)));
      transforms.psi = std::move(fitted.psi);
      transforms.rho = std::move(fitted.rho);
      write_transforms(transforms, dir);
    }
    stage = "eval-curve " + std::string(to_string(method)) + " (" + tag + ")";
    MethodEvaluation ev =
        evaluate_method(method, data.query, data.gallery, transforms, partition_seed_for(seed), config.distance, exec);
    io::write_file_atomic(dir / "curve.csv", with_hash_comment(hash, curve_csv(ev.curve)));
    io::write_file_atomic(dir / "report.csv", report_csv(config, {summarize(method, {ev.curve})}));
    evaluations[m].push_back(std::move(ev));
  }
}

}  // namespace

ExperimentReport run(const ExperimentConfig& config, Execution exec) {
  fs::create_directories(config.output_dir);
  const fs::path marker = config.output_dir / "INCOMPLETE";
  std::string stage = "start";
  io::write_file_atomic(marker, "stage: start\n");
  ExperimentReport report;
  report.evaluations.resize(config.methods.size());
  try {
    for (std::uint64_t seed : config.seeds) run_seed(config, seed, exec, stage, report.evaluations);
    stage = "summary";
    const std::string hash = config.config_hash();
    for (std::size_t m = 0; m < config.methods.size(); ++m) {
      std::vector<BackfillCurve> curves;
      for (const auto& ev : report.evaluations[m]) curves.push_back(ev.curve);
      report.summaries.push_back(summarize(config.methods[m], curves));
      io::write_file_atomic(config.output_dir / ("mean_curve_" + std::string(to_string(config.methods[m])) + ".csv"),
                            mean_curve_csv(hash, report.summaries.back()));
    }
    io::write_file_atomic(config.output_dir / "summary.csv", report_csv(config, report.summaries));
  } catch (const std::exception& e) {
    try {
      io::write_file_atomic(marker, "stage: " + stage + "\nerror: " + e.what() + "\n");
    } catch (...) {
    }
    in_stage(stage, [&]() -> int { throw; });
  }
  fs::remove(marker);
  return report;
}

std::string compare(const std::vector<fs::path>& reports) {
  if (reports.empty()) throw ConfigError("compare: no reports given");
  struct Row {
    std::string report, method;
    double auc_map, auc_cmc, max_flip;
  };
  std::vector<Row> rows;
  std::string scenario_hash;
  for (const auto& path : reports) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report " + path.string());
    std::string hash, line;
    bool header_seen = false;
    while (std::getline(in, line)) {
      if (line.starts_with("# scenario_hash=")) {
        hash = line.substr(16);
        continue;
      }
      if (line.starts_with("#") || line.empty()) continue;
      if (!header_seen) {
        if (!line.starts_with("method,num_seeds,auc_map_mean")) throw IoError(path.string() + ": not a report CSV");
        header_seen = true;
        continue;
      }
      const auto cells = split_csv_line(line);
      if (cells.size() != 7) throw IoError(path.string() + ": malformed report row");
      rows.push_back({path.string(), cells[0], parse_real(cells[2], "auc_map_mean"),
                      parse_real(cells[4], "auc_cmc_mean"), parse_real(cells[6], "max_neg_flip")});
    }
    if (hash.empty()) throw IoError(path.string() + ": missing scenario_hash line");
    if (scenario_hash.empty()) {
      scenario_hash = hash;
    } else if (hash != scenario_hash) {
      throw ConfigError("compare: scenario hash mismatch (" + scenario_hash + " vs " + hash + " in " +
                        path.string() + ")");
    }
  }
  if (rows.empty()) throw IoError("compare: reports contain no rows");
  std::string out = "# scenario_hash=" + scenario_hash + "\n";
  out += "report,method,auc_map_mean,auc_cmc_mean,max_neg_flip,delta_auc_map,delta_auc_cmc\n";
  for (const auto& r : rows) {
    out += csv_row({r.report, r.method, real_text(r.auc_map), real_text(r.auc_cmc), real_text(r.max_flip),
                    real_text(r.auc_map - rows.front().auc_map), real_text(r.auc_cmc - rows.front().auc_cmc)});
  }
  return out;
}

}  // namespace rankmerge
