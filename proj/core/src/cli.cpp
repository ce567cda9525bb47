#include "m2mrf/cli.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "m2mrf/errors.hpp"
#include "m2mrf/fusion_net.hpp"
#include "m2mrf/metrics.hpp"
#include "m2mrf/ops.hpp"
#include "m2mrf/synth_data.hpp"
#include "m2mrf/tensor_io.hpp"
#include "m2mrf/verify.hpp"

namespace m2mrf {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Worker-pool cap; defaults to 1 so runs stay bit-deterministic unless the
// user explicitly opts into parallel evaluation.
int64_t thread_cap() {
  const char* env = std::getenv("M2MRF_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long long v = std::strtoll(env, &end, 10);
  if (end == env || *end != '\0' || v < 1)
    throw ConfigError("M2MRF_THREADS must be a positive integer, got '" + std::string(env) + "'");
  return std::min<long long>(v, 64);
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path);
  try {
    json cfg = json::parse(f);
    if (!cfg.is_object()) throw FormatError(path + ": config root must be a JSON object");
    return cfg;
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

// Flags win over config-file keys, which win over defaults.
template <class T>
void fill(const CLI::App& sub, const json& cfg, const char* flag, const char* key, T& value) {
  if (sub.count(flag) > 0) return;
  if (!cfg.contains(key)) return;
  try {
    value = cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("config key '") + key + "': " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("short write to " + path.string());
}

// Every command serializes its fully resolved configuration into the output
// directory before producing anything else, so any run can be replayed from
// that one file.
void write_resolved_config(const std::string& out_dir, const json& resolved) {
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "run_config.json", resolved.dump(2) + "\n");
}

int usage_error(const std::string& msg) {
  std::cerr << "usage error: " << msg << "\n";
  return 2;
}

json net_config_json(const NetConfig& cfg) {
  return json{
      {"num_classes", cfg.num_classes},
      {"stem_channels", cfg.stem_channels},
      {"num_streams", cfg.num_streams},
      {"num_fusion_blocks", cfg.num_fusion_blocks},
      {"m2mrf",
       {{"S_h", cfg.m2mrf.patch_h},
        {"S_w", cfg.m2mrf.patch_w},
        {"r", cfg.m2mrf.reduction},
        {"alpha", cfg.m2mrf.bottleneck}}},
  };
}

// Optional "net" object in a train config file overrides architecture knobs.
void fill_net_config(const json& cfg, NetConfig& net_cfg) {
  if (!cfg.contains("net")) return;
  try {
    const json& n = cfg.at("net");
    if (n.contains("num_classes")) net_cfg.num_classes = n.at("num_classes").get<int64_t>();
    if (n.contains("stem_channels")) net_cfg.stem_channels = n.at("stem_channels").get<int64_t>();
    if (n.contains("num_streams")) net_cfg.num_streams = n.at("num_streams").get<int64_t>();
    if (n.contains("num_fusion_blocks"))
      net_cfg.num_fusion_blocks = n.at("num_fusion_blocks").get<int64_t>();
    if (n.contains("m2mrf")) {
      const json& m = n.at("m2mrf");
      if (m.contains("S_h")) net_cfg.m2mrf.patch_h = m.at("S_h").get<int64_t>();
      if (m.contains("S_w")) net_cfg.m2mrf.patch_w = m.at("S_w").get<int64_t>();
      if (m.contains("r")) net_cfg.m2mrf.reduction = m.at("r").get<int64_t>();
      if (m.contains("alpha")) net_cfg.m2mrf.bottleneck = m.at("alpha").get<int64_t>();
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("config key 'net': ") + e.what());
  }
}

int cmd_gen(const CLI::App& sub, std::string config_path, int64_t n, int64_t size, uint64_t seed,
            std::string out) {
  const json cfg = load_config_file(config_path);
  fill(sub, cfg, "--n", "n", n);
  fill(sub, cfg, "--size", "size", size);
  fill(sub, cfg, "--seed", "seed", seed);
  fill(sub, cfg, "--out", "out_dir", out);
  if (out.empty()) return usage_error("gen needs --out (or out_dir in the config file)");

  const json resolved{{"command", "gen"}, {"n", n},          {"size", size},
                      {"seed", seed},     {"out_dir", out}};
  write_resolved_config(out, resolved);

  Dataset ds = make_dataset(n, size, size, default_lesion_specs(), seed);
  save_dataset(ds, out);
  std::cout << "wrote " << ds.samples.size() << " samples (" << size << "x" << size << ", seed "
            << seed << ") to " << out << "\n";
  return 0;
}

int cmd_train(const CLI::App& sub, std::string config_path, std::string data,
              std::string variant, int64_t iters, int64_t batch, double lr, uint64_t seed,
              std::string out) {
  const json cfg = load_config_file(config_path);
  fill(sub, cfg, "--data", "data", data);
  fill(sub, cfg, "--variant", "variant", variant);
  fill(sub, cfg, "--iters", "iters", iters);
  fill(sub, cfg, "--batch", "batch", batch);
  fill(sub, cfg, "--lr", "lr", lr);
  fill(sub, cfg, "--seed", "seed", seed);
  fill(sub, cfg, "--out", "out_dir", out);
  if (data.empty()) return usage_error("train needs --data (or data in the config file)");
  if (out.empty()) return usage_error("train needs --out (or out_dir in the config file)");

  NetConfig net_cfg;
  net_cfg.variant = variant_from_str(variant);
  fill_net_config(cfg, net_cfg);
  net_cfg.validate();

  json resolved{{"command", "train"}, {"data", data},   {"variant", variant}, {"iters", iters},
                {"batch", batch},     {"lr", lr},       {"seed", seed},       {"out_dir", out},
                {"net", net_config_json(net_cfg)}};
  write_resolved_config(out, resolved);

  Dataset ds = load_dataset(data);
  MiniFusionNet net(net_cfg, seed);

  TrainOptions opt;
  opt.iters = iters;
  opt.batch = batch;
  opt.base_lr = lr;
  // The data-order/augmentation stream is split off the run seed so it is
  // independent of the weight-init draws.
  const uint64_t train_seed = seed + 0x9e3779b97f4a7c15ull;
  const std::vector<TrainRecord> history = train(net, ds.samples, opt, train_seed);

  net.save((fs::path(out) / "checkpoint").string());
  std::string csv = "iter,lr,loss\n";
  char row[128];
  for (const TrainRecord& r : history) {
    std::snprintf(row, sizeof(row), "%lld,%.17g,%.17g\n", static_cast<long long>(r.iter), r.lr,
                  r.loss);
    csv += row;
  }
  write_text(fs::path(out) / "history.csv", csv);

  if (history.empty()) {
    std::cout << "trained 0 iterations; checkpoint equals initialization\n";
  } else {
    std::cout << "trained " << history.size() << " iterations: loss " << history.front().loss
              << " -> " << history.back().loss << "\n";
  }
  std::cout << "checkpoint at " << (fs::path(out) / "checkpoint").string() << "\n";
  return 0;
}

int cmd_eval(const CLI::App& sub, std::string config_path, std::string checkpoint,
             std::string dataset, std::string out) {
  const json cfg = load_config_file(config_path);
  fill(sub, cfg, "--checkpoint", "checkpoint", checkpoint);
  fill(sub, cfg, "--dataset", "dataset", dataset);
  fill(sub, cfg, "--out", "out_dir", out);
  if (checkpoint.empty())
    return usage_error("eval needs --checkpoint (or checkpoint in the config file)");
  if (dataset.empty()) return usage_error("eval needs --dataset (or dataset in the config file)");
  if (out.empty()) return usage_error("eval needs --out (or out_dir in the config file)");

  const json resolved{{"command", "eval"},
                      {"checkpoint", checkpoint},
                      {"dataset", dataset},
                      {"seed", 0},  // eval is deterministic; kept for schema uniformity
                      {"out_dir", out}};
  write_resolved_config(out, resolved);

  const MiniFusionNet net = MiniFusionNet::load(checkpoint);
  const Dataset ds = load_dataset(dataset);
  const size_t n = ds.samples.size();

  // Per-image prediction fans out to the worker pool; every image's result
  // is independent of the thread count, and the reduction below runs in
  // index order, so the report is identical for any M2MRF_THREADS.
  std::vector<Tensor> preds(n);
  const int64_t workers = std::min<int64_t>(thread_cap(), static_cast<int64_t>(n));
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) preds[i] = net.predict(ds.samples[i].image);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int64_t t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1))
          preds[i] = net.predict(ds.samples[i].image);
      });
    }
    for (std::thread& th : pool) th.join();
  }

  std::vector<Tensor> gts;
  gts.reserve(n);
  for (const Sample& s : ds.samples) gts.push_back(s.masks);

  const MetricsReport report = evaluate(preds, gts, lesion_class_names());
  write_text(fs::path(out) / "metrics.csv", report.to_csv());
  write_text(fs::path(out) / "metrics.json", report.to_json());

  for (size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%03zu", i);
    const fs::path dir = fs::path(out) / "predictions" / name;
    fs::create_directories(dir);
    for (size_t k = 0; k < report.classes.size(); ++k)
      io::write_pgm((dir / ("pred_" + report.classes[k] + ".pgm")).string(),
                    ops::channel(preds[i], static_cast<int64_t>(k)));
  }

  std::cout << report.to_csv();
  if (!report.excluded.empty()) {
    std::cout << "# excluded from means (no ground-truth positives):";
    for (const std::string& c : report.excluded) std::cout << " " << c;
    std::cout << "\n";
  }
  return 0;
}

int cmd_verify(const std::string& suite) {
  std::vector<std::pair<std::string, std::vector<CheckResult> (*)()>> suites;
  if (suite == "gradcheck" || suite == "all") suites.emplace_back("gradcheck", &verify_gradcheck);
  if (suite == "oracle" || suite == "all") suites.emplace_back("oracle", &verify_oracle);
  if (suite == "params" || suite == "all") suites.emplace_back("params", &verify_params);
  if (suite == "shapes" || suite == "all") suites.emplace_back("shapes", &verify_shapes);

  size_t total = 0;
  size_t passed = 0;
  for (const auto& [name, fn] : suites) {
    const std::vector<CheckResult> results = fn();
    for (const CheckResult& r : results) {
      ++total;
      passed += r.passed ? 1 : 0;
      std::cout << (r.passed ? "PASS  " : "FAIL  ") << r.name << "  (" << r.detail << ")\n";
    }
  }
  std::cout << passed << "/" << total << " checks passed\n";
  return passed == total ? 0 : 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"toy lesion-segmentation workbench built around many-to-many feature reassembly"};
  app.require_subcommand(1);

  // gen
  std::string gen_config, gen_out;
  int64_t gen_n = 8, gen_size = 64;
  uint64_t gen_seed = 0;
  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic fundus-like dataset");
  gen->add_option("--config", gen_config, "JSON config file (flags override it)");
  gen->add_option("--n", gen_n, "number of samples");
  gen->add_option("--size", gen_size, "image height and width (multiple of 4, >= 16)");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--out", gen_out, "output directory");

  // train
  std::string tr_config, tr_data, tr_variant = "A", tr_out;
  int64_t tr_iters = 200, tr_batch = 4;
  double tr_lr = 0.01;
  uint64_t tr_seed = 0;
  CLI::App* tr = app.add_subcommand("train", "train the fusion net on a generated dataset");
  tr->add_option("--config", tr_config, "JSON config file (flags override it)");
  tr->add_option("--data", tr_data, "dataset directory (from gen)");
  tr->add_option("--variant", tr_variant, "fusion operator variant")
      ->check(CLI::IsMember({"A", "B", "C", "D", "baseline-sc-bl", "baseline-mp"}));
  tr->add_option("--iters", tr_iters, "training iterations");
  tr->add_option("--batch", tr_batch, "batch size");
  tr->add_option("--lr", tr_lr, "base learning rate for the poly schedule");
  tr->add_option("--seed", tr_seed, "weight-init / data-order seed");
  tr->add_option("--out", tr_out, "output directory");

  // eval
  std::string ev_config, ev_checkpoint, ev_dataset, ev_out;
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--config", ev_config, "JSON config file (flags override it)");
  ev->add_option("--checkpoint", ev_checkpoint, "checkpoint directory (from train)");
  ev->add_option("--dataset", ev_dataset, "dataset directory (from gen)");
  ev->add_option("--out", ev_out, "output directory");

  // verify
  std::string vf_suite;
  CLI::App* vf = app.add_subcommand("verify", "run the property suites");
  vf->add_option("suite", vf_suite, "which suite to run")
      ->required()
      ->check(CLI::IsMember({"gradcheck", "oracle", "params", "shapes", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(*gen, gen_config, gen_n, gen_size, gen_seed, gen_out);
    if (tr->parsed())
      return cmd_train(*tr, tr_config, tr_data, tr_variant, tr_iters, tr_batch, tr_lr, tr_seed,
                       tr_out);
    if (ev->parsed()) return cmd_eval(*ev, ev_config, ev_checkpoint, ev_dataset, ev_out);
    if (vf->parsed()) return cmd_verify(vf_suite);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace m2mrf
