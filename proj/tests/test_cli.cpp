#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "m2mrf/cli.hpp"
#include "m2mrf/fusion_net.hpp"
#include "m2mrf/synth_data.hpp"
#include "m2mrf/tensor_io.hpp"
#include "test_util.hpp"

using namespace m2mrf;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* leaf) {
  auto dir = fs::temp_directory_path() / "m2mrf-cli-tests" / leaf;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("m2mrf");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::vector<uint8_t> read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

std::string read_text(const fs::path& p) {
  auto b = read_bytes(p);
  return std::string(b.begin(), b.end());
}

size_t count_sample_dirs(const fs::path& dir) {
  size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && e.path().filename().string().rfind("sample_", 0) == 0) ++n;
  return n;
}

struct EnvVar {
  const char* name;
  EnvVar(const char* n, const char* value) : name(n) { setenv(n, value, 1); }
  ~EnvVar() { unsetenv(name); }
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit with 2") {
    CHECK(run({"gen"}) == 2);                                  // no --out
    CHECK(run({"train", "--out", "/tmp/x"}) == 2);             // no --data
    CHECK(run({"eval", "--out", "/tmp/x"}) == 2);              // no --checkpoint
    CHECK(run({}) == 2);                                       // no subcommand
    CHECK(run({"frobnicate"}) == 2);                           // unknown subcommand
    CHECK(run({"train", "--variant", "E"}) == 2);              // variant not in the set
    CHECK(run({"verify"}) == 2);                               // suite argument required
    CHECK(run({"verify", "everything"}) == 2);                 // unknown suite
  }

  TEST_CASE("gen writes a replayable run config and a loadable dataset") {
    auto out = fresh_dir("gen");
    CHECK(run({"gen", "--n", "2", "--size", "16", "--seed", "3", "--out", out.string()}) == 0);

    auto cfg = nlohmann::json::parse(read_text(out / "run_config.json"));
    CHECK(cfg.at("command") == "gen");
    CHECK(cfg.at("n") == 2);
    CHECK(cfg.at("size") == 16);
    CHECK(cfg.at("seed") == 3);

    CHECK(fs::exists(out / "manifest.json"));
    CHECK(count_sample_dirs(out) == 2);
    for (const char* f : {"image.m2mt", "masks.m2mt", "sample.json", "image.ppm", "mask_EX.pgm",
                          "mask_HE.pgm", "mask_SE.pgm", "mask_MA.pgm"})
      CHECK(fs::exists(out / "sample_000" / f));

    Dataset ds = load_dataset(out.string());
    CHECK(ds.samples.size() == 2);
    CHECK(ds.H == 16);
    CHECK(ds.seed == 3);
  }

  TEST_CASE("gen reruns are byte-identical; the seed matters") {
    auto a = fresh_dir("gen-a"), b = fresh_dir("gen-b"), c = fresh_dir("gen-c");
    CHECK(run({"gen", "--n", "2", "--size", "16", "--seed", "7", "--out", a.string()}) == 0);
    CHECK(run({"gen", "--n", "2", "--size", "16", "--seed", "7", "--out", b.string()}) == 0);
    CHECK(run({"gen", "--n", "2", "--size", "16", "--seed", "8", "--out", c.string()}) == 0);

    for (const char* f :
         {"manifest.json", "sample_000/image.m2mt", "sample_000/masks.m2mt", "sample_000/image.ppm",
          "sample_001/image.m2mt"})
      CHECK(read_bytes(a / f) == read_bytes(b / f));
    CHECK(read_bytes(a / "sample_000/image.m2mt") != read_bytes(c / "sample_000/image.m2mt"));
  }

  TEST_CASE("config file fills values and flags override it") {
    auto out = fresh_dir("gen-cfg");
    auto out2 = fresh_dir("gen-cfg-override");
    const fs::path cfg_path = fresh_dir("gen-cfg-file") / "cfg.json";
    {
      std::ofstream f(cfg_path);
      f << nlohmann::json{{"n", 3}, {"size", 16}, {"seed", 5}, {"out_dir", out.string()}}.dump();
    }
    CHECK(run({"gen", "--config", cfg_path.string()}) == 0);
    CHECK(count_sample_dirs(out) == 3);

    CHECK(run({"gen", "--config", cfg_path.string(), "--n", "1", "--out", out2.string()}) == 0);
    CHECK(count_sample_dirs(out2) == 1);
    auto resolved = nlohmann::json::parse(read_text(out2 / "run_config.json"));
    CHECK(resolved.at("n") == 1);     // flag beat the file
    CHECK(resolved.at("seed") == 5);  // file beat the default
  }

  TEST_CASE("broken config file fails cleanly") {
    const fs::path cfg_path = fresh_dir("bad-cfg") / "cfg.json";
    {
      std::ofstream f(cfg_path);
      f << "{ not json";
    }
    CHECK(run({"gen", "--config", cfg_path.string(), "--out", "/tmp/never"}) == 1);
    CHECK(run({"gen", "--config", "/no/such/file.json", "--out", "/tmp/never"}) == 1);
  }

  TEST_CASE("train with zero iterations checkpoints the untouched initialization") {
    auto data = fresh_dir("train0-data");
    auto out = fresh_dir("train0-out");
    REQUIRE(run({"gen", "--n", "2", "--size", "16", "--seed", "2", "--out", data.string()}) == 0);
    CHECK(run({"train", "--data", data.string(), "--variant", "A", "--iters", "0", "--seed", "9",
               "--out", out.string()}) == 0);

    CHECK(read_text(out / "history.csv") == "iter,lr,loss\n");

    MiniFusionNet loaded = MiniFusionNet::load((out / "checkpoint").string());
    NetConfig cfg;  // defaults; variant A is the default too
    MiniFusionNet fresh(cfg, 9);
    auto pl = loaded.parameters(), pf = fresh.parameters();
    REQUIRE(pl.size() == pf.size());
    for (size_t i = 0; i < pl.size(); ++i)
      CHECK(test_util::bits_equal(pl[i]->value, pf[i]->value));
  }

  TEST_CASE("train reruns are byte-identical and the history is well-formed") {
    auto data = fresh_dir("train-data");
    auto o1 = fresh_dir("train-o1"), o2 = fresh_dir("train-o2");
    REQUIRE(run({"gen", "--n", "4", "--size", "16", "--seed", "2", "--out", data.string()}) == 0);
    std::vector<std::string> t{"train", "--data", data.string(), "--variant", "A",
                               "--iters", "3",  "--batch", "2", "--seed", "5", "--out"};
    auto t1 = t, t2 = t;
    t1.push_back(o1.string());
    t2.push_back(o2.string());
    CHECK(run(t1) == 0);
    CHECK(run(t2) == 0);

    const std::string hist = read_text(o1 / "history.csv");
    CHECK(hist.rfind("iter,lr,loss\n", 0) == 0);
    CHECK(std::count(hist.begin(), hist.end(), '\n') == 4);  // header + 3 iterations
    CHECK(hist.find("\n0,") != std::string::npos);
    CHECK(read_bytes(o1 / "history.csv") == read_bytes(o2 / "history.csv"));
    for (const char* f : {"checkpoint/net.json", "checkpoint/stem.m2mt", "checkpoint/head.m2mt"})
      CHECK(read_bytes(o1 / f) == read_bytes(o2 / f));
  }

  TEST_CASE("eval against its own thresholded predictions scores perfectly") {
    auto data = fresh_dir("eval-data");
    auto ckpt = fresh_dir("eval-ckpt");
    auto out = fresh_dir("eval-out");

    NetConfig cfg;
    MiniFusionNet net(cfg, 3);
    Dataset ds = make_dataset(3, 24, 24, default_lesion_specs(), 11);
    for (Sample& s : ds.samples) {
      const Tensor p = net.predict(s.image);
      Tensor m = Tensor::zeros(p.shape());
      for (int64_t i = 0; i < p.numel(); ++i) m[i] = p[i] >= 0.5 ? 1.0 : 0.0;
      s.masks = m;
    }
    save_dataset(ds, data.string());
    net.save(ckpt.string());

    CHECK(run({"eval", "--checkpoint", ckpt.string(), "--dataset", data.string(), "--out",
               out.string()}) == 0);

    auto j = nlohmann::json::parse(read_text(out / "metrics.json"));
    std::vector<std::string> excluded = j.at("excluded").get<std::vector<std::string>>();
    size_t included = 0;
    for (const std::string& name : lesion_class_names()) {
      if (std::find(excluded.begin(), excluded.end(), name) != excluded.end()) continue;
      ++included;
      const auto& cm = j.at("per_class").at(name);
      CHECK(cm.at("aupr").get<double>() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(cm.at("f").get<double>() == 1.0);
      CHECK(cm.at("iou").get<double>() == 1.0);
    }
    CHECK(included > 0);  // the oracle construction must leave something to score

    const std::string csv = read_text(out / "metrics.csv");
    CHECK(csv.rfind("class,AUPR,F,IoU\n", 0) == 0);
    CHECK(fs::exists(out / "predictions" / "sample_000" / "pred_EX.pgm"));
    CHECK(fs::exists(out / "predictions" / "sample_002" / "pred_MA.pgm"));
  }

  TEST_CASE("eval report is invariant to the worker-pool size") {
    auto data = fresh_dir("pool-data");
    auto ckpt = fresh_dir("pool-ckpt");
    auto o1 = fresh_dir("pool-o1"), o2 = fresh_dir("pool-o2");

    NetConfig cfg;
    MiniFusionNet net(cfg, 4);
    net.save(ckpt.string());
    save_dataset(make_dataset(3, 16, 16, default_lesion_specs(), 6), data.string());

    CHECK(run({"eval", "--checkpoint", ckpt.string(), "--dataset", data.string(), "--out",
               o1.string()}) == 0);
    {
      EnvVar threads("M2MRF_THREADS", "3");
      CHECK(run({"eval", "--checkpoint", ckpt.string(), "--dataset", data.string(), "--out",
                 o2.string()}) == 0);
    }
    CHECK(read_bytes(o1 / "metrics.csv") == read_bytes(o2 / "metrics.csv"));
    CHECK(read_bytes(o1 / "metrics.json") == read_bytes(o2 / "metrics.json"));
  }

  TEST_CASE("eval fails cleanly when checkpoint and dataset disagree") {
    auto data = fresh_dir("mismatch-data");
    auto ckpt = fresh_dir("mismatch-ckpt");
    auto out = fresh_dir("mismatch-out");

    NetConfig cfg;
    cfg.num_streams = 4;  // alignment 8; 20x20 images are not divisible by it
    MiniFusionNet net(cfg, 1);
    net.save(ckpt.string());
    save_dataset(make_dataset(1, 20, 20, default_lesion_specs(), 1), data.string());

    CHECK(run({"eval", "--checkpoint", ckpt.string(), "--dataset", data.string(), "--out",
               out.string()}) == 1);
    CHECK(run({"eval", "--checkpoint", (ckpt / "missing").string(), "--dataset", data.string(),
               "--out", out.string()}) == 1);
  }

  TEST_CASE("verify subcommand runs green") {
    CHECK(run({"verify", "params"}) == 0);
    CHECK(run({"verify", "oracle"}) == 0);
  }
}
