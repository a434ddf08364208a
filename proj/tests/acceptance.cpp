// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lgcn/checkpoint.hpp"
#include "lgcn/cnn.hpp"
#include "lgcn/dfm.hpp"
#include "lgcn/fsa.hpp"
#include "lgcn/gradcheck_suite.hpp"
#include "lgcn/heatmap.hpp"
#include "lgcn/ops.hpp"
#include "lgcn/spectral.hpp"
#include "lgcn/synth.hpp"
#include "lgcn/trainer.hpp"
#include "lgcn/vit.hpp"
#include "support/retrieval_oracle.hpp"

using namespace lgcn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1 ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = run_gradcheck_suite("all");
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string failed;
  for (const auto& r : reports) {
    worst = std::max(worst, r.max_rel_error);
    if (!r.pass || !(r.max_rel_error <= 1e-4)) failed += " " + r.op;
  }
  std::set<std::string> names;
  for (const auto& c : gradcheck_cases()) names.insert(c.name);
  std::string missing;
  for (const char* n : {"vit_block_fsa", "align_upsample", "dfm_cross-stream", "descriptor_head", "end_to_end"})
    if (!names.count(n)) missing += std::string(" ") + n;
  const bool ok = failed.empty() && missing.empty() && secs <= 300.0;
  return {ok, fmt("%zu checks, worst rel err %.2e, %.1fs%s%s", reports.size(), worst, secs,
                  failed.empty() ? "" : (", failed:" + failed).c_str(),
                  missing.empty() ? "" : (", missing:" + missing).c_str())};
}

// 2 ---------------------------------------------------------------------------

Outcome spectral_invariants() {
  Rng rng(2024);
  double round_trip = 0, parseval = 0, identity = 0;
  for (int i = 0; i < 100; ++i) {
    const Tensor x = randn({8, 8, 4}, 1.0, rng);
    const ComplexGrid X = spectral::dft2d(x);
    round_trip = std::max(round_trip, max_abs_diff(spectral::idft2d(X), x));
    for (std::size_t c = 0; c < 4; ++c) {
      double e_space = 0, e_freq = 0;
      for (std::size_t p = 0; p < 64; ++p) {
        e_space += x[p * 4 + c] * x[p * 4 + c];
        e_freq += X.re[p * 4 + c] * X.re[p * 4 + c] + X.im[p * 4 + c] * X.im[p * 4 + c];
      }
      parseval = std::max(parseval, std::abs(e_freq / 64.0 - e_space) / e_space);
    }
    identity = std::max(identity, max_abs_diff(frequency_branch(x, Tensor({8, 8, 4}, 1.0), nullptr), x));
  }
  const bool ok = round_trip <= 1e-9 && parseval <= 1e-9 && identity <= 1e-9;
  return {ok, fmt("100 inputs 8x8x4: round-trip %.1e, Parseval rel %.1e, unit-gain branch %.1e", round_trip, parseval,
                  identity)};
}

// 3 ---------------------------------------------------------------------------

Outcome dfm_algebra() {
  Rng rng(3);
  ModelConfig cfg = ModelConfig::toy();
  DfmParams p = DfmParams::init(cfg, rng);
  p.w1.value = randn(p.w1.value.shape(), 0.5, rng);
  p.w2.value = randn(p.w2.value.shape(), 0.5, rng);
  p.b1.value = randn(p.b1.value.shape(), 0.5, rng);
  p.b2.value = randn(p.b2.value.shape(), 0.5, rng);
  const Tensor vit = randn({8, 8, cfg.embed_dim}, 1.0, rng), res = randn({8, 8, cfg.embed_dim}, 1.0, rng);

  DfmCache cache;
  dfm_forward(vit, res, p, DfmMode::kCrossStream, &cache);
  double complement = 0;
  for (double w : cache.gate.omega.data()) complement = std::max(complement, std::abs(w + (1.0 - w) - 1.0));
  // with both streams equal the gated mix must give the stream back
  const Tensor mixed = dfm_forward(vit, vit, p, DfmMode::kCrossStream, nullptr);
  double mix = 0;
  for (std::size_t i = 0; i < vit.size(); ++i) mix = std::max(mix, std::abs(mixed[i] - vit[i]) / std::max(1.0, std::abs(vit[i])));

  const double vit_only = max_abs_diff(dfm_forward(vit, res, p, DfmMode::kVitOnly, nullptr), vit);

  const Tensor a = dfm_forward(vit, res, p, DfmMode::kCrossStream, nullptr);
  Tensor res2 = res;
  res2.at(3, 4, 5) += 0.5;
  const Tensor b = dfm_forward(vit, res2, p, DfmMode::kCrossStream, nullptr);
  const auto sha = [](const Tensor& t) {
    return sha256_hex(std::string(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double)));
  };
  const bool sensitive = sha(a) != sha(b);
  const bool ok = complement <= 1e-15 && mix <= 1e-15 && vit_only <= 1e-12 && sensitive;
  return {ok, fmt("omega+(1-omega)-1 %.1e, equal-stream mix %.1e, vit-only vs F_ViT %.1e, cross-stream %s", complement,
                  mix, vit_only, sensitive ? "checksum changes with F'_Res" : "IGNORES F'_Res")};
}

// 4 ---------------------------------------------------------------------------

Outcome shape_parity() {
  const ModelConfig cfg = ModelConfig::paper();
  Rng rng(4);
  const Tensor image = randu({cfg.image_size, cfg.image_size, 3}, 0.0, 1.0, rng);
  const VitParams vit = VitParams::init(cfg, rng);
  std::vector<FsaParams> adapters;
  for (std::size_t i = 0; i < cfg.depth; ++i) adapters.push_back(FsaParams::init(cfg, rng));
  const Tensor f_vit = vit_forward(image, vit, &adapters, cfg, nullptr);
  const CnnParams cnn = CnnParams::init(cfg, rng);
  const Tensor f_res = cnn_forward(image, cnn, cfg, nullptr);
  AlignCache align;
  const Tensor aligned = align_upsample(f_res, cnn, cfg, &align);
  const DfmParams dfm = DfmParams::init(cfg, rng);
  const Tensor fused = dfm_forward(f_vit, aligned, dfm, DfmMode::kCrossStream, nullptr);

  std::vector<std::pair<std::string, bool>> checks{
      {"F_ViT 16x16x768", f_vit.shape() == Shape{16, 16, 768}},
      {"F_Res 7x7x1024", f_res.shape() == Shape{7, 7, 1024}},
      {"resize 14x14", align.resized.shape() == Shape{14, 14, 1024}},
      {"conv 14x14x768", align.conv.shape() == Shape{14, 14, 768}},
      {"F'_Res 16x16x768", aligned.shape() == Shape{16, 16, 768}},
      {"w1 768x192", dfm.w1.value.shape() == Shape{768, 192}},
      {"w2 192x768", dfm.w2.value.shape() == Shape{192, 768}},
      {"fused 16x16x768", fused.shape() == Shape{16, 16, 768}}};
  std::string bad;
  for (const auto& [name, ok] : checks)
    if (!ok) bad += " " + name;
  return {bad.empty(), bad.empty() ? "F_ViT 16x16x768, F_Res 7x7x1024 -> 14x14 -> 16x16x768, w1 768x192, w2 192x768"
                                   : "mismatch:" + bad};
}

// 5 ---------------------------------------------------------------------------

Outcome retrieval_oracle() {
  const std::vector<std::size_t> ns{1, 2, 5, 10};
  std::size_t compared = 0, mismatched = 0, non_monotone = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto in = oracle::random_instance(5000 + seed, 100);
    if (in.query_rows.empty()) continue;
    ++compared;
    const std::size_t k = std::min<std::size_t>(10, in.db_rows.size());
    const auto got = recall_at_n(search(in.queries, in.database, k, in.db_ids), in.manifest, in.query_rows, in.db_rows, ns);
    const auto want = oracle::recall(in, ns, kMatchRadiusMeters);
    if (got.recall != want.recall || got.evaluated != want.evaluated) ++mismatched;
    for (std::size_t i = 1; i < ns.size(); ++i)
      if (got.recall[i] < got.recall[i - 1]) {
        ++non_monotone;
        break;
      }
  }
  return {compared == 200 && mismatched == 0 && non_monotone == 0,
          fmt("%zu instances, %zu mismatches vs double loop, %zu non-monotone", compared, mismatched, non_monotone)};
}

// 6, 8 ------------------------------------------------------------------------

struct ToyRun {
  TrainReport report;
  std::string backbone_before, backbone_after, adapters_before, adapters_after;
};

std::string adapter_checksum(const LgcnModel& m) {
  return sha256_hex(serialize_params(m, [](const std::string& n) { return n.rfind("fsa.", 0) == 0; }));
}

ToyRun toy_run() {
  const World w = generate_world(1, 200, 6, ModelConfig::toy().image_size);
  LgcnModel model(ModelConfig::toy(), {}, 0);
  TrainConfig cfg;
  cfg.epochs = 5;
  ToyRun r;
  r.backbone_before = parameter_checksum(model, true);
  r.adapters_before = adapter_checksum(model);
  TrainOptions o;
  o.on_epoch = [](const EpochReport& e) {
    std::printf("  toy run epoch %zu: R@1 %.3f (%.0fs)\n", e.epoch, e.recall1, e.seconds);
    std::fflush(stdout);
  };
  r.report = train(model, w.manifest, w.images, cfg, o);
  r.backbone_after = parameter_checksum(model, true);
  r.adapters_after = adapter_checksum(model);
  return r;
}

Outcome learning_signal(const ToyRun& r) {
  const double before = r.report.initial_recall1(), after = r.report.final_recall1();
  const bool ok = after >= 0.60 && after - before >= 0.25 && before > 1.0 / 200.0;
  return {ok, fmt("200 places x 6 views, 5 epochs: R@1 %.3f -> %.3f (+%.3f), chance %.3f", before, after, after - before,
                  1.0 / 200.0)};
}

Outcome freezing(const ToyRun& r) {
  bool per_epoch = true;
  for (const auto& e : r.report.epochs) per_epoch &= e.backbone_checksum == r.backbone_before;
  const bool ok = r.backbone_before == r.backbone_after && per_epoch && r.adapters_before != r.adapters_after;
  return {ok, fmt("backbone sha256 %s before/after (%s), adapters %s", r.backbone_before.substr(0, 16).c_str(),
                  r.backbone_before == r.backbone_after && per_epoch ? "unchanged every epoch" : "CHANGED",
                  r.adapters_before != r.adapters_after ? "changed" : "UNCHANGED")};
}

// 7 ---------------------------------------------------------------------------

constexpr std::size_t kAblationPlaces = 200;
constexpr std::size_t kAblationEpochs = 5;

Outcome ablation_ordering() {
  struct Variant {
    const char* name;
    AblationFlags flags;
  };
  std::vector<Variant> variants(5);
  variants[0] = {"Baseline", {}};
  variants[0].flags.disable_fsa = variants[0].flags.disable_cnn_stream = true;
  variants[1] = {"+FSA", {}};
  variants[1].flags.disable_cnn_stream = true;
  variants[2] = {"+CNN", {}};
  variants[2].flags.disable_fsa = variants[2].flags.disable_dfm = true;
  variants[3] = {"+DFM", {}};
  variants[3].flags.disable_fsa = true;
  variants[4] = {"Full", {}};

  std::vector<std::vector<double>> r1(variants.size());
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const World w = generate_world(100 + seed, kAblationPlaces, 6, ModelConfig::toy().image_size);
    for (std::size_t v = 0; v < variants.size(); ++v) {
      LgcnModel model(ModelConfig::toy(), variants[v].flags, seed);
      TrainConfig cfg;
      cfg.seed = seed;
      cfg.epochs = kAblationEpochs;
      const auto t0 = std::chrono::steady_clock::now();
      r1[v].push_back(train(model, w.manifest, w.images, cfg).final_recall1());
      std::printf("  ablation seed %llu %-8s R@1 %.3f (%.0fs)\n", static_cast<unsigned long long>(seed), variants[v].name,
                  r1[v].back(), seconds_since(t0));
      std::fflush(stdout);
    }
  }
  std::vector<double> med;
  for (auto& v : r1) {
    std::sort(v.begin(), v.end());
    med.push_back(v[1]);
  }
  const double base = med[0], fsa = med[1], cnn = med[2], dfm = med[3], full = med[4];
  const bool ok = full >= dfm && full >= fsa && full >= cnn && cnn >= base;
  return {ok, fmt("%zu places x 6 views, %zu epochs, median R@1 Baseline %.3f, +FSA %.3f, +CNN %.3f, +DFM %.3f, Full %.3f", kAblationPlaces, kAblationEpochs, base, fsa, cnn, dfm, full)};
}

// 9 ---------------------------------------------------------------------------

Outcome determinism() {
  const World w = generate_world(9, 20, 4, ModelConfig::toy().image_size);
  const fs::path root = fs::temp_directory_path() / "lgcn_acceptance_det";
  fs::remove_all(root);
  for (const char* run : {"a", "b"}) {
    LgcnModel model(ModelConfig::toy(), {}, 9);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 9;
    TrainOptions o;
    o.out_dir = (root / run).string();
    train(model, w.manifest, w.images, cfg, o);
    write_heatmaps((root / run / "heatmaps").string(), model, w.images[0]);
  }
  std::size_t files = 0;
  std::string differ;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file() || e.path().filename() == "timing.jsonl") continue;
    const auto rel = fs::relative(e.path(), root / "a");
    ++files;
    if (slurp(e.path()) != slurp(root / "b" / rel)) differ += " " + rel.string();
  }
  fs::remove_all(root);
  const bool ok = differ.empty() && files >= 7;
  return {ok, fmt("%zu artifacts (checkpoints, report, heatmaps) compared%s", files,
                  differ.empty() ? ", all byte-identical" : (", differ:" + differ).c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "Run just these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  std::vector<std::pair<int, Outcome>> results;
  const auto record = [&](int c, const Outcome& o) {
    std::printf("criterion %d: %s  %s\n", c, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    results.emplace_back(c, o);
  };
  const auto guarded = [&](int c, const std::function<Outcome()>& f) {
    if (!wanted(c)) return;
    try {
      record(c, f());
    } catch (const std::exception& e) {
      record(c, {false, std::string("threw: ") + e.what()});
    }
  };

  guarded(1, gradient_suite);
  guarded(2, spectral_invariants);
  guarded(3, dfm_algebra);
  guarded(4, shape_parity);
  guarded(5, retrieval_oracle);
  if (wanted(6) || wanted(8)) {
    try {
      const ToyRun r = toy_run();
      if (wanted(6)) record(6, learning_signal(r));
      if (wanted(8)) record(8, freezing(r));
    } catch (const std::exception& e) {
      for (int c : {6, 8})
        if (wanted(c)) record(c, {false, std::string("threw: ") + e.what()});
    }
  }
  guarded(7, ablation_ordering);
  guarded(9, determinism);

  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::size_t passed = 0;
  std::printf("\nsummary\n");
  for (const auto& [c, o] : results) {
    std::printf("criterion %d: %s\n", c, o.pass ? "PASS" : "FAIL");
    passed += o.pass;
  }
  std::printf("%zu/%zu criteria passed\n", passed, results.size());
  return passed == results.size() ? 0 : 1;
}
