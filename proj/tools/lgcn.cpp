#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lgcn/checkpoint.hpp"
#include "lgcn/gradcheck_suite.hpp"
#include "lgcn/heatmap.hpp"
#include "lgcn/retrieval.hpp"
#include "lgcn/synth.hpp"
#include "lgcn/trainer.hpp"

using namespace lgcn;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Bad flags or configuration: exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Checks that ran and failed: exit code 2.
struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AblationOptions {
  bool disable_fsa = false, disable_cnn = false, disable_dfm = false, static_fusion = false;
  std::optional<std::string> dfm_mode;

  void add(CLI::App* cmd) {
    cmd->add_flag("--disable-fsa", disable_fsa, "Run the ViT without adapters");
    cmd->add_flag("--disable-cnn-stream", disable_cnn, "Drop the CNN stream (ViT features only)");
    cmd->add_flag("--disable-dfm", disable_dfm, "Concatenate the streams instead of gated fusion");
    cmd->add_flag("--static-fusion", static_fusion, "Fixed 0.5/0.5 sum instead of the learned gate");
    cmd->add_option("--dfm-mode", dfm_mode, "Gate formula: cross-stream or vit-only")
        ->check(CLI::IsMember({"cross-stream", "vit-only"}));
  }
  bool any() const { return disable_fsa || disable_cnn || disable_dfm || static_fusion || dfm_mode; }
  AblationFlags apply(AblationFlags f) const {
    f.disable_fsa |= disable_fsa;
    f.disable_cnn_stream |= disable_cnn;
    f.disable_dfm |= disable_dfm;
    f.static_fusion |= static_fusion;
    if (dfm_mode) f.dfm_mode = dfm_mode_from_string(*dfm_mode);
    return f;
  }
};

struct ModelSource {
  std::string checkpoint, config;
  std::uint64_t seed = 0;
  AblationOptions ablation;

  void add(CLI::App* cmd) {
    cmd->add_option("--checkpoint", checkpoint, "Trained checkpoint; without it a seeded untrained model is used")
        ->check(CLI::ExistingFile);
    cmd->add_option("--config", config, "JSON run config for the untrained model")->envname("LGCN_CONFIG");
    cmd->add_option("--seed", seed, "Initialization seed of the untrained model")->envname("LGCN_SEED");
    ablation.add(cmd);
  }

  // The model plus the effective configuration it was built from.
  std::pair<LgcnModel, RunConfig> load() const;
};

RunConfig read_run_config(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path);
  try {
    return run_config_from_json(json::parse(in));
  } catch (const std::exception& e) {
    throw UsageError(path + ": " + e.what());
  }
}

std::pair<LgcnModel, RunConfig> ModelSource::load() const {
  if (checkpoint.empty()) {
    RunConfig rc = read_run_config(config);
    rc.ablation = ablation.apply(rc.ablation);
    rc.train.seed = seed;
    return {LgcnModel(rc.model, rc.ablation, seed), rc};
  }
  if (!config.empty()) throw UsageError("--config applies to untrained models only; the checkpoint carries its own");
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  if (ablation.any()) {
    try {
      ck.model.set_flags(ablation.apply(ck.model.flags()));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  RunConfig rc;
  rc.model = ck.model.config();
  rc.ablation = ck.model.flags();
  if (ck.header.contains("meta") && ck.header["meta"].contains("train"))
    rc.train = train_config_from_json(ck.header["meta"]["train"]);
  return {std::move(ck.model), rc};
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream(path) << j.dump(2) << '\n';
}

std::string descriptor_checksum(const Tensor& d) {
  return sha256_hex(std::string(reinterpret_cast<const char*>(d.data().data()), d.size() * sizeof(double)));
}

struct Dataset {
  DatasetManifest manifest;
  std::vector<Tensor> images;
};

Dataset load_dataset(const std::string& dir, std::size_t image_size) {
  const fs::path m = fs::path(dir) / "manifest.csv";
  if (!fs::exists(m)) throw UsageError("no manifest.csv under " + dir);
  Dataset d{read_manifest_file(m.string()), {}};
  d.images = load_images(dir, d.manifest);
  for (std::size_t i = 0; i < d.images.size(); ++i)
    if (d.images[i].dim(0) != image_size || d.images[i].dim(1) != image_size)
      throw UsageError("image " + d.manifest.records[i].id + " is " + shape_str(d.images[i].shape()) +
                       ", the model expects " + std::to_string(image_size) + " pixels square");
  return d;
}

// gen ----------------------------------------------------------------------

struct GenArgs {
  std::uint64_t seed = 0;
  std::size_t places = 200, views = 6, size = 64;
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  if (a.places < 2) throw UsageError("--places must be at least 2");
  if (a.views < 1) throw UsageError("--views must be at least 1");
  World w = generate_world(a.seed, a.places, a.views, a.size);
  write_world(a.out, w);
  write_json(fs::path(a.out) / "gen.json", {{"seed", a.seed}, {"places", a.places}, {"views", a.views}, {"size", a.size}});

  // geodistance audit over every pair
  std::size_t pairs = 0, violations = 0;
  const auto& r = w.manifest.records;
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = i + 1; j < r.size(); ++j, ++pairs) {
      const double d = geodistance(r[i].pos, r[j].pos);
      const bool same = r[i].place_id == r[j].place_id;
      if (same ? d >= 10.0 : d <= 25.0) ++violations;
    }
  std::cout << "wrote " << r.size() << " images to " << a.out << '\n'
            << "manifest sha256 " << sha256_file((fs::path(a.out) / "manifest.csv").string()) << '\n'
            << "audit " << (violations ? "FAIL" : "ok") << ": " << pairs << " pairs, " << violations
            << " violations\n";
  if (violations) throw CheckFailed("geodistance audit failed");
  return 0;
}

// train --------------------------------------------------------------------

struct TrainArgs {
  std::string data, out, config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr;
  std::optional<bool> freeze;
  std::size_t max_triplets = 0, threads = 1;
  AblationOptions ablation;
};

int cmd_train(const TrainArgs& a) {
  RunConfig rc = read_run_config(a.config);
  if (a.seed) rc.train.seed = *a.seed;
  if (a.epochs) rc.train.epochs = *a.epochs;
  if (a.batch_size) rc.train.batch_size = *a.batch_size;
  if (a.lr) rc.train.learning_rate = *a.lr;
  if (a.freeze) rc.train.freeze_backbone = *a.freeze;
  rc.ablation = a.ablation.apply(rc.ablation);
  try {
    rc.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  Dataset d = load_dataset(a.data, rc.model.image_size);
  fs::create_directories(a.out);
  write_json(fs::path(a.out) / "config.json", to_json(rc));

  LgcnModel model(rc.model, rc.ablation, rc.train.seed);
  TrainOptions o;
  o.out_dir = a.out;
  o.threads = a.threads;
  o.max_triplets = a.max_triplets;
  o.on_epoch = [](const EpochReport& e) {
    std::printf("epoch %zu  loss %s  R@1 %.3f  R@5 %.3f  R@10 %.3f  triplets %zu  skipped %zu  %.1fs\n", e.epoch,
                e.loss ? std::to_string(*e.loss).c_str() : "-", e.recall1, e.recall5, e.recall10, e.triplets,
                e.skipped, e.seconds);
    std::fflush(stdout);
  };
  const TrainReport r = train(model, d.manifest, d.images, rc.train, o);
  std::printf("backbone sha256 %s\nrecall@1 %.3f -> %.3f\n", r.epochs.back().backbone_checksum.c_str(),
              r.initial_recall1(), r.final_recall1());
  return 0;
}

// eval ---------------------------------------------------------------------

struct EvalArgs {
  ModelSource model;
  std::string data, out, per_query, descriptors;
  std::vector<std::size_t> n{1, 5, 10};
  bool oracle_check = false;
  std::size_t threads = 1;
};

// Exhaustive double loop: full descending sort per query, ties to the lower row.
std::vector<double> oracle_recall(const Tensor& all, const DatasetManifest& m, const std::vector<std::size_t>& q,
                                  const std::vector<std::size_t>& db, const std::vector<std::size_t>& ns) {
  std::vector<double> hits(ns.size(), 0.0);
  std::size_t evaluated = 0;
  const std::size_t D = all.dim(1);
  for (std::size_t qi : q) {
    bool any = false;
    for (std::size_t di : db) any |= same_place(m.records[qi], m.records[di], kMatchRadiusMeters);
    if (!any) continue;
    ++evaluated;
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t r = 0; r < db.size(); ++r) {
      double s = 0;
      for (std::size_t c = 0; c < D; ++c) s += all.at(qi, c) * all.at(db[r], c);
      order.emplace_back(-s, r);
    }
    std::sort(order.begin(), order.end());
    for (std::size_t k = 0; k < ns.size(); ++k)
      for (std::size_t r = 0; r < std::min(ns[k], order.size()); ++r)
        if (same_place(m.records[qi], m.records[db[order[r].second]], kMatchRadiusMeters)) {
          hits[k] += 1.0;
          break;
        }
  }
  for (double& h : hits) h = evaluated ? h / static_cast<double>(evaluated) : 0.0;
  return hits;
}

int cmd_eval(const EvalArgs& a) {
  auto [model, rc] = a.model.load();
  Dataset d = load_dataset(a.data, model.config().image_size);
  const auto q = d.manifest.indices(Split::kQuery), db = d.manifest.indices(Split::kDatabase);
  if (q.empty() || db.empty()) throw UsageError("the dataset needs both query and database images");
  std::vector<std::size_t> ns = a.n;
  std::sort(ns.begin(), ns.end());
  ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
  if (ns.empty() || ns.front() == 0) throw UsageError("--n values must be positive");

  const Tensor all = model.describe_all(d.images, a.threads);
  Tensor qd({q.size(), all.dim(1)}), dd({db.size(), all.dim(1)});
  for (std::size_t i = 0; i < q.size(); ++i)
    std::copy_n(all.data().begin() + static_cast<std::ptrdiff_t>(q[i] * all.dim(1)), all.dim(1),
                qd.data().begin() + static_cast<std::ptrdiff_t>(i * all.dim(1)));
  for (std::size_t i = 0; i < db.size(); ++i)
    std::copy_n(all.data().begin() + static_cast<std::ptrdiff_t>(db[i] * all.dim(1)), all.dim(1),
                dd.data().begin() + static_cast<std::ptrdiff_t>(i * all.dim(1)));
  const RecallResult r = recall_at_n(search(qd, dd, std::min(ns.back(), db.size())), d.manifest, q, db, ns);

  json out = to_json(r, d.manifest.name, false);
  out["descriptor_sha256"] = descriptor_checksum(all);
  out["config"] = to_json(rc);
  bool oracle_ok = true;
  if (a.oracle_check) {
    const auto expect = oracle_recall(all, d.manifest, q, db, ns);
    oracle_ok = expect == r.recall;
    out["oracle_check"] = {{"pass", oracle_ok}, {"recall", expect}};
  }
  if (!a.per_query.empty()) {
    std::ofstream csv(a.per_query);
    csv << "query_id,has_ground_truth,first_hit_rank,top_ids\n";
    for (const auto& qo : r.queries) {
      csv << qo.query_id << ',' << (qo.has_ground_truth ? 1 : 0) << ',' << qo.first_hit_rank << ',';
      for (std::size_t i = 0; i < qo.top_ids.size(); ++i) csv << (i ? ";" : "") << qo.top_ids[i];
      csv << '\n';
    }
  }
  if (!a.descriptors.empty()) write_descriptors(a.descriptors, all);
  if (!a.out.empty()) write_json(a.out, out);
  std::cout << out.dump(2) << '\n';
  if (!oracle_ok) throw CheckFailed("recall differs from the exhaustive oracle");
  return 0;
}

// gradcheck ----------------------------------------------------------------

struct GradcheckArgs {
  std::string scope = "all", out;
  bool inject_bug = false;
  double eps = 1e-4, tol = 1e-4;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  SuiteOptions o;
  o.check.eps = a.eps;
  o.check.tol = a.tol;
  o.inject_bug = a.inject_bug;
  std::vector<GradCheckReport> reports;
  try {
    reports = run_gradcheck_suite(a.scope, o);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto cases = gradcheck_cases();
  std::size_t failed = 0;
  json j = json::array();
  std::printf("%-22s %-9s %12s  %s\n", "check", "scope", "max rel err", "result");
  for (const auto& r : reports) {
    const auto it = std::find_if(cases.begin(), cases.end(), [&](const SuiteCase& c) { return c.name == r.op; });
    const std::string scope = it == cases.end() ? "" : it->scope;
    std::printf("%-22s %-9s %12.3e  %s\n", r.op.c_str(), scope.c_str(), r.max_rel_error, r.pass ? "pass" : "FAIL");
    failed += !r.pass;
    json params = json::array();
    for (const auto& p : r.per_param)
      params.push_back({{"name", p.name}, {"max_rel_error", p.max_rel_error}, {"checked", p.checked}});
    j.push_back({{"op", r.op}, {"scope", scope}, {"max_rel_error", r.max_rel_error}, {"pass", r.pass}, {"params", params}});
  }
  std::printf("%zu/%zu passed\n", reports.size() - failed, reports.size());
  if (!a.out.empty()) write_json(a.out, {{"eps", a.eps}, {"tol", a.tol}, {"inject_bug", a.inject_bug}, {"checks", j}});
  if (failed) throw CheckFailed(std::to_string(failed) + " gradient checks failed");
  return 0;
}

// heatmap ------------------------------------------------------------------

struct HeatmapArgs {
  ModelSource model;
  std::string image, out;
};

int cmd_heatmap(const HeatmapArgs& a) {
  auto [model, rc] = a.model.load();
  const Tensor img = read_ppm(a.image);
  if (img.dim(0) != model.config().image_size || img.dim(1) != model.config().image_size)
    throw UsageError(a.image + " is " + shape_str(img.shape()) + ", the model expects " +
                     std::to_string(model.config().image_size) + " pixels square");
  fs::create_directories(a.out);
  write_json(fs::path(a.out) / "config.json", to_json(rc));
  for (const auto& p : write_heatmaps(a.out, model, img))
    std::cout << fs::path(p).filename().string() << ' ' << sha256_file(p) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LGCN visual place recognition: synthetic data, training, retrieval evaluation, diagnostics"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "lgcn 1.0");

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Render a synthetic place world");
  g->add_option("--seed", gen.seed, "World seed")->envname("LGCN_SEED");
  g->add_option("--places", gen.places, "Number of places")->capture_default_str();
  g->add_option("--views", gen.views, "Views per place")->capture_default_str();
  g->add_option("--size", gen.size, "Image side in pixels")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Fine-tune on the database split of a dataset");
  t->add_option("--data", tr.data, "Dataset directory (manifest.csv + images)")->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", tr.out, "Directory for checkpoints and reports")->required();
  t->add_option("--config", tr.config, "JSON run config")->envname("LGCN_CONFIG");
  t->add_option("--seed", tr.seed, "Initialization and shuffling seed")->envname("LGCN_SEED");
  t->add_option("--epochs", tr.epochs, "Override the number of epochs");
  t->add_option("--batch-size", tr.batch_size, "Override triplets per step");
  t->add_option("--lr", tr.lr, "Override the learning rate");
  t->add_flag("--freeze-backbone,!--no-freeze-backbone", tr.freeze, "Keep ViT weights fixed (default on)");
  t->add_option("--max-triplets", tr.max_triplets, "Cap triplets per epoch (0: all)");
  t->add_option("--threads", tr.threads, "Inference threads for mining and validation")->envname("LGCN_THREADS");
  tr.ablation.add(t);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Recall@N of queries against the database");
  e->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev.model.add(e);
  e->add_option("--n", ev.n, "Recall cutoffs")->delimiter(',')->capture_default_str();
  e->add_option("--out", ev.out, "Write the result JSON here as well");
  e->add_option("--per-query", ev.per_query, "Per-query CSV of retrieved ids");
  e->add_option("--descriptors", ev.descriptors, "Dump all descriptors (binary)");
  e->add_flag("--oracle-check", ev.oracle_check, "Recompute recall with an exhaustive double loop and compare");
  e->add_option("--threads", ev.threads, "Inference threads")->envname("LGCN_THREADS");

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  c->add_option("--scope", gc.scope, "all, a module (ops spectral fsa vit cnn dfm head model) or a check name")
      ->capture_default_str();
  c->add_flag("--inject-bug", gc.inject_bug, "Corrupt every analytic gradient; the suite must fail");
  c->add_option("--eps", gc.eps, "Finite-difference step")->capture_default_str();
  c->add_option("--tol", gc.tol, "Maximum relative error")->capture_default_str();
  c->add_option("--out", gc.out, "Write the report JSON here");

  HeatmapArgs hm;
  auto* h = app.add_subcommand("heatmap", "Export per-stream response maps as PPM");
  h->add_option("--image", hm.image, "Input PPM image")->required()->check(CLI::ExistingFile);
  h->add_option("--out", hm.out, "Output directory")->required();
  hm.model.add(h);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : 1;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*c) return cmd_gradcheck(gc);
    if (*h) return cmd_heatmap(hm);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  } catch (const NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  }
  return 1;
}
