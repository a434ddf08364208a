#include "lgcn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "lgcn/checkpoint.hpp"

namespace lgcn {

namespace {

double sq_dist(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

DatasetManifest subset(const DatasetManifest& m, const std::vector<std::size_t>& rows) {
  DatasetManifest out;
  out.name = m.name;
  for (std::size_t r : rows) out.records.push_back(m.records[r]);
  return out;
}

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  const std::size_t d = t.dim(1);
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(t.ptr() + rows[i] * d, t.ptr() + (rows[i] + 1) * d, out.ptr() + i * d);
  return out;
}

void append_line(const std::string& path, const std::string& line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << line << '\n';
}

}  // namespace

bool is_positive_pair(const ManifestRecord& a, const ManifestRecord& b) {
  return same_place(a, b, kPositiveRadiusMeters);
}

bool is_negative_pair(const ManifestRecord& a, const ManifestRecord& b) {
  if (is_positive_pair(a, b)) return false;
  if (a.place_id && b.place_id && *a.place_id != *b.place_id) return true;
  return geodistance(a.pos, b.pos) > kNegativeRadiusMeters;
}

MiningResult mine_triplets(const DatasetManifest& manifest, const Tensor& descriptors, std::size_t k) {
  const std::size_t n = manifest.records.size();
  expect_rank(descriptors, 2, "mine_triplets");
  if (descriptors.dim(0) != n) throw ShapeError("mine_triplets: descriptor rows must match manifest records");
  if (k == 0) throw std::invalid_argument("mine_triplets: k must be positive");
  const std::size_t d = descriptors.dim(1);
  MiningResult out;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t a = 0; a < n; ++a) {
    const auto& ra = manifest.records[a];
    const double* da = descriptors.ptr() + a * d;
    std::optional<std::size_t> pos;
    double pos_sim = 0.0;
    std::vector<std::pair<double, std::size_t>> negs;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const double sim = dot(da, descriptors.ptr() + j * d, d);
      if (is_positive_pair(ra, manifest.records[j])) {
        if (!pos || sim > pos_sim) pos = j, pos_sim = sim;
      } else if (is_negative_pair(ra, manifest.records[j])) {
        negs.emplace_back(-sim, j);
      }
    }
    if (!pos || negs.empty()) {
      ++out.skipped;
      continue;
    }
    if (!seen.insert({std::min(a, *pos), std::max(a, *pos)}).second) continue;
    const std::size_t take = std::min(k, negs.size());
    std::partial_sort(negs.begin(), negs.begin() + static_cast<long>(take), negs.end());
    Triplet t{a, *pos, {}};
    for (std::size_t i = 0; i < take; ++i) t.negatives.push_back(negs[i].second);
    out.triplets.push_back(std::move(t));
  }
  return out;
}

double triplet_loss(std::span<const double> a, std::span<const double> p, std::span<const double> n, double margin) {
  if (a.size() != p.size() || a.size() != n.size()) throw ShapeError("triplet_loss: descriptor sizes differ");
  return std::max(0.0, sq_dist(a.data(), p.data(), a.size()) - sq_dist(a.data(), n.data(), a.size()) + margin);
}

BatchLoss batch_hard_loss(const Tensor& descriptors, const std::vector<BatchTriplet>& triplets,
                          const std::vector<const ManifestRecord*>& records, double margin) {
  expect_rank(descriptors, 2, "batch_hard_loss");
  if (records.size() != descriptors.dim(0)) throw ShapeError("batch_hard_loss: one record per descriptor row");
  if (triplets.empty()) throw std::invalid_argument("batch_hard_loss: no triplets");
  const std::size_t d = descriptors.dim(1), rows = descriptors.dim(0);
  BatchLoss out;
  out.grad = Tensor::zeros_like(descriptors);
  const double inv = 1.0 / static_cast<double>(triplets.size());
  for (const auto& t : triplets) {
    const double* a = descriptors.ptr() + t.anchor * d;
    const double* p = descriptors.ptr() + t.positive * d;
    std::optional<std::size_t> hardest;
    double best = 0.0;
    auto consider = [&](std::size_t j) {
      const double dist = sq_dist(a, descriptors.ptr() + j * d, d);
      if (!hardest || dist < best) hardest = j, best = dist;
    };
    for (std::size_t j : t.negatives) consider(j);
    for (std::size_t j = 0; j < rows; ++j) {
      if (j != t.anchor && is_negative_pair(*records[t.anchor], *records[j])) consider(j);
    }
    if (!hardest) throw std::invalid_argument("batch_hard_loss: triplet without negative");
    const double* n = descriptors.ptr() + *hardest * d;
    const double l = sq_dist(a, p, d) - best + margin;
    if (l <= 0.0) continue;
    out.loss += l * inv;
    ++out.active;
    double* ga = out.grad.ptr() + t.anchor * d;
    double* gp = out.grad.ptr() + t.positive * d;
    double* gn = out.grad.ptr() + *hardest * d;
    for (std::size_t i = 0; i < d; ++i) {
      ga[i] += 2.0 * inv * (n[i] - p[i]);
      gp[i] += 2.0 * inv * (p[i] - a[i]);
      gn[i] += 2.0 * inv * (a[i] - n[i]);
    }
  }
  return out;
}

void Adam::update(Tensor& value, const Tensor& grad, Tensor& m, Tensor& v, std::size_t t, const TrainConfig& cfg) {
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < value.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    value[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
  }
}

void Adam::step(LgcnModel& model, const std::function<bool(const std::string&)>& trainable) {
  ++t_;
  std::size_t i = 0;
  const bool init = m_.empty();
  model.visit_params([&](const std::string& name, Param& p) {
    if (init) {
      m_.push_back(Tensor::zeros_like(p.value));
      v_.push_back(Tensor::zeros_like(p.value));
    }
    if (trainable(name)) update(p.value, p.grad, m_[i], v_[i], t_, cfg_);
    ++i;
  });
}

nlohmann::json EpochReport::to_json() const {
  nlohmann::json j{{"epoch", epoch},
                   {"loss", loss ? nlohmann::json(*loss) : nlohmann::json(nullptr)},
                   {"recall@1", recall1},
                   {"recall@5", recall5},
                   {"recall@10", recall10},
                   {"triplets", triplets},
                   {"skipped", skipped},
                   {"checksum", checksum},
                   {"backbone_checksum", backbone_checksum}};
  return j;
}

std::string parameter_checksum(const LgcnModel& model, bool backbone_only) {
  return sha256_hex(serialize_params(
      model, [&](const std::string& name) { return !backbone_only || LgcnModel::is_backbone(name); }));
}

RecallResult evaluate(const LgcnModel& model, const DatasetManifest& manifest, const std::vector<Tensor>& images,
                      std::size_t threads) {
  const auto q = manifest.indices(Split::kQuery), db = manifest.indices(Split::kDatabase);
  if (q.empty() || db.empty()) throw std::invalid_argument("evaluate: need both query and database images");
  const Tensor all = model.describe_all(images, threads);
  const auto results = search(gather_rows(all, q), gather_rows(all, db), 10);
  return recall_at_n(results, manifest, q, db, {1, 5, 10});
}

TrainReport train(LgcnModel& model, const DatasetManifest& manifest, const std::vector<Tensor>& images,
                  const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (images.size() != manifest.records.size()) throw std::invalid_argument("train: one image per manifest record");
  const auto train_rows = manifest.indices(Split::kDatabase);
  const DatasetManifest train_set = subset(manifest, train_rows);
  std::vector<Tensor> train_images;
  for (std::size_t r : train_rows) train_images.push_back(images[r]);

  const std::filesystem::path dir(opts.out_dir);
  const bool write = !opts.out_dir.empty();
  if (write) {
    std::filesystem::create_directories(dir);
    for (const char* f : {"report.jsonl", "timing.jsonl"}) std::filesystem::remove(dir / f);
  }
  const auto trainable = [&](const std::string& name) { return !(cfg.freeze_backbone && LgcnModel::is_backbone(name)); };
  const bool backbone_grads = !cfg.freeze_backbone;

  TrainReport report;
  auto finish_epoch = [&](EpochReport e, double seconds) {
    const RecallResult r = evaluate(model, manifest, images, opts.threads);
    e.recall1 = r.recall[0];
    e.recall5 = r.recall[1];
    e.recall10 = r.recall[2];
    e.checksum = parameter_checksum(model, false);
    e.backbone_checksum = parameter_checksum(model, true);
    e.seconds = seconds;
    if (write) {
      append_line((dir / "report.jsonl").string(), e.to_json().dump());
      append_line((dir / "timing.jsonl").string(), nlohmann::json{{"epoch", e.epoch}, {"seconds", seconds}}.dump());
      if (e.epoch > 0) {
        save_checkpoint((dir / ("epoch_" + std::to_string(e.epoch) + ".ckpt")).string(), model,
                        {{"epoch", e.epoch}, {"train", to_json(cfg)}});
      }
    }
    if (opts.on_epoch) opts.on_epoch(e);
    report.epochs.push_back(std::move(e));
  };

  finish_epoch(EpochReport{}, 0.0);

  Adam adam(cfg);
  std::mt19937_64 rng(cfg.seed * 104729 + 17);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const Tensor desc = model.describe_all(train_images, opts.threads);
    MiningResult mined = mine_triplets(train_set, desc, cfg.negatives);
    std::shuffle(mined.triplets.begin(), mined.triplets.end(), rng);
    if (opts.max_triplets && mined.triplets.size() > opts.max_triplets) mined.triplets.resize(opts.max_triplets);

    EpochReport e;
    e.epoch = epoch;
    e.triplets = mined.triplets.size();
    e.skipped = mined.skipped;
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < mined.triplets.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(mined.triplets.size(), begin + cfg.batch_size);
      // each distinct image enters the batch once
      std::vector<std::size_t> members;
      auto slot = [&](std::size_t record) {
        auto it = std::find(members.begin(), members.end(), record);
        if (it != members.end()) return static_cast<std::size_t>(it - members.begin());
        members.push_back(record);
        return members.size() - 1;
      };
      std::vector<BatchTriplet> batch;
      for (std::size_t t = begin; t < end; ++t) {
        const Triplet& tr = mined.triplets[t];
        BatchTriplet bt{slot(tr.anchor), slot(tr.positive), {}};
        for (std::size_t n : tr.negatives) bt.negatives.push_back(slot(n));
        batch.push_back(std::move(bt));
      }
      std::vector<const Tensor*> ptrs;
      std::vector<const ManifestRecord*> records;
      for (std::size_t r : members) {
        ptrs.push_back(&train_images[r]);
        records.push_back(&train_set.records[r]);
      }

      BatchTrace trace;
      BatchLoss bl;
      try {
        const Tensor out = model.forward_batch(ptrs, cfg.cross_image, &trace);
        bl = batch_hard_loss(out, batch, records, cfg.margin);
      } catch (const std::domain_error&) {
        bl.loss = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(bl.loss)) {
        nlohmann::json dump{{"epoch", epoch},
                            {"batch", batches},
                            {"loss", std::to_string(bl.loss)},
                            {"images", nlohmann::json::array()},
                            {"non_finite_params", nlohmann::json::array()}};
        for (const auto* r : records) dump["images"].push_back(r->id);
        model.visit_params([&](const std::string& name, const Param& p) {
          if (!p.value.all_finite()) dump["non_finite_params"].push_back(name);
        });
        if (write) std::ofstream(dir / "nan_dump.json") << dump.dump(2) << '\n';
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches),
                           dump);
      }
      loss_sum += bl.loss;
      ++batches;
      if (bl.active == 0) continue;
      model.zero_grad();
      model.backward_batch(trace, bl.grad, backbone_grads);
      adam.step(model, trainable);
    }
    e.loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    finish_epoch(std::move(e), std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  return report;
}

}  // namespace lgcn
