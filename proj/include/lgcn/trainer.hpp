#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgcn/config.hpp"
#include "lgcn/model.hpp"
#include "lgcn/retrieval.hpp"

namespace lgcn {

/// Record indices into the manifest the triplet was mined from.
struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::vector<std::size_t> negatives;

  bool operator==(const Triplet&) const = default;
};

struct MiningResult {
  std::vector<Triplet> triplets;
  std::size_t skipped = 0;  // anchors without a valid positive or negative
};

bool is_positive_pair(const ManifestRecord& a, const ManifestRecord& b);
/// Not a positive, and beyond the negative radius or labeled with a different place.
bool is_negative_pair(const ManifestRecord& a, const ManifestRecord& b);

/// For every anchor: the most similar valid positive and the k most similar
/// valid negatives. Unordered anchor/positive pairs are emitted once.
/// `descriptors` rows are parallel to `manifest.records`.
MiningResult mine_triplets(const DatasetManifest& manifest, const Tensor& descriptors, std::size_t k);

/// max(0, |a-p|^2 - |a-n|^2 + margin)
double triplet_loss(std::span<const double> a, std::span<const double> p, std::span<const double> n, double margin);

struct BatchLoss {
  double loss = 0.0;
  Tensor grad;  // d loss / d descriptors, same shape as the input
  std::size_t active = 0;
};

/// Batch-hard objective: mean over anchors of
/// max(0, |a-p|^2 - min_n |a-n|^2 + margin), where n ranges over every image
/// of the batch that is a valid negative for the anchor.
/// `rows` maps each triplet member to its descriptor row; `records` gives
/// each descriptor row's manifest record.
struct BatchTriplet {
  std::size_t anchor, positive;
  std::vector<std::size_t> negatives;
};
BatchLoss batch_hard_loss(const Tensor& descriptors, const std::vector<BatchTriplet>& triplets,
                          const std::vector<const ManifestRecord*>& records, double margin);

/// Adam with bias correction over named parameters.
class Adam {
 public:
  explicit Adam(const TrainConfig& cfg) : cfg_(cfg) {}
  /// One step over every parameter accepted by `trainable`.
  void step(LgcnModel& model, const std::function<bool(const std::string&)>& trainable);
  std::size_t steps() const { return t_; }

  /// Single-tensor update, used by step().
  static void update(Tensor& value, const Tensor& grad, Tensor& m, Tensor& v, std::size_t t, const TrainConfig& cfg);

 private:
  TrainConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, nlohmann::json dump) : std::runtime_error(what), dump_(std::move(dump)) {}
  const nlohmann::json& dump() const { return dump_; }

 private:
  nlohmann::json dump_;
};

struct EpochReport {
  std::size_t epoch = 0;  // 0 is the untrained model
  std::optional<double> loss;
  double recall1 = 0.0, recall5 = 0.0, recall10 = 0.0;
  std::size_t triplets = 0;
  std::size_t skipped = 0;
  std::string checksum;  // SHA-256 over all parameters
  std::string backbone_checksum;
  double seconds = 0.0;  // wall time, kept out of to_json

  nlohmann::json to_json() const;
};

struct TrainReport {
  std::vector<EpochReport> epochs;
  double initial_recall1() const { return epochs.front().recall1; }
  double final_recall1() const { return epochs.back().recall1; }
};

struct TrainOptions {
  std::string out_dir;      // empty: no files written
  std::size_t threads = 1;  // inference threads for mining and validation
  std::size_t max_triplets = 0;  // per epoch, 0 for all
  std::function<void(const EpochReport&)> on_epoch;
};

/// Recall@{1,5,10} of queries against the database of `manifest`.
RecallResult evaluate(const LgcnModel& model, const DatasetManifest& manifest, const std::vector<Tensor>& images,
                      std::size_t threads = 1);

/// Fine-tunes on the database split, validates query -> database each epoch.
/// Writes report.jsonl, timing.jsonl and epoch_<n>.ckpt under out_dir.
/// Throws NumericError on a non-finite loss (after writing nan_dump.json).
TrainReport train(LgcnModel& model, const DatasetManifest& manifest, const std::vector<Tensor>& images,
                  const TrainConfig& cfg, const TrainOptions& opts = {});

std::string parameter_checksum(const LgcnModel& model, bool backbone_only);

}  // namespace lgcn
