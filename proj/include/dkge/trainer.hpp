#pragma once

#include "dkge/context.hpp"
#include "dkge/evaluator.hpp"
#include "dkge/model.hpp"

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace dkge {

struct TrainConfig {
  Eigen::Index dim = 100;
  Real learning_rate = 0.005;
  std::size_t batch_size = 500;
  Real margin = 10;
  std::size_t entity_layers = 1;
  std::size_t relation_layers = 1;
  std::size_t max_epochs = 800;
  std::size_t patience = 5;     // evaluations without improvement before stopping
  std::size_t eval_every = 10;  // epochs
  std::uint64_t seed = 0;
  ContextConfig context;
  unsigned threads = 1;
  std::size_t negative_retries = 100;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  Real loss = 0;  // mean hinge loss per positive triple
  std::optional<Real> valid_hits10;
  Real seconds = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

struct TrainReport {
  std::size_t epochs_run = 0;
  std::vector<Real> epoch_losses;
  std::optional<Real> best_valid_hits10;
  std::size_t best_epoch = 0;
  Real seconds = 0;
  std::size_t validation_triples = 0;
  // Online learning only.
  std::size_t retrain_triples = 0;
  std::size_t emerging_objects = 0;
  std::size_t removed_objects = 0;
  std::size_t changed_objects = 0;
  std::size_t updated_parameters = 0;
  std::size_t frozen_parameters = 0;
};

struct TrainResult {
  Model model;
  TrainReport report;
};

// Full training on one snapshot. With a non-empty `valid` set the parameters
// of the best validation Hits@10 are returned (early stopping). `contexts`, if
// given, must equal build_context_table(snapshot, config.context with
// seed = config.seed).
TrainResult train_from_scratch(const Snapshot& snapshot, std::span<const Triple> valid, const TrainConfig& config,
                               const EpochCallback& on_epoch = {}, const ContextTable* contexts = nullptr);

// Triples of g_new touching an emerging object or one of `changed`.
std::vector<Triple> collect_retrain_set(const Snapshot& g_new, const SnapshotDiff& diff,
                                        std::span<const ObjectRef> changed);

// Incremental update of a model trained on g_old. `valid` uses g_new ids; when
// empty a small sample of unaffected triples is held out instead.
TrainResult train_online(const Snapshot& g_old, const Snapshot& g_new, const Model& model,
                         std::span<const Triple> valid, const TrainConfig& config,
                         const EpochCallback& on_epoch = {});

// Parameter store for g_new: rows of surviving objects are copied by name,
// emerging objects are drawn from U(-6/sqrt(d), 6/sqrt(d)).
ParameterStore carry_over_params(const ParameterStore& old, const Snapshot& g_new, const SnapshotDiff& diff,
                                 std::mt19937_64& rng);

}  // namespace dkge
