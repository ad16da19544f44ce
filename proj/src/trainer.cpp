#include "dkge/trainer.hpp"

#include "dkge/hashing.hpp"
#include "dkge/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iterator>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>

namespace dkge {

namespace {

using Clock = std::chrono::steady_clock;

Real seconds_since(Clock::time_point start) {
  return std::chrono::duration<Real>(Clock::now() - start).count();
}

struct SgdSetup {
  const Snapshot* snapshot = nullptr;     // negatives and filter come from here
  std::span<const Triple> triples;        // what gets trained
  std::span<const Triple> valid;
  const UpdateMask* mask = nullptr;
  std::vector<ObjectRef> dynamic_objects;  // recomputed for validation when fixed joints are used
  const JointTable* fixed_joints = nullptr;
};

// The shared minibatch SGD loop with validation-based early stopping.
void run_sgd(Model& model, const SgdSetup& setup, const TrainConfig& config, const EpochCallback& on_epoch,
             TrainReport& report, Clock::time_point start) {
  const Snapshot& snapshot = *setup.snapshot;
  std::mt19937_64 shuffle_rng(derive_seed(config.seed, "shuffle"));
  std::mt19937_64 negative_rng(derive_seed(config.seed, "negatives"));
  const RelationStats stats = compute_relation_stats(snapshot);
  const TripleSet train_filter = make_filter(snapshot.triples());
  const std::vector<int> ks{10};

  std::vector<std::size_t> order(setup.triples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Triple> positives, negatives;
  Gradients grads;
  BatchOptions options{config.threads, setup.mask, setup.fixed_joints};

  std::optional<ParameterStore> best;
  std::size_t stale_evals = 0;
  JointTable valid_joints;
  if (setup.fixed_joints) valid_joints = *setup.fixed_joints;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Real epoch_loss = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      positives.clear();
      negatives.clear();
      for (std::size_t i = begin; i < end; ++i) {
        const Triple& t = setup.triples[order[i]];
        positives.push_back(t);
        negatives.push_back(bernoulli_corrupt(t, stats, snapshot, negative_rng, config.negative_retries));
      }
      const BatchStats bs =
          batch_gradient(model.params, model.contexts, positives, negatives, config.margin, grads, options);
      apply_sgd(model.params, grads, config.learning_rate, setup.mask);
      epoch_loss += bs.loss;
    }
    EpochRecord record;
    record.epoch = epoch;
    record.loss = epoch_loss / static_cast<Real>(order.size());
    report.epoch_losses.push_back(record.loss);
    report.epochs_run = epoch;

    bool stop = false;
    if (!setup.valid.empty() && (epoch % config.eval_every == 0 || epoch == config.max_epochs)) {
      const JointTable* joints = nullptr;
      if (setup.fixed_joints) {
        parallel_for(setup.dynamic_objects.size(), config.threads, [&](std::size_t i) {
          const ObjectRef o = setup.dynamic_objects[i];
          auto row = forward_object(model.params, model.contexts.at(o)).joint.transpose();
          (o.kind == ObjectKind::entity ? valid_joints.entities : valid_joints.relations).row(o.id) = row;
        });
        joints = &valid_joints;
      }
      const Real hits10 =
          evaluate(setup.valid, model, train_filter, ks, TieMode::optimistic, config.threads, joints).hits.at(10);
      record.valid_hits10 = hits10;
      if (!report.best_valid_hits10 || hits10 > *report.best_valid_hits10) {
        report.best_valid_hits10 = hits10;
        report.best_epoch = epoch;
        best = model.params;
        stale_evals = 0;
      } else if (++stale_evals >= config.patience) {
        stop = true;
      }
    }
    record.seconds = seconds_since(start);
    if (on_epoch) on_epoch(record);
    if (stop) break;
  }
  if (best) model.params = std::move(*best);
}

}  // namespace

void TrainConfig::validate() const {
  if (dim < 1) throw ConfigError("d must be positive");
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("minibatch size must be positive");
  if (!(margin > 0)) throw ConfigError("margin must be positive");
  if (entity_layers < 1 || entity_layers > 2 || relation_layers < 1 || relation_layers > 2) {
    throw ConfigError("hidden layer counts must be 1 or 2");
  }
  if (max_epochs < 1) throw ConfigError("max-epochs must be positive");
  if (patience < 1) throw ConfigError("patience must be positive");
  if (eval_every < 1) throw ConfigError("eval-every must be positive");
  context.validate();
}

TrainResult train_from_scratch(const Snapshot& snapshot, std::span<const Triple> valid, const TrainConfig& config,
                               const EpochCallback& on_epoch, const ContextTable* contexts) {
  config.validate();
  if (snapshot.num_triples() == 0) throw ConfigError("training set is empty");
  const auto start = Clock::now();
  for (const Triple& t : valid) {
    if (!snapshot.has(t.head) || !snapshot.has(t.tail) || !snapshot.has(t.relation)) {
      throw ContractError("validation triple refers to an object missing from the training set");
    }
  }
  TrainResult result;
  std::mt19937_64 init_rng(derive_seed(config.seed, "init"));
  result.model.params = init_params(snapshot, config.dim, config.entity_layers, config.relation_layers, init_rng);
  ContextConfig cc = config.context;
  cc.seed = config.seed;
  result.model.context_config = cc;
  if (contexts) {
    if (contexts->entities.size() != snapshot.num_entities() ||
        contexts->relations.size() != snapshot.num_relations()) {
      throw IntegrityError("prebuilt context table does not match the snapshot");
    }
    result.model.contexts = *contexts;
  } else {
    result.model.contexts = build_context_table(snapshot, cc, config.threads);
  }
  result.report.validation_triples = valid.size();

  SgdSetup setup;
  setup.snapshot = &snapshot;
  setup.triples = snapshot.triples();
  setup.valid = valid;
  run_sgd(result.model, setup, config, on_epoch, result.report, start);
  result.report.updated_parameters = result.model.params.scalar_count();
  result.report.seconds = seconds_since(start);
  return result;
}

std::vector<Triple> collect_retrain_set(const Snapshot& g_new, const SnapshotDiff& diff,
                                        std::span<const ObjectRef> changed) {
  std::vector<std::uint8_t> take(g_new.num_triples(), 0);
  auto mark = [&](ObjectRef o) {
    for (std::size_t i : g_new.triples_of(o)) take[i] = 1;
  };
  for (EntityId e : diff.emerging_entities) mark(ObjectRef::of(e));
  for (RelationId r : diff.emerging_relations) mark(ObjectRef::of(r));
  for (ObjectRef o : changed) mark(o);
  std::vector<Triple> out;
  for (std::size_t i = 0; i < take.size(); ++i) {
    if (take[i]) out.push_back(g_new.triples()[i]);
  }
  return out;
}

ParameterStore carry_over_params(const ParameterStore& old, const Snapshot& g_new, const SnapshotDiff& diff,
                                 std::mt19937_64& rng) {
  const Eigen::Index d = old.dim();
  const Real bound = uniform_bound(d);
  std::uniform_real_distribution<Real> dist(-bound, bound);
  ParameterStore p;
  p.entity_names = g_new.entity_names();
  p.relation_names = g_new.relation_names();
  p.entity_knowledge.resize(static_cast<Eigen::Index>(g_new.num_entities()), d);
  p.entity_contextual.resize(static_cast<Eigen::Index>(g_new.num_entities()), d);
  p.relation_knowledge.resize(static_cast<Eigen::Index>(g_new.num_relations()), d);
  p.relation_contextual.resize(static_cast<Eigen::Index>(g_new.num_relations()), d);

  std::unordered_map<std::string, Eigen::Index> old_entities, old_relations;
  for (std::size_t i = 0; i < old.entity_names.size(); ++i) old_entities.emplace(old.entity_names[i], i);
  for (std::size_t i = 0; i < old.relation_names.size(); ++i) old_relations.emplace(old.relation_names[i], i);

  auto draw = [&](auto row) {
    for (Eigen::Index j = 0; j < d; ++j) row(j) = dist(rng);
  };
  auto carry = [&](const std::vector<std::string>& names, const std::unordered_map<std::string, Eigen::Index>& index,
                   const RowMatrix& old_k, const RowMatrix& old_c, RowMatrix& k, RowMatrix& c) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      auto it = index.find(names[i]);
      if (it == index.end()) continue;
      k.row(static_cast<Eigen::Index>(i)) = old_k.row(it->second);
      c.row(static_cast<Eigen::Index>(i)) = old_c.row(it->second);
    }
  };
  carry(p.entity_names, old_entities, old.entity_knowledge, old.entity_contextual, p.entity_knowledge,
        p.entity_contextual);
  carry(p.relation_names, old_relations, old.relation_knowledge, old.relation_contextual, p.relation_knowledge,
        p.relation_contextual);
  for (EntityId e : diff.emerging_entities) {
    draw(p.entity_knowledge.row(e.value));
    draw(p.entity_contextual.row(e.value));
  }
  for (RelationId r : diff.emerging_relations) {
    draw(p.relation_knowledge.row(r.value));
    draw(p.relation_contextual.row(r.value));
  }
  p.entity_agcn = old.entity_agcn;
  p.relation_agcn = old.relation_agcn;
  p.entity_gate = old.entity_gate;
  p.relation_gate = old.relation_gate;
  return p;
}

TrainResult train_online(const Snapshot& g_old, const Snapshot& g_new, const Model& model,
                         std::span<const Triple> valid, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const auto start = Clock::now();
  if (!model.params.matches(g_old)) throw IntegrityError("model dictionaries do not match the old snapshot");
  if (model.contexts.entities.size() != g_old.num_entities() ||
      model.contexts.relations.size() != g_old.num_relations()) {
    throw IntegrityError("model context table does not match the old snapshot");
  }
  if (model.params.dim() != config.dim) {
    throw ConfigError("model dimension " + std::to_string(model.params.dim()) + " differs from configured d " +
                      std::to_string(config.dim));
  }
  const ContextConfig& cc = model.context_config;
  const SignatureTable old_signatures = membership_signatures(g_old, cc.max_midpoints, config.threads);
  for (std::size_t i = 0; i < g_old.num_entities() + g_old.num_relations(); ++i) {
    const ObjectRef o = i < g_old.num_entities()
                            ? ObjectRef{ObjectKind::entity, static_cast<std::int32_t>(i)}
                            : ObjectRef{ObjectKind::relation, static_cast<std::int32_t>(i - g_old.num_entities())};
    if (model.contexts.at(o).membership != old_signatures.at(o)) {
      throw IntegrityError("stored context of '" + g_old.name(o) + "' does not match the old snapshot");
    }
  }

  const SnapshotDiff diff = diff_snapshots(g_old, g_new);
  const SignatureTable new_signatures = membership_signatures(g_new, cc.max_midpoints, config.threads);
  const std::vector<ObjectRef> changed = changed_context_objects(g_old, old_signatures, g_new, new_signatures, diff);
  const std::vector<Triple> retrain = collect_retrain_set(g_new, diff, changed);

  TrainResult result;
  TrainReport& report = result.report;
  report.retrain_triples = retrain.size();
  report.emerging_objects = diff.emerging_entities.size() + diff.emerging_relations.size();
  report.removed_objects = diff.removed_entities.size() + diff.removed_relations.size();
  report.changed_objects = changed.size();

  Model& next = result.model;
  std::mt19937_64 init_rng(derive_seed(config.seed, "online-init"));
  next.params = carry_over_params(model.params, g_new, diff, init_rng);
  next.context_config = cc;

  UpdateMask mask = UpdateMask::none(g_new.num_entities(), g_new.num_relations());
  std::vector<ObjectRef> dynamic_objects;
  for (EntityId e : diff.emerging_entities) {
    mask.entity_knowledge[e.index()] = mask.entity_contextual[e.index()] = 1;
    dynamic_objects.push_back(ObjectRef::of(e));
  }
  for (RelationId r : diff.emerging_relations) {
    mask.relation_knowledge[r.index()] = mask.relation_contextual[r.index()] = 1;
    dynamic_objects.push_back(ObjectRef::of(r));
  }
  for (ObjectRef o : changed) {
    (o.kind == ObjectKind::entity ? mask.entity_knowledge : mask.relation_knowledge)[o.index()] = 1;
    dynamic_objects.push_back(o);
  }
  std::sort(dynamic_objects.begin(), dynamic_objects.end());

  // Rebuild contexts of emerging and changed objects; everything else keeps
  // the context it was trained with.
  next.contexts.entities.resize(g_new.num_entities());
  next.contexts.relations.resize(g_new.num_relations());
  const std::size_t ne = g_new.num_entities();
  parallel_for(ne + g_new.num_relations(), config.threads, [&](std::size_t i) {
    const ObjectRef o = i < ne ? ObjectRef{ObjectKind::entity, static_cast<std::int32_t>(i)}
                               : ObjectRef{ObjectKind::relation, static_cast<std::int32_t>(i - ne)};
    if (std::binary_search(dynamic_objects.begin(), dynamic_objects.end(), o)) {
      next.contexts.at(o) = build_context(g_new, o, cc);
    } else {
      const auto old_id = g_old.find(o.kind, g_new.name(o));
      next.contexts.at(o) = remap_context(model.contexts.at(*old_id), g_old, g_new);
    }
  });

  const std::size_t d = static_cast<std::size_t>(config.dim);
  report.updated_parameters =
      d * (2 * (diff.emerging_entities.size() + diff.emerging_relations.size()) + changed.size());
  report.frozen_parameters = next.params.scalar_count() - report.updated_parameters;

  // Validation: given triples, else ceil(1%) of unaffected triples whose
  // objects all occur in some other triple.
  std::vector<Triple> held_out;
  std::span<const Triple> validation = valid;
  if (validation.empty() && !retrain.empty()) {
    const TripleSet touched = make_filter(retrain);
    std::vector<Triple> eligible;
    for (const Triple& t : g_new.triples()) {
      if (touched.contains(t)) continue;
      const bool elsewhere = g_new.triples_of_entity(t.head).size() > 1 &&
                             g_new.triples_of_entity(t.tail).size() > 1 &&
                             g_new.triples_of_relation(t.relation).size() > 1;
      if (elsewhere) eligible.push_back(t);
    }
    const std::size_t want = (eligible.size() + 99) / 100;
    std::mt19937_64 valid_rng(derive_seed(config.seed, "online-valid"));
    std::sample(eligible.begin(), eligible.end(), std::back_inserter(held_out), want, valid_rng);
    validation = held_out;
  }
  report.validation_triples = validation.size();

  if (!retrain.empty()) {
    const JointTable fixed = compute_joint_table(next.params, next.contexts, config.threads);
    SgdSetup setup;
    setup.snapshot = &g_new;
    setup.triples = retrain;
    setup.valid = validation;
    setup.mask = &mask;
    setup.dynamic_objects = dynamic_objects;
    setup.fixed_joints = &fixed;
    run_sgd(next, setup, config, on_epoch, report, start);
  }
  report.seconds = seconds_since(start);
  return result;
}

}  // namespace dkge
