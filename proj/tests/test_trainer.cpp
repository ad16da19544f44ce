#include "doctest.h"
#include "support.hpp"

using namespace dkge;
using namespace dkge::testing;

namespace {

bool same_row(const RowMatrix& a, Eigen::Index i, const RowMatrix& b, Eigen::Index j) {
  return (a.row(i).array() == b.row(j).array()).all();
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.dim == 100);
  CHECK(c.learning_rate == 0.005);
  CHECK(c.batch_size == 500);
  CHECK(c.margin == 10);
  CHECK(c.max_epochs == 800);
  c.entity_layers = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.context.cap = 41;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("empty training set is a configuration error") {
  CHECK_THROWS_AS(train_from_scratch(Snapshot{}, {}, tiny_config()), ConfigError);
}

TEST_CASE("validation triples must use known objects") {
  const Snapshot s = example_t1();
  const std::vector<Triple> valid{{EntityId{42}, RelationId{0}, EntityId{0}}};
  CHECK_THROWS_AS(train_from_scratch(s, valid, tiny_config()), ContractError);
}

TEST_CASE("loss falls on a toy graph, including with one oversized minibatch") {
  const Snapshot s = example_t1();
  TrainConfig c = tiny_config(16, 200);
  c.batch_size = 1000;
  std::vector<EpochRecord> log;
  const TrainResult r = train_from_scratch(s, {}, c, [&](const EpochRecord& e) { log.push_back(e); });
  CHECK(r.report.epochs_run == 200);
  CHECK(log.size() == 200);
  CHECK(r.report.epoch_losses.back() < 0.1 * r.report.epoch_losses.front());
  CHECK_FALSE(log.front().valid_hits10.has_value());
}

TEST_CASE("early stopping keeps the best validation epoch") {
  std::mt19937_64 rng(2);
  const auto g = random_graph(rng, 12, 3, 50);
  const Snapshot s = Snapshot::from_named(0, g);
  const std::vector<Triple> valid(s.triples().begin(), s.triples().begin() + 5);
  TrainConfig c = tiny_config(8, 60);
  c.patience = 2;
  c.eval_every = 5;
  std::vector<EpochRecord> log;
  const TrainResult r = train_from_scratch(s, valid, c, [&](const EpochRecord& e) { log.push_back(e); });
  CHECK(r.report.epochs_run <= c.max_epochs);
  REQUIRE(r.report.best_valid_hits10.has_value());
  Real best_seen = -1;
  for (const auto& e : log) {
    if (e.valid_hits10) {
      CHECK(e.epoch % 5 == 0);
      best_seen = std::max(best_seen, *e.valid_hits10);
    }
  }
  CHECK(*r.report.best_valid_hits10 == best_seen);
  const JointTable joints = compute_joint_table(r.model.params, r.model.contexts);
  const std::vector<int> ks{10};
  CHECK(evaluate(valid, r.model, make_filter(s.triples()), ks, TieMode::optimistic, 1, &joints).hits.at(10) ==
        best_seen);
}

TEST_CASE("training is deterministic for a seed and sensitive to it") {
  const Snapshot s = example_t2();
  TrainConfig c = tiny_config(8, 10);
  c.seed = 5;
  const TrainResult a = train_from_scratch(s, {}, c);
  c.threads = 3;
  const TrainResult b = train_from_scratch(s, {}, c);
  CHECK(a.model.params == b.model.params);
  CHECK(a.report.epoch_losses == b.report.epoch_losses);
  c.seed = 6;
  CHECK_FALSE(train_from_scratch(s, {}, c).model.params == a.model.params);
}

TEST_CASE("retrain set of the running example") {
  const Snapshot t1 = example_t1();
  const Snapshot t2 = example_t2();
  const SnapshotDiff diff = diff_snapshots(t1, t2);
  const auto changed = changed_context_objects(t1, t2, diff);
  const auto retrain = collect_retrain_set(t2, diff, changed);
  CHECK(named_set(t2, retrain) == expected_example_retrain());
  CHECK(retrain.size() == 6);
  CHECK(collect_retrain_set(t1, diff_snapshots(t1, example_t1()), {}).empty());
}

TEST_CASE("retrain set equals a brute-force filter on random traces") {
  std::mt19937_64 rng(21);
  for (int trace = 0; trace < 30; ++trace) {
    const auto old_triples = random_graph(rng, 30, 5, 90);
    const Snapshot a = Snapshot::from_named(0, old_triples);
    const Snapshot b = Snapshot::from_named(1, random_update(rng, old_triples, 0.1, 30, 5));
    const SnapshotDiff diff = diff_snapshots(a, b);
    const auto retrain = collect_retrain_set(b, diff, changed_context_objects(a, b, diff));
    CHECK(named_set(b, retrain) == brute_force_retrain(a, b));
    for (const Triple& t : retrain) CHECK(b.contains(t));
  }
}

TEST_CASE("online update of the running example touches only the expected parameters") {
  const Snapshot t1 = example_t1();
  const Snapshot t2 = example_t2();
  TrainConfig c = tiny_config(8, 20);
  const TrainResult base = train_from_scratch(t1, {}, c);
  const std::vector<Triple> valid{*t2.resolve({"e1", "r1", "e5"})};
  const TrainResult up = train_online(t1, t2, base.model, valid, c);
  CHECK(up.report.retrain_triples == 6);
  CHECK(up.report.emerging_objects == 2);
  CHECK(up.report.changed_objects == 3);
  CHECK(up.report.updated_parameters == std::size_t(8 * (2 * 2 + 3)));
  CHECK(up.report.updated_parameters + up.report.frozen_parameters == up.model.params.scalar_count());

  const ParameterStore& p0 = base.model.params;
  const ParameterStore& p1 = up.model.params;
  CHECK(p1.entity_agcn.weights == p0.entity_agcn.weights);
  CHECK(p1.relation_agcn.attention == p0.relation_agcn.attention);
  CHECK(p1.entity_gate == p0.entity_gate);
  CHECK(p1.relation_gate == p0.relation_gate);
  const std::set<std::string> knowledge_changes{"e3", "e6", "e7", "r5", "r7"};
  const std::set<std::string> contextual_changes{"e7", "r7"};
  for (const auto& name : t2.entity_names()) {
    const auto i = t2.entity(name).value;
    const auto j = t1.find_entity(name);
    if (!j) continue;
    CHECK_MESSAGE(same_row(p1.entity_knowledge, i, p0.entity_knowledge, j->value) != knowledge_changes.contains(name),
                  name);
    CHECK(same_row(p1.entity_contextual, i, p0.entity_contextual, j->value));
  }
  for (const auto& name : t2.relation_names()) {
    const auto i = t2.relation(name).value;
    const auto j = t1.find_relation(name);
    if (!j) continue;
    CHECK_MESSAGE(
        same_row(p1.relation_knowledge, i, p0.relation_knowledge, j->value) != knowledge_changes.contains(name), name);
    CHECK(same_row(p1.relation_contextual, i, p0.relation_contextual, j->value));
  }
}

TEST_CASE("identical snapshots mean zero retraining and an unchanged model") {
  const Snapshot t1 = example_t1();
  TrainConfig c = tiny_config(8, 5);
  const TrainResult base = train_from_scratch(t1, {}, c);
  const TrainResult up = train_online(t1, example_t1(), base.model, {}, c);
  CHECK(up.report.retrain_triples == 0);
  CHECK(up.report.epochs_run == 0);
  CHECK(up.model.params == base.model.params);
}

TEST_CASE("deleting an isolated component only removes its objects") {
  auto triples = example_t1_triples();
  triples.push_back({"x1", "rx", "x2"});
  const Snapshot a = Snapshot::from_named(0, triples);
  const Snapshot b = example_t1();
  TrainConfig c = tiny_config(8, 5);
  const TrainResult base = train_from_scratch(a, {}, c);
  const TrainResult up = train_online(a, b, base.model, {}, c);
  CHECK(up.report.removed_objects == 3);
  CHECK(up.report.retrain_triples == 0);
  CHECK(up.report.epochs_run == 0);
  CHECK(up.model.params.num_entities() == 6);
  CHECK(up.model.params.matches(b));
}

TEST_CASE("online learning refuses a model of another snapshot") {
  const Snapshot t1 = example_t1();
  TrainConfig c = tiny_config(8, 2);
  const TrainResult base = train_from_scratch(t1, {}, c);
  CHECK_THROWS_AS(train_online(example_t2(), t1, base.model, {}, c), IntegrityError);
  TrainConfig wrong_d = c;
  wrong_d.dim = 9;
  CHECK_THROWS_AS(train_online(t1, example_t2(), base.model, {}, wrong_d), ConfigError);
}

TEST_CASE("untouched parameters and scores survive random updates bit for bit") {
  std::mt19937_64 rng(33);
  for (int trace = 0; trace < 8; ++trace) {
    const auto old_triples = random_graph(rng, 40, 5, 100);
    const Snapshot a = Snapshot::from_named(0, old_triples);
    const Snapshot b = Snapshot::from_named(1, random_update(rng, old_triples, 0.08, 40, 5));
    TrainConfig c = tiny_config(6, 3);
    c.seed = static_cast<std::uint64_t>(trace);
    const TrainResult base = train_from_scratch(a, {}, c);
    const TrainResult up = train_online(a, b, base.model, {}, c);
    const SnapshotDiff diff = diff_snapshots(a, b);
    const auto changed = changed_context_objects(a, b, diff);
    std::set<ObjectRef> touched(changed.begin(), changed.end());
    for (EntityId e : diff.emerging_entities) touched.insert(ObjectRef::of(e));
    for (RelationId r : diff.emerging_relations) touched.insert(ObjectRef::of(r));
    for (const Triple& t : b.triples()) {
      if (touched.contains(ObjectRef::of(t.head)) || touched.contains(ObjectRef::of(t.relation)) ||
          touched.contains(ObjectRef::of(t.tail))) {
        continue;
      }
      const Triple old = *a.resolve(b.named(t));
      CHECK(forward_triple(t, up.model.params, up.model.contexts).score ==
            forward_triple(old, base.model.params, base.model.contexts).score);
    }
  }
}
