#include "dkge/evaluator.hpp"

#include "dkge/parallel.hpp"

#include <algorithm>
#include <cstdio>

namespace dkge {

namespace {

std::string fixed(Real v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Joint embedding source: precomputed table or on-the-fly forward pass.
class JointLookup {
 public:
  JointLookup(const Model& model, const JointTable* table) : model_(model), table_(table) {}

  void fetch(ObjectRef o, Vector& out) const {
    if (table_) {
      out = o.kind == ObjectKind::entity ? table_->entities.row(o.id).transpose()
                                         : table_->relations.row(o.id).transpose();
    } else {
      out = forward_object(model_.params, model_.contexts.at(o)).joint;
    }
  }

 private:
  const Model& model_;
  const JointTable* table_;
};

void check_triple(const Model& model, const Triple& t) {
  const auto ne = model.params.num_entities();
  if (!t.head.valid() || t.head.index() >= ne || !t.tail.valid() || t.tail.index() >= ne || !t.relation.valid() ||
      t.relation.index() >= model.params.num_relations()) {
    throw LookupError("query triple refers to an unknown object");
  }
}

}  // namespace

std::string MetricsReport::to_string() const {
  std::string s = "mr=" + fixed(mr) + " mrr=" + fixed(mrr);
  for (const auto& [k, v] : hits) s += " hits" + std::to_string(k) + "=" + fixed(v);
  s += " queries=" + std::to_string(queries) + " skipped=" + std::to_string(skipped);
  return s;
}

TripleSet make_filter(std::span<const Triple> triples) { return TripleSet(triples.begin(), triples.end()); }

RankResult rank_entity(const RankQuery& query, const Model& model, const TripleSet& filter, TieMode tie,
                       const JointTable* joints) {
  check_triple(model, query.triple);
  const JointLookup lookup(model, joints);
  const Triple& truth = query.triple;
  Vector h, r, t;
  lookup.fetch(ObjectRef::of(truth.head), h);
  lookup.fetch(ObjectRef::of(truth.relation), r);
  lookup.fetch(ObjectRef::of(truth.tail), t);

  RankResult result;
  result.query = query;
  result.score = score_triple(h, r, t);
  std::size_t better = 0;
  Vector candidate;
  const auto ne = static_cast<std::int32_t>(model.params.num_entities());
  for (std::int32_t c = 0; c < ne; ++c) {
    Triple corrupted = truth;
    (query.direction == Direction::head ? corrupted.head : corrupted.tail) = EntityId{c};
    if (corrupted == truth || filter.contains(corrupted)) continue;
    lookup.fetch({ObjectKind::entity, c}, candidate);
    const Real f = query.direction == Direction::head ? score_triple(candidate, r, t) : score_triple(h, r, candidate);
    if (f < result.score || (tie == TieMode::pessimistic && f == result.score)) ++better;
  }
  result.rank = better + 1;
  return result;
}

MetricsReport summarize_ranks(std::span<const std::size_t> ranks, std::span<const int> ks) {
  MetricsReport m;
  m.queries = ranks.size();
  for (int k : ks) m.hits[k] = 0;
  if (ranks.empty()) return m;
  Real sum = 0;
  Real inv = 0;
  for (std::size_t rank : ranks) {
    sum += static_cast<Real>(rank);
    inv += Real(1) / static_cast<Real>(rank);
    for (auto& [k, h] : m.hits) {
      if (rank <= static_cast<std::size_t>(k)) h += 1;
    }
  }
  const auto n = static_cast<Real>(ranks.size());
  m.mr = sum / n;
  m.mrr = inv / n;
  for (auto& [k, h] : m.hits) h /= n;
  return m;
}

MetricsReport evaluate(std::span<const Triple> test, const Model& model, const TripleSet& filter,
                       std::span<const int> ks, TieMode tie, unsigned threads, const JointTable* joints) {
  if (test.empty()) throw ContractError("evaluation needs at least one test triple");
  JointTable local;
  if (joints == nullptr) {
    local = compute_joint_table(model.params, model.contexts, threads);
    joints = &local;
  }
  std::vector<std::size_t> ranks(test.size() * 2);
  parallel_for(ranks.size(), threads, [&](std::size_t i) {
    const RankQuery q{i % 2 == 0 ? Direction::head : Direction::tail, test[i / 2]};
    ranks[i] = rank_entity(q, model, filter, tie, joints).rank;
  });
  return summarize_ranks(ranks, ks);
}

std::vector<Answer> answer(EntityId head, RelationId relation, std::size_t k, const Model& model,
                           const JointTable* joints) {
  if (!head.valid() || head.index() >= model.params.num_entities()) throw LookupError("unknown head entity");
  if (!relation.valid() || relation.index() >= model.params.num_relations()) throw LookupError("unknown relation");
  const JointLookup lookup(model, joints);
  Vector h, r, t;
  lookup.fetch(ObjectRef::of(head), h);
  lookup.fetch(ObjectRef::of(relation), r);
  std::vector<Answer> all;
  all.reserve(model.params.num_entities());
  for (std::size_t c = 0; c < model.params.num_entities(); ++c) {
    const EntityId e{static_cast<std::int32_t>(c)};
    lookup.fetch(ObjectRef::of(e), t);
    all.push_back({e, score_triple(h, r, t)});
  }
  std::stable_sort(all.begin(), all.end(), [](const Answer& a, const Answer& b) { return a.score < b.score; });
  if (all.size() > k) all.resize(k);
  return all;
}

}  // namespace dkge
