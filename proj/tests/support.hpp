#pragma once

// Fixtures and brute-force reference implementations shared by the unit
// tests and the acceptance binary.

#include "dkge/checkpoint.hpp"
#include "dkge/evaluator.hpp"
#include "dkge/kg_store.hpp"
#include "dkge/model.hpp"
#include "dkge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace dkge::testing {

// The running example graph. T+1 has eight triples; T lacks (e1,r1,e2);
// T+2 adds e7, r7 and the triples (e7,r7,e6), (e6,r5,e3).
inline std::vector<NamedTriple> example_t1_triples() {
  return {{"e1", "r1", "e2"}, {"e1", "r1", "e5"}, {"e2", "r2", "e5"}, {"e1", "r5", "e3"},
          {"e3", "r4", "e2"}, {"e3", "r1", "e4"}, {"e1", "r6", "e6"}, {"e5", "r3", "e4"}};
}

inline std::vector<NamedTriple> example_t0_triples() {
  auto t = example_t1_triples();
  t.erase(t.begin());
  return t;
}

inline std::vector<NamedTriple> example_t2_triples() {
  auto t = example_t1_triples();
  t.push_back({"e7", "r7", "e6"});
  t.push_back({"e6", "r5", "e3"});
  return t;
}

inline Snapshot example_t0() { return Snapshot::from_named(0, example_t0_triples()); }
inline Snapshot example_t1() { return Snapshot::from_named(1, example_t1_triples()); }
inline Snapshot example_t2() { return Snapshot::from_named(2, example_t2_triples()); }

inline std::set<NamedTriple> expected_example_retrain() {
  return {{"e3", "r1", "e4"}, {"e3", "r4", "e2"}, {"e1", "r5", "e3"},
          {"e1", "r6", "e6"}, {"e6", "r5", "e3"}, {"e7", "r7", "e6"}};
}

inline std::set<std::string> names_of(const Snapshot& s, std::span<const ObjectRef> objects) {
  std::set<std::string> out;
  for (ObjectRef o : objects) out.insert(s.name(o));
  return out;
}

inline std::set<NamedTriple> named_set(const Snapshot& s, std::span<const Triple> triples) {
  std::set<NamedTriple> out;
  for (const Triple& t : triples) out.insert(s.named(t));
  return out;
}

// Vertex keys of a context by name: "e1", "r1", "(r1,r2)", "(r3)".
inline std::string vertex_name(const ContextVertex& v, const Snapshot& s) {
  switch (v.kind) {
    case VertexKind::entity:
      return s.entity_name(EntityId{v.first});
    case VertexKind::relation:
      return s.relation_name(RelationId{v.first});
    case VertexKind::relation_path:
      return "(" + s.relation_name(RelationId{v.first}) +
             (v.second >= 0 ? "," + s.relation_name(RelationId{v.second}) : std::string()) + ")";
  }
  return {};
}

inline std::set<std::string> vertex_names(const ContextSubgraph& c, const Snapshot& s) {
  std::set<std::string> out;
  for (const auto& v : c.vertices) out.insert(vertex_name(v, s));
  return out;
}

inline std::set<std::pair<std::string, std::string>> edge_names(const ContextSubgraph& c, const Snapshot& s) {
  std::set<std::pair<std::string, std::string>> out;
  for (const auto& [i, j] : c.edges) {
    auto a = vertex_name(c.vertices[i], s);
    auto b = vertex_name(c.vertices[j], s);
    if (b < a) std::swap(a, b);
    out.emplace(a, b);
  }
  return out;
}

// Random multi-relational graph; every triple is distinct.
inline std::vector<NamedTriple> random_graph(std::mt19937_64& rng, std::size_t entities, std::size_t relations,
                                             std::size_t triples, const std::string& prefix = "") {
  std::uniform_int_distribution<std::size_t> pe(0, entities - 1), pr(0, relations - 1);
  std::set<NamedTriple> seen;
  std::vector<NamedTriple> out;
  std::size_t attempts = 0;
  while (out.size() < triples && attempts++ < triples * 100) {
    const auto h = pe(rng), t = pe(rng);
    if (h == t) continue;
    NamedTriple nt{prefix + "e" + std::to_string(h), prefix + "r" + std::to_string(pr(rng)),
                   prefix + "e" + std::to_string(t)};
    if (seen.insert(nt).second) out.push_back(nt);
  }
  return out;
}

// Deletes and adds up to churn * |old| triples; additions may introduce new
// entities and relations.
inline std::vector<NamedTriple> random_update(std::mt19937_64& rng, std::vector<NamedTriple> old, double churn,
                                              std::size_t entities, std::size_t relations) {
  const auto budget = std::max<std::size_t>(1, static_cast<std::size_t>(churn * static_cast<double>(old.size())));
  std::uniform_int_distribution<std::size_t> split(0, budget);
  const std::size_t deletions = std::min(split(rng), old.size() - 1);
  const std::size_t additions = budget - deletions;
  std::shuffle(old.begin(), old.end(), rng);
  old.resize(old.size() - deletions);
  std::set<NamedTriple> seen(old.begin(), old.end());
  std::uniform_int_distribution<std::size_t> pe(0, entities + 2), pr(0, relations);
  std::size_t added = 0, attempts = 0;
  while (added < additions && attempts++ < additions * 100) {
    const auto h = pe(rng), t = pe(rng);
    if (h == t) continue;
    NamedTriple nt{"e" + std::to_string(h), "r" + std::to_string(pr(rng)), "e" + std::to_string(t)};
    if (seen.insert(nt).second) {
      old.push_back(nt);
      ++added;
    }
  }
  return old;
}

// T^ol by definition: triples of g_new with an emerging object or an object
// whose context membership (by name) differs between the snapshots.
inline std::set<NamedTriple> brute_force_retrain(const Snapshot& g_old, const Snapshot& g_new) {
  auto members = [](const Snapshot& s, ObjectRef o) { return vertex_names(raw_context(s, o), s); };
  std::set<std::string> dynamic_entities, dynamic_relations;
  for (std::size_t i = 0; i < g_new.num_entities(); ++i) {
    const ObjectRef o{ObjectKind::entity, static_cast<std::int32_t>(i)};
    const auto old = g_old.find(ObjectKind::entity, g_new.name(o));
    if (!old || members(g_old, *old) != members(g_new, o)) dynamic_entities.insert(g_new.name(o));
  }
  for (std::size_t i = 0; i < g_new.num_relations(); ++i) {
    const ObjectRef o{ObjectKind::relation, static_cast<std::int32_t>(i)};
    const auto old = g_old.find(ObjectKind::relation, g_new.name(o));
    if (!old || members(g_old, *old) != members(g_new, o)) dynamic_relations.insert(g_new.name(o));
  }
  std::set<NamedTriple> out;
  for (const Triple& t : g_new.triples()) {
    const NamedTriple n = g_new.named(t);
    if (dynamic_entities.contains(n.head) || dynamic_entities.contains(n.tail) ||
        dynamic_relations.contains(n.relation)) {
      out.insert(n);
    }
  }
  return out;
}

// Sort-and-search filtered rank: every candidate is scored through a full
// forward pass, the unfiltered candidates are sorted, and the rank is the
// position of the first score not better than the truth.
inline std::size_t brute_force_rank(const Model& model, const Triple& truth, bool replace_head,
                                    const TripleSet& filter, bool optimistic) {
  const Real true_score = forward_triple(truth, model.params, model.contexts).score;
  std::vector<Real> scores;
  for (std::size_t c = 0; c < model.params.num_entities(); ++c) {
    Triple t = truth;
    (replace_head ? t.head : t.tail) = EntityId{static_cast<std::int32_t>(c)};
    if (t == truth || filter.contains(t)) continue;
    scores.push_back(forward_triple(t, model.params, model.contexts).score);
  }
  std::sort(scores.begin(), scores.end());
  const auto it = optimistic ? std::lower_bound(scores.begin(), scores.end(), true_score)
                             : std::upper_bound(scores.begin(), scores.end(), true_score);
  return static_cast<std::size_t>(it - scores.begin()) + 1;
}

struct ReferenceMetrics {
  Real mr = 0;
  Real mrr = 0;
  std::map<int, Real> hits;
};

inline ReferenceMetrics brute_force_metrics(const Model& model, std::span<const Triple> test, const TripleSet& filter,
                                            std::span<const int> ks, bool optimistic = true) {
  std::vector<std::size_t> ranks;
  for (const Triple& t : test) {
    ranks.push_back(brute_force_rank(model, t, true, filter, optimistic));
    ranks.push_back(brute_force_rank(model, t, false, filter, optimistic));
  }
  ReferenceMetrics m;
  std::size_t rank_sum = 0;
  Real inverse_sum = 0;
  for (std::size_t r : ranks) {
    rank_sum += r;
    inverse_sum += Real(1) / static_cast<Real>(r);
  }
  const auto n = static_cast<Real>(ranks.size());
  m.mr = static_cast<Real>(rank_sum) / n;
  m.mrr = inverse_sum / n;
  for (int k : ks) {
    const auto c = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= std::size_t(k); });
    m.hits[k] = static_cast<Real>(c) / n;
  }
  return m;
}

// Every scalar the model trains, addressed uniformly for finite differences.
inline std::vector<Real*> parameter_slots(ParameterStore& p, const std::string& group) {
  std::vector<Real*> out;
  auto all = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  };
  if (group == "entity_knowledge") all(p.entity_knowledge);
  if (group == "entity_contextual") all(p.entity_contextual);
  if (group == "relation_knowledge") all(p.relation_knowledge);
  if (group == "relation_contextual") all(p.relation_contextual);
  if (group == "entity_gate") all(p.entity_gate);
  if (group == "relation_gate") all(p.relation_gate);
  if (group == "entity_attention") all(p.entity_agcn.attention);
  if (group == "relation_attention") all(p.relation_agcn.attention);
  if (group == "entity_weights") {
    for (auto& w : p.entity_agcn.weights) all(w);
  }
  if (group == "relation_weights") {
    for (auto& w : p.relation_agcn.weights) all(w);
  }
  return out;
}

inline const std::vector<std::string>& parameter_groups() {
  static const std::vector<std::string> groups{
      "entity_knowledge", "entity_contextual", "relation_knowledge", "relation_contextual", "entity_gate",
      "relation_gate",    "entity_attention",  "relation_attention", "entity_weights",      "relation_weights"};
  return groups;
}

// Analytic gradient laid out like parameter_slots.
inline std::vector<Real> analytic_slots(const ParameterStore& p, const Gradients& g, const std::string& group) {
  ParameterStore shape = p;
  shape.entity_knowledge = g.entity_knowledge.dense();
  shape.entity_contextual = g.entity_contextual.dense();
  shape.relation_knowledge = g.relation_knowledge.dense();
  shape.relation_contextual = g.relation_contextual.dense();
  shape.entity_gate = g.entity_gate;
  shape.relation_gate = g.relation_gate;
  shape.entity_agcn = g.entity_agcn;
  shape.relation_agcn = g.relation_agcn;
  std::vector<Real> out;
  for (Real* v : parameter_slots(shape, group)) out.push_back(*v);
  return out;
}

// Signs of every non-smooth point the loss passes through: ReLU inputs in
// both AGCN stages, the components of h + r - t, and the hinge argument.
inline std::vector<std::int8_t> kink_pattern(const ParameterStore& params, const ContextTable& contexts,
                                             std::span<const Triple> pos, std::span<const Triple> neg, Real margin) {
  std::vector<std::int8_t> out;
  auto sign = [&](Real v) { out.push_back(static_cast<std::int8_t>((v > 0) - (v < 0))); };
  auto object = [&](const ObjectForward& f) {
    for (const auto& m : f.cache.pre_activations) {
      for (Eigen::Index i = 0; i < m.size(); ++i) sign(m.data()[i]);
    }
    for (Eigen::Index i = 0; i < f.cache.attention_input.size(); ++i) sign(f.cache.attention_input.data()[i]);
  };
  auto triple = [&](const Triple& t) {
    const TripleForward f = forward_triple(t, params, contexts);
    object(f.head);
    object(f.relation);
    object(f.tail);
    const Vector diff = f.head.joint + f.relation.joint - f.tail.joint;
    for (Eigen::Index i = 0; i < diff.size(); ++i) sign(diff(i));
    return f.score;
  };
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const Real fp = triple(pos[i]);
    const Real fn = triple(neg[i]);
    sign(fp + margin - fn);
  }
  return out;
}

struct GradientCheck {
  bool generic = true;   // no kink crossed by any perturbation
  Real worst_relative = 0;
  std::string worst_group;
  std::size_t checked = 0;
};

// Central differences of batch_loss against batch_gradient for every scalar.
inline GradientCheck check_gradients(ParameterStore params, const ContextTable& contexts,
                                     std::span<const Triple> pos, std::span<const Triple> neg, Real margin,
                                     Real step = 1e-4, Real floor = 1e-3) {
  GradientCheck result;
  Gradients grads;
  batch_gradient(params, contexts, pos, neg, margin, grads);
  const auto base_pattern = kink_pattern(params, contexts, pos, neg, margin);
  for (const auto& group : parameter_groups()) {
    const std::vector<Real> analytic = analytic_slots(params, grads, group);
    const std::vector<Real*> slots = parameter_slots(params, group);
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const Real saved = *slots[i];
      *slots[i] = saved + step;
      const Real up = batch_loss(params, contexts, pos, neg, margin);
      if (kink_pattern(params, contexts, pos, neg, margin) != base_pattern) result.generic = false;
      *slots[i] = saved - step;
      const Real down = batch_loss(params, contexts, pos, neg, margin);
      if (kink_pattern(params, contexts, pos, neg, margin) != base_pattern) result.generic = false;
      *slots[i] = saved;
      if (!result.generic) return result;
      const Real numeric = (up - down) / (2 * step);
      const Real rel = std::abs(numeric - analytic[i]) /
                       std::max({floor, std::abs(numeric), std::abs(analytic[i])});
      if (rel > result.worst_relative) {
        result.worst_relative = rel;
        result.worst_group = group;
      }
      ++result.checked;
    }
  }
  return result;
}

// Temporary directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::size_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("dkge-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_named(const std::filesystem::path& path, std::span<const NamedTriple> triples) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  for (const auto& t : triples) out << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Small config for fast tests.
inline TrainConfig tiny_config(Eigen::Index d = 8, std::size_t epochs = 5) {
  TrainConfig c;
  c.dim = d;
  c.learning_rate = 0.01;
  c.batch_size = 16;
  c.margin = 2;
  c.max_epochs = epochs;
  c.eval_every = 1;
  c.patience = 100;
  return c;
}

}  // namespace dkge::testing
