#pragma once

#include "dkge/agcn.hpp"
#include "dkge/context.hpp"
#include "dkge/kg_store.hpp"
#include "dkge/types.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dkge {

// All trainable parameters. Row i of an embedding matrix belongs to the
// object with id i in the snapshot the store was built for.
struct ParameterStore {
  std::vector<std::string> entity_names;
  std::vector<std::string> relation_names;
  RowMatrix entity_knowledge;
  RowMatrix entity_contextual;
  RowMatrix relation_knowledge;
  RowMatrix relation_contextual;
  AgcnParams<Real> entity_agcn;
  AgcnParams<Real> relation_agcn;
  Vector entity_gate;    // pre-activation; the gate itself is logistic(entity_gate)
  Vector relation_gate;

  Eigen::Index dim() const { return entity_gate.size(); }
  std::size_t num_entities() const { return entity_names.size(); }
  std::size_t num_relations() const { return relation_names.size(); }

  auto knowledge(ObjectRef o) const {
    return o.kind == ObjectKind::entity ? entity_knowledge.row(o.id) : relation_knowledge.row(o.id);
  }
  auto contextual(ObjectRef o) const {
    return o.kind == ObjectKind::entity ? entity_contextual.row(o.id) : relation_contextual.row(o.id);
  }
  const AgcnParams<Real>& agcn(ObjectKind k) const { return k == ObjectKind::entity ? entity_agcn : relation_agcn; }
  const Vector& gate(ObjectKind k) const { return k == ObjectKind::entity ? entity_gate : relation_gate; }

  // Same dictionaries, in the same order, as `snapshot`.
  bool matches(const Snapshot& snapshot) const;
  std::size_t scalar_count() const;

  friend bool operator==(const ParameterStore& a, const ParameterStore& b);
};

// Parameters plus the context subgraphs they were trained against.
struct Model {
  ParameterStore params;
  ContextTable contexts;
  ContextConfig context_config;
};

Real uniform_bound(Eigen::Index d);

// Embeddings, AGCN weights and attention vectors ~ U(-6/sqrt(d), 6/sqrt(d));
// gate pre-activations are zero.
ParameterStore init_params(const Snapshot& snapshot, Eigen::Index d, std::size_t entity_layers,
                           std::size_t relation_layers, std::mt19937_64& rng);

Vector logistic(const Vector& x);
Vector joint_embedding(const Vector& knowledge, const Vector& subgraph, const Vector& gate_pre);
Real score_triple(const Vector& head, const Vector& relation, const Vector& tail);
Real margin_loss(Real f_pos, Real f_neg, Real margin);

struct RelationStats {
  std::vector<Real> tails_per_head;
  std::vector<Real> heads_per_tail;

  Real head_probability(RelationId r) const {
    const Real tph = tails_per_head.at(r.index());
    const Real hpt = heads_per_tail.at(r.index());
    return tph / (tph + hpt);
  }
};

RelationStats compute_relation_stats(const Snapshot& snapshot);

// Replaces the head with probability tph/(tph+hpt), else the tail, by an
// entity drawn uniformly; redraws while the result is a known triple, up to
// `max_retries` times.
Triple bernoulli_corrupt(const Triple& triple, const RelationStats& stats, const Snapshot& snapshot,
                         std::mt19937_64& rng, std::size_t max_retries = 100);

// Rows of the AGCN input matrix for `context`.
Matrix context_features(const ParameterStore& params, const ContextSubgraph& context);

struct ObjectForward {
  Vector knowledge;
  Vector subgraph;
  Vector joint;
  AgcnCache<Real> cache;
};

ObjectForward forward_object(const ParameterStore& params, const ContextSubgraph& context);

struct TripleForward {
  Real score = 0;
  ObjectForward head;
  ObjectForward relation;
  ObjectForward tail;
};

TripleForward forward_triple(const Triple& triple, const ParameterStore& params, const ContextTable& contexts);

// Which parameters may change. A missing mask means everything is trainable.
struct UpdateMask {
  bool shared = true;  // AGCN weights, attention vectors, gates
  std::vector<std::uint8_t> entity_knowledge;
  std::vector<std::uint8_t> entity_contextual;
  std::vector<std::uint8_t> relation_knowledge;
  std::vector<std::uint8_t> relation_contextual;

  static UpdateMask none(std::size_t entities, std::size_t relations);
  bool knowledge(ObjectRef o) const {
    return (o.kind == ObjectKind::entity ? entity_knowledge : relation_knowledge)[o.index()] != 0;
  }
  bool contextual(ObjectRef o) const {
    return (o.kind == ObjectKind::entity ? entity_contextual : relation_contextual)[o.index()] != 0;
  }
  // True when no gradient can reach anything trainable through o's joint embedding.
  bool is_static(ObjectRef o, const ContextSubgraph& context) const;
};

// Gradient rows for one embedding table; only touched rows are non-zero.
class SparseRows {
 public:
  void reset(Eigen::Index rows, Eigen::Index cols);
  template <typename Derived>
  void add(Eigen::Index row, const Eigen::MatrixBase<Derived>& v) {
    if (!flag_[row]) {
      flag_[row] = 1;
      touched_.push_back(static_cast<std::int32_t>(row));
      values_.row(row).setZero();
    }
    values_.row(row) += v;
  }
  std::span<const std::int32_t> touched() const { return touched_; }
  auto row(Eigen::Index r) const { return values_.row(r); }
  RowMatrix dense() const;

 private:
  RowMatrix values_;
  std::vector<std::int32_t> touched_;
  std::vector<std::uint8_t> flag_;
};

struct Gradients {
  SparseRows entity_knowledge;
  SparseRows entity_contextual;
  SparseRows relation_knowledge;
  SparseRows relation_contextual;
  AgcnParams<Real> entity_agcn;
  AgcnParams<Real> relation_agcn;
  Vector entity_gate;
  Vector relation_gate;

  void reset(const ParameterStore& params);
};

// Joint embeddings of every entity and relation.
struct JointTable {
  RowMatrix entities;
  RowMatrix relations;

  Vector at(ObjectRef o) const {
    return o.kind == ObjectKind::entity ? Vector(entities.row(o.id).transpose())
                                        : Vector(relations.row(o.id).transpose());
  }
};

JointTable compute_joint_table(const ParameterStore& params, const ContextTable& contexts, unsigned threads = 1);

struct BatchOptions {
  unsigned threads = 1;
  const UpdateMask* mask = nullptr;
  // Joint embeddings reused for objects that are static under `mask`.
  const JointTable* fixed_joints = nullptr;
};

struct BatchStats {
  Real loss = 0;
  std::size_t active_pairs = 0;
};

// Sum over pairs of margin_loss(f(pos_i), f(neg_i), margin).
Real batch_loss(const ParameterStore& params, const ContextTable& contexts, std::span<const Triple> positives,
                std::span<const Triple> negatives, Real margin);

// Loss and its gradient; frozen parameters (per options.mask) get no gradient.
BatchStats batch_gradient(const ParameterStore& params, const ContextTable& contexts,
                          std::span<const Triple> positives, std::span<const Triple> negatives, Real margin,
                          Gradients& grads, const BatchOptions& options = {});

// params -= lr * grads, for trainable parameters only.
void apply_sgd(ParameterStore& params, const Gradients& grads, Real learning_rate, const UpdateMask* mask = nullptr);

}  // namespace dkge
