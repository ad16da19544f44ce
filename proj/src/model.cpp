#include "dkge/model.hpp"

#include "dkge/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace dkge {

namespace {

template <typename A, typename B>
bool same(const A& a, const B& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
}

bool same_agcn(const AgcnParams<Real>& a, const AgcnParams<Real>& b) {
  if (a.weights.size() != b.weights.size() || !same(a.attention, b.attention)) return false;
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    if (!same(a.weights[l], b.weights[l])) return false;
  }
  return true;
}

void fill_uniform(RowMatrix& m, Eigen::Index rows, Eigen::Index cols, Real bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<Real> dist(-bound, bound);
  m.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  }
}

AgcnParams<Real> init_agcn(Eigen::Index d, std::size_t layers, Real bound, std::mt19937_64& rng) {
  if (layers < 1 || layers > 2) throw ConfigError("hidden layer count must be 1 or 2");
  std::uniform_real_distribution<Real> dist(-bound, bound);
  AgcnParams<Real> p;
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix w(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) w(i, j) = dist(rng);
    }
    p.weights.push_back(std::move(w));
  }
  p.attention.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) p.attention(i) = dist(rng);
  return p;
}

Vector l1_sign(const Vector& residual) {
  return residual.unaryExpr([](Real x) { return x > 0 ? Real(1) : (x < 0 ? Real(-1) : Real(0)); });
}

// Per-object backward result, scattered into Gradients in object order.
struct ObjectGradient {
  Vector knowledge;
  Vector gate;
  Matrix input;
};

}  // namespace

bool ParameterStore::matches(const Snapshot& snapshot) const {
  return entity_names == snapshot.entity_names() && relation_names == snapshot.relation_names();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = entity_knowledge.size() + entity_contextual.size() + relation_knowledge.size() +
                  relation_contextual.size() + entity_gate.size() + relation_gate.size();
  for (const auto* a : {&entity_agcn, &relation_agcn}) {
    n += a->attention.size();
    for (const auto& w : a->weights) n += w.size();
  }
  return n;
}

bool operator==(const ParameterStore& a, const ParameterStore& b) {
  return a.entity_names == b.entity_names && a.relation_names == b.relation_names &&
         same(a.entity_knowledge, b.entity_knowledge) && same(a.entity_contextual, b.entity_contextual) &&
         same(a.relation_knowledge, b.relation_knowledge) && same(a.relation_contextual, b.relation_contextual) &&
         same_agcn(a.entity_agcn, b.entity_agcn) && same_agcn(a.relation_agcn, b.relation_agcn) &&
         same(a.entity_gate, b.entity_gate) && same(a.relation_gate, b.relation_gate);
}

Real uniform_bound(Eigen::Index d) { return Real(6) / std::sqrt(static_cast<Real>(d)); }

ParameterStore init_params(const Snapshot& snapshot, Eigen::Index d, std::size_t entity_layers,
                           std::size_t relation_layers, std::mt19937_64& rng) {
  if (d < 1) throw ConfigError("embedding dimension must be at least 1");
  const Real bound = uniform_bound(d);
  const auto ne = static_cast<Eigen::Index>(snapshot.num_entities());
  const auto nr = static_cast<Eigen::Index>(snapshot.num_relations());
  ParameterStore p;
  p.entity_names = snapshot.entity_names();
  p.relation_names = snapshot.relation_names();
  fill_uniform(p.entity_knowledge, ne, d, bound, rng);
  fill_uniform(p.entity_contextual, ne, d, bound, rng);
  fill_uniform(p.relation_knowledge, nr, d, bound, rng);
  fill_uniform(p.relation_contextual, nr, d, bound, rng);
  p.entity_agcn = init_agcn(d, entity_layers, bound, rng);
  p.relation_agcn = init_agcn(d, relation_layers, bound, rng);
  p.entity_gate = Vector::Zero(d);
  p.relation_gate = Vector::Zero(d);
  return p;
}

Vector logistic(const Vector& x) {
  return x.unaryExpr([](Real v) { return Real(1) / (Real(1) + std::exp(-v)); });
}

Vector joint_embedding(const Vector& knowledge, const Vector& subgraph, const Vector& gate_pre) {
  if (knowledge.size() != subgraph.size() || knowledge.size() != gate_pre.size()) {
    throw ContractError("joint embedding dimension mismatch");
  }
  const Vector g = logistic(gate_pre);
  return (g.array() * knowledge.array() + (Real(1) - g.array()) * subgraph.array()).matrix();
}

Real score_triple(const Vector& head, const Vector& relation, const Vector& tail) {
  if (head.size() != relation.size() || head.size() != tail.size()) throw ContractError("score dimension mismatch");
  return (head + relation - tail).cwiseAbs().sum();
}

Real margin_loss(Real f_pos, Real f_neg, Real margin) { return std::max(Real(0), f_pos + margin - f_neg); }

RelationStats compute_relation_stats(const Snapshot& snapshot) {
  RelationStats stats;
  const std::size_t nr = snapshot.num_relations();
  stats.tails_per_head.assign(nr, 1);
  stats.heads_per_tail.assign(nr, 1);
  for (std::size_t r = 0; r < nr; ++r) {
    const auto triples = snapshot.triples_of_relation(RelationId{static_cast<std::int32_t>(r)});
    if (triples.empty()) continue;
    std::unordered_set<std::int32_t> heads;
    std::unordered_set<std::int32_t> tails;
    for (std::size_t i : triples) {
      heads.insert(snapshot.triples()[i].head.value);
      tails.insert(snapshot.triples()[i].tail.value);
    }
    stats.tails_per_head[r] = static_cast<Real>(triples.size()) / static_cast<Real>(heads.size());
    stats.heads_per_tail[r] = static_cast<Real>(triples.size()) / static_cast<Real>(tails.size());
  }
  return stats;
}

Triple bernoulli_corrupt(const Triple& triple, const RelationStats& stats, const Snapshot& snapshot,
                         std::mt19937_64& rng, std::size_t max_retries) {
  const std::size_t ne = snapshot.num_entities();
  if (ne < 2) throw ContractError("negative sampling needs at least two entities");
  std::uniform_real_distribution<Real> coin(0, 1);
  std::uniform_int_distribution<std::int32_t> pick(0, static_cast<std::int32_t>(ne - 1));
  const bool replace_head = coin(rng) < stats.head_probability(triple.relation);
  Triple candidate = triple;
  for (std::size_t attempt = 0; attempt <= max_retries; ++attempt) {
    candidate = triple;
    (replace_head ? candidate.head : candidate.tail) = EntityId{pick(rng)};
    if (!snapshot.contains(candidate)) break;
  }
  return candidate;
}

Matrix context_features(const ParameterStore& params, const ContextSubgraph& context) {
  const auto n = static_cast<Eigen::Index>(context.real_count());
  Matrix h0(n, params.dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    const ContextVertex& v = context.vertices[i];
    switch (v.kind) {
      case VertexKind::entity:
        h0.row(i) = params.entity_contextual.row(v.first);
        break;
      case VertexKind::relation:
        h0.row(i) = params.relation_contextual.row(v.first);
        break;
      case VertexKind::relation_path:
        h0.row(i) = params.relation_contextual.row(v.first);
        if (v.second >= 0) h0.row(i) += params.relation_contextual.row(v.second);
        break;
    }
  }
  return h0;
}

ObjectForward forward_object(const ParameterStore& params, const ContextSubgraph& context) {
  const ObjectRef o = context.owner;
  ObjectForward out;
  out.knowledge = params.knowledge(o).transpose();
  const Matrix normalized = normalize_adjacency(context.real_adjacency());
  auto agcn = agcn_forward_normalized<Real>(context_features(params, context), normalized, params.agcn(o.kind),
                                            out.knowledge, static_cast<Eigen::Index>(context.padded_size));
  out.subgraph = std::move(agcn.embedding);
  out.cache = std::move(agcn.cache);
  out.joint = joint_embedding(out.knowledge, out.subgraph, params.gate(o.kind));
  return out;
}

TripleForward forward_triple(const Triple& triple, const ParameterStore& params, const ContextTable& contexts) {
  auto context = [&](ObjectRef o) -> const ContextSubgraph& {
    const auto& table = o.kind == ObjectKind::entity ? contexts.entities : contexts.relations;
    if (o.index() >= table.size()) throw IntegrityError("no context for object id " + std::to_string(o.id));
    return table[o.index()];
  };
  const auto h = ObjectRef::of(triple.head);
  const auto r = ObjectRef::of(triple.relation);
  const auto t = ObjectRef::of(triple.tail);
  if (h.index() >= params.num_entities() || t.index() >= params.num_entities() ||
      r.index() >= params.num_relations()) {
    throw IntegrityError("triple refers to an object without embeddings");
  }
  TripleForward out;
  out.head = forward_object(params, context(h));
  out.relation = forward_object(params, context(r));
  out.tail = forward_object(params, context(t));
  out.score = score_triple(out.head.joint, out.relation.joint, out.tail.joint);
  return out;
}

UpdateMask UpdateMask::none(std::size_t entities, std::size_t relations) {
  UpdateMask m;
  m.shared = false;
  m.entity_knowledge.assign(entities, 0);
  m.entity_contextual.assign(entities, 0);
  m.relation_knowledge.assign(relations, 0);
  m.relation_contextual.assign(relations, 0);
  return m;
}

bool UpdateMask::is_static(ObjectRef o, const ContextSubgraph& context) const {
  if (shared || knowledge(o)) return false;
  for (const auto& v : context.vertices) {
    if (v.kind == VertexKind::entity) {
      if (entity_contextual[v.first]) return false;
    } else {
      if (relation_contextual[v.first]) return false;
      if (v.second >= 0 && relation_contextual[v.second]) return false;
    }
  }
  return true;
}

void SparseRows::reset(Eigen::Index rows, Eigen::Index cols) {
  if (values_.rows() != rows || values_.cols() != cols) {
    values_.resize(rows, cols);
    flag_.assign(static_cast<std::size_t>(rows), 0);
    touched_.clear();
    return;
  }
  for (auto r : touched_) flag_[r] = 0;
  touched_.clear();
}

RowMatrix SparseRows::dense() const {
  RowMatrix out = RowMatrix::Zero(values_.rows(), values_.cols());
  for (auto r : touched_) out.row(r) = values_.row(r);
  return out;
}

void Gradients::reset(const ParameterStore& params) {
  const Eigen::Index d = params.dim();
  entity_knowledge.reset(static_cast<Eigen::Index>(params.num_entities()), d);
  entity_contextual.reset(static_cast<Eigen::Index>(params.num_entities()), d);
  relation_knowledge.reset(static_cast<Eigen::Index>(params.num_relations()), d);
  relation_contextual.reset(static_cast<Eigen::Index>(params.num_relations()), d);
  entity_agcn = AgcnParams<Real>::zeros(d, params.entity_agcn.layers());
  relation_agcn = AgcnParams<Real>::zeros(d, params.relation_agcn.layers());
  entity_gate = Vector::Zero(d);
  relation_gate = Vector::Zero(d);
}

JointTable compute_joint_table(const ParameterStore& params, const ContextTable& contexts, unsigned threads) {
  JointTable table;
  const std::size_t ne = params.num_entities();
  const std::size_t nr = params.num_relations();
  if (contexts.entities.size() != ne || contexts.relations.size() != nr) {
    throw IntegrityError("context table does not match parameter store");
  }
  table.entities.resize(static_cast<Eigen::Index>(ne), params.dim());
  table.relations.resize(static_cast<Eigen::Index>(nr), params.dim());
  parallel_for(ne + nr, threads, [&](std::size_t i) {
    if (i < ne) {
      table.entities.row(static_cast<Eigen::Index>(i)) = forward_object(params, contexts.entities[i]).joint.transpose();
    } else {
      table.relations.row(static_cast<Eigen::Index>(i - ne)) =
          forward_object(params, contexts.relations[i - ne]).joint.transpose();
    }
  });
  return table;
}

Real batch_loss(const ParameterStore& params, const ContextTable& contexts, std::span<const Triple> positives,
                std::span<const Triple> negatives, Real margin) {
  if (positives.size() != negatives.size()) throw ContractError("positives and negatives must pair up");
  Real loss = 0;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    loss += margin_loss(forward_triple(positives[i], params, contexts).score,
                        forward_triple(negatives[i], params, contexts).score, margin);
  }
  return loss;
}

BatchStats batch_gradient(const ParameterStore& params, const ContextTable& contexts,
                          std::span<const Triple> positives, std::span<const Triple> negatives, Real margin,
                          Gradients& grads, const BatchOptions& options) {
  if (positives.size() != negatives.size()) throw ContractError("positives and negatives must pair up");
  grads.reset(params);
  const UpdateMask* mask = options.mask;
  const bool shared = mask == nullptr || mask->shared;

  std::vector<ObjectRef> objects;
  objects.reserve(positives.size() * 6);
  for (auto batch : {positives, negatives}) {
    for (const Triple& t : batch) {
      objects.push_back(ObjectRef::of(t.head));
      objects.push_back(ObjectRef::of(t.relation));
      objects.push_back(ObjectRef::of(t.tail));
    }
  }
  std::sort(objects.begin(), objects.end());
  objects.erase(std::unique(objects.begin(), objects.end()), objects.end());
  auto slot = [&](ObjectRef o) {
    return static_cast<std::size_t>(std::lower_bound(objects.begin(), objects.end(), o) - objects.begin());
  };

  const std::size_t m = objects.size();
  std::vector<ObjectForward> forwards(m);
  std::vector<Vector> joints(m);
  std::vector<std::uint8_t> is_static(m, 0);
  parallel_for(m, options.threads, [&](std::size_t i) {
    const ContextSubgraph& ctx = contexts.at(objects[i]);
    is_static[i] = mask != nullptr && mask->is_static(objects[i], ctx);
    if (is_static[i] && options.fixed_joints) {
      joints[i] = options.fixed_joints->at(objects[i]);
    } else {
      forwards[i] = forward_object(params, ctx);
      joints[i] = forwards[i].joint;
    }
  });

  BatchStats stats;
  std::vector<Vector> d_joint(m, Vector::Zero(params.dim()));
  std::vector<std::uint8_t> has_grad(m, 0);
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const Triple& p = positives[i];
    const Triple& n = negatives[i];
    const std::size_t ph = slot(ObjectRef::of(p.head)), pr = slot(ObjectRef::of(p.relation)),
                      pt = slot(ObjectRef::of(p.tail));
    const std::size_t nh = slot(ObjectRef::of(n.head)), nr = slot(ObjectRef::of(n.relation)),
                      nt = slot(ObjectRef::of(n.tail));
    const Vector pos_residual = joints[ph] + joints[pr] - joints[pt];
    const Vector neg_residual = joints[nh] + joints[nr] - joints[nt];
    const Real hinge = margin + pos_residual.cwiseAbs().sum() - neg_residual.cwiseAbs().sum();
    if (hinge <= 0) continue;
    stats.loss += hinge;
    ++stats.active_pairs;
    const Vector sp = l1_sign(pos_residual);
    const Vector sn = l1_sign(neg_residual);
    d_joint[ph] += sp;
    d_joint[pr] += sp;
    d_joint[pt] -= sp;
    d_joint[nh] -= sn;
    d_joint[nr] -= sn;
    d_joint[nt] += sn;
    for (std::size_t s : {ph, pr, pt, nh, nr, nt}) has_grad[s] = 1;
  }

  // Backward in fixed-size chunks of the ordered object list; each chunk owns
  // its AGCN accumulators and chunks are reduced in order.
  constexpr std::size_t chunk = 16;
  const std::size_t chunks = (m + chunk - 1) / chunk;
  std::vector<ObjectGradient> per_object(m);
  std::vector<AgcnParams<Real>> chunk_entity(chunks), chunk_relation(chunks);
  parallel_for(chunks, options.threads, [&](std::size_t c) {
    if (shared) {
      chunk_entity[c] = AgcnParams<Real>::zeros(params.dim(), params.entity_agcn.layers());
      chunk_relation[c] = AgcnParams<Real>::zeros(params.dim(), params.relation_agcn.layers());
    }
    for (std::size_t i = c * chunk; i < std::min(m, (c + 1) * chunk); ++i) {
      if (!has_grad[i] || is_static[i]) continue;
      const ObjectRef o = objects[i];
      const ObjectForward& f = forwards[i];
      const Vector g = logistic(params.gate(o.kind));
      const Vector& dj = d_joint[i];
      const Vector d_subgraph = ((Real(1) - g.array()) * dj.array()).matrix();
      auto ag = agcn_backward<Real>(f.cache, params.agcn(o.kind), f.knowledge, d_subgraph, shared);
      ObjectGradient& out = per_object[i];
      out.knowledge = (g.array() * dj.array()).matrix() + ag.owner;
      out.input = std::move(ag.input);
      if (shared) {
        out.gate = (dj.array() * (f.knowledge - f.subgraph).array() * g.array() * (Real(1) - g.array())).matrix();
        (o.kind == ObjectKind::entity ? chunk_entity[c] : chunk_relation[c]) += ag.params;
      }
    }
  });

  auto trainable_k = [&](ObjectRef o) { return mask == nullptr || mask->knowledge(o); };
  auto trainable_c = [&](ObjectRef o) { return mask == nullptr || mask->contextual(o); };
  auto add_contextual = [&](ObjectRef o, const auto& row) {
    if (!trainable_c(o)) return;
    (o.kind == ObjectKind::entity ? grads.entity_contextual : grads.relation_contextual).add(o.id, row);
  };
  for (std::size_t c = 0; c < chunks; ++c) {
    if (shared) {
      grads.entity_agcn += chunk_entity[c];
      grads.relation_agcn += chunk_relation[c];
    }
    for (std::size_t i = c * chunk; i < std::min(m, (c + 1) * chunk); ++i) {
      if (!has_grad[i] || is_static[i]) continue;
      const ObjectRef o = objects[i];
      const ObjectGradient& og = per_object[i];
      if (trainable_k(o)) {
        (o.kind == ObjectKind::entity ? grads.entity_knowledge : grads.relation_knowledge)
            .add(o.id, og.knowledge.transpose());
      }
      if (shared) (o.kind == ObjectKind::entity ? grads.entity_gate : grads.relation_gate) += og.gate;
      const ContextSubgraph& ctx = contexts.at(o);
      for (std::size_t v = 0; v < ctx.real_count(); ++v) {
        const ContextVertex& vx = ctx.vertices[v];
        const auto row = og.input.row(static_cast<Eigen::Index>(v));
        if (vx.kind == VertexKind::entity) {
          add_contextual({ObjectKind::entity, vx.first}, row);
        } else {
          add_contextual({ObjectKind::relation, vx.first}, row);
          if (vx.second >= 0) add_contextual({ObjectKind::relation, vx.second}, row);
        }
      }
    }
  }
  return stats;
}

void apply_sgd(ParameterStore& params, const Gradients& grads, Real learning_rate, const UpdateMask* mask) {
  auto step = [&](RowMatrix& table, const SparseRows& g, ObjectKind kind, bool knowledge) {
    for (auto r : g.touched()) {
      if (mask) {
        const ObjectRef o{kind, r};
        if (knowledge ? !mask->knowledge(o) : !mask->contextual(o)) continue;
      }
      table.row(r) -= learning_rate * g.row(r);
    }
  };
  step(params.entity_knowledge, grads.entity_knowledge, ObjectKind::entity, true);
  step(params.entity_contextual, grads.entity_contextual, ObjectKind::entity, false);
  step(params.relation_knowledge, grads.relation_knowledge, ObjectKind::relation, true);
  step(params.relation_contextual, grads.relation_contextual, ObjectKind::relation, false);
  if (mask && !mask->shared) return;
  for (auto [p, g] : {std::pair{&params.entity_agcn, &grads.entity_agcn}, std::pair{&params.relation_agcn, &grads.relation_agcn}}) {
    for (std::size_t l = 0; l < p->weights.size(); ++l) p->weights[l] -= learning_rate * g->weights[l];
    p->attention -= learning_rate * g->attention;
  }
  params.entity_gate -= learning_rate * grads.entity_gate;
  params.relation_gate -= learning_rate * grads.relation_gate;
}

}  // namespace dkge
