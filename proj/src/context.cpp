#include "dkge/context.hpp"

#include "dkge/hashing.hpp"
#include "dkge/parallel.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <unordered_map>

namespace dkge {

namespace {

std::string vertex_key(const ContextVertex& v, const Snapshot& s) {
  switch (v.kind) {
    case VertexKind::entity:
      return "e:" + s.entity_name(EntityId{v.first});
    case VertexKind::relation:
      return "r:" + s.relation_name(RelationId{v.first});
    case VertexKind::relation_path: {
      std::string key = "p:" + s.relation_name(RelationId{v.first});
      if (v.second >= 0) key += '\x1f' + s.relation_name(RelationId{v.second});
      return key;
    }
  }
  return {};
}

std::vector<std::string> sorted_keys(const ContextSubgraph& c, const Snapshot& s) {
  std::vector<std::string> keys;
  keys.reserve(c.vertices.size());
  for (const auto& v : c.vertices) keys.push_back(vertex_key(v, s));
  return keys;
}

void fill_signatures(ContextSubgraph& c, const Snapshot& s) {
  c.signature = context_signature(c, s);
  c.membership = membership_signature(c, s);
}

std::mt19937_64 object_rng(const Snapshot& s, ObjectRef o, std::uint64_t seed) {
  const std::uint64_t key = Fnv1a{}.byte(static_cast<unsigned char>(o.kind)).str(s.name(o)).value();
  return std::mt19937_64(splitmix64(derive_seed(seed, "context") ^ key));
}

}  // namespace

ByteMatrix ContextSubgraph::adjacency() const {
  const auto n = static_cast<Eigen::Index>(std::max(padded_size, vertices.size()));
  ByteMatrix a = ByteMatrix::Zero(n, n);
  for (const auto& [i, j] : edges) {
    a(i, j) = 1;
    a(j, i) = 1;
  }
  return a;
}

Matrix ContextSubgraph::real_adjacency() const {
  const auto n = static_cast<Eigen::Index>(vertices.size());
  Matrix a = Matrix::Zero(n, n);
  for (const auto& [i, j] : edges) {
    a(i, j) = 1;
    a(j, i) = 1;
  }
  return a;
}

void ContextConfig::validate() const {
  if (cap < 1) throw ConfigError("context cap must be at least 1");
  if (entity_padded_size < cap || relation_padded_size < cap) {
    throw ConfigError("padded sizes (" + std::to_string(entity_padded_size) + ", " +
                      std::to_string(relation_padded_size) + ") must be >= cap " + std::to_string(cap));
  }
}

ContextSubgraph entity_context(const Snapshot& snapshot, EntityId e) {
  if (!snapshot.has(e)) throw LookupError("unknown entity id " + std::to_string(e.value));
  ContextSubgraph c;
  c.owner = ObjectRef::of(e);
  const auto& nbrs = snapshot.neighbor_list(e);
  c.vertices.reserve(nbrs.size() + 1);
  c.vertices.push_back({VertexKind::entity, e.value});
  std::unordered_map<std::int32_t, std::int32_t> index;
  index.emplace(e.value, 0);
  for (EntityId n : nbrs) {
    index.emplace(n.value, static_cast<std::int32_t>(c.vertices.size()));
    c.vertices.push_back({VertexKind::entity, n.value});
  }
  for (std::size_t i = 0; i < c.vertices.size(); ++i) {
    for (EntityId w : snapshot.neighbor_list(EntityId{c.vertices[i].first})) {
      auto it = index.find(w.value);
      if (it != index.end() && it->second > static_cast<std::int32_t>(i)) {
        c.edges.emplace_back(static_cast<std::int32_t>(i), it->second);
      }
    }
  }
  std::sort(c.edges.begin(), c.edges.end());
  c.padded_size = c.vertices.size();
  fill_signatures(c, snapshot);
  return c;
}

ContextSubgraph relation_context(const Snapshot& snapshot, RelationId r, std::size_t max_midpoints,
                                 ContextBuildStats* stats) {
  if (!snapshot.has(r)) throw LookupError("unknown relation id " + std::to_string(r.value));
  using PathKey = std::pair<std::int32_t, std::int32_t>;
  std::map<PathKey, std::int32_t> path_ids;
  std::vector<std::vector<std::int32_t>> pair_paths;

  for (std::size_t ti : snapshot.triples_of_relation(r)) {
    const Triple& t = snapshot.triples()[ti];
    std::vector<std::int32_t> on_pair;
    auto add = [&](PathKey key) {
      auto [it, inserted] = path_ids.try_emplace(key, static_cast<std::int32_t>(path_ids.size()));
      on_pair.push_back(it->second);
    };
    for (RelationId other : snapshot.relations_between(t.head, t.tail)) {
      if (other != r) add({other.value, -1});
    }
    std::set<std::int32_t> midpoints;
    bool truncated = false;
    for (const auto& [r1, mid] : snapshot.out_edges(t.head)) {
      if (!midpoints.contains(mid.value)) {
        if (midpoints.size() >= max_midpoints) {
          truncated = true;
          break;
        }
        midpoints.insert(mid.value);
      }
      for (RelationId r2 : snapshot.relations_between(mid, t.tail)) add({r1.value, r2.value});
    }
    if (truncated && stats) ++stats->truncated_pairs;
    std::sort(on_pair.begin(), on_pair.end());
    on_pair.erase(std::unique(on_pair.begin(), on_pair.end()), on_pair.end());
    if (!on_pair.empty()) pair_paths.push_back(std::move(on_pair));
  }

  // Vertex order: owner, then paths by (length, first, second).
  std::vector<std::pair<PathKey, std::int32_t>> ordered(path_ids.begin(), path_ids.end());
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    const bool a2 = a.first.second >= 0;
    const bool b2 = b.first.second >= 0;
    if (a2 != b2) return !a2;
    return a.first < b.first;
  });
  std::vector<std::int32_t> position(ordered.size());
  ContextSubgraph c;
  c.owner = ObjectRef::of(r);
  c.vertices.push_back({VertexKind::relation, r.value});
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    position[ordered[i].second] = static_cast<std::int32_t>(i + 1);
    c.vertices.push_back({VertexKind::relation_path, ordered[i].first.first, ordered[i].first.second});
  }

  std::set<std::pair<std::int32_t, std::int32_t>> edges;
  for (const auto& paths : pair_paths) {
    for (std::size_t a = 0; a < paths.size(); ++a) {
      const std::int32_t pa = position[paths[a]];
      edges.emplace(0, pa);
      for (std::size_t b = a + 1; b < paths.size(); ++b) {
        const std::int32_t pb = position[paths[b]];
        edges.emplace(std::min(pa, pb), std::max(pa, pb));
      }
    }
  }
  c.edges.assign(edges.begin(), edges.end());
  c.padded_size = c.vertices.size();
  fill_signatures(c, snapshot);
  return c;
}

ContextSubgraph cap_and_pad(const ContextSubgraph& raw, std::size_t cap, std::size_t padded_size,
                            std::mt19937_64& rng) {
  if (raw.vertices.empty()) throw ContractError("context has no owner vertex");
  if (cap < 1) throw ConfigError("context cap must be at least 1");
  ContextSubgraph out;
  out.owner = raw.owner;
  out.signature = raw.signature;
  out.membership = raw.membership;
  if (raw.real_count() <= cap) {
    out.vertices = raw.vertices;
    out.edges = raw.edges;
  } else {
    std::vector<std::int32_t> others(raw.real_count() - 1);
    for (std::size_t i = 0; i < others.size(); ++i) others[i] = static_cast<std::int32_t>(i + 1);
    std::vector<std::int32_t> keep{0};
    std::sample(others.begin(), others.end(), std::back_inserter(keep), cap - 1, rng);
    std::vector<std::int32_t> remap(raw.real_count(), -1);
    for (std::size_t i = 0; i < keep.size(); ++i) {
      remap[keep[i]] = static_cast<std::int32_t>(i);
      out.vertices.push_back(raw.vertices[keep[i]]);
    }
    for (const auto& [i, j] : raw.edges) {
      if (remap[i] >= 0 && remap[j] >= 0) out.edges.emplace_back(remap[i], remap[j]);
    }
    std::sort(out.edges.begin(), out.edges.end());
  }
  if (padded_size < out.real_count()) {
    throw ConfigError("padded size " + std::to_string(padded_size) + " is smaller than context size " +
                      std::to_string(out.real_count()));
  }
  out.padded_size = padded_size;
  return out;
}

std::uint64_t context_signature(const ContextSubgraph& c, const Snapshot& s) {
  const auto keys = sorted_keys(c, s);
  std::vector<std::string> vertex_keys = keys;
  std::sort(vertex_keys.begin(), vertex_keys.end());
  std::vector<std::pair<std::string, std::string>> edge_keys;
  edge_keys.reserve(c.edges.size());
  for (const auto& [i, j] : c.edges) {
    const auto& a = keys[i];
    const auto& b = keys[j];
    edge_keys.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(edge_keys.begin(), edge_keys.end());
  Fnv1a h;
  h.u64(vertex_keys.size());
  for (const auto& k : vertex_keys) h.str(k);
  h.u64(edge_keys.size());
  for (const auto& [a, b] : edge_keys) h.str(a).str(b);
  return h.value();
}

std::uint64_t membership_signature(const ContextSubgraph& c, const Snapshot& s) {
  auto keys = sorted_keys(c, s);
  std::sort(keys.begin(), keys.end());
  Fnv1a h;
  h.u64(keys.size());
  for (const auto& k : keys) h.str(k);
  return h.value();
}

ContextSubgraph raw_context(const Snapshot& snapshot, ObjectRef o, std::size_t max_midpoints,
                            ContextBuildStats* stats) {
  return o.kind == ObjectKind::entity ? entity_context(snapshot, EntityId{o.id})
                                      : relation_context(snapshot, RelationId{o.id}, max_midpoints, stats);
}

ContextSubgraph build_context(const Snapshot& snapshot, ObjectRef o, const ContextConfig& config,
                              ContextBuildStats* stats) {
  auto raw = raw_context(snapshot, o, config.max_midpoints, stats);
  auto rng = object_rng(snapshot, o, config.seed);
  const std::size_t padded =
      o.kind == ObjectKind::entity ? config.entity_padded_size : config.relation_padded_size;
  if (stats && raw.real_count() > config.cap) ++stats->sampled_contexts;
  return cap_and_pad(raw, config.cap, padded, rng);
}

ContextTable build_context_table(const Snapshot& snapshot, const ContextConfig& config, unsigned threads,
                                 ContextBuildStats* stats) {
  config.validate();
  ContextTable table;
  const std::size_t ne = snapshot.num_entities();
  const std::size_t nr = snapshot.num_relations();
  table.entities.resize(ne);
  table.relations.resize(nr);
  std::vector<ContextBuildStats> per(ne + nr);
  parallel_for(ne + nr, threads, [&](std::size_t i) {
    const ObjectRef o = i < ne ? ObjectRef{ObjectKind::entity, static_cast<std::int32_t>(i)}
                               : ObjectRef{ObjectKind::relation, static_cast<std::int32_t>(i - ne)};
    table.at(o) = build_context(snapshot, o, config, &per[i]);
  });
  if (stats) {
    for (const auto& p : per) {
      stats->sampled_contexts += p.sampled_contexts;
      stats->truncated_pairs += p.truncated_pairs;
    }
  }
  return table;
}

ContextSubgraph remap_context(const ContextSubgraph& c, const Snapshot& from, const Snapshot& to) {
  auto entity = [&](std::int32_t id) {
    auto e = to.find_entity(from.entity_name(EntityId{id}));
    if (!e) throw IntegrityError("context member '" + from.entity_name(EntityId{id}) + "' is not in the new snapshot");
    return e->value;
  };
  auto relation = [&](std::int32_t id) {
    auto r = to.find_relation(from.relation_name(RelationId{id}));
    if (!r) {
      throw IntegrityError("context member '" + from.relation_name(RelationId{id}) + "' is not in the new snapshot");
    }
    return r->value;
  };
  ContextSubgraph out = c;
  out.owner.id = c.owner.kind == ObjectKind::entity ? entity(c.owner.id) : relation(c.owner.id);
  for (auto& v : out.vertices) {
    if (v.kind == VertexKind::entity) {
      v.first = entity(v.first);
    } else {
      v.first = relation(v.first);
      if (v.second >= 0) v.second = relation(v.second);
    }
  }
  return out;
}

SignatureTable membership_signatures(const Snapshot& snapshot, std::size_t max_midpoints, unsigned threads) {
  SignatureTable t;
  const std::size_t ne = snapshot.num_entities();
  t.entity_membership.resize(ne);
  t.relation_membership.resize(snapshot.num_relations());
  parallel_for(ne + snapshot.num_relations(), threads, [&](std::size_t i) {
    if (i < ne) {
      t.entity_membership[i] = entity_context(snapshot, EntityId{static_cast<std::int32_t>(i)}).membership;
    } else {
      t.relation_membership[i - ne] =
          relation_context(snapshot, RelationId{static_cast<std::int32_t>(i - ne)}, max_midpoints).membership;
    }
  });
  return t;
}

std::vector<ObjectRef> changed_context_objects(const Snapshot& g_old, const SignatureTable& old_signatures,
                                               const Snapshot& g_new, const SignatureTable& new_signatures,
                                               const SnapshotDiff& diff) {
  std::vector<ObjectRef> changed;
  for (std::size_t i = 0; i < g_new.num_entities(); ++i) {
    const ObjectRef o{ObjectKind::entity, static_cast<std::int32_t>(i)};
    if (diff.is_emerging(o)) continue;
    auto old_id = g_old.find_entity(g_new.entity_names()[i]);
    if (old_id && old_signatures.at(ObjectRef::of(*old_id)) != new_signatures.at(o)) changed.push_back(o);
  }
  for (std::size_t i = 0; i < g_new.num_relations(); ++i) {
    const ObjectRef o{ObjectKind::relation, static_cast<std::int32_t>(i)};
    if (diff.is_emerging(o)) continue;
    auto old_id = g_old.find_relation(g_new.relation_names()[i]);
    if (old_id && old_signatures.at(ObjectRef::of(*old_id)) != new_signatures.at(o)) changed.push_back(o);
  }
  return changed;
}

std::vector<ObjectRef> changed_context_objects(const Snapshot& g_old, const Snapshot& g_new, const SnapshotDiff& diff,
                                               std::size_t max_midpoints, unsigned threads) {
  return changed_context_objects(g_old, membership_signatures(g_old, max_midpoints, threads), g_new,
                                 membership_signatures(g_new, max_midpoints, threads), diff);
}

}  // namespace dkge
