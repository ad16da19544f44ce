#pragma once

#include "dkge/kg_store.hpp"
#include "dkge/types.hpp"

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace dkge {

enum class VertexKind : std::uint8_t { entity = 0, relation = 1, relation_path = 2 };

// A vertex of a context subgraph. Relation paths carry one or two relation
// ids (`second` is -1 for a length-1 path); other kinds carry one object id.
struct ContextVertex {
  VertexKind kind = VertexKind::entity;
  std::int32_t first = -1;
  std::int32_t second = -1;

  std::size_t length() const { return second >= 0 ? 2 : 1; }
  friend auto operator<=>(const ContextVertex&, const ContextVertex&) = default;
};

using ByteMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// The context of one entity or relation. The owner is always vertex 0; edges
// are undirected, stored once as (i, j) with i < j, and sorted. Vertices past
// `vertices.size()` up to `padded_size` are zero padding.
struct ContextSubgraph {
  ObjectRef owner;
  std::vector<ContextVertex> vertices;
  std::vector<std::pair<std::int32_t, std::int32_t>> edges;
  std::size_t padded_size = 0;
  // Both signatures describe the uncapped context and survive cap_and_pad.
  std::uint64_t signature = 0;
  std::uint64_t membership = 0;

  std::size_t real_count() const { return vertices.size(); }
  // padded_size x padded_size, symmetric, zero diagonal.
  ByteMatrix adjacency() const;
  // real_count x real_count block of adjacency() as reals.
  Matrix real_adjacency() const;
};

struct ContextConfig {
  std::size_t cap = 35;
  std::size_t entity_padded_size = 40;
  std::size_t relation_padded_size = 40;
  std::size_t max_midpoints = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ContextBuildStats {
  std::size_t sampled_contexts = 0;
  std::size_t truncated_pairs = 0;
};

// Uncapped contexts; signatures are filled in.
ContextSubgraph entity_context(const Snapshot& snapshot, EntityId e);
ContextSubgraph relation_context(const Snapshot& snapshot, RelationId r, std::size_t max_midpoints = 1000,
                                 ContextBuildStats* stats = nullptr);

// Keeps the owner plus a uniform sample of cap-1 other vertices when the
// context is larger than `cap`, then pads to `padded_size`.
ContextSubgraph cap_and_pad(const ContextSubgraph& raw, std::size_t cap, std::size_t padded_size,
                            std::mt19937_64& rng);

// Hash of the canonically sorted vertex and edge sets, by name.
std::uint64_t context_signature(const ContextSubgraph& subgraph, const Snapshot& snapshot);
// Hash of the canonically sorted vertex set only.
std::uint64_t membership_signature(const ContextSubgraph& subgraph, const Snapshot& snapshot);

// Raw context of any object, with signatures.
ContextSubgraph raw_context(const Snapshot& snapshot, ObjectRef o, std::size_t max_midpoints = 1000,
                            ContextBuildStats* stats = nullptr);
// Raw context, then cap_and_pad driven by a generator seeded from (seed, object name).
ContextSubgraph build_context(const Snapshot& snapshot, ObjectRef o, const ContextConfig& config,
                              ContextBuildStats* stats = nullptr);

class ContextTable {
 public:
  std::vector<ContextSubgraph> entities;
  std::vector<ContextSubgraph> relations;

  const ContextSubgraph& at(ObjectRef o) const {
    return o.kind == ObjectKind::entity ? entities.at(o.index()) : relations.at(o.index());
  }
  ContextSubgraph& at(ObjectRef o) {
    return o.kind == ObjectKind::entity ? entities.at(o.index()) : relations.at(o.index());
  }
};

ContextTable build_context_table(const Snapshot& snapshot, const ContextConfig& config, unsigned threads = 1,
                                 ContextBuildStats* stats = nullptr);

// Rewrites the ids of a context built on `from` into the id space of `to`.
ContextSubgraph remap_context(const ContextSubgraph& c, const Snapshot& from, const Snapshot& to);

struct SignatureTable {
  std::vector<std::uint64_t> entity_membership;
  std::vector<std::uint64_t> relation_membership;

  std::uint64_t at(ObjectRef o) const {
    return o.kind == ObjectKind::entity ? entity_membership.at(o.index()) : relation_membership.at(o.index());
  }
};

SignatureTable membership_signatures(const Snapshot& snapshot, std::size_t max_midpoints = 1000,
                                     unsigned threads = 1);

// Objects present in both snapshots whose context membership changed, as ids
// of g_new, sorted (entities first).
std::vector<ObjectRef> changed_context_objects(const Snapshot& g_old, const Snapshot& g_new, const SnapshotDiff& diff,
                                               std::size_t max_midpoints = 1000, unsigned threads = 1);
std::vector<ObjectRef> changed_context_objects(const Snapshot& g_old, const SignatureTable& old_signatures,
                                               const Snapshot& g_new, const SignatureTable& new_signatures,
                                               const SnapshotDiff& diff);

}  // namespace dkge
