#pragma once

#include "dkge/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace dkge {

struct LoadReport {
  std::size_t lines_read = 0;
  std::size_t duplicates = 0;
};

// An immutable knowledge graph at one time step. Ids are interned in
// first-occurrence order of names, so they are only meaningful within this
// snapshot; compare snapshots by name.
class Snapshot {
 public:
  Snapshot() = default;

  static Snapshot from_named(std::int64_t time_step, std::span<const NamedTriple> triples,
                             LoadReport* report = nullptr);

  std::int64_t time_step() const { return time_step_; }
  std::span<const Triple> triples() const { return triples_; }
  std::size_t num_triples() const { return triples_.size(); }
  std::size_t num_entities() const { return entity_names_.size(); }
  std::size_t num_relations() const { return relation_names_.size(); }

  const std::string& entity_name(EntityId e) const { return entity_names_.at(e.index()); }
  const std::string& relation_name(RelationId r) const { return relation_names_.at(r.index()); }
  const std::string& name(ObjectRef o) const;
  const std::vector<std::string>& entity_names() const { return entity_names_; }
  const std::vector<std::string>& relation_names() const { return relation_names_; }

  std::optional<EntityId> find_entity(const std::string& name) const;
  std::optional<RelationId> find_relation(const std::string& name) const;
  std::optional<ObjectRef> find(ObjectKind kind, const std::string& name) const;
  // Throwing variants; the error message names the unknown object.
  EntityId entity(const std::string& name) const;
  RelationId relation(const std::string& name) const;

  bool has(EntityId e) const { return e.valid() && e.index() < entity_names_.size(); }
  bool has(RelationId r) const { return r.valid() && r.index() < relation_names_.size(); }
  bool contains(const Triple& t) const { return triple_set_.contains(t); }
  std::optional<Triple> resolve(const NamedTriple& t) const;
  NamedTriple named(const Triple& t) const;

  // Distinct partners over in- and out-edges, ascending id, never e itself.
  const std::vector<EntityId>& neighbor_list(EntityId e) const { return neighbors_.at(e.index()); }
  // Outgoing (relation, tail) pairs of e in triple order.
  std::span<const std::pair<RelationId, EntityId>> out_edges(EntityId e) const { return out_.at(e.index()); }
  // Relations r with (head, r, tail) in the graph, ascending id; empty if none.
  std::span<const RelationId> relations_between(EntityId head, EntityId tail) const;
  std::span<const std::size_t> triples_of_relation(RelationId r) const { return by_relation_.at(r.index()); }
  std::span<const std::size_t> triples_of_entity(EntityId e) const { return by_entity_.at(e.index()); }
  std::span<const std::size_t> triples_of(ObjectRef o) const;

  // Order-independent hash of the triple set by name.
  std::uint64_t content_hash() const { return content_hash_; }

 private:
  void build_indexes();

  std::int64_t time_step_ = 0;
  std::vector<Triple> triples_;
  std::unordered_set<Triple, TripleHash> triple_set_;
  std::vector<std::string> entity_names_;
  std::vector<std::string> relation_names_;
  std::unordered_map<std::string, EntityId> entity_ids_;
  std::unordered_map<std::string, RelationId> relation_ids_;

  std::vector<std::vector<EntityId>> neighbors_;
  std::vector<std::vector<std::pair<RelationId, EntityId>>> out_;
  std::unordered_map<std::uint64_t, std::vector<RelationId>> pair_relations_;
  std::vector<std::vector<std::size_t>> by_relation_;
  std::vector<std::vector<std::size_t>> by_entity_;
  std::uint64_t content_hash_ = 0;
};

// Parses a tab-separated triple file. Blank lines and lines starting with '#'
// are skipped.
std::vector<NamedTriple> read_triples(const std::filesystem::path& path);
void write_triples(const std::filesystem::path& path, const Snapshot& snapshot);

Snapshot load_snapshot(const std::filesystem::path& path, std::int64_t time_step, LoadReport* report = nullptr);

struct SnapshotDir {
  Snapshot train;
  std::vector<NamedTriple> valid;
  std::vector<NamedTriple> test;
  LoadReport report;
  bool has_valid = false;
  bool has_test = false;
};

// <dir>/train.txt is required, valid.txt and test.txt are optional.
SnapshotDir load_snapshot_dir(const std::filesystem::path& dir, std::int64_t time_step);

// Triples of `named` that resolve in `snapshot`; the rest are counted in `skipped`.
std::vector<Triple> resolve_all(const Snapshot& snapshot, std::span<const NamedTriple> named,
                                std::size_t* skipped = nullptr);

// Ids refer to the snapshot named in each comment.
struct SnapshotDiff {
  std::vector<Triple> added_triples;        // new
  std::vector<Triple> deleted_triples;      // old
  std::vector<EntityId> emerging_entities;  // new
  std::vector<RelationId> emerging_relations;  // new
  std::vector<EntityId> removed_entities;   // old
  std::vector<RelationId> removed_relations;  // old

  bool empty() const {
    return added_triples.empty() && deleted_triples.empty() && emerging_entities.empty() &&
           emerging_relations.empty() && removed_entities.empty() && removed_relations.empty();
  }
  bool is_emerging(ObjectRef o_new) const;
};

SnapshotDiff diff_snapshots(const Snapshot& g_old, const Snapshot& g_new);

std::vector<EntityId> neighbors(const Snapshot& snapshot, EntityId e);

}  // namespace dkge
