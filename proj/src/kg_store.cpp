#include "dkge/kg_store.hpp"

#include "dkge/hashing.hpp"

#include <algorithm>
#include <fstream>

namespace dkge {

namespace {

std::uint64_t pair_key(EntityId head, EntityId tail) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(head.value)) << 32) |
         static_cast<std::uint32_t>(tail.value);
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

}  // namespace

Snapshot Snapshot::from_named(std::int64_t time_step, std::span<const NamedTriple> triples,
                              LoadReport* report) {
  Snapshot s;
  s.time_step_ = time_step;
  std::size_t duplicates = 0;
  auto intern_entity = [&s](const std::string& name) {
    auto [it, inserted] = s.entity_ids_.try_emplace(name, EntityId{static_cast<std::int32_t>(s.entity_names_.size())});
    if (inserted) s.entity_names_.push_back(name);
    return it->second;
  };
  auto intern_relation = [&s](const std::string& name) {
    auto [it, inserted] =
        s.relation_ids_.try_emplace(name, RelationId{static_cast<std::int32_t>(s.relation_names_.size())});
    if (inserted) s.relation_names_.push_back(name);
    return it->second;
  };
  for (const auto& nt : triples) {
    const EntityId h = intern_entity(nt.head);
    const RelationId r = intern_relation(nt.relation);
    const EntityId t = intern_entity(nt.tail);
    const Triple triple{h, r, t};
    if (s.triple_set_.insert(triple).second) {
      s.triples_.push_back(triple);
    } else {
      ++duplicates;
    }
  }
  if (report) report->duplicates += duplicates;
  s.build_indexes();
  return s;
}

void Snapshot::build_indexes() {
  const std::size_t ne = entity_names_.size();
  neighbors_.assign(ne, {});
  out_.assign(ne, {});
  by_entity_.assign(ne, {});
  by_relation_.assign(relation_names_.size(), {});
  pair_relations_.clear();

  std::uint64_t hash_sum = 0;
  for (std::size_t i = 0; i < triples_.size(); ++i) {
    const Triple& t = triples_[i];
    if (t.head != t.tail) {
      neighbors_[t.head.index()].push_back(t.tail);
      neighbors_[t.tail.index()].push_back(t.head);
    }
    out_[t.head.index()].emplace_back(t.relation, t.tail);
    pair_relations_[pair_key(t.head, t.tail)].push_back(t.relation);
    by_relation_[t.relation.index()].push_back(i);
    by_entity_[t.head.index()].push_back(i);
    if (t.tail != t.head) by_entity_[t.tail.index()].push_back(i);
    // Commutative combination so the hash ignores line order.
    hash_sum += splitmix64(Fnv1a{}
                               .str(entity_names_[t.head.index()])
                               .str(relation_names_[t.relation.index()])
                               .str(entity_names_[t.tail.index()])
                               .value());
  }
  for (auto& n : neighbors_) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  for (auto& [key, rels] : pair_relations_) {
    std::sort(rels.begin(), rels.end());
  }
  content_hash_ = splitmix64(hash_sum ^ triples_.size());
}

const std::string& Snapshot::name(ObjectRef o) const {
  return o.kind == ObjectKind::entity ? entity_name(EntityId{o.id}) : relation_name(RelationId{o.id});
}

std::optional<EntityId> Snapshot::find_entity(const std::string& name) const {
  auto it = entity_ids_.find(name);
  if (it == entity_ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<RelationId> Snapshot::find_relation(const std::string& name) const {
  auto it = relation_ids_.find(name);
  if (it == relation_ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<ObjectRef> Snapshot::find(ObjectKind kind, const std::string& name) const {
  if (kind == ObjectKind::entity) {
    if (auto e = find_entity(name)) return ObjectRef::of(*e);
  } else {
    if (auto r = find_relation(name)) return ObjectRef::of(*r);
  }
  return std::nullopt;
}

EntityId Snapshot::entity(const std::string& name) const {
  if (auto e = find_entity(name)) return *e;
  throw LookupError("unknown entity '" + name + "'");
}

RelationId Snapshot::relation(const std::string& name) const {
  if (auto r = find_relation(name)) return *r;
  throw LookupError("unknown relation '" + name + "'");
}

std::optional<Triple> Snapshot::resolve(const NamedTriple& t) const {
  auto h = find_entity(t.head);
  auto r = find_relation(t.relation);
  auto tail = find_entity(t.tail);
  if (!h || !r || !tail) return std::nullopt;
  return Triple{*h, *r, *tail};
}

NamedTriple Snapshot::named(const Triple& t) const {
  return {entity_name(t.head), relation_name(t.relation), entity_name(t.tail)};
}

std::span<const RelationId> Snapshot::relations_between(EntityId head, EntityId tail) const {
  auto it = pair_relations_.find(pair_key(head, tail));
  if (it == pair_relations_.end()) return {};
  return it->second;
}

std::span<const std::size_t> Snapshot::triples_of(ObjectRef o) const {
  return o.kind == ObjectKind::entity ? triples_of_entity(EntityId{o.id}) : triples_of_relation(RelationId{o.id});
}

std::vector<NamedTriple> read_triples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open triple file " + path.string());
  std::vector<NamedTriple> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto fields = split_tabs(line);
    if (fields.size() != 3) {
      throw ParseError(path.string(), lineno,
                       "expected 3 tab-separated fields, got " + std::to_string(fields.size()) + ": '" + line + "'");
    }
    for (const auto& f : fields) {
      if (f.empty()) throw ParseError(path.string(), lineno, "empty field: '" + line + "'");
    }
    out.push_back({std::move(fields[0]), std::move(fields[1]), std::move(fields[2])});
  }
  return out;
}

void write_triples(const std::filesystem::path& path, const Snapshot& snapshot) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write triple file " + path.string());
  for (const Triple& t : snapshot.triples()) {
    out << snapshot.entity_name(t.head) << '\t' << snapshot.relation_name(t.relation) << '\t'
        << snapshot.entity_name(t.tail) << '\n';
  }
}

Snapshot load_snapshot(const std::filesystem::path& path, std::int64_t time_step, LoadReport* report) {
  auto named = read_triples(path);
  if (named.empty()) throw EmptySnapshotError("snapshot file " + path.string() + " contains no triples");
  if (report) report->lines_read += named.size();
  return Snapshot::from_named(time_step, named, report);
}

SnapshotDir load_snapshot_dir(const std::filesystem::path& dir, std::int64_t time_step) {
  SnapshotDir out;
  const auto train = dir / "train.txt";
  if (!std::filesystem::exists(train)) throw Error("missing training file " + train.string());
  out.train = load_snapshot(train, time_step, &out.report);
  if (std::filesystem::exists(dir / "valid.txt")) {
    out.valid = read_triples(dir / "valid.txt");
    out.has_valid = true;
  }
  if (std::filesystem::exists(dir / "test.txt")) {
    out.test = read_triples(dir / "test.txt");
    out.has_test = true;
  }
  return out;
}

std::vector<Triple> resolve_all(const Snapshot& snapshot, std::span<const NamedTriple> named, std::size_t* skipped) {
  std::vector<Triple> out;
  out.reserve(named.size());
  std::size_t missing = 0;
  for (const auto& nt : named) {
    if (auto t = snapshot.resolve(nt)) {
      out.push_back(*t);
    } else {
      ++missing;
    }
  }
  if (skipped) *skipped = missing;
  return out;
}

bool SnapshotDiff::is_emerging(ObjectRef o) const {
  if (o.kind == ObjectKind::entity) {
    return std::binary_search(emerging_entities.begin(), emerging_entities.end(), EntityId{o.id});
  }
  return std::binary_search(emerging_relations.begin(), emerging_relations.end(), RelationId{o.id});
}

SnapshotDiff diff_snapshots(const Snapshot& g_old, const Snapshot& g_new) {
  SnapshotDiff d;
  for (const Triple& t : g_new.triples()) {
    auto in_old = g_old.resolve(g_new.named(t));
    if (!in_old || !g_old.contains(*in_old)) d.added_triples.push_back(t);
  }
  for (const Triple& t : g_old.triples()) {
    auto in_new = g_new.resolve(g_old.named(t));
    if (!in_new || !g_new.contains(*in_new)) d.deleted_triples.push_back(t);
  }
  for (std::size_t i = 0; i < g_new.num_entities(); ++i) {
    if (!g_old.find_entity(g_new.entity_names()[i])) d.emerging_entities.emplace_back(static_cast<std::int32_t>(i));
  }
  for (std::size_t i = 0; i < g_new.num_relations(); ++i) {
    if (!g_old.find_relation(g_new.relation_names()[i])) {
      d.emerging_relations.emplace_back(static_cast<std::int32_t>(i));
    }
  }
  for (std::size_t i = 0; i < g_old.num_entities(); ++i) {
    if (!g_new.find_entity(g_old.entity_names()[i])) d.removed_entities.emplace_back(static_cast<std::int32_t>(i));
  }
  for (std::size_t i = 0; i < g_old.num_relations(); ++i) {
    if (!g_new.find_relation(g_old.relation_names()[i])) {
      d.removed_relations.emplace_back(static_cast<std::int32_t>(i));
    }
  }
  return d;
}

std::vector<EntityId> neighbors(const Snapshot& snapshot, EntityId e) {
  if (!snapshot.has(e)) throw LookupError("unknown entity id " + std::to_string(e.value));
  return snapshot.neighbor_list(e);
}

}  // namespace dkge
