#include "dkge/checkpoint.hpp"

#include "dkge/hashing.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dkge {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

constexpr char kCheckpointMagic[8] = {'D', 'K', 'G', 'E', 'C', 'K', 'P', 'T'};
constexpr char kCacheMagic[8] = {'D', 'K', 'G', 'E', 'C', 'T', 'X', 'C'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  template <typename T>
  void pod(T v) {
    raw(&v, sizeof v);
  }
  void u64(std::uint64_t v) { pod(v); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  template <typename Derived>
  void matrix(const Eigen::DenseBase<Derived>& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) pod<double>(m(i, j));
    }
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  void raw(void* p, std::size_t n) {
    if (pos_ + n > data_.size()) throw IntegrityError(origin_ + ": truncated file");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  std::uint64_t count(std::uint64_t limit = 1ULL << 32) {
    const auto n = u64();
    if (n > limit) throw IntegrityError(origin_ + ": implausible size field");
    return n;
  }
  std::string str() {
    std::string s(count(), '\0');
    raw(s.data(), s.size());
    return s;
  }
  template <typename M>
  M matrix() {
    const auto rows = static_cast<Eigen::Index>(count());
    const auto cols = static_cast<Eigen::Index>(count());
    M m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = pod<double>();
    }
    return m;
  }
  std::size_t position() const { return pos_; }
  const std::string& data() const { return data_; }
  const std::string& origin() const { return origin_; }

 private:
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

void write_context(Writer& w, const ContextSubgraph& c) {
  w.pod<std::uint8_t>(static_cast<std::uint8_t>(c.owner.kind));
  w.pod<std::int32_t>(c.owner.id);
  w.u64(c.padded_size);
  w.u64(c.signature);
  w.u64(c.membership);
  w.u64(c.vertices.size());
  for (const auto& v : c.vertices) {
    w.pod<std::uint8_t>(static_cast<std::uint8_t>(v.kind));
    w.pod<std::int32_t>(v.first);
    w.pod<std::int32_t>(v.second);
  }
  w.u64(c.edges.size());
  for (const auto& [a, b] : c.edges) {
    w.pod<std::int32_t>(a);
    w.pod<std::int32_t>(b);
  }
}

ContextSubgraph read_context(Reader& r) {
  ContextSubgraph c;
  c.owner.kind = static_cast<ObjectKind>(r.pod<std::uint8_t>());
  c.owner.id = r.pod<std::int32_t>();
  c.padded_size = r.count();
  c.signature = r.u64();
  c.membership = r.u64();
  c.vertices.resize(r.count());
  for (auto& v : c.vertices) {
    v.kind = static_cast<VertexKind>(r.pod<std::uint8_t>());
    v.first = r.pod<std::int32_t>();
    v.second = r.pod<std::int32_t>();
  }
  c.edges.resize(r.count());
  for (auto& [a, b] : c.edges) {
    a = r.pod<std::int32_t>();
    b = r.pod<std::int32_t>();
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= c.vertices.size() ||
        static_cast<std::size_t>(b) >= c.vertices.size()) {
      throw IntegrityError(r.origin() + ": context edge out of range");
    }
  }
  return c;
}

void write_context_config(Writer& w, const ContextConfig& c) {
  w.u64(c.cap);
  w.u64(c.entity_padded_size);
  w.u64(c.relation_padded_size);
  w.u64(c.max_midpoints);
  w.u64(c.seed);
}

ContextConfig read_context_config(Reader& r) {
  ContextConfig c;
  c.cap = r.u64();
  c.entity_padded_size = r.u64();
  c.relation_padded_size = r.u64();
  c.max_midpoints = r.u64();
  c.seed = r.u64();
  return c;
}

void write_table(Writer& w, const ContextTable& t) {
  w.u64(t.entities.size());
  for (const auto& c : t.entities) write_context(w, c);
  w.u64(t.relations.size());
  for (const auto& c : t.relations) write_context(w, c);
}

ContextTable read_table(Reader& r) {
  ContextTable t;
  t.entities.resize(r.count());
  for (auto& c : t.entities) c = read_context(r);
  t.relations.resize(r.count());
  for (auto& c : t.relations) c = read_context(r);
  return t;
}

void write_agcn(Writer& w, const AgcnParams<Real>& p) {
  w.u64(p.weights.size());
  for (const auto& m : p.weights) w.matrix(m);
  w.matrix(p.attention);
}

AgcnParams<Real> read_agcn(Reader& r) {
  AgcnParams<Real> p;
  p.weights.resize(r.count(2));
  for (auto& m : p.weights) m = r.matrix<Matrix>();
  p.attention = r.matrix<Matrix>();
  return p;
}

void seal_and_write(const std::filesystem::path& path, Writer& w) {
  w.u64(Fnv1a{}.bytes(w.bytes().data(), w.bytes().size()).value());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::optional<Reader> open_sealed(const std::filesystem::path& path, const char (&magic)[8], std::uint32_t version,
                                  bool required) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (required) throw Error("cannot open " + path.string());
    return std::nullopt;
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string data = ss.str();
  if (data.size() < sizeof magic + sizeof(std::uint32_t) + sizeof(std::uint64_t) ||
      std::memcmp(data.data(), magic, sizeof magic) != 0) {
    if (required) throw IntegrityError(path.string() + ": not a recognised file");
    return std::nullopt;
  }
  std::uint64_t stored;
  std::memcpy(&stored, data.data() + data.size() - sizeof stored, sizeof stored);
  data.resize(data.size() - sizeof stored);
  if (Fnv1a{}.bytes(data.data(), data.size()).value() != stored) {
    if (required) throw IntegrityError(path.string() + ": checksum mismatch");
    return std::nullopt;
  }
  Reader r(std::move(data), path.string());
  char head[8];
  r.raw(head, sizeof head);
  const auto v = r.pod<std::uint32_t>();
  if (v != version) {
    if (required) {
      throw IntegrityError(path.string() + ": unsupported version " + std::to_string(v) + " (expected " +
                           std::to_string(version) + ")");
    }
    return std::nullopt;
  }
  return r;
}

// Contexts store ids, so the cache is only valid for the same interning order.
std::uint64_t dictionary_hash(const Snapshot& s) {
  Fnv1a h;
  for (const auto& n : s.entity_names()) h.str(n);
  h.byte(0);
  for (const auto& n : s.relation_names()) h.str(n);
  return h.value();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  const ParameterStore& p = model.params;
  Writer w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.u64(static_cast<std::uint64_t>(p.dim()));
  write_context_config(w, model.context_config);
  w.u64(p.entity_names.size());
  for (const auto& n : p.entity_names) w.str(n);
  w.u64(p.relation_names.size());
  for (const auto& n : p.relation_names) w.str(n);
  w.matrix(p.entity_knowledge);
  w.matrix(p.entity_contextual);
  w.matrix(p.relation_knowledge);
  w.matrix(p.relation_contextual);
  write_agcn(w, p.entity_agcn);
  write_agcn(w, p.relation_agcn);
  w.matrix(p.entity_gate);
  w.matrix(p.relation_gate);
  write_table(w, model.contexts);
  seal_and_write(path, w);
}

Model load_checkpoint(const std::filesystem::path& path) {
  Reader r = *open_sealed(path, kCheckpointMagic, kCheckpointVersion, true);
  Model m;
  ParameterStore& p = m.params;
  const auto d = static_cast<Eigen::Index>(r.count());
  m.context_config = read_context_config(r);
  p.entity_names.resize(r.count());
  for (auto& n : p.entity_names) n = r.str();
  p.relation_names.resize(r.count());
  for (auto& n : p.relation_names) n = r.str();
  p.entity_knowledge = r.matrix<RowMatrix>();
  p.entity_contextual = r.matrix<RowMatrix>();
  p.relation_knowledge = r.matrix<RowMatrix>();
  p.relation_contextual = r.matrix<RowMatrix>();
  p.entity_agcn = read_agcn(r);
  p.relation_agcn = read_agcn(r);
  p.entity_gate = r.matrix<Matrix>();
  p.relation_gate = r.matrix<Matrix>();
  m.contexts = read_table(r);
  if (r.position() != r.data().size()) throw IntegrityError(path.string() + ": trailing bytes");

  const auto ne = static_cast<Eigen::Index>(p.entity_names.size());
  const auto nr = static_cast<Eigen::Index>(p.relation_names.size());
  const bool shapes_ok = p.entity_knowledge.rows() == ne && p.entity_contextual.rows() == ne &&
                         p.relation_knowledge.rows() == nr && p.relation_contextual.rows() == nr &&
                         p.entity_knowledge.cols() == d && p.entity_contextual.cols() == d &&
                         p.relation_knowledge.cols() == d && p.relation_contextual.cols() == d &&
                         p.entity_gate.size() == d && p.relation_gate.size() == d &&
                         m.contexts.entities.size() == p.entity_names.size() &&
                         m.contexts.relations.size() == p.relation_names.size();
  if (!shapes_ok) throw IntegrityError(path.string() + ": inconsistent shapes");
  p.entity_agcn.validate();
  p.relation_agcn.validate();
  if (p.entity_agcn.dim() != d || p.relation_agcn.dim() != d) throw IntegrityError(path.string() + ": AGCN size");
  return m;
}

void save_context_cache(const std::filesystem::path& path, const Snapshot& snapshot, const ContextConfig& config,
                        const ContextTable& table) {
  Writer w;
  w.raw(kCacheMagic, sizeof kCacheMagic);
  w.pod<std::uint32_t>(kContextCacheVersion);
  w.u64(snapshot.content_hash());
  w.u64(dictionary_hash(snapshot));
  write_context_config(w, config);
  write_table(w, table);
  seal_and_write(path, w);
}

std::optional<ContextTable> load_context_cache(const std::filesystem::path& path, const Snapshot& snapshot,
                                               const ContextConfig& config) {
  auto r = open_sealed(path, kCacheMagic, kContextCacheVersion, false);
  if (!r) return std::nullopt;
  if (r->u64() != snapshot.content_hash()) return std::nullopt;
  if (r->u64() != dictionary_hash(snapshot)) return std::nullopt;
  const ContextConfig stored = read_context_config(*r);
  if (stored.cap != config.cap || stored.entity_padded_size != config.entity_padded_size ||
      stored.relation_padded_size != config.relation_padded_size || stored.max_midpoints != config.max_midpoints ||
      stored.seed != config.seed) {
    return std::nullopt;
  }
  ContextTable t = read_table(*r);
  if (t.entities.size() != snapshot.num_entities() || t.relations.size() != snapshot.num_relations()) {
    return std::nullopt;
  }
  return t;
}

}  // namespace dkge
