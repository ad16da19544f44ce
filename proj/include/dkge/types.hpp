#pragma once

#include <Eigen/Dense>

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace dkge {

using Real = double;
using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Integer id that cannot be mixed up with an id of another kind.
template <typename Tag>
struct StrongId {
  std::int32_t value = -1;

  constexpr StrongId() = default;
  constexpr explicit StrongId(std::int32_t v) : value(v) {}
  constexpr std::size_t index() const { return static_cast<std::size_t>(value); }
  constexpr bool valid() const { return value >= 0; }

  friend constexpr auto operator<=>(StrongId, StrongId) = default;
};

struct EntityTag {};
struct RelationTag {};
using EntityId = StrongId<EntityTag>;
using RelationId = StrongId<RelationTag>;

struct Triple {
  EntityId head;
  RelationId relation;
  EntityId tail;

  friend constexpr auto operator<=>(const Triple&, const Triple&) = default;
};

struct TripleHash {
  std::size_t operator()(const Triple& t) const noexcept {
    std::uint64_t h = static_cast<std::uint32_t>(t.head.value);
    h = h * 0x9E3779B97F4A7C15ULL + static_cast<std::uint32_t>(t.relation.value);
    h = h * 0x9E3779B97F4A7C15ULL + static_cast<std::uint32_t>(t.tail.value);
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

// Triple by name, before interning.
struct NamedTriple {
  std::string head;
  std::string relation;
  std::string tail;

  friend auto operator<=>(const NamedTriple&, const NamedTriple&) = default;
};

enum class ObjectKind : std::uint8_t { entity = 0, relation = 1 };

// An entity or a relation.
struct ObjectRef {
  ObjectKind kind = ObjectKind::entity;
  std::int32_t id = -1;

  static constexpr ObjectRef of(EntityId e) { return {ObjectKind::entity, e.value}; }
  static constexpr ObjectRef of(RelationId r) { return {ObjectKind::relation, r.value}; }
  constexpr std::size_t index() const { return static_cast<std::size_t>(id); }

  friend constexpr auto operator<=>(const ObjectRef&, const ObjectRef&) = default;
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class EmptySnapshotError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition (shape mismatch, asymmetric adjacency, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Model and snapshot (or cached data) do not belong together.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

}  // namespace dkge

template <typename Tag>
struct std::hash<dkge::StrongId<Tag>> {
  std::size_t operator()(dkge::StrongId<Tag> id) const noexcept {
    return std::hash<std::int32_t>{}(id.value);
  }
};

template <>
struct std::hash<dkge::ObjectRef> {
  std::size_t operator()(const dkge::ObjectRef& o) const noexcept {
    return std::hash<std::int64_t>{}((static_cast<std::int64_t>(o.kind) << 32) | static_cast<std::uint32_t>(o.id));
  }
};
