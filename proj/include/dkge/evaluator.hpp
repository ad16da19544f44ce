#pragma once

#include "dkge/model.hpp"

#include <map>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace dkge {

using TripleSet = std::unordered_set<Triple, TripleHash>;

enum class Direction : std::uint8_t { head, tail };
enum class TieMode : std::uint8_t { optimistic, pessimistic };
enum class FilterMode : std::uint8_t { train, all };

struct RankQuery {
  Direction direction = Direction::tail;
  Triple triple;
};

struct RankResult {
  RankQuery query;
  std::size_t rank = 1;
  Real score = 0;
};

struct MetricsReport {
  Real mr = 0;
  Real mrr = 0;
  std::map<int, Real> hits;  // K -> proportion of ranks <= K
  std::size_t queries = 0;
  std::size_t skipped = 0;

  // mr=.. mrr=.. hits1=.. ... queries=.. skipped=..
  std::string to_string() const;
};

// Filtered rank of the true entity among all entities. Candidates whose
// corrupted triple is in `filter` are skipped (the true triple never is).
// With `joints` == nullptr every candidate's joint embedding is recomputed.
RankResult rank_entity(const RankQuery& query, const Model& model, const TripleSet& filter,
                       TieMode tie = TieMode::optimistic, const JointTable* joints = nullptr);

// Aggregates MR, MRR and Hits@K from ranks.
MetricsReport summarize_ranks(std::span<const std::size_t> ranks, std::span<const int> ks);

// Ranks head and tail of every test triple.
MetricsReport evaluate(std::span<const Triple> test, const Model& model, const TripleSet& filter,
                       std::span<const int> ks, TieMode tie = TieMode::optimistic, unsigned threads = 1,
                       const JointTable* joints = nullptr);

struct Answer {
  EntityId entity;
  Real score = 0;
};

// The k entities with the smallest f(h, r, .), ascending, unfiltered.
std::vector<Answer> answer(EntityId head, RelationId relation, std::size_t k, const Model& model,
                           const JointTable* joints = nullptr);

TripleSet make_filter(std::span<const Triple> triples);

}  // namespace dkge
