#pragma once

#include "dkge/context.hpp"
#include "dkge/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>

namespace dkge {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kContextCacheVersion = 1;

// Versioned little-endian binary holding the whole Model (dictionaries,
// embeddings, AGCN weights, gates, context table and its configuration,
// including the run seed). Written to a temporary file and renamed.
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

// Context tables keyed by snapshot content hash and context configuration.
// Loading returns nullopt when the file is missing, has another version, or
// was built for a different snapshot or configuration.
void save_context_cache(const std::filesystem::path& path, const Snapshot& snapshot, const ContextConfig& config,
                        const ContextTable& table);
std::optional<ContextTable> load_context_cache(const std::filesystem::path& path, const Snapshot& snapshot,
                                               const ContextConfig& config);

}  // namespace dkge
