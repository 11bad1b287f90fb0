#pragma once

#include "dcolor/training.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dcolor {

// Canonical JSON of a resolved config (snake_case keys, every field present).
std::string configToJson(const ExperimentConfig& cfg, int indent = 2);

// Parses JSON text, applies `key=value` overrides, fills defaults, resolves
// derived fields and validates. Override keys may be a dotted suffix; the
// shallowest match wins and equal-depth matches are ambiguous. Unknown keys are
// rejected with the nearest valid key. A run manifest (with a "config" member) is accepted as well.
ExperimentConfig configFromJson(const std::string& text, const std::vector<std::string>& overrides = {},
                                const std::string& source = "config");
ExperimentConfig parseConfig(const std::string& path, const std::vector<std::string>& overrides = {});

// fnv1a64 of the compact canonical JSON.
std::uint64_t configDigest(const ExperimentConfig& cfg);

// Every dotted leaf key accepted by the parser.
std::vector<std::string> configKeys();

// Closest key by edit distance, for error messages.
std::string nearestKey(const std::string& key, const std::vector<std::string>& candidates);

} // namespace dcolor
