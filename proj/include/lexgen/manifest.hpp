#pragma once

// Run manifests: the fully resolved configuration of a CLI run plus digests
// of every input file. Replaying a manifest reproduces the run byte for byte.

#include <string>

#include <json.hpp>

namespace lexgen {

inline constexpr const char* kEngineVersion = "0.1.0";

// FNV-1a 64-bit digest of a file's bytes, as hex.
std::string file_digest(const std::string& path);

struct RunManifest {
    std::string engine_version = kEngineVersion;
    std::string command;
    nlohmann::json options = nlohmann::json::object();
    nlohmann::json inputs = nlohmann::json::object();

    void add_input(const std::string& name, const std::string& path);

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);

    void save(const std::string& path) const;
    static RunManifest load(const std::string& path);

    // Recomputes input digests; throws InputError on any mismatch.
    void verify_inputs() const;
};

}  // namespace lexgen
