#include "lexgen/manifest.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>

#include "lexgen/errors.hpp"

namespace lexgen {

std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path + " for digesting");
    uint64_t hash = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            hash ^= static_cast<unsigned char>(buf[i]);
            hash *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    char out[17];
    std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(hash));
    return out;
}

void RunManifest::add_input(const std::string& name, const std::string& path) {
    inputs[name] = {{"path", path}, {"digest", file_digest(path)}};
}

nlohmann::json RunManifest::to_json() const {
    return {{"engine_version", engine_version},
            {"command", command},
            {"seed", options.value("seed", uint64_t(0))},
            {"options", options},
            {"inputs", inputs}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
    RunManifest m;
    try {
        m.engine_version = j.at("engine_version").get<std::string>();
        m.command = j.at("command").get<std::string>();
        m.options = j.at("options");
        m.inputs = j.at("inputs");
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("manifest schema error: ") + e.what());
    }
    return m;
}

void RunManifest::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open " + path + " for writing");
    out << to_json().dump(2) << "\n";
}

RunManifest RunManifest::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open manifest " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("manifest parse error: ") + e.what());
    }
    return from_json(j);
}

void RunManifest::verify_inputs() const {
    for (const auto& [name, entry] : inputs.items()) {
        std::string path = entry.at("path").get<std::string>();
        std::string expect = entry.at("digest").get<std::string>();
        std::string got = file_digest(path);
        if (got != expect)
            throw InputError("input '" + name + "' (" + path + ") changed: digest " +
                             got + ", manifest says " + expect);
    }
}

}  // namespace lexgen
