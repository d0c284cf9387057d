#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace caries::cli {

/// JSON record of one run: command, resolved config, seed, version, timings
/// and outputs. Written when the run starts and rewritten when it ends.
class RunManifest {
public:
    RunManifest(std::filesystem::path file, std::string command, const std::vector<std::string>& argv,
                nlohmann::json config, std::uint64_t seed);

    void add_output(const std::string& key, const std::filesystem::path& path);
    void add_timing(const std::string& key, double seconds);
    void set_result(const std::string& key, nlohmann::json value);
    void finish(bool ok, const std::string& error = {});

    const std::filesystem::path& file() const { return file_; }

private:
    void write() const;

    std::filesystem::path file_;
    nlohmann::json doc_;
    std::chrono::steady_clock::time_point start_;
};

std::string version_string();

}  // namespace caries::cli
