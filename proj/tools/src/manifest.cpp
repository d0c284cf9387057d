#include "manifest.hpp"

#include <ctime>
#include <fstream>

#include "caries/error.hpp"

namespace caries::cli {

namespace {

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

std::string version_string() { return std::string(CARIES_VERSION) + "+" + CARIES_GIT_REV; }

RunManifest::RunManifest(std::filesystem::path file, std::string command, const std::vector<std::string>& argv,
                         nlohmann::json config, std::uint64_t seed)
    : file_(std::move(file)), start_(std::chrono::steady_clock::now()) {
    doc_ = {{"command", std::move(command)},
            {"argv", argv},
            {"config", std::move(config)},
            {"seed", seed},
            {"version", version_string()},
            {"started_at", utc_now()},
            {"status", "running"},
            {"timings", nlohmann::json::object()},
            {"outputs", nlohmann::json::object()},
            {"results", nlohmann::json::object()}};
    write();
}

void RunManifest::add_output(const std::string& key, const std::filesystem::path& path) {
    doc_["outputs"][key] = path.string();
}

void RunManifest::add_timing(const std::string& key, double seconds) { doc_["timings"][key] = seconds; }

void RunManifest::set_result(const std::string& key, nlohmann::json value) {
    doc_["results"][key] = std::move(value);
}

void RunManifest::finish(bool ok, const std::string& error) {
    doc_["status"] = ok ? "ok" : "failed";
    if (!error.empty()) doc_["error"] = error;
    doc_["finished_at"] = utc_now();
    doc_["timings"]["total_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write();
}

void RunManifest::write() const {
    std::ofstream out(file_, std::ios::trunc);
    if (!out) throw FormatError("cannot write manifest " + file_.string());
    out << doc_.dump(2) << "\n";
}

}  // namespace caries::cli
