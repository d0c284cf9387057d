#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "caries_cli/cli.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;

namespace {

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "caries");
    return caries::cli::run(args);
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Map of relative path -> bytes for every file under `dir` except manifests,
// which carry timestamps.
std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "manifest.json")
            out[fs::relative(e.path(), dir).string()] = read_text(e.path());
    return out;
}

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new fs::path(oracle::scratch_dir("cli"));
        ASSERT_EQ(cli({"gen-data", "--out", (*dir_ / "data").string(), "--seed", "3"}), 0);
    }
    static void TearDownTestSuite() {
        fs::remove_all(*dir_);
        delete dir_;
    }
    static fs::path* dir_;
};
fs::path* Cli::dir_ = nullptr;

}  // namespace

TEST_F(Cli, UsageErrors) {
    EXPECT_NE(cli({"train", "--data", "x", "--out", "y", "--bogus"}), 0);
    EXPECT_NE(cli({"frobnicate"}), 0);
    EXPECT_NE(cli({"eval", "--data", "x"}), 0);
    EXPECT_EQ(cli({"--help"}), 0);
}

TEST_F(Cli, GenDataIsReproducible) {
    ASSERT_EQ(cli({"gen-data", "--out", (*dir_ / "again").string(), "--seed", "3"}), 0);
    const auto a = tree(*dir_ / "data"), b = tree(*dir_ / "again");
    EXPECT_EQ(a.size(), b.size());
    EXPECT_TRUE(a == b);
    const auto m = nlohmann::json::parse(read_text(*dir_ / "again" / "manifest.json"));
    EXPECT_EQ(m["status"], "ok");
    EXPECT_EQ(m["seed"], 3);
}

TEST_F(Cli, TooFewQueriesIsRejected) {
    const auto out = *dir_ / "k1";
    EXPECT_EQ(cli({"train", "--data", (*dir_ / "data").string(), "--out", out.string(), "--topk", "1", "--epochs", "1"}),
              2);
    EXPECT_FALSE(fs::exists(out / "model.ckpt"));
}

TEST_F(Cli, TrainEvalInfer) {
    const auto run = *dir_ / "run";
    ASSERT_EQ(cli({"train", "--data", (*dir_ / "data").string(), "--out", run.string(), "--epochs", "1", "--seed", "2"}),
              0);
    ASSERT_TRUE(fs::exists(run / "model.ckpt"));
    ASSERT_TRUE(fs::exists(run / "loss.csv"));
    const auto manifest = nlohmann::json::parse(read_text(run / "manifest.json"));
    EXPECT_EQ(manifest["status"], "ok");
    EXPECT_EQ(manifest["config"]["epochs"], 1);

    const auto model = (run / "model.ckpt").string();
    ASSERT_EQ(cli({"eval", "--model", model, "--data", (*dir_ / "data").string(), "--out", (*dir_ / "e1").string()}), 0);
    ASSERT_EQ(cli({"eval", "--model", model, "--data", (*dir_ / "data").string(), "--out", (*dir_ / "e2").string()}), 0);
    const auto r1 = read_text(*dir_ / "e1" / "report.json");
    EXPECT_FALSE(r1.empty());
    EXPECT_EQ(r1, read_text(*dir_ / "e2" / "report.json"));

    ASSERT_EQ(cli({"infer", "--model", model, "--data", (*dir_ / "data" / "test").string(), "--out",
                   (*dir_ / "inf").string(), "--score-thr", "0"}),
              0);
    std::ifstream in(*dir_ / "inf" / "detections.jsonl");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j.contains("image_id"));
        EXPECT_GE(j["score"].get<double>(), 0.0);
        ++n;
    }
    EXPECT_EQ(n, 60u * 16u);

    ASSERT_EQ(cli({"saliency", "--model", model, "--data", (*dir_ / "data" / "test" / "images" / "img_000360.png").string(),
                   "--out", (*dir_ / "sal").string()}),
              0);
    EXPECT_TRUE(fs::exists(*dir_ / "sal" / "saliency.png"));
    EXPECT_TRUE(fs::exists(*dir_ / "sal" / "hybrid.png"));
}
