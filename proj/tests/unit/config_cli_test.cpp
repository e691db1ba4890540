#include <gtest/gtest.h>

#include "comet/cemb.hpp"
#include "comet/config.hpp"
#include "comet/synthetic.hpp"
#include "support/mock_server.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace comet;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "comet_cli_unit" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run(const std::string& args) {
    const std::string cmd = std::string(COMET_BINARY) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void put(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

json base_config() {
    return json::parse(R"({
      "data": {
        "modalities": {"image": "data/image.cemb", "text": "data/text.cemb"},
        "tabular": {"path": "data/tabular.csv", "numeric": ["weight", "age"], "categorical": ["color", "size"]},
        "labels": {"path": "data/labels.csv"},
        "class_names": ["cat", "dog", "car", "truck"],
        "tree": "data/tree.json"
      },
      "fusion": {"modalities": [{"name": "image", "pca_dim": 8}, {"name": "text", "pooling": "pal", "pca_dim": 8}]},
      "pal": {"iterations": 1, "pal_pca_dim": 16},
      "eval": {"seed": 3},
      "output_dir": "out"
    })");
}

// Synthetic inputs shared by the CLI tests.
fs::path synth_dir() {
    static const fs::path dir = [] {
        const auto d = fresh_dir("shared");
        EXPECT_EQ(run("synth --out " + (d / "data").string() + " --n 160 --seed 2"), 0);
        return d;
    }();
    return dir;
}

}  // namespace

TEST(Config, DefaultsAndPathResolution) {
    const auto cfg = parse_run_config(base_config(), "/base/dir");
    EXPECT_EQ(cfg.data.modalities.at("image"), fs::path("/base/dir/data/image.cemb"));
    EXPECT_EQ(cfg.output_dir, fs::path("/base/dir/out"));
    EXPECT_EQ(cfg.pal.fit.iterations, 1);
    EXPECT_DOUBLE_EQ(cfg.pal.fit.lambda, 1e4);
    EXPECT_EQ(cfg.pal.fit.q_max, 500000u);
    EXPECT_EQ(cfg.fusion.modalities[1].spec.pooling, PoolingKind::pal);
    EXPECT_EQ(cfg.fusion.modalities[0].spec.pca_dim, 8u);
    EXPECT_EQ(cfg.predictor.kind, "reference");
    EXPECT_EQ(cfg.hierarchy.budget, 200000u);
    EXPECT_DOUBLE_EQ(cfg.eval.split_fraction, 0.8);
    EXPECT_EQ(cfg.eval.seed, 3u);
}

TEST(Config, SchemaViolations) {
    auto j = base_config();
    j["fusion"]["modalities"][0]["pca"] = 4;
    EXPECT_THROW(parse_run_config(j, "."), SchemaError);
    j = base_config();
    j["predictor"] = {{"kind", "magic"}};
    EXPECT_THROW(parse_run_config(j, "."), SchemaError);
    j = base_config();
    j["pal"]["scorer"] = "vibes";
    EXPECT_THROW(parse_run_config(j, "."), SchemaError);
    j = base_config();
    j["eval"]["split_fraction"] = "half";
    EXPECT_THROW(parse_run_config(j, "."), SchemaError);
    j = base_config();
    j["predictor"] = {{"kind", "remote"}, {"remote", {{"endpoint", "localhost:1"}}}};
    EXPECT_THROW(parse_run_config(j, "."), SchemaError);
}

TEST(Config, MissingInputsAreSchemaErrors) {
    const auto cfg = parse_run_config(base_config(), fresh_dir("missing"));
    EXPECT_THROW(check_inputs_exist(cfg, false), SchemaError);
}

TEST(Cli, SynthWritesBundledFiles) {
    const auto data = synth_dir() / "data";
    for (const char* f : {"image.cemb", "text.cemb", "tabular.csv", "labels.csv", "tree.json"})
        EXPECT_TRUE(fs::exists(data / f)) << f;
    const auto text = std::get<TokenEmbeddingSet>(read_embeddings(data / "text.cemb"));
    EXPECT_EQ(text.n(), 160u);
    EXPECT_FALSE(text.grid.has_value());
}

TEST(Cli, FusePredictWritesArtifactsAndIsRepeatable) {
    const auto dir = fresh_dir("fuse");
    fs::create_directory_symlink(synth_dir() / "data", dir / "data");
    put(dir / "config.json", base_config().dump());
    ASSERT_EQ(run("--threads 1 --timings fuse-predict --config " + (dir / "config.json").string()), 0);
    for (const char* f : {"metrics.json", "predictions.cemb", "fusion.cfus", "tabular_encoding.json", "timings.json",
                          "pooler_text.json", "pal_report_text.json"})
        EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
    const auto metrics = json::parse(slurp(dir / "out" / "metrics.json"));
    EXPECT_EQ(metrics["n_query"].get<int>() + metrics["n_support"].get<int>(), 160);
    const auto preds = std::get<FeatureMatrix>(read_embeddings(dir / "out" / "predictions.cemb"));
    EXPECT_EQ(preds.d(), 4u);
    const std::string first = slurp(dir / "out" / "metrics.json");
    ASSERT_EQ(run("fuse-predict --config " + (dir / "config.json").string()), 0);
    EXPECT_EQ(slurp(dir / "out" / "metrics.json"), first);
}

TEST(Cli, ExitCodes) {
    const auto dir = fresh_dir("codes");
    auto j = base_config();
    put(dir / "missing.json", j.dump());
    EXPECT_EQ(run("fuse-predict --config " + (dir / "missing.json").string()), 2);
    put(dir / "broken.json", "{not json");
    EXPECT_EQ(run("fuse-predict --config " + (dir / "broken.json").string()), 2);
    EXPECT_EQ(run("fuse-predict"), 2);
    EXPECT_EQ(run("no-such-command"), 2);
    EXPECT_EQ(run("--help"), 0);

    // Parses, but the tree does not cover the data's classes: still invalid input.
    fs::create_directory_symlink(synth_dir() / "data", dir / "data");
    put(dir / "bad_tree.json", R"({"nodes":[{"id":"r"},{"id":"a","parent":"r"}],"leaf_classes":{"a":0}})");
    j["data"]["tree"] = "bad_tree.json";
    j["hierarchy"] = {{"enabled", true}};
    put(dir / "tree_mismatch.json", j.dump());
    EXPECT_EQ(run("fuse-predict --config " + (dir / "tree_mismatch.json").string()), 2);

    // Remote predictor with nothing listening: runtime failure.
    j = base_config();
    j["predictor"] = {{"kind", "remote"}, {"remote", {{"endpoint", "http://127.0.0.1:9"}, {"retries", 0}}}};
    put(dir / "remote.json", j.dump());
    EXPECT_EQ(run("fuse-predict --config " + (dir / "remote.json").string()), 1);
}

TEST(Cli, PalFitHierDiagnostics) {
    const auto dir = fresh_dir("others");
    fs::create_directory_symlink(synth_dir() / "data", dir / "data");
    auto j = base_config();
    j["pal"]["modality"] = "text";
    j["output_dir"] = "pal";
    put(dir / "pal.json", j.dump());
    ASSERT_EQ(run("pal-fit --config " + (dir / "pal.json").string()), 0);
    const auto report = json::parse(slurp(dir / "pal" / "fit_report.json"));
    EXPECT_EQ(report["candidates"].size(), 2u);
    EXPECT_EQ(report["candidates"][0]["theta_norm"].get<double>(), 0.0);
    EXPECT_TRUE(report.contains("holdout"));
    EXPECT_TRUE(fs::exists(dir / "pal" / "heatmap.json"));

    j = base_config();
    j["output_dir"] = "hier";
    j["hierarchy"] = {{"budget", 50}};
    put(dir / "hier.json", j.dump());
    ASSERT_EQ(run("hier --config " + (dir / "hier.json").string()), 0);
    const auto hier = json::parse(slurp(dir / "hier" / "hier_report.json"));
    EXPECT_EQ(hier["subtasks"].size(), 3u);
    for (const auto& s : hier["subtasks"]) EXPECT_LE(s["support"].get<int>(), 50);
    EXPECT_TRUE(fs::exists(dir / "hier" / "confusions.json"));

    j = base_config();
    j["output_dir"] = "diag";
    j["diagnostics"] = {{"modality", "image"}, {"dims", {2, 4, 8, 16, 32}}};
    put(dir / "diag.json", j.dump());
    ASSERT_EQ(run("diagnostics --config " + (dir / "diag.json").string()), 0);
    const auto sweep = json::parse(slurp(dir / "diag" / "sweep.json"));
    ASSERT_EQ(sweep["rows"].size(), 5u);
    EXPECT_FALSE(sweep["unprojected"]["explained_variance_measured"].get<bool>());
    EXPECT_EQ(sweep["unprojected"]["explained_variance"].get<double>(), 1.0);
    double prev = 0.0;
    for (const auto& r : sweep["rows"]) {
        EXPECT_GE(r["explained_variance"].get<double>(), prev - 1e-12);
        prev = r["explained_variance"].get<double>();
    }
}

TEST(Cli, DepthOneHierarchyMatchesFusePredict) {
    const auto dir = fresh_dir("depth1");
    fs::create_directory_symlink(synth_dir() / "data", dir / "data");
    put(dir / "flat_tree.json", R"({"nodes":[{"id":"r"},{"id":"cat","parent":"r"},{"id":"dog","parent":"r"},
                                              {"id":"car","parent":"r"},{"id":"truck","parent":"r"}],
                                    "leaf_classes":{"cat":0,"dog":1,"car":2,"truck":3}})");
    auto j = base_config();
    j["fusion"]["modalities"] = json::array({json{{"name", "image"}, {"pca_dim", 8}}});
    j["data"]["tree"] = "flat_tree.json";
    j["output_dir"] = "flat";
    put(dir / "flat.json", j.dump());
    j["output_dir"] = "tree";
    put(dir / "tree.json", j.dump());
    ASSERT_EQ(run("fuse-predict --config " + (dir / "flat.json").string()), 0);
    ASSERT_EQ(run("hier --config " + (dir / "tree.json").string()), 0);
    const auto flat = json::parse(slurp(dir / "flat" / "metrics.json"));
    const auto hier = json::parse(slurp(dir / "tree" / "hier_report.json"));
    EXPECT_DOUBLE_EQ(flat["metrics"]["accuracy"].get<double>(), hier["metrics"]["leaf_accuracy"].get<double>());
    EXPECT_DOUBLE_EQ(flat["metrics"]["macro_f1"].get<double>(), hier["metrics"]["macro_f1"].get<double>());
}

TEST(Cli, IngestCsv) {
    const auto dir = fresh_dir("ingest");
    put(dir / "t.csv", "id,a,b,y\nr1,1.5,x,cat\nr2,,y,dog\nr3,4,x,1\n");
    ASSERT_EQ(run("ingest --csv " + (dir / "t.csv").string() + " --out " + (dir / "t.cemb").string() +
                  " --id-column id --numeric a --categorical b --label-column y --class-names cat,dog"),
              0);
    const auto m = std::get<FeatureMatrix>(read_embeddings(dir / "t.cemb"));
    EXPECT_EQ(m.sample_ids, (std::vector<std::string>{"r1", "r2", "r3"}));
    EXPECT_EQ(*m.labels, (Labels{0, 1, 1}));
    EXPECT_DOUBLE_EQ(m.values(1, 0), 2.75);
    EXPECT_TRUE(fs::exists(dir / "t.cemb.encoding.json"));
    EXPECT_EQ(run("ingest --csv " + (dir / "t.csv").string() + " --out " + (dir / "u.cemb").string() + " --numeric zzz"), 2);
}

TEST(Cli, ServeCheckAgainstMockServer) {
    mock::TfmServer server;
    const auto dir = fresh_dir("serve");
    EXPECT_EQ(run("serve-check --endpoint " + server.endpoint() + " --out " + (dir / "report.json").string()), 0);
    const auto report = json::parse(slurp(dir / "report.json"));
    EXPECT_TRUE(report["pass"].get<bool>());
    EXPECT_GE(report["checks"].size(), 7u);

    server.faults.unnormalized = true;
    EXPECT_EQ(run("serve-check --endpoint " + server.endpoint() + " --out " + (dir / "bad.json").string()), 1);
    EXPECT_FALSE(json::parse(slurp(dir / "bad.json"))["pass"].get<bool>());
}
