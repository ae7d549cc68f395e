// SPDX-License-Identifier: Apache-2.0
// Exercises the shared library through its C interface only.
#include "nopkit/nopkit.h"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(
[data]
pde = burgers
resolution = 32
[model]
width = 6
layers = 1
modes = 6
projection_hidden = 8
[train]
epochs = 2
batch_size = 4
test_samples = 4
seed = 5
)";

// The 4-layer dense model of the published parameter table.
const char* kPaperDense = R"(
[data]
pde = navier-stokes
resolution = 128
[model]
width = 64
layers = 4
modes = 64,32
projection_hidden = 256
grid_embedding = true
)";

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("nopkit_capi_" + name);
    fs::remove_all(p);
    return p;
}

nopkit_config* parse(const char* text, std::vector<const char*> ov = {}) {
    nopkit_config* c = nullptr;
    const nopkit_status s = nopkit_config_parse(text, ov.data(), ov.size(), &c);
    EXPECT_EQ(s, NOPKIT_OK) << nopkit_last_error();
    return c;
}

std::string dump(const nopkit_config* c) {
    std::size_t len = 0;
    EXPECT_EQ(nopkit_config_dump(c, nullptr, 0, &len), NOPKIT_OK);
    std::string s(len + 1, '\0');
    EXPECT_EQ(nopkit_config_dump(c, s.data(), s.size(), &len), NOPKIT_OK);
    s.resize(len);
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::vector<double> predict(const nopkit_model* m, std::size_t s) {
    std::vector<double> x(s), y(s);
    for (std::size_t i = 0; i < s; ++i) x[i] = std::cos(0.2 * static_cast<double>(i));
    const std::size_t shape[3] = {1, s, 1};
    std::size_t len = 0;
    EXPECT_EQ(nopkit_model_predict(m, x.data(), shape, 3, y.data(), y.size(), &len), NOPKIT_OK) << nopkit_last_error();
    EXPECT_EQ(len, s);
    return y;
}

} // namespace

TEST(CApi, ConfigRoundTripAndErrors) {
    nopkit_config* c = parse(kTiny);
    const std::string a = dump(c);
    nopkit_config* c2 = parse(a.c_str());
    EXPECT_EQ(dump(c2), a);
    nopkit_config_free(c);
    nopkit_config_free(c2);

    nopkit_config* bad = nullptr;
    EXPECT_EQ(nopkit_config_parse("[model]\nwidht = 3\n", nullptr, 0, &bad), NOPKIT_ERR_CONFIG);
    EXPECT_EQ(bad, nullptr);
    EXPECT_NE(std::string(nopkit_last_error()).find("widht"), std::string::npos);
    EXPECT_EQ(nopkit_config_load("/nonexistent/run.ini", nullptr, 0, &bad), NOPKIT_ERR_CONFIG);
    EXPECT_EQ(nopkit_config_parse(nullptr, nullptr, 0, &bad), NOPKIT_ERR_ARGUMENT);
    nopkit_config_free(nullptr);
    nopkit_model_free(nullptr);
}

TEST(CApi, PublishedParameterCount) {
    nopkit_config* c = parse(kPaperDense);
    nopkit_info info{};
    ASSERT_EQ(nopkit_config_info(c, &info), NOPKIT_OK) << nopkit_last_error();
    EXPECT_EQ(info.param_count, 67142657u);
    EXPECT_EQ(info.model_compression, 1.0);
    EXPECT_STREQ(info.form, "dense");
    std::size_t len = 0;
    ASSERT_EQ(nopkit_config_describe(c, nullptr, 0, &len), NOPKIT_OK);
    std::string text(len + 1, '\0');
    ASSERT_EQ(nopkit_config_describe(c, text.data(), text.size(), &len), NOPKIT_OK);
    EXPECT_NE(text.find("67142657"), std::string::npos);
    nopkit_config_free(c);
}

TEST(CApi, CpCompressionAgainstDenseTable) {
    // CP rank sized so the whole model holds about 447K parameters: about 150x
    // fewer than the 67M dense model.
    nopkit_config* c = parse(kPaperDense, {"model.form=cp", "model.ranks=1781"});
    nopkit_info info{};
    ASSERT_EQ(nopkit_config_info(c, &info), NOPKIT_OK) << nopkit_last_error();
    EXPECT_EQ(info.dense_param_count, 67142657u);
    EXPECT_NEAR(static_cast<double>(info.param_count), 447e3, 0.01 * 447e3);
    EXPECT_NEAR(info.model_compression, 150.0, 0.02 * 150.0);
    nopkit_config_free(c);
}

TEST(CApi, GenerateTrainEvaluate) {
    const fs::path root = scratch("pipeline");
    nopkit_config* c = parse(kTiny);
    ASSERT_EQ(nopkit_gen_data(c, 12, 40, (root / "d1").c_str()), NOPKIT_OK) << nopkit_last_error();
    ASSERT_EQ(nopkit_gen_data(c, 12, 40, (root / "d2").c_str()), NOPKIT_OK);
    EXPECT_EQ(slurp(root / "d1" / "inputs.ntns"), slurp(root / "d2" / "inputs.ntns"));
    EXPECT_EQ(slurp(root / "d1" / "outputs.ntns"), slurp(root / "d2" / "outputs.ntns"));

    int calls = 0;
    const auto cb = [](const nopkit_epoch*, void* user) { ++*static_cast<int*>(user); };
    ASSERT_EQ(nopkit_train(c, (root / "d1").c_str(), (root / "run").c_str(), cb, &calls), NOPKIT_OK)
        << nopkit_last_error();
    EXPECT_EQ(calls, 2);
    EXPECT_TRUE(fs::exists(root / "run" / "config.ini"));

    // metrics.csv: header plus one row per epoch.
    std::ifstream csv(root / "run" / "metrics.csv");
    std::vector<std::string> lines;
    for (std::string l; std::getline(csv, l);) lines.push_back(l);
    ASSERT_EQ(lines.size(), 3u);

    // The snapshot reparses to the same configuration.
    nopkit_config* snap = nullptr;
    ASSERT_EQ(nopkit_config_load((root / "run" / "config.ini").c_str(), nullptr, 0, &snap), NOPKIT_OK);
    EXPECT_EQ(dump(snap), dump(c));
    nopkit_config_free(snap);

    // Evaluating the held-out split reproduces the final logged test error.
    nopkit_model* m = nullptr;
    ASSERT_EQ(nopkit_model_load((root / "run" / "checkpoint").c_str(), &m), NOPKIT_OK) << nopkit_last_error();
    const std::size_t res[2] = {32, 64};
    nopkit_eval_row rows[2];
    ASSERT_EQ(nopkit_eval(m, (root / "d1").c_str(), 4, res, 2, rows), NOPKIT_OK) << nopkit_last_error();
    std::stringstream last(lines.back());
    std::string field;
    std::vector<double> vals;
    while (std::getline(last, field, ',')) vals.push_back(std::stod(field));
    EXPECT_EQ(rows[0].rel_l2, vals[2]);
    EXPECT_EQ(rows[0].rel_h1, vals[3]);
    EXPECT_EQ(rows[1].resolution, 64u);
    EXPECT_TRUE(std::isfinite(rows[1].rel_l2));

    nopkit_info info{};
    ASSERT_EQ(nopkit_model_info(m, &info), NOPKIT_OK);
    EXPECT_EQ(info.model_compression, 1.0);
    EXPECT_EQ(info.multigrid, 0);
    EXPECT_EQ(nopkit_eval(m, (root / "missing").c_str(), 0, res, 1, rows), NOPKIT_ERR_IO);
    EXPECT_EQ(nopkit_eval(m, (root / "d1").c_str(), 99, res, 1, rows), NOPKIT_ERR_SHAPE);
    nopkit_model_free(m);
    nopkit_config_free(c);
    fs::remove_all(root);
}

TEST(CApi, ZeroEpochsSavesInitialization) {
    const fs::path root = scratch("zero");
    nopkit_config* c = parse(kTiny, {"train.epochs=0"});
    ASSERT_EQ(nopkit_gen_data(c, 8, 1, (root / "d").c_str()), NOPKIT_OK);
    ASSERT_EQ(nopkit_train(c, (root / "d").c_str(), (root / "run").c_str(), nullptr, nullptr), NOPKIT_OK)
        << nopkit_last_error();
    nopkit_model* trained = nullptr;
    nopkit_model* fresh = nullptr;
    ASSERT_EQ(nopkit_model_load((root / "run" / "checkpoint").c_str(), &trained), NOPKIT_OK);
    ASSERT_EQ(nopkit_model_create(c, 5, &fresh), NOPKIT_OK);
    EXPECT_EQ(predict(trained, 32), predict(fresh, 32));
    nopkit_model_free(trained);
    nopkit_model_free(fresh);
    nopkit_config_free(c);
    fs::remove_all(root);
}

TEST(CApi, NavierStokesManifestEchoesConfig) {
    const fs::path root = scratch("ns");
    nopkit_config* c = parse("[data]\npde = navier-stokes\nresolution = 16\nre = 500\nt_final = 5\n[model]\nmodes = 4\n");
    ASSERT_EQ(nopkit_gen_data(c, 1, 0, (root / "d").c_str()), NOPKIT_OK) << nopkit_last_error();
    const std::string manifest = slurp(root / "d" / "manifest.txt");
    EXPECT_NE(manifest.find("ns.re=500"), std::string::npos);
    EXPECT_NE(manifest.find("ns.T=5"), std::string::npos);
    EXPECT_NE(manifest.find("pde=navier-stokes"), std::string::npos);
    nopkit_config_free(c);
    fs::remove_all(root);
}

TEST(CApi, SolverFailureNamesSample) {
    const fs::path root = scratch("blowup");
    // An explicit step far beyond the diffusive stability limit.
    nopkit_config* c = parse(kTiny, {"data.dt=5", "data.t_final=50"});
    EXPECT_EQ(nopkit_gen_data(c, 2, 0, (root / "d").c_str()), NOPKIT_ERR_SOLVER);
    EXPECT_NE(std::string(nopkit_last_error()).find("sample 0"), std::string::npos);
    nopkit_config_free(c);
    fs::remove_all(root);
}

TEST(CApi, MismatchedDataIsShapeError) {
    const fs::path root = scratch("mismatch");
    nopkit_config* c = parse(kTiny);
    ASSERT_EQ(nopkit_gen_data(c, 8, 0, (root / "d").c_str()), NOPKIT_OK);
    nopkit_config* other = parse(kTiny, {"data.resolution=24"});
    EXPECT_EQ(nopkit_train(other, (root / "d").c_str(), (root / "run").c_str(), nullptr, nullptr), NOPKIT_ERR_SHAPE);
    nopkit_config_free(other);
    nopkit_config_free(c);
    fs::remove_all(root);
}
