#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "fineq/io.hpp"

using namespace fineq;

TEST(Json, SpaceAndKernelRoundTrip) {
  const auto b = build_random_chain(4, 3);
  const auto k = kernel_from_json(json::parse(to_json(b.kernel).dump()));
  EXPECT_EQ(k.space().labels(), b.space().labels());
  EXPECT_EQ(k.space().mu(), b.space().mu());
  ASSERT_EQ(k.entries().size(), b.kernel.entries().size());
  for (std::size_t i = 0; i < k.entries().size(); ++i) {
    EXPECT_EQ(k.entries()[i].from, b.kernel.entries()[i].from);
    EXPECT_EQ(k.entries()[i].to, b.kernel.entries()[i].to);
    EXPECT_EQ(k.entries()[i].rate, b.kernel.entries()[i].rate);
  }
  EXPECT_THROW(space_from_json(json{{"labels", {"a"}}}), InvalidArgument);
  EXPECT_THROW(kernel_from_json(json{{"space", to_json(b.space())}, {"rates", {{0, 1}}}}), InvalidArgument);
}

TEST(Json, TensorConfigurationWindow) {
  IndexedTensor t(3, 2, {1, -2, 3, 4.5, 0, 0, 1e-17, 7});
  const auto t2 = tensor_from_json(json::parse(to_json(t).dump()));
  EXPECT_EQ(t2.order, 3);
  EXPECT_EQ(t2.entries, t.entries);
  EXPECT_THROW(tensor_from_json(json{{"order", 2}, {"dim", 2}, {"entries", {1, 2, 3}}}), InvalidArgument);

  const auto eta = sample_process(Window::box(2, 1.0, 15.0), 4);
  const auto eta2 = configuration_from_json(json::parse(to_json(eta).dump()));
  EXPECT_EQ(eta2.coords(), eta.coords());

  Window w{{0.0, -1.0}, {2.0, 1.0}, 3.5};
  const auto w2 = window_from_json(json::parse(to_json(w).dump()));
  EXPECT_EQ(w2.lower, w.lower);
  EXPECT_EQ(w2.upper, w.upper);
  EXPECT_EQ(w2.intensity, w.intensity);
  EXPECT_THROW(window_from_json(json{{"lower", {0.0}}, {"upper", {0.0}}, {"intensity", 1.0}}), InvalidArgument);
}

TEST(Models, BuildFromSpec) {
  for (const auto& name : model_names()) EXPECT_FALSE(name.empty());
  const auto b = build_model(json{{"model", "hardcore"}, {"params", {{"eta", 0.1}, {"star", 3}}}});
  EXPECT_EQ(b.metadata["model"], "hardcore");
  EXPECT_EQ(build_model(json{{"model", "interchange"}, {"params", {{"n", 3}}}}).space().size(), 6u);
  EXPECT_EQ(build_model(json{{"model", "two_point"}}).space().size(), 2u);
  const auto k = build_model(json{{"model", "kernel"}, {"params", {{"kernel", to_json(b.kernel)}}}});
  EXPECT_EQ(k.space().size(), b.space().size());
  EXPECT_THROW(build_model(json{{"model", "nope"}}), InvalidArgument);
  EXPECT_THROW(build_model(json{{"params", json::object()}}), InvalidArgument);
  EXPECT_THROW(build_model(json{{"model", "hardcore"}, {"params", {{"star", 3}}}}), InvalidArgument);
  EXPECT_THROW(build_model(json{{"model", "interchange"}, {"params", {{"n", "four"}}}}), InvalidArgument);
}

TEST(Models, BundleSerializationCarriesCitations) {
  const auto j = to_json(build_interchange(4));
  ASSERT_TRUE(j.contains("predicted"));
  for (const auto& p : j["predicted"]) EXPECT_FALSE(p["citation"].get<std::string>().empty());
  EXPECT_EQ(j["metadata"]["model"], "interchange");
}

TEST(Reports, ConstantReportFields) {
  const auto r = optimal_poincare(build_two_point(0.5).kernel);
  const auto j = to_json(r);
  for (const char* key : {"kind", "parameter", "value", "witness", "margins"}) EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["kind"], "poincare");
  EXPECT_TRUE(j["parameter"].is_null());
  EXPECT_TRUE(finite_or_null(std::numeric_limits<double>::infinity()).is_null());
}

TEST(Reports, MomentCsv) {
  auto b = build_two_point(0.5);
  const auto rep = check_twosided_moments(b.kernel, {0.0, 1.0}, BecknerRegime{1.0, 0.0, std::nullopt}, {2, 4});
  const auto csv = to_csv(rep);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "variant,r,lhs,rhs,margin,lhs_stderr,rhs_stderr,lhs_lower");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_EQ(to_json(rep)["rows"].size(), 2u);
}

TEST(Manifest, HashAndFields) {
  // Published FNV-1a 64-bit test vectors.
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xaf63dc4c8601ec8cULL), "af63dc4c8601ec8c");
  EXPECT_EQ(hex64(1), "0000000000000001");
  const json cfg{{"model", "two_point"}, {"p", {1.5, 2.0}}};
  const auto a = RunManifest::make("constants", cfg, 7);
  const auto b = RunManifest::make("constants", cfg, 7);
  EXPECT_EQ(a.config_hash, b.config_hash);
  EXPECT_NE(a.config_hash, RunManifest::make("constants", json{{"model", "ising"}}, 7).config_hash);
  const auto j = to_json(a);
  for (const char* key : {"command", "config_hash", "seed", "tool_version", "timestamp", "outputs"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(a.timestamp.size(), 20u);
}

TEST(Files, ReadJson) {
  const std::string path = ::testing::TempDir() + "fineq_io_test.json";
  {
    std::ofstream out(path);
    out << "{\"model\": \"two_point\"}";
  }
  EXPECT_EQ(read_json_file(path)["model"], "two_point");
  {
    std::ofstream out(path);
    out << "{broken";
  }
  EXPECT_THROW(read_json_file(path), InvalidArgument);
  std::remove(path.c_str());
  EXPECT_THROW(read_json_file(path), InvalidArgument);
}
