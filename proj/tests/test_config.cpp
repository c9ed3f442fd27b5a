#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "icell/config.hpp"

using namespace icell;
namespace fs = std::filesystem;

TEST(RunConfigTest, JsonRoundTripIsExact) {
  RunConfig c;
  c.arch.side = 32;
  c.arch.base_width = 8;
  c.arch.latent_dim = 8;
  c.arch.n_classes = 4;
  c.corpus.side = 32;
  c.corpus.n_classes = 4;
  c.corpus.n = 100;
  c.train.epochs = 7;
  c.train_fraction = 0.9;
  c.split_seed = 99;

  RunConfig d = RunConfig::from_json(c.to_json());
  EXPECT_EQ(c.to_json(), d.to_json());
  EXPECT_EQ(c.hash(), d.hash());
}

TEST(RunConfigTest, HashStableUnderKeyReordering) {
  RunConfig c;
  c.arch.side = c.corpus.side = 32;
  c.arch.n_classes = c.corpus.n_classes = 4;
  const std::string h = c.hash();

  // rebuild the same content from a JSON text with keys in another order
  nlohmann::json j = nlohmann::json::parse(
      R"({"split_seed": 5, "train_fraction": 0.95,
          "corpus": )" + c.corpus.to_json().dump() + R"(,
          "train": )" + c.train.to_json().dump() + R"(,
          "arch": )" + c.arch.to_json().dump() + "}");
  EXPECT_EQ(RunConfig::from_json(j).hash(), h);
  EXPECT_EQ(h.size(), 16u);
}

TEST(RunConfigTest, HashChangesWithContent) {
  RunConfig a, b;
  a.arch.side = a.corpus.side = b.arch.side = b.corpus.side = 32;
  b.train.epochs = a.train.epochs + 1;
  EXPECT_NE(a.hash(), b.hash());
}

TEST(RunConfigTest, ValidateRejectsInconsistentShapes) {
  RunConfig c;
  c.arch.side = 64;
  c.corpus.side = 32;
  EXPECT_THROW(c.validate(), value_error);

  RunConfig d;
  d.arch.side = d.corpus.side = 32;
  d.arch.n_classes = 4;
  d.corpus.n_classes = 3;
  EXPECT_THROW(d.validate(), value_error);

  RunConfig e;
  e.arch.side = e.corpus.side = 32;
  e.arch.n_classes = e.corpus.n_classes = 4;
  e.train_fraction = 0.0;
  EXPECT_THROW(e.validate(), value_error);
}

TEST(RunConfigTest, FileRoundTripAndBadFile) {
  RunConfig c;
  c.arch.side = c.corpus.side = 32;
  c.arch.n_classes = c.corpus.n_classes = 4;
  const fs::path p = fs::temp_directory_path() / "icell_cfg_test.json";
  save_run_config(c, p.string());
  RunConfig d = load_run_config(p.string());
  EXPECT_EQ(c.hash(), d.hash());
  fs::remove(p);

  EXPECT_THROW(load_run_config("/nonexistent/cfg.json"), io_error);
  const fs::path bad = fs::temp_directory_path() / "icell_cfg_bad.json";
  std::ofstream(bad) << "{not json";
  EXPECT_THROW(load_run_config(bad.string()), io_error);
  fs::remove(bad);
}

TEST(Fnv1a, KnownValues) {
  // standard FNV-1a 64-bit test vectors
  EXPECT_EQ(fnv1a64(""), 14695981039346656037ull);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
}
