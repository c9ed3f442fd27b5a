// End-to-end checks of the icell command-line tool: full pipeline on a tiny
// corpus, resume semantics, and the documented error paths.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "icell/config.hpp"
#include "icell/datagen.hpp"
#include "icell/image.hpp"

#ifndef ICELL_CLI_PATH
#error "ICELL_CLI_PATH must point at the built icell binary"
#endif

using namespace icell;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(ICELL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(fs::temp_directory_path() / "icell_cli_test");
    fs::remove_all(*root_);
    fs::create_directories(*root_);

    RunConfig cfg;
    cfg.arch.side = 32;
    cfg.arch.base_width = 8;
    cfg.arch.latent_dim = 8;
    cfg.arch.n_classes = 4;
    cfg.corpus.side = 32;
    cfg.corpus.n_classes = 4;
    cfg.corpus.n = 48;
    cfg.train.batch_size = 16;
    cfg.train.epochs = 2;
    cfg.train_fraction = 0.9;
    save_run_config(cfg, (*root_ / "cfg.json").string());
    hash_ = cfg.hash();
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete root_;
    root_ = nullptr;
  }

  static std::string cfg() { return (*root_ / "cfg.json").string(); }
  static std::string out() { return (*root_ / "runs").string(); }
  static fs::path run() { return *root_ / "runs" / hash_; }

  static fs::path* root_;
  static std::string hash_;
};

fs::path* CliPipeline::root_ = nullptr;
std::string CliPipeline::hash_;

}  // namespace

TEST_F(CliPipeline, Step01_TrainCondBeforeRefIsHardError) {
  ASSERT_EQ(run_cli("gen --config " + cfg() + " --out " + out()), 0);
  ASSERT_TRUE(fs::exists(run() / "corpus" / "manifest.jsonl"));
  EXPECT_NE(run_cli("train-cond --config " + cfg() + " --out " + out()), 0);
  EXPECT_FALSE(fs::exists(run() / "cond.ckpt"));
}

TEST_F(CliPipeline, Step02_TrainRefWritesCheckpointAndCurves) {
  ASSERT_EQ(run_cli("train-ref --config " + cfg() + " --out " + out()), 0);
  EXPECT_TRUE(fs::exists(run() / "ref.ckpt"));
  ASSERT_TRUE(fs::exists(run() / "curves_ref.csv"));
  std::ifstream is(run() / "curves_ref.csv");
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "step,loss_name,value");
}

TEST_F(CliPipeline, Step03_ResumeOfFinishedRunIsStable) {
  auto mtime = fs::last_write_time(run() / "ref.ckpt");
  ASSERT_EQ(run_cli("train-ref --config " + cfg() + " --out " + out() +
                    " --checkpoint " + (run() / "ref.ckpt").string()),
            0);
  // run already at the configured epoch target: nothing retrained
  EXPECT_EQ(fs::last_write_time(run() / "ref.ckpt"), mtime);
}

TEST_F(CliPipeline, Step04_ConfigHashMismatchOnResumeIsError) {
  RunConfig other = load_run_config(cfg());
  other.train.epochs = 5;
  const fs::path p = *root_ / "cfg_other.json";
  save_run_config(other, p.string());
  EXPECT_NE(run_cli("train-ref --config " + p.string() + " --out " + out() +
                    " --data " + (run() / "corpus").string() +
                    " --checkpoint " + (run() / "ref.ckpt").string()),
            0);
}

TEST_F(CliPipeline, Step05_TrainCondThenEvalAndClassify) {
  ASSERT_EQ(run_cli("train-cond --config " + cfg() + " --out " + out()), 0);
  ASSERT_TRUE(fs::exists(run() / "cond.ckpt"));
  EXPECT_TRUE(fs::exists(run() / "curves_cond.csv"));

  const std::string ck = (run() / "cond.ckpt").string();
  const std::string data = (run() / "corpus").string();
  ASSERT_EQ(run_cli("eval --checkpoint " + ck + " --data " + data +
                    " --split test --out " + (*root_ / "ev").string()),
            0);
  EXPECT_TRUE(fs::exists(*root_ / "ev" / "confusion.csv"));
  ASSERT_TRUE(fs::exists(*root_ / "ev" / "metrics.json"));
  std::ifstream ms(*root_ / "ev" / "metrics.json");
  nlohmann::json metrics;
  ms >> metrics;
  EXPECT_TRUE(metrics.contains("accuracy"));
  EXPECT_GE(metrics["accuracy"].get<double>(), 0.0);

  ASSERT_EQ(run_cli("classify --checkpoint " + ck + " --data " + data +
                    " --split test --out " + (*root_ / "cl").string()),
            0);
  EXPECT_TRUE(fs::exists(*root_ / "cl" / "predictions.csv"));
}

TEST_F(CliPipeline, Step06_IntegrateAndTraverse) {
  const std::string ck = (run() / "cond.ckpt").string();
  const std::string img = (run() / "corpus" / "img_00000.icimg").string();
  ASSERT_EQ(run_cli("integrate --checkpoint " + ck + " --image " + img +
                    " --labels 1,2 --out " + (*root_ / "in").string()),
            0);
  auto integrated = load_icimg((*root_ / "in" / "integrated.icimg").string());
  EXPECT_EQ(integrated.n_channels(), 2 + 2);
  EXPECT_TRUE(fs::exists(*root_ / "in" / "integrated.ppm"));

  ASSERT_EQ(run_cli("traverse --checkpoint " +
                    (run() / "ref.ckpt").string() +
                    " --dims 0,1 --out " + (*root_ / "tr").string()),
            0);
  auto grid = load_icimg((*root_ / "tr" / "traversal.icimg").string());
  EXPECT_EQ(grid.height(), 5 * 32);
  EXPECT_EQ(grid.width(), 5 * 32);

  ASSERT_EQ(run_cli("traverse --checkpoint " + ck + " --image " + img +
                    " --label 2 --grid=-1,0,1 --out " +
                    (*root_ / "trs").string()),
            0);
  auto sgrid = load_icimg((*root_ / "trs" / "traversal.icimg").string());
  EXPECT_EQ(sgrid.height(), 3 * 32);
  EXPECT_EQ(sgrid.n_channels(), 3);
}

TEST_F(CliPipeline, Step07_BadInvocations) {
  EXPECT_NE(run_cli(""), 0);                          // no subcommand
  EXPECT_NE(run_cli("classify"), 0);                  // missing required opts
  EXPECT_NE(run_cli("eval --checkpoint /nonexistent.ckpt --data " +
                    (run() / "corpus").string()),
            0);
  EXPECT_NE(run_cli("traverse --checkpoint " + (run() / "cond.ckpt").string() +
                    " --out " + (*root_ / "trx").string()),
            0);  // z^s traversal without --image
}
