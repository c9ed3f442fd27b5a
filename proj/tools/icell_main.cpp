// icell command-line tool: corpus generation, two-stage adversarial
// autoencoder training, structure integration, classification, latent
// traversal, and hold-out evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "icell/checkpoint.hpp"
#include "icell/config.hpp"
#include "icell/datagen.hpp"
#include "icell/image.hpp"
#include "icell/integrate.hpp"
#include "icell/metrics.hpp"
#include "icell/preprocess.hpp"
#include "icell/train.hpp"

namespace fs = std::filesystem;
using namespace icell;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out = "runs";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

RunConfig resolve_config(const CommonOpts& c) {
  RunConfig cfg;
  if (!c.config_path.empty()) cfg = load_run_config(c.config_path);
  if (c.seed_set) cfg.corpus.seed = c.seed;
  cfg.validate();
  return cfg;
}

fs::path run_dir(const CommonOpts& c, const RunConfig& cfg) {
  fs::path dir = fs::path(c.out) / cfg.hash();
  fs::create_directories(dir);
  return dir;
}

void add_common(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--config", c.config_path, "run configuration JSON")
      ->envname("ICELL_CONFIG");
  cmd->add_option("--out", c.out, "output root; artifacts go to <out>/<hash>")
      ->envname("ICELL_OUT");
  cmd->add_option("--seed", c.seed, "override the corpus seed")
      ->envname("ICELL_SEED")
      ->each([&c](const std::string&) { c.seed_set = true; });
}

void check_config_hash(const Checkpoint& ck, const RunConfig& cfg,
                       const std::string& path) {
  const std::string h = ck.meta.value("config_hash", std::string());
  if (!h.empty() && h != cfg.hash())
    throw value_error("config hash mismatch: checkpoint " + path +
                      " was written with config " + h +
                      ", current config is " + cfg.hash());
}

// ---------------------------------------------------------------------------

int cmd_gen(const CommonOpts& common) {
  RunConfig cfg = resolve_config(common);
  const fs::path dir = run_dir(common, cfg);
  const fs::path corpus = dir / "corpus";
  fs::create_directories(corpus);

  CorpusManifest manifest = generate_corpus(cfg.corpus, corpus.string());
  SplitOptions sopt;
  sopt.train_fraction = cfg.train_fraction;
  SplitReport rep = split(manifest, cfg.split_seed, sopt);
  manifest.save((corpus / "manifest.jsonl").string());
  save_run_config(cfg, (dir / "config.json").string());

  std::cout << "wrote " << cfg.corpus.n << " images to " << corpus << "\n";
  for (const auto& [label, n_train] : rep.train_per_label)
    std::cout << "  label " << label << ": " << n_train << " train / "
              << rep.test_per_label.at(label) << " test\n";
  for (int l : rep.warned_labels)
    std::cerr << "warning: label " << l
              << " has fewer than 2 items; all placed in train\n";
  return 0;
}

int cmd_train_ref(const CommonOpts& common, const std::string& data,
                  const std::string& resume) {
  RunConfig cfg = resolve_config(common);
  const fs::path dir = run_dir(common, cfg);
  const fs::path corpus = data.empty() ? dir / "corpus" : fs::path(data);
  CorpusManifest manifest =
      CorpusManifest::load((corpus / "manifest.jsonl").string());
  Dataset train = load_dataset(corpus.string(), manifest, "train");
  Tensor<float> ref = train.reference_only();

  std::optional<ReferenceTrainer> trainer;
  if (!resume.empty()) {
    check_config_hash(Checkpoint::load(resume), cfg, resume);
    trainer.emplace(ReferenceTrainer::load(resume));
  } else {
    trainer.emplace(cfg.arch, cfg.train);
  }
  // checkpoint after every epoch so an interrupted run can resume
  const fs::path ckpt = dir / "ref.ckpt";
  const int steps_per_epoch = train.size() / cfg.train.batch_size;
  const int done =
      static_cast<int>(trainer->steps() / std::max(1, steps_per_epoch));
  for (int e = done + 1; e <= cfg.train.epochs; ++e) {
    trainer->run(ref, e);
    trainer->save(ckpt.string(), {{"config_hash", cfg.hash()}});
    trainer->curves().save_csv((dir / "curves_ref.csv").string());
  }
  if (!fs::exists(ckpt)) {
    trainer->save(ckpt.string(), {{"config_hash", cfg.hash()}});
    trainer->curves().save_csv((dir / "curves_ref.csv").string());
  }
  save_run_config(cfg, (dir / "config.json").string());
  std::cout << "reference model: " << trainer->steps() << " steps, final L_xr "
            << trainer->curves().last("L_xr_epoch") << "\n"
            << "checkpoint: " << ckpt << "\n";
  return 0;
}

int cmd_train_cond(const CommonOpts& common, const std::string& data,
                   const std::string& ref_path, const std::string& resume) {
  RunConfig cfg = resolve_config(common);
  const fs::path dir = run_dir(common, cfg);
  const fs::path corpus = data.empty() ? dir / "corpus" : fs::path(data);
  const fs::path ref_ckpt =
      ref_path.empty() ? dir / "ref.ckpt" : fs::path(ref_path);
  if (!fs::exists(ref_ckpt))
    throw value_error(
        "train-cond requires a trained reference checkpoint (" +
        ref_ckpt.string() + " not found); run train-ref first");

  CorpusManifest manifest =
      CorpusManifest::load((corpus / "manifest.jsonl").string());
  Dataset train = load_dataset(corpus.string(), manifest, "train");

  std::optional<ConditionalTrainer> trainer;
  if (!resume.empty()) {
    check_config_hash(Checkpoint::load(resume), cfg, resume);
    trainer.emplace(ConditionalTrainer::load(resume));
  } else {
    check_config_hash(Checkpoint::load(ref_ckpt.string()), cfg,
                      ref_ckpt.string());
    ReferenceTrainer ref = ReferenceTrainer::load(ref_ckpt.string());
    trainer.emplace(cfg.arch, cfg.train, std::move(ref.enc_r()));
  }
  const fs::path ckpt = dir / "cond.ckpt";
  const int steps_per_epoch = train.size() / cfg.train.batch_size;
  const int done =
      static_cast<int>(trainer->steps() / std::max(1, steps_per_epoch));
  for (int e = done + 1; e <= cfg.train.epochs; ++e) {
    trainer->run(train, e);
    trainer->save(ckpt.string(), {{"config_hash", cfg.hash()}});
    trainer->curves().save_csv((dir / "curves_cond.csv").string());
  }
  if (!fs::exists(ckpt)) {
    trainer->save(ckpt.string(), {{"config_hash", cfg.hash()}});
    trainer->curves().save_csv((dir / "curves_cond.csv").string());
  }
  std::cout << "conditional model: " << trainer->steps()
            << " steps, final L_xrs "
            << trainer->curves().last("L_xrs_epoch") << ", final L_Y "
            << trainer->curves().last("L_Y_epoch") << "\n"
            << "checkpoint: " << ckpt << "\n";
  return 0;
}

int cmd_integrate(const std::string& ckpt_path, const std::string& image_path,
                  std::vector<int> labels, const std::string& out) {
  ConditionalTrainer model = ConditionalTrainer::load(ckpt_path);
  const ArchParams& arch = model.arch();
  if (labels.empty())
    for (int l = 1; l <= arch.n_classes; ++l) labels.push_back(l);

  MultiChannelImage img = load_icimg(image_path);
  check_value(img.n_channels() >= arch.ref_channels,
              "image has fewer channels than the model's reference set");
  Tensor<float> x({arch.ref_channels, img.height(), img.width()});
  std::copy_n(img.pixels.data(), x.numel(), x.data());

  IntegratedCellImage cell =
      integrate_structures(model.enc_r(), model.dec_rs(), arch, x, labels);

  fs::create_directories(out);
  MultiChannelImage out_img;
  out_img.pixels = cell.pixels;
  out_img.channels = cell.channels;
  out_img.meta = cell.meta;
  out_img.meta["checkpoint"] = ckpt_path;
  save_icimg(out_img, (fs::path(out) / "integrated.icimg").string());
  save_ppm_composite(out_img, (fs::path(out) / "integrated.ppm").string());
  std::cout << "integrated " << labels.size() << " structure(s) -> "
            << (fs::path(out) / "integrated.icimg") << "\n";
  return 0;
}

int cmd_classify(const std::string& ckpt_path, const std::string& data,
                 const std::string& split_name, const std::string& out) {
  ConditionalTrainer model = ConditionalTrainer::load(ckpt_path);
  CorpusManifest manifest =
      CorpusManifest::load((fs::path(data) / "manifest.jsonl").string());
  Dataset ds = load_dataset(data, manifest, split_name);
  Classification c = classify(model.enc_rs(), ds.x);

  fs::create_directories(out);
  std::ofstream os(fs::path(out) / "predictions.csv");
  os << "index,true_label,predicted_label\n";
  for (std::size_t i = 0; i < c.predicted.size(); ++i)
    os << i << "," << ds.labels[i] << "," << c.predicted[i] << "\n";

  const double acc = accuracy(ds.labels, c.predicted);
  std::cout << "classified " << ds.size() << " images (split '" << split_name
            << "'): accuracy " << acc << "\n";
  return 0;
}

int cmd_traverse(const std::string& ckpt_path, std::vector<int> dims,
                 std::vector<double> grid, const std::string& image_path,
                 int label, const std::string& out) {
  TraversalOptions opt;
  if (!dims.empty()) {
    check_value(dims.size() == 2, "--dims expects exactly two indices i,j");
    opt.dim_i = dims[0];
    opt.dim_j = dims[1];
  }
  if (!grid.empty()) opt.grid = grid;

  Checkpoint ck = Checkpoint::load(ckpt_path);
  const std::string kind = ck.meta.value("kind", std::string());
  fs::create_directories(out);

  Tensor<float> tiles;
  if (kind == "reference") {
    ReferenceTrainer model = ReferenceTrainer::load(ckpt_path);
    tiles = traverse_reference(model.dec_r(), model.arch(), opt);
  } else if (kind == "conditional") {
    check_value(!image_path.empty(),
                "z^s traversal needs --image for the z^r context");
    ConditionalTrainer model = ConditionalTrainer::load(ckpt_path);
    const ArchParams& arch = model.arch();
    MultiChannelImage img = load_icimg(image_path);
    Tensor<float> x({1, arch.ref_channels, img.height(), img.width()});
    std::copy_n(img.pixels.data(), x.numel(), x.data());
    Tensor<float> zr = model.enc_r().eval(x);
    tiles = traverse_structure(model.dec_rs(), arch, zr, label, opt);
  } else {
    throw value_error("unrecognized checkpoint kind: '" + kind + "'");
  }

  MultiChannelImage m = traversal_montage(tiles, opt);
  save_icimg(m, (fs::path(out) / "traversal.icimg").string());
  save_ppm_composite(m, (fs::path(out) / "traversal.ppm").string());
  std::cout << "traversal grid " << opt.grid.size() << "x" << opt.grid.size()
            << " over dims (" << opt.dim_i << "," << opt.dim_j << ") -> "
            << (fs::path(out) / "traversal.ppm") << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data,
             const std::string& split_name, const std::string& out) {
  ConditionalTrainer model = ConditionalTrainer::load(ckpt_path);
  CorpusManifest manifest =
      CorpusManifest::load((fs::path(data) / "manifest.jsonl").string());
  Dataset ds = load_dataset(data, manifest, split_name);

  Classification c = classify(model.enc_rs(), ds.x);
  ConfusionMatrix cm =
      confusion(ds.labels, c.predicted, model.arch().n_classes);
  Reconstruction rec = reconstruct_full(model.enc_rs(), model.dec_rs(), ds.x);
  double mean_bce = 0;
  for (double v : rec.bce) mean_bce += v;
  mean_bce /= static_cast<double>(rec.bce.size());

  fs::create_directories(out);
  std::vector<std::string> names(
      structure_names().begin(),
      structure_names().begin() + model.arch().n_classes);
  std::ofstream os(fs::path(out) / "confusion.csv");
  os << cm.to_csv(names);
  nlohmann::json metrics{{"split", split_name},
                         {"n", ds.size()},
                         {"accuracy", cm.accuracy()},
                         {"mean_reconstruction_bce", mean_bce}};
  std::ofstream ms(fs::path(out) / "metrics.json");
  ms << metrics.dump(2) << "\n";

  std::cout << "eval on split '" << split_name << "' (" << ds.size()
            << " images): accuracy " << cm.accuracy()
            << ", mean reconstruction BCE " << mean_bce << "\n"
            << cm.to_csv(names);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "icell: conditional adversarial autoencoder for integrated cell "
      "images"};
  app.require_subcommand(1);

  CommonOpts common;
  std::string data, resume, ref_path, checkpoint, image_path, split_name =
                                                                  "test";
  std::string artifact_out = "out";
  std::vector<int> labels, dims;
  std::vector<double> grid;
  int label = 1;

  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  add_common(gen, common);

  auto* tref = app.add_subcommand(
      "train-ref", "train the reference (cell/nucleus shape) model");
  add_common(tref, common);
  tref->add_option("--data", data, "corpus directory (default <run>/corpus)");
  tref->add_option("--checkpoint", resume, "resume from this checkpoint");

  auto* tcond = app.add_subcommand(
      "train-cond", "train the conditional structure model");
  add_common(tcond, common);
  tcond->add_option("--data", data, "corpus directory (default <run>/corpus)");
  tcond->add_option("--ref", ref_path,
                    "reference checkpoint (default <run>/ref.ckpt)");
  tcond->add_option("--checkpoint", resume, "resume from this checkpoint");

  auto* integ = app.add_subcommand(
      "integrate", "predict structure localization for a reference image");
  integ->add_option("--checkpoint", checkpoint, "conditional checkpoint")
      ->required();
  integ->add_option("--image", image_path, "reference .icimg")->required();
  integ->add_option("--labels", labels, "structure labels (default all)")
      ->delimiter(',');
  integ->add_option("--out", artifact_out, "output directory")
      ->envname("ICELL_OUT");

  auto* cls = app.add_subcommand("classify", "classify structure channels");
  cls->add_option("--checkpoint", checkpoint, "conditional checkpoint")
      ->required();
  cls->add_option("--data", data, "corpus directory")->required();
  cls->add_option("--split", split_name, "manifest split (default test)");
  cls->add_option("--out", artifact_out, "output directory")
      ->envname("ICELL_OUT");

  auto* trav = app.add_subcommand("traverse", "decode a latent grid");
  trav->add_option("--checkpoint", checkpoint,
                   "reference or conditional checkpoint")
      ->required();
  trav->add_option("--dims", dims, "two latent dims i,j")->delimiter(',');
  trav->add_option("--grid", grid, "grid values (default -3,-1.5,0,1.5,3)")
      ->delimiter(',');
  trav->add_option("--image", image_path,
                   "reference .icimg context (z^s traversal only)");
  trav->add_option("--label", label, "structure label for z^s traversal");
  trav->add_option("--out", artifact_out, "output directory")
      ->envname("ICELL_OUT");

  auto* ev = app.add_subcommand("eval", "hold-out evaluation");
  ev->add_option("--checkpoint", checkpoint, "conditional checkpoint")
      ->required();
  ev->add_option("--data", data, "corpus directory")->required();
  ev->add_option("--split", split_name, "manifest split (default test)");
  ev->add_option("--out", artifact_out, "output directory")
      ->envname("ICELL_OUT");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(common);
    if (tref->parsed()) return cmd_train_ref(common, data, resume);
    if (tcond->parsed())
      return cmd_train_cond(common, data, ref_path, resume);
    if (integ->parsed())
      return cmd_integrate(checkpoint, image_path, labels, artifact_out);
    if (cls->parsed())
      return cmd_classify(checkpoint, data, split_name, artifact_out);
    if (trav->parsed())
      return cmd_traverse(checkpoint, dims, grid, image_path, label,
                          artifact_out);
    if (ev->parsed())
      return cmd_eval(checkpoint, data, split_name, artifact_out);
  } catch (const io_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const value_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const shape_error& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
