#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "icell/datagen.hpp"
#include "icell/preprocess.hpp"

using namespace icell;
namespace fs = std::filesystem;

namespace {

SyntheticCellSpec desk_spec(int n = 8, int k = 4) {
  SyntheticCellSpec s;
  s.n = n;
  s.side = 32;
  s.n_classes = k;
  s.seed = 7;
  return s;
}

std::vector<char> file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Datagen, DeterministicPerImage) {
  const auto spec = desk_spec();
  auto a = generate_image(spec, 3);
  auto b = generate_image(spec, 3);
  EXPECT_EQ(a.pixels.vec(), b.pixels.vec());
  EXPECT_EQ(a.meta, b.meta);

  auto c = generate_image(spec, 4);
  EXPECT_NE(a.pixels.vec(), c.pixels.vec());
}

TEST(Datagen, PixelRangeAndCanonicalForm) {
  const auto spec = desk_spec(10, 4);
  for (int i = 0; i < spec.n; ++i) {
    auto img = generate_image(spec, i);
    EXPECT_GE(img.pixels.min(), 0.0f);
    EXPECT_LE(img.pixels.max(), 1.0f);
    // every channel has background exactly 0 and peak exactly 1
    const int S = spec.side;
    for (int c = 0; c < 3; ++c) {
      float mx = 0;
      for (int p = 0; p < S * S; ++p)
        mx = std::max(mx, img.pixels[static_cast<std::size_t>(c) * S * S + p]);
      EXPECT_EQ(mx, 1.0f) << "image " << i << " channel " << c;
    }
    EXPECT_EQ(img.at(0, 0, 0), 0.0f);  // corners are background
  }
}

TEST(Datagen, LabelsCycleThroughClasses) {
  const auto spec = desk_spec(9, 4);
  auto d = generate_dataset(spec);
  ASSERT_EQ(d.size(), 9);
  for (int i = 0; i < 9; ++i) EXPECT_EQ(d.labels[i], 1 + i % 4);
  EXPECT_EQ(d.x.shape(), (std::vector<int>{9, 3, 32, 32}));
  EXPECT_EQ(d.reference_only().shape(), (std::vector<int>{9, 2, 32, 32}));
}

TEST(Datagen, InsideNucleusArchetypeStaysInsideNucleus) {
  const auto spec = desk_spec(32, 4);
  int checked = 0;
  for (int i = 0; i < spec.n; ++i) {
    auto img = generate_image(spec, i);
    if (img.meta.at("label").get<int>() != 1) continue;  // fibrillarin-like
    ++checked;
    const int S = spec.side;
    for (int h = 0; h < S; ++h)
      for (int w = 0; w < S; ++w)
        if (img.at(2, h, w) > 0)
          EXPECT_GT(img.at(1, h, w), 0.0f)
              << "structure pixel outside nucleus at " << h << "," << w;
  }
  EXPECT_GE(checked, 4);
}

TEST(Datagen, NuclearEnvelopeArchetypeHugsTheNucleusBoundary) {
  const auto spec = desk_spec(32, 4);
  for (int i = 0; i < spec.n; ++i) {
    auto img = generate_image(spec, i);
    if (img.meta.at("label").get<int>() != 2) continue;  // lamin B1-like
    const auto jg = img.meta.at("geometry");
    CellGeometry g;
    g.cx = jg.at("cx");
    g.cy = jg.at("cy");
    g.a = jg.at("a");
    g.b = jg.at("b");
    g.phi = jg.at("phi");
    g.nr = jg.at("nr");
    g.nox = jg.at("nox");
    g.noy = jg.at("noy");
    const int S = spec.side;
    for (int h = 0; h < S; ++h)
      for (int w = 0; w < S; ++w)
        if (img.at(2, h, w) > 0) {
          const double rho = nucleus_rho(g, w, h);
          EXPECT_GE(rho, 0.7);
          EXPECT_LE(rho, 1.1);
        }
  }
}

TEST(Datagen, AllTenArchetypesRenderWithPaperNames) {
  auto spec = desk_spec(10, 10);
  ASSERT_EQ(structure_names().size(), 10u);
  for (int i = 0; i < 10; ++i) {
    auto img = generate_image(spec, i);
    EXPECT_EQ(img.channels[2], structure_names()[static_cast<std::size_t>(i)]);
    EXPECT_GT(img.pixels.sum(), 0.0);
    EXPECT_TRUE(img.pixels.all_finite());
  }
}

TEST(Datagen, RejectsBadSpecs) {
  auto s = desk_spec();
  s.side = 48;
  EXPECT_THROW(s.validate(), value_error);
  s = desk_spec();
  s.n_classes = 11;
  EXPECT_THROW(s.validate(), value_error);
  EXPECT_THROW(generate_image(desk_spec(4), 4), value_error);
}

TEST(Datagen, CorpusOnDiskIsByteStable) {
  const auto spec = desk_spec(6, 3);
  const fs::path dir1 = fs::temp_directory_path() / "icell_corpus_a";
  const fs::path dir2 = fs::temp_directory_path() / "icell_corpus_b";
  fs::create_directories(dir1);
  fs::create_directories(dir2);
  auto m1 = generate_corpus(spec, dir1.string());
  auto m2 = generate_corpus(spec, dir2.string());
  ASSERT_EQ(m1.records.size(), 6u);
  for (const auto& r : m1.records)
    EXPECT_EQ(file_bytes((dir1 / r.path).string()),
              file_bytes((dir2 / r.path).string()));
  EXPECT_EQ(file_bytes((dir1 / "manifest.jsonl").string()),
            file_bytes((dir2 / "manifest.jsonl").string()));

  // manifest round trip and dataset loading
  auto loaded = CorpusManifest::load((dir1 / "manifest.jsonl").string());
  ASSERT_EQ(loaded.records.size(), 6u);
  EXPECT_EQ(loaded.records[2].label, m1.records[2].label);
  auto d = load_dataset(dir1.string(), loaded);
  EXPECT_EQ(d.size(), 6);
  auto mem = generate_dataset(spec);
  EXPECT_EQ(d.x.vec(), mem.x.vec());
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST(Image, IcimgRoundTripIsLossless) {
  const auto spec = desk_spec();
  auto img = generate_image(spec, 0);
  const fs::path p = fs::temp_directory_path() / "icell_roundtrip.icimg";
  save_icimg(img, p.string());
  auto back = load_icimg(p.string());
  EXPECT_EQ(back.pixels.vec(), img.pixels.vec());
  EXPECT_EQ(back.channels, img.channels);
  EXPECT_EQ(back.meta, img.meta);
  fs::remove(p);

  EXPECT_THROW(load_icimg("/nonexistent/file.icimg"), io_error);
}

TEST(Image, CorruptFileIsRejected) {
  const fs::path p = fs::temp_directory_path() / "icell_corrupt.icimg";
  std::ofstream(p) << "not an image";
  EXPECT_THROW(load_icimg(p.string()), io_error);
  fs::remove(p);
}

TEST(Image, MontageTilesRowMajor) {
  MultiChannelImage a, b, c;
  for (auto* t : {&a, &b, &c}) t->pixels = Tensor<float>({1, 2, 2});
  a.pixels.fill(0.1f);
  b.pixels.fill(0.5f);
  c.pixels.fill(0.9f);
  auto m = montage({a, b, c}, 2);
  EXPECT_EQ(m.pixels.shape(), (std::vector<int>{1, 4, 4}));
  EXPECT_FLOAT_EQ(m.at(0, 0, 0), 0.1f);  // tile 0 top-left
  EXPECT_FLOAT_EQ(m.at(0, 0, 2), 0.5f);  // tile 1 to its right
  EXPECT_FLOAT_EQ(m.at(0, 2, 0), 0.9f);  // tile 2 starts the second row
  EXPECT_FLOAT_EQ(m.at(0, 2, 2), 0.0f);  // empty slot
}

TEST(Image, ExportsEightBitRasters) {
  const auto spec = desk_spec();
  auto img = generate_image(spec, 1);
  const fs::path ppm = fs::temp_directory_path() / "icell_test.ppm";
  const fs::path pgm = fs::temp_directory_path() / "icell_test.pgm";
  save_ppm_composite(img, ppm.string());
  save_pgm(detail::channel_plane(img, 0), pgm.string());
  auto ppm_bytes = file_bytes(ppm.string());
  ASSERT_GT(ppm_bytes.size(), 16u);
  EXPECT_EQ(std::string(ppm_bytes.data(), 2), "P6");
  auto pgm_bytes = file_bytes(pgm.string());
  EXPECT_EQ(std::string(pgm_bytes.data(), 2), "P5");
  fs::remove(ppm);
  fs::remove(pgm);
}
