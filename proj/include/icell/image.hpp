#pragma once

// Multi-channel float images with named channels, a small lossless on-disk
// format (.icimg: magic + JSON header + raw float32), and 8-bit PGM/PPM
// export for quick visual inspection and montages.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "icell/common.hpp"
#include "icell/tensor.hpp"

namespace icell {

struct MultiChannelImage {
  Tensor<float> pixels;  // (C, H, W)
  std::vector<std::string> channels;
  nlohmann::json meta;  // free-form provenance (geometry, checkpoint id, ...)

  int n_channels() const { return pixels.empty() ? 0 : pixels.dim(0); }
  int height() const { return pixels.dim(1); }
  int width() const { return pixels.dim(2); }

  float& at(int c, int h, int w) {
    return pixels[(static_cast<std::size_t>(c) * height() + h) * width() + w];
  }
  float at(int c, int h, int w) const {
    return pixels[(static_cast<std::size_t>(c) * height() + h) * width() + w];
  }

  void validate() const {
    check_shape(pixels.rank() == 3, "MultiChannelImage: pixels must be (C,H,W)");
    check_shape(channels.empty() ||
                    channels.size() == static_cast<std::size_t>(pixels.dim(0)),
                "MultiChannelImage: channel-name count mismatch");
    check_value(pixels.all_finite(), "MultiChannelImage: non-finite pixels");
  }
};

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw io_error("unexpected end of stream");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline constexpr char kIcimgMagic[] = "ICIMG1\n";

inline void save_icimg(const MultiChannelImage& img, const std::string& path) {
  img.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open for writing: " + path);
  nlohmann::json header;
  header["shape"] = img.pixels.shape();
  header["channels"] = img.channels;
  header["dtype"] = "f32";
  if (!img.meta.is_null()) header["meta"] = img.meta;
  const std::string h = header.dump();
  os.write(kIcimgMagic, sizeof(kIcimgMagic) - 1);
  detail::write_u64(os, h.size());
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.numel() * sizeof(float)));
  if (!os) throw io_error("write failed: " + path);
}

inline MultiChannelImage load_icimg(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open: " + path);
  char magic[sizeof(kIcimgMagic) - 1];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kIcimgMagic, sizeof(magic)) != 0)
    throw io_error("not an icimg file: " + path);
  const std::uint64_t hlen = detail::read_u64(is);
  std::string h(hlen, '\0');
  is.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw io_error("truncated header: " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(h);
  } catch (const nlohmann::json::exception& e) {
    throw io_error("corrupt icimg header in " + path + ": " + e.what());
  }
  if (header.value("dtype", std::string()) != "f32")
    throw io_error("unsupported icimg dtype in " + path);
  MultiChannelImage img;
  std::vector<int> shape = header.at("shape").get<std::vector<int>>();
  if (shape.size() != 3) throw io_error("icimg shape must be (C,H,W): " + path);
  img.pixels = Tensor<float>(shape);
  img.channels = header.value("channels", std::vector<std::string>{});
  if (header.contains("meta")) img.meta = header["meta"];
  is.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.numel() * sizeof(float)));
  if (!is) throw io_error("truncated pixel data: " + path);
  return img;
}

// ---------------------------------------------------------------------------
// 8-bit export. Channels are composited additively with the conventional
// fluorescence palette: membrane magenta, nucleus cyan, structure yellow.

inline unsigned char to_u8(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<unsigned char>(c * 255.0f + 0.5f);
}

inline void save_pgm(const Tensor<float>& plane, const std::string& path) {
  check_shape(plane.rank() == 2, "save_pgm: expected (H,W)");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open for writing: " + path);
  os << "P5\n" << plane.dim(1) << " " << plane.dim(0) << "\n255\n";
  for (std::size_t i = 0; i < plane.numel(); ++i) {
    const unsigned char b = to_u8(plane[i]);
    os.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!os) throw io_error("write failed: " + path);
}

// RGB weights per channel index: 0 -> magenta, 1 -> cyan, 2.. -> yellow.
inline void channel_color(int c, float rgb[3]) {
  switch (c) {
    case 0: rgb[0] = 1; rgb[1] = 0; rgb[2] = 1; break;
    case 1: rgb[0] = 0; rgb[1] = 1; rgb[2] = 1; break;
    default: rgb[0] = 1; rgb[1] = 1; rgb[2] = 0; break;
  }
}

inline void save_ppm_composite(const MultiChannelImage& img,
                               const std::string& path) {
  img.validate();
  const int H = img.height(), W = img.width(), C = img.n_channels();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open for writing: " + path);
  os << "P6\n" << W << " " << H << "\n255\n";
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      float acc[3] = {0, 0, 0};
      for (int c = 0; c < C; ++c) {
        float rgb[3];
        channel_color(c, rgb);
        const float v = img.at(c, h, w);
        for (int k = 0; k < 3; ++k) acc[k] += rgb[k] * v;
      }
      for (int k = 0; k < 3; ++k) {
        const unsigned char b = to_u8(acc[k]);
        os.write(reinterpret_cast<const char*>(&b), 1);
      }
    }
  if (!os) throw io_error("write failed: " + path);
}

// Row-major tiling of equally sized images into one canvas, `cols` per row.
inline MultiChannelImage montage(const std::vector<MultiChannelImage>& tiles,
                                 int cols) {
  check_value(!tiles.empty(), "montage: no tiles");
  check_value(cols > 0, "montage: cols must be positive");
  const int C = tiles[0].n_channels(), H = tiles[0].height(),
            W = tiles[0].width();
  for (const auto& t : tiles)
    check_shape(t.pixels.shape() == tiles[0].pixels.shape(),
                "montage: tiles must share one shape");
  const int rows = (static_cast<int>(tiles.size()) + cols - 1) / cols;
  MultiChannelImage out;
  out.pixels = Tensor<float>({C, rows * H, cols * W});
  out.channels = tiles[0].channels;
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    const int r0 = static_cast<int>(t) / cols * H;
    const int c0 = static_cast<int>(t) % cols * W;
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          out.at(c, r0 + h, c0 + w) = tiles[t].at(c, h, w);
  }
  return out;
}

}  // namespace icell
