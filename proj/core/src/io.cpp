#include "planesplat/io.hpp"

#include <png.h>

#include <array>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "json.hpp"

namespace planesplat::io {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "PFM writer assumes a little-endian host");

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// PFM

namespace {

struct PfmData {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> values;  // top-to-bottom rows, interleaved channels
};

PfmData read_pfm(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::istringstream header(bytes);
  std::string magic;
  PfmData out;
  double scale = 0.0;
  header >> magic >> out.width >> out.height >> scale;
  if (magic == "Pf") {
    out.channels = 1;
  } else if (magic == "PF") {
    out.channels = 3;
  } else {
    throw IoError("not a PFM file: " + path.string());
  }
  if (!header || out.width <= 0 || out.height <= 0) throw IoError("bad PFM header: " + path.string());
  if (scale > 0.0) throw IoError("big-endian PFM is not supported: " + path.string());
  const auto offset = static_cast<std::size_t>(header.tellg()) + 1;  // single whitespace after scale
  const std::size_t count = static_cast<std::size_t>(out.width) * out.height * out.channels;
  if (bytes.size() < offset + count * sizeof(float)) throw IoError("truncated PFM: " + path.string());
  out.values.resize(count);
  const std::size_t row = static_cast<std::size_t>(out.width) * out.channels;
  for (int v = 0; v < out.height; ++v) {
    // file rows run bottom to top
    const std::size_t src = offset + static_cast<std::size_t>(out.height - 1 - v) * row * sizeof(float);
    std::memcpy(out.values.data() + static_cast<std::size_t>(v) * row, bytes.data() + src, row * sizeof(float));
  }
  return out;
}

void write_pfm_raw(const fs::path& path, int width, int height, int channels, const std::vector<float>& values) {
  std::string bytes = (channels == 3 ? "PF\n" : "Pf\n") + std::to_string(width) + " " + std::to_string(height) +
                      "\n-1.0\n";
  const std::size_t row = static_cast<std::size_t>(width) * channels;
  const std::size_t header = bytes.size();
  bytes.resize(header + row * height * sizeof(float));
  for (int v = 0; v < height; ++v) {
    const std::size_t dst = header + static_cast<std::size_t>(height - 1 - v) * row * sizeof(float);
    std::memcpy(bytes.data() + dst, values.data() + static_cast<std::size_t>(v) * row, row * sizeof(float));
  }
  write_file_atomic(path, bytes);
}

}  // namespace

ScalarMap read_pfm_scalar(const fs::path& path) {
  const PfmData data = read_pfm(path);
  if (data.channels != 1) throw IoError("expected a single-channel PFM: " + path.string());
  ScalarMap out(data.width, data.height);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = data.values[i];
  return out;
}

VectorMap read_pfm_vector(const fs::path& path) {
  const PfmData data = read_pfm(path);
  if (data.channels != 3) throw IoError("expected a 3-channel PFM: " + path.string());
  VectorMap out(data.width, data.height);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = Eigen::Vector3d(data.values[3 * i], data.values[3 * i + 1], data.values[3 * i + 2]);
  }
  return out;
}

void write_pfm(const fs::path& path, const ScalarMap& map) {
  std::vector<float> values(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) values[i] = static_cast<float>(map[i]);
  write_pfm_raw(path, map.width(), map.height(), 1, values);
}

void write_pfm(const fs::path& path, const VectorMap& map) {
  std::vector<float> values(map.size() * 3);
  for (std::size_t i = 0; i < map.size(); ++i) {
    for (int c = 0; c < 3; ++c) values[3 * i + c] = static_cast<float>(map[i][c]);
  }
  write_pfm_raw(path, map.width(), map.height(), 3, values);
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;  // row-major, interleaved
};

// libpng reports through these instead of printing to stderr; the message
// ends up in the IoError.
void png_error_to_string(png_structp png, png_const_charp msg) {
  *static_cast<std::string*>(png_get_error_ptr(png)) = msg ? msg : "";
  png_longjmp(png, 1);
}
void png_warning_ignored(png_structp, png_const_charp) {}

PngImage read_png(const fs::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());
  std::array<png_byte, 8> sig{};
  if (std::fread(sig.data(), 1, sig.size(), file.get()) != sig.size() || png_sig_cmp(sig.data(), 0, sig.size())) {
    throw IoError("not a PNG file: " + path.string());
  }
  std::string png_message;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &png_message, png_error_to_string, png_warning_ignored);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  PngImage out;
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG: " + path.string() + (png_message.empty() ? "" : " (" + png_message + ")"));
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, static_cast<int>(sig.size()));
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * out.height);
  rows.resize(out.height);
  for (int v = 0; v < out.height; ++v) rows[v] = buffer.data() + rowbytes * v;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (out.channels != 1 && out.channels != 3) throw IoError("unsupported PNG channel layout: " + path.string());
  const std::size_t count = static_cast<std::size_t>(out.width) * out.height * out.channels;
  out.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (out.bit_depth == 16) {
      std::uint16_t s = 0;
      std::memcpy(&s, buffer.data() + 2 * i, 2);
      out.samples[i] = s;
    } else {
      out.samples[i] = buffer[i];
    }
  }
  return out;
}

void write_png(const fs::path& path, const PngImage& image) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    FilePtr file(std::fopen(tmp.c_str(), "wb"));
    if (!file) throw IoError("cannot write " + tmp.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
      png_destroy_write_struct(&png, &info);
      throw IoError("libpng initialisation failed");
    }
    const int bytes_per_sample = image.bit_depth == 16 ? 2 : 1;
    const std::size_t rowbytes = static_cast<std::size_t>(image.width) * image.channels * bytes_per_sample;
    std::vector<png_byte> buffer(rowbytes * image.height);
    for (std::size_t i = 0; i < image.samples.size(); ++i) {
      if (bytes_per_sample == 2) {
        std::memcpy(buffer.data() + 2 * i, &image.samples[i], 2);
      } else {
        buffer[i] = static_cast<png_byte>(image.samples[i]);
      }
    }
    std::vector<png_bytep> rows(image.height);
    for (int v = 0; v < image.height; ++v) rows[v] = buffer.data() + rowbytes * v;
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw IoError("PNG encoding failed: " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, image.width, image.height, image.bit_depth,
                 image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (image.bit_depth == 16) png_set_swap(png);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  fs::rename(tmp, path);
}

}  // namespace

MaskMap read_mask_png(const fs::path& path) {
  const PngImage img = read_png(path);
  if (img.channels != 1) throw IoError("mask PNG must be single channel: " + path.string());
  MaskMap out(img.width, img.height, 0);
  const std::uint16_t half = img.bit_depth == 16 ? 32768 : 128;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.samples[i] >= half ? 1 : 0;
  return out;
}

void write_mask_png(const fs::path& path, const MaskMap& mask) {
  PngImage img{mask.width(), mask.height(), 1, 8, {}};
  img.samples.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) img.samples[i] = mask[i] ? 255 : 0;
  write_png(path, img);
}

Raster<std::uint8_t> read_gray8_png(const fs::path& path) {
  const PngImage img = read_png(path);
  if (img.channels != 1 || img.bit_depth != 8) throw IoError("expected an 8-bit gray PNG: " + path.string());
  Raster<std::uint8_t> out(img.width, img.height);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::uint8_t>(img.samples[i]);
  return out;
}

void write_gray8_png(const fs::path& path, const Raster<std::uint8_t>& image) {
  PngImage img{image.width(), image.height(), 1, 8, {}};
  img.samples.assign(image.values().begin(), image.values().end());
  write_png(path, img);
}

LabelRaster read_label_png(const fs::path& path) {
  const PngImage img = read_png(path);
  if (img.channels != 1) throw IoError("label PNG must be single channel: " + path.string());
  LabelRaster out(img.width, img.height, 0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.samples[i];
  return out;
}

void write_label_png(const fs::path& path, const LabelRaster& labels) {
  PngImage img{labels.width(), labels.height(), 1, 16, {}};
  img.samples.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 65535) throw IoError("label id does not fit 16 bits");
    img.samples[i] = static_cast<std::uint16_t>(labels[i]);
  }
  write_png(path, img);
}

VectorMap read_rgb_png(const fs::path& path) {
  const PngImage img = read_png(path);
  const double scale = img.bit_depth == 16 ? 65535.0 : 255.0;
  VectorMap out(img.width, img.height);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (img.channels == 3) {
      out[i] = Eigen::Vector3d(img.samples[3 * i], img.samples[3 * i + 1], img.samples[3 * i + 2]) / scale;
    } else {
      out[i] = Eigen::Vector3d::Constant(img.samples[i] / scale);
    }
  }
  return out;
}

void write_rgb_png(const fs::path& path, const VectorMap& rgb) {
  PngImage img{rgb.width(), rgb.height(), 3, 8, {}};
  img.samples.resize(rgb.size() * 3);
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const double x = is_valid(rgb[i][c]) ? std::clamp(rgb[i][c], 0.0, 1.0) : 0.0;
      img.samples[3 * i + c] = static_cast<std::uint16_t>(std::lround(x * 255.0));
    }
  }
  write_png(path, img);
}

// ---------------------------------------------------------------------------
// Cameras

std::vector<CameraView> read_cameras_json(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IoError("invalid camera JSON " + path.string() + ": " + e.what());
  }
  std::vector<CameraView> cameras;
  try {
    for (const auto& view : doc.at("views")) {
      const auto k = view.at("K").get<std::vector<double>>();
      const auto r = view.at("R").get<std::vector<double>>();
      const auto t = view.at("t").get<std::vector<double>>();
      if (k.size() != 9 || r.size() != 9 || t.size() != 3) throw IoError("camera arrays have wrong length");
      Eigen::Matrix3d K;
      Eigen::Matrix3d R;
      for (int i = 0; i < 9; ++i) {
        K(i / 3, i % 3) = k[i];
        R(i / 3, i % 3) = r[i];
      }
      cameras.emplace_back(view.at("id").get<int>(), view.at("width").get<int>(), view.at("height").get<int>(), K,
                           R, Eigen::Vector3d(t[0], t[1], t[2]));
    }
  } catch (const json::exception& e) {
    throw IoError("malformed camera JSON " + path.string() + ": " + e.what());
  }
  return cameras;
}

void write_cameras_json(const fs::path& path, const std::vector<CameraView>& cameras) {
  json views = json::array();
  for (const auto& cam : cameras) {
    std::vector<double> k(9);
    std::vector<double> r(9);
    for (int i = 0; i < 9; ++i) {
      k[i] = cam.K()(i / 3, i % 3);
      r[i] = cam.R()(i / 3, i % 3);
    }
    views.push_back({{"id", cam.id()},
                     {"width", cam.width()},
                     {"height", cam.height()},
                     {"K", k},
                     {"R", r},
                     {"t", {cam.t().x(), cam.t().y(), cam.t().z()}}});
  }
  write_file_atomic(path, json{{"views", views}}.dump(2));
}

}  // namespace planesplat::io
