#include "flint/artifacts.hpp"

#include "flint/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace flint {
namespace {

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

}  // namespace

std::string ArtifactMeta::comment_line() const {
  return "# config_digest=" + config_digest + " seed=" + std::to_string(seed) +
         " format_version=" + std::to_string(format_version);
}

void write_png(const std::filesystem::path& path, const Eigen::MatrixXf& pixels) {
  if (pixels.rows() < 1 || pixels.cols() < 1) throw ShapeError("cannot write an empty image");
  ensure_parent(path);
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!file) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng initialization failed");
  }
  const auto h = static_cast<png_uint_32>(pixels.rows()), w = static_cast<png_uint_32>(pixels.cols());
  std::vector<png_byte> rows(static_cast<std::size_t>(h) * w);
  for (png_uint_32 i = 0; i < h; ++i)
    for (png_uint_32 j = 0; j < w; ++j) {
      const float v = std::clamp(pixels(i, j), 0.0f, 1.0f);
      rows[static_cast<std::size_t>(i) * w + j] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
  std::vector<png_bytep> ptrs(h);
  for (png_uint_32 i = 0; i < h; ++i) ptrs[i] = rows.data() + static_cast<std::size_t>(i) * w;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

JsonlWriter::JsonlWriter(const std::filesystem::path& path, ArtifactMeta meta) : meta_(std::move(meta)), path_(path) {
  ensure_parent(path);
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw DataError("cannot write " + path.string());
}

void JsonlWriter::write(nlohmann::ordered_json j) {
  j["config_digest"] = meta_.config_digest;
  j["seed"] = meta_.seed;
  j["format_version"] = meta_.format_version;
  out_ << j.dump() << '\n';
  out_.flush();
  if (!out_) throw DataError("failed writing " + path_.string());
}

void write_csv(const std::filesystem::path& path, const ArtifactMeta& meta, const std::string& body) {
  write_text(path, meta.comment_line() + "\n" + body);
}

}  // namespace flint
