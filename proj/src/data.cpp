#include "flint/data.hpp"

#include "flint/errors.hpp"
#include "flint/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <regex>
#include <sstream>

namespace flint {
namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t at, const std::filesystem::path& path) {
  if (at + 4 > bytes.size()) throw DataError("truncated IDX header in '" + path.string() + "'");
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

struct RawImages {
  std::size_t count = 0;
  int height = 0, width = 0;
  std::vector<unsigned char> pixels;
};

RawImages read_idx_images(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::uint32_t magic = read_be32(bytes, 0, path);
  if (magic != kImageMagic) {
    std::ostringstream os;
    os << "bad IDX image magic 0x" << std::hex << magic << " in '" << path.string() << "'";
    throw DataError(os.str());
  }
  RawImages raw;
  raw.count = read_be32(bytes, 4, path);
  raw.height = static_cast<int>(read_be32(bytes, 8, path));
  raw.width = static_cast<int>(read_be32(bytes, 12, path));
  const std::size_t need = raw.count * static_cast<std::size_t>(raw.height) * static_cast<std::size_t>(raw.width);
  if (bytes.size() < 16 + need)
    throw DataError("truncated IDX image file '" + path.string() + "': expected " + std::to_string(need) +
                    " pixel bytes, found " + std::to_string(bytes.size() - 16));
  raw.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(need));
  return raw;
}

RawImages read_npy_bitmaps(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 10 || bytes[0] != 0x93 || std::string(bytes.begin() + 1, bytes.begin() + 6) != "NUMPY")
    throw DataError("'" + path.string() + "' is not a .npy file");
  const int major = bytes[6];
  std::size_t header_len, offset;
  if (major == 1) {
    header_len = bytes[8] | (std::size_t{bytes[9]} << 8);
    offset = 10;
  } else {
    if (bytes.size() < 12) throw DataError("truncated .npy header");
    header_len = bytes[8] | (std::size_t{bytes[9]} << 8) | (std::size_t{bytes[10]} << 16) |
                 (std::size_t{bytes[11]} << 24);
    offset = 12;
  }
  if (offset + header_len > bytes.size()) throw DataError("truncated .npy header");
  const std::string header(bytes.begin() + static_cast<long>(offset),
                           bytes.begin() + static_cast<long>(offset + header_len));
  if (header.find("|u1") == std::string::npos && header.find("<u1") == std::string::npos)
    throw DataError("'" + path.string() + "': only uint8 .npy arrays are supported");
  if (header.find("'fortran_order': True") != std::string::npos)
    throw DataError("'" + path.string() + "': fortran-ordered arrays are not supported");
  std::smatch m;
  if (!std::regex_search(header, m, std::regex(R"('shape':\s*\((\d+),\s*(\d+)\s*\))")))
    throw DataError("'" + path.string() + "': expected a 2-D shape");
  RawImages raw;
  raw.count = std::stoul(m[1]);
  const std::size_t features = std::stoul(m[2]);
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(features))));
  if (static_cast<std::size_t>(side * side) != features)
    throw DataError("'" + path.string() + "': rows are not square bitmaps");
  raw.height = raw.width = side;
  const std::size_t start = offset + header_len;
  if (bytes.size() < start + raw.count * features) throw DataError("truncated .npy payload in '" + path.string() + "'");
  raw.pixels.assign(bytes.begin() + static_cast<long>(start),
                    bytes.begin() + static_cast<long>(start + raw.count * features));
  return raw;
}

float distance_to_segment(float px, float py, float ax, float ay, float bx, float by) {
  const float vx = bx - ax, vy = by - ay;
  const float len2 = vx * vx + vy * vy;
  float t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.f;
  t = std::clamp(t, 0.f, 1.f);
  const float dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

void Dataset::validate() const {
  if (static_cast<std::size_t>(images.rows()) != labels.size())
    throw DataError("dataset has " + std::to_string(images.rows()) + " images but " + std::to_string(labels.size()) +
                    " labels");
  if (images.cols() != shape.size()) throw DataError("image width does not match shape " + shape.str());
  if (images.size() > 0 && (images.minCoeff() < 0.f || images.maxCoeff() > 1.f))
    throw DataError("pixels outside [0, 1]");
  for (int y : labels)
    if (y < 0 || y >= class_count) throw DataError("label " + std::to_string(y) + " out of range");
}

Dataset Dataset::subset(const std::vector<std::size_t>& ids) const {
  Dataset out;
  out.shape = shape;
  out.class_count = class_count;
  out.class_names = class_names;
  out.split = split;
  out.provenance = provenance + " (subset of " + std::to_string(ids.size()) + ")";
  out.images.resize(static_cast<long>(ids.size()), images.cols());
  out.labels.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.images.row(static_cast<long>(i)) = images.row(static_cast<long>(ids[i]));
    out.labels.push_back(labels[ids[i]]);
  }
  return out;
}

std::vector<std::size_t> Dataset::indices_of_class(int cls) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == cls) out.push_back(i);
  return out;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path, Split split) {
  const RawImages raw = read_idx_images(images_path);
  const auto lbytes = read_file(labels_path);
  const std::uint32_t magic = read_be32(lbytes, 0, labels_path);
  if (magic != kLabelMagic) {
    std::ostringstream os;
    os << "bad IDX label magic 0x" << std::hex << magic << " in '" << labels_path.string() << "'";
    throw DataError(os.str());
  }
  const std::size_t n = read_be32(lbytes, 4, labels_path);
  if (n != raw.count)
    throw DataError("image file holds " + std::to_string(raw.count) + " samples but label file holds " +
                    std::to_string(n));
  if (lbytes.size() < 8 + n) throw DataError("truncated IDX label file '" + labels_path.string() + "'");

  Dataset d;
  d.shape = Shape{1, raw.height, raw.width};
  d.split = split;
  d.provenance = "idx:" + images_path.filename().string();
  d.images.resize(static_cast<long>(n), d.shape.size());
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) d.images.data()[i] = static_cast<float>(raw.pixels[i]) / 255.f;
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels.push_back(lbytes[8 + i]);
    max_label = std::max(max_label, d.labels.back());
  }
  d.class_count = max_label + 1;
  for (int c = 0; c < d.class_count; ++c) d.class_names.push_back(std::to_string(c));
  d.validate();
  return d;
}

void save_idx(const Dataset& data, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path) {
  if (data.shape.channels != 1) throw DataError("IDX export supports single-channel images only");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw DataError("cannot write IDX files");
  write_be32(img, kImageMagic);
  write_be32(img, static_cast<std::uint32_t>(data.size()));
  write_be32(img, static_cast<std::uint32_t>(data.shape.height));
  write_be32(img, static_cast<std::uint32_t>(data.shape.width));
  std::vector<char> pixels(static_cast<std::size_t>(data.images.size()));
  for (std::size_t i = 0; i < pixels.size(); ++i)
    pixels[i] = static_cast<char>(static_cast<unsigned char>(
        std::lround(std::clamp(data.images.data()[i], 0.f, 1.f) * 255.f)));
  img.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
  write_be32(lab, kLabelMagic);
  write_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int y : data.labels) lab.put(static_cast<char>(y));
}

Dataset synth_shapes(int n_per_class, std::uint64_t seed, Split split) {
  if (n_per_class < 1) throw ConfigError("n_per_class must be >= 1");
  constexpr int kClasses = 4;
  constexpr int kSide = 28;
  Dataset d;
  d.shape = Shape{1, kSide, kSide};
  d.class_count = kClasses;
  d.class_names = {"bar", "cross", "box", "disk"};
  d.split = split;
  d.provenance = "synth_shapes(n_per_class=" + std::to_string(n_per_class) + ", seed=" + std::to_string(seed) +
                 ", split=" + (split == Split::train ? "train" : "test") + ")";
  const int n = n_per_class * kClasses;
  d.images.setZero(n, kSide * kSide);
  Rng rng(derive_seed(seed, split == Split::train ? 11 : 12));

  for (int i = 0; i < n; ++i) {
    const int cls = i % kClasses;
    d.labels.push_back(cls);
    const float cx = 13.5f + static_cast<float>(rng.uniform(-3.0, 3.0));
    const float cy = 13.5f + static_cast<float>(rng.uniform(-3.0, 3.0));
    const float angle = static_cast<float>(rng.uniform(0.0, M_PI));
    const float extent = static_cast<float>(rng.uniform(6.0, 9.5));
    const float half_width = static_cast<float>(rng.uniform(1.0, 1.8));
    const float brightness = static_cast<float>(rng.uniform(0.75, 1.0));
    const float ux = std::cos(angle), uy = std::sin(angle);
    float* img = d.images.data() + static_cast<long>(i) * kSide * kSide;
    for (int y = 0; y < kSide; ++y)
      for (int x = 0; x < kSide; ++x) {
        const float px = static_cast<float>(x), py = static_cast<float>(y);
        float dist = 0.f, reach = half_width;
        switch (cls) {
          case 0:  // bar
            dist = distance_to_segment(px, py, cx - extent * ux, cy - extent * uy, cx + extent * ux, cy + extent * uy);
            break;
          case 1: {  // cross
            const float arm = 0.8f * extent;
            dist = std::min(
                distance_to_segment(px, py, cx - arm * ux, cy - arm * uy, cx + arm * ux, cy + arm * uy),
                distance_to_segment(px, py, cx + arm * uy, cy - arm * ux, cx - arm * uy, cy + arm * ux));
            break;
          }
          case 2: {  // box outline
            const float a = (px - cx) * ux + (py - cy) * uy;
            const float b = -(px - cx) * uy + (py - cy) * ux;
            dist = std::abs(std::max(std::abs(a), std::abs(b)) - 0.7f * extent);
            break;
          }
          default: {  // filled disk
            const float dx = px - cx, dy = py - cy;
            dist = std::sqrt(dx * dx + dy * dy);
            reach = 0.6f * extent;
            break;
          }
        }
        const float ink = std::clamp(reach + 0.5f - dist, 0.f, 1.f);
        const float noise = static_cast<float>(rng.uniform(0.0, 0.05));
        img[y * kSide + x] = std::clamp(brightness * ink + noise, 0.f, 1.f);
      }
  }
  d.validate();
  return d;
}

ManifestSplit load_manifest(const std::filesystem::path& manifest, int train_per_class, int test_per_class,
                            std::uint64_t seed) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest '" + manifest.string() + "'");
  if (train_per_class < 1 || test_per_class < 0) throw ConfigError("invalid per-class split sizes");
  std::vector<std::pair<std::string, std::filesystem::path>> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError("manifest line " + std::to_string(line_no) + " is not 'class_name<TAB>path'");
    std::filesystem::path p = line.substr(tab + 1);
    if (p.is_relative()) p = manifest.parent_path() / p;
    entries.emplace_back(line.substr(0, tab), p);
  }
  if (entries.empty()) throw DataError("manifest '" + manifest.string() + "' lists no classes");

  ManifestSplit out;
  for (Dataset* d : {&out.train, &out.test}) {
    d->class_count = static_cast<int>(entries.size());
    d->provenance = "manifest:" + manifest.filename().string();
  }
  out.train.split = Split::train;
  out.test.split = Split::test;
  std::vector<std::vector<float>> rows[2];
  for (std::size_t c = 0; c < entries.size(); ++c) {
    const auto& [name, path] = entries[c];
    const bool npy = path.extension() == ".npy";
    const RawImages raw = npy ? read_npy_bitmaps(path) : read_idx_images(path);
    const Shape shape{1, raw.height, raw.width};
    if (c == 0) out.train.shape = out.test.shape = shape;
    if (!(shape == out.train.shape)) throw DataError("class '" + name + "' has shape " + shape.str());
    const std::size_t need = static_cast<std::size_t>(train_per_class + test_per_class);
    if (raw.count < need)
      throw DataError("class '" + name + "' has " + std::to_string(raw.count) + " samples, need " +
                      std::to_string(need));
    Rng rng(derive_seed(seed, 100 + c));
    const auto order = rng.permutation(raw.count);
    for (Dataset* d : {&out.train, &out.test}) d->class_names.push_back(name);
    for (std::size_t k = 0; k < need; ++k) {
      const std::size_t src = order[k] * static_cast<std::size_t>(shape.size());
      std::vector<float> px(static_cast<std::size_t>(shape.size()));
      for (std::size_t p = 0; p < px.size(); ++p) px[p] = static_cast<float>(raw.pixels[src + p]) / 255.f;
      const int which = k < static_cast<std::size_t>(train_per_class) ? 0 : 1;
      rows[which].push_back(std::move(px));
      (which == 0 ? out.train : out.test).labels.push_back(static_cast<int>(c));
    }
  }
  for (int which = 0; which < 2; ++which) {
    Dataset& d = which == 0 ? out.train : out.test;
    d.images.resize(static_cast<long>(rows[which].size()), d.shape.size());
    for (std::size_t i = 0; i < rows[which].size(); ++i)
      d.images.row(static_cast<long>(i)) =
          Eigen::Map<const Eigen::RowVectorXf>(rows[which][i].data(), d.shape.size());
    d.validate();
  }
  return out;
}

void PreprocessConfig::validate(const Shape& shape) const {
  if (mean.has_value() != stddev.has_value()) throw ConfigError("normalization needs both mean and std");
  if (stddev && !(*stddev > 0.0)) throw ConfigError("normalization std must be positive");
  if (pad < 0) throw ConfigError("pad must be >= 0");
  if (pad > shape.height || pad > shape.width)
    throw ConfigError("pad " + std::to_string(pad) + " exceeds image dims " + shape.str());
}

Matrix<float> normalize(const Matrix<float>& images, const PreprocessConfig& config) {
  if (!config.mean) return images;
  return ((images.array() - static_cast<float>(*config.mean)) / static_cast<float>(*config.stddev)).matrix();
}

BatchStream::BatchStream(const Dataset& data, PreprocessConfig config, int batch_size, std::uint64_t seed)
    : data_(&data), config_(config), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  config_.validate(data.shape);
  begin_epoch(1);
}

void BatchStream::begin_epoch(int epoch) {
  Rng rng(derive_seed(seed_, 2 * static_cast<std::uint64_t>(epoch)));
  order_ = rng.permutation(data_->size());
  augment_ = Rng(derive_seed(seed_, 2 * static_cast<std::uint64_t>(epoch) + 1));
  cursor_ = 0;
}

std::size_t BatchStream::batches_per_epoch() const {
  return (data_->size() + static_cast<std::size_t>(batch_size_) - 1) / static_cast<std::size_t>(batch_size_);
}

bool BatchStream::next(Batch& out) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(batch_size_), order_.size() - cursor_);
  const Shape& s = data_->shape;
  out.images.resize(static_cast<long>(count), s.size());
  out.labels.resize(count);
  out.ids.resize(count);
  for (std::size_t b = 0; b < count; ++b) {
    const std::size_t id = order_[cursor_ + b];
    out.ids[b] = id;
    out.labels[b] = data_->labels[id];
    const float* src = data_->images.data() + static_cast<long>(id) * s.size();
    float* dst = out.images.data() + static_cast<long>(b) * s.size();
    if (config_.pad == 0 && !config_.flip) {
      std::copy(src, src + s.size(), dst);
      continue;
    }
    int dy = 0, dx = 0;
    if (config_.pad > 0) {
      dy = static_cast<int>(augment_.below(static_cast<std::uint64_t>(2 * config_.pad + 1))) - config_.pad;
      dx = static_cast<int>(augment_.below(static_cast<std::uint64_t>(2 * config_.pad + 1))) - config_.pad;
    }
    const bool flip = config_.flip && augment_.below(2) == 1;
    for (int c = 0; c < s.channels; ++c)
      for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
          const int sy = y + dy;
          int sx = x + dx;
          if (flip) sx = s.width - 1 - sx;
          const bool inside = sy >= 0 && sy < s.height && sx >= 0 && sx < s.width;
          dst[(c * s.height + y) * s.width + x] = inside ? src[(c * s.height + sy) * s.width + sx] : 0.f;
        }
  }
  cursor_ += count;
  if (config_.mean) out.images = normalize(out.images, config_);
  return true;
}

}  // namespace flint
