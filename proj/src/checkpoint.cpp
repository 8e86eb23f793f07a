#include "flint/checkpoint.hpp"

#include "flint/digest.hpp"
#include "flint/errors.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace flint {
namespace {

constexpr const char* kMagic = "FLINTCKPT";

void put_le(std::ostream& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
  out.write(bytes, 4);
}

float get_le(const unsigned char* b) {
  const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
                             static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  return std::bit_cast<float>(bits);
}

std::string expect_line(std::istream& in, const std::string& where) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(where + ": truncated header");
  return line;
}

std::string field(const std::string& line, const std::string& name, const std::string& where) {
  if (line.rfind(name + " ", 0) != 0) throw DataError(where + ": expected '" + name + "', got '" + line + "'");
  return line.substr(name.size() + 1);
}

long to_long(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": bad number '" + s + "'");
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelBundle<float>& bundle, const RunConfig& config,
                     int epoch) {
  const std::string canonical = config.canonical_text();
  std::ostringstream head;
  head << kMagic << ' ' << kFormatVersion << '\n'
       << "epoch " << epoch << '\n'
       << "config_digest " << config.digest() << '\n'
       << "parameter_digest " << bundle.parameters().digest() << '\n';
  const auto lines = std::count(canonical.begin(), canonical.end(), '\n');
  head << "config " << lines << '\n' << canonical;
  head << "arrays " << bundle.parameters().size() << '\n';
  for (const auto& p : bundle.parameters()) {
    head << p.name << ' ' << to_string(p.owner) << ' ' << (p.trainable ? 1 : 0) << " float32 " << p.dims.size();
    for (int d : p.dims) head << ' ' << d;
    head << '\n';
  }
  head << "payload\n";

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  const std::string h = head.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& p : bundle.parameters())
    for (Eigen::Index i = 0; i < p.value.size(); ++i) put_le(out, p.value[i]);
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + where);

  Checkpoint ck;
  {
    std::istringstream first(expect_line(in, where));
    std::string magic;
    first >> magic >> ck.format_version;
    if (magic != kMagic) throw DataError(where + ": not a checkpoint");
    if (ck.format_version != kFormatVersion)
      throw DataError(where + ": unsupported format version " + std::to_string(ck.format_version));
  }
  ck.epoch = static_cast<int>(to_long(field(expect_line(in, where), "epoch", where), where));
  ck.config_digest = field(expect_line(in, where), "config_digest", where);
  ck.parameter_digest = field(expect_line(in, where), "parameter_digest", where);
  const long config_lines = to_long(field(expect_line(in, where), "config", where), where);
  std::string canonical;
  for (long i = 0; i < config_lines; ++i) canonical += expect_line(in, where) + "\n";
  try {
    ck.config = parse_config(canonical, where + " (config echo)");
    ck.bundle = ModelBundle<float>(bundle_spec(ck.config.model), 0);
  } catch (const ConfigError& e) {
    throw DataError(where + ": unusable config echo: " + e.what());
  }
  if (ck.config.canonical_text() != canonical || ck.config.digest() != ck.config_digest)
    throw DataError(where + ": config digest mismatch");

  auto& params = ck.bundle.parameters();
  const long arrays = to_long(field(expect_line(in, where), "arrays", where), where);
  if (arrays != static_cast<long>(params.size()))
    throw DataError(where + ": " + std::to_string(arrays) + " arrays, model expects " + std::to_string(params.size()));
  for (auto& p : params) {
    std::istringstream row(expect_line(in, where));
    std::string name, owner, dtype;
    int trainable = 0;
    std::size_t rank = 0;
    row >> name >> owner >> trainable >> dtype >> rank;
    std::vector<int> dims(rank);
    for (auto& d : dims) row >> d;
    if (!row || name != p.name || dtype != "float32" || dims != p.dims)
      throw DataError(where + ": manifest entry '" + name + "' does not match model array '" + p.name + "'");
    try {
      if (parse_owner(owner) != p.owner) throw DataError("owner");
    } catch (const Error&) {
      throw DataError(where + ": bad owner for '" + name + "'");
    }
    p.trainable = trainable != 0;
  }
  if (expect_line(in, where) != "payload") throw DataError(where + ": missing payload marker");

  std::vector<unsigned char> buf;
  for (auto& p : params) {
    buf.resize(static_cast<std::size_t>(p.value.size()) * 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw DataError(where + ": truncated payload");
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value[i] = get_le(&buf[static_cast<std::size_t>(i) * 4]);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError(where + ": trailing bytes after payload");
  if (params.digest() != ck.parameter_digest) throw DataError(where + ": parameter digest mismatch");
  return ck;
}

}  // namespace flint
