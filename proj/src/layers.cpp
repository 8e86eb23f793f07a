#include "flint/layers.hpp"

#include "flint/errors.hpp"

#include <cctype>
#include <charconv>
#include <sstream>

namespace flint {
namespace {

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<int> parse_args(std::string_view text, std::string_view whole) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t comma = text.find(',', start);
    if (comma == std::string_view::npos) comma = text.size();
    std::string item = trim(text.substr(start, comma - start));
    int value = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
    if (item.empty() || ec != std::errc{} || ptr != item.data() + item.size())
      throw ConfigError("bad layer argument '" + item + "' in '" + std::string(whole) + "'");
    out.push_back(value);
    start = comma + 1;
  }
  return out;
}

int conv_extent(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

}  // namespace

std::string describe(const LayerSpec& layer) {
  std::ostringstream os;
  std::visit(overloaded{
                 [&](const Conv2d& l) {
                   os << "conv(" << l.in_maps << ',' << l.out_maps << ',' << l.kernel << ',' << l.stride;
                   if (l.padding) os << ',' << l.padding;
                   os << ')';
                 },
                 [&](const TransposedConv2d& l) {
                   os << "tconv(" << l.in_maps << ',' << l.out_maps << ',' << l.kernel << ',' << l.stride;
                   if (l.padding) os << ',' << l.padding;
                   os << ')';
                 },
                 [&](const MaxPool2d& l) { os << "maxpool(" << l.window << ')'; },
                 [&](const Linear& l) { os << "fc(" << l.in << ',' << l.out << ')'; },
                 [&](const Relu&) { os << "relu"; },
                 [&](const Sigmoid&) { os << "sigmoid"; },
                 [&](const Reshape& l) {
                   os << "reshape(" << l.shape.channels << ',' << l.shape.height << ',' << l.shape.width << ')';
                 },
             },
             layer);
  return os.str();
}

std::string describe(const std::vector<LayerSpec>& layers) {
  std::string out;
  for (const auto& l : layers) {
    if (!out.empty()) out += ' ';
    out += describe(l);
  }
  return out;
}

LayerSpec parse_layer(std::string_view raw) {
  const std::string text = trim(raw);
  const auto open = text.find('(');
  const std::string name = trim(text.substr(0, open));
  std::vector<int> args;
  if (open != std::string::npos) {
    if (text.back() != ')') throw ConfigError("unterminated layer '" + text + "'");
    args = parse_args(std::string_view(text).substr(open + 1, text.size() - open - 2), text);
  }
  auto need = [&](std::size_t lo, std::size_t hi) {
    if (args.size() < lo || args.size() > hi)
      throw ConfigError("layer '" + text + "' expects " + std::to_string(lo) + "-" + std::to_string(hi) +
                        " arguments");
    for (int a : args)
      if (a < 0) throw ConfigError("negative argument in layer '" + text + "'");
  };
  if (name == "conv" || name == "tconv") {
    need(3, 5);
    const int stride = args.size() > 3 ? args[3] : 1;
    const int padding = args.size() > 4 ? args[4] : 0;
    if (name == "conv") return Conv2d{args[0], args[1], args[2], stride, padding};
    return TransposedConv2d{args[0], args[1], args[2], stride, padding};
  }
  if (name == "maxpool") {
    need(1, 1);
    return MaxPool2d{args[0]};
  }
  if (name == "fc") {
    need(2, 2);
    return Linear{args[0], args[1]};
  }
  if (name == "reshape") {
    need(3, 3);
    return Reshape{Shape{args[0], args[1], args[2]}};
  }
  if (name == "relu" && args.empty()) return Relu{};
  if (name == "sigmoid" && args.empty()) return Sigmoid{};
  throw ConfigError("unknown layer '" + text + "'");
}

std::vector<LayerSpec> parse_layers(std::string_view text) {
  std::vector<LayerSpec> layers;
  std::string token;
  int depth = 0;
  auto flush = [&] {
    if (!trim(token).empty()) layers.push_back(parse_layer(token));
    token.clear();
  };
  for (char ch : text) {
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (depth == 0 && (ch == ';' || std::isspace(static_cast<unsigned char>(ch)))) {
      flush();
      continue;
    }
    token.push_back(ch);
  }
  flush();
  return layers;
}

Shape output_shape(const LayerSpec& layer, const Shape& in) {
  auto fail = [&](const std::string& why) -> Shape {
    throw ShapeError(describe(layer) + " cannot consume input " + in.str() + ": " + why);
  };
  return std::visit(
      overloaded{
          [&](const Conv2d& l) -> Shape {
            if (l.in_maps <= 0 || l.out_maps <= 0 || l.kernel <= 0 || l.stride <= 0)
              return fail("non-positive geometry");
            if (in.channels != l.in_maps) return fail("expected " + std::to_string(l.in_maps) + " maps");
            const int h = conv_extent(in.height, l.kernel, l.stride, l.padding);
            const int w = conv_extent(in.width, l.kernel, l.stride, l.padding);
            if (in.height + 2 * l.padding < l.kernel || in.width + 2 * l.padding < l.kernel || h <= 0 || w <= 0)
              return fail("kernel larger than padded input");
            return Shape{l.out_maps, h, w};
          },
          [&](const TransposedConv2d& l) -> Shape {
            if (l.in_maps <= 0 || l.out_maps <= 0 || l.kernel <= 0 || l.stride <= 0)
              return fail("non-positive geometry");
            if (in.channels != l.in_maps) return fail("expected " + std::to_string(l.in_maps) + " maps");
            const int h = (in.height - 1) * l.stride - 2 * l.padding + l.kernel;
            const int w = (in.width - 1) * l.stride - 2 * l.padding + l.kernel;
            if (h <= 0 || w <= 0) return fail("padding exceeds output");
            return Shape{l.out_maps, h, w};
          },
          [&](const MaxPool2d& l) -> Shape {
            if (l.window <= 0) return fail("non-positive window");
            if (in.height < l.window || in.width < l.window) return fail("window larger than input");
            return Shape{in.channels, in.height / l.window, in.width / l.window};
          },
          [&](const Linear& l) -> Shape {
            if (l.in <= 0 || l.out <= 0) return fail("non-positive width");
            if (in.size() != l.in) return fail("expected " + std::to_string(l.in) + " features");
            return Shape{l.out, 1, 1};
          },
          [&](const Relu&) { return in; },
          [&](const Sigmoid&) { return in; },
          [&](const Reshape& l) -> Shape {
            if (l.shape.channels <= 0 || l.shape.height <= 0 || l.shape.width <= 0)
              return fail("non-positive target");
            if (l.shape.size() != in.size()) return fail("element count differs");
            return l.shape;
          },
      },
      layer);
}

std::vector<ParamShape> parameter_shapes(const LayerSpec& layer) {
  return std::visit(overloaded{
                        [](const Conv2d& l) {
                          return std::vector<ParamShape>{
                              {"weight", {l.out_maps, l.in_maps, l.kernel, l.kernel}, l.in_maps * l.kernel * l.kernel},
                              {"bias", {l.out_maps}, 0}};
                        },
                        [](const TransposedConv2d& l) {
                          return std::vector<ParamShape>{
                              {"weight", {l.in_maps, l.out_maps, l.kernel, l.kernel}, l.in_maps * l.kernel * l.kernel},
                              {"bias", {l.out_maps}, 0}};
                        },
                        [](const Linear& l) {
                          return std::vector<ParamShape>{{"weight", {l.out, l.in}, l.in}, {"bias", {l.out}, 0}};
                        },
                        [](const auto&) { return std::vector<ParamShape>{}; },
                    },
                    layer);
}

}  // namespace flint
