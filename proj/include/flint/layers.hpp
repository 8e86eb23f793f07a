#pragma once

#include "flint/tensor.hpp"

#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace flint {

struct Conv2d {
  int in_maps = 0;
  int out_maps = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
};

/// Weight layout (in_maps, out_maps, kernel, kernel).
struct TransposedConv2d {
  int in_maps = 0;
  int out_maps = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
};

/// Non-overlapping window, floor semantics.
struct MaxPool2d {
  int window = 2;
};

/// Accepts any input whose flattened size equals `in`.
struct Linear {
  int in = 0;
  int out = 0;
};

struct Relu {};
struct Sigmoid {};

/// Reinterprets the flattened features as (c, h, w).
struct Reshape {
  Shape shape;
};

using LayerSpec = std::variant<Conv2d, TransposedConv2d, MaxPool2d, Linear, Relu, Sigmoid, Reshape>;

/// Text form used by configs and checkpoints, e.g. "conv(1,20,5,1)".
std::string describe(const LayerSpec& layer);
std::string describe(const std::vector<LayerSpec>& layers);

/// Parses a single layer ("fc(800,500)") or a whitespace/';'-separated chain.
LayerSpec parse_layer(std::string_view text);
std::vector<LayerSpec> parse_layers(std::string_view text);

/// Throws ShapeError when `layer` cannot consume `input`.
Shape output_shape(const LayerSpec& layer, const Shape& input);

struct ParamShape {
  std::string suffix;  // "weight" or "bias"
  std::vector<int> dims;
  int fan_in = 0;
};

std::vector<ParamShape> parameter_shapes(const LayerSpec& layer);

}  // namespace flint
