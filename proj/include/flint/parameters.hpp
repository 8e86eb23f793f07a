#pragma once

#include "flint/tensor.hpp"

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace flint {

/// Network that owns a parameter array.
enum class Owner { predictor, psi, head, decoder };

const char* to_string(Owner owner);
Owner parse_owner(std::string_view text);

template <typename T>
struct Parameter {
  std::string name;
  Owner owner = Owner::predictor;
  std::vector<int> dims;
  Vector<T> value;
  bool trainable = true;
};

template <typename T>
using Gradients = std::vector<Vector<T>>;

template <typename T>
class ParameterStore {
 public:
  /// Registers a zero-initialized array; names must be unique.
  std::size_t add(std::string name, Owner owner, std::vector<int> dims);

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

  /// Index of `name`, or size() when absent.
  std::size_t find(std::string_view name) const;

  void set_trainable(Owner owner, bool trainable);
  bool any_trainable(Owner owner) const;
  std::size_t scalar_count() const;
  std::size_t scalar_count(Owner owner) const;

  Gradients<T> zero_gradients() const;

  /// SHA-256 over names, dims and the raw little-endian values. With
  /// `owner_filter` set, only that owner's arrays contribute.
  std::string digest() const;
  std::string digest(Owner owner_filter) const;

 private:
  std::string digest_impl(const Owner* filter) const;
  std::vector<Parameter<T>> params_;
};

}  // namespace flint
