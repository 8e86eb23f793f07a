#include "flint/parameters.hpp"

#include "flint/digest.hpp"
#include "flint/errors.hpp"

#include <bit>
#include <numeric>

namespace flint {

static_assert(std::endian::native == std::endian::little, "checkpoint and digest code assumes little-endian");

const char* to_string(Owner owner) {
  switch (owner) {
    case Owner::predictor: return "predictor";
    case Owner::psi: return "psi";
    case Owner::head: return "head";
    case Owner::decoder: return "decoder";
  }
  return "?";
}

Owner parse_owner(std::string_view text) {
  if (text == "predictor") return Owner::predictor;
  if (text == "psi") return Owner::psi;
  if (text == "head") return Owner::head;
  if (text == "decoder") return Owner::decoder;
  throw DataError("unknown parameter owner '" + std::string(text) + "'");
}

template <typename T>
std::size_t ParameterStore<T>::add(std::string name, Owner owner, std::vector<int> dims) {
  if (find(name) != size()) throw ConfigError("duplicate parameter name '" + name + "'");
  const long count = std::accumulate(dims.begin(), dims.end(), 1L, std::multiplies<>());
  Parameter<T> p;
  p.name = std::move(name);
  p.owner = owner;
  p.dims = std::move(dims);
  p.value = Vector<T>::Zero(count);
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

template <typename T>
std::size_t ParameterStore<T>::find(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  return params_.size();
}

template <typename T>
void ParameterStore<T>::set_trainable(Owner owner, bool trainable) {
  for (auto& p : params_)
    if (p.owner == owner) p.trainable = trainable;
}

template <typename T>
bool ParameterStore<T>::any_trainable(Owner owner) const {
  for (const auto& p : params_)
    if (p.owner == owner && p.trainable) return true;
  return false;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count(Owner owner) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.owner == owner) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template <typename T>
Gradients<T> ParameterStore<T>::zero_gradients() const {
  Gradients<T> g;
  g.reserve(params_.size());
  for (const auto& p : params_) g.push_back(Vector<T>::Zero(p.value.size()));
  return g;
}

template <typename T>
std::string ParameterStore<T>::digest_impl(const Owner* filter) const {
  Sha256 h;
  for (const auto& p : params_) {
    if (filter && p.owner != *filter) continue;
    h.update(p.name);
    h.update(":");
    for (int d : p.dims) h.update(std::to_string(d) + ",");
    h.update("\n");
    h.update(std::as_bytes(std::span<const T>(p.value.data(), static_cast<std::size_t>(p.value.size()))));
  }
  return h.hex_digest();
}

template <typename T>
std::string ParameterStore<T>::digest() const {
  return digest_impl(nullptr);
}

template <typename T>
std::string ParameterStore<T>::digest(Owner owner_filter) const {
  return digest_impl(&owner_filter);
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace flint
