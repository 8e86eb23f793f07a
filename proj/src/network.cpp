#include "flint/network.hpp"

#include "flint/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace flint {
namespace {

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

template <typename T>
using Map = Eigen::Map<Matrix<T>>;
template <typename T>
using ConstMap = Eigen::Map<const Matrix<T>>;

struct Geometry {
  int channels, height, width;  // image side
  int kernel, stride, pad;
  int grid_h, grid_w;           // kernel placements
};

// cols[(c*k + ki)*k + kj][gy*grid_w + gx] = img[c][gy*s - p + ki][gx*s - p + kj]
template <typename T>
void im2col(const T* img, const Geometry& g, T* cols) {
  const int grid = g.grid_h * g.grid_w;
  for (int c = 0; c < g.channels; ++c)
    for (int ki = 0; ki < g.kernel; ++ki)
      for (int kj = 0; kj < g.kernel; ++kj) {
        T* row = cols + static_cast<long>((c * g.kernel + ki) * g.kernel + kj) * grid;
        for (int gy = 0; gy < g.grid_h; ++gy) {
          const int iy = gy * g.stride - g.pad + ki;
          T* dst = row + gy * g.grid_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.grid_w, T(0));
            continue;
          }
          const T* src = img + (static_cast<long>(c) * g.height + iy) * g.width;
          for (int gx = 0; gx < g.grid_w; ++gx) {
            const int ix = gx * g.stride - g.pad + kj;
            dst[gx] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
          }
        }
      }
}

// Adjoint of im2col: accumulates columns back into the image.
template <typename T>
void col2im(const T* cols, const Geometry& g, T* img) {
  const int grid = g.grid_h * g.grid_w;
  for (int c = 0; c < g.channels; ++c)
    for (int ki = 0; ki < g.kernel; ++ki)
      for (int kj = 0; kj < g.kernel; ++kj) {
        const T* row = cols + static_cast<long>((c * g.kernel + ki) * g.kernel + kj) * grid;
        for (int gy = 0; gy < g.grid_h; ++gy) {
          const int iy = gy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.height) continue;
          T* dst = img + (static_cast<long>(c) * g.height + iy) * g.width;
          const T* src = row + gy * g.grid_w;
          for (int gx = 0; gx < g.grid_w; ++gx) {
            const int ix = gx * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.width) dst[ix] += src[gx];
          }
        }
      }
}

template <typename T>
Vector<T>* grad_slot(Gradients<T>* grads, const ParameterStore<T>& store, long index) {
  if (!grads || index < 0 || !store[static_cast<std::size_t>(index)].trainable) return nullptr;
  return &(*grads)[static_cast<std::size_t>(index)];
}

}  // namespace

template <typename T>
Sequential::Sequential(std::vector<LayerSpec> layers, Shape input, const std::string& prefix, Owner owner,
                       ParameterStore<T>& store, Rng& rng)
    : layers_(std::move(layers)) {
  shapes_.push_back(input);
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    Shape out;
    try {
      out = flint::output_shape(layers_[k], shapes_.back());
    } catch (const ShapeError& e) {
      const std::string prev = k == 0 ? std::string("input ") + input.str()
                                      : "layer " + std::to_string(k) + " " + describe(layers_[k - 1]);
      throw ShapeError(prefix + ": shape mismatch between " + prev + " and layer " + std::to_string(k + 1) + " " +
                       describe(layers_[k]) + " (" + e.what() + ")");
    }
    shapes_.push_back(out);
    const auto shapes = parameter_shapes(layers_[k]);
    param_index_.push_back(shapes.empty() ? -1 : static_cast<long>(store.size()));
    for (const auto& ps : shapes) {
      const std::size_t idx = store.add(prefix + "." + std::to_string(k + 1) + "." + ps.suffix, owner, ps.dims);
      if (ps.fan_in > 0) {
        const double bound = std::sqrt(6.0 / ps.fan_in);
        for (auto& v : store[idx].value) v = static_cast<T>(rng.uniform(-bound, bound));
      }
    }
  }
}

template <typename T>
Matrix<T> Sequential::forward(const ParameterStore<T>& store, const Matrix<T>& input, Trace<T>* trace) const {
  if (input.cols() != input_shape().size())
    throw ShapeError("batch width " + std::to_string(input.cols()) + " does not match input shape " +
                     input_shape().str());
  if (trace) {
    trace->values.clear();
    trace->values.reserve(layers_.size() + 1);
    trace->values.push_back(input);
  }
  Matrix<T> current = input;
  const long batch = input.rows();
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const Shape& in = shapes_[k];
    const Shape& out = shapes_[k + 1];
    const long pi = param_index_[k];
    Matrix<T> next;
    std::visit(
        overloaded{
            [&](const Conv2d& l) {
              ConstMap<T> w(store[pi].value.data(), l.out_maps, l.in_maps * l.kernel * l.kernel);
              const auto& b = store[pi + 1].value;
              const Geometry g{in.channels, in.height, in.width, l.kernel, l.stride, l.padding, out.height, out.width};
              Matrix<T> cols(w.cols(), out.height * out.width);
              next.resize(batch, out.size());
              for (long n = 0; n < batch; ++n) {
                im2col(current.data() + n * current.cols(), g, cols.data());
                Map<T> o(next.data() + n * next.cols(), l.out_maps, out.height * out.width);
                o.noalias() = w * cols;
                o.colwise() += b;
              }
            },
            [&](const TransposedConv2d& l) {
              ConstMap<T> w(store[pi].value.data(), l.in_maps, l.out_maps * l.kernel * l.kernel);
              const auto& b = store[pi + 1].value;
              const Geometry g{out.channels, out.height, out.width, l.kernel, l.stride, l.padding, in.height, in.width};
              Matrix<T> cols(w.cols(), in.height * in.width);
              next.setZero(batch, out.size());
              for (long n = 0; n < batch; ++n) {
                ConstMap<T> x(current.data() + n * current.cols(), l.in_maps, in.height * in.width);
                cols.noalias() = w.transpose() * x;
                T* dst = next.data() + n * next.cols();
                col2im(cols.data(), g, dst);
                Map<T> o(dst, out.channels, out.height * out.width);
                o.colwise() += b;
              }
            },
            [&](const MaxPool2d& l) {
              next.resize(batch, out.size());
              for (long n = 0; n < batch; ++n) {
                const T* src = current.data() + n * current.cols();
                T* dst = next.data() + n * next.cols();
                for (int c = 0; c < out.channels; ++c)
                  for (int oy = 0; oy < out.height; ++oy)
                    for (int ox = 0; ox < out.width; ++ox) {
                      T best = -std::numeric_limits<T>::infinity();
                      for (int dy = 0; dy < l.window; ++dy)
                        for (int dx = 0; dx < l.window; ++dx)
                          best = std::max(best, src[(c * in.height + oy * l.window + dy) * in.width + ox * l.window + dx]);
                      dst[(c * out.height + oy) * out.width + ox] = best;
                    }
              }
            },
            [&](const Linear& l) {
              ConstMap<T> w(store[pi].value.data(), l.out, l.in);
              const auto& b = store[pi + 1].value;
              next.noalias() = current * w.transpose();
              next.rowwise() += b.transpose();
            },
            [&](const Relu&) { next = current.cwiseMax(T(0)); },
            [&](const Sigmoid&) { next = (T(1) / (T(1) + (-current.array()).exp())).matrix(); },
            [&](const Reshape&) { next = current; },
        },
        layers_[k]);
    current = std::move(next);
    if (trace) trace->values.push_back(current);
  }
  return current;
}

template <typename T>
Matrix<T> Sequential::backward(const ParameterStore<T>& store, const Trace<T>& trace,
                               const Matrix<T>& output_gradient, Gradients<T>* grads,
                               std::span<const InjectedGradient<T>> injected, bool want_input_gradient) const {
  if (trace.values.size() != layers_.size() + 1) throw ShapeError("trace does not match network depth");
  const long batch = trace.values.front().rows();

  int top = static_cast<int>(layers_.size()) - 1;
  Matrix<T> g;
  if (output_gradient.size() == 0) {
    top = -1;
    for (const auto& inj : injected) top = std::max(top, inj.layer);
    if (top < 0) return Matrix<T>::Zero(batch, input_shape().size());
    g.setZero(batch, shapes_[top + 1].size());
  } else {
    if (output_gradient.rows() != batch || output_gradient.cols() != output_shape().size())
      throw ShapeError("output gradient shape mismatch");
    g = output_gradient;
  }

  // Lowest layer that still needs a gradient w.r.t. its output.
  int bottom = want_input_gradient ? 0 : top + 1;
  if (!want_input_gradient && grads)
    for (int k = 0; k <= top; ++k)
      if (param_index_[k] >= 0 && store[param_index_[k]].trainable) {
        bottom = k;
        break;
      }
  if (bottom > top) return Matrix<T>();

  for (int k = top; k >= bottom; --k) {
    for (const auto& inj : injected)
      if (inj.layer == k) {
        if (inj.gradient->rows() != batch || inj.gradient->cols() != g.cols())
          throw ShapeError("injected gradient shape mismatch at layer " + std::to_string(k + 1));
        g += *inj.gradient;
      }

    const Shape& in = shapes_[k];
    const Shape& out = shapes_[k + 1];
    const Matrix<T>& x = trace.values[k];
    const long pi = param_index_[k];
    const bool need_dx = k > bottom || want_input_gradient;
    Matrix<T> dx;
    std::visit(
        overloaded{
            [&](const Conv2d& l) {
              ConstMap<T> w(store[pi].value.data(), l.out_maps, l.in_maps * l.kernel * l.kernel);
              Vector<T>* dw = grad_slot(grads, store, pi);
              Vector<T>* db = grad_slot(grads, store, pi + 1);
              const Geometry geo{in.channels, in.height, in.width, l.kernel, l.stride, l.padding, out.height, out.width};
              Matrix<T> cols(w.cols(), out.height * out.width);
              Matrix<T> dcols(w.cols(), out.height * out.width);
              if (need_dx) dx.setZero(batch, in.size());
              for (long n = 0; n < batch; ++n) {
                ConstMap<T> dy(g.data() + n * g.cols(), l.out_maps, out.height * out.width);
                if (dw) {
                  im2col(x.data() + n * x.cols(), geo, cols.data());
                  Map<T>(dw->data(), w.rows(), w.cols()).noalias() += dy * cols.transpose();
                }
                if (db) *db += dy.rowwise().sum();
                if (need_dx) {
                  dcols.noalias() = w.transpose() * dy;
                  col2im(dcols.data(), geo, dx.data() + n * dx.cols());
                }
              }
            },
            [&](const TransposedConv2d& l) {
              ConstMap<T> w(store[pi].value.data(), l.in_maps, l.out_maps * l.kernel * l.kernel);
              Vector<T>* dw = grad_slot(grads, store, pi);
              Vector<T>* db = grad_slot(grads, store, pi + 1);
              const Geometry geo{out.channels, out.height, out.width, l.kernel, l.stride, l.padding, in.height, in.width};
              Matrix<T> dcols(w.cols(), in.height * in.width);
              if (need_dx) dx.resize(batch, in.size());
              for (long n = 0; n < batch; ++n) {
                const T* dy = g.data() + n * g.cols();
                im2col(dy, geo, dcols.data());
                if (dw) {
                  ConstMap<T> xn(x.data() + n * x.cols(), l.in_maps, in.height * in.width);
                  Map<T>(dw->data(), w.rows(), w.cols()).noalias() += xn * dcols.transpose();
                }
                if (db) *db += ConstMap<T>(dy, out.channels, out.height * out.width).rowwise().sum();
                if (need_dx) Map<T>(dx.data() + n * dx.cols(), l.in_maps, in.height * in.width).noalias() = w * dcols;
              }
            },
            [&](const MaxPool2d& l) {
              if (!need_dx) return;
              dx.setZero(batch, in.size());
              for (long n = 0; n < batch; ++n) {
                const T* src = x.data() + n * x.cols();
                const T* dy = g.data() + n * g.cols();
                T* dst = dx.data() + n * dx.cols();
                for (int c = 0; c < out.channels; ++c)
                  for (int oy = 0; oy < out.height; ++oy)
                    for (int ox = 0; ox < out.width; ++ox) {
                      long best_at = -1;
                      T best = -std::numeric_limits<T>::infinity();
                      for (int dyy = 0; dyy < l.window; ++dyy)
                        for (int dxx = 0; dxx < l.window; ++dxx) {
                          const long at = (c * in.height + oy * l.window + dyy) * in.width + ox * l.window + dxx;
                          if (best_at < 0 || src[at] > best) {
                            best = src[at];
                            best_at = at;
                          }
                        }
                      dst[best_at] += dy[(c * out.height + oy) * out.width + ox];
                    }
              }
            },
            [&](const Linear& l) {
              ConstMap<T> w(store[pi].value.data(), l.out, l.in);
              if (Vector<T>* dw = grad_slot(grads, store, pi))
                Map<T>(dw->data(), l.out, l.in).noalias() += g.transpose() * x;
              if (Vector<T>* db = grad_slot(grads, store, pi + 1)) *db += g.colwise().sum().transpose();
              if (need_dx) dx.noalias() = g * w;
            },
            [&](const Relu&) {
              if (need_dx) dx = (x.array() > T(0)).select(g, T(0));
            },
            [&](const Sigmoid&) {
              if (!need_dx) return;
              const auto& y = trace.values[k + 1].array();
              dx = (g.array() * y * (T(1) - y)).matrix();
            },
            [&](const Reshape&) {
              if (need_dx) dx = g;
            },
        },
        layers_[k]);
    if (!need_dx) break;
    g = std::move(dx);
  }
  return want_input_gradient ? g : Matrix<T>();
}

#define FLINT_INSTANTIATE(T)                                                                                   \
  template Sequential::Sequential(std::vector<LayerSpec>, Shape, const std::string&, Owner, ParameterStore<T>&, \
                                  Rng&);                                                                       \
  template Matrix<T> Sequential::forward(const ParameterStore<T>&, const Matrix<T>&, Trace<T>*) const;         \
  template Matrix<T> Sequential::backward(const ParameterStore<T>&, const Trace<T>&, const Matrix<T>&,         \
                                          Gradients<T>*, std::span<const InjectedGradient<T>>, bool) const;

FLINT_INSTANTIATE(float)
FLINT_INSTANTIATE(double)

}  // namespace flint
