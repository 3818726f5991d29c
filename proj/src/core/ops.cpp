#include "upet/core/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace upet {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

std::string dim_name(std::size_t axis) {
  static const char* names[] = {"N", "C", "D", "H", "W"};
  return axis < 5 ? names[axis] : "axis" + std::to_string(axis);
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op, const char* what) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": " + what + " is undefined");
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got shape " + t.shape().str());
  }
}

// ---------------------------------------------------------------------------
// conv3d

struct ConvGeometry {
  Index n, cin, d, h, w;
  Index cout, k;
  Index stride, pad;
  Index od, oh, ow;

  Index in_voxels() const { return d * h * w; }
  Index out_voxels() const { return od * oh * ow; }
  Index patch() const { return cin * k * k * k; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename T>
AlignedVector<T>& workspace() {
  thread_local AlignedVector<T> buffer;
  return buffer;
}

// Rows are (ci, kd, kh, kw); columns are the output voxels of depth planes
// [od0, od1).
template <typename T>
void im2col(const T* in, const ConvGeometry& g, Index od0, Index od1, T* cols) {
  const Index P = (od1 - od0) * g.oh * g.ow;
  for (Index ci = 0; ci < g.cin; ++ci) {
    for (Index kd = 0; kd < g.k; ++kd) {
      for (Index kh = 0; kh < g.k; ++kh) {
        for (Index kw = 0; kw < g.k; ++kw) {
          T* dst = cols + (((ci * g.k + kd) * g.k + kh) * g.k + kw) * P;
          for (Index od = od0; od < od1; ++od) {
            const Index id = od * g.stride - g.pad + kd;
            T* dplane = dst + (od - od0) * g.oh * g.ow;
            if (id < 0 || id >= g.d) {
              std::fill(dplane, dplane + g.oh * g.ow, T(0));
              continue;
            }
            for (Index oh = 0; oh < g.oh; ++oh) {
              const Index ih = oh * g.stride - g.pad + kh;
              T* drow = dplane + oh * g.ow;
              if (ih < 0 || ih >= g.h) {
                std::fill(drow, drow + g.ow, T(0));
                continue;
              }
              const T* srow = in + ((ci * g.d + id) * g.h + ih) * g.w;
              if (g.stride == 1) {
                const Index lo = std::clamp<Index>(g.pad - kw, 0, g.ow);
                const Index hi = std::clamp<Index>(g.w + g.pad - kw, lo, g.ow);
                std::fill(drow, drow + lo, T(0));
                std::copy(srow + lo - g.pad + kw, srow + hi - g.pad + kw, drow + lo);
                std::fill(drow + hi, drow + g.ow, T(0));
              } else {
                for (Index ow = 0; ow < g.ow; ++ow) {
                  const Index iw = ow * g.stride - g.pad + kw;
                  drow[ow] = (iw >= 0 && iw < g.w) ? srow[iw] : T(0);
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_accumulate(const T* cols, const ConvGeometry& g, Index od0, Index od1, T* in_grad) {
  const Index P = (od1 - od0) * g.oh * g.ow;
  for (Index ci = 0; ci < g.cin; ++ci) {
    for (Index kd = 0; kd < g.k; ++kd) {
      for (Index kh = 0; kh < g.k; ++kh) {
        for (Index kw = 0; kw < g.k; ++kw) {
          const T* src = cols + (((ci * g.k + kd) * g.k + kh) * g.k + kw) * P;
          for (Index od = od0; od < od1; ++od) {
            const Index id = od * g.stride - g.pad + kd;
            if (id < 0 || id >= g.d) continue;
            for (Index oh = 0; oh < g.oh; ++oh) {
              const Index ih = oh * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.h) continue;
              const T* srow = src + ((od - od0) * g.oh + oh) * g.ow;
              T* drow = in_grad + ((ci * g.d + id) * g.h + ih) * g.w;
              if (g.stride == 1) {
                const Index lo = std::clamp<Index>(g.pad - kw, 0, g.ow);
                const Index hi = std::clamp<Index>(g.w + g.pad - kw, lo, g.ow);
                T* d = drow - g.pad + kw;
                for (Index ow = lo; ow < hi; ++ow) d[ow] += srow[ow];
              } else {
                for (Index ow = 0; ow < g.ow; ++ow) {
                  const Index iw = ow * g.stride - g.pad + kw;
                  if (iw >= 0 && iw < g.w) drow[iw] += srow[ow];
                }
              }
            }
          }
        }
      }
    }
  }
}

// Output depth planes per im2col tile, sized so that a tile of the patch
// matrix stays cache resident (about 1 MB).
template <typename T>
Index tile_planes(const ConvGeometry& g) {
  const Index per_plane = g.patch() * g.oh * g.ow * static_cast<Index>(sizeof(T));
  return std::clamp<Index>((Index{1} << 20) / std::max<Index>(per_plane, 1), 1, g.od);
}

template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           int stride, int padding) {
  require_rank(input, 5, "conv3d", "input");
  require_rank(weight, 5, "conv3d", "weight");
  if (stride < 1) throw ShapeError("conv3d: stride must be positive, got " + std::to_string(stride));
  if (padding < 0) throw ShapeError("conv3d: padding must be non-negative, got " + std::to_string(padding));
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.d = input.dim(2);
  g.h = input.dim(3);
  g.w = input.dim(4);
  g.cout = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = stride;
  g.pad = padding;
  if (weight.dim(1) != g.cin) {
    throw ShapeError("conv3d: input channel axis C has extent " + std::to_string(g.cin) +
                     " but weight expects C_in=" + std::to_string(weight.dim(1)));
  }
  if (weight.dim(3) != g.k || weight.dim(4) != g.k) {
    throw ShapeError("conv3d: kernel must be cubic, got weight shape " + weight.shape().str());
  }
  const Index extents[3] = {g.d, g.h, g.w};
  for (std::size_t a = 0; a < 3; ++a) {
    if (g.k > extents[a] + 2 * padding) {
      throw ShapeError("conv3d: kernel extent " + std::to_string(g.k) + " exceeds padded spatial axis " +
                       dim_name(a + 2) + "=" + std::to_string(extents[a]) + "+2*" + std::to_string(padding));
    }
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw ShapeError("conv3d: bias shape " + bias.shape().str() + " does not match C_out=" +
                     std::to_string(g.cout));
  }
  g.od = (g.d + 2 * padding - g.k) / stride + 1;
  g.oh = (g.h + 2 * padding - g.k) / stride + 1;
  g.ow = (g.w + 2 * padding - g.k) / stride + 1;
  return g;
}

// Gradients with several contributions per element are first summed into a
// zeroed local buffer and then added to the tensor's gradient in one pass, so
// that a tensor used twice receives exactly twice the single-use gradient.
template <typename T>
void add_into(Tensor<T>& t, const T* local) {
  auto g = t.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += local[i];
}

// ---------------------------------------------------------------------------
// broadcasting over the channel axis

struct ChannelBroadcast {
  Shape out;
  Index n = 0, c = 0, inner = 0;
  bool a_single = false;
  bool b_single = false;
};

template <typename T>
ChannelBroadcast channel_broadcast(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.defined() || !b.defined()) throw ShapeError(std::string(op) + ": undefined operand");
  ChannelBroadcast bc;
  if (a.shape() == b.shape()) {
    bc.out = a.shape();
    bc.n = 1;
    bc.c = 1;
    bc.inner = a.numel();
    return bc;
  }
  if (a.rank() != b.rank() || a.rank() < 2) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape().str() + " and " + b.shape().str());
  }
  std::vector<Index> dims = a.shape().dims();
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i == 1) continue;
    if (a.dim(i) != b.dim(i)) {
      throw ShapeError(std::string(op) + ": axis " + dim_name(i) + " differs (" + std::to_string(a.dim(i)) +
                       " vs " + std::to_string(b.dim(i)) + ")");
    }
  }
  if (a.dim(1) == 1) {
    bc.a_single = true;
    dims[1] = b.dim(1);
  } else if (b.dim(1) == 1) {
    bc.b_single = true;
  } else {
    throw ShapeError(std::string(op) + ": channel axis C differs (" + std::to_string(a.dim(1)) + " vs " +
                     std::to_string(b.dim(1)) + ") and neither is 1");
  }
  bc.out = Shape(dims);
  bc.n = dims[0];
  bc.c = dims[1];
  bc.inner = bc.out.numel() / (bc.n * bc.c);
  return bc;
}

// Index mapping for trilinear resize along one axis.
struct AxisTaps {
  std::vector<Index> i0, i1;
  std::vector<double> w1;
};

AxisTaps axis_taps(Index in, int factor) {
  AxisTaps t;
  const Index out = in * factor;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const Index lo = static_cast<Index>(std::floor(src));
    t.i0[o] = lo;
    t.i1[o] = std::min(lo + 1, in - 1);
    t.w1[o] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int padding) {
  const ConvGeometry g = conv_geometry(input, weight, bias, stride, padding);
  Tensor<T> out(Shape{g.n, g.cout, g.od, g.oh, g.ow});

  auto forward = [x = input, w = weight, b = bias, out, g]() mutable {
    const Index P = g.out_voxels();
    const Index K = g.patch();
    ConstMatMap<T> wm(w.ptr(), g.cout, K);
    AlignedVector<T>& cols = workspace<T>();
    for (Index n = 0; n < g.n; ++n) {
      const T* xin = x.ptr() + n * g.cin * g.in_voxels();
      MatMap<T> om(out.ptr() + n * g.cout * P, g.cout, P);
      if (g.pointwise()) {
        om.noalias() = wm * ConstMatMap<T>(xin, g.cin, P);
      } else {
        const Index planes = tile_planes<T>(g);
        const Index plane = g.oh * g.ow;
        cols.resize(static_cast<std::size_t>(K * planes * plane));
        for (Index od0 = 0; od0 < g.od; od0 += planes) {
          const Index od1 = std::min(g.od, od0 + planes);
          const Index pc = (od1 - od0) * plane;
          im2col(xin, g, od0, od1, cols.data());
          StridedMap<T>(om.data() + od0 * plane, g.cout, pc, Eigen::OuterStride<>(P)).noalias() =
              wm * ConstMatMap<T>(cols.data(), K, pc);
        }
      }
      if (b.defined()) {
        for (Index co = 0; co < g.cout; ++co) om.row(co).array() += b.data()[co];
      }
    }
  };

  auto backward = [x = input, w = weight, b = bias, out, g]() mutable {
    const Index P = g.out_voxels();
    const Index K = g.patch();
    ConstMatMap<T> wm(w.ptr(), g.cout, K);
    const bool need_x = wants_grad(x);
    const bool need_w = wants_grad(w);
    const bool need_b = wants_grad(b);
    AlignedVector<T>& cols = workspace<T>();
    RowMat<T> dcols;
    RowMat<T> dw = RowMat<T>::Zero(need_w ? g.cout : 0, need_w ? K : 0);
    std::vector<T> db(need_b ? g.cout : 0, T(0));
    std::vector<T> dx(need_x ? static_cast<std::size_t>(x.numel()) : 0, T(0));
    for (Index n = 0; n < g.n; ++n) {
      const T* xin = x.ptr() + n * g.cin * g.in_voxels();
      ConstMatMap<T> dom(out.grad().data() + n * g.cout * P, g.cout, P);
      if (need_b) {
        for (Index co = 0; co < g.cout; ++co) {
          const T* row = dom.data() + co * P;
          T acc = T(0);
          for (Index i = 0; i < P; ++i) acc += row[i];
          db[co] += acc;
        }
      }
      T* dxn = need_x ? dx.data() + n * g.cin * g.in_voxels() : nullptr;
      if (g.pointwise()) {
        if (need_w) dw.noalias() += dom * ConstMatMap<T>(xin, g.cin, P).transpose();
        if (need_x) MatMap<T>(dxn, g.cin, P).noalias() = wm.transpose() * dom;
        continue;
      }
      const Index planes = tile_planes<T>(g);
      const Index plane = g.oh * g.ow;
      if (need_w) cols.resize(static_cast<std::size_t>(K * planes * plane));
      for (Index od0 = 0; od0 < g.od; od0 += planes) {
        const Index od1 = std::min(g.od, od0 + planes);
        const Index pc = (od1 - od0) * plane;
        ConstStridedMap<T> dblock(dom.data() + od0 * plane, g.cout, pc, Eigen::OuterStride<>(P));
        if (need_w) {
          im2col(xin, g, od0, od1, cols.data());
          dw.noalias() += dblock * ConstMatMap<T>(cols.data(), K, pc).transpose();
        }
        if (need_x) {
          dcols.noalias() = wm.transpose() * dblock;
          col2im_accumulate(dcols.data(), g, od0, od1, dxn);
        }
      }
    }
    if (need_w) add_into(w, dw.data());
    if (need_b) add_into(b, db.data());
    if (need_x) add_into(x, dx.data());
  };

  std::vector<Tensor<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return record_op<T>("conv3d", std::move(inputs), out, forward, backward);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  return record_op<T>(
      "relu", {x}, out,
      [x = x, out]() mutable {
        auto in = x.data();
        auto o = out.data();
        // NaN passes through so that a non-finite input surfaces in the loss.
        for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > T(0) || in[i] != in[i] ? in[i] : T(0);
      },
      [x = x, out]() mutable {
        if (!wants_grad(x)) return;
        auto in = x.data();
        auto dy = out.grad();
        auto dx = x.ensure_grad();
        for (std::size_t i = 0; i < in.size(); ++i) {
          if (in[i] > T(0)) dx[i] += dy[i];
        }
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  return record_op<T>(
      "sigmoid", {x}, out,
      [x = x, out]() mutable {
        auto in = x.data();
        auto o = out.data();
        for (std::size_t i = 0; i < in.size(); ++i) {
          // Split by sign so exp never overflows.
          const T v = in[i];
          if (v >= T(0)) {
            o[i] = T(1) / (T(1) + std::exp(-v));
          } else {
            const T e = std::exp(v);
            o[i] = e / (T(1) + e);
          }
        }
      },
      [x = x, out]() mutable {
        if (!wants_grad(x)) return;
        auto y = out.data();
        auto dy = out.grad();
        auto dx = x.ensure_grad();
        for (std::size_t i = 0; i < y.size(); ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
      });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (!(v > T(0))) throw ValueError("log: input must be strictly positive");
  }
  Tensor<T> out(x.shape());
  return record_op<T>(
      "log", {x}, out,
      [x = x, out]() mutable {
        auto in = x.data();
        auto o = out.data();
        for (std::size_t i = 0; i < in.size(); ++i) o[i] = std::log(in[i]);
      },
      [x = x, out]() mutable {
        if (!wants_grad(x)) return;
        auto in = x.data();
        auto dy = out.grad();
        auto dx = x.ensure_grad();
        for (std::size_t i = 0; i < in.size(); ++i) dx[i] += dy[i] / in[i];
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const ChannelBroadcast bc = channel_broadcast(a, b, "add");
  Tensor<T> out(bc.out);
  return record_op<T>(
      "add", {a, b}, out,
      [a = a, b = b, out, bc]() mutable {
        const T* pa = a.ptr();
        const T* pb = b.ptr();
        T* po = out.ptr();
        for (Index n = 0; n < bc.n; ++n) {
          for (Index c = 0; c < bc.c; ++c) {
            const T* ra = pa + ((bc.a_single ? n : n * bc.c + c) * bc.inner);
            const T* rb = pb + ((bc.b_single ? n : n * bc.c + c) * bc.inner);
            T* ro = po + (n * bc.c + c) * bc.inner;
            for (Index i = 0; i < bc.inner; ++i) ro[i] = ra[i] + rb[i];
          }
        }
      },
      [a = a, b = b, out, bc]() mutable {
        const T* dy = out.grad().data();
        std::vector<T> la(wants_grad(a) ? static_cast<std::size_t>(a.numel()) : 0, T(0));
        std::vector<T> lb(wants_grad(b) ? static_cast<std::size_t>(b.numel()) : 0, T(0));
        for (Index n = 0; n < bc.n; ++n) {
          for (Index c = 0; c < bc.c; ++c) {
            const T* r = dy + (n * bc.c + c) * bc.inner;
            if (!la.empty()) {
              T* ra = la.data() + ((bc.a_single ? n : n * bc.c + c) * bc.inner);
              for (Index i = 0; i < bc.inner; ++i) ra[i] += r[i];
            }
            if (!lb.empty()) {
              T* rb = lb.data() + ((bc.b_single ? n : n * bc.c + c) * bc.inner);
              for (Index i = 0; i < bc.inner; ++i) rb[i] += r[i];
            }
          }
        }
        if (!la.empty()) add_into(a, la.data());
        if (!lb.empty()) add_into(b, lb.data());
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const ChannelBroadcast bc = channel_broadcast(a, b, "mul");
  Tensor<T> out(bc.out);
  return record_op<T>(
      "mul", {a, b}, out,
      [a = a, b = b, out, bc]() mutable {
        const T* pa = a.ptr();
        const T* pb = b.ptr();
        T* po = out.ptr();
        for (Index n = 0; n < bc.n; ++n) {
          for (Index c = 0; c < bc.c; ++c) {
            const T* ra = pa + ((bc.a_single ? n : n * bc.c + c) * bc.inner);
            const T* rb = pb + ((bc.b_single ? n : n * bc.c + c) * bc.inner);
            T* ro = po + (n * bc.c + c) * bc.inner;
            for (Index i = 0; i < bc.inner; ++i) ro[i] = ra[i] * rb[i];
          }
        }
      },
      [a = a, b = b, out, bc]() mutable {
        const T* dy = out.grad().data();
        const T* pa = a.ptr();
        const T* pb = b.ptr();
        std::vector<T> la(wants_grad(a) ? static_cast<std::size_t>(a.numel()) : 0, T(0));
        std::vector<T> lb(wants_grad(b) ? static_cast<std::size_t>(b.numel()) : 0, T(0));
        for (Index n = 0; n < bc.n; ++n) {
          for (Index c = 0; c < bc.c; ++c) {
            const Index oa = (bc.a_single ? n : n * bc.c + c) * bc.inner;
            const Index ob = (bc.b_single ? n : n * bc.c + c) * bc.inner;
            const T* r = dy + (n * bc.c + c) * bc.inner;
            if (!la.empty()) {
              for (Index i = 0; i < bc.inner; ++i) la[oa + i] += r[i] * pb[ob + i];
            }
            if (!lb.empty()) {
              for (Index i = 0; i < bc.inner; ++i) lb[ob + i] += r[i] * pa[oa + i];
            }
          }
        }
        if (!la.empty()) add_into(a, la.data());
        if (!lb.empty()) add_into(b, lb.data());
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  return record_op<T>(
      "scale", {x}, out,
      [x = x, out, factor]() mutable {
        auto in = x.data();
        auto o = out.data();
        for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] * factor;
      },
      [x = x, out, factor]() mutable {
        if (!wants_grad(x)) return;
        auto dy = out.grad();
        auto dx = x.ensure_grad();
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * factor;
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Tensor<T> out(Shape{});
  return record_op<T>(
      "sum", {x}, out,
      [x = x, out]() mutable {
        T acc = T(0);
        for (T v : x.data()) acc += v;
        out.data()[0] = acc;
      },
      [x = x, out]() mutable {
        if (!wants_grad(x)) return;
        const T g = out.grad()[0];
        for (T& d : x.ensure_grad()) d += g;
      });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  Tensor<T> out(Shape{});
  const T count = static_cast<T>(x.numel());
  return record_op<T>(
      "mean", {x}, out,
      [x = x, out, count]() mutable {
        T acc = T(0);
        for (T v : x.data()) acc += v;
        out.data()[0] = acc / count;
      },
      [x = x, out, count]() mutable {
        if (!wants_grad(x)) return;
        const T g = out.grad()[0] / count;
        for (T& d : x.ensure_grad()) d += g;
      });
}

template <typename T>
Tensor<T> mean_of(const std::vector<Tensor<T>>& terms) {
  if (terms.empty()) throw ShapeError("mean_of: no terms");
  for (const auto& t : terms) {
    if (!t.defined() || t.shape() != terms.front().shape()) {
      throw ShapeError("mean_of: all terms must share shape " + terms.front().shape().str());
    }
  }
  Tensor<T> out(terms.front().shape());
  const T count = static_cast<T>(terms.size());
  return record_op<T>(
      "mean_of", terms, out,
      [terms = terms, out, count]() mutable {
        auto o = out.data();
        for (std::size_t i = 0; i < o.size(); ++i) {
          T acc = T(0);
          for (const auto& t : terms) acc += t.data()[i];
          o[i] = acc / count;
        }
      },
      [terms = terms, out, count]() mutable {
        auto dy = out.grad();
        for (auto& t : terms) {
          if (!wants_grad(t)) continue;
          auto dt = t.ensure_grad();
          for (std::size_t i = 0; i < dy.size(); ++i) dt[i] += dy[i] / count;
        }
      });
}

template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& x) {
  require_rank(x, 5, "maxpool3d", "input");
  for (std::size_t a = 2; a < 5; ++a) {
    if (x.dim(a) % 2 != 0) {
      throw ShapeError("maxpool3d: spatial axis " + dim_name(a) + "=" + std::to_string(x.dim(a)) +
                       " is odd; window 2 needs even extents");
    }
  }
  const Index nc = x.dim(0) * x.dim(1);
  const Index d = x.dim(2), h = x.dim(3), w = x.dim(4);
  const Index od = d / 2, oh = h / 2, ow = w / 2;
  Tensor<T> out(Shape{x.dim(0), x.dim(1), od, oh, ow});
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(out.numel()));
  return record_op<T>(
      "maxpool3d", {x}, out,
      [x = x, out, argmax, nc, d, h, w, od, oh, ow]() mutable {
        const T* in = x.ptr();
        T* o = out.ptr();
        Index oi = 0;
        for (Index s = 0; s < nc; ++s) {
          const Index base = s * d * h * w;
          for (Index z = 0; z < od; ++z) {
            for (Index y = 0; y < oh; ++y) {
              for (Index xx = 0; xx < ow; ++xx, ++oi) {
                Index best = base + ((2 * z) * h + 2 * y) * w + 2 * xx;
                T best_v = in[best];
                // Window scanned in increasing linear index; strict > keeps the lowest on ties.
                for (Index dz = 0; dz < 2; ++dz) {
                  for (Index dy = 0; dy < 2; ++dy) {
                    for (Index dx = 0; dx < 2; ++dx) {
                      const Index idx = base + ((2 * z + dz) * h + 2 * y + dy) * w + 2 * xx + dx;
                      if (in[idx] > best_v) {
                        best_v = in[idx];
                        best = idx;
                      }
                    }
                  }
                }
                o[oi] = best_v;
                (*argmax)[oi] = best;
              }
            }
          }
        }
      },
      [x = x, out, argmax]() mutable {
        if (!wants_grad(x)) return;
        auto dy = out.grad();
        auto dx = x.ensure_grad();
        for (std::size_t i = 0; i < dy.size(); ++i) dx[(*argmax)[i]] += dy[i];
      });
}

template <typename T>
Tensor<T> avg_pool3d(const Tensor<T>& x, int factor) {
  require_rank(x, 5, "avg_pool3d", "input");
  if (factor < 1) throw ShapeError("avg_pool3d: factor must be positive");
  for (std::size_t a = 2; a < 5; ++a) {
    if (x.dim(a) % factor != 0) {
      throw ShapeError("avg_pool3d: spatial axis " + dim_name(a) + "=" + std::to_string(x.dim(a)) +
                       " is not divisible by " + std::to_string(factor));
    }
  }
  const Index f = factor;
  const Index nc = x.dim(0) * x.dim(1);
  const Index d = x.dim(2), h = x.dim(3), w = x.dim(4);
  const Index od = d / f, oh = h / f, ow = w / f;
  const T inv = T(1) / static_cast<T>(f * f * f);
  Tensor<T> out(Shape{x.dim(0), x.dim(1), od, oh, ow});
  return record_op<T>(
      "avg_pool3d", {x}, out,
      [x = x, out, nc, d, h, w, od, oh, ow, f, inv]() mutable {
        const T* in = x.ptr();
        T* o = out.ptr();
        std::fill(o, o + out.numel(), T(0));
        for (Index s = 0; s < nc; ++s) {
          for (Index z = 0; z < d; ++z) {
            for (Index y = 0; y < h; ++y) {
              const T* row = in + ((s * d + z) * h + y) * w;
              T* orow = o + ((s * od + z / f) * oh + y / f) * ow;
              for (Index xx = 0; xx < w; ++xx) orow[xx / f] += row[xx];
            }
          }
        }
        for (Index i = 0; i < out.numel(); ++i) o[i] *= inv;
      },
      [x = x, out, nc, d, h, w, od, oh, ow, f, inv]() mutable {
        if (!wants_grad(x)) return;
        const T* dy = out.grad().data();
        T* dx = x.ensure_grad().data();
        for (Index s = 0; s < nc; ++s) {
          for (Index z = 0; z < d; ++z) {
            for (Index y = 0; y < h; ++y) {
              T* row = dx + ((s * d + z) * h + y) * w;
              const T* grow = dy + ((s * od + z / f) * oh + y / f) * ow;
              for (Index xx = 0; xx < w; ++xx) row[xx] += grow[xx / f] * inv;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> upsample_trilinear(const Tensor<T>& x, int factor) {
  require_rank(x, 5, "upsample_trilinear", "input");
  if (factor < 1) throw ShapeError("upsample_trilinear: factor must be positive");
  const Index nc = x.dim(0) * x.dim(1);
  const Index d = x.dim(2), h = x.dim(3), w = x.dim(4);
  const Index od = d * factor, oh = h * factor, ow = w * factor;
  auto taps = std::make_shared<std::array<AxisTaps, 3>>(
      std::array<AxisTaps, 3>{axis_taps(d, factor), axis_taps(h, factor), axis_taps(w, factor)});
  Tensor<T> out(Shape{x.dim(0), x.dim(1), od, oh, ow});
  return record_op<T>(
      "upsample_trilinear", {x}, out,
      [x = x, out, taps, nc, d, h, w, od, oh, ow]() mutable {
        const auto& [tz, ty, tx] = *taps;
        const T* in = x.ptr();
        T* o = out.ptr();
        for (Index s = 0; s < nc; ++s) {
          const T* src = in + s * d * h * w;
          for (Index z = 0; z < od; ++z) {
            const T wz1 = static_cast<T>(tz.w1[z]), wz0 = T(1) - wz1;
            const T* p0 = src + tz.i0[z] * h * w;
            const T* p1 = src + tz.i1[z] * h * w;
            for (Index y = 0; y < oh; ++y) {
              const T wy1 = static_cast<T>(ty.w1[y]), wy0 = T(1) - wy1;
              const T* r00 = p0 + ty.i0[y] * w;
              const T* r01 = p0 + ty.i1[y] * w;
              const T* r10 = p1 + ty.i0[y] * w;
              const T* r11 = p1 + ty.i1[y] * w;
              for (Index xx = 0; xx < ow; ++xx) {
                const T wx1 = static_cast<T>(tx.w1[xx]), wx0 = T(1) - wx1;
                const Index a = tx.i0[xx], b = tx.i1[xx];
                const T v0 = wy0 * (wx0 * r00[a] + wx1 * r00[b]) + wy1 * (wx0 * r01[a] + wx1 * r01[b]);
                const T v1 = wy0 * (wx0 * r10[a] + wx1 * r10[b]) + wy1 * (wx0 * r11[a] + wx1 * r11[b]);
                *o++ = wz0 * v0 + wz1 * v1;
              }
            }
          }
        }
      },
      [x = x, out, taps, nc, d, h, w, od, oh, ow]() mutable {
        if (!wants_grad(x)) return;
        const auto& [tz, ty, tx] = *taps;
        const T* dy = out.grad().data();
        std::vector<T> local(static_cast<std::size_t>(x.numel()), T(0));
        for (Index s = 0; s < nc; ++s) {
          T* dst = local.data() + s * d * h * w;
          for (Index z = 0; z < od; ++z) {
            const T wz1 = static_cast<T>(tz.w1[z]), wz0 = T(1) - wz1;
            T* p0 = dst + tz.i0[z] * h * w;
            T* p1 = dst + tz.i1[z] * h * w;
            for (Index y = 0; y < oh; ++y) {
              const T wy1 = static_cast<T>(ty.w1[y]), wy0 = T(1) - wy1;
              T* r00 = p0 + ty.i0[y] * w;
              T* r01 = p0 + ty.i1[y] * w;
              T* r10 = p1 + ty.i0[y] * w;
              T* r11 = p1 + ty.i1[y] * w;
              for (Index xx = 0; xx < ow; ++xx) {
                const T g = *dy++;
                const T wx1 = static_cast<T>(tx.w1[xx]), wx0 = T(1) - wx1;
                const Index a = tx.i0[xx], b = tx.i1[xx];
                const T g0 = wz0 * g, g1 = wz1 * g;
                r00[a] += g0 * wy0 * wx0;
                r00[b] += g0 * wy0 * wx1;
                r01[a] += g0 * wy1 * wx0;
                r01[b] += g0 * wy1 * wx1;
                r10[a] += g1 * wy0 * wx0;
                r10[b] += g1 * wy0 * wx1;
                r11[a] += g1 * wy1 * wx0;
                r11[b] += g1 * wy1 * wx1;
              }
            }
          }
        }
        add_into(x, local.data());
      });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 5, "concat_channels", "first operand");
  require_rank(b, 5, "concat_channels", "second operand");
  for (std::size_t i : {0u, 2u, 3u, 4u}) {
    if (a.dim(i) != b.dim(i)) {
      throw ShapeError("concat_channels: axis " + dim_name(i) + " differs (" + std::to_string(a.dim(i)) +
                       " vs " + std::to_string(b.dim(i)) + ")");
    }
  }
  const Index n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const Index sp = a.dim(2) * a.dim(3) * a.dim(4);
  Tensor<T> out(Shape{n, ca + cb, a.dim(2), a.dim(3), a.dim(4)});
  return record_op<T>(
      "concat_channels", {a, b}, out,
      [a = a, b = b, out, n, ca, cb, sp]() mutable {
        for (Index i = 0; i < n; ++i) {
          T* o = out.ptr() + i * (ca + cb) * sp;
          std::copy_n(a.ptr() + i * ca * sp, ca * sp, o);
          std::copy_n(b.ptr() + i * cb * sp, cb * sp, o + ca * sp);
        }
      },
      [a = a, b = b, out, n, ca, cb, sp]() mutable {
        const T* dy = out.grad().data();
        for (Index i = 0; i < n; ++i) {
          const T* g = dy + i * (ca + cb) * sp;
          if (wants_grad(a)) {
            T* da = a.ensure_grad().data() + i * ca * sp;
            for (Index j = 0; j < ca * sp; ++j) da[j] += g[j];
          }
          if (wants_grad(b)) {
            T* db = b.ensure_grad().data() + i * cb * sp;
            for (Index j = 0; j < cb * sp; ++j) db[j] += g[ca * sp + j];
          }
        }
      });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank(x, 5, "global_avg_pool", "input");
  const Index nc = x.dim(0) * x.dim(1);
  const Index sp = x.dim(2) * x.dim(3) * x.dim(4);
  Tensor<T> out(Shape{x.dim(0), x.dim(1)});
  return record_op<T>(
      "global_avg_pool", {x}, out,
      [x = x, out, nc, sp]() mutable {
        for (Index s = 0; s < nc; ++s) {
          T acc = T(0);
          const T* p = x.ptr() + s * sp;
          for (Index i = 0; i < sp; ++i) acc += p[i];
          out.ptr()[s] = acc / static_cast<T>(sp);
        }
      },
      [x = x, out, nc, sp]() mutable {
        if (!wants_grad(x)) return;
        T* dx = x.ensure_grad().data();
        for (Index s = 0; s < nc; ++s) {
          const T g = out.grad()[s] / static_cast<T>(sp);
          for (Index i = 0; i < sp; ++i) dx[s * sp + i] += g;
        }
      });
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps) {
  if (!x.defined() || x.rank() < 3) throw ShapeError("instance_norm: expected N x C x spatial input");
  const Index nc = x.dim(0) * x.dim(1);
  const Index sp = x.numel() / nc;
  Tensor<T> out(x.shape());
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(nc));
  return record_op<T>(
      "instance_norm", {x}, out,
      [x = x, out, rstd, nc, sp, eps]() mutable {
        for (Index s = 0; s < nc; ++s) {
          const T* p = x.ptr() + s * sp;
          T* o = out.ptr() + s * sp;
          double m = 0.0;
          for (Index i = 0; i < sp; ++i) m += p[i];
          m /= static_cast<double>(sp);
          double var = 0.0;
          for (Index i = 0; i < sp; ++i) {
            const double c = p[i] - m;
            var += c * c;
          }
          var /= static_cast<double>(sp);
          const T r = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
          const T mt = static_cast<T>(m);
          (*rstd)[s] = r;
          for (Index i = 0; i < sp; ++i) o[i] = (p[i] - mt) * r;
        }
      },
      [x = x, out, rstd, nc, sp]() mutable {
        if (!wants_grad(x)) return;
        T* dx = x.ensure_grad().data();
        for (Index s = 0; s < nc; ++s) {
          const T* y = out.ptr() + s * sp;
          const T* dy = out.grad().data() + s * sp;
          double mdy = 0.0, mdyy = 0.0;
          for (Index i = 0; i < sp; ++i) {
            mdy += dy[i];
            mdyy += static_cast<double>(dy[i]) * y[i];
          }
          const T a = static_cast<T>(mdy / static_cast<double>(sp));
          const T b = static_cast<T>(mdyy / static_cast<double>(sp));
          const T r = (*rstd)[s];
          T* g = dx + s * sp;
          for (Index i = 0; i < sp; ++i) g[i] += r * (dy[i] - a - y[i] * b);
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  const Index n = x.dim(0), f = x.dim(1), k = weight.dim(1);
  if (weight.dim(0) != f) {
    throw ShapeError("linear: input feature axis has extent " + std::to_string(f) + " but weight expects " +
                     std::to_string(weight.dim(0)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != k)) {
    throw ShapeError("linear: bias shape " + bias.shape().str() + " does not match output width " +
                     std::to_string(k));
  }
  Tensor<T> out(Shape{n, k});
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return record_op<T>(
      "linear", std::move(inputs), out,
      [x = x, weight = weight, bias = bias, out, n, f, k]() mutable {
        for (Index i = 0; i < n; ++i) {
          for (Index j = 0; j < k; ++j) {
            T acc = bias.defined() ? bias.data()[j] : T(0);
            for (Index q = 0; q < f; ++q) acc += x.ptr()[i * f + q] * weight.ptr()[q * k + j];
            out.ptr()[i * k + j] = acc;
          }
        }
      },
      [x = x, weight = weight, bias = bias, out, n, f, k]() mutable {
        const T* dy = out.grad().data();
        if (wants_grad(x)) {
          std::vector<T> dx(static_cast<std::size_t>(n * f), T(0));
          for (Index i = 0; i < n; ++i)
            for (Index q = 0; q < f; ++q)
              for (Index j = 0; j < k; ++j) dx[i * f + q] += dy[i * k + j] * weight.ptr()[q * k + j];
          add_into(x, dx.data());
        }
        if (wants_grad(weight)) {
          std::vector<T> dw(static_cast<std::size_t>(f * k), T(0));
          for (Index i = 0; i < n; ++i)
            for (Index q = 0; q < f; ++q)
              for (Index j = 0; j < k; ++j) dw[q * k + j] += x.ptr()[i * f + q] * dy[i * k + j];
          add_into(weight, dw.data());
        }
        if (wants_grad(bias)) {
          std::vector<T> db(static_cast<std::size_t>(k), T(0));
          for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < k; ++j) db[j] += dy[i * k + j];
          add_into(bias, db.data());
        }
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  require_rank(x, 2, "softmax", "input");
  const Index n = x.dim(0), k = x.dim(1);
  Tensor<T> out(x.shape());
  return record_op<T>(
      "softmax", {x}, out,
      [x = x, out, n, k]() mutable {
        for (Index i = 0; i < n; ++i) {
          const T* r = x.ptr() + i * k;
          T* o = out.ptr() + i * k;
          const T m = *std::max_element(r, r + k);
          T z = T(0);
          for (Index j = 0; j < k; ++j) {
            o[j] = std::exp(r[j] - m);
            z += o[j];
          }
          for (Index j = 0; j < k; ++j) o[j] /= z;
        }
      },
      [x = x, out, n, k]() mutable {
        if (!wants_grad(x)) return;
        T* dx = x.ensure_grad().data();
        for (Index i = 0; i < n; ++i) {
          const T* y = out.ptr() + i * k;
          const T* dy = out.grad().data() + i * k;
          T dot = T(0);
          for (Index j = 0; j < k; ++j) dot += dy[j] * y[j];
          for (Index j = 0; j < k; ++j) dx[i * k + j] += y[j] * (dy[j] - dot);
        }
      });
}

#define UPET_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);     \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                  \
  template Tensor<T> log(const Tensor<T>&);                                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> mean_of(const std::vector<Tensor<T>>&);                                     \
  template Tensor<T> maxpool3d(const Tensor<T>&);                                                \
  template Tensor<T> avg_pool3d(const Tensor<T>&, int);                                          \
  template Tensor<T> upsample_trilinear(const Tensor<T>&, int);                                  \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                          \
  template Tensor<T> instance_norm(const Tensor<T>&, T);                                         \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> softmax(const Tensor<T>&);

UPET_INSTANTIATE_OPS(float)
UPET_INSTANTIATE_OPS(double)

}  // namespace upet
