#include "refseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <type_traits>

namespace refseg {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T, typename F>
Tensor<T> finish(Tape<T>* tape, Shape shape, std::type_identity_t<Buffer<T>> value, F&& backward) {
  if (!tape) return Tensor<T>(std::move(shape), std::move(value));
  return tape->record(std::move(shape), std::move(value), std::forward<F>(backward));
}

void require_rank(const char* op, const Shape& shape, int rank, const char* what) {
  if (static_cast<int>(shape.size()) != rank) {
    throw ShapeError(op, -1,
                     std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                         to_string(shape));
  }
}

void require_same(const char* op, const Shape& a, const Shape& b) {
  if (a.size() != b.size()) {
    throw ShapeError(op, -1, "rank differs: " + to_string(a) + " vs " + to_string(b));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) {
      throw ShapeError(op, static_cast<int>(i), to_string(a) + " vs " + to_string(b));
    }
  }
}

template <typename T>
void im2col(const T* x, Index channels, Index height, Index width, int k, int pad, int stride,
            Index out_h, Index out_w, T* col) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    const T* xc = x + c * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + ((c * k + ky) * k + kx) * plane;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * stride + ky - pad;
          T* row = dst + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(row, row + out_w, T(0));
            continue;
          }
          const T* src = xc + iy * width;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride + kx - pad;
            row[ox] = (ix >= 0 && ix < width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, Index channels, Index height, Index width, int k, int pad, int stride,
            Index out_h, Index out_w, T* x) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    T* xc = x + c * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + ((c * k + ky) * k + kx) * plane;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= height) continue;
          T* dst = xc + iy * width;
          const T* row = src + oy * out_w;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < width) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

struct Lerp {
  Index i0, i1;
  double w0, w1;
};

std::vector<Lerp> lerp_table(Index in, Index out) {
  std::vector<Lerp> table(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (Index d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    Index i0 = std::min(static_cast<Index>(src), in - 1);
    Index i1 = i0 < in - 1 ? i0 + 1 : i0;
    double w1 = src - static_cast<double>(i0);
    table[static_cast<std::size_t>(d)] = {i0, i1, 1.0 - w1, w1};
  }
  return table;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("matmul", a.shape(), 2, "left operand");
  require_rank("matmul", b.shape(), 2, "right operand");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul", 0,
                     "inner dimensions differ: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  Buffer<T> out(m * n);
  MatMap<T>(out.data(), m, n).noalias() =
      ConstMatMap<T>(a.data(), m, k) * ConstMatMap<T>(b.data(), k, n);
  Tape<T>* tape = common_tape<T>({&a, &b});
  return finish(tape, {m, n}, std::move(out), [tape, a, b, m, k, n](const Buffer<T>& g) {
    ConstMatMap<T> G(g.data(), m, n);
    if (auto* ga = tape->grad_slot(a)) {
      MatMap<T>(ga->data(), m, k).noalias() += G * ConstMatMap<T>(b.data(), k, n).transpose();
    }
    if (auto* gb = tape->grad_slot(b)) {
      MatMap<T>(gb->data(), k, n).noalias() += ConstMatMap<T>(a.data(), m, k).transpose() * G;
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank("transpose", a.shape(), 2, "operand");
  const Index m = a.dim(0), n = a.dim(1);
  Buffer<T> out(m * n);
  MatMap<T>(out.data(), n, m) = ConstMatMap<T>(a.data(), m, n).transpose();
  Tape<T>* tape = a.tape();
  return finish(tape, {n, m}, std::move(out), [tape, a, m, n](const Buffer<T>& g) {
    if (auto* ga = tape->grad_slot(a)) {
      MatMap<T>(ga->data(), m, n) += ConstMatMap<T>(g.data(), n, m).transpose();
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("add", a.shape(), b.shape());
  Tape<T>* tape = common_tape<T>({&a, &b});
  return finish(tape, a.shape(), a.values() + b.values(), [tape, a, b](const Buffer<T>& g) {
    if (auto* ga = tape->grad_slot(a)) *ga += g;
    if (auto* gb = tape->grad_slot(b)) *gb += g;
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("sub", a.shape(), b.shape());
  Tape<T>* tape = common_tape<T>({&a, &b});
  return finish(tape, a.shape(), a.values() - b.values(), [tape, a, b](const Buffer<T>& g) {
    if (auto* ga = tape->grad_slot(a)) *ga += g;
    if (auto* gb = tape->grad_slot(b)) *gb -= g;
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("mul", a.shape(), b.shape());
  Tape<T>* tape = common_tape<T>({&a, &b});
  return finish(tape, a.shape(), a.values() * b.values(), [tape, a, b](const Buffer<T>& g) {
    if (auto* ga = tape->grad_slot(a)) *ga += g * b.values();
    if (auto* gb = tape->grad_slot(b)) *gb += g * a.values();
  });
}

template <typename T>
Tensor<T> affine(const Tensor<T>& x, T alpha, T beta) {
  Tape<T>* tape = x.tape();
  return finish(tape, x.shape(), x.values() * alpha + beta, [tape, x, alpha](const Buffer<T>& g) {
    if (auto* gx = tape->grad_slot(x)) *gx += alpha * g;
  });
}

template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& factor) {
  if (factor.size() != 1) {
    throw ShapeError("scale_by", -1, "factor must hold one element, got " + to_string(factor.shape()));
  }
  const T s = factor[0];
  Tape<T>* tape = common_tape<T>({&x, &factor});
  return finish(tape, x.shape(), x.values() * s, [tape, x, factor, s](const Buffer<T>& g) {
    if (auto* gx = tape->grad_slot(x)) *gx += s * g;
    if (auto* gs = tape->grad_slot(factor)) (*gs)(0) += (g * x.values()).sum();
  });
}

template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& factors) {
  require_rank("scale_rows", x.shape(), 2, "matrix");
  require_rank("scale_rows", factors.shape(), 1, "factors");
  const Index rows = x.dim(0), cols = x.dim(1);
  if (factors.dim(0) != rows) {
    throw ShapeError("scale_rows", 0, to_string(x.shape()) + " vs " + to_string(factors.shape()));
  }
  Buffer<T> out(rows * cols);
  for (Index r = 0; r < rows; ++r) {
    out.segment(r * cols, cols) = x.values().segment(r * cols, cols) * factors[r];
  }
  Tape<T>* tape = common_tape<T>({&x, &factors});
  return finish(tape, x.shape(), std::move(out), [tape, x, factors, rows, cols](const Buffer<T>& g) {
    if (auto* gx = tape->grad_slot(x)) {
      for (Index r = 0; r < rows; ++r) {
        gx->segment(r * cols, cols) += g.segment(r * cols, cols) * factors[r];
      }
    }
    if (auto* gf = tape->grad_slot(factors)) {
      for (Index r = 0; r < rows; ++r) {
        (*gf)(r) += (g.segment(r * cols, cols) * x.values().segment(r * cols, cols)).sum();
      }
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Buffer<T> y = T(1) / (T(1) + (-x.values()).exp());
  Tape<T>* tape = x.tape();
  if (!tape) return Tensor<T>(x.shape(), std::move(y));
  auto out = std::make_shared<Buffer<T>>(y);
  return tape->record(x.shape(), std::move(y), [tape, x, out](const Buffer<T>& g) {
    if (auto* gx = tape->grad_slot(x)) *gx += g * *out * (T(1) - *out);
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  Buffer<T> y = x.values().tanh();
  Tape<T>* tape = x.tape();
  if (!tape) return Tensor<T>(x.shape(), std::move(y));
  auto out = std::make_shared<Buffer<T>>(y);
  return tape->record(x.shape(), std::move(y), [tape, x, out](const Buffer<T>& g) {
    if (auto* gx = tape->grad_slot(x)) *gx += g * (T(1) - out->square());
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tape<T>* tape = x.tape();
  return finish(tape, x.shape(), x.values().max(T(0)), [tape, x](const Buffer<T>& g) {
    if (auto* gx = tape->grad_slot(x)) *gx += (x.values() > T(0)).select(g, T(0));
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& v) {
  require_rank("softmax", v.shape(), 1, "input");
  Buffer<T> e = (v.values() - v.values().maxCoeff()).exp();
  Buffer<T> y = e / e.sum();
  Tape<T>* tape = v.tape();
  if (!tape) return Tensor<T>(v.shape(), std::move(y));
  auto out = std::make_shared<Buffer<T>>(y);
  return tape->record(v.shape(), std::move(y), [tape, v, out](const Buffer<T>& g) {
    if (auto* gv = tape->grad_slot(v)) *gv += *out * (g - (g * *out).sum());
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Tape<T>* tape = x.tape();
  return finish(tape, {1}, Buffer<T>::Constant(1, x.values().sum()), [tape, x](const Buffer<T>& g) {
    if (auto* gx = tape->grad_slot(x)) *gx += g(0);
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const T n = static_cast<T>(x.size());
  Tape<T>* tape = x.tape();
  return finish(tape, {1}, Buffer<T>::Constant(1, x.values().sum() / n),
                [tape, x, n](const Buffer<T>& g) {
                  if (auto* gx = tape->grad_slot(x)) *gx += g(0) / n;
                });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (element_count(shape) != x.size()) {
    throw ShapeError("reshape", -1, to_string(x.shape()) + " -> " + to_string(shape));
  }
  if (!x.tracked()) return x.reshaped(std::move(shape));
  Tape<T>* tape = x.tape();
  return tape->record(std::move(shape), x.values(), [tape, x](const Buffer<T>& g) {
    if (auto* gx = tape->grad_slot(x)) *gx += g;
  });
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat", -1, "no operands");
  const Shape& first = parts[0].shape();
  const int rank = static_cast<int>(first.size());
  if (axis < 0 || axis >= rank) {
    throw ShapeError("concat", axis, "axis out of range for rank " + std::to_string(rank));
  }
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat", -1, "operands differ in rank");
    for (int i = 0; i < rank; ++i) {
      if (i != axis && p.shape()[i] != first[i]) {
        throw ShapeError("concat", i, to_string(p.shape()) + " vs " + to_string(first));
      }
    }
    total += p.shape()[axis];
  }
  Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= first[i];
  for (int i = axis + 1; i < rank; ++i) inner *= first[i];

  Shape shape = first;
  shape[axis] = total;
  Buffer<T> out(element_count(shape));
  Tape<T>* tape = nullptr;
  Index offset = 0;
  for (const auto& p : parts) {
    const Index block = p.shape()[axis] * inner;
    for (Index o = 0; o < outer; ++o) {
      out.segment(o * total * inner + offset, block) = p.values().segment(o * block, block);
    }
    offset += block;
    if (p.tracked()) {
      if (tape && tape != p.tape()) throw TapeError("operands are tracked on different tapes");
      tape = p.tape();
    }
  }
  std::vector<Tensor<T>> kept(parts.begin(), parts.end());
  return finish(tape, std::move(shape), std::move(out),
                [tape, kept = std::move(kept), outer, inner, total](const Buffer<T>& g) {
                  Index offset = 0;
                  for (const auto& p : kept) {
                    const Index block = p.size() / outer;
                    if (auto* gp = tape->grad_slot(p)) {
                      for (Index o = 0; o < outer; ++o) {
                        gp->segment(o * block, block) +=
                            g.segment(o * total * inner + offset, block);
                      }
                    }
                    offset += block;
                  }
                });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, Index start, Index length) {
  const int rank = x.rank();
  if (axis < 0 || axis >= rank) {
    throw ShapeError("slice", axis, "axis out of range for " + to_string(x.shape()));
  }
  const Index extent = x.shape()[axis];
  if (start < 0 || length <= 0 || start + length > extent) {
    throw ShapeError("slice", axis,
                     "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds " + to_string(x.shape()));
  }
  Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (int i = axis + 1; i < rank; ++i) inner *= x.shape()[i];
  Shape shape = x.shape();
  shape[axis] = length;
  const Index block = length * inner;
  Buffer<T> out(outer * block);
  for (Index o = 0; o < outer; ++o) {
    out.segment(o * block, block) = x.values().segment(o * extent * inner + start * inner, block);
  }
  Tape<T>* tape = x.tape();
  return finish(tape, std::move(shape), std::move(out),
                [tape, x, outer, inner, extent, start, block](const Buffer<T>& g) {
                  if (auto* gx = tape->grad_slot(x)) {
                    for (Index o = 0; o < outer; ++o) {
                      gx->segment(o * extent * inner + start * inner, block) +=
                          g.segment(o * block, block);
                    }
                  }
                });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> ids) {
  require_rank("gather_rows", table.shape(), 2, "table");
  if (ids.empty()) throw ShapeError("gather_rows", 0, "no row ids");
  const Index rows = table.dim(0), cols = table.dim(1);
  const Index n = static_cast<Index>(ids.size());
  Buffer<T> out(n * cols);
  for (Index i = 0; i < n; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= rows) {
      throw std::out_of_range("gather_rows: id " + std::to_string(id) + " outside table of " +
                              std::to_string(rows) + " rows");
    }
    out.segment(i * cols, cols) = table.values().segment(id * cols, cols);
  }
  Tape<T>* tape = table.tape();
  std::vector<int> kept(ids.begin(), ids.end());
  return finish(tape, {n, cols}, std::move(out),
                [tape, table, kept = std::move(kept), cols](const Buffer<T>& g) {
                  if (auto* gt = tape->grad_slot(table)) {
                    for (std::size_t i = 0; i < kept.size(); ++i) {
                      gt->segment(kept[i] * cols, cols) +=
                          g.segment(static_cast<Index>(i) * cols, cols);
                    }
                  }
                });
}

template <typename T>
Tensor<T> tile_spatial(const Tensor<T>& v, Index height, Index width) {
  require_rank("tile_spatial", v.shape(), 1, "vector");
  const Index c = v.dim(0), plane = height * width;
  if (height <= 0 || width <= 0) throw ShapeError("tile_spatial", 1, "grid must be non-empty");
  Buffer<T> out(c * plane);
  for (Index i = 0; i < c; ++i) out.segment(i * plane, plane).setConstant(v[i]);
  Tape<T>* tape = v.tape();
  return finish(tape, {c, height, width}, std::move(out), [tape, v, c, plane](const Buffer<T>& g) {
    if (auto* gv = tape->grad_slot(v)) {
      for (Index i = 0; i < c; ++i) (*gv)(i) += g.segment(i * plane, plane).sum();
    }
  });
}

template <typename T>
Tensor<T> mul_channels(const Tensor<T>& gate, const Tensor<T>& x) {
  require_rank("mul_channels", x.shape(), 3, "feature map");
  require_rank("mul_channels", gate.shape(), 3, "gate");
  if (gate.dim(0) != 1) throw ShapeError("mul_channels", 0, "gate must have one channel");
  if (gate.dim(1) != x.dim(1)) throw ShapeError("mul_channels", 1, to_string(gate.shape()) + " vs " + to_string(x.shape()));
  if (gate.dim(2) != x.dim(2)) throw ShapeError("mul_channels", 2, to_string(gate.shape()) + " vs " + to_string(x.shape()));
  const Index c = x.dim(0), plane = x.dim(1) * x.dim(2);
  Buffer<T> out(c * plane);
  for (Index i = 0; i < c; ++i) {
    out.segment(i * plane, plane) = x.values().segment(i * plane, plane) * gate.values();
  }
  Tape<T>* tape = common_tape<T>({&gate, &x});
  return finish(tape, x.shape(), std::move(out), [tape, gate, x, c, plane](const Buffer<T>& g) {
    if (auto* gg = tape->grad_slot(gate)) {
      for (Index i = 0; i < c; ++i) {
        *gg += g.segment(i * plane, plane) * x.values().segment(i * plane, plane);
      }
    }
    if (auto* gx = tape->grad_slot(x)) {
      for (Index i = 0; i < c; ++i) {
        gx->segment(i * plane, plane) += g.segment(i * plane, plane) * gate.values();
      }
    }
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int padding, int stride) {
  require_rank("conv2d", input.shape(), 3, "input");
  require_rank("conv2d", kernel.shape(), 4, "kernel");
  require_rank("conv2d", bias.shape(), 1, "bias");
  const Index cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const Index cout = kernel.dim(0);
  if (kernel.dim(1) != cin) {
    throw ShapeError("conv2d", 1,
                     "kernel expects " + std::to_string(kernel.dim(1)) + " input channels, got " +
                         std::to_string(cin));
  }
  if (kernel.dim(2) != kernel.dim(3)) throw ShapeError("conv2d", 3, "kernel must be square");
  if (bias.dim(0) != cout) {
    throw ShapeError("conv2d", 0,
                     "bias has " + std::to_string(bias.dim(0)) + " entries for " +
                         std::to_string(cout) + " output channels");
  }
  const int k = static_cast<int>(kernel.dim(2));
  if (padding < 0 || stride < 1) throw std::invalid_argument("conv2d: invalid padding or stride");
  const Index out_h = (h + 2 * padding - k) / stride + 1;
  const Index out_w = (w + 2 * padding - k) / stride + 1;
  if (h + 2 * padding < k || out_h < 1) throw ShapeError("conv2d", 1, "kernel taller than padded input");
  if (w + 2 * padding < k || out_w < 1) throw ShapeError("conv2d", 2, "kernel wider than padded input");

  const Index patch = cin * k * k, plane = out_h * out_w;
  const bool direct = (k == 1 && padding == 0 && stride == 1);
  std::shared_ptr<const Buffer<T>> col;
  if (!direct) {
    auto c = std::make_shared<Buffer<T>>(patch * plane);
    im2col(input.data(), cin, h, w, k, padding, stride, out_h, out_w, c->data());
    col = std::move(c);
  }
  const T* col_data = direct ? input.data() : col->data();

  Buffer<T> out(cout * plane);
  MatMap<T> O(out.data(), cout, plane);
  O.noalias() = ConstMatMap<T>(kernel.data(), cout, patch) * ConstMatMap<T>(col_data, patch, plane);
  O.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.data(), cout);

  Tape<T>* tape = common_tape<T>({&input, &kernel, &bias});
  return finish(tape, {cout, out_h, out_w}, std::move(out),
                [=](const Buffer<T>& g) {
                  ConstMatMap<T> G(g.data(), cout, plane);
                  const T* cd = direct ? input.data() : col->data();
                  if (auto* gk = tape->grad_slot(kernel)) {
                    MatMap<T>(gk->data(), cout, patch).noalias() +=
                        G * ConstMatMap<T>(cd, patch, plane).transpose();
                  }
                  if (auto* gb = tape->grad_slot(bias)) {
                    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb->data(), cout) +=
                        G.rowwise().sum();
                  }
                  if (auto* gi = tape->grad_slot(input)) {
                    if (direct) {
                      MatMap<T>(gi->data(), patch, plane).noalias() +=
                          ConstMatMap<T>(kernel.data(), cout, patch).transpose() * G;
                    } else {
                      RowMat<T> dcol = ConstMatMap<T>(kernel.data(), cout, patch).transpose() * G;
                      col2im(dcol.data(), cin, h, w, k, padding, stride, out_h, out_w, gi->data());
                    }
                  }
                });
}

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& input, Index out_h, Index out_w) {
  require_rank("upsample_bilinear", input.shape(), 3, "input");
  if (out_h < 1) throw ShapeError("upsample_bilinear", 1, "output height must be >= 1");
  if (out_w < 1) throw ShapeError("upsample_bilinear", 2, "output width must be >= 1");
  const Index c = input.dim(0), h = input.dim(1), w = input.dim(2);
  auto ys = lerp_table(h, out_h);
  auto xs = lerp_table(w, out_w);
  Buffer<T> out(c * out_h * out_w);
  const T* x = input.data();
  for (Index ch = 0; ch < c; ++ch) {
    const T* xc = x + ch * h * w;
    T* oc = out.data() + ch * out_h * out_w;
    for (Index oy = 0; oy < out_h; ++oy) {
      const Lerp& ly = ys[static_cast<std::size_t>(oy)];
      for (Index ox = 0; ox < out_w; ++ox) {
        const Lerp& lx = xs[static_cast<std::size_t>(ox)];
        const double v = ly.w0 * (lx.w0 * xc[ly.i0 * w + lx.i0] + lx.w1 * xc[ly.i0 * w + lx.i1]) +
                         ly.w1 * (lx.w0 * xc[ly.i1 * w + lx.i0] + lx.w1 * xc[ly.i1 * w + lx.i1]);
        oc[oy * out_w + ox] = static_cast<T>(v);
      }
    }
  }
  Tape<T>* tape = input.tape();
  return finish(tape, {c, out_h, out_w}, std::move(out),
                [tape, input, ys = std::move(ys), xs = std::move(xs), c, h, w, out_h,
                 out_w](const Buffer<T>& g) {
                  auto* gi = tape->grad_slot(input);
                  if (!gi) return;
                  for (Index ch = 0; ch < c; ++ch) {
                    T* dc = gi->data() + ch * h * w;
                    const T* gc = g.data() + ch * out_h * out_w;
                    for (Index oy = 0; oy < out_h; ++oy) {
                      const Lerp& ly = ys[static_cast<std::size_t>(oy)];
                      for (Index ox = 0; ox < out_w; ++ox) {
                        const Lerp& lx = xs[static_cast<std::size_t>(ox)];
                        const double gv = gc[oy * out_w + ox];
                        dc[ly.i0 * w + lx.i0] += static_cast<T>(gv * ly.w0 * lx.w0);
                        dc[ly.i0 * w + lx.i1] += static_cast<T>(gv * ly.w0 * lx.w1);
                        dc[ly.i1 * w + lx.i0] += static_cast<T>(gv * ly.w1 * lx.w0);
                        dc[ly.i1 * w + lx.i1] += static_cast<T>(gv * ly.w1 * lx.w1);
                      }
                    }
                  }
                });
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& prob, const Tensor<T>& target) {
  require_same("bce_loss", prob.shape(), target.shape());
  const T lo = static_cast<T>(kBceClamp), hi = T(1) - static_cast<T>(kBceClamp);
  const T n = static_cast<T>(prob.size());
  const auto& y = prob.values();
  const auto& t = target.values();
  Buffer<T> yc = y.max(lo).min(hi);
  const T loss = -(t * yc.log() + (T(1) - t) * (T(1) - yc).log()).sum() / n;
  Tape<T>* tape = common_tape<T>({&prob, &target});
  return finish(tape, {1}, Buffer<T>::Constant(1, loss),
                [tape, prob, target, lo, hi, n](const Buffer<T>& g) {
                  if (auto* gp = tape->grad_slot(prob)) {
                    const auto& y = prob.values();
                    const auto& t = target.values();
                    Buffer<T> d = (-t / y + (T(1) - t) / (T(1) - y)) * (g(0) / n);
                    *gp += (y > lo && y < hi).select(d, T(0));
                  }
                  if (auto* gt = tape->grad_slot(target)) {
                    const auto& y = prob.values();
                    Buffer<T> yc = y.max(lo).min(hi);
                    *gt += -(yc.log() - (T(1) - yc).log()) * (g(0) / n);
                  }
                });
}

#define REFSEG_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> transpose(const Tensor<T>&);                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> affine(const Tensor<T>&, T, T);                                       \
  template Tensor<T> scale_by(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> scale_rows(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> sigmoid(const Tensor<T>&);                                            \
  template Tensor<T> tanh(const Tensor<T>&);                                               \
  template Tensor<T> relu(const Tensor<T>&);                                               \
  template Tensor<T> softmax(const Tensor<T>&);                                            \
  template Tensor<T> sum(const Tensor<T>&);                                                \
  template Tensor<T> mean(const Tensor<T>&);                                               \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                     \
  template Tensor<T> concat(std::span<const Tensor<T>>, int);                              \
  template Tensor<T> slice(const Tensor<T>&, int, Index, Index);                           \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const int>);                  \
  template Tensor<T> tile_spatial(const Tensor<T>&, Index, Index);                         \
  template Tensor<T> mul_channels(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int); \
  template Tensor<T> upsample_bilinear(const Tensor<T>&, Index, Index);                    \
  template Tensor<T> bce_loss(const Tensor<T>&, const Tensor<T>&);

REFSEG_INSTANTIATE_OPS(float)
REFSEG_INSTANTIATE_OPS(double)

#undef REFSEG_INSTANTIATE_OPS

}  // namespace refseg
