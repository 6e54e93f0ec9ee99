#include "healthpoint/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hp {

std::vector<std::uint32_t> Csr::row_of_entries() const {
  std::vector<std::uint32_t> out(nnz());
  for (std::size_t i = 0; i < rows(); ++i) {
    for (std::size_t e = offsets[i]; e < offsets[i + 1]; ++e) out[e] = static_cast<std::uint32_t>(i);
  }
  return out;
}

namespace ops {
namespace {

Tape& tape_of(Var a) { return a.tape(); }

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Result shape of a broadcasting binary op, or ShapeError.
Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.size() == 1) return a.shape();
  if (a.size() == 1) return b.shape();
  if (is_suffix(b.shape(), a.shape())) return a.shape();
  if (is_suffix(a.shape(), b.shape())) return b.shape();
  throw ShapeError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                   to_string(b.shape()) + " do not broadcast");
}

template <class Fwd, class DA, class DB>
Var binary(Var a, Var b, const char* name, Fwd fwd, DA da, DB db) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(broadcast_shape(av, bv, name));
  const std::size_t n = out.size(), na = av.size(), nb = bv.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i % na], bv[i % nb]);
  return tape_of(a).record(std::move(out), {a, b}, [a, b, da, db](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t n = g.size(), na = av.size(), nb = bv.size();
    if (a.requires_grad()) {
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < n; ++i) ga[i % na] += g[i] * da(av[i % na], bv[i % nb]);
    }
    if (b.requires_grad()) {
      Tensor& gb = t.grad(b);
      for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i] * db(av[i % na], bv[i % nb]);
    }
  });
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " + to_string(t.shape()));
  }
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var scale(Var a, double factor) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
  return tape_of(a).record(std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Var add_scalar(Var a, double offset) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + offset;
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var neg(Var a) { return scale(a, -1.0); }

namespace {

// Shared body for unary maps: deriv(x, y) with y = f(x).
template <class Fwd, class Deriv>
Var map_unary(Var a, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  Tape& tape = a.tape();
  const std::uint32_t self = static_cast<std::uint32_t>(tape.size());
  return tape.record(std::move(out), {a}, [a, self, deriv](Tape& t, const Tensor& g) {
    const Tensor& x = a.value();
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

Var exp(Var a) {
  return map_unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return map_unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return map_unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return map_unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return map_unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var a) {
  return map_unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); },
      [](double x, double) {
        const double u = kGeluC * (x + kGeluA * x * x * x);
        const double th = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  if (bv.rows() != k) {
    throw ShapeError("matmul: shapes " + to_string(av.shape()) + " and " + to_string(bv.shape()) +
                     " are not aligned");
  }
  Tensor out({n, m});
  const double* A = av.data().data();
  const double* B = bv.data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = C + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = B + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
  return a.tape().record(std::move(out), {a, b}, [a, b, n, k, m](Tape& t, const Tensor& g) {
    const double* G = g.data().data();
    if (a.requires_grad()) {
      const double* B = b.value().data().data();
      double* GA = t.grad(a).data().data();
      std::vector<double> bt(k * m);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = B[p * m + j];
      std::vector<double> acc(k);
      for (std::size_t i = 0; i < n; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const double* grow = G + i * m;
        for (std::size_t j = 0; j < m; ++j) {
          const double gij = grow[j];
          const double* btrow = bt.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) acc[p] += gij * btrow[p];
        }
        double* garow = GA + i * k;
        for (std::size_t p = 0; p < k; ++p) garow[p] += acc[p];
      }
    }
    if (b.requires_grad()) {
      const double* A = a.value().data().data();
      double* GB = t.grad(b).data().data();
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = G + i * m;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          double* gbrow = GB + p * m;
          for (std::size_t j = 0; j < m; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double x : av.data()) s += x;
  return a.tape().record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(a);
    const double gv = g[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv;
  });
}

Var mean(Var a) {
  const std::size_t n = a.size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum(Var a, std::size_t axis) {
  const Tensor& av = a.value();
  const AxisSplit s = split_axis(av.shape(), axis);
  Shape shape = av.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const double* src = av.data().data() + (o * s.extent + e) * s.inner;
      double* dst = out.data().data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  return a.tape().record(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t e = 0; e < s.extent; ++e) {
        double* dst = ga.data().data() + (o * s.extent + e) * s.inner;
        const double* src = g.data().data() + o * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Var mean(Var a, std::size_t axis) {
  const std::size_t extent = a.value().dim(axis);
  if (extent == 0) throw ShapeError("mean over an empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(extent));
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(first));
  }
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    bool ok = ps.size() == first.size();
    for (std::size_t i = 0; ok && i < ps.size(); ++i) ok = (i == axis) || ps[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: shapes " + to_string(first) + " and " + to_string(ps) +
                       " differ off the concatenation axis");
    }
    shape[axis] += ps[axis];
  }
  const AxisSplit s = split_axis(shape, axis);
  Tensor out(shape);
  std::vector<std::size_t> starts;
  std::size_t start = 0;
  for (const auto& p : parts) {
    starts.push_back(start);
    const std::size_t ext = p.shape()[axis];
    const Tensor& pv = p.value();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pv.data().data() + o * ext * s.inner, ext * s.inner,
                  out.data().data() + (o * s.extent + start) * s.inner);
    }
    start += ext;
  }
  return parts.front().tape().record(
      std::move(out), parts, [parts, starts, s, axis](Tape& t, const Tensor& g) {
        for (std::size_t k = 0; k < parts.size(); ++k) {
          const Var& p = parts[k];
          if (!p.requires_grad()) continue;
          const std::size_t ext = p.shape()[axis];
          Tensor& gp = t.grad(p);
          for (std::size_t o = 0; o < s.outer; ++o) {
            const double* src = g.data().data() + (o * s.extent + starts[k]) * s.inner;
            double* dst = gp.data().data() + o * ext * s.inner;
            for (std::size_t i = 0; i < ext * s.inner; ++i) dst[i] += src[i];
          }
        }
      });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  const AxisSplit s = split_axis(av.shape(), axis);
  if (begin > end || end > s.extent) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for axis " + std::to_string(axis) + " of shape " +
                     to_string(av.shape()));
  }
  Shape shape = av.shape();
  shape[axis] = end - begin;
  const std::size_t ext = end - begin;
  Tensor out(shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(av.data().data() + (o * s.extent + begin) * s.inner, ext * s.inner,
                out.data().data() + o * ext * s.inner);
  }
  return a.tape().record(std::move(out), {a}, [a, s, begin, ext](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t o = 0; o < s.outer; ++o) {
      const double* src = g.data().data() + o * ext * s.inner;
      double* dst = ga.data().data() + (o * s.extent + begin) * s.inner;
      for (std::size_t i = 0; i < ext * s.inner; ++i) dst[i] += src[i];
    }
  });
}

Var gather_rows(Var a, std::span<const std::uint32_t> index) {
  const Tensor& av = a.value();
  if (av.ndim() == 0) throw ShapeError("gather_rows on a scalar");
  const std::size_t n = av.dim(0);
  const std::size_t width = n ? av.size() / n : 0;
  Shape shape = av.shape();
  shape[0] = index.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= n) {
      throw ShapeError("gather_rows: index " + std::to_string(index[r]) + " out of range for shape " +
                       to_string(av.shape()));
    }
    std::copy_n(av.data().data() + index[r] * width, width, out.data().data() + r * width);
  }
  std::vector<std::uint32_t> idx(index.begin(), index.end());
  return a.tape().record(std::move(out), {a}, [a, idx = std::move(idx), width](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const double* src = g.data().data() + r * width;
      double* dst = ga.data().data() + idx[r] * width;
      for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
    }
  });
}

Var scatter_add_rows(Var src, std::span<const std::uint32_t> index, std::size_t rows) {
  const Tensor& sv = src.value();
  if (sv.ndim() == 0 || sv.dim(0) != index.size()) {
    throw ShapeError("scatter_add_rows: " + std::to_string(index.size()) +
                     " indices for source shape " + to_string(sv.shape()));
  }
  const std::size_t width = index.empty() ? (sv.ndim() > 1 ? numel(Shape(sv.shape().begin() + 1, sv.shape().end())) : 1)
                                          : sv.size() / index.size();
  Shape shape = sv.shape();
  shape[0] = rows;
  Tensor out(shape);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= rows) throw ShapeError("scatter_add_rows: index out of range");
    const double* s = sv.data().data() + r * width;
    double* d = out.data().data() + index[r] * width;
    for (std::size_t i = 0; i < width; ++i) d[i] += s[i];
  }
  std::vector<std::uint32_t> idx(index.begin(), index.end());
  return src.tape().record(std::move(out), {src}, [src, idx = std::move(idx), width](Tape& t, const Tensor& g) {
    Tensor& gs = t.grad(src);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const double* s = g.data().data() + idx[r] * width;
      double* d = gs.data().data() + r * width;
      for (std::size_t i = 0; i < width; ++i) d[i] += s[i];
    }
  });
}

Var where_rows(std::span<const std::uint8_t> take_first, Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape() || av.ndim() == 0 || av.dim(0) != take_first.size()) {
    throw ShapeError("where_rows: shapes " + to_string(av.shape()) + " and " +
                     to_string(bv.shape()) + " with a mask of " +
                     std::to_string(take_first.size()) + " rows");
  }
  const std::size_t n = take_first.size();
  const std::size_t width = n ? av.size() / n : 0;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const Tensor& src = take_first[r] ? av : bv;
    std::copy_n(src.data().data() + r * width, width, out.data().data() + r * width);
  }
  std::vector<std::uint8_t> mask(take_first.begin(), take_first.end());
  return a.tape().record(std::move(out), {a, b}, [a, b, mask = std::move(mask), width](Tape& t, const Tensor& g) {
    for (std::size_t r = 0; r < mask.size(); ++r) {
      const Var& dst = mask[r] ? a : b;
      if (!dst.requires_grad()) continue;
      Tensor& gd = t.grad(dst);
      for (std::size_t i = 0; i < width; ++i) gd[r * width + i] += g[r * width + i];
    }
  });
}

Var scale_rows(Var a, std::span<const double> weights) {
  const Tensor& av = a.value();
  require_matrix(av, "scale_rows");
  if (av.rows() != weights.size()) {
    throw ShapeError("scale_rows: " + std::to_string(weights.size()) + " weights for shape " +
                     to_string(av.shape()));
  }
  const std::size_t c = av.cols();
  Tensor out(av.shape());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = av[r * c + j] * weights[r];
  }
  std::vector<double> w(weights.begin(), weights.end());
  return a.tape().record(std::move(out), {a}, [a, w = std::move(w), c](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t r = 0; r < w.size(); ++r) {
      for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += g[r * c + j] * w[r];
    }
  });
}

Var softmax(Var logits, std::span<const std::uint8_t> mask) {
  const Tensor& lv = logits.value();
  if (lv.ndim() == 0) throw ShapeError("softmax of a scalar");
  if (mask.size() != lv.size()) {
    throw ShapeError("softmax: mask of " + std::to_string(mask.size()) +
                     " entries for logits of shape " + to_string(lv.shape()));
  }
  const std::size_t c = lv.shape().back();
  const std::size_t rows = c ? lv.size() / c : 0;
  Tensor out(lv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < c; ++j) {
      if (mask[r * c + j]) {
        mx = any ? std::max(mx, lv[r * c + j]) : lv[r * c + j];
        any = true;
      }
    }
    if (!any) throw std::domain_error("softmax: row " + std::to_string(r) + " is fully masked");
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (mask[r * c + j]) {
        const double e = std::exp(lv[r * c + j] - mx);
        out[r * c + j] = e;
        z += e;
      }
    }
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] /= z;
  }
  Tape& tape = logits.tape();
  const std::uint32_t self = static_cast<std::uint32_t>(tape.size());
  return tape.record(std::move(out), {logits}, [logits, self, c, rows](Tape& t, const Tensor& g) {
    const Tensor& p = t.value(self);
    Tensor& gl = t.grad(logits);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += p[r * c + j] * g[r * c + j];
      for (std::size_t j = 0; j < c; ++j) gl[r * c + j] += p[r * c + j] * (g[r * c + j] - dot);
    }
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& lv = logits.value();
  require_matrix(lv, "softmax_cross_entropy");
  const std::size_t n = lv.rows(), c = lv.cols();
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for logits of shape " + to_string(lv.shape()));
  }
  Tensor out({n});
  Tensor probs({n, c});
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c) {
      throw std::out_of_range("softmax_cross_entropy: label out of range");
    }
    double mx = lv[r * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, lv[r * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(lv[r * c + j] - mx);
    const double lse = mx + std::log(z);
    out[r] = lse - lv[r * c + static_cast<std::size_t>(labels[r])];
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(lv[r * c + j] - lse);
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape().record(
      std::move(out), {logits},
      [logits, lab = std::move(lab), probs = std::move(probs), n, c](Tape& t, const Tensor& g) {
        Tensor& gl = t.grad(logits);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const double onehot = static_cast<int>(j) == lab[r] ? 1.0 : 0.0;
            gl[r * c + j] += g[r] * (probs[r * c + j] - onehot);
          }
        }
      });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  require_matrix(xv, "layer_norm");
  const std::size_t n = xv.rows(), c = xv.cols();
  if (gain.size() != c || bias.size() != c) {
    throw ShapeError("layer_norm: gain " + to_string(gain.shape()) + " / bias " +
                     to_string(bias.shape()) + " for input " + to_string(xv.shape()));
  }
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor xhat({n, c});
  std::vector<double> inv_std(n);
  Tensor out({n, c});
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xv[r * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv[r * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (xv[r * c + j] - mu) * inv_std[r];
      out[r * c + j] = xhat[r * c + j] * gv[j] + bv[j];
    }
  }
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c](Tape& t,
                                                                                  const Tensor& g) {
        const Tensor& gv = gain.value();
        if (gain.requires_grad()) {
          Tensor& gg = t.grad(gain);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) gg[j] += g[r * c + j] * xhat[r * c + j];
        }
        if (bias.requires_grad()) {
          Tensor& gb = t.grad(bias);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
        }
        if (x.requires_grad()) {
          Tensor& gx = t.grad(x);
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t r = 0; r < n; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = g[r * c + j] * gv[j];
              s1 += dxh;
              s2 += dxh * xhat[r * c + j];
            }
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = g[r * c + j] * gv[j];
              gx[r * c + j] += inv_std[r] * (dxh - inv_c * s1 - xhat[r * c + j] * inv_c * s2);
            }
          }
        }
      });
}

Var l2_normalize_rows(Var x, double eps) {
  const Tensor& xv = x.value();
  require_matrix(xv, "l2_normalize_rows");
  const std::size_t n = xv.rows(), c = xv.cols();
  Tensor out({n, c});
  std::vector<double> inv(n);
  for (std::size_t r = 0; r < n; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < c; ++j) ss += xv[r * c + j] * xv[r * c + j];
    inv[r] = 1.0 / std::sqrt(ss + eps);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = xv[r * c + j] * inv[r];
  }
  Tape& tape = x.tape();
  const std::uint32_t self = static_cast<std::uint32_t>(tape.size());
  return tape.record(std::move(out), {x}, [x, self, inv = std::move(inv), n, c](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad(x);
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += inv[r] * (g[r * c + j] - y[r * c + j] * dot);
    }
  });
}

Var segment_softmax(Var logits, const Csr& segments) {
  const Tensor& lv = logits.value();
  require_matrix(lv, "segment_softmax");
  if (lv.rows() != segments.nnz()) {
    throw ShapeError("segment_softmax: logits " + to_string(lv.shape()) + " for " +
                     std::to_string(segments.nnz()) + " segment entries");
  }
  const std::size_t h = lv.cols();
  Tensor out(lv.shape());
  std::vector<double> mx(h), z(h);
  for (std::size_t i = 0; i < segments.rows(); ++i) {
    const std::size_t b = segments.offsets[i], e = segments.offsets[i + 1];
    if (b == e) throw std::domain_error("segment_softmax: row " + std::to_string(i) + " is empty");
    for (std::size_t k = 0; k < h; ++k) mx[k] = lv[b * h + k];
    for (std::size_t p = b + 1; p < e; ++p)
      for (std::size_t k = 0; k < h; ++k) mx[k] = std::max(mx[k], lv[p * h + k]);
    std::fill(z.begin(), z.end(), 0.0);
    for (std::size_t p = b; p < e; ++p) {
      for (std::size_t k = 0; k < h; ++k) {
        const double v = std::exp(lv[p * h + k] - mx[k]);
        out[p * h + k] = v;
        z[k] += v;
      }
    }
    for (std::size_t p = b; p < e; ++p)
      for (std::size_t k = 0; k < h; ++k) out[p * h + k] /= z[k];
  }
  Tape& tape = logits.tape();
  const std::uint32_t self = static_cast<std::uint32_t>(tape.size());
  return tape.record(std::move(out), {logits}, [logits, self, offsets = segments.offsets, h](Tape& t, const Tensor& g) {
    const Tensor& a = t.value(self);
    Tensor& gl = t.grad(logits);
    std::vector<double> dot(h);
    for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
      const std::size_t b = offsets[i], e = offsets[i + 1];
      std::fill(dot.begin(), dot.end(), 0.0);
      for (std::size_t p = b; p < e; ++p)
        for (std::size_t k = 0; k < h; ++k) dot[k] += a[p * h + k] * g[p * h + k];
      for (std::size_t p = b; p < e; ++p)
        for (std::size_t k = 0; k < h; ++k) gl[p * h + k] += a[p * h + k] * (g[p * h + k] - dot[k]);
    }
  });
}

Var segment_logsumexp(Var values, const Csr& segments) {
  const Tensor& vv = values.value();
  if (vv.size() != segments.nnz()) {
    throw ShapeError("segment_logsumexp: values " + to_string(vv.shape()) + " for " +
                     std::to_string(segments.nnz()) + " segment entries");
  }
  const std::size_t rows = segments.rows();
  Tensor out({rows});
  Tensor weights({segments.nnz()});
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t b = segments.offsets[i], e = segments.offsets[i + 1];
    if (b == e) throw std::domain_error("segment_logsumexp: row " + std::to_string(i) + " is empty");
    double mx = vv[b];
    for (std::size_t p = b + 1; p < e; ++p) mx = std::max(mx, vv[p]);
    double z = 0.0;
    for (std::size_t p = b; p < e; ++p) z += std::exp(vv[p] - mx);
    out[i] = mx + std::log(z);
    for (std::size_t p = b; p < e; ++p) weights[p] = std::exp(vv[p] - out[i]);
  }
  return values.tape().record(
      std::move(out), {values},
      [values, weights = std::move(weights), offsets = segments.offsets](Tape& t, const Tensor& g) {
        Tensor& gv = t.grad(values);
        for (std::size_t i = 0; i + 1 < offsets.size(); ++i)
          for (std::size_t p = offsets[i]; p < offsets[i + 1]; ++p) gv[p] += g[i] * weights[p];
      });
}

Var attend(Var alpha, Var values, const Csr& neighbours) {
  const Tensor& av = alpha.value();
  const Tensor& vv = values.value();
  require_matrix(av, "attend");
  require_matrix(vv, "attend");
  const std::size_t heads = av.cols(), d = vv.cols();
  if (av.rows() != neighbours.nnz() || heads == 0 || d % heads != 0) {
    throw ShapeError("attend: weights " + to_string(av.shape()) + " and values " +
                     to_string(vv.shape()) + " for " + std::to_string(neighbours.nnz()) + " edges");
  }
  const std::size_t dh = d / heads;
  const std::size_t n = neighbours.rows();
  for (auto c : neighbours.cols) {
    if (c >= vv.rows()) throw ShapeError("attend: neighbour index out of range");
  }
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.data().data() + i * d;
    for (std::size_t p = neighbours.offsets[i]; p < neighbours.offsets[i + 1]; ++p) {
      const double* v = vv.data().data() + neighbours.cols[p] * d;
      for (std::size_t k = 0; k < heads; ++k) {
        const double w = av[p * heads + k];
        for (std::size_t e = 0; e < dh; ++e) o[k * dh + e] += w * v[k * dh + e];
      }
    }
  }
  return alpha.tape().record(
      std::move(out), {alpha, values},
      [alpha, values, offsets = neighbours.offsets, cols = neighbours.cols, heads, d, dh](Tape& t, const Tensor& g) {
        const Tensor& av = alpha.value();
        const Tensor& vv = values.value();
        Tensor* ga = alpha.requires_grad() ? &t.grad(alpha) : nullptr;
        Tensor* gv = values.requires_grad() ? &t.grad(values) : nullptr;
        for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
          const double* go = g.data().data() + i * d;
          for (std::size_t p = offsets[i]; p < offsets[i + 1]; ++p) {
            const std::size_t col = cols[p];
            const double* v = vv.data().data() + col * d;
            for (std::size_t k = 0; k < heads; ++k) {
              if (ga) {
                double s = 0.0;
                for (std::size_t e = 0; e < dh; ++e) s += go[k * dh + e] * v[k * dh + e];
                (*ga)[p * heads + k] += s;
              }
              if (gv) {
                const double w = av[p * heads + k];
                double* dv = gv->data().data() + col * d;
                for (std::size_t e = 0; e < dh; ++e) dv[k * dh + e] += w * go[k * dh + e];
              }
            }
          }
        }
      });
}

Var segment_mean_rows(Var x, const Csr& groups) {
  const Tensor& xv = x.value();
  require_matrix(xv, "segment_mean_rows");
  const std::size_t c = xv.cols();
  Tensor out({groups.rows(), c});
  for (std::size_t i = 0; i < groups.rows(); ++i) {
    const auto members = groups.row(i);
    if (members.empty()) throw std::domain_error("segment_mean_rows: empty group");
    for (auto r : members) {
      if (r >= xv.rows()) throw ShapeError("segment_mean_rows: member index out of range");
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += xv[r * c + j];
    }
    const double inv = 1.0 / static_cast<double>(members.size());
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= inv;
  }
  return x.tape().record(std::move(out), {x}, [x, groups, c](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < groups.rows(); ++i) {
      const auto members = groups.row(i);
      const double inv = 1.0 / static_cast<double>(members.size());
      for (auto r : members)
        for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += g[i * c + j] * inv;
    }
  });
}

Var edge_dot(Var a, Var b, std::span<const std::uint32_t> row_a, std::span<const std::uint32_t> row_b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "edge_dot");
  require_matrix(bv, "edge_dot");
  if (av.cols() != bv.cols() || row_a.size() != row_b.size()) {
    throw ShapeError("edge_dot: shapes " + to_string(av.shape()) + " and " + to_string(bv.shape()));
  }
  const std::size_t c = av.cols(), e = row_a.size();
  Tensor out({e});
  for (std::size_t p = 0; p < e; ++p) {
    if (row_a[p] >= av.rows() || row_b[p] >= bv.rows()) throw ShapeError("edge_dot: row out of range");
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += av[row_a[p] * c + j] * bv[row_b[p] * c + j];
    out[p] = s;
  }
  std::vector<std::uint32_t> ia(row_a.begin(), row_a.end()), ib(row_b.begin(), row_b.end());
  return a.tape().record(std::move(out), {a, b},
                         [a, b, ia = std::move(ia), ib = std::move(ib), c](Tape& t, const Tensor& g) {
                           const Tensor& av = a.value();
                           const Tensor& bv = b.value();
                           Tensor* ga = a.requires_grad() ? &t.grad(a) : nullptr;
                           Tensor* gb = b.requires_grad() ? &t.grad(b) : nullptr;
                           for (std::size_t p = 0; p < ia.size(); ++p) {
                             for (std::size_t j = 0; j < c; ++j) {
                               if (ga) (*ga)[ia[p] * c + j] += g[p] * bv[ib[p] * c + j];
                               if (gb) (*gb)[ib[p] * c + j] += g[p] * av[ia[p] * c + j];
                             }
                           }
                         });
}

Var head_project(Var x, Var coeff) {
  const Tensor& xv = x.value();
  const Tensor& cv = coeff.value();
  require_matrix(xv, "head_project");
  if (cv.ndim() != 3) {
    throw ShapeError("head_project: coefficients must be (heads, groups, head_dim), got " +
                     to_string(cv.shape()));
  }
  const std::size_t k = xv.rows(), d = xv.cols();
  const std::size_t h = cv.dim(0), gcount = cv.dim(1), dh = cv.dim(2);
  if (h * dh != d) {
    throw ShapeError("head_project: input " + to_string(xv.shape()) + " and coefficients " +
                     to_string(cv.shape()) + " disagree on width");
  }
  Tensor out({k, h, gcount});
  for (std::size_t r = 0; r < k; ++r) {
    const double* xr = xv.data().data() + r * d;
    for (std::size_t hh = 0; hh < h; ++hh) {
      for (std::size_t gg = 0; gg < gcount; ++gg) {
        const double* cr = cv.data().data() + (hh * gcount + gg) * dh;
        double s = 0.0;
        for (std::size_t e = 0; e < dh; ++e) s += xr[hh * dh + e] * cr[e];
        out[(r * h + hh) * gcount + gg] = s;
      }
    }
  }
  return x.tape().record(std::move(out), {x, coeff}, [x, coeff, k, h, gcount, dh](Tape& t, const Tensor& g) {
    const Tensor& xv = x.value();
    const Tensor& cv = coeff.value();
    const std::size_t d = h * dh;
    Tensor* gx = x.requires_grad() ? &t.grad(x) : nullptr;
    Tensor* gc = coeff.requires_grad() ? &t.grad(coeff) : nullptr;
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t hh = 0; hh < h; ++hh) {
        for (std::size_t gg = 0; gg < gcount; ++gg) {
          const double go = g[(r * h + hh) * gcount + gg];
          if (go == 0.0) continue;
          const double* cr = cv.data().data() + (hh * gcount + gg) * dh;
          if (gx) {
            double* dx = gx->data().data() + r * d + hh * dh;
            for (std::size_t e = 0; e < dh; ++e) dx[e] += go * cr[e];
          }
          if (gc) {
            const double* xr = xv.data().data() + r * d + hh * dh;
            double* dc = gc->data().data() + (hh * gcount + gg) * dh;
            for (std::size_t e = 0; e < dh; ++e) dc[e] += go * xr[e];
          }
        }
      }
    }
  });
}

Var relational_logits(std::span<const RelationDim> dims, Var bias, std::size_t edges, std::size_t rank) {
  const Tensor& bv = bias.value();
  if (bv.ndim() != 1) throw ShapeError("relational_logits: bias must be (heads), got " + to_string(bv.shape()));
  const std::size_t heads = bv.size();
  constexpr std::size_t kMaxDims = 4;
  if (dims.empty() || dims.size() > kMaxDims) {
    throw std::invalid_argument("relational_logits: between 1 and 4 relation dimensions are supported");
  }
  std::vector<Var> inputs{bias};
  for (const auto& dim : dims) {
    if (dim.terms.empty()) throw std::invalid_argument("relational_logits: dimension without terms");
    for (const auto& term : dim.terms) {
      const Tensor& cv = term.coupled.value();
      const Tensor& uv = term.unary.value();
      if (cv.ndim() != 3 || cv.dim(1) != heads || cv.dim(2) != rank || uv.ndim() != 3 ||
          uv.dim(1) != heads || uv.dim(2) != 1 || uv.dim(0) != cv.dim(0)) {
        throw ShapeError("relational_logits: tables " + to_string(cv.shape()) + " / " +
                         to_string(uv.shape()) + " do not match heads=" + std::to_string(heads) +
                         ", rank=" + std::to_string(rank));
      }
      if (term.index.size() != edges) {
        throw ShapeError("relational_logits: " + std::to_string(term.index.size()) +
                         " table indices for " + std::to_string(edges) + " edges");
      }
      for (auto ix : term.index) {
        if (ix >= cv.dim(0)) throw ShapeError("relational_logits: table index out of range");
      }
      inputs.push_back(term.coupled);
      inputs.push_back(term.unary);
    }
  }
  const std::size_t nd = dims.size();
  const std::size_t hr = heads * rank;
  // Flattened view of every term with raw table pointers, so the edge loops avoid tape lookups.
  struct Flat {
    std::size_t dim;
    double sign;
    const std::uint32_t* index;
    const double* coupled;
    const double* unary;
  };
  std::vector<Flat> flat;
  for (std::size_t k = 0; k < nd; ++k) {
    for (const auto& term : dims[k].terms) {
      flat.push_back({k, term.sign, term.index.data(), term.coupled.value().data().data(),
                      term.unary.value().data().data()});
    }
  }
  Tensor out({edges, heads});
  std::vector<double> s(nd * hr), u(heads);
  for (std::size_t e = 0; e < edges; ++e) {
    std::fill(s.begin(), s.end(), 0.0);
    std::fill(u.begin(), u.end(), 0.0);
    for (const Flat& f : flat) {
      const std::size_t row = f.index[e];
      const double* c = f.coupled + row * hr;
      double* sk = s.data() + f.dim * hr;
      for (std::size_t i = 0; i < hr; ++i) sk[i] += f.sign * c[i];
      const double* uv = f.unary + row * heads;
      for (std::size_t h = 0; h < heads; ++h) u[h] += f.sign * uv[h];
    }
    for (std::size_t k = 1; k < nd; ++k) {
      const double* sk = s.data() + k * hr;
      for (std::size_t i = 0; i < hr; ++i) s[i] *= sk[i];
    }
    for (std::size_t h = 0; h < heads; ++h) {
      double coupled = 0.0;
      for (std::size_t g = 0; g < rank; ++g) coupled += s[h * rank + g];
      out[e * heads + h] = coupled + u[h] + bv[h];
    }
  }
  std::vector<RelationDim> saved(dims.begin(), dims.end());
  return bias.tape().record(std::move(out), inputs, [saved = std::move(saved), bias, edges, heads, rank](Tape& t, const Tensor& g) {
    const std::size_t nd = saved.size();
    const std::size_t hr = heads * rank;
    if (bias.requires_grad()) {
      Tensor& gb = t.grad(bias);
      for (std::size_t e = 0; e < edges; ++e)
        for (std::size_t h = 0; h < heads; ++h) gb[h] += g[e * heads + h];
    }
    struct Flat {
      std::size_t dim;
      double sign;
      const std::uint32_t* index;
      const double* coupled;
      double* coupled_grad;
      double* unary_grad;
    };
    std::vector<Flat> flat;
    for (std::size_t k = 0; k < nd; ++k) {
      for (const auto& term : saved[k].terms) {
        flat.push_back({k, term.sign, term.index.data(), term.coupled.value().data().data(),
                        term.coupled.requires_grad() ? t.grad(term.coupled).data().data() : nullptr,
                        term.unary.requires_grad() ? t.grad(term.unary).data().data() : nullptr});
      }
    }
    std::vector<double> s(nd * hr), ds(nd * hr);
    for (std::size_t e = 0; e < edges; ++e) {
      const double* go = g.data().data() + e * heads;
      bool any = false;
      for (std::size_t h = 0; h < heads; ++h) any = any || go[h] != 0.0;
      if (!any) continue;
      std::fill(s.begin(), s.end(), 0.0);
      for (const Flat& f : flat) {
        const double* c = f.coupled + f.index[e] * hr;
        double* sk = s.data() + f.dim * hr;
        for (std::size_t i = 0; i < hr; ++i) sk[i] += f.sign * c[i];
      }
      for (std::size_t k = 0; k < nd; ++k) {
        double* dk = ds.data() + k * hr;
        for (std::size_t h = 0; h < heads; ++h) std::fill(dk + h * rank, dk + (h + 1) * rank, go[h]);
        for (std::size_t k2 = 0; k2 < nd; ++k2) {
          if (k2 == k) continue;
          const double* sk = s.data() + k2 * hr;
          for (std::size_t i = 0; i < hr; ++i) dk[i] *= sk[i];
        }
      }
      for (const Flat& f : flat) {
        const std::size_t row = f.index[e];
        if (f.coupled_grad) {
          double* c = f.coupled_grad + row * hr;
          const double* dk = ds.data() + f.dim * hr;
          for (std::size_t i = 0; i < hr; ++i) c[i] += f.sign * dk[i];
        }
        if (f.unary_grad) {
          double* uv = f.unary_grad + row * heads;
          for (std::size_t h = 0; h < heads; ++h) uv[h] += f.sign * go[h];
        }
      }
    }
  });
}

}  // namespace ops
}  // namespace hp
