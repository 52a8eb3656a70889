#include "mvlt/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "mvlt/error.hpp"

namespace mvlt::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

ConstMatMap as_matrix(const Buffer& v, std::size_t r, std::size_t c) {
  return ConstMatMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

MatMap as_matrix(Buffer& v, std::size_t r, std::size_t c) {
  return MatMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

// Gradient buffer of parent i, or nullptr if that parent needs none.
Buffer* parent_grad(detail::Node& out, std::size_t i) {
  auto& p = *out.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

const Buffer& parent_data(const detail::Node& out, std::size_t i) {
  return out.parents[i]->data;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
  }
}

struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  Buffer out(m * n);
  as_matrix(out, m, n).noalias() = as_matrix(a.node().data, m, k) * as_matrix(b.node().data, k, n);
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& o) {
    auto dc = as_matrix(o.grad, m, n);
    if (auto* ga = parent_grad(o, 0)) {
      as_matrix(*ga, m, k).noalias() += dc * as_matrix(parent_data(o, 1), k, n).transpose();
    }
    if (auto* gb = parent_grad(o, 1)) {
      as_matrix(*gb, k, n).noalias() += as_matrix(parent_data(o, 0), m, k).transpose() * dc;
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out(a.numel());
  const auto& x = a.node().data;
  const auto& y = b.node().data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& o) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = parent_grad(o, p)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Buffer out(a.numel());
  const auto& x = a.node().data;
  const auto& y = b.node().data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& o) {
    if (auto* g = parent_grad(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
    }
    if (auto* g = parent_grad(o, 1)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] -= o.grad[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  Buffer out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [factor](detail::Node& o) {
    if (auto* g = parent_grad(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += factor * o.grad[i];
    }
  });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  const std::size_t c = a.cols(), r = a.rows();
  if (bias.numel() != c) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(a.shape()));
  }
  Buffer out(a.data().begin(), a.data().end());
  const auto& b = bias.node().data;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b[j];
  }
  return Tensor::make_result(a.shape(), std::move(out), {a, bias}, [r, c](detail::Node& o) {
    if (auto* g = parent_grad(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
    }
    if (auto* g = parent_grad(o, 1)) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) (*g)[j] += o.grad[i * c + j];
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_bias(matmul(x, weight), bias);
}

Tensor gelu(const Tensor& x) {
  const auto& in = x.node().data;
  Buffer out(in.size()), cdf(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    cdf[i] = 0.5 * (1.0 + std::erf(in[i] * std::numbers::sqrt2 / 2.0));
    out[i] = in[i] * cdf[i];
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [cdf = std::move(cdf)](detail::Node& o) {
    auto* g = parent_grad(o, 0);
    if (!g) return;
    const auto n = static_cast<Eigen::Index>(cdf.size());
    Eigen::Map<const Eigen::ArrayXd> v(parent_data(o, 0).data(), n);
    Eigen::Map<const Eigen::ArrayXd> c(cdf.data(), n);
    Eigen::Map<const Eigen::ArrayXd> dy(o.grad.data(), n);
    Eigen::Map<Eigen::ArrayXd> dx(g->data(), n);
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    dx += dy * (c + v * inv_sqrt_2pi * (-0.5 * v.square()).exp());
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t c = x.cols(), r = x.rows();
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match " + shape_str(x.shape()));
  }
  const auto& in = x.node().data;
  const auto& gm = gamma.node().data;
  const auto& bt = beta.node().data;
  Buffer xhat(in.size()), rstd(r), out(in.size());
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * rstd[i];
      out[i * c + j] = xhat[i * c + j] * gm[j] + bt[j];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [r, c, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& o) {
        const auto& gm = parent_data(o, 1);
        const auto& dy = o.grad;
        if (auto* gg = parent_grad(o, 1)) {
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) (*gg)[j] += dy[i * c + j] * xhat[i * c + j];
          }
        }
        if (auto* gb = parent_grad(o, 2)) {
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) (*gb)[j] += dy[i * c + j];
          }
        }
        if (auto* gx = parent_grad(o, 0)) {
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = dy[i * c + j] * gm[j];
              mean_d += d;
              mean_dx += d * xhat[i * c + j];
            }
            mean_d *= inv_c;
            mean_dx *= inv_c;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = dy[i * c + j] * gm[j];
              (*gx)[i * c + j] += rstd[i] * (d - mean_d - xhat[i * c + j] * mean_dx);
            }
          }
        }
      });
}

Tensor softmax(const Tensor& logits, std::size_t axis) {
  const auto v = axis_view(logits.shape(), axis);
  const auto& in = logits.node().data;
  Buffer out(in.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t s = 0; s < v.inner; ++s) {
      const std::size_t base = o * v.extent * v.inner + s;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < v.extent; ++e) mx = std::max(mx, in[base + e * v.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        out[base + e * v.inner] = std::exp(in[base + e * v.inner] - mx);
        z += out[base + e * v.inner];
      }
      for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] /= z;
    }
  }
  return Tensor::make_result(logits.shape(), std::move(out), {logits}, [v](detail::Node& o) {
    auto* g = parent_grad(o, 0);
    if (!g) return;
    const auto& y = o.data;
    for (std::size_t a = 0; a < v.outer; ++a) {
      for (std::size_t s = 0; s < v.inner; ++s) {
        const std::size_t base = a * v.extent * v.inner + s;
        double dot = 0.0;
        for (std::size_t e = 0; e < v.extent; ++e) {
          dot += o.grad[base + e * v.inner] * y[base + e * v.inner];
        }
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t i = base + e * v.inner;
          (*g)[i] += y[i] * (o.grad[i] - dot);
        }
      }
    }
  });
}

std::vector<Tensor> split(const Tensor& x, std::size_t axis, std::span<const std::size_t> sizes) {
  const auto v = axis_view(x.shape(), axis);
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total != v.extent) {
    throw DimensionError("split: sizes sum to " + std::to_string(total) + " but axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()) + " has extent " +
                         std::to_string(v.extent));
  }
  std::vector<Tensor> parts;
  std::size_t offset = 0;
  const auto& in = x.node().data;
  for (auto len : sizes) {
    Shape shape = x.shape();
    shape[axis] = len;
    Buffer out(v.outer * len * v.inner);
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>((o * v.extent + offset) * v.inner),
                  len * v.inner, out.begin() + static_cast<std::ptrdiff_t>(o * len * v.inner));
    }
    parts.push_back(Tensor::make_result(
        std::move(shape), std::move(out), {x}, [v, offset, len](detail::Node& n) {
          auto* g = parent_grad(n, 0);
          if (!g) return;
          for (std::size_t o = 0; o < v.outer; ++o) {
            const std::size_t dst = (o * v.extent + offset) * v.inner;
            const std::size_t src = o * len * v.inner;
            for (std::size_t i = 0; i < len * v.inner; ++i) (*g)[dst + i] += n.grad[src + i];
          }
        }));
    offset += len;
  }
  return parts;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape));
  }
  std::vector<std::size_t> lens;
  std::size_t extent = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = shape;
    if (a.size() != b.size()) {
      throw DimensionError("concat: rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    a[axis] = b[axis] = 0;
    if (a != b) {
      throw DimensionError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                           shape_str(shape));
    }
    lens.push_back(p.shape()[axis]);
    extent += p.shape()[axis];
  }
  shape[axis] = extent;
  const auto v = axis_view(shape, axis);
  Buffer out(shape_numel(shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& in = parts[k].node().data;
    const std::size_t len = lens[k];
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(o * len * v.inner), len * v.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * v.extent + offset) * v.inner));
    }
    offset += len;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return Tensor::make_result(std::move(shape), std::move(out), std::move(parents),
                             [v, lens](detail::Node& n) {
                               std::size_t offset = 0;
                               for (std::size_t k = 0; k < lens.size(); ++k) {
                                 const std::size_t len = lens[k];
                                 if (auto* g = parent_grad(n, k)) {
                                   for (std::size_t o = 0; o < v.outer; ++o) {
                                     const std::size_t src = (o * v.extent + offset) * v.inner;
                                     const std::size_t dst = o * len * v.inner;
                                     for (std::size_t i = 0; i < len * v.inner; ++i) {
                                       (*g)[dst + i] += n.grad[src + i];
                                     }
                                   }
                                 }
                                 offset += len;
                               }
                             });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  const std::size_t c = x.cols(), r = x.rows();
  if (indices.empty()) throw DimensionError("gather_rows: empty index list");
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Buffer out(idx.size() * c);
  const auto& in = x.node().data;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= r) {
      throw IndexError("gather_rows: row " + std::to_string(idx[i]) + " out of range for " +
                       shape_str(x.shape()));
    }
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(idx[i] * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  const std::size_t n = idx.size();
  return Tensor::make_result({n, c}, std::move(out), {x},
                             [c, idx = std::move(idx)](detail::Node& o) {
                               auto* g = parent_grad(o, 0);
                               if (!g) return;
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                 for (std::size_t j = 0; j < c; ++j) {
                                   (*g)[idx[i] * c + j] += o.grad[i * c + j];
                                 }
                               }
                             });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tensor::make_result({1}, {s}, {x}, [](detail::Node& o) {
    if (auto* g = parent_grad(o, 0)) {
      for (auto& v : *g) v += o.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  const std::size_t m = logits.cols(), r = logits.rows();
  if (targets.size() != r) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits.shape()));
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  for (auto t : tgt) {
    if (t >= m) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(m) + ")");
    }
  }
  const auto& in = logits.node().data;
  Buffer prob(in.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * m;
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      prob[i * m + j] = std::exp(row[j] - mx);
      z += prob[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) prob[i * m + j] /= z;
    loss += std::log(z) + mx - row[tgt[i]];
  }
  loss /= static_cast<double>(r);
  return Tensor::make_result(
      {1}, {loss}, {logits},
      [r, m, tgt = std::move(tgt), prob = std::move(prob)](detail::Node& o) {
        auto* g = parent_grad(o, 0);
        if (!g) return;
        const double s = o.grad[0] / static_cast<double>(r);
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < m; ++j) {
            (*g)[i * m + j] += s * (prob[i * m + j] - (j == tgt[i] ? 1.0 : 0.0));
          }
        }
      });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse");
  const auto& p = pred.node().data;
  const auto& t = target.node().data;
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  const double n = static_cast<double>(p.size());
  return Tensor::make_result({1}, {s / n}, {pred, target}, [n](detail::Node& o) {
    const auto& p = parent_data(o, 0);
    const auto& t = parent_data(o, 1);
    const double k = 2.0 * o.grad[0] / n;
    if (auto* g = parent_grad(o, 0)) {
      for (std::size_t i = 0; i < p.size(); ++i) (*g)[i] += k * (p[i] - t[i]);
    }
    if (auto* g = parent_grad(o, 1)) {
      for (std::size_t i = 0; i < p.size(); ++i) (*g)[i] -= k * (p[i] - t[i]);
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  require_same_shape(k, v, "attention");
  const std::size_t tq = q.shape()[0], tk = k.shape()[0], d = q.shape()[1];
  if (k.shape()[1] != d) {
    throw DimensionError("attention: query " + shape_str(q.shape()) + " vs key " +
                         shape_str(k.shape()));
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto eq = static_cast<Eigen::Index>(tq), ek = static_cast<Eigen::Index>(tk),
             edh = static_cast<Eigen::Index>(dh), ed = static_cast<Eigen::Index>(d);

  Buffer out(tq * d);
  Buffer probs(heads * tq * tk);
  for (std::size_t h = 0; h < heads; ++h) {
    ConstStridedMap qh(q.node().data.data() + h * dh, eq, edh, Eigen::OuterStride<>(ed));
    ConstStridedMap kh(k.node().data.data() + h * dh, ek, edh, Eigen::OuterStride<>(ed));
    ConstStridedMap vh(v.node().data.data() + h * dh, ek, edh, Eigen::OuterStride<>(ed));
    MatMap p(probs.data() + h * tq * tk, eq, ek);
    p.noalias() = sc * (qh * kh.transpose());
    for (Eigen::Index i = 0; i < eq; ++i) {
      const double mx = p.row(i).maxCoeff();
      p.row(i) = (p.row(i).array() - mx).exp();
      p.row(i) /= p.row(i).sum();
    }
    StridedMap oh(out.data() + h * dh, eq, edh, Eigen::OuterStride<>(ed));
    oh.noalias() = p * vh;
  }
  return Tensor::make_result(
      {tq, d}, std::move(out), {q, k, v},
      [=, probs = std::move(probs)](detail::Node& o) {
        auto* gq = parent_grad(o, 0);
        auto* gk = parent_grad(o, 1);
        auto* gv = parent_grad(o, 2);
        RowMat dp(eq, ek);
        for (std::size_t h = 0; h < heads; ++h) {
          ConstStridedMap qh(parent_data(o, 0).data() + h * dh, eq, edh, Eigen::OuterStride<>(ed));
          ConstStridedMap kh(parent_data(o, 1).data() + h * dh, ek, edh, Eigen::OuterStride<>(ed));
          ConstStridedMap vh(parent_data(o, 2).data() + h * dh, ek, edh, Eigen::OuterStride<>(ed));
          ConstStridedMap doh(o.grad.data() + h * dh, eq, edh, Eigen::OuterStride<>(ed));
          ConstMatMap p(probs.data() + h * tq * tk, eq, ek);
          if (gv) {
            StridedMap dvh(gv->data() + h * dh, ek, edh, Eigen::OuterStride<>(ed));
            dvh.noalias() += p.transpose() * doh;
          }
          if (!gq && !gk) continue;
          dp.noalias() = doh * vh.transpose();
          for (Eigen::Index i = 0; i < eq; ++i) {
            const double dot = dp.row(i).dot(p.row(i));
            dp.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
          }
          if (gq) {
            StridedMap dqh(gq->data() + h * dh, eq, edh, Eigen::OuterStride<>(ed));
            dqh.noalias() += sc * (dp * kh);
          }
          if (gk) {
            StridedMap dkh(gk->data() + h * dh, ek, edh, Eigen::OuterStride<>(ed));
            dkh.noalias() += sc * (dp.transpose() * qh);
          }
        }
      });
}

}  // namespace mvlt::ops
