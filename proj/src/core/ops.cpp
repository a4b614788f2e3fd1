#include "telescopic/core/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "telescopic/core/errors.hpp"

namespace telescopic::ops {

namespace {

using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const Matrix>;
using Map = Eigen::Map<Matrix>;

using detail::Node;

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data();
  const auto y = b.data();
  RealBuffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      Node& in = parent(self, p);
      if (!in.requires_grad) continue;
      auto& g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.data();
  const auto y = b.data();
  RealBuffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      Node& in = parent(self, p);
      if (!in.requires_grad) continue;
      auto& g = in.ensure_grad();
      const Real sign = p == 0 ? Real(1) : Real(-1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data();
  const auto y = b.data();
  RealBuffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& na = parent(self, 0);
    Node& nb = parent(self, 1);
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.data[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.data[i];
    }
  });
}

Tensor scale(const Tensor& x, Real factor) {
  const auto in = x.data();
  RealBuffer out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * factor;
  return make_op_result(x.shape(), std::move(out), {x}, [factor](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor add_scalar(const Tensor& x, Real value) {
  const auto in = x.data();
  RealBuffer out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] + value;
  return make_op_result(x.shape(), std::move(out), {x}, [](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("scale_by: scale must hold one value, got " + shape_str(s.shape()));
  const Real factor = s.data()[0];
  const auto in = x.data();
  RealBuffer out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * factor;
  return make_op_result(x.shape(), std::move(out), {x, s}, [](Node& self) {
    Node& nx = parent(self, 0);
    Node& ns = parent(self, 1);
    const Real factor = ns.data[0];
    if (nx.requires_grad) {
      auto& g = nx.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    }
    if (ns.requires_grad) {
      Real acc = 0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * nx.data[i];
      ns.ensure_grad()[0] += acc;
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t d = x.shape().back();
  if (bias.numel() != d)
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match last extent of " +
                         shape_str(x.shape()));
  const auto in = x.data();
  const auto b = bias.data();
  const std::size_t rows = in.size() / d;
  RealBuffer out(in.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = in[r * d + j] + b[j];
  return make_op_result(x.shape(), std::move(out), {x, bias}, [rows, d](Node& self) {
    Node& nx = parent(self, 0);
    Node& nb = parent(self, 1);
    if (nx.requires_grad) {
      auto& g = nx.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  RealBuffer out(static_cast<std::size_t>(m * n));
  Map(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, n);
  return make_op_result({a.dim(0), b.dim(1)}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& na = parent(self, 0);
    Node& nb = parent(self, 1);
    MapC dc(self.grad.data(), m, n);
    if (na.requires_grad)
      Map(na.ensure_grad().data(), m, k).noalias() += dc * MapC(nb.data.data(), k, n).transpose();
    if (nb.requires_grad)
      Map(nb.ensure_grad().data(), k, n).noalias() += MapC(na.data.data(), m, k).transpose() * dc;
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b) {
  Tensor y = matmul(x, w);
  return b ? add_bias(y, *b) : y;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const std::size_t g = a.dim(0);
  const auto m = static_cast<Eigen::Index>(a.dim(1));
  const auto k = static_cast<Eigen::Index>(a.dim(2));
  const auto bk = static_cast<Eigen::Index>(transpose_b ? b.dim(2) : b.dim(1));
  const auto n = static_cast<Eigen::Index>(transpose_b ? b.dim(1) : b.dim(2));
  if (b.dim(0) != g || bk != k)
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         (transpose_b ? " (transposed)" : ""));
  const std::size_t a_step = static_cast<std::size_t>(m * k);
  const std::size_t b_step = static_cast<std::size_t>(k * n);
  const std::size_t c_step = static_cast<std::size_t>(m * n);
  RealBuffer out(g * c_step);
  for (std::size_t i = 0; i < g; ++i) {
    MapC ai(a.data().data() + i * a_step, m, k);
    Map ci(out.data() + i * c_step, m, n);
    if (transpose_b)
      ci.noalias() = ai * MapC(b.data().data() + i * b_step, n, k).transpose();
    else
      ci.noalias() = ai * MapC(b.data().data() + i * b_step, k, n);
  }
  return make_op_result({g, std::size_t(m), std::size_t(n)}, std::move(out), {a, b},
                        [g, m, k, n, a_step, b_step, c_step, transpose_b](Node& self) {
                          Node& na = parent(self, 0);
                          Node& nb = parent(self, 1);
                          Real* ga = na.requires_grad ? na.ensure_grad().data() : nullptr;
                          Real* gb = nb.requires_grad ? nb.ensure_grad().data() : nullptr;
                          for (std::size_t i = 0; i < g; ++i) {
                            MapC dc(self.grad.data() + i * c_step, m, n);
                            MapC ai(na.data.data() + i * a_step, m, k);
                            if (transpose_b) {
                              MapC bi(nb.data.data() + i * b_step, n, k);  // C = A B^T
                              if (ga) Map(ga + i * a_step, m, k).noalias() += dc * bi;
                              if (gb) Map(gb + i * b_step, n, k).noalias() += dc.transpose() * ai;
                            } else {
                              MapC bi(nb.data.data() + i * b_step, k, n);
                              if (ga) Map(ga + i * a_step, m, k).noalias() += dc * bi.transpose();
                              if (gb) Map(gb + i * b_step, k, n).noalias() += ai.transpose() * dc;
                            }
                          }
                        });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  const auto in = x.data();
  RealBuffer out(in.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return make_op_result({c, r}, std::move(out), {x}, [r, c](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  RealBuffer out(x.data().begin(), x.data().end());
  return make_op_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor swap_axes12(const Tensor& x) {
  require_rank(x, 4, "swap_axes12");
  const std::size_t A = x.dim(0), B = x.dim(1), C = x.dim(2), D = x.dim(3);
  const auto in = x.data();
  RealBuffer out(in.size());
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const Real* src = in.data() + ((a * B + b) * C + c) * D;
        Real* dst = out.data() + ((a * C + c) * B + b) * D;
        std::copy(src, src + D, dst);
      }
  return make_op_result({A, C, B, D}, std::move(out), {x}, [A, B, C, D](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
          Real* dst = g.data() + ((a * B + b) * C + c) * D;
          const Real* src = self.grad.data() + ((a * C + c) * B + b) * D;
          for (std::size_t d = 0; d < D; ++d) dst[d] += src[d];
        }
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw DimensionError("concat: rank mismatch " + shape_str(p.shape()));
    for (std::size_t i = 0; i < first.size(); ++i)
      if (i != axis && p.dim(i) != first[i])
        throw DimensionError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(p.shape()));
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
  const std::size_t row = std::accumulate(widths.begin(), widths.end(), std::size_t{0});

  RealBuffer out(outer * row);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto in = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(in.data() + o * widths[k], widths[k], out.data() + o * row + offset);
    offset += widths[k];
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_op_result(std::move(out_shape), std::move(out), std::move(parents),
                        [outer, row, widths](Node& self) {
                          std::size_t offset = 0;
                          for (std::size_t k = 0; k < widths.size(); ++k) {
                            Node& in = parent(self, k);
                            if (in.requires_grad) {
                              auto& g = in.ensure_grad();
                              for (std::size_t o = 0; o < outer; ++o)
                                for (std::size_t j = 0; j < widths[k]; ++j)
                                  g[o * widths[k] + j] += self.grad[o * row + offset + j];
                            }
                            offset += widths[k];
                          }
                        });
}

namespace {

using ArrayC = Eigen::Map<const Eigen::Array<Real, Eigen::Dynamic, 1>>;
using Array = Eigen::Array<Real, Eigen::Dynamic, 1>;

Tensor from_array(const Tensor& x, RealBuffer out, RealBuffer grad_scale) {
  return make_op_result(x.shape(), std::move(out), {x}, [grad_scale = std::move(grad_scale)](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * grad_scale[i];
  });
}

}  // namespace

// Eigen's logistic saturates cleanly at both ends, so no branch on the sign.
Tensor silu(const Tensor& x) {
  const auto n = static_cast<Eigen::Index>(x.numel());
  const ArrayC in(x.data().data(), n);
  const Array s = in.logistic();
  RealBuffer out(x.numel());
  Eigen::Map<Array>(out.data(), n) = in * s;
  RealBuffer slope;
  if (x.requires_grad()) {
    slope.resize(x.numel());
    Eigen::Map<Array>(slope.data(), n) = s * (Real(1) + in * (Real(1) - s));
  }
  return from_array(x, std::move(out), std::move(slope));
}

Tensor sigmoid(const Tensor& x) {
  const auto n = static_cast<Eigen::Index>(x.numel());
  const ArrayC in(x.data().data(), n);
  RealBuffer out(x.numel());
  Eigen::Map<Array> s(out.data(), n);
  s = in.logistic();
  RealBuffer slope;
  if (x.requires_grad()) {
    slope.resize(x.numel());
    Eigen::Map<Array>(slope.data(), n) = s * (Real(1) - s);
  }
  return from_array(x, std::move(out), std::move(slope));
}

Tensor softmax(const Tensor& x) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  const auto in = x.data();
  RealBuffer out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* src = in.data() + r * d;
    const Real top = *std::max_element(src, src + d);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = src[j] - top;
  }
  Eigen::Map<Array> all(out.data(), static_cast<Eigen::Index>(out.size()));
  all = all.exp();
  for (std::size_t r = 0; r < rows; ++r) {
    Real* dst = out.data() + r * d;
    Real total = 0;
    for (std::size_t j = 0; j < d; ++j) total += dst[j];
    const Real inv = Real(1) / total;
    for (std::size_t j = 0; j < d; ++j) dst[j] *= inv;
  }
  return make_op_result(x.shape(), std::move(out), {x}, [rows, d](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* y = self.data.data() + r * d;
      const Real* dy = self.grad.data() + r * d;
      Real dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += y[j] * (dy[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
  if (!(eps > 0)) throw ParameterError("layer_norm: eps must be positive, got " + std::to_string(eps));
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d)
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match last extent of " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / d;
  const auto in = x.data();
  const auto ga = gain.data();
  const auto be = bias.data();
  RealBuffer out(in.size());
  RealBuffer xhat(in.size());
  RealBuffer inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* src = in.data() + r * d;
    const auto [lo, hi] = std::minmax_element(src, src + d);
    Real mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += src[j];
    mu /= Real(d);
    Real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= Real(d);
    const Real is = Real(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    const bool constant = *lo == *hi;  // exact zeros for constant rows
    for (std::size_t j = 0; j < d; ++j) {
      const Real h = constant ? Real(0) : (src[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * ga[j] + be[j];
    }
  }
  return make_op_result(x.shape(), std::move(out), {x, gain, bias},
                        [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                          Node& nx = parent(self, 0);
                          Node& ng = parent(self, 1);
                          Node& nb = parent(self, 2);
                          if (ng.requires_grad) {
                            auto& g = ng.ensure_grad();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j] * xhat[r * d + j];
                          }
                          if (nb.requires_grad) {
                            auto& g = nb.ensure_grad();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
                          }
                          if (nx.requires_grad) {
                            auto& g = nx.ensure_grad();
                            RealBuffer dxhat(d);
                            for (std::size_t r = 0; r < rows; ++r) {
                              Real m1 = 0, m2 = 0;
                              for (std::size_t j = 0; j < d; ++j) {
                                dxhat[j] = self.grad[r * d + j] * ng.data[j];
                                m1 += dxhat[j];
                                m2 += dxhat[j] * xhat[r * d + j];
                              }
                              m1 /= Real(d);
                              m2 /= Real(d);
                              for (std::size_t j = 0; j < d; ++j)
                                g[r * d + j] += inv_std[r] * (dxhat[j] - m1 - xhat[r * d + j] * m2);
                            }
                          }
                        });
}

Tensor dropout(const Tensor& x, Real p, bool training, RngStream& rng) {
  if (!(p >= 0 && p < 1)) throw ParameterError("dropout: p must lie in [0,1), got " + std::to_string(p));
  if (!training || p == 0) return x;
  const Real keep_scale = Real(1) / (Real(1) - p);
  const auto in = x.data();
  RealBuffer mask(in.size());
  RealBuffer out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    mask[i] = rng.uniform() < p ? Real(0) : keep_scale;
    out[i] = in[i] * mask[i];
  }
  return make_op_result(x.shape(), std::move(out), {x}, [mask = std::move(mask)](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

Tensor sum(const Tensor& x) {
  Real total = 0;
  for (Real v : x.data()) total += v;
  return make_op_result({1}, {total}, {x}, [](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  Real total = 0;
  for (Real v : x.data()) total += v;
  const Real inv = Real(1) / Real(x.numel());
  return make_op_result({1}, {total * inv}, {x}, [inv](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (auto& v : g) v += self.grad[0] * inv;
  });
}

Tensor mean_groups(const Tensor& x, std::size_t group_rows) {
  require_rank(x, 2, "mean_groups");
  if (group_rows == 0 || x.dim(0) % group_rows != 0)
    throw DimensionError("mean_groups: " + std::to_string(x.dim(0)) + " rows not divisible into groups of " +
                         std::to_string(group_rows));
  const std::size_t groups = x.dim(0) / group_rows, d = x.dim(1);
  const Real inv = Real(1) / Real(group_rows);
  const auto in = x.data();
  RealBuffer out(groups * d, Real(0));
  for (std::size_t gi = 0; gi < groups; ++gi)
    for (std::size_t t = 0; t < group_rows; ++t)
      for (std::size_t j = 0; j < d; ++j) out[gi * d + j] += in[(gi * group_rows + t) * d + j];
  for (auto& v : out) v *= inv;
  return make_op_result({groups, d}, std::move(out), {x}, [groups, group_rows, d, inv](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t t = 0; t < group_rows; ++t)
        for (std::size_t j = 0; j < d; ++j) g[(gi * group_rows + t) * d + j] += self.grad[gi * d + j] * inv;
  });
}

Tensor expand_rows(const Tensor& x, std::size_t times) {
  require_rank(x, 2, "expand_rows");
  const std::size_t groups = x.dim(0), d = x.dim(1);
  const auto in = x.data();
  RealBuffer out(groups * times * d);
  for (std::size_t gi = 0; gi < groups; ++gi)
    for (std::size_t t = 0; t < times; ++t) std::copy_n(in.data() + gi * d, d, out.data() + (gi * times + t) * d);
  return make_op_result({groups * times, d}, std::move(out), {x}, [groups, times, d](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t t = 0; t < times; ++t)
        for (std::size_t j = 0; j < d; ++j) g[gi * d + j] += self.grad[(gi * times + t) * d + j];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  if (rows.empty()) throw UsageError("gather_rows: no rows requested");
  const std::size_t n = x.dim(0), d = x.dim(1);
  const auto in = x.data();
  RealBuffer out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n)
      throw InputError("gather_rows: index " + std::to_string(rows[i]) + " out of range for " + shape_str(x.shape()));
    std::copy_n(in.data() + rows[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_op_result({rows.size(), d}, std::move(out), {x}, [idx = std::move(idx), d](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad[i * d + j];
  });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) { return gather_rows(table, ids); }

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor* bias, Padding padding) {
  const bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3) throw DimensionError("conv2d: expected [c,h,w] or [b,c,h,w], got " + shape_str(x.shape()));
  require_rank(kernel, 4, "conv2d");
  const std::size_t B = batched ? x.dim(0) : 1;
  const std::size_t C = x.dim(batched ? 1 : 0), H = x.dim(batched ? 2 : 1), W = x.dim(batched ? 3 : 2);
  const std::size_t Co = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
  if (kernel.dim(1) != C)
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " expects " + std::to_string(kernel.dim(1)) +
                         " input channels, input " + shape_str(x.shape()) + " has " + std::to_string(C));
  if (bias && bias->numel() != Co)
    throw DimensionError("conv2d: bias " + shape_str(bias->shape()) + " does not match " + std::to_string(Co) +
                         " output channels");
  std::size_t ph = 0, pw = 0;
  if (padding == Padding::kSame) {
    if (KH % 2 == 0 || KW % 2 == 0) throw DimensionError("conv2d: same padding needs odd kernel extents");
    ph = KH / 2;
    pw = KW / 2;
  }
  if (KH > H + 2 * ph || KW > W + 2 * pw)
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " + shape_str(x.shape()));
  const std::size_t Ho = H + 2 * ph - KH + 1, Wo = W + 2 * pw - KW + 1;

  const auto in = x.data();
  const auto k = kernel.data();
  RealBuffer out(B * Co * Ho * Wo, Real(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Co; ++o) {
      Real* dst = out.data() + (b * Co + o) * Ho * Wo;
      if (bias) std::fill(dst, dst + Ho * Wo, bias->data()[o]);
      for (std::size_t c = 0; c < C; ++c) {
        const Real* src = in.data() + (b * C + c) * H * W;
        for (std::size_t ky = 0; ky < KH; ++ky)
          for (std::size_t kx = 0; kx < KW; ++kx) {
            const Real wv = k[((o * C + c) * KH + ky) * KW + kx];
            for (std::size_t y = 0; y < Ho; ++y) {
              const long iy = long(y + ky) - long(ph);
              if (iy < 0 || iy >= long(H)) continue;
              for (std::size_t xo = 0; xo < Wo; ++xo) {
                const long ix = long(xo + kx) - long(pw);
                if (ix < 0 || ix >= long(W)) continue;
                dst[y * Wo + xo] += wv * src[iy * W + ix];
              }
            }
          }
      }
    }
  Shape out_shape = batched ? Shape{B, Co, Ho, Wo} : Shape{Co, Ho, Wo};
  std::vector<Tensor> parents{x, kernel};
  if (bias) parents.push_back(*bias);
  const bool has_bias = bias != nullptr;
  return make_op_result(std::move(out_shape), std::move(out), std::move(parents),
                        [=](Node& self) {
                          Node& nx = parent(self, 0);
                          Node& nk = parent(self, 1);
                          Real* gx = nx.requires_grad ? nx.ensure_grad().data() : nullptr;
                          Real* gk = nk.requires_grad ? nk.ensure_grad().data() : nullptr;
                          if (has_bias && parent(self, 2).requires_grad) {
                            auto& gb = parent(self, 2).ensure_grad();
                            for (std::size_t b = 0; b < B; ++b)
                              for (std::size_t o = 0; o < Co; ++o) {
                                const Real* dy = self.grad.data() + (b * Co + o) * Ho * Wo;
                                for (std::size_t i = 0; i < Ho * Wo; ++i) gb[o] += dy[i];
                              }
                          }
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t o = 0; o < Co; ++o) {
                              const Real* dy = self.grad.data() + (b * Co + o) * Ho * Wo;
                              for (std::size_t c = 0; c < C; ++c) {
                                const Real* src = nx.data.data() + (b * C + c) * H * W;
                                for (std::size_t ky = 0; ky < KH; ++ky)
                                  for (std::size_t kx = 0; kx < KW; ++kx) {
                                    const std::size_t ki = ((o * C + c) * KH + ky) * KW + kx;
                                    const Real wv = nk.data[ki];
                                    Real acc = 0;
                                    for (std::size_t y = 0; y < Ho; ++y) {
                                      const long iy = long(y + ky) - long(ph);
                                      if (iy < 0 || iy >= long(H)) continue;
                                      for (std::size_t xo = 0; xo < Wo; ++xo) {
                                        const long ix = long(xo + kx) - long(pw);
                                        if (ix < 0 || ix >= long(W)) continue;
                                        const Real g = dy[y * Wo + xo];
                                        acc += g * src[iy * W + ix];
                                        if (gx) gx[(b * C + c) * H * W + iy * W + ix] += g * wv;
                                      }
                                    }
                                    if (gk) gk[ki] += acc;
                                  }
                              }
                            }
                        });
}

Tensor upsample_nearest2x(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("upsample_nearest2x: need at least 2 axes, got " + shape_str(x.shape()));
  const std::size_t H = x.dim(x.rank() - 2), W = x.dim(x.rank() - 1);
  const std::size_t planes = x.numel() / (H * W);
  const auto in = x.data();
  RealBuffer out(planes * 4 * H * W);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 2 * H; ++y)
      for (std::size_t xo = 0; xo < 2 * W; ++xo)
        out[(p * 2 * H + y) * 2 * W + xo] = in[(p * H + y / 2) * W + xo / 2];
  Shape shape = x.shape();
  shape[shape.size() - 2] *= 2;
  shape[shape.size() - 1] *= 2;
  return make_op_result(std::move(shape), std::move(out), {x}, [planes, H, W](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < 2 * H; ++y)
        for (std::size_t xo = 0; xo < 2 * W; ++xo)
          g[(p * H + y / 2) * W + xo / 2] += self.grad[(p * 2 * H + y) * 2 * W + xo];
  });
}

BatchNormStats BatchNormStats::fresh(std::size_t channels) {
  return {Tensor::zeros({channels}), Tensor::ones({channels})};
}

Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, BatchNormStats& stats, bool training,
                  Real momentum, Real eps) {
  require_rank(x, 4, "batch_norm");
  if (!(eps > 0)) throw ParameterError("batch_norm: eps must be positive");
  if (!(momentum >= 0 && momentum <= 1)) throw ParameterError("batch_norm: momentum must lie in [0,1]");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gain.numel() != C || bias.numel() != C || stats.running_mean.numel() != C || stats.running_var.numel() != C)
    throw DimensionError("batch_norm: parameters do not match " + std::to_string(C) + " channels");
  const std::size_t N = B * HW;
  const auto in = x.data();
  RealBuffer mu(C), inv_std(C);
  if (training) {
    auto rm = stats.running_mean.mutable_data();
    auto rv = stats.running_var.mutable_data();
    for (std::size_t c = 0; c < C; ++c) {
      Real m = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) m += in[(b * C + c) * HW + i];
      m /= Real(N);
      Real v = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) {
          const Real dv = in[(b * C + c) * HW + i] - m;
          v += dv * dv;
        }
      v /= Real(N);
      mu[c] = m;
      inv_std[c] = Real(1) / std::sqrt(v + eps);
      rm[c] = (Real(1) - momentum) * rm[c] + momentum * m;
      const Real unbiased = N > 1 ? v * Real(N) / Real(N - 1) : v;
      rv[c] = (Real(1) - momentum) * rv[c] + momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = stats.running_mean.data()[c];
      inv_std[c] = Real(1) / std::sqrt(stats.running_var.data()[c] + eps);
    }
  }
  RealBuffer xhat(in.size()), out(in.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t at = (b * C + c) * HW + i;
        xhat[at] = (in[at] - mu[c]) * inv_std[c];
        out[at] = xhat[at] * gain.data()[c] + bias.data()[c];
      }
  return make_op_result(x.shape(), std::move(out), {x, gain, bias},
                        [B, C, HW, N, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                          Node& nx = parent(self, 0);
                          Node& ng = parent(self, 1);
                          Node& nb = parent(self, 2);
                          RealBuffer sum_dy(C, 0), sum_dy_xhat(C, 0);
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t c = 0; c < C; ++c)
                              for (std::size_t i = 0; i < HW; ++i) {
                                const std::size_t at = (b * C + c) * HW + i;
                                sum_dy[c] += self.grad[at];
                                sum_dy_xhat[c] += self.grad[at] * xhat[at];
                              }
                          if (ng.requires_grad) {
                            auto& g = ng.ensure_grad();
                            for (std::size_t c = 0; c < C; ++c) g[c] += sum_dy_xhat[c];
                          }
                          if (nb.requires_grad) {
                            auto& g = nb.ensure_grad();
                            for (std::size_t c = 0; c < C; ++c) g[c] += sum_dy[c];
                          }
                          if (!nx.requires_grad) return;
                          auto& g = nx.ensure_grad();
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t c = 0; c < C; ++c) {
                              const Real gam = ng.data[c];
                              for (std::size_t i = 0; i < HW; ++i) {
                                const std::size_t at = (b * C + c) * HW + i;
                                if (training) {
                                  g[at] += gam * inv_std[c] / Real(N) *
                                           (Real(N) * self.grad[at] - sum_dy[c] - xhat[at] * sum_dy_xhat[c]);
                                } else {
                                  g[at] += gam * inv_std[c] * self.grad[at];
                                }
                              }
                            }
                        });
}

Tensor patchify(const Tensor& x, std::size_t patch) {
  require_rank(x, 4, "patchify");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (patch == 0 || H % patch || W % patch)
    throw DimensionError("patchify: " + shape_str(x.shape()) + " not divisible by patch " + std::to_string(patch));
  const std::size_t gh = H / patch, gw = W / patch, feat = C * patch * patch;
  std::vector<std::size_t> src_index(x.numel());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t py = 0; py < gh; ++py)
      for (std::size_t px = 0; px < gw; ++px)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t dy = 0; dy < patch; ++dy)
            for (std::size_t dx = 0; dx < patch; ++dx) {
              const std::size_t token = (b * gh + py) * gw + px;
              const std::size_t f = (c * patch + dy) * patch + dx;
              src_index[token * feat + f] = ((b * C + c) * H + py * patch + dy) * W + px * patch + dx;
            }
  const auto in = x.data();
  RealBuffer out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[src_index[i]];
  return make_op_result({B * gh * gw, feat}, std::move(out), {x}, [src_index = std::move(src_index)](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < src_index.size(); ++i) g[src_index[i]] += self.grad[i];
  });
}

Tensor unpatchify(const Tensor& tokens, std::size_t batch, std::size_t channels, std::size_t height,
                  std::size_t width, std::size_t patch) {
  require_rank(tokens, 2, "unpatchify");
  if (patch == 0 || height % patch || width % patch)
    throw DimensionError("unpatchify: image extents not divisible by patch");
  const std::size_t gh = height / patch, gw = width / patch, feat = channels * patch * patch;
  if (tokens.dim(0) != batch * gh * gw || tokens.dim(1) != feat)
    throw DimensionError("unpatchify: tokens " + shape_str(tokens.shape()) + " do not tile a " +
                         shape_str({batch, channels, height, width}) + " image with patch " + std::to_string(patch));
  std::vector<std::size_t> dst_index(tokens.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t py = 0; py < gh; ++py)
      for (std::size_t px = 0; px < gw; ++px)
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t dy = 0; dy < patch; ++dy)
            for (std::size_t dx = 0; dx < patch; ++dx) {
              const std::size_t token = (b * gh + py) * gw + px;
              const std::size_t f = (c * patch + dy) * patch + dx;
              dst_index[token * feat + f] = ((b * channels + c) * height + py * patch + dy) * width + px * patch + dx;
            }
  const auto in = tokens.data();
  RealBuffer out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[dst_index[i]] = in[i];
  return make_op_result({batch, channels, height, width}, std::move(out), {tokens},
                        [dst_index = std::move(dst_index)](Node& self) {
                          auto& g = parent(self, 0).ensure_grad();
                          for (std::size_t i = 0; i < dst_index.size(); ++i) g[i] += self.grad[dst_index[i]];
                        });
}

}  // namespace telescopic::ops
