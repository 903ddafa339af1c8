#include "camp/tensorcore/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "camp/error.hpp"

namespace camp::tensor {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowArr = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// Inverted-dropout mask: each entry is 1/p with probability p, else 0. Every
// 64-bit draw feeds four 16-bit comparisons, so p is 1 - rate rounded to a
// multiple of 2^-16 and the scale uses that rounded p.
void fill_dropout_mask(std::span<double> mask, double rate, std::mt19937_64& rng) {
  const auto threshold = std::clamp<std::uint64_t>(static_cast<std::uint64_t>(std::lround((1.0 - rate) * 65536.0)), 1, 65536);
  const double scale = 65536.0 / static_cast<double>(threshold);
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (i % 4 == 0) bits = rng();
    mask[i] = (bits & 0xffff) < threshold ? scale : 0.0;
    bits >>= 16;
  }
}

MapC view(const Tensor& t) { return MapC(t.data().data(), t.rows(), t.cols()); }
MapC view(std::span<const double> s, std::size_t r, std::size_t c) { return MapC(s.data(), r, c); }
Map view(std::span<double> s, std::size_t r, std::size_t c) { return Map(s.data(), r, c); }

[[noreturn]] void shape_error(std::string_view op, const Tensor& a, const Tensor& b) {
  throw InvalidArgument(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                        shape_string(b.shape()));
}

Tape& same_tape(std::string_view op, std::initializer_list<Var> vars) {
  Tape* tape = vars.begin()->tape();
  if (!tape) throw InvalidArgument(std::string(op) + ": unbound tensor");
  for (const auto& v : vars) tape->check_owned(v, op);
  return *tape;
}

}  // namespace

std::vector<double> apply_softmax(std::span<const double> x) {
  if (x.empty()) throw InvalidArgument("softmax of an empty vector");
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericalError("softmax input contains a non-finite value");
  }
  const double hi = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - hi);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

Var matmul(Var a, Var b) {
  Tape& tape = same_tape("matmul", {a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  const auto n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor out = Tensor::zeros(n, m);
  view(out.data(), n, m).noalias() = view(av) * view(bv);
  const auto ia = a.id(), ib = b.id();
  return tape.record("matmul", std::move(out), {a, b}, [ia, ib, n, k, m](Tape& t, std::span<const double> g) {
    const auto dout = view(g, n, m);
    if (auto ga = t.grad_target(ia); !ga.empty()) view(ga, n, k).noalias() += dout * view(t.value(ib)).transpose();
    if (auto gb = t.grad_target(ib); !gb.empty()) view(gb, k, m).noalias() += view(t.value(ia)).transpose() * dout;
  });
}

Var add(Var a, Var b) {
  Tape& tape = same_tape("add", {a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_error("add", av, bv);
  Tensor out = Tensor::zeros(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const auto ia = a.id(), ib = b.id();
  return tape.record("add", std::move(out), {a, b}, [ia, ib](Tape& t, std::span<const double> g) {
    for (auto id : {ia, ib}) {
      auto gi = t.grad_target(id);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
    }
  });
}

Var add_bias(Var a, Var bias) {
  Tape& tape = same_tape("add_bias", {a, bias});
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  const auto n = av.rows(), m = av.cols();
  if (bv.size() != m) shape_error("add_bias", av, bv);
  Tensor out = Tensor::zeros(n, m);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out(r, c) = av(r, c) + bv[c];
  const auto ia = a.id(), ib = bias.id();
  return tape.record("add_bias", std::move(out), {a, bias}, [ia, ib, n, m](Tape& t, std::span<const double> g) {
    if (auto ga = t.grad_target(ia); !ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    if (auto gb = t.grad_target(ib); !gb.empty())
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) gb[c] += g[r * m + c];
  });
}

Var linear(Var x, Var weight, Var bias) { return add_bias(matmul(x, weight), bias); }

Var scale(Var a, double factor) {
  Tape& tape = same_tape("scale", {a});
  const Tensor& av = a.value();
  Tensor out = Tensor::zeros(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  const auto ia = a.id();
  return tape.record("scale", std::move(out), {a}, [ia, factor](Tape& t, std::span<const double> g) {
    auto ga = t.grad_target(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * g[i];
  });
}

// Exact (erf) GELU.
Var gelu(Var a) {
  Tape& tape = same_tape("gelu", {a});
  const Tensor& av = a.value();
  // tanh form: 0.5 x (1 + tanh(u)), u = sqrt(2/pi) (x + 0.044715 x^3), with
  // tanh(u) = 1 - 2 / (exp(2u) + 1) so Eigen can vectorise the exp.
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const auto x = view(av).array();
  const RowArr u = kC * (x + kA * x.cube());
  const RowArr th = 1.0 - 2.0 / ((2.0 * u).exp() + 1.0);
  Tensor out = Tensor::zeros(av.rows(), av.cols());
  view(out.data(), av.rows(), av.cols()).array() = 0.5 * x * (1.0 + th);
  // d/dx = 0.5 (1 + th) + 0.5 x (1 - th^2) du/dx, kept for the backward pass.
  std::vector<double> slope(av.size());
  view(std::span<double>(slope), av.rows(), av.cols()).array() =
      0.5 * (1.0 + th) + 0.5 * x * (1.0 - th.square()) * kC * (1.0 + 3.0 * kA * x.square());
  const auto ia = a.id();
  return tape.record("gelu", std::move(out), {a}, [ia, slope = std::move(slope)](Tape& t, std::span<const double> g) {
    auto ga = t.grad_target(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * slope[i];
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& tape = same_tape("layer_norm", {x, gain, bias});
  const Tensor& xv = x.value();
  const auto n = xv.rows(), m = xv.cols();
  if (gain.value().size() != m || bias.value().size() != m) shape_error("layer_norm", xv, gain.value());
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  std::vector<double> xhat(n * m);
  std::vector<double> inv_std(n);
  Tensor out = Tensor::zeros(n, m);
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < m; ++c) mu += xv(r, c);
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t c = 0; c < m; ++c) var += (xv(r, c) - mu) * (xv(r, c) - mu);
    var /= static_cast<double>(m);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < m; ++c) {
      xhat[r * m + c] = (xv(r, c) - mu) * inv_std[r];
      out(r, c) = xhat[r * m + c] * gv[c] + bv[c];
    }
  }
  const auto ix = x.id(), ig = gain.id(), ib = bias.id();
  return tape.record(
      "layer_norm", std::move(out), {x, gain, bias},
      [ix, ig, ib, n, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::span<const double> g) {
        const Tensor& gv = t.value(ig);
        if (auto gg = t.grad_target(ig); !gg.empty())
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < m; ++c) gg[c] += g[r * m + c] * xhat[r * m + c];
        if (auto gb = t.grad_target(ib); !gb.empty())
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < m; ++c) gb[c] += g[r * m + c];
        auto gx = t.grad_target(ix);
        if (gx.empty()) return;
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t r = 0; r < n; ++r) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t c = 0; c < m; ++c) {
            const double d = g[r * m + c] * gv[c];
            mean_d += d;
            mean_dx += d * xhat[r * m + c];
          }
          mean_d *= inv_m;
          mean_dx *= inv_m;
          for (std::size_t c = 0; c < m; ++c) {
            const double d = g[r * m + c] * gv[c];
            gx[r * m + c] += inv_std[r] * (d - mean_d - xhat[r * m + c] * mean_dx);
          }
        }
      });
}

Var softmax_rows(Var a) {
  Tape& tape = same_tape("softmax_rows", {a});
  const Tensor& av = a.value();
  const auto n = av.rows(), m = av.cols();
  Tensor out = Tensor::zeros(n, m);
  for (std::size_t r = 0; r < n; ++r) {
    const auto p = apply_softmax(av.row_view(r));
    std::copy(p.begin(), p.end(), out.row_view(r).begin());
  }
  Tensor saved = out;
  const auto ia = a.id();
  return tape.record("softmax_rows", std::move(out), {a},
                     [ia, n, m, y = std::move(saved)](Tape& t, std::span<const double> g) {
                       auto ga = t.grad_target(ia);
                       for (std::size_t r = 0; r < n; ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < m; ++c) dot += g[r * m + c] * y(r, c);
                         for (std::size_t c = 0; c < m; ++c) ga[r * m + c] += y(r, c) * (g[r * m + c] - dot);
                       }
                     });
}

Var concat_cols(Var a, Var b) {
  Tape& tape = same_tape("concat_cols", {a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) shape_error("concat_cols", av, bv);
  const auto n = av.rows(), ma = av.cols(), mb = bv.cols();
  Tensor out = Tensor::zeros(n, ma + mb);
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(av.row_view(r).begin(), ma, out.row_view(r).begin());
    std::copy_n(bv.row_view(r).begin(), mb, out.row_view(r).begin() + static_cast<std::ptrdiff_t>(ma));
  }
  const auto ia = a.id(), ib = b.id();
  return tape.record("concat_cols", std::move(out), {a, b}, [ia, ib, n, ma, mb](Tape& t, std::span<const double> g) {
    const auto w = ma + mb;
    if (auto ga = t.grad_target(ia); !ga.empty())
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < ma; ++c) ga[r * ma + c] += g[r * w + c];
    if (auto gb = t.grad_target(ib); !gb.empty())
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < mb; ++c) gb[r * mb + c] += g[r * w + ma + c];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat_rows: no inputs");
  Tape& tape = *parts.front().tape();
  const auto m = parts.front().cols();
  std::size_t n = 0;
  for (const auto& p : parts) {
    tape.check_owned(p, "concat_rows");
    if (p.cols() != m) shape_error("concat_rows", parts.front().value(), p.value());
    n += p.rows();
  }
  Tensor out = Tensor::zeros(n, m);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.value().size();
  }
  return tape.record("concat_rows", std::move(out), parts,
                     [ids = std::move(ids), offsets = std::move(offsets)](Tape& t, std::span<const double> g) {
                       for (std::size_t i = 0; i < ids.size(); ++i) {
                         auto gi = t.grad_target(ids[i]);
                         for (std::size_t j = 0; j < gi.size(); ++j) gi[j] += g[offsets[i] + j];
                       }
                     });
}

Var gather_rows(Var a, std::span<const std::size_t> indices) {
  Tape& tape = same_tape("gather_rows", {a});
  const Tensor& av = a.value();
  const auto m = av.cols();
  if (indices.empty()) throw InvalidArgument("gather_rows: no indices");
  Tensor out = Tensor::zeros(indices.size(), m);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= av.rows()) {
      throw InvalidArgument("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                            std::to_string(av.rows()) + " rows");
    }
    std::copy_n(av.row_view(indices[i]).begin(), m, out.row_view(i).begin());
  }
  const auto ia = a.id();
  return tape.record("gather_rows", std::move(out), {a},
                     [ia, m, idx = std::vector<std::size_t>(indices.begin(), indices.end())](
                         Tape& t, std::span<const double> g) {
                       auto ga = t.grad_target(ia);
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t c = 0; c < m; ++c) ga[idx[i] * m + c] += g[i * m + c];
                     });
}

Var scatter_add_rows(Var a, std::span<const std::size_t> indices, std::size_t n_out) {
  Tape& tape = same_tape("scatter_add_rows", {a});
  const Tensor& av = a.value();
  const auto m = av.cols();
  if (indices.size() != av.rows()) throw InvalidArgument("scatter_add_rows: one index per input row required");
  Tensor out = Tensor::zeros(n_out, m);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= n_out) throw InvalidArgument("scatter_add_rows: index out of range");
    for (std::size_t c = 0; c < m; ++c) out(indices[i], c) += av(i, c);
  }
  const auto ia = a.id();
  return tape.record("scatter_add_rows", std::move(out), {a},
                     [ia, m, idx = std::vector<std::size_t>(indices.begin(), indices.end())](
                         Tape& t, std::span<const double> g) {
                       auto ga = t.grad_target(ia);
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t c = 0; c < m; ++c) ga[i * m + c] += g[idx[i] * m + c];
                     });
}

namespace {

Var segment_pool(Var a, std::span<const std::size_t> offsets, bool average, std::string_view op) {
  Tape& tape = same_tape(op, {a});
  const Tensor& av = a.value();
  const auto m = av.cols();
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != av.rows()) {
    throw InvalidArgument(std::string(op) + ": offsets must start at 0 and end at the row count");
  }
  const auto n_seg = offsets.size() - 1;
  std::vector<double> weight(n_seg);
  for (std::size_t s = 0; s < n_seg; ++s) {
    if (offsets[s + 1] <= offsets[s]) throw InvalidArgument(std::string(op) + ": empty segment");
    weight[s] = average ? 1.0 / static_cast<double>(offsets[s + 1] - offsets[s]) : 1.0;
  }
  Tensor out = Tensor::zeros(n_seg, m);
  for (std::size_t s = 0; s < n_seg; ++s)
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
      for (std::size_t c = 0; c < m; ++c) out(s, c) += weight[s] * av(r, c);
  const auto ia = a.id();
  return tape.record(op, std::move(out), {a},
                     [ia, m, off = std::vector<std::size_t>(offsets.begin(), offsets.end()),
                      weight = std::move(weight)](Tape& t, std::span<const double> g) {
                       auto ga = t.grad_target(ia);
                       for (std::size_t s = 0; s + 1 < off.size(); ++s)
                         for (std::size_t r = off[s]; r < off[s + 1]; ++r)
                           for (std::size_t c = 0; c < m; ++c) ga[r * m + c] += weight[s] * g[s * m + c];
                     });
}

}  // namespace

Var segment_mean(Var a, std::span<const std::size_t> offsets) { return segment_pool(a, offsets, true, "segment_mean"); }

Var segment_sum(Var a, std::span<const std::size_t> offsets) { return segment_pool(a, offsets, false, "segment_sum"); }

Var sum(Var a) {
  Tape& tape = same_tape("sum", {a});
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const auto ia = a.id();
  return tape.record("sum", Tensor::scalar(total), {a}, [ia](Tape& t, std::span<const double> g) {
    auto ga = t.grad_target(ia);
    for (auto& v : ga) v += g[0];
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var cross_entropy(Var logits, std::span<const int> labels) {
  Tape& tape = same_tape("cross_entropy", {logits});
  const Tensor& lv = logits.value();
  const auto n = lv.rows(), m = lv.cols();
  if (labels.size() != n) throw InvalidArgument("cross_entropy: one label per logit row required");
  Tensor probs = Tensor::zeros(n, m);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= m) {
      throw InvalidArgument("cross_entropy: label " + std::to_string(labels[r]) + " out of range");
    }
    const auto row = lv.row_view(r);
    const double hi = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - hi);
    const double log_z = hi + std::log(z);
    total += log_z - row[static_cast<std::size_t>(labels[r])];
    for (std::size_t c = 0; c < m; ++c) probs(r, c) = std::exp(row[c] - log_z);
  }
  const auto il = logits.id();
  return tape.record("cross_entropy", Tensor::scalar(total), {logits},
                     [il, n, m, probs = std::move(probs), lab = std::vector<int>(labels.begin(), labels.end())](
                         Tape& t, std::span<const double> g) {
                       auto gl = t.grad_target(il);
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t c = 0; c < m; ++c) {
                           const double onehot = static_cast<int>(c) == lab[r] ? 1.0 : 0.0;
                           gl[r * m + c] += g[0] * (probs(r, c) - onehot);
                         }
                     });
}

Var dropout(Var a, double rate) {
  Tape& tape = same_tape("dropout", {a});
  if (rate < 0.0 || rate >= 1.0) throw InvalidArgument("dropout rate must lie in [0, 1)");
  if (!tape.training() || rate == 0.0) return a;
  const Tensor& av = a.value();
  std::vector<double> mask(av.size());
  fill_dropout_mask(mask, rate, tape.dropout_rng());
  Tensor out = Tensor::zeros(av.rows(), av.cols());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = av[i] * mask[i];
  const auto ia = a.id();
  return tape.record("dropout", std::move(out), {a}, [ia, mask = std::move(mask)](Tape& t, std::span<const double> g) {
    auto ga = t.grad_target(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

Var multi_head_attention(Var q, Var k, Var v, std::size_t seq_len, std::size_t n_heads, double dropout_rate,
                         std::vector<Tensor>* capture) {
  Tape& tape = same_tape("multi_head_attention", {q, k, v});
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  const auto rows = qv.rows(), d = qv.cols();
  if (kv.rows() != rows || vv.rows() != rows || kv.cols() != d || vv.cols() != d) {
    shape_error("multi_head_attention", qv, kv);
  }
  if (seq_len == 0 || rows % seq_len != 0) throw InvalidArgument("multi_head_attention: rows not a multiple of seq_len");
  if (n_heads == 0 || d % n_heads != 0) throw InvalidArgument("multi_head_attention: d_model not divisible by n_heads");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw InvalidArgument("dropout rate must lie in [0, 1)");
  const auto n_seq = rows / seq_len;
  const auto dh = d / n_heads;
  const auto L = seq_len;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool use_dropout = tape.training() && dropout_rate > 0.0;

  // weights[(s * n_heads + h) * L * L ...]: softmax output; masks likewise.
  std::vector<double> weights(n_seq * n_heads * L * L);
  std::vector<double> masks(use_dropout ? weights.size() : 0);
  Tensor out = Tensor::zeros(rows, d);
  std::vector<double> scores(L);
  if (capture) capture->clear();

  for (std::size_t s = 0; s < n_seq; ++s) {
    const auto base = s * L;
    for (std::size_t h = 0; h < n_heads; ++h) {
      double* w = &weights[(s * n_heads + h) * L * L];
      const auto col = h * dh;
      for (std::size_t i = 0; i < L; ++i) {
        const double* qi = &qv.data()[(base + i) * d + col];
        for (std::size_t j = 0; j < L; ++j) {
          const double* kj = &kv.data()[(base + j) * d + col];
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          scores[j] = dot * inv_sqrt;
        }
        const auto p = apply_softmax(scores);
        std::copy(p.begin(), p.end(), w + i * L);
      }
      if (capture) capture->push_back(Tensor::matrix(L, L, std::vector<double>(w, w + L * L)));
      double* mk = use_dropout ? &masks[(s * n_heads + h) * L * L] : nullptr;
      if (mk) {
        fill_dropout_mask(std::span(mk, L * L), dropout_rate, tape.dropout_rng());
      }
      for (std::size_t i = 0; i < L; ++i) {
        double* oi = &out.data()[(base + i) * d + col];
        for (std::size_t j = 0; j < L; ++j) {
          const double a = w[i * L + j] * (mk ? mk[i * L + j] : 1.0);
          if (a == 0.0) continue;
          const double* vj = &vv.data()[(base + j) * d + col];
          for (std::size_t c = 0; c < dh; ++c) oi[c] += a * vj[c];
        }
      }
    }
  }

  const auto iq = q.id(), ik = k.id(), iv = v.id();
  return tape.record(
      "multi_head_attention", std::move(out), {q, k, v},
      [iq, ik, iv, n_seq, n_heads, L, d, dh, inv_sqrt, weights = std::move(weights), masks = std::move(masks)](
          Tape& t, std::span<const double> g) {
        const Tensor& qv = t.value(iq);
        const Tensor& kv = t.value(ik);
        const Tensor& vv = t.value(iv);
        auto gq = t.grad_target(iq);
        auto gk = t.grad_target(ik);
        auto gv = t.grad_target(iv);
        std::vector<double> dp(L * L);
        for (std::size_t s = 0; s < n_seq; ++s) {
          const auto base = s * L;
          for (std::size_t h = 0; h < n_heads; ++h) {
            const double* w = &weights[(s * n_heads + h) * L * L];
            const double* mk = masks.empty() ? nullptr : &masks[(s * n_heads + h) * L * L];
            const auto col = h * dh;
            // dA = dO V^T, dV += A^T dO, with A the dropped-out weights.
            for (std::size_t i = 0; i < L; ++i) {
              const double* gi = &g[(base + i) * d + col];
              for (std::size_t j = 0; j < L; ++j) {
                const double* vj = &vv.data()[(base + j) * d + col];
                double dot = 0.0;
                for (std::size_t c = 0; c < dh; ++c) dot += gi[c] * vj[c];
                const double m = mk ? mk[i * L + j] : 1.0;
                dp[i * L + j] = dot * m;
                if (!gv.empty()) {
                  const double a = w[i * L + j] * m;
                  double* gvj = &gv[(base + j) * d + col];
                  for (std::size_t c = 0; c < dh; ++c) gvj[c] += a * gi[c];
                }
              }
            }
            // Softmax backward, then score gradients into Q and K.
            for (std::size_t i = 0; i < L; ++i) {
              double dot = 0.0;
              for (std::size_t j = 0; j < L; ++j) dot += dp[i * L + j] * w[i * L + j];
              for (std::size_t j = 0; j < L; ++j) {
                const double ds = w[i * L + j] * (dp[i * L + j] - dot) * inv_sqrt;
                if (ds == 0.0) continue;
                if (!gq.empty()) {
                  const double* kj = &kv.data()[(base + j) * d + col];
                  double* gqi = &gq[(base + i) * d + col];
                  for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                }
                if (!gk.empty()) {
                  const double* qi = &qv.data()[(base + i) * d + col];
                  double* gkj = &gk[(base + j) * d + col];
                  for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

}  // namespace camp::tensor
