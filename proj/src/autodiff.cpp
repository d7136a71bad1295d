#include "lmnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gemm.hpp"

namespace lmnet {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, bool rg) : shape(std::move(s)), values(shape_size(shape), 0.0) {
  set_requires_grad(rg);
}

Tensor::Tensor(Shape s, std::vector<double> v, bool rg) : shape(std::move(s)), values(std::move(v)) {
  if (shape_size(shape) != values.size())
    throw std::invalid_argument("tensor shape " + shape_string(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  set_requires_grad(rg);
}

void Tensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

void Tensor::set_requires_grad(bool on) {
  requires_grad = on;
  grad.assign(on ? values.size() : 0, 0.0);
}

// ---------------------------------------------------------------------------
// Graph

Var Graph::push_leaf(std::string_view op, const Tensor* value, Tensor* sink) {
  nodes_.push_back(Node{std::string(op), {}, value, sink, {}});
  return Var{nodes_.size() - 1};
}

Var Graph::parameter(Tensor& t) {
  if (t.requires_grad && t.grad.size() != t.values.size()) t.grad.assign(t.values.size(), 0.0);
  return push_leaf("parameter", &t, t.requires_grad ? &t : nullptr);
}

Var Graph::constant(const Tensor& t) { return push_leaf("constant", &t, nullptr); }

Var Graph::input(Tensor t) {
  t.set_requires_grad(false);
  owned_.push_back(std::move(t));
  return push_leaf("input", &owned_.back(), nullptr);
}

Var Graph::variable(Tensor t) {
  t.set_requires_grad(true);
  owned_.push_back(std::move(t));
  return push_leaf("variable", &owned_.back(), &owned_.back());
}

Var Graph::record(std::string_view op, std::vector<Var> inputs, Tensor out, BackwardFn backward) {
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    if (!std::isfinite(out.values[i]))
      throw NumericError("non-finite value produced by " + std::string(op) + " at index " +
                         std::to_string(i));
  }
  const bool needs_grad =
      std::any_of(inputs.begin(), inputs.end(), [&](Var v) { return requires_grad(v); });
  out.set_requires_grad(needs_grad);
  owned_.push_back(std::move(out));
  Tensor* t = &owned_.back();
  nodes_.push_back(
      Node{std::string(op), std::move(inputs), t, needs_grad ? t : nullptr,
           needs_grad ? std::move(backward) : BackwardFn{}});
  return Var{nodes_.size() - 1};
}

std::span<double> Graph::grad(Var v) {
  Tensor* sink = nodes_.at(v.id).grad_sink;
  return sink ? std::span<double>(sink->grad) : std::span<double>();
}

std::span<const double> Graph::grad(Var v) const {
  const Tensor* sink = nodes_.at(v.id).grad_sink;
  return sink ? std::span<const double>(sink->grad) : std::span<const double>();
}

void Graph::backward(Var loss) {
  if (value(loss).size() != 1)
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                shape_string(shape(loss)));
  for (Node& n : nodes_) {
    if (n.backward && n.grad_sink) n.grad_sink->zero_grad();
  }
  auto seed = grad(loss);
  if (seed.empty()) return;
  seed[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && n.grad_sink) n.backward(*this);
  }
}

// ---------------------------------------------------------------------------
// Operations

namespace {

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_string(a) +
                              " and " + shape_string(b));
}

void require_rank(std::string_view op, const Shape& s, std::size_t rank) {
  if (s.size() != rank)
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_string(s));
}

}  // namespace

Var linear(Graph& g, Var input, Var weight, Var bias) {
  const Shape& xs = g.shape(input);
  const Shape& ws = g.shape(weight);
  const Shape& bs = g.shape(bias);
  require_rank("linear", xs, 2);
  require_rank("linear", ws, 2);
  if (xs[1] != ws[0]) shape_error("linear", xs, ws);
  if (bs.size() != 1 || bs[0] != ws[1]) shape_error("linear", ws, bs);
  const std::size_t rows = xs[0], din = xs[1], dout = ws[1];

  Tensor out({rows, dout});
  detail::gemm_nn(g.value(input).values.data(), g.value(weight).values.data(), out.values.data(),
                  rows, din, dout, false);
  const auto& b = g.value(bias).values;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < dout; ++j) out.values[r * dout + j] += b[j];

  const std::size_t out_id = g.size();
  return g.record("linear", {input, weight, bias}, std::move(out),
                  [=](Graph& gg) {
                    const auto dy = gg.grad(Var{out_id});
                    if (auto dx = gg.grad(input); !dx.empty())
                      detail::gemm_nt(dy.data(), gg.value(weight).values.data(), dx.data(), rows,
                                      dout, din, true);
                    if (auto dw = gg.grad(weight); !dw.empty())
                      detail::gemm_tn(gg.value(input).values.data(), dy.data(), dw.data(), rows,
                                      din, dout, true);
                    if (auto db = gg.grad(bias); !db.empty())
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < dout; ++j) db[j] += dy[r * dout + j];
                  });
}

Var add_bias(Graph& g, Var input, Var bias) {
  const Shape& xs = g.shape(input);
  const Shape& bs = g.shape(bias);
  if (xs.empty() || bs.size() != 1 || bs[0] != xs.back()) shape_error("add_bias", xs, bs);
  const std::size_t c = bs[0];
  const std::size_t rows = g.value(input).size() / c;
  Tensor out = g.value(input);
  out.requires_grad = false;
  out.grad.clear();
  const auto& b = g.value(bias).values;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out.values[r * c + j] += b[j];
  const std::size_t out_id = g.size();
  return g.record("add_bias", {input, bias}, std::move(out), [=](Graph& gg) {
    const auto dy = gg.grad(Var{out_id});
    if (auto dx = gg.grad(input); !dx.empty())
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    if (auto db = gg.grad(bias); !db.empty())
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) db[j] += dy[r * c + j];
  });
}

namespace {

// Elementwise op with derivative expressed through the input value.
template <typename Fwd, typename Deriv>
Var elementwise(Graph& g, std::string_view op, Var x, Fwd fwd, Deriv deriv) {
  const Tensor& in = g.value(x);
  Tensor out(in.shape);
  for (std::size_t i = 0; i < in.size(); ++i) out.values[i] = fwd(in.values[i]);
  const std::size_t out_id = g.size();
  return g.record(op, {x}, std::move(out), [=](Graph& gg) {
    const auto dy = gg.grad(Var{out_id});
    auto dx = gg.grad(x);
    const auto& xv = gg.value(x).values;
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * deriv(xv[i]);
  });
}

}  // namespace

Var relu(Graph& g, Var input) {
  return elementwise(
      g, "relu", input, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Graph& g, Var input) {
  return elementwise(
      g, "softplus", input,
      [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

Var abs(Graph& g, Var input) {
  return elementwise(
      g, "abs", input, [](double v) { return std::fabs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var square(Graph& g, Var input) {
  return elementwise(
      g, "square", input, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var scale(Graph& g, Var input, double factor) {
  return elementwise(
      g, "scale", input, [factor](double v) { return v * factor; },
      [factor](double) { return factor; });
}

namespace {

enum class BinaryKind { add, sub, mul };

Var binary(Graph& g, std::string_view op, Var a, Var b, BinaryKind kind) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.shape != bv.shape) shape_error(op, av.shape, bv.shape);
  Tensor out(av.shape);
  for (std::size_t i = 0; i < av.size(); ++i) {
    switch (kind) {
      case BinaryKind::add: out.values[i] = av.values[i] + bv.values[i]; break;
      case BinaryKind::sub: out.values[i] = av.values[i] - bv.values[i]; break;
      case BinaryKind::mul: out.values[i] = av.values[i] * bv.values[i]; break;
    }
  }
  const std::size_t out_id = g.size();
  return g.record(op, {a, b}, std::move(out), [=](Graph& gg) {
    const auto dy = gg.grad(Var{out_id});
    auto da = gg.grad(a);
    auto db = gg.grad(b);
    const auto& avals = gg.value(a).values;
    const auto& bvals = gg.value(b).values;
    for (std::size_t i = 0; i < dy.size(); ++i) {
      switch (kind) {
        case BinaryKind::add:
          if (!da.empty()) da[i] += dy[i];
          if (!db.empty()) db[i] += dy[i];
          break;
        case BinaryKind::sub:
          if (!da.empty()) da[i] += dy[i];
          if (!db.empty()) db[i] -= dy[i];
          break;
        case BinaryKind::mul:
          if (!da.empty()) da[i] += dy[i] * bvals[i];
          if (!db.empty()) db[i] += dy[i] * avals[i];
          break;
      }
    }
  });
}

}  // namespace

Var add(Graph& g, Var a, Var b) { return binary(g, "add", a, b, BinaryKind::add); }
Var sub(Graph& g, Var a, Var b) { return binary(g, "sub", a, b, BinaryKind::sub); }
Var mul(Graph& g, Var a, Var b) { return binary(g, "mul", a, b, BinaryKind::mul); }

Var sum(Graph& g, Var input) {
  const auto& v = g.value(input).values;
  Tensor out({1}, std::vector<double>{std::accumulate(v.begin(), v.end(), 0.0)});
  const std::size_t out_id = g.size();
  return g.record("sum", {input}, std::move(out), [=](Graph& gg) {
    const double dy = gg.grad(Var{out_id})[0];
    for (double& d : gg.grad(input)) d += dy;
  });
}

Var mean(Graph& g, Var input) {
  const std::size_t n = g.value(input).size();
  if (n == 0) throw std::invalid_argument("mean of an empty tensor");
  return scale(g, sum(g, input), 1.0 / static_cast<double>(n));
}

Var reshape(Graph& g, Var input, Shape shape) {
  const Tensor& in = g.value(input);
  if (shape_size(shape) != in.size()) shape_error("reshape", in.shape, shape);
  Tensor out(std::move(shape), in.values);
  const std::size_t out_id = g.size();
  return g.record("reshape", {input}, std::move(out), [=](Graph& gg) {
    const auto dy = gg.grad(Var{out_id});
    auto dx = gg.grad(input);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

Var slice_columns(Graph& g, Var input, std::size_t begin, std::size_t end) {
  const Tensor& in = g.value(input);
  require_rank("slice_columns", in.shape, 2);
  const std::size_t rows = in.shape[0], cols = in.shape[1];
  if (begin >= end || end > cols)
    throw std::invalid_argument("slice_columns: range [" + std::to_string(begin) + ", " +
                                std::to_string(end) + ") outside " + shape_string(in.shape));
  const std::size_t w = end - begin;
  Tensor out({rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(in.values.begin() + static_cast<std::ptrdiff_t>(r * cols + begin), w,
                out.values.begin() + static_cast<std::ptrdiff_t>(r * w));
  const std::size_t out_id = g.size();
  return g.record("slice_columns", {input}, std::move(out), [=](Graph& gg) {
    const auto dy = gg.grad(Var{out_id});
    auto dx = gg.grad(input);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) dx[r * cols + begin + j] += dy[r * w + j];
  });
}

RunningStats::RunningStats(std::size_t channels)
    : mean({channels}), var({channels}, std::vector<double>(channels, 1.0)) {}

namespace {

Var batch_norm_impl(Graph& g, Var input, Var gamma, Var beta, const RunningStats& stats,
                    RunningStats* update, Mode mode, const BatchNormOptions& options) {
  const Tensor& in = g.value(input);
  if (in.shape.empty()) throw std::invalid_argument("batch_norm: scalar input");
  const std::size_t c = in.shape.back();
  const std::size_t rows = in.size() / c;
  const Shape cs{c};
  if (g.shape(gamma) != cs) shape_error("batch_norm", in.shape, g.shape(gamma));
  if (g.shape(beta) != cs) shape_error("batch_norm", in.shape, g.shape(beta));
  if (stats.mean.size() != c || stats.var.size() != c)
    shape_error("batch_norm", in.shape, stats.mean.shape);
  if (mode == Mode::train && rows < 2)
    throw std::invalid_argument("batch_norm: train mode needs at least 2 rows, got " +
                                std::to_string(rows));

  std::vector<double> mu(c, 0.0), var(c, 0.0);
  if (mode == Mode::train) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) mu[j] += in.values[r * c + j];
    for (double& m : mu) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const double d = in.values[r * c + j] - mu[j];
        var[j] += d * d;
      }
    for (double& v : var) v /= static_cast<double>(rows);
    if (update) {
      for (std::size_t j = 0; j < c; ++j) {
        update->mean.values[j] =
            options.momentum * update->mean.values[j] + (1.0 - options.momentum) * mu[j];
        update->var.values[j] =
            options.momentum * update->var.values[j] + (1.0 - options.momentum) * var[j];
      }
    }
  } else {
    mu = stats.mean.values;
    var = stats.var.values;
  }

  std::vector<double> inv_std(c);
  for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + options.epsilon);

  const auto& gm = g.value(gamma).values;
  const auto& bt = g.value(beta).values;
  std::vector<double> xhat(in.size());
  Tensor out(in.shape);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t i = r * c + j;
      xhat[i] = (in.values[i] - mu[j]) * inv_std[j];
      out.values[i] = gm[j] * xhat[i] + bt[j];
    }

  const std::size_t out_id = g.size();
  const bool train = mode == Mode::train;
  return g.record(
      "batch_norm", {input, gamma, beta}, std::move(out),
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gg) {
        const auto dy = gg.grad(Var{out_id});
        std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            sum_dy[j] += dy[r * c + j];
            sum_dy_xhat[j] += dy[r * c + j] * xhat[r * c + j];
          }
        if (auto dg = gg.grad(gamma); !dg.empty())
          for (std::size_t j = 0; j < c; ++j) dg[j] += sum_dy_xhat[j];
        if (auto db = gg.grad(beta); !db.empty())
          for (std::size_t j = 0; j < c; ++j) db[j] += sum_dy[j];
        auto dx = gg.grad(input);
        if (dx.empty()) return;
        const auto& gmv = gg.value(gamma).values;
        const double inv_n = 1.0 / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t i = r * c + j;
            const double k = gmv[j] * inv_std[j];
            if (train) {
              dx[i] += k * (dy[i] - sum_dy[j] * inv_n - xhat[i] * sum_dy_xhat[j] * inv_n);
            } else {
              dx[i] += k * dy[i];
            }
          }
      });
}

}  // namespace

Var batch_norm(Graph& g, Var input, Var gamma, Var beta, RunningStats& stats, Mode mode,
               const BatchNormOptions& options) {
  return batch_norm_impl(g, input, gamma, beta, stats, &stats, mode, options);
}

Var batch_norm(Graph& g, Var input, Var gamma, Var beta, const RunningStats& stats,
               const BatchNormOptions& options) {
  return batch_norm_impl(g, input, gamma, beta, stats, nullptr, Mode::eval, options);
}

Var maxpool_over_points(Graph& g, Var input, std::size_t segments) {
  const Tensor& in = g.value(input);
  require_rank("maxpool_over_points", in.shape, 2);
  const std::size_t total = in.shape[0], d = in.shape[1];
  if (segments == 0 || total == 0 || total % segments != 0)
    throw std::invalid_argument("maxpool_over_points: cannot split " + shape_string(in.shape) +
                                " into " + std::to_string(segments) + " non-empty point sets");
  const std::size_t n = total / segments;
  Tensor out({segments, d});
  std::vector<std::size_t> argmax(segments * d);
  for (std::size_t s = 0; s < segments; ++s) {
    for (std::size_t j = 0; j < d; ++j) {
      std::size_t best = s * n;
      double bv = in.values[best * d + j];
      for (std::size_t r = s * n + 1; r < (s + 1) * n; ++r) {
        const double v = in.values[r * d + j];
        if (v > bv) {
          bv = v;
          best = r;
        }
      }
      out.values[s * d + j] = bv;
      argmax[s * d + j] = best;
    }
  }
  const std::size_t out_id = g.size();
  return g.record("maxpool_over_points", {input}, std::move(out),
                  [=, argmax = std::move(argmax)](Graph& gg) {
                    const auto dy = gg.grad(Var{out_id});
                    auto dx = gg.grad(input);
                    for (std::size_t s = 0; s < segments; ++s)
                      for (std::size_t j = 0; j < d; ++j)
                        dx[argmax[s * d + j] * d + j] += dy[s * d + j];
                  });
}

namespace {

struct ConvGeometry {
  std::size_t batch, height, width, cin, kh, kw, cout, stride, pad_h, pad_w, out_h, out_w;
  std::size_t patch() const { return kh * kw * cin; }
  std::size_t out_pixels() const { return batch * out_h * out_w; }
};

std::vector<double> im2col(const std::vector<double>& x, const ConvGeometry& cg) {
  std::vector<double> cols(cg.out_pixels() * cg.patch(), 0.0);
  std::size_t row = 0;
  for (std::size_t b = 0; b < cg.batch; ++b)
    for (std::size_t oy = 0; oy < cg.out_h; ++oy)
      for (std::size_t ox = 0; ox < cg.out_w; ++ox, ++row) {
        double* dst = cols.data() + row * cg.patch();
        for (std::size_t dy = 0; dy < cg.kh; ++dy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * cg.stride + dy) -
                                    static_cast<std::ptrdiff_t>(cg.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(cg.height)) continue;
          for (std::size_t dx = 0; dx < cg.kw; ++dx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * cg.stride + dx) -
                                      static_cast<std::ptrdiff_t>(cg.pad_w);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(cg.width)) continue;
            const double* src =
                x.data() + ((b * cg.height + static_cast<std::size_t>(iy)) * cg.width +
                            static_cast<std::size_t>(ix)) * cg.cin;
            std::copy_n(src, cg.cin, dst + (dy * cg.kw + dx) * cg.cin);
          }
        }
      }
  return cols;
}

void col2im_add(const std::vector<double>& cols, const ConvGeometry& cg, std::span<double> dx) {
  std::size_t row = 0;
  for (std::size_t b = 0; b < cg.batch; ++b)
    for (std::size_t oy = 0; oy < cg.out_h; ++oy)
      for (std::size_t ox = 0; ox < cg.out_w; ++ox, ++row) {
        const double* src = cols.data() + row * cg.patch();
        for (std::size_t dy = 0; dy < cg.kh; ++dy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * cg.stride + dy) -
                                    static_cast<std::ptrdiff_t>(cg.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(cg.height)) continue;
          for (std::size_t kx = 0; kx < cg.kw; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * cg.stride + kx) -
                                      static_cast<std::ptrdiff_t>(cg.pad_w);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(cg.width)) continue;
            double* dst = dx.data() + ((b * cg.height + static_cast<std::size_t>(iy)) * cg.width +
                                       static_cast<std::size_t>(ix)) * cg.cin;
            const double* s = src + (dy * cg.kw + kx) * cg.cin;
            for (std::size_t c = 0; c < cg.cin; ++c) dst[c] += s[c];
          }
        }
      }
}

}  // namespace

Var conv2d(Graph& g, Var input, Var kernel, std::size_t stride) {
  const Shape& xs = g.shape(input);
  const Shape& ks = g.shape(kernel);
  require_rank("conv2d", xs, 4);
  require_rank("conv2d", ks, 4);
  if (ks[2] != xs[3]) shape_error("conv2d", xs, ks);
  if (ks[0] % 2 == 0 || ks[1] % 2 == 0)
    throw std::invalid_argument("conv2d: kernel extents must be odd, got " + shape_string(ks));
  if (stride != 1 && stride != 2)
    throw std::invalid_argument("conv2d: stride must be 1 or 2, got " + std::to_string(stride));
  ConvGeometry cg{};
  cg.batch = xs[0];
  cg.height = xs[1];
  cg.width = xs[2];
  cg.cin = xs[3];
  cg.kh = ks[0];
  cg.kw = ks[1];
  cg.cout = ks[3];
  cg.stride = stride;
  cg.pad_h = (cg.kh - 1) / 2;
  cg.pad_w = (cg.kw - 1) / 2;
  cg.out_h = (cg.height + stride - 1) / stride;
  cg.out_w = (cg.width + stride - 1) / stride;

  const std::vector<double> cols = im2col(g.value(input).values, cg);
  Tensor out({cg.batch, cg.out_h, cg.out_w, cg.cout});
  detail::gemm_nn(cols.data(), g.value(kernel).values.data(), out.values.data(), cg.out_pixels(),
                  cg.patch(), cg.cout, false);

  const std::size_t out_id = g.size();
  return g.record("conv2d", {input, kernel}, std::move(out), [=](Graph& gg) {
    const auto dy = gg.grad(Var{out_id});
    if (auto dk = gg.grad(kernel); !dk.empty()) {
      const std::vector<double> c2 = im2col(gg.value(input).values, cg);
      detail::gemm_tn(c2.data(), dy.data(), dk.data(), cg.out_pixels(), cg.patch(), cg.cout, true);
    }
    if (auto dx = gg.grad(input); !dx.empty()) {
      std::vector<double> dcols(cg.out_pixels() * cg.patch());
      detail::gemm_nt(dy.data(), gg.value(kernel).values.data(), dcols.data(), cg.out_pixels(),
                      cg.cout, cg.patch(), false);
      col2im_add(dcols, cg, dx);
    }
  });
}

// ---------------------------------------------------------------------------
// Adam

AdamState::AdamState(std::size_t n, AdamOptions opts)
    : first_moment(n, 0.0), second_moment(n, 0.0), options(opts) {}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw std::invalid_argument("adam_step: length mismatch (params " +
                                std::to_string(params.size()) + ", grads " +
                                std::to_string(grads.size()) + ", moments " +
                                std::to_string(state.first_moment.size()) + ")");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw NumericError("adam_step: non-finite gradient at index " + std::to_string(i));

  const AdamOptions& o = state.options;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = o.beta1 * m + (1.0 - o.beta1) * grads[i];
    v = o.beta2 * v + (1.0 - o.beta2) * grads[i] * grads[i];
    params[i] -= o.learning_rate * (m / c1) / (std::sqrt(v / c2) + o.epsilon);
  }
}

Adam::Adam(std::vector<Tensor*> params, AdamOptions options) : params_(std::move(params)) {
  states_.reserve(params_.size());
  for (Tensor* p : params_) {
    if (!p->requires_grad) p->set_requires_grad(true);
    states_.emplace_back(p->size(), options);
  }
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i)
    adam_step(params_[i]->values, params_[i]->grad, states_[i]);
}

void Adam::zero_grad() {
  for (Tensor* p : params_) p->zero_grad();
}

double Adam::grad_norm() const {
  double s = 0.0;
  for (const Tensor* p : params_)
    for (double v : p->grad) s += v * v;
  return std::sqrt(s);
}

std::uint64_t Adam::step_count() const { return states_.empty() ? 0 : states_.front().step_count; }

}  // namespace lmnet
