#include "cabin/ops.hpp"
#include "cabin/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>

#include <Eigen/Core>

namespace cabin {

namespace {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

template <typename S>
using Node = typename Tensor<S>::Node;

void require_rank(const Shape& shape, std::size_t rank, const char* op) {
  if (shape.size() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(shape));
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

// col is [C*9, H*W]; rows ordered (c, ky, kx) to match the weight layout [F, C, 3, 3].
template <typename S>
void im2col3x3(const S* x, Index channels, Index height, Index width, S* col) {
  const Index plane = height * width;
  for (Index c = 0; c < channels; ++c) {
    const S* src = x + c * plane;
    for (Index ky = 0; ky < 3; ++ky) {
      for (Index kx = 0; kx < 3; ++kx) {
        S* row = col + ((c * 3 + ky) * 3 + kx) * plane;
        for (Index y = 0; y < height; ++y) {
          const Index iy = y + ky - 1;
          S* dst = row + y * width;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + width, S(0));
            continue;
          }
          const S* line = src + iy * width;
          for (Index xx = 0; xx < width; ++xx) {
            const Index ix = xx + kx - 1;
            dst[xx] = (ix < 0 || ix >= width) ? S(0) : line[ix];
          }
        }
      }
    }
  }
}

template <typename S>
void col2im3x3(const S* col, Index channels, Index height, Index width, S* dx) {
  const Index plane = height * width;
  for (Index c = 0; c < channels; ++c) {
    S* dst = dx + c * plane;
    for (Index ky = 0; ky < 3; ++ky) {
      for (Index kx = 0; kx < 3; ++kx) {
        const S* row = col + ((c * 3 + ky) * 3 + kx) * plane;
        for (Index y = 0; y < height; ++y) {
          const Index iy = y + ky - 1;
          if (iy < 0 || iy >= height) continue;
          const S* src = row + y * width;
          S* line = dst + iy * width;
          for (Index xx = 0; xx < width; ++xx) {
            const Index ix = xx + kx - 1;
            if (ix >= 0 && ix < width) line[ix] += src[xx];
          }
        }
      }
    }
  }
}

template <typename S, typename F, typename D>
Tensor<S> unary(const Tensor<S>& input, F forward, D derivative) {
  std::vector<S> out(input.data().size());
  std::transform(input.data().begin(), input.data().end(), out.begin(), forward);
  return Tensor<S>::from_op(input.shape(), std::move(out), {input}, [derivative](Node<S>& self) {
    Node<S>& in = *self.parents[0];
    S* gin = grad_sink<S>(in);
    if (!gin) return;
    for (std::size_t i = 0; i < self.data.size(); ++i)
      gin[i] += self.grad[i] * derivative(in.data[i], self.data[i]);
  });
}

}  // namespace

template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias) {
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index f = weight.dim(0);
  if (weight.dim(1) != c)
    throw ShapeError("conv2d: input has " + std::to_string(c) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  if (weight.dim(2) != 3 || weight.dim(3) != 3) throw ShapeError("conv2d: kernel must be 3x3");
  if (bias.shape() != Shape{f}) throw ShapeError("conv2d: bias must have shape [" + std::to_string(f) + "]");

  const Index plane = h * w, k = c * 9;
  std::vector<S> out(static_cast<std::size_t>(n * f * plane));
  std::vector<S> col(static_cast<std::size_t>(k * plane));
  ConstMatMap<S> wmat(weight.data().data(), f, k);
  ConstMatMap<S> colmat(col.data(), k, plane);
  for (Index i = 0; i < n; ++i) {
    im2col3x3(input.data().data() + i * c * plane, c, h, w, col.data());
    MatMap<S> omat(out.data() + i * f * plane, f, plane);
    omat.noalias() = wmat * colmat;
    for (Index j = 0; j < f; ++j) omat.row(j).array() += bias[j];
  }

  return Tensor<S>::from_op({n, f, h, w}, std::move(out), {input, weight, bias},
                            [n, c, h, w, f](Node<S>& self) {
    Node<S>& in = *self.parents[0];
    Node<S>& wt = *self.parents[1];
    Node<S>& bs = *self.parents[2];
    const Index plane = h * w, k = c * 9;
    S* gin = grad_sink<S>(in);
    S* gw = grad_sink<S>(wt);
    S* gb = grad_sink<S>(bs);
    std::vector<S> col(static_cast<std::size_t>(k * plane));
    std::vector<S> dcol(gin ? col.size() : 0);
    ConstMatMap<S> wmat(wt.data.data(), f, k);
    for (Index i = 0; i < n; ++i) {
      ConstMatMap<S> gout(self.grad.data() + i * f * plane, f, plane);
      if (gb)
        for (Index j = 0; j < f; ++j) {
          const S* g = self.grad.data() + (i * f + j) * plane;
          gb[j] += std::accumulate(g, g + plane, S(0));
        }
      if (gw) {
        im2col3x3(in.data.data() + i * c * plane, c, h, w, col.data());
        MatMap<S> gwmat(gw, f, k);
        gwmat.noalias() += gout * ConstMatMap<S>(col.data(), k, plane).transpose();
      }
      if (gin) {
        MatMap<S> dcolmat(dcol.data(), k, plane);
        dcolmat.noalias() = wmat.transpose() * gout;
        col2im3x3(dcol.data(), c, h, w, gin + i * c * plane);
      }
    }
  });
}

namespace {
thread_local DecisionTrace* active_trace = nullptr;
}

DecisionTrace::DecisionTrace() : previous_(active_trace) { active_trace = this; }
DecisionTrace::~DecisionTrace() { active_trace = previous_; }
bool DecisionTrace::active() { return active_trace != nullptr; }

void DecisionTrace::record(std::uint64_t value) {
  if (active_trace) active_trace->digest_ = mix64(active_trace->digest_ ^ value);
}

template <typename S>
std::pair<Tensor<S>, PoolIndices> maxpool2x2(const Tensor<S>& input) {
  require_rank(input.shape(), 4, "maxpool2x2");
  const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 || w % 2) throw ShapeError("maxpool2x2: odd spatial size " + to_string(input.shape()));
  const Index oh = h / 2, ow = w / 2;
  PoolIndices idx{input.shape(), {n, c, oh, ow}, {}};
  idx.indices.resize(static_cast<std::size_t>(n * c * oh * ow));
  std::vector<S> out(idx.indices.size());
  const S* x = input.data().data();
  for (Index p = 0; p < n * c; ++p) {
    const S* src = x + p * h * w;
    for (Index y = 0; y < oh; ++y) {
      for (Index xx = 0; xx < ow; ++xx) {
        // Candidates visited in ascending flat order; strict > keeps the lowest index on ties.
        const Index base = 2 * y * w + 2 * xx;
        const Index cand[4] = {base, base + 1, base + w, base + w + 1};
        Index best = cand[0];
        for (int q = 1; q < 4; ++q)
          if (src[cand[q]] > src[best]) best = cand[q];
        const std::size_t o = static_cast<std::size_t>((p * oh + y) * ow + xx);
        out[o] = src[best];
        idx.indices[o] = static_cast<std::int32_t>(best);
      }
    }
  }
  if (DecisionTrace::active())
    for (std::int32_t i : idx.indices) DecisionTrace::record(static_cast<std::uint64_t>(i));
  auto shared = std::make_shared<std::vector<std::int32_t>>(idx.indices);
  Tensor<S> result = Tensor<S>::from_op(idx.output_shape, std::move(out), {input},
                                        [shared, h, w, oh, ow](Node<S>& self) {
    S* gin = grad_sink<S>(*self.parents[0]);
    if (!gin) return;
    const Index pooled = oh * ow;
    for (std::size_t o = 0; o < shared->size(); ++o) {
      const Index p = static_cast<Index>(o) / pooled;
      gin[p * h * w + (*shared)[o]] += self.grad[o];
    }
  });
  return {std::move(result), std::move(idx)};
}

template <typename S>
Tensor<S> maxunpool2x2(const Tensor<S>& input, const PoolIndices& indices) {
  require_rank(input.shape(), 4, "maxunpool2x2");
  if (input.shape() != indices.output_shape)
    throw ShapeError("maxunpool2x2: input " + to_string(input.shape()) + " does not match pooled shape " +
                     to_string(indices.output_shape));
  const Shape out_shape = indices.input_shape;
  const Index plane_in = out_shape[2] * out_shape[3];
  const Index plane_out = indices.output_shape[2] * indices.output_shape[3];
  std::vector<S> out(static_cast<std::size_t>(numel(out_shape)), S(0));
  auto shared = std::make_shared<std::vector<std::int32_t>>(indices.indices);
  for (std::size_t o = 0; o < shared->size(); ++o) {
    const Index p = static_cast<Index>(o) / plane_out;
    out[static_cast<std::size_t>(p * plane_in + (*shared)[o])] = input[static_cast<Index>(o)];
  }
  return Tensor<S>::from_op(out_shape, std::move(out), {input},
                            [shared, plane_in, plane_out](Node<S>& self) {
    S* gin = grad_sink<S>(*self.parents[0]);
    if (!gin) return;
    for (std::size_t o = 0; o < shared->size(); ++o) {
      const Index p = static_cast<Index>(o) / plane_out;
      gin[o] += self.grad[static_cast<std::size_t>(p * plane_in + (*shared)[o])];
    }
  });
}

template <typename S>
Tensor<S> upsample_nearest2x(const Tensor<S>& input) {
  require_rank(input.shape(), 4, "upsample_nearest2x");
  const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index oh = 2 * h, ow = 2 * w;
  std::vector<S> out(static_cast<std::size_t>(n * c * oh * ow));
  for (Index p = 0; p < n * c; ++p)
    for (Index y = 0; y < oh; ++y)
      for (Index x = 0; x < ow; ++x)
        out[static_cast<std::size_t>((p * oh + y) * ow + x)] = input[(p * h + y / 2) * w + x / 2];
  return Tensor<S>::from_op({n, c, oh, ow}, std::move(out), {input}, [n, c, h, w](Node<S>& self) {
    S* gin = grad_sink<S>(*self.parents[0]);
    if (!gin) return;
    const Index oh = 2 * h, ow = 2 * w;
    for (Index p = 0; p < n * c; ++p)
      for (Index y = 0; y < oh; ++y)
        for (Index x = 0; x < ow; ++x)
          gin[(p * h + y / 2) * w + x / 2] += self.grad[static_cast<std::size_t>((p * oh + y) * ow + x)];
  });
}

template <typename S>
Tensor<S> avgpool2x2(const Tensor<S>& input) {
  require_rank(input.shape(), 4, "avgpool2x2");
  const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw ShapeError("avgpool2x2: input too small " + to_string(input.shape()));
  std::vector<S> out(static_cast<std::size_t>(n * c * oh * ow));
  const S* x = input.data().data();
  for (Index p = 0; p < n * c; ++p)
    for (Index y = 0; y < oh; ++y)
      for (Index xx = 0; xx < ow; ++xx) {
        const S* s = x + p * h * w + 2 * y * w + 2 * xx;
        out[static_cast<std::size_t>((p * oh + y) * ow + xx)] = (s[0] + s[1] + s[w] + s[w + 1]) * S(0.25);
      }
  return Tensor<S>::from_op({n, c, oh, ow}, std::move(out), {input}, [n, c, h, w, oh, ow](Node<S>& self) {
    S* gin = grad_sink<S>(*self.parents[0]);
    if (!gin) return;
    for (Index p = 0; p < n * c; ++p)
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) {
          const S g = self.grad[static_cast<std::size_t>((p * oh + y) * ow + xx)] * S(0.25);
          S* d = gin + p * h * w + 2 * y * w + 2 * xx;
          d[0] += g;
          d[1] += g;
          d[w] += g;
          d[w + 1] += g;
        }
  });
}

template <typename S>
Tensor<S> batchnorm(const Tensor<S>& input, const Tensor<S>& gamma, const Tensor<S>& beta,
                    BatchNormStats<S>& stats, BatchNormMode mode, double eps, double momentum) {
  require_rank(input.shape(), 4, "batchnorm");
  const Index n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw ShapeError("batchnorm: affine parameters must have shape [" + std::to_string(c) + "]");
  if (static_cast<Index>(stats.running_mean.size()) != c || static_cast<Index>(stats.running_var.size()) != c)
    throw ShapeError("batchnorm: running statistics sized for a different channel count");
  if (mode == BatchNormMode::Train && n < 2)
    throw ShapeError("batchnorm: train mode needs a batch of at least 2");

  const Index count = n * plane;
  std::vector<S> out(input.data().size());
  auto normalized = std::make_shared<std::vector<S>>(input.data().size());
  auto inv_std = std::make_shared<std::vector<S>>(static_cast<std::size_t>(c));
  const S* x = input.data().data();

  for (Index ch = 0; ch < c; ++ch) {
    double mu, var;
    if (mode == BatchNormMode::Train) {
      double acc = 0;
      for (Index i = 0; i < n; ++i)
        for (Index q = 0; q < plane; ++q) acc += x[(i * c + ch) * plane + q];
      mu = acc / static_cast<double>(count);
      double sq = 0;
      for (Index i = 0; i < n; ++i)
        for (Index q = 0; q < plane; ++q) {
          const double d = x[(i * c + ch) * plane + q] - mu;
          sq += d * d;
        }
      var = sq / static_cast<double>(count);
      const double unbiased = sq / static_cast<double>(count - 1);
      auto& rm = stats.running_mean[static_cast<std::size_t>(ch)];
      auto& rv = stats.running_var[static_cast<std::size_t>(ch)];
      rm = static_cast<S>((1.0 - momentum) * rm + momentum * mu);
      rv = static_cast<S>((1.0 - momentum) * rv + momentum * unbiased);
    } else {
      mu = stats.running_mean[static_cast<std::size_t>(ch)];
      var = stats.running_var[static_cast<std::size_t>(ch)];
    }
    const S is = static_cast<S>(1.0 / std::sqrt(var + eps));
    (*inv_std)[static_cast<std::size_t>(ch)] = is;
    const S g = gamma[ch], b = beta[ch], m = static_cast<S>(mu);
    for (Index i = 0; i < n; ++i)
      for (Index q = 0; q < plane; ++q) {
        const std::size_t o = static_cast<std::size_t>((i * c + ch) * plane + q);
        const S xh = (x[o] - m) * is;
        (*normalized)[o] = xh;
        out[o] = g * xh + b;
      }
  }

  const bool train = mode == BatchNormMode::Train;
  return Tensor<S>::from_op(input.shape(), std::move(out), {input, gamma, beta},
                            [normalized, inv_std, n, c, plane, train](Node<S>& self) {
    S* gin = grad_sink<S>(*self.parents[0]);
    S* gg = grad_sink<S>(*self.parents[1]);
    S* gbeta = grad_sink<S>(*self.parents[2]);
    const auto& gamma_data = self.parents[1]->data;
    const double m = static_cast<double>(n * plane);
    for (Index ch = 0; ch < c; ++ch) {
      double sum_dy = 0, sum_dy_xh = 0;
      for (Index i = 0; i < n; ++i)
        for (Index q = 0; q < plane; ++q) {
          const std::size_t o = static_cast<std::size_t>((i * c + ch) * plane + q);
          sum_dy += self.grad[o];
          sum_dy_xh += static_cast<double>(self.grad[o]) * (*normalized)[o];
        }
      if (gg) gg[ch] += static_cast<S>(sum_dy_xh);
      if (gbeta) gbeta[ch] += static_cast<S>(sum_dy);
      if (!gin) continue;
      const double scale = static_cast<double>(gamma_data[static_cast<std::size_t>(ch)]) *
                           (*inv_std)[static_cast<std::size_t>(ch)];
      for (Index i = 0; i < n; ++i)
        for (Index q = 0; q < plane; ++q) {
          const std::size_t o = static_cast<std::size_t>((i * c + ch) * plane + q);
          if (train)
            gin[o] += static_cast<S>(scale / m *
                                     (m * self.grad[o] - sum_dy - (*normalized)[o] * sum_dy_xh));
          else
            gin[o] += static_cast<S>(scale * self.grad[o]);
        }
    }
  });
}

template <typename S>
Tensor<S> linear(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias) {
  require_rank(input.shape(), 2, "linear input");
  require_rank(weight.shape(), 2, "linear weight");
  const Index n = input.dim(0), in = input.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in)
    throw ShapeError("linear: input width " + std::to_string(in) + " vs weight " + to_string(weight.shape()));
  if (bias.shape() != Shape{out_dim}) throw ShapeError("linear: bias shape " + to_string(bias.shape()));
  std::vector<S> out(static_cast<std::size_t>(n * out_dim));
  MatMap<S> omat(out.data(), n, out_dim);
  omat.noalias() = ConstMatMap<S>(input.data().data(), n, in) *
                   ConstMatMap<S>(weight.data().data(), out_dim, in).transpose();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < out_dim; ++j) omat(i, j) += bias[j];
  return Tensor<S>::from_op({n, out_dim}, std::move(out), {input, weight, bias},
                            [n, in, out_dim](Node<S>& self) {
    Node<S>& x = *self.parents[0];
    Node<S>& wt = *self.parents[1];
    S* gin = grad_sink<S>(x);
    S* gw = grad_sink<S>(wt);
    S* gb = grad_sink<S>(*self.parents[2]);
    ConstMatMap<S> gout(self.grad.data(), n, out_dim);
    if (gin)
      MatMap<S>(gin, n, in).noalias() += gout * ConstMatMap<S>(wt.data.data(), out_dim, in);
    if (gw)
      MatMap<S>(gw, out_dim, in).noalias() += gout.transpose() * ConstMatMap<S>(x.data.data(), n, in);
    if (gb)
      for (Index r = 0; r < n; ++r)
        for (Index j = 0; j < out_dim; ++j) gb[j] += self.grad[static_cast<std::size_t>(r * out_dim + j)];
  });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& input) {
  if (DecisionTrace::active()) {
    std::uint64_t word = 0;
    int bits = 0;
    for (S v : input.data()) {
      word = (word << 1) | (v > S(0) ? 1u : 0u);
      if (++bits == 64) {
        DecisionTrace::record(word);
        word = 0;
        bits = 0;
      }
    }
    DecisionTrace::record(word ^ (static_cast<std::uint64_t>(bits) << 56));
  }
  return unary(input, [](S v) { return v > S(0) ? v : S(0); },
               [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& input) {
  return unary(input, [](S v) { return S(1) / (S(1) + std::exp(-v)); },
               [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& logits) {
  require_rank(logits.shape(), 2, "softmax");
  const Index n = logits.dim(0), k = logits.dim(1);
  std::vector<S> out(logits.data().size());
  for (Index i = 0; i < n; ++i) {
    const S* z = logits.data().data() + i * k;
    const S mx = *std::max_element(z, z + k);
    double total = 0;
    for (Index j = 0; j < k; ++j) total += std::exp(static_cast<double>(z[j] - mx));
    for (Index j = 0; j < k; ++j)
      out[static_cast<std::size_t>(i * k + j)] = static_cast<S>(std::exp(static_cast<double>(z[j] - mx)) / total);
  }
  return Tensor<S>(logits.shape(), std::move(out));
}

template <typename S>
Tensor<S> softmax_xent(const Tensor<S>& logits, std::span<const int> targets) {
  require_rank(logits.shape(), 2, "softmax_xent");
  const Index n = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(targets.size()) != n)
    throw ShapeError("softmax_xent: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
  Index counted = 0;
  for (int t : targets) {
    if (t == kIgnoreTarget) continue;
    if (t < 0 || t >= k)
      throw std::out_of_range("softmax_xent: target " + std::to_string(t) + " outside [0," + std::to_string(k - 1) + "]");
    ++counted;
  }
  Tensor<S> probs = softmax_rows(logits);
  double loss = 0;
  for (Index i = 0; i < n; ++i) {
    const int target = targets[static_cast<std::size_t>(i)];
    if (target == kIgnoreTarget) continue;
    const S* z = logits.data().data() + i * k;
    const S mx = *std::max_element(z, z + k);
    double total = 0;
    for (Index j = 0; j < k; ++j) total += std::exp(static_cast<double>(z[j] - mx));
    loss += std::log(total) + mx - z[target];
  }
  const Index denom = std::max<Index>(counted, 1);
  loss /= static_cast<double>(denom);
  auto p = std::make_shared<std::vector<S>>(probs.data().begin(), probs.data().end());
  auto t = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  return Tensor<S>::from_op({}, {static_cast<S>(loss)}, {logits}, [p, t, denom, n, k](Node<S>& self) {
    S* gin = grad_sink<S>(*self.parents[0]);
    if (!gin) return;
    const S g = self.grad[0] / static_cast<S>(denom);
    for (Index i = 0; i < n; ++i) {
      const int target = (*t)[static_cast<std::size_t>(i)];
      if (target == kIgnoreTarget) continue;
      for (Index j = 0; j < k; ++j) {
        const std::size_t o = static_cast<std::size_t>(i * k + j);
        const S onehot = target == j ? S(1) : S(0);
        gin[o] += g * ((*p)[o] - onehot);
      }
    }
  });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& input, Shape shape) {
  if (numel(shape) != input.numel())
    throw ShapeError("reshape: " + to_string(input.shape()) + " -> " + to_string(shape));
  std::vector<S> values(input.data().begin(), input.data().end());
  return Tensor<S>::from_op(std::move(shape), std::move(values), {input}, [](Node<S>& self) {
    S* gin = grad_sink<S>(*self.parents[0]);
    if (!gin) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gin[i] += self.grad[i];
  });
}

template <typename S>
Tensor<S> slice_columns(const Tensor<S>& input, Index start, Index count) {
  require_rank(input.shape(), 2, "slice_columns");
  const Index n = input.dim(0), width = input.dim(1);
  if (start < 0 || count < 0 || start + count > width)
    throw ShapeError("slice_columns: [" + std::to_string(start) + "," + std::to_string(start + count) +
                     ") outside width " + std::to_string(width));
  std::vector<S> out(static_cast<std::size_t>(n * count));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < count; ++j) out[static_cast<std::size_t>(i * count + j)] = input[i * width + start + j];
  return Tensor<S>::from_op({n, count}, std::move(out), {input}, [n, width, start, count](Node<S>& self) {
    S* gin = grad_sink<S>(*self.parents[0]);
    if (!gin) return;
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < count; ++j) gin[i * width + start + j] += self.grad[static_cast<std::size_t>(i * count + j)];
  });
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  require_same(a.shape(), b.shape(), "add");
  std::vector<S> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor<S>::from_op(a.shape(), std::move(out), {a, b}, [](Node<S>& self) {
    for (int side = 0; side < 2; ++side)
      if (S* g = grad_sink<S>(*self.parents[side]))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  require_same(a.shape(), b.shape(), "sub");
  std::vector<S> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return Tensor<S>::from_op(a.shape(), std::move(out), {a, b}, [](Node<S>& self) {
    if (S* g = grad_sink<S>(*self.parents[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (S* g = grad_sink<S>(*self.parents[1]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
  require_same(a.shape(), b.shape(), "mul");
  std::vector<S> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor<S>::from_op(a.shape(), std::move(out), {a, b}, [](Node<S>& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (S* g = grad_sink<S>(*self.parents[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (S* g = grad_sink<S>(*self.parents[1]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

template <typename S>
Tensor<S> operator/(const Tensor<S>& a, const Tensor<S>& b) {
  require_same(a.shape(), b.shape(), "div");
  std::vector<S> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
  return Tensor<S>::from_op(a.shape(), std::move(out), {a, b}, [](Node<S>& self) {
    const auto& bv = self.parents[1]->data;
    if (S* g = grad_sink<S>(*self.parents[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / bv[i];
    if (S* g = grad_sink<S>(*self.parents[1]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i] * self.data[i] / bv[i];
  });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S value) {
  return unary(a, [value](S v) { return v + value; }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
  return unary(a, [factor](S v) { return v * factor; }, [factor](S, S) { return factor; });
}

template <typename S>
Tensor<S> square(const Tensor<S>& a) {
  return unary(a, [](S v) { return v * v; }, [](S x, S) { return S(2) * x; });
}

template <typename S>
Tensor<S> pow_scalar(const Tensor<S>& a, S exponent) {
  return unary(a, [exponent](S v) { return std::pow(v, exponent); },
               [exponent](S x, S) { return x == S(0) ? S(0) : exponent * std::pow(x, exponent - S(1)); });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  double acc = 0;
  for (S v : a.data()) acc += v;
  return Tensor<S>::from_op({}, {static_cast<S>(acc)}, {a}, [](Node<S>& self) {
    S* g = grad_sink<S>(*self.parents[0]);
    if (!g) return;
    const std::size_t n = self.parents[0]->data.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  double acc = 0;
  for (S v : a.data()) acc += v;
  const double n = static_cast<double>(a.numel());
  return Tensor<S>::from_op({}, {static_cast<S>(acc / n)}, {a}, [](Node<S>& self) {
    S* g = grad_sink<S>(*self.parents[0]);
    if (!g) return;
    const std::size_t n = self.parents[0]->data.size();
    const S share = self.grad[0] / static_cast<S>(n);
    for (std::size_t i = 0; i < n; ++i) g[i] += share;
  });
}

template <typename S>
Tensor<S> mean_spatial(const Tensor<S>& a) {
  require_rank(a.shape(), 4, "mean_spatial");
  const Index nc = a.dim(0) * a.dim(1), plane = a.dim(2) * a.dim(3);
  std::vector<S> out(static_cast<std::size_t>(nc));
  for (Index p = 0; p < nc; ++p) {
    double acc = 0;
    for (Index q = 0; q < plane; ++q) acc += a[p * plane + q];
    out[static_cast<std::size_t>(p)] = static_cast<S>(acc / static_cast<double>(plane));
  }
  return Tensor<S>::from_op({a.dim(0), a.dim(1)}, std::move(out), {a}, [nc, plane](Node<S>& self) {
    S* g = grad_sink<S>(*self.parents[0]);
    if (!g) return;
    for (Index p = 0; p < nc; ++p) {
      const S share = self.grad[static_cast<std::size_t>(p)] / static_cast<S>(plane);
      for (Index q = 0; q < plane; ++q) g[p * plane + q] += share;
    }
  });
}

template <typename S>
Tensor<S> separable_filter_valid(const Tensor<S>& input, std::span<const double> kernel) {
  require_rank(input.shape(), 4, "separable_filter_valid");
  const Index nc = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index k = static_cast<Index>(kernel.size());
  if (k == 0 || h < k || w < k)
    throw ShapeError("separable_filter_valid: image " + to_string(input.shape()) + " smaller than window " +
                     std::to_string(k));
  const Index oh = h - k + 1, ow = w - k + 1;
  auto taps = std::make_shared<std::vector<S>>(kernel.begin(), kernel.end());
  std::vector<S> tmp(static_cast<std::size_t>(h * ow));
  std::vector<S> out(static_cast<std::size_t>(nc * oh * ow));
  for (Index p = 0; p < nc; ++p) {
    const S* x = input.data().data() + p * h * w;
    for (Index y = 0; y < h; ++y)
      for (Index xx = 0; xx < ow; ++xx) {
        S acc = 0;
        for (Index j = 0; j < k; ++j) acc += (*taps)[j] * x[y * w + xx + j];
        tmp[static_cast<std::size_t>(y * ow + xx)] = acc;
      }
    S* o = out.data() + p * oh * ow;
    for (Index y = 0; y < oh; ++y)
      for (Index xx = 0; xx < ow; ++xx) {
        S acc = 0;
        for (Index i = 0; i < k; ++i) acc += (*taps)[i] * tmp[static_cast<std::size_t>((y + i) * ow + xx)];
        o[y * ow + xx] = acc;
      }
  }
  return Tensor<S>::from_op({input.dim(0), input.dim(1), oh, ow}, std::move(out), {input},
                            [taps, nc, h, w, k, oh, ow](Node<S>& self) {
    S* g = grad_sink<S>(*self.parents[0]);
    if (!g) return;
    std::vector<S> dtmp(static_cast<std::size_t>(h * ow));
    for (Index p = 0; p < nc; ++p) {
      std::fill(dtmp.begin(), dtmp.end(), S(0));
      const S* go = self.grad.data() + p * oh * ow;
      for (Index y = 0; y < oh; ++y)
        for (Index i = 0; i < k; ++i) {
          const S t = (*taps)[i];
          for (Index xx = 0; xx < ow; ++xx) dtmp[static_cast<std::size_t>((y + i) * ow + xx)] += t * go[y * ow + xx];
        }
      S* gx = g + p * h * w;
      for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < ow; ++xx) {
          const S d = dtmp[static_cast<std::size_t>(y * ow + xx)];
          for (Index j = 0; j < k; ++j) gx[y * w + xx + j] += (*taps)[j] * d;
        }
    }
  });
}

#define CABIN_INSTANTIATE_OPS(S)                                                                     \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                  \
  template std::pair<Tensor<S>, PoolIndices> maxpool2x2(const Tensor<S>&);                          \
  template Tensor<S> maxunpool2x2(const Tensor<S>&, const PoolIndices&);                            \
  template Tensor<S> upsample_nearest2x(const Tensor<S>&);                                          \
  template Tensor<S> avgpool2x2(const Tensor<S>&);                                                  \
  template Tensor<S> batchnorm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,                \
                               BatchNormStats<S>&, BatchNormMode, double, double);                  \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                  \
  template Tensor<S> relu(const Tensor<S>&);                                                        \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                     \
  template Tensor<S> softmax_xent(const Tensor<S>&, std::span<const int>);                          \
  template Tensor<S> softmax_rows(const Tensor<S>&);                                                \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                              \
  template Tensor<S> slice_columns(const Tensor<S>&, Index, Index);                                 \
  template Tensor<S> operator+(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> operator-(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> operator*(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> operator/(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> add_scalar(const Tensor<S>&, S);                                               \
  template Tensor<S> scale(const Tensor<S>&, S);                                                    \
  template Tensor<S> square(const Tensor<S>&);                                                      \
  template Tensor<S> pow_scalar(const Tensor<S>&, S);                                               \
  template Tensor<S> sum(const Tensor<S>&);                                                         \
  template Tensor<S> mean(const Tensor<S>&);                                                        \
  template Tensor<S> mean_spatial(const Tensor<S>&);                                                \
  template Tensor<S> separable_filter_valid(const Tensor<S>&, std::span<const double>);

CABIN_INSTANTIATE_OPS(float)
CABIN_INSTANTIATE_OPS(double)

#undef CABIN_INSTANTIATE_OPS

}  // namespace cabin
