// SPDX-License-Identifier: Apache-2.0
#include "bflab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace bflab {

namespace {

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("tensor: negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) {
  const std::size_t n = element_count(shape);
  storage_ = std::make_shared<Storage>();
  storage_->shape = std::move(shape);
  storage_->data.assign(n, 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values) {
  if (element_count(shape) != values.size()) {
    throw std::invalid_argument("tensor: data length does not match shape");
  }
  storage_ = std::make_shared<Storage>();
  storage_->shape = std::move(shape);
  storage_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal() * stddev;
  return t;
}

int Tensor::rows() const {
  require(shape().size() == 2, "tensor: rows() requires rank 2");
  return shape()[0];
}

int Tensor::cols() const {
  require(shape().size() == 2, "tensor: cols() requires rank 2");
  return shape()[1];
}

double& Tensor::at(int r, int c) {
  return storage_->data[static_cast<std::size_t>(r) * cols() + c];
}

double Tensor::at(int r, int c) const {
  return storage_->data[static_cast<std::size_t>(r) * cols() + c];
}

double Tensor::item() const {
  if (!is_scalar()) throw std::logic_error("tensor: item() requires a scalar");
  return storage_->data[0];
}

std::vector<double>& Tensor::grad() {
  if (!has_grad()) throw std::logic_error("tensor: gradient not present");
  return storage_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor: gradient not present");
  return storage_->grad;
}

void Tensor::ensure_grad() {
  if (storage_->grad.empty()) storage_->grad.assign(size(), 0.0);
}

void Tensor::zero_grad() {
  if (!storage_->grad.empty()) {
    std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
  }
}

void Tensor::drop_grad() { storage_->grad.clear(); }

Tensor Tensor::grad_tensor() const {
  Tensor g(shape());
  g.values() = grad();
  return g;
}

Tensor Tensor::clone() const {
  Tensor t(shape());
  t.values() = values();
  return t;
}

void Tensor::copy_values_from(const Tensor& other) {
  if (shape() != other.shape()) {
    throw std::invalid_argument("tensor: copy_values_from shape mismatch");
  }
  storage_->data = other.values();
}

bool Tensor::all_finite() const {
  for (double v : values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// --- Tape ---

void Tape::record(std::vector<Tensor> tracked, std::function<void()> backward_fn) {
  if (!tracked.empty()) {
    // The op's output is by convention the last tracked tensor.
    produced_.insert(tracked.back().id());
  }
  for (Tensor& t : tracked) tracked_.push_back(std::move(t));
  nodes_.push_back(Node{std::move(backward_fn)});
}

void Tape::backward(const Tensor& root) {
  if (spent_) {
    throw std::logic_error("tape: backward already ran; re-run the forward pass first");
  }
  if (!root.defined() || !root.is_scalar()) {
    throw std::logic_error("tape: backward root must be a scalar");
  }
  if (produced_.find(root.id()) == produced_.end()) {
    throw std::logic_error("tape: backward root was not produced through this tape");
  }
  // Overwrite semantics: every tensor the tape touched starts from zero.
  std::unordered_set<const void*> seen;
  for (Tensor& t : tracked_) {
    if (seen.insert(t.id()).second) {
      t.ensure_grad();
      t.zero_grad();
    }
  }
  const_cast<Tensor&>(root).grad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->backward) it->backward();
  }
  spent_ = true;
}

// --- Ops ---

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2, "matmul: rank-2 inputs required");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw std::invalid_argument("matmul: inner dimensions disagree");
  Tensor out({m, n});
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double av = pa[static_cast<std::size_t>(i) * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + static_cast<std::size_t>(p) * n;
      double* orow = po + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  tape.record({a, b, out}, [a, b, out, m, k, n]() {
    const std::vector<double>& go = out.grad();
    std::vector<double>& ga = const_cast<Tensor&>(a).grad();
    std::vector<double>& gb = const_cast<Tensor&>(b).grad();
    const double* pb2 = b.values().data();
    const double* pa2 = a.values().data();
    // dA += dC * B^T ; dB += A^T * dC
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        const double g = go[static_cast<std::size_t>(i) * n + j];
        if (g == 0.0) continue;
        for (int p = 0; p < k; ++p) {
          ga[static_cast<std::size_t>(i) * k + p] += g * pb2[static_cast<std::size_t>(p) * n + j];
          gb[static_cast<std::size_t>(p) * n + j] += g * pa2[static_cast<std::size_t>(i) * k + p];
        }
      }
    }
  });
  return out;
}

Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2, "matmul_nt: rank-2 inputs required");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) throw std::invalid_argument("matmul_nt: inner dimensions disagree");
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      const double* ra = a.values().data() + static_cast<std::size_t>(i) * k;
      const double* rb = b.values().data() + static_cast<std::size_t>(j) * k;
      for (int p = 0; p < k; ++p) acc += ra[p] * rb[p];
      out.at(i, j) = acc;
    }
  }
  tape.record({a, b, out}, [a, b, out, m, k, n]() {
    const std::vector<double>& go = out.grad();
    std::vector<double>& ga = const_cast<Tensor&>(a).grad();
    std::vector<double>& gb = const_cast<Tensor&>(b).grad();
    // C = A B^T : dA += dC * B ; dB += dC^T * A
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        const double g = go[static_cast<std::size_t>(i) * n + j];
        if (g == 0.0) continue;
        const double* rb = b.values().data() + static_cast<std::size_t>(j) * k;
        const double* ra = a.values().data() + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
          ga[static_cast<std::size_t>(i) * k + p] += g * rb[p];
          gb[static_cast<std::size_t>(j) * k + p] += g * ra[p];
        }
      }
    }
  });
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] + b.values()[i];
    tape.record({a, b, out}, [a, b, out]() {
      const std::vector<double>& go = out.grad();
      std::vector<double>& ga = const_cast<Tensor&>(a).grad();
      std::vector<double>& gb = const_cast<Tensor&>(b).grad();
      for (std::size_t i = 0; i < go.size(); ++i) {
        ga[i] += go[i];
        gb[i] += go[i];
      }
    });
    return out;
  }
  // Bias broadcast: a [m x n] + b [n] over rows.
  if (a.shape().size() == 2 && b.shape().size() == 1 && b.shape()[0] == a.cols()) {
    const int m = a.rows(), n = a.cols();
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) + b.values()[j];
    }
    tape.record({a, b, out}, [a, b, out, m, n]() {
      const std::vector<double>& go = out.grad();
      std::vector<double>& ga = const_cast<Tensor&>(a).grad();
      std::vector<double>& gb = const_cast<Tensor&>(b).grad();
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          const double g = go[static_cast<std::size_t>(i) * n + j];
          ga[static_cast<std::size_t>(i) * n + j] += g;
          gb[j] += g;
        }
      }
    });
    return out;
  }
  throw std::invalid_argument("add: shape mismatch");
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
  tape.record({a, b, out}, [a, b, out]() {
    const std::vector<double>& go = out.grad();
    std::vector<double>& ga = const_cast<Tensor&>(a).grad();
    std::vector<double>& gb = const_cast<Tensor&>(b).grad();
    for (std::size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i] * b.values()[i];
      gb[i] += go[i] * a.values()[i];
    }
  });
  return out;
}

Tensor mul_scalar(Tape& tape, const Tensor& a, double s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * s;
  tape.record({a, out}, [a, out, s]() {
    const std::vector<double>& go = out.grad();
    std::vector<double>& ga = const_cast<Tensor&>(a).grad();
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * s;
  });
  return out;
}

Tensor embedding_gather(Tape& tape, const Tensor& table, std::span<const int> ids) {
  require(table.shape().size() == 2, "embedding_gather: table must be rank 2");
  const int v = table.rows(), d = table.cols();
  const int len = static_cast<int>(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= v) throw std::invalid_argument("embedding_gather: id out of range");
  }
  Tensor out({len, d});
  for (int i = 0; i < len; ++i) {
    const double* row = table.values().data() + static_cast<std::size_t>(ids[i]) * d;
    std::copy(row, row + d, out.values().data() + static_cast<std::size_t>(i) * d);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  tape.record({table, out}, [table, out, idv = std::move(idv), d]() {
    const std::vector<double>& go = out.grad();
    std::vector<double>& gt = const_cast<Tensor&>(table).grad();
    for (std::size_t i = 0; i < idv.size(); ++i) {
      double* grow = gt.data() + static_cast<std::size_t>(idv[i]) * d;
      const double* orow = go.data() + i * d;
      for (int j = 0; j < d; ++j) grow[j] += orow[j];
    }
  });
  return out;
}

Tensor softmax_rows(Tape& tape, const Tensor& logits) {
  require(logits.shape().size() == 2, "softmax: rank-2 input required");
  const int n = logits.rows(), v = logits.cols();
  Tensor out({n, v});
  for (int i = 0; i < n; ++i) {
    const double* row = logits.values().data() + static_cast<std::size_t>(i) * v;
    double* orow = out.values().data() + static_cast<std::size_t>(i) * v;
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < v; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (int j = 0; j < v; ++j) orow[j] /= sum;
  }
  tape.record({logits, out}, [logits, out, n, v]() {
    const std::vector<double>& go = out.grad();
    std::vector<double>& gl = const_cast<Tensor&>(logits).grad();
    for (int i = 0; i < n; ++i) {
      const double* p = out.values().data() + static_cast<std::size_t>(i) * v;
      const double* g = go.data() + static_cast<std::size_t>(i) * v;
      double dot = 0.0;
      for (int j = 0; j < v; ++j) dot += g[j] * p[j];
      double* gr = gl.data() + static_cast<std::size_t>(i) * v;
      for (int j = 0; j < v; ++j) gr[j] += p[j] * (g[j] - dot);
    }
  });
  return out;
}

Tensor rms_norm(Tape& tape, const Tensor& x, const Tensor& gain, double eps) {
  require(x.shape().size() == 2, "rms_norm: rank-2 input required");
  require(gain.shape().size() == 1 && gain.shape()[0] == x.cols(),
          "rms_norm: gain must match feature dimension");
  const int n = x.rows(), d = x.cols();
  Tensor out({n, d});
  std::vector<double> inv_rms(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double* row = x.values().data() + static_cast<std::size_t>(i) * d;
    double ms = 0.0;
    for (int j = 0; j < d; ++j) ms += row[j] * row[j];
    ms = ms / d + eps;
    const double r = 1.0 / std::sqrt(ms);
    inv_rms[static_cast<std::size_t>(i)] = r;
    double* orow = out.values().data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) orow[j] = row[j] * r * gain.values()[j];
  }
  tape.record({x, gain, out}, [x, gain, out, inv_rms = std::move(inv_rms), n, d]() {
    const std::vector<double>& go = out.grad();
    std::vector<double>& gx = const_cast<Tensor&>(x).grad();
    std::vector<double>& gg = const_cast<Tensor&>(gain).grad();
    for (int i = 0; i < n; ++i) {
      const double r = inv_rms[static_cast<std::size_t>(i)];
      const double* row = x.values().data() + static_cast<std::size_t>(i) * d;
      const double* g = go.data() + static_cast<std::size_t>(i) * d;
      double dot = 0.0;  // sum_j dy_j * gain_j * x_j
      for (int j = 0; j < d; ++j) dot += g[j] * gain.values()[j] * row[j];
      const double coef = r * r * r / d * dot;
      double* gxr = gx.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) {
        gxr[j] += g[j] * gain.values()[j] * r - coef * row[j];
        gg[j] += g[j] * row[j] * r;
      }
    }
  });
  return out;
}

Tensor silu(Tape& tape, const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.values()[i];
    out.values()[i] = v / (1.0 + std::exp(-v));
  }
  tape.record({x, out}, [x, out]() {
    const std::vector<double>& go = out.grad();
    std::vector<double>& gx = const_cast<Tensor&>(x).grad();
    for (std::size_t i = 0; i < go.size(); ++i) {
      const double v = x.values()[i];
      const double sig = 1.0 / (1.0 + std::exp(-v));
      gx[i] += go[i] * sig * (1.0 + v * (1.0 - sig));
    }
  });
  return out;
}

Tensor nll_mean(Tape& tape, const Tensor& logits, std::span<const int> targets) {
  require(logits.shape().size() == 2, "nll_mean: rank-2 logits required");
  const int n = logits.rows(), v = logits.cols();
  if (static_cast<int>(targets.size()) != n) {
    throw std::invalid_argument("nll_mean: one target per logit row required");
  }
  for (int t : targets) {
    if (t < 0 || t >= v) throw std::invalid_argument("nll_mean: target out of range");
  }
  // Cache row softmax for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * v);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* row = logits.values().data() + static_cast<std::size_t>(i) * v;
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
    const double logz = mx + std::log(sum);
    total += logz - row[targets[static_cast<std::size_t>(i)]];
    double* prow = probs->data() + static_cast<std::size_t>(i) * v;
    for (int j = 0; j < v; ++j) prow[j] = std::exp(row[j] - logz);
  }
  Tensor out = Tensor::scalar(total / n);
  std::vector<int> tgt(targets.begin(), targets.end());
  tape.record({logits, out}, [logits, out, probs, tgt = std::move(tgt), n, v]() {
    const double g = out.grad()[0];
    std::vector<double>& gl = const_cast<Tensor&>(logits).grad();
    for (int i = 0; i < n; ++i) {
      const double* prow = probs->data() + static_cast<std::size_t>(i) * v;
      double* grow = gl.data() + static_cast<std::size_t>(i) * v;
      for (int j = 0; j < v; ++j) grow[j] += g * prow[j] / n;
      grow[tgt[static_cast<std::size_t>(i)]] -= g / n;
    }
  });
  return out;
}

Tensor slice_rows(Tape& tape, const Tensor& x, int start, int count) {
  require(x.shape().size() == 2, "slice_rows: rank-2 input required");
  const int m = x.rows(), n = x.cols();
  if (start < 0 || count < 0 || start + count > m) {
    throw std::invalid_argument("slice_rows: range out of bounds");
  }
  Tensor out({count, n});
  std::copy(x.values().begin() + static_cast<std::size_t>(start) * n,
            x.values().begin() + static_cast<std::size_t>(start + count) * n,
            out.values().begin());
  tape.record({x, out}, [x, out, start, count, n]() {
    const std::vector<double>& go = out.grad();
    std::vector<double>& gx = const_cast<Tensor&>(x).grad();
    for (std::size_t i = 0; i < static_cast<std::size_t>(count) * n; ++i) {
      gx[static_cast<std::size_t>(start) * n + i] += go[i];
    }
  });
  return out;
}

Tensor slice_cols(Tape& tape, const Tensor& x, int start, int count) {
  require(x.shape().size() == 2, "slice_cols: rank-2 input required");
  const int m = x.rows(), n = x.cols();
  if (start < 0 || count < 0 || start + count > n) {
    throw std::invalid_argument("slice_cols: range out of bounds");
  }
  Tensor out({m, count});
  for (int i = 0; i < m; ++i) {
    const double* src = x.values().data() + static_cast<std::size_t>(i) * n + start;
    std::copy(src, src + count, out.values().data() + static_cast<std::size_t>(i) * count);
  }
  tape.record({x, out}, [x, out, start, count, m, n]() {
    const std::vector<double>& go = out.grad();
    std::vector<double>& gx = const_cast<Tensor&>(x).grad();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < count; ++j) {
        gx[static_cast<std::size_t>(i) * n + start + j] +=
            go[static_cast<std::size_t>(i) * count + j];
      }
    }
  });
  return out;
}

Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: at least one part required");
  const int m = parts.front().rows();
  int total = 0;
  for (const Tensor& p : parts) {
    require(p.shape().size() == 2 && p.rows() == m, "concat_cols: row counts must agree");
    total += p.cols();
  }
  Tensor out({m, total});
  int off = 0;
  for (const Tensor& p : parts) {
    const int c = p.cols();
    for (int i = 0; i < m; ++i) {
      std::copy(p.values().data() + static_cast<std::size_t>(i) * c,
                p.values().data() + static_cast<std::size_t>(i) * c + c,
                out.values().data() + static_cast<std::size_t>(i) * total + off);
    }
    off += c;
  }
  std::vector<Tensor> tracked = parts;
  tracked.push_back(out);
  tape.record(std::move(tracked), [parts, out, m, total]() {
    const std::vector<double>& go = out.grad();
    int off2 = 0;
    for (const Tensor& p : parts) {
      const int c = p.cols();
      std::vector<double>& gp = const_cast<Tensor&>(p).grad();
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < c; ++j) {
          gp[static_cast<std::size_t>(i) * c + j] +=
              go[static_cast<std::size_t>(i) * total + off2 + j];
        }
      }
      off2 += c;
    }
  });
  return out;
}

double grad_check(const std::function<Tensor(Tape&)>& f,
                  const std::vector<Tensor>& params,
                  const GradCheckOptions& options) {
  Tape tape;
  Tensor root = f(tape);
  tape.backward(root);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) {
    analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.size(), 0.0));
  }

  Rng rng(options.seed);
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor param = params[pi];
    std::vector<std::size_t> coords;
    const std::size_t n = param.size();
    if (options.coords_per_param <= 0 || static_cast<std::size_t>(options.coords_per_param) >= n) {
      coords.resize(n);
      std::iota(coords.begin(), coords.end(), std::size_t{0});
    } else if (options.pick_largest) {
      coords.resize(n);
      std::iota(coords.begin(), coords.end(), std::size_t{0});
      const std::vector<double>& g = analytic[pi];
      std::stable_sort(coords.begin(), coords.end(), [&g](std::size_t a, std::size_t b) {
        return std::abs(g[a]) > std::abs(g[b]);
      });
      coords.resize(static_cast<std::size_t>(options.coords_per_param));
    } else {
      for (int c = 0; c < options.coords_per_param; ++c) {
        coords.push_back(static_cast<std::size_t>(rng.below(n)));
      }
    }
    for (std::size_t idx : coords) {
      const double saved = param.values()[idx];
      param.values()[idx] = saved + options.step;
      Tape t1;
      const double fp = f(t1).item();
      param.values()[idx] = saved - options.step;
      Tape t2;
      const double fm = f(t2).item();
      param.values()[idx] = saved;
      const double numeric = (fp - fm) / (2.0 * options.step);
      const double a = analytic[pi][idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace bflab
