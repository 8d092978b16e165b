// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <vector>

#include "bflab/rng.hpp"

namespace bflab {

// Dense row-major tensor of 64-bit floats with an optional gradient buffer.
// Tensor is a shared handle: copies alias the same storage, clone() deep-copies.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev);

  bool defined() const { return storage_ != nullptr; }
  const std::vector<int>& shape() const { return storage_->shape; }
  std::size_t size() const { return storage_->data.size(); }
  bool is_scalar() const { return defined() && size() == 1; }

  // 2-D accessors; throw on rank mismatch.
  int rows() const;
  int cols() const;
  double& at(int r, int c);
  double at(int r, int c) const;

  std::vector<double>& values() { return storage_->data; }
  const std::vector<double>& values() const { return storage_->data; }
  double item() const;

  bool has_grad() const { return defined() && !storage_->grad.empty(); }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void ensure_grad();
  void zero_grad();
  void drop_grad();
  Tensor grad_tensor() const;

  Tensor clone() const;
  void copy_values_from(const Tensor& other);
  bool all_finite() const;

  // Storage identity, used to deduplicate tensors that alias each other.
  const void* id() const { return storage_.get(); }

 private:
  struct Storage {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty = no gradient buffer
  };
  std::shared_ptr<Storage> storage_;
};

// Ordered record of executed ops for one forward pass. Execution order is a
// valid topological order, so the backward sweep is a reverse iteration that
// visits each node exactly once. Gradients of every tensor touched by the
// tape are overwritten when backward runs; a second backward on the same tape
// is an error.
class Tape {
 public:
  // tracked: every tensor whose grad the op reads or writes (inputs + output).
  void record(std::vector<Tensor> tracked, std::function<void()> backward_fn);
  void backward(const Tensor& root);
  bool spent() const { return spent_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> tracked_;
  std::unordered_set<const void*> produced_;
  bool spent_ = false;
};

// --- Ops. All register their backward on the tape. ---

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// a [m x k] times b-transpose, b given as [n x k].
Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b);
// Elementwise add; b may also be a 1-D row vector broadcast over a's rows.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul_scalar(Tape& tape, const Tensor& a, double s);
Tensor embedding_gather(Tape& tape, const Tensor& table, std::span<const int> ids);
// Row-wise softmax over the last axis, max-subtraction stabilized.
Tensor softmax_rows(Tape& tape, const Tensor& logits);
Tensor rms_norm(Tape& tape, const Tensor& x, const Tensor& gain, double eps = 1e-6);
Tensor silu(Tape& tape, const Tensor& x);
// Mean negative log-likelihood of targets under row-wise log-softmax.
Tensor nll_mean(Tape& tape, const Tensor& logits, std::span<const int> targets);
Tensor slice_rows(Tape& tape, const Tensor& x, int start, int count);
Tensor slice_cols(Tape& tape, const Tensor& x, int start, int count);
Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts);

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates checked per parameter; 0 means every coordinate.
  int coords_per_param = 16;
  std::uint64_t seed = 0;
  // When true, check the largest-|gradient| coordinates instead of a random
  // sample. Useful where finite differences are dominated by roundoff on
  // near-zero gradients.
  bool pick_largest = false;
};

// Compares analytic gradients of f against central finite differences and
// returns the max over sampled coordinates of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
double grad_check(const std::function<Tensor(Tape&)>& f,
                  const std::vector<Tensor>& params,
                  const GradCheckOptions& options = {});

}  // namespace bflab
