#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gloie/rng.hpp"

namespace gloie {

/// Parameter matrix/vector (64-bit) with a gradient accumulator and Adam
/// moment buffers. Vectors use cols == 1.
struct ParamTensor {
  std::string name;
  std::size_t rows = 0, cols = 1;
  std::vector<double> values, grad, m, v;
  std::int64_t step = 0;

  ParamTensor() = default;
  ParamTensor(std::string name_, std::size_t rows_, std::size_t cols_ = 1);

  std::size_t size() const { return rows * cols; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  void zero_grad();
};

struct OptimizerConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// y = W x + b, with |x| = W.cols and |y| = W.rows.
void affine_forward(const ParamTensor& W, const ParamTensor& b, const double* x,
                    double* y);

/// Accumulates dW += g (outer) x and db += g; writes dx = W^T g when dx is
/// non-null. g has length W.rows, x length W.cols.
void affine_backward(ParamTensor& W, ParamTensor& b, const double* x,
                     const double* g, double* dx);

/// U[-s, s] with s = sqrt(6 / (fan_in + fan_out)); vectors are left for the
/// caller (biases stay zero).
void init_uniform_fan(ParamTensor& W, Rng& rng);

/// Bias-corrected Adam over the populated gradients; zeroes grads afterward
/// and bumps each tensor's step counter. Aborts on non-finite gradients,
/// naming the tensor.
void adam_step(const std::vector<ParamTensor*>& params,
               const OptimizerConfig& cfg);

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // per-epoch mean over examples
  std::size_t epochs = 0;
  std::size_t batch = 0;
  std::uint64_t seed = 0;
};

/// loss_fn(true) must return the loss AND accumulate analytic gradients into
/// the tensors; loss_fn(false) must return the loss without touching
/// gradients. Samples at most max_coords coordinates (seeded) and compares
/// the analytic gradient against (f(x+h) - f(x-h)) / 2h with relative error
/// denominator max(|analytic|, |numeric|, 1e-8).
GradCheckReport gradient_check(const std::function<double(bool)>& loss_fn,
                               const std::vector<ParamTensor*>& params,
                               double h = 1e-5, std::size_t max_coords = 200,
                               std::uint64_t seed = 0);

/// Checkpoint = <prefix>.manifest.json (tensor names, shapes, dtype, byte
/// offsets, free-form meta) + <prefix>.bin (little-endian f64 in manifest
/// order).
struct Checkpoint {
  std::vector<ParamTensor> tensors;
  nlohmann::json meta;

  const ParamTensor& tensor(const std::string& name) const;
};

void save_checkpoint(const std::string& prefix,
                     const std::vector<const ParamTensor*>& tensors,
                     const nlohmann::json& meta);
Checkpoint load_checkpoint(const std::string& prefix);

}  // namespace gloie
