#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "odvqa/autodiff.hpp"
#include "odvqa/geometry.hpp"

// Differentiable tensor operations. Each records its result and adjoint on the
// operands' tape. Shape problems are rejected before any arithmetic runs.

namespace odvqa {

// Elementwise with broadcasting: equal rank, each axis equal or 1 on one side.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& x, T factor);
template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);

template <typename T> Var<T> sum(const Var<T>& x);   // -> [1]
template <typename T> Var<T> mean(const Var<T>& x);  // -> [1]
template <typename T> Var<T> pick(const Var<T>& x, std::size_t flat_index);  // -> [1]

/// Reductions along one axis; the axis is kept with extent 1.
template <typename T> Var<T> reduce_mean(const Var<T>& x, std::size_t axis);
template <typename T> Var<T> reduce_max(const Var<T>& x, std::size_t axis);

/// Mean over every axis after the first `keep` axes; result shape is the first `keep` extents.
template <typename T> Var<T> global_average_pool(const Var<T>& x, std::size_t keep);

template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& order);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);

/// Elements [begin, end) along `axis`.
template <typename T> Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

/// Max-subtracted softmax along `axis`.
template <typename T> Var<T> softmax(const Var<T>& x, std::size_t axis);

/// Fully connected over the last axis: x[..., in] * W[out, in]^T + b[out].
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Channel mixing for channels-first tensors x[B, Cin, ...] with W[Cout, Cin, 1...].
template <typename T> Var<T> conv1x1(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Gather convolution: output[b, c, p] = bias[c] + sum over (c', tap) of
/// weight[c, c', tap] * bilinear(input[b, c'], grid(tap, p)). Input [Cin,H,W] or [B,Cin,H,W].
template <typename T>
Var<T> conv2d_sampled(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
                      std::shared_ptr<const KernelSamplingGrid> grid);

/// Stride-1 3D convolution with zero "same" padding, x[B, Cin, S, H, W], W[Cout, Cin, k, k, k].
template <typename T> Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <typename T> Var<T> matmul_batched(const Var<T>& a, const Var<T>& b);

enum class Resize { down2, up2 };

/// Resizes the last two axes: down2 is 2x2 averaging; up2 is bilinear with
/// half-pixel centers and edge clamping.
template <typename T> Var<T> resize(const Var<T>& x, Resize mode);

enum class PoolKind { max, avg };

/// Windowed pooling over the last three axes (S, H, W). Windows that run past
/// the end are clipped, so the output extent is ceil((n - window) / stride) + 1.
template <typename T>
Var<T> pool3d(const Var<T>& x, std::array<std::size_t, 3> window, std::array<std::size_t, 3> stride, PoolKind kind);

enum class BnMode { train, infer };

struct BatchNormOptions {
    double momentum = 0.9;  // running <- momentum * running + (1 - momentum) * batch
    double eps = 1e-5;
};

/// Per-channel normalization of x[B, C, ...]. Train mode normalizes with batch
/// statistics and updates the running buffers; infer mode reads them.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Parameter<T>& running_mean,
                  Parameter<T>& running_var, BnMode mode, BatchNormOptions options = {});

/// Mean of squared differences between pred[n] and target[n]; -> [1].
template <typename T> Var<T> mse_loss(const Var<T>& pred, const Tensor<T>& target);

namespace debug {
/// Negates the ReLU adjoint. Exists only to prove the gradient checker catches a wrong sign.
void set_relu_gradient_fault(bool on);
/// Hashes the active sets of ReLU and max operations evaluated on this thread
/// since tracking was last enabled, so a finite difference can tell when it
/// stepped across a kink.
void set_kink_tracking(bool on);
std::uint64_t kink_fingerprint();
}  // namespace debug

}  // namespace odvqa
