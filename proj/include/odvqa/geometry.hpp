#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <type_traits>
#include <vector>

// Sampling geometry for convolution on equirectangular (ERP) frames.
//
// Pixel (i, j) of an H x W frame sits at latitude phi = pi * (0.5 - (i + 0.5) / H)
// and longitude lambda = 2 pi * ((j + 0.5) / W - 0.5); row 0 is the north-most row.
// A spherical kernel places its k x k taps on the tangent plane at the output
// pixel, one equatorial pixel apart, and maps them back through the inverse
// gnomonic projection.

namespace odvqa {

struct SpherePoint {
    double lat = 0.0;  // phi, radians
    double lon = 0.0;  // lambda, radians
};

/// Fractional (row, col) in pixel space; integer values are pixel centers.
struct PixelCoord {
    double row = 0.0;
    double col = 0.0;
};

SpherePoint erp_to_sphere(std::size_t i, std::size_t j, std::size_t height, std::size_t width);

/// Inverse of erp_to_sphere for arbitrary sphere points; col is wrapped into [0, W).
PixelCoord sphere_to_erp(SpherePoint p, std::size_t height, std::size_t width);

/// Sphere locations of the k x k taps of a kernel centered at `center`, tap (u, v)
/// at index u * k + v. Tangent-plane offsets are ((v - k/2) dx, (k/2 - u) dy).
std::vector<SpherePoint> gnomonic_kernel_locations(SpherePoint center, std::size_t k, double dx, double dy);

enum class GridKind { spherical, regular };

/// Per-output-pixel source coordinates for every kernel tap, plus the bilinear
/// gather table derived from them. Tap-major layout: entry (tap, p) at tap * out_pixels + p.
struct KernelSamplingGrid {
    GridKind kind = GridKind::regular;
    std::size_t in_height = 0, in_width = 0;
    std::size_t out_height = 0, out_width = 0;
    std::size_t kernel = 1;
    std::size_t stride = 1;

    std::vector<double> rows;  // fractional source row per entry
    std::vector<double> cols;  // fractional source col per entry, in [0, W)

    // Four bilinear corners per entry: flat source index (row * W + col) and weight.
    std::vector<std::uint32_t> src;
    std::vector<double> weight;

    // The same corners reordered pixel-major (entry p * taps + tap), with the
    // weights pre-converted for both precisions; used by the gather kernels.
    std::vector<std::uint32_t> gather_src;
    std::vector<float> gather_weight_f;
    std::vector<double> gather_weight_d;

    template <typename T>
    const T* gather_weights() const {
        if constexpr (std::is_same_v<T, float>) return gather_weight_f.data();
        else return gather_weight_d.data();
    }

    std::size_t taps() const { return kernel * kernel; }
    std::size_t in_pixels() const { return in_height * in_width; }
    std::size_t out_pixels() const { return out_height * out_width; }
    std::size_t entries() const { return taps() * out_pixels(); }
    PixelCoord coord(std::size_t tap, std::size_t p) const {
        return {rows[tap * out_pixels() + p], cols[tap * out_pixels() + p]};
    }
};

/// Spherical grid: longitude wraps modulo W; bilinear corners beyond a pole
/// reflect (row -> -row-1 or 2H-1-row) with the longitude shifted by pi.
KernelSamplingGrid build_sampling_grid(std::size_t height, std::size_t width, std::size_t k, std::size_t stride);

/// Regular integer stencil with reflect padding on both axes. At stride 2 the
/// output pixel sits at input (2i + 0.5, 2j + 0.5), matching the spherical grid.
KernelSamplingGrid build_regular_grid(std::size_t height, std::size_t width, std::size_t k, std::size_t stride);

/// Cached, immutable grid; built once per (kind, H, W, k, stride) and shared.
std::shared_ptr<const KernelSamplingGrid> sampling_grid(GridKind kind, std::size_t height, std::size_t width,
                                                        std::size_t k, std::size_t stride);

}  // namespace odvqa
