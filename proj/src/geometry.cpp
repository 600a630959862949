#include "odvqa/geometry.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <tuple>

namespace odvqa {
namespace {

constexpr double kPi = std::numbers::pi;

void validate(std::size_t height, std::size_t width, std::size_t k, std::size_t stride) {
    if (height == 0 || width == 0) throw std::invalid_argument("sampling grid: empty extents");
    if (k % 2 == 0) throw std::invalid_argument("sampling grid: kernel size " + std::to_string(k) + " is even");
    if (stride != 1 && stride != 2)
        throw std::invalid_argument("sampling grid: stride " + std::to_string(stride) + " outside {1, 2}");
    if (height % stride != 0 || width % stride != 0)
        throw std::invalid_argument("sampling grid: extents not divisible by stride");
}

double wrap(double v, double period) {
    double r = std::fmod(v, period);
    if (r < 0) r += period;
    if (r >= period) r -= period;
    return r;
}

std::size_t wrap_index(long long n, std::size_t size) {
    const long long s = static_cast<long long>(size);
    long long r = n % s;
    return static_cast<std::size_t>(r < 0 ? r + s : r);
}

// Reflection without edge repeat: -1 -> 1, n -> n-2.
std::size_t reflect_index(long long n, std::size_t size) {
    if (size == 1) return 0;
    const long long period = 2 * (static_cast<long long>(size) - 1);
    long long r = n % period;
    if (r < 0) r += period;
    if (r >= static_cast<long long>(size)) r = period - r;
    return static_cast<std::size_t>(r);
}

KernelSamplingGrid make_shell(GridKind kind, std::size_t height, std::size_t width, std::size_t k,
                              std::size_t stride) {
    KernelSamplingGrid g;
    g.kind = kind;
    g.in_height = height;
    g.in_width = width;
    g.out_height = height / stride;
    g.out_width = width / stride;
    g.kernel = k;
    g.stride = stride;
    g.rows.resize(g.entries());
    g.cols.resize(g.entries());
    g.src.resize(4 * g.entries());
    g.weight.resize(4 * g.entries());
    return g;
}

void set_corners(KernelSamplingGrid& g, std::size_t e, const std::size_t (&idx)[4], const double (&w)[4]) {
    for (int q = 0; q < 4; ++q) {
        g.src[4 * e + q] = static_cast<std::uint32_t>(idx[q]);
        g.weight[4 * e + q] = w[q];
    }
}

void build_gather_tables(KernelSamplingGrid& g) {
    const std::size_t taps = g.taps(), npix = g.out_pixels();
    g.gather_src.resize(4 * g.entries());
    g.gather_weight_f.resize(4 * g.entries());
    g.gather_weight_d.resize(4 * g.entries());
    for (std::size_t p = 0; p < npix; ++p)
        for (std::size_t t = 0; t < taps; ++t)
            for (int q = 0; q < 4; ++q) {
                const std::size_t from = 4 * (t * npix + p) + q, to = 4 * (p * taps + t) + q;
                g.gather_src[to] = g.src[from];
                g.gather_weight_d[to] = g.weight[from];
                g.gather_weight_f[to] = static_cast<float>(g.weight[from]);
            }
}

}  // namespace

SpherePoint erp_to_sphere(std::size_t i, std::size_t j, std::size_t height, std::size_t width) {
    if (i >= height || j >= width) throw std::out_of_range("erp_to_sphere: pixel outside the frame");
    const double h = static_cast<double>(height), w = static_cast<double>(width);
    return {kPi * (0.5 - (static_cast<double>(i) + 0.5) / h), 2.0 * kPi * ((static_cast<double>(j) + 0.5) / w - 0.5)};
}

PixelCoord sphere_to_erp(SpherePoint p, std::size_t height, std::size_t width) {
    const double h = static_cast<double>(height), w = static_cast<double>(width);
    return {h * (0.5 - p.lat / kPi) - 0.5, wrap(w * (p.lon / (2.0 * kPi) + 0.5) - 0.5, w)};
}

std::vector<SpherePoint> gnomonic_kernel_locations(SpherePoint center, std::size_t k, double dx, double dy) {
    std::vector<SpherePoint> out(k * k);
    const double half = static_cast<double>(k / 2);
    const double sin_c = std::sin(center.lat), cos_c = std::cos(center.lat);
    for (std::size_t u = 0; u < k; ++u) {
        for (std::size_t v = 0; v < k; ++v) {
            const double x = (static_cast<double>(v) - half) * dx;
            const double y = (half - static_cast<double>(u)) * dy;
            const double rho = std::hypot(x, y);
            SpherePoint& s = out[u * k + v];
            if (rho == 0.0) {
                s = center;
                continue;
            }
            const double nu = std::atan(rho);
            const double sin_nu = std::sin(nu), cos_nu = std::cos(nu);
            double arg = cos_nu * sin_c + y * sin_nu * cos_c / rho;
            arg = std::fmax(-1.0, std::fmin(1.0, arg));
            s.lat = std::asin(arg);
            s.lon = center.lon + std::atan2(x * sin_nu, rho * cos_c * cos_nu - y * sin_c * sin_nu);
        }
    }
    return out;
}

KernelSamplingGrid build_sampling_grid(std::size_t height, std::size_t width, std::size_t k, std::size_t stride) {
    validate(height, width, k, stride);
    KernelSamplingGrid g = make_shell(GridKind::spherical, height, width, k, stride);
    const double dx = std::tan(2.0 * kPi / static_cast<double>(width));
    const double dy = std::tan(kPi / static_cast<double>(height));
    const double w = static_cast<double>(width);
    const long long h_max = static_cast<long long>(height) - 1;
    const std::size_t npix = g.out_pixels();

    for (std::size_t i = 0; i < g.out_height; ++i) {
        for (std::size_t j = 0; j < g.out_width; ++j) {
            const std::size_t p = i * g.out_width + j;
            const auto taps = gnomonic_kernel_locations(erp_to_sphere(i, j, g.out_height, g.out_width), k, dx, dy);
            for (std::size_t t = 0; t < taps.size(); ++t) {
                const PixelCoord c = sphere_to_erp(taps[t], height, width);
                const std::size_t e = t * npix + p;
                g.rows[e] = c.row;
                g.cols[e] = c.col;

                const double r_floor = std::floor(c.row);
                const double fr = c.row - r_floor;
                std::size_t idx[4];
                double wt[4];
                for (int a = 0; a < 2; ++a) {
                    long long row = static_cast<long long>(r_floor) + a;
                    double col = c.col;
                    if (row < 0) {
                        row = -row - 1;
                        col += 0.5 * w;
                    } else if (row > h_max) {
                        row = 2 * static_cast<long long>(height) - 1 - row;
                        col += 0.5 * w;
                    }
                    col = wrap(col, w);
                    const double c_floor = std::floor(col);
                    const double fc = col - c_floor;
                    const double wr = a == 0 ? 1.0 - fr : fr;
                    for (int b = 0; b < 2; ++b) {
                        const std::size_t cc = wrap_index(static_cast<long long>(c_floor) + b, width);
                        idx[2 * a + b] = static_cast<std::size_t>(row) * width + cc;
                        wt[2 * a + b] = wr * (b == 0 ? 1.0 - fc : fc);
                    }
                }
                set_corners(g, e, idx, wt);
            }
        }
    }
    build_gather_tables(g);
    return g;
}

KernelSamplingGrid build_regular_grid(std::size_t height, std::size_t width, std::size_t k, std::size_t stride) {
    validate(height, width, k, stride);
    KernelSamplingGrid g = make_shell(GridKind::regular, height, width, k, stride);
    const double offset = 0.5 * static_cast<double>(stride - 1);
    const long long half = static_cast<long long>(k / 2);
    const std::size_t npix = g.out_pixels();

    for (std::size_t i = 0; i < g.out_height; ++i) {
        for (std::size_t j = 0; j < g.out_width; ++j) {
            const std::size_t p = i * g.out_width + j;
            for (std::size_t u = 0; u < k; ++u) {
                for (std::size_t v = 0; v < k; ++v) {
                    const std::size_t e = (u * k + v) * npix + p;
                    const double row = static_cast<double>(stride * i) + offset + static_cast<double>(u) - half;
                    const double col = static_cast<double>(stride * j) + offset + static_cast<double>(v) - half;
                    g.rows[e] = row;
                    g.cols[e] = col;
                    const double r_floor = std::floor(row), c_floor = std::floor(col);
                    const double fr = row - r_floor, fc = col - c_floor;
                    std::size_t idx[4];
                    double wt[4];
                    for (int a = 0; a < 2; ++a) {
                        const std::size_t rr = reflect_index(static_cast<long long>(r_floor) + a, height);
                        for (int b = 0; b < 2; ++b) {
                            const std::size_t cc = reflect_index(static_cast<long long>(c_floor) + b, width);
                            idx[2 * a + b] = rr * width + cc;
                            wt[2 * a + b] = (a == 0 ? 1.0 - fr : fr) * (b == 0 ? 1.0 - fc : fc);
                        }
                    }
                    set_corners(g, e, idx, wt);
                }
            }
        }
    }
    build_gather_tables(g);
    return g;
}

std::shared_ptr<const KernelSamplingGrid> sampling_grid(GridKind kind, std::size_t height, std::size_t width,
                                                        std::size_t k, std::size_t stride) {
    using Key = std::tuple<int, std::size_t, std::size_t, std::size_t, std::size_t>;
    static std::mutex mutex;
    static std::map<Key, std::shared_ptr<const KernelSamplingGrid>> cache;

    const Key key{static_cast<int>(kind), height, width, k, stride};
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    auto grid = std::make_shared<const KernelSamplingGrid>(kind == GridKind::spherical
                                                               ? build_sampling_grid(height, width, k, stride)
                                                               : build_regular_grid(height, width, k, stride));
    cache.emplace(key, grid);
    return grid;
}

}  // namespace odvqa
