#include "splatlab/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace splatlab {

namespace {

void require_same_shape(const ImageBuffer& a, const ImageBuffer& b, const char* what) {
    if (!a.same_shape(b) || a.size() != b.size()) {
        throw std::invalid_argument(std::string(what) + ": image shape mismatch");
    }
}

struct Plane {
    int w = 0;
    int h = 0;
    std::vector<double> v;
    double& operator()(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
    double operator()(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

Plane channel(const ImageBuffer& img, int c) {
    Plane p{img.width, img.height, std::vector<double>(static_cast<std::size_t>(img.width) * img.height)};
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) p(x, y) = img.at(x, y, c);
    }
    return p;
}

// Separable "valid" correlation: output is (w - k + 1) x (h - k + 1).
Plane filter_valid(const Plane& in, const std::vector<double>& taps) {
    const int k = static_cast<int>(taps.size());
    Plane tmp{in.w - k + 1, in.h, std::vector<double>(static_cast<std::size_t>(in.w - k + 1) * in.h)};
    for (int y = 0; y < in.h; ++y) {
        for (int x = 0; x < tmp.w; ++x) {
            double s = 0.0;
            for (int u = 0; u < k; ++u) s += taps[u] * in(x + u, y);
            tmp(x, y) = s;
        }
    }
    Plane out{tmp.w, in.h - k + 1, std::vector<double>(static_cast<std::size_t>(tmp.w) * (in.h - k + 1))};
    for (int y = 0; y < out.h; ++y) {
        for (int x = 0; x < out.w; ++x) {
            double s = 0.0;
            for (int u = 0; u < k; ++u) s += taps[u] * tmp(x, y + u);
            out(x, y) = s;
        }
    }
    return out;
}

// Adjoint of filter_valid: scatters a valid-grid map back onto the full image grid.
Plane filter_valid_adjoint(const Plane& g, const std::vector<double>& taps, int w, int h) {
    const int k = static_cast<int>(taps.size());
    Plane tmp{g.w, h, std::vector<double>(static_cast<std::size_t>(g.w) * h, 0.0)};
    for (int y = 0; y < g.h; ++y) {
        for (int x = 0; x < g.w; ++x) {
            const double v = g(x, y);
            for (int u = 0; u < k; ++u) tmp(x, y + u) += taps[u] * v;
        }
    }
    Plane out{w, h, std::vector<double>(static_cast<std::size_t>(w) * h, 0.0)};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < g.w; ++x) {
            const double v = tmp(x, y);
            for (int u = 0; u < k; ++u) out(x + u, y) += taps[u] * v;
        }
    }
    return out;
}

Plane product(const Plane& a, const Plane& b) {
    Plane p = a;
    for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] *= b.v[i];
    return p;
}

double ssim_impl(const ImageBuffer& a, const ImageBuffer& b, const SsimParams& prm, std::vector<double>* grad_a) {
    require_same_shape(a, b, "ssim");
    if (a.width < prm.window || a.height < prm.window) {
        throw std::invalid_argument("ssim: image smaller than the window");
    }
    const auto taps = gaussian_window(prm.window, prm.sigma);
    const double c1 = (prm.k1 * prm.dynamic_range) * (prm.k1 * prm.dynamic_range);
    const double c2 = (prm.k2 * prm.dynamic_range) * (prm.k2 * prm.dynamic_range);
    if (grad_a) grad_a->assign(a.size(), 0.0);

    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        const Plane x = channel(a, c);
        const Plane y = channel(b, c);
        const Plane mx = filter_valid(x, taps);
        const Plane my = filter_valid(y, taps);
        const Plane exx = filter_valid(product(x, x), taps);
        const Plane eyy = filter_valid(product(y, y), taps);
        const Plane exy = filter_valid(product(x, y), taps);
        const std::size_t n = mx.v.size();
        Plane d_mu{mx.w, mx.h, std::vector<double>(n)};
        Plane d_xx = d_mu, d_xy = d_mu;
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double ux = mx.v[i], uy = my.v[i];
            const double vx = exx.v[i] - ux * ux;
            const double vy = eyy.v[i] - uy * uy;
            const double cxy = exy.v[i] - ux * uy;
            const double a1 = 2.0 * ux * uy + c1;
            const double a2 = 2.0 * cxy + c2;
            const double b1 = ux * ux + uy * uy + c1;
            const double b2 = vx + vy + c2;
            const double s = (a1 * a2) / (b1 * b2);
            sum += s;
            if (grad_a) {
                d_mu.v[i] = s * (2.0 * uy / a1 - 2.0 * uy / a2 - 2.0 * ux / b1 + 2.0 * ux / b2);
                d_xx.v[i] = -s / b2;
                d_xy.v[i] = 2.0 * s / a2;
            }
        }
        total += sum / static_cast<double>(n);
        if (grad_a) {
            const double scale = 1.0 / (3.0 * static_cast<double>(n));
            const Plane g_mu = filter_valid_adjoint(d_mu, taps, a.width, a.height);
            const Plane g_xx = filter_valid_adjoint(d_xx, taps, a.width, a.height);
            const Plane g_xy = filter_valid_adjoint(d_xy, taps, a.width, a.height);
            for (int py = 0; py < a.height; ++py) {
                for (int px = 0; px < a.width; ++px) {
                    (*grad_a)[a.index(px, py, c)] =
                        scale * (g_mu(px, py) + 2.0 * x(px, py) * g_xx(px, py) + y(px, py) * g_xy(px, py));
                }
            }
        }
    }
    return total / 3.0;
}

}  // namespace

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> taps(size);
    const double mid = 0.5 * (size - 1);
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        taps[i] = std::exp(-0.5 * (i - mid) * (i - mid) / (sigma * sigma));
        sum += taps[i];
    }
    for (double& t : taps) t /= sum;
    return taps;
}

double mse(const ImageBuffer& a, const ImageBuffer& b) {
    require_same_shape(a, b, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
    const double m = mse(a, b);
    if (m == 0.0) return kPsnrInfinite;
    return 10.0 * std::log10(1.0 / m);
}

double ssim(const ImageBuffer& a, const ImageBuffer& b, const SsimParams& params) {
    return ssim_impl(a, b, params, nullptr);
}

double ssim_with_grad(const ImageBuffer& a, const ImageBuffer& b, std::vector<double>& grad_a,
                      const SsimParams& params) {
    return ssim_impl(a, b, params, &grad_a);
}

double l1_loss(const ImageBuffer& a, const ImageBuffer& b, std::vector<double>* grad_a) {
    require_same_shape(a, b, "l1");
    const double inv_n = 1.0 / static_cast<double>(a.size());
    double s = 0.0;
    if (grad_a) grad_a->assign(a.size(), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        s += std::abs(d);
        if (grad_a) (*grad_a)[i] = d > 0.0 ? inv_n : (d < 0.0 ? -inv_n : 0.0);
    }
    return s * inv_n;
}

}  // namespace splatlab
