#pragma once

#include "splatlab/image.hpp"

#include <limits>
#include <vector>

namespace splatlab {

inline constexpr double kPsnrInfinite = std::numeric_limits<double>::infinity();

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

/// 10 log10(1 / MSE); returns kPsnrInfinite for identical images.
double psnr(const ImageBuffer& a, const ImageBuffer& b);

double mse(const ImageBuffer& a, const ImageBuffer& b);

/// Mean local SSIM over all valid (fully inside) windows, per channel, averaged.
double ssim(const ImageBuffer& a, const ImageBuffer& b, const SsimParams& params = {});

/// SSIM and its gradient with respect to `a`.
double ssim_with_grad(const ImageBuffer& a, const ImageBuffer& b, std::vector<double>& grad_a,
                      const SsimParams& params = {});

/// Structural dissimilarity (1 - SSIM) / 2.
inline double dssim_from_ssim(double s) { return 0.5 * (1.0 - s); }

/// Normalized 1D Gaussian taps used by ssim.
std::vector<double> gaussian_window(int size, double sigma);

/// Mean absolute difference over all channels; gradient w.r.t. `a` written to grad_a when non-null.
double l1_loss(const ImageBuffer& a, const ImageBuffer& b, std::vector<double>* grad_a = nullptr);

}  // namespace splatlab
