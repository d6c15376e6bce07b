#pragma once

#include "splatlab/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace splatlab {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One bias-corrected Adam update of x in place. `step` is the 1-based index
/// of this update. Throws NonFiniteError on a non-finite gradient, leaving
/// x, m and v untouched.
template <class T>
void adam_update(std::span<T> x, std::span<const T> g, std::span<T> m, std::span<T> v, std::int64_t step,
                 const AdamConfig& cfg);

/// Moments for an ordered parameter list.
template <class T>
struct AdamState {
    AdamConfig config;
    std::int64_t step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
};

/// Applies one update to every parameter from its accumulated grad.
template <class T>
void adam_step(const std::vector<ad::Parameter<T>*>& params, AdamState<T>& state);

// ---- gradient checking ---------------------------------------------------

struct GradCheckInput {
    ad::Shape shape;
    std::vector<double> value;
};

struct GradCheckReport {
    std::vector<double> worst_rel;  // per input
    std::vector<double> worst_abs;
    bool passed = false;
    double max_rel() const;
};

using GradCheckFn = std::function<ad::Tensor<double>(ad::Tape<double>&, const std::vector<ad::Tensor<double>>&)>;

/// Compares tape gradients of the scalar fn against central differences.
/// Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckReport grad_check(const GradCheckFn& fn, const std::vector<GradCheckInput>& inputs, double tolerance = 1e-3,
                           double h = 1e-3, double floor = 1e-6);

// ---- checkpoints ---------------------------------------------------------

/// Writes parameters as: magic "SPCK", u32 version, u32 count, then per
/// parameter {u32 name length, name, u32 rows, u32 cols, f32 data}, then a
/// u64 FNV-1a hash of every preceding byte.
void save_checkpoint(const std::filesystem::path& path, const std::vector<const ad::Parameter<float>*>& params);

/// Loads into parameters with matching names and shapes, in order.
/// Throws on a hash mismatch, a missing file, or a name/shape mismatch.
void load_checkpoint(const std::filesystem::path& path, const std::vector<ad::Parameter<float>*>& params);

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace splatlab
