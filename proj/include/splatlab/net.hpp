#pragma once

// Point-transformer refiner: featurize -> serialize -> U-shaped windowed
// attention encoder -> five decoder heads -> residuals on splat attributes.

#include "splatlab/splat.hpp"
#include "splatlab/tensor.hpp"

#include <array>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

namespace splatlab {

struct NetConfig {
    std::vector<int> depths_down{1, 1, 2};
    std::vector<int> dims_down{16, 32, 64};
    std::vector<int> depths_up{1, 1};
    std::vector<int> dims_up{32, 16};
    /// Strides of the pools between consecutive down stages.
    std::vector<int> pool_strides{2, 2};
    int feature_dim = 16;
    int grid_resolution = 64;
    int window = 16;
    int num_heads = 2;
    int head_hidden = 64;
    int head_layers = 4;
    int mlp_ratio = 4;
    /// Multiplier on tanh for the position head.
    double position_scale = 1.0;
    /// Maps the position head to [0, 1] via (tanh + 1) / 2 instead of [-1, 1].
    bool position_unit_range = false;
    /// false: heads predict absolute attributes (ablation) and are not zero-initialized.
    bool residual = true;
    std::uint64_t seed = 0;

    void validate() const;
    static NetConfig desk();
    static NetConfig paper();
};

/// Cloud with positions mapped into [0, 1]^3 by a uniform scale and offset.
/// Log-scales shift by -log(extent) so geometry is preserved.
struct NormalizedCloud {
    SplatCloud cloud;
    Vec3 offset = Vec3::Zero();
    double extent = 1.0;
};

NormalizedCloud normalize_cloud(const SplatCloud& cloud);
SplatCloud denormalize_cloud(const NormalizedCloud& nc);

/// Raw attributes per splat: position, opacity_logit, log_scale, quaternion, sh.
/// Throws SplatError when a splat carries SH rows beyond the cloud's degree.
std::vector<double> featurize(const SplatCloud& cloud);
inline int feature_width(int sh_degree) { return 11 + 3 * sh_coeff_count(sh_degree); }

/// Interleaves the low 10 bits of each coordinate: x -> bit 0, y -> bit 1, z -> bit 2.
std::uint32_t morton3(std::uint32_t x, std::uint32_t y, std::uint32_t z);

using VoxelCoord = std::array<std::uint32_t, 3>;
std::vector<VoxelCoord> voxelize(const std::vector<Vec3>& positions, int grid_resolution);

/// Serialized order: indices sorted by (Morton code, position, original index).
std::vector<int> serialize(const std::vector<Vec3>& positions, int grid_resolution);

/// Cell assignment of one pooling step. Cells are numbered in Morton order.
struct PoolMap {
    std::vector<int> cell_of;          // per input point
    std::vector<VoxelCoord> cell_coord;
    std::vector<int> count;            // members per cell
    int cells() const { return static_cast<int>(cell_coord.size()); }
};

PoolMap grid_pool_map(const std::vector<VoxelCoord>& coords, int stride);

template <class T>
struct PoolResult {
    ad::Tensor<T> features;
    std::vector<Vec3> positions;
    PoolMap map;
};

/// Per-cell mean of features and positions.
template <class T>
PoolResult<T> grid_pool(ad::Tensor<T> features, const std::vector<Vec3>& positions,
                        const std::vector<VoxelCoord>& coords, int stride);

/// Broadcasts each cell row back to its members.
template <class T>
ad::Tensor<T> grid_unpool(ad::Tensor<T> pooled, const PoolMap& map);

/// Serialization and pooling structure of one cloud, shared by every layer.
struct Hierarchy {
    std::vector<int> order;                 // serialized position -> splat index
    std::vector<int> inverse;               // splat index -> serialized position
    std::vector<PoolMap> pools;             // level i -> level i + 1
    std::vector<int> level_sizes;
};

Hierarchy build_hierarchy(const SplatCloud& normalized, const NetConfig& cfg);

/// Per-splat attribute residuals (or absolute predictions in direct mode),
/// stored in GaussianSplat layout.
struct ResidualSet {
    int sh_degree = 0;
    std::vector<GaussianSplat> deltas;
};

template <class T>
class SplatFormer {
public:
    SplatFormer(const NetConfig& cfg, int sh_degree);

    const NetConfig& config() const { return cfg_; }
    int sh_degree() const { return sh_degree_; }

    std::vector<ad::Parameter<T>*> parameters();
    std::vector<const ad::Parameter<T>*> parameters() const;
    void zero_grad();

    /// Input features (K x feature_width) -> per-splat V-dim features, rows in splat order.
    ad::Tensor<T> encode(ad::Tape<T>& tape, ad::Tensor<T> raw, const Hierarchy& h) const;
    /// concat(features, raw) -> K x feature_width head outputs in flatten_splat order.
    ad::Tensor<T> decode(ad::Tape<T>& tape, ad::Tensor<T> features, ad::Tensor<T> raw) const;
    /// One attention stage on features already in serialized order.
    ad::Tensor<T> attention_stage(ad::Tape<T>& tape, ad::Tensor<T> x, int stage) const;
    /// Full forward pass on a normalized cloud; returns the head outputs.
    ad::Tensor<T> forward(ad::Tape<T>& tape, const NormalizedCloud& nc) const;

    // Layer building blocks (exposed for tests).
    struct Linear {
        ad::Parameter<T>* w = nullptr;
        ad::Parameter<T>* b = nullptr;
        ad::Tensor<T> operator()(ad::Tape<T>& tape, ad::Tensor<T> x) const;
    };
    struct Norm {
        ad::Parameter<T>* gamma = nullptr;
        ad::Parameter<T>* beta = nullptr;
        ad::Tensor<T> operator()(ad::Tape<T>& tape, ad::Tensor<T> x) const;
    };

private:
    struct Block {
        Norm norm1, norm2;
        Linear qkv, proj, fc1, fc2;
    };
    struct Projection {
        Linear linear;
        Norm norm;
    };

    Linear make_linear(const std::string& name, int in, int out, bool zero = false);
    Norm make_norm(const std::string& name, int dim);
    ad::Tensor<T> block(ad::Tape<T>& tape, ad::Tensor<T> x, const Block& b) const;
    ad::Tensor<T> project(ad::Tape<T>& tape, ad::Tensor<T> x, const Projection& p) const;

    NetConfig cfg_;
    int sh_degree_;
    std::deque<ad::Parameter<T>> store_;
    std::uint64_t init_counter_ = 0;

    Projection embed_;
    std::vector<std::vector<Block>> down_;
    std::vector<Projection> pool_proj_;
    std::vector<std::vector<Block>> up_;
    std::vector<Projection> unpool_proj_;
    std::vector<Projection> skip_proj_;
    std::array<std::vector<Linear>, 5> heads_;
};

/// Head output tensor values -> ResidualSet (splat order).
template <class T>
ResidualSet to_residuals(std::span<const T> head_out, int count, int sh_degree);

/// residual mode: attribute + delta (quaternion renormalized); direct mode:
/// delta replaces the attribute. Positions act in normalized space and the
/// result is un-normalized. Throws SplatError on a zero quaternion.
SplatCloud apply_residuals(const NormalizedCloud& nc, const ResidualSet& res, bool residual = true);

/// Chains render gradients of the refined cloud back to the head outputs
/// (flatten_splat layout per splat).
std::vector<double> residual_gradient(const NormalizedCloud& nc, const ResidualSet& res,
                                      const std::vector<GaussianSplat>& refined_grads, bool residual = true);

}  // namespace splatlab
