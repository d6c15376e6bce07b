#include "splatlab/net.hpp"

#include "splatlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace splatlab {

// ---- config ----------------------------------------------------------------

void NetConfig::validate() const {
    const std::size_t stages = depths_down.size();
    if (stages == 0) throw std::invalid_argument("net config: no down stages");
    if (dims_down.size() != stages) throw std::invalid_argument("net config: dims_down/depths_down length mismatch");
    if (pool_strides.size() != stages - 1) throw std::invalid_argument("net config: need one pool stride per down transition");
    if (depths_up.size() != stages - 1 || dims_up.size() != stages - 1) {
        throw std::invalid_argument("net config: up stages must mirror every pool");
    }
    const int out_dim = dims_up.empty() ? dims_down.back() : dims_up.back();
    if (feature_dim != out_dim) throw std::invalid_argument("net config: feature_dim must equal the last up-stage dim");
    for (int d : dims_down) {
        if (d <= 0 || d % num_heads != 0) throw std::invalid_argument("net config: dims must be positive multiples of num_heads");
    }
    for (int d : dims_up) {
        if (d <= 0 || d % num_heads != 0) throw std::invalid_argument("net config: dims must be positive multiples of num_heads");
    }
    for (int s : pool_strides) {
        if (s < 1) throw std::invalid_argument("net config: pool stride must be >= 1");
    }
    if (grid_resolution < 1 || grid_resolution > 1024) throw std::invalid_argument("net config: grid_resolution in [1, 1024]");
    if (window < 1 || num_heads < 1 || head_hidden < 1 || head_layers < 1 || mlp_ratio < 1) {
        throw std::invalid_argument("net config: sizes must be positive");
    }
}

NetConfig NetConfig::desk() { return {}; }

NetConfig NetConfig::paper() {
    NetConfig c;
    c.depths_down = {2, 2, 2, 6, 2};
    c.dims_down = {64, 96, 128, 256, 512};
    c.depths_up = {2, 2, 2, 2};
    c.dims_up = {256, 128, 96, 96};
    c.pool_strides = {1, 2, 2, 2};
    c.feature_dim = 96;
    c.grid_resolution = 384;
    c.window = 1024;
    c.num_heads = 2;
    c.head_hidden = 512;
    return c;
}

// ---- normalization and features -------------------------------------------

NormalizedCloud normalize_cloud(const SplatCloud& cloud) {
    NormalizedCloud nc;
    nc.cloud = cloud;
    if (cloud.empty()) return nc;
    Vec3 lo = cloud.splats[0].position, hi = lo;
    for (const auto& s : cloud.splats) {
        lo = lo.cwiseMin(s.position);
        hi = hi.cwiseMax(s.position);
    }
    const double extent = (hi - lo).maxCoeff();
    nc.extent = extent > 1e-12 ? extent : 1.0;
    nc.offset = 0.5 * (lo + hi) - Vec3::Constant(0.5 * nc.extent);
    const double log_extent = std::log(nc.extent);
    for (auto& s : nc.cloud.splats) {
        s.position = ((s.position - nc.offset) / nc.extent).cwiseMax(0.0).cwiseMin(1.0);
        s.log_scale.array() -= log_extent;
    }
    return nc;
}

SplatCloud denormalize_cloud(const NormalizedCloud& nc) {
    SplatCloud out = nc.cloud;
    const double log_extent = std::log(nc.extent);
    for (auto& s : out.splats) {
        s.position = s.position * nc.extent + nc.offset;
        s.log_scale.array() += log_extent;
    }
    return out;
}

std::vector<double> featurize(const SplatCloud& cloud) {
    const int d = cloud.coeff_count();
    const int width = feature_width(cloud.sh_degree);
    std::vector<double> out;
    out.reserve(cloud.size() * width);
    for (const auto& s : cloud.splats) {
        for (int i = d; i < kMaxShCoeffs; ++i) {
            if (!s.sh[i].isZero()) throw SplatError("featurize: mixed SH degrees in one cloud");
        }
        out.insert(out.end(), s.position.data(), s.position.data() + 3);
        out.push_back(s.opacity_logit);
        out.insert(out.end(), s.log_scale.data(), s.log_scale.data() + 3);
        out.insert(out.end(), s.rotation.data(), s.rotation.data() + 4);
        for (int i = 0; i < d; ++i) out.insert(out.end(), s.sh[i].data(), s.sh[i].data() + 3);
    }
    return out;
}

// ---- serialization and pooling ----------------------------------------------

std::uint32_t morton3(std::uint32_t x, std::uint32_t y, std::uint32_t z) {
    auto spread = [](std::uint32_t v) {
        v &= 0x3ff;
        v = (v | (v << 16)) & 0x030000ff;
        v = (v | (v << 8)) & 0x0300f00f;
        v = (v | (v << 4)) & 0x030c30c3;
        v = (v | (v << 2)) & 0x09249249;
        return v;
    };
    return spread(x) | (spread(y) << 1) | (spread(z) << 2);
}

std::vector<VoxelCoord> voxelize(const std::vector<Vec3>& positions, int grid_resolution) {
    std::vector<VoxelCoord> out(positions.size());
    const double g = grid_resolution;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            const double v = std::floor(std::clamp(positions[i][k], 0.0, 1.0) * g);
            out[i][k] = static_cast<std::uint32_t>(std::clamp(v, 0.0, g - 1.0));
        }
    }
    return out;
}

namespace {

// Serialization with an optional extra tie-break key per point (row-major, `width` values).
std::vector<int> serialize_with_key(const std::vector<Vec3>& positions, int grid_resolution,
                                    const std::vector<double>* extra, int width) {
    const auto coords = voxelize(positions, grid_resolution);
    std::vector<std::uint32_t> code(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) code[i] = morton3(coords[i][0], coords[i][1], coords[i][2]);
    std::vector<int> order(positions.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (code[a] != code[b]) return code[a] < code[b];
        for (int k = 0; k < 3; ++k) {
            if (positions[a][k] != positions[b][k]) return positions[a][k] < positions[b][k];
        }
        if (extra != nullptr) {
            const double* ra = extra->data() + static_cast<std::size_t>(a) * width;
            const double* rb = extra->data() + static_cast<std::size_t>(b) * width;
            for (int k = 0; k < width; ++k) {
                if (ra[k] != rb[k]) return ra[k] < rb[k];
            }
        }
        return a < b;
    });
    return order;
}

}  // namespace

std::vector<int> serialize(const std::vector<Vec3>& positions, int grid_resolution) {
    return serialize_with_key(positions, grid_resolution, nullptr, 0);
}

PoolMap grid_pool_map(const std::vector<VoxelCoord>& coords, int stride) {
    if (stride < 1) throw std::invalid_argument("grid_pool: stride must be >= 1");
    const auto s = static_cast<std::uint32_t>(stride);
    std::vector<std::pair<std::uint32_t, int>> keyed(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        keyed[i] = {morton3(coords[i][0] / s, coords[i][1] / s, coords[i][2] / s), static_cast<int>(i)};
    }
    std::sort(keyed.begin(), keyed.end());
    PoolMap map;
    map.cell_of.assign(coords.size(), -1);
    for (std::size_t i = 0; i < keyed.size(); ++i) {
        if (i == 0 || keyed[i].first != keyed[i - 1].first) {
            const VoxelCoord& c = coords[keyed[i].second];
            map.cell_coord.push_back({c[0] / s, c[1] / s, c[2] / s});
            map.count.push_back(0);
        }
        map.cell_of[keyed[i].second] = map.cells() - 1;
        ++map.count.back();
    }
    return map;
}

template <class T>
PoolResult<T> grid_pool(ad::Tensor<T> features, const std::vector<Vec3>& positions,
                        const std::vector<VoxelCoord>& coords, int stride) {
    PoolResult<T> r{features, {}, grid_pool_map(coords, stride)};
    r.features = ad::scatter_mean(features, r.map.cell_of, r.map.cells());
    r.positions.assign(r.map.cells(), Vec3::Zero());
    for (std::size_t i = 0; i < positions.size(); ++i) r.positions[r.map.cell_of[i]] += positions[i];
    for (int c = 0; c < r.map.cells(); ++c) r.positions[c] /= r.map.count[c];
    return r;
}

template <class T>
ad::Tensor<T> grid_unpool(ad::Tensor<T> pooled, const PoolMap& map) {
    return ad::gather(pooled, map.cell_of);
}

Hierarchy build_hierarchy(const SplatCloud& normalized, const NetConfig& cfg) {
    std::vector<Vec3> pos(normalized.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = normalized.splats[i].position;
    const auto features = featurize(normalized);
    Hierarchy h;
    h.order = serialize_with_key(pos, cfg.grid_resolution, &features, feature_width(normalized.sh_degree));
    h.inverse.assign(h.order.size(), 0);
    for (std::size_t i = 0; i < h.order.size(); ++i) h.inverse[h.order[i]] = static_cast<int>(i);
    std::vector<Vec3> ordered(pos.size());
    for (std::size_t i = 0; i < pos.size(); ++i) ordered[i] = pos[h.order[i]];
    std::vector<VoxelCoord> coords = voxelize(ordered, cfg.grid_resolution);
    h.level_sizes.push_back(static_cast<int>(coords.size()));
    for (int stride : cfg.pool_strides) {
        h.pools.push_back(grid_pool_map(coords, stride));
        coords = h.pools.back().cell_coord;
        h.level_sizes.push_back(static_cast<int>(coords.size()));
    }
    return h;
}

// ---- network ---------------------------------------------------------------

template <class T>
ad::Tensor<T> SplatFormer<T>::Linear::operator()(ad::Tape<T>& tape, ad::Tensor<T> x) const {
    return ad::add(ad::matmul(x, tape.param(*w)), tape.param(*b));
}

template <class T>
ad::Tensor<T> SplatFormer<T>::Norm::operator()(ad::Tape<T>& tape, ad::Tensor<T> x) const {
    return ad::layer_norm(x, tape.param(*gamma), tape.param(*beta));
}

template <class T>
typename SplatFormer<T>::Linear SplatFormer<T>::make_linear(const std::string& name, int in, int out, bool zero) {
    auto& w = store_.emplace_back(name + ".w", ad::Shape{in, out});
    auto& b = store_.emplace_back(name + ".b", ad::Shape{1, out});
    if (!zero) {
        Rng rng(Rng::mix(cfg_.seed, init_counter_));
        const double a = 1.0 / std::sqrt(static_cast<double>(in));
        for (T& v : w.value) v = static_cast<T>(rng.uniform(-a, a));
    }
    ++init_counter_;
    return {&w, &b};
}

template <class T>
typename SplatFormer<T>::Norm SplatFormer<T>::make_norm(const std::string& name, int dim) {
    auto& g = store_.emplace_back(name + ".gamma", ad::Shape{1, dim});
    auto& b = store_.emplace_back(name + ".beta", ad::Shape{1, dim});
    std::fill(g.value.begin(), g.value.end(), T(1));
    return {&g, &b};
}

template <class T>
SplatFormer<T>::SplatFormer(const NetConfig& cfg, int sh_degree) : cfg_(cfg), sh_degree_(sh_degree) {
    cfg_.validate();
    if (sh_degree < 0 || sh_degree > kMaxShDegree) throw std::invalid_argument("SplatFormer: unsupported sh degree");
    const int in_width = feature_width(sh_degree);
    const int stages = static_cast<int>(cfg_.depths_down.size());

    embed_ = {make_linear("embed", in_width, cfg_.dims_down[0]), make_norm("embed.norm", cfg_.dims_down[0])};
    auto make_blocks = [&](const std::string& prefix, int depth, int dim) {
        std::vector<Block> blocks;
        for (int b = 0; b < depth; ++b) {
            const std::string p = prefix + ".block" + std::to_string(b);
            blocks.push_back({make_norm(p + ".norm1", dim), make_norm(p + ".norm2", dim), make_linear(p + ".qkv", dim, 3 * dim),
                              make_linear(p + ".proj", dim, dim), make_linear(p + ".fc1", dim, cfg_.mlp_ratio * dim),
                              make_linear(p + ".fc2", cfg_.mlp_ratio * dim, dim)});
        }
        return blocks;
    };
    for (int s = 0; s < stages; ++s) {
        if (s > 0) {
            const std::string p = "pool" + std::to_string(s);
            pool_proj_.push_back({make_linear(p, cfg_.dims_down[s - 1], cfg_.dims_down[s]), make_norm(p + ".norm", cfg_.dims_down[s])});
        }
        down_.push_back(make_blocks("down" + std::to_string(s), cfg_.depths_down[s], cfg_.dims_down[s]));
    }
    int current = cfg_.dims_down.back();
    for (int j = 0; j + 1 < stages; ++j) {
        const int level = stages - 2 - j;
        const int dim = cfg_.dims_up[j];
        const std::string p = "up" + std::to_string(j);
        unpool_proj_.push_back({make_linear(p + ".unpool", current, dim), make_norm(p + ".unpool.norm", dim)});
        skip_proj_.push_back({make_linear(p + ".skip", cfg_.dims_down[level], dim), make_norm(p + ".skip.norm", dim)});
        up_.push_back(make_blocks(p, cfg_.depths_up[j], dim));
        current = dim;
    }

    const int head_in = cfg_.feature_dim + in_width;
    const std::array<int, 5> head_out{3, 1, 4, 3, 3 * sh_coeff_count(sh_degree)};
    const std::array<const char*, 5> head_name{"head.position", "head.opacity", "head.rotation", "head.scale", "head.sh"};
    for (int k = 0; k < 5; ++k) {
        int in = head_in;
        for (int l = 0; l < cfg_.head_layers; ++l) {
            const bool last = l + 1 == cfg_.head_layers;
            const int out = last ? head_out[k] : cfg_.head_hidden;
            heads_[k].push_back(make_linear(std::string(head_name[k]) + (last ? ".out" : ".fc" + std::to_string(l)), in, out,
                                            last && cfg_.residual));
            in = out;
        }
    }
}

template <class T>
std::vector<ad::Parameter<T>*> SplatFormer<T>::parameters() {
    std::vector<ad::Parameter<T>*> out;
    for (auto& p : store_) out.push_back(&p);
    return out;
}

template <class T>
std::vector<const ad::Parameter<T>*> SplatFormer<T>::parameters() const {
    std::vector<const ad::Parameter<T>*> out;
    for (const auto& p : store_) out.push_back(&p);
    return out;
}

template <class T>
void SplatFormer<T>::zero_grad() {
    for (auto& p : store_) p.zero_grad();
}

template <class T>
ad::Tensor<T> SplatFormer<T>::project(ad::Tape<T>& tape, ad::Tensor<T> x, const Projection& p) const {
    return ad::relu(p.norm(tape, p.linear(tape, x)));
}

template <class T>
ad::Tensor<T> SplatFormer<T>::block(ad::Tape<T>& tape, ad::Tensor<T> x, const Block& b) const {
    auto attn = ad::windowed_attention(b.qkv(tape, b.norm1(tape, x)), cfg_.num_heads, cfg_.window);
    x = ad::add(x, b.proj(tape, attn));
    auto mlp = b.fc2(tape, ad::relu(b.fc1(tape, b.norm2(tape, x))));
    return ad::add(x, mlp);
}

template <class T>
ad::Tensor<T> SplatFormer<T>::attention_stage(ad::Tape<T>& tape, ad::Tensor<T> x, int stage) const {
    for (const Block& b : down_.at(stage)) x = block(tape, x, b);
    return x;
}

template <class T>
ad::Tensor<T> SplatFormer<T>::encode(ad::Tape<T>& tape, ad::Tensor<T> raw, const Hierarchy& h) const {
    const int stages = static_cast<int>(down_.size());
    if (raw.rows() < 1) throw std::invalid_argument("encode: empty cloud");
    auto x = project(tape, ad::gather(raw, h.order), embed_);
    std::vector<ad::Tensor<T>> skips;
    for (int s = 0; s < stages; ++s) {
        if (s > 0) {
            const PoolMap& map = h.pools[s - 1];
            x = project(tape, ad::scatter_mean(x, map.cell_of, map.cells()), pool_proj_[s - 1]);
        }
        x = attention_stage(tape, x, s);
        skips.push_back(x);
    }
    for (int j = 0; j + 1 < stages; ++j) {
        const int level = stages - 2 - j;
        auto up = grid_unpool(project(tape, x, unpool_proj_[j]), h.pools[level]);
        x = ad::add(up, project(tape, skips[level], skip_proj_[j]));
        for (const Block& b : up_[j]) x = block(tape, x, b);
    }
    return ad::gather(x, h.inverse);
}

template <class T>
ad::Tensor<T> SplatFormer<T>::decode(ad::Tape<T>& tape, ad::Tensor<T> features, ad::Tensor<T> raw) const {
    const auto in = ad::concat<T>({features, raw}, 1);
    std::array<ad::Tensor<T>, 5> out;
    for (int k = 0; k < 5; ++k) {
        auto x = in;
        for (std::size_t l = 0; l < heads_[k].size(); ++l) {
            x = heads_[k][l](tape, x);
            if (l + 1 < heads_[k].size()) x = ad::relu(x);
        }
        out[k] = x;
    }
    auto position = ad::tanh(out[0]);
    if (cfg_.position_unit_range) {
        position = ad::add(ad::scale(position, T(0.5)), tape.constant({1, 3}, {T(0.5), T(0.5), T(0.5)}));
    }
    if (cfg_.position_scale != 1.0) position = ad::scale(position, static_cast<T>(cfg_.position_scale));
    // flatten_splat order: position, log_scale, rotation, opacity, sh.
    return ad::concat<T>({position, out[3], out[2], out[1], out[4]}, 1);
}

template <class T>
ad::Tensor<T> SplatFormer<T>::forward(ad::Tape<T>& tape, const NormalizedCloud& nc) const {
    if (nc.cloud.empty()) throw std::invalid_argument("refine: empty cloud");
    if (nc.cloud.sh_degree != sh_degree_) throw std::invalid_argument("refine: cloud SH degree does not match the network");
    const Hierarchy h = build_hierarchy(nc.cloud, cfg_);
    const auto f = featurize(nc.cloud);
    auto raw = tape.constant({static_cast<int>(nc.cloud.size()), feature_width(sh_degree_)},
                             std::vector<T>(f.begin(), f.end()));
    return decode(tape, encode(tape, raw, h), raw);
}

template <class T>
ResidualSet to_residuals(std::span<const T> head_out, int count, int sh_degree) {
    const int width = feature_width(sh_degree);
    if (head_out.size() != static_cast<std::size_t>(count) * width) throw std::invalid_argument("to_residuals: size mismatch");
    ResidualSet r;
    r.sh_degree = sh_degree;
    r.deltas.reserve(count);
    std::vector<double> row(width);
    for (int k = 0; k < count; ++k) {
        for (int i = 0; i < width; ++i) row[i] = static_cast<double>(head_out[static_cast<std::size_t>(k) * width + i]);
        r.deltas.push_back(unflatten_splat(row, sh_degree));
    }
    return r;
}

SplatCloud apply_residuals(const NormalizedCloud& nc, const ResidualSet& res, bool residual) {
    if (res.deltas.size() != nc.cloud.size() || res.sh_degree != nc.cloud.sh_degree) {
        throw std::invalid_argument("apply_residuals: residual set does not match the cloud");
    }
    NormalizedCloud out = nc;
    const int d = nc.cloud.coeff_count();
    for (std::size_t k = 0; k < nc.cloud.size(); ++k) {
        GaussianSplat& s = out.cloud.splats[k];
        const GaussianSplat& r = res.deltas[k];
        const double keep = residual ? 1.0 : 0.0;
        s.position = keep * s.position + r.position;
        s.log_scale = keep * s.log_scale + r.log_scale;
        s.opacity_logit = keep * s.opacity_logit + r.opacity_logit;
        s.rotation = normalize_quat(keep * s.rotation + r.rotation);
        for (int i = 0; i < d; ++i) s.sh[i] = keep * s.sh[i] + r.sh[i];
    }
    return denormalize_cloud(out);
}

std::vector<double> residual_gradient(const NormalizedCloud& nc, const ResidualSet& res,
                                      const std::vector<GaussianSplat>& refined_grads, bool residual) {
    const int width = feature_width(nc.cloud.sh_degree);
    std::vector<double> out(nc.cloud.size() * width);
    const double keep = residual ? 1.0 : 0.0;
    for (std::size_t k = 0; k < nc.cloud.size(); ++k) {
        GaussianSplat g = refined_grads[k];
        g.position *= nc.extent;
        // The renderer's quaternion gradient is already tangent at the unit
        // quaternion; the remaining normalization factor is 1/|u|.
        const Vec4 u = keep * nc.cloud.splats[k].rotation + res.deltas[k].rotation;
        g.rotation /= u.norm();
        flatten_splat(g, nc.cloud.sh_degree, std::span<double>(out).subspan(k * width, width));
    }
    return out;
}

template class SplatFormer<float>;
template class SplatFormer<double>;
template PoolResult<float> grid_pool(ad::Tensor<float>, const std::vector<Vec3>&, const std::vector<VoxelCoord>&, int);
template PoolResult<double> grid_pool(ad::Tensor<double>, const std::vector<Vec3>&, const std::vector<VoxelCoord>&, int);
template ad::Tensor<float> grid_unpool(ad::Tensor<float>, const PoolMap&);
template ad::Tensor<double> grid_unpool(ad::Tensor<double>, const PoolMap&);
template ResidualSet to_residuals(std::span<const float>, int, int);
template ResidualSet to_residuals(std::span<const double>, int, int);

}  // namespace splatlab
