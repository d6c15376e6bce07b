#include "splatlab/optim.hpp"

#include "splatlab/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace splatlab {

template <class T>
void adam_update(std::span<T> x, std::span<const T> g, std::span<T> m, std::span<T> v, std::int64_t step,
                 const AdamConfig& cfg) {
    if (g.size() != x.size() || m.size() != x.size() || v.size() != x.size()) {
        throw std::invalid_argument("adam_update: size mismatch");
    }
    if (step < 1) throw std::invalid_argument("adam_update: step must be >= 1");
    for (T gi : g) {
        if (!std::isfinite(static_cast<double>(gi))) throw NonFiniteError("adam: non-finite gradient");
    }
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double gi = g[i];
        const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
        const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        x[i] = static_cast<T>(x[i] - cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
    }
}

template <class T>
void adam_step(const std::vector<ad::Parameter<T>*>& params, AdamState<T>& state) {
    if (state.m.empty()) {
        for (const auto* p : params) {
            state.m.emplace_back(p->value.size(), T(0));
            state.v.emplace_back(p->value.size(), T(0));
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: parameter list changed");
    for (const auto* p : params) {
        for (T gi : p->grad) {
            if (!std::isfinite(static_cast<double>(gi))) throw NonFiniteError("adam: non-finite gradient in " + p->name);
        }
    }
    ++state.step;
    for (std::size_t k = 0; k < params.size(); ++k) {
        adam_update<T>(params[k]->value, params[k]->grad, state.m[k], state.v[k], state.step, state.config);
    }
}

template void adam_update<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                                  std::int64_t, const AdamConfig&);
template void adam_update<double>(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                                  std::int64_t, const AdamConfig&);
template void adam_step<float>(const std::vector<ad::Parameter<float>*>&, AdamState<float>&);
template void adam_step<double>(const std::vector<ad::Parameter<double>*>&, AdamState<double>&);

// ---- grad_check ------------------------------------------------------------

double GradCheckReport::max_rel() const {
    return worst_rel.empty() ? 0.0 : *std::max_element(worst_rel.begin(), worst_rel.end());
}

namespace {

double evaluate(const GradCheckFn& fn, const std::vector<GradCheckInput>& inputs) {
    ad::Tape<double> tape;
    std::vector<ad::Tensor<double>> xs;
    for (const auto& in : inputs) xs.push_back(tape.constant(in.shape, in.value));
    return fn(tape, xs).item();
}

}  // namespace

GradCheckReport grad_check(const GradCheckFn& fn, const std::vector<GradCheckInput>& inputs, double tolerance,
                           double h, double floor) {
    ad::Tape<double> tape;
    std::vector<ad::Tensor<double>> xs;
    for (const auto& in : inputs) xs.push_back(tape.input(in.shape, in.value));
    tape.backward(fn(tape, xs));

    GradCheckReport report;
    std::vector<GradCheckInput> probe = inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto analytic = tape.grad(xs[k]);
        double worst_rel = 0.0, worst_abs = 0.0;
        for (std::size_t i = 0; i < inputs[k].value.size(); ++i) {
            const double x0 = probe[k].value[i];
            probe[k].value[i] = x0 + h;
            const double fp = evaluate(fn, probe);
            probe[k].value[i] = x0 - h;
            const double fm = evaluate(fn, probe);
            probe[k].value[i] = x0;
            const double numeric = (fp - fm) / (2.0 * h);
            const double err = std::abs(analytic[i] - numeric);
            worst_abs = std::max(worst_abs, err);
            worst_rel = std::max(worst_rel, err / std::max({std::abs(analytic[i]), std::abs(numeric), floor}));
        }
        report.worst_rel.push_back(worst_rel);
        report.worst_abs.push_back(worst_abs);
    }
    report.passed = report.max_rel() < tolerance;
    return report;
}

// ---- checkpoints -----------------------------------------------------------

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t h) {
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'P', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::span<const unsigned char> as_bytes(const std::string& s) {
    return {reinterpret_cast<const unsigned char*>(s.data()), s.size()};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<const ad::Parameter<float>*>& params) {
    std::ostringstream body;
    body.write(kCheckpointMagic, 4);
    io::write_u32(body, kCheckpointVersion);
    io::write_u32(body, static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        io::write_u32(body, static_cast<std::uint32_t>(p->name.size()));
        body.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        io::write_u32(body, static_cast<std::uint32_t>(p->shape.rows));
        io::write_u32(body, static_cast<std::uint32_t>(p->shape.cols));
        for (float v : p->value) io::write_f32(body, v);
    }
    const std::string bytes = body.str();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    io::write_u64(out, fnv1a(as_bytes(bytes)));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, const std::vector<ad::Parameter<float>*>& params) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot open " + path.string());
    const std::string all((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    if (all.size() < 20) throw std::runtime_error("checkpoint truncated: " + path.string());
    const std::string bytes = all.substr(0, all.size() - 8);
    std::uint64_t stored;
    std::memcpy(&stored, all.data() + bytes.size(), 8);
    if (stored != fnv1a(as_bytes(bytes))) throw std::runtime_error("checkpoint hash mismatch: " + path.string());

    std::istringstream in(bytes);
    char magic[4];
    in.read(magic, 4);
    if (!in || !std::equal(magic, magic + 4, kCheckpointMagic)) throw std::runtime_error("checkpoint: bad magic");
    if (io::read_u32(in) != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version");
    const std::uint32_t count = io::read_u32(in);
    if (count != params.size()) {
        throw std::runtime_error("checkpoint: expected " + std::to_string(params.size()) + " parameters, found " +
                                 std::to_string(count));
    }
    for (auto* p : params) {
        std::string name(io::read_u32(in), '\0');
        in.read(name.data(), static_cast<std::streamsize>(name.size()));
        const ad::Shape shape{static_cast<int>(io::read_u32(in)), static_cast<int>(io::read_u32(in))};
        if (name != p->name || !(shape == p->shape)) {
            throw std::runtime_error("checkpoint: parameter " + name + shape.str() + " does not match " + p->name +
                                     p->shape.str());
        }
        for (float& v : p->value) v = io::read_f32(in);
    }
}

}  // namespace splatlab
