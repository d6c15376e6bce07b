#include "splatlab/config.hpp"

#include <toml.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace splatlab {

using nlohmann::json;

namespace {

// Every config is described once by a visitor over (key, field) pairs; the
// JSON encoder and the decoder share it.

template <class V>
void fields(Intrinsics& c, V&& v) {
    v("width", c.width);
    v("height", c.height);
    v("focal", c.focal);
}

template <class V>
void fields(Box& c, V&& v) {
    v("lo", c.lo);
    v("hi", c.hi);
}

template <class V>
void fields(TrajectoryConfig& c, V&& v) {
    v("n_in", c.n_in);
    v("phi_max", c.phi_max);
    v("phi_min", c.phi_min);
    v("freq", c.freq);
    v("radius", c.radius);
    v("ood_elevations", c.ood_elevations);
    v("ood_azimuths_per_elevation", c.ood_azimuths_per_elevation);
    v("ood_azimuth_offset", c.ood_azimuth_offset);
    v("n_heldout", c.n_heldout);
    v("intrinsics", c.intrinsics);
}

template <class V>
void fields(FitConfig& c, V&& v) {
    v("iterations", c.iterations);
    v("lambda_dssim", c.lambda_dssim);
    v("lr_position_init", c.lr_position_init);
    v("lr_position_final", c.lr_position_final);
    v("lr_scale", c.lr_scale);
    v("lr_rotation", c.lr_rotation);
    v("lr_opacity", c.lr_opacity);
    v("lr_sh_dc", c.lr_sh_dc);
    v("lr_sh_rest", c.lr_sh_rest);
    v("spatial_lr_scale", c.spatial_lr_scale);
    v("warmup_steps", c.warmup_steps);
    v("densify_interval", c.densify_interval);
    v("densify_stop_step", c.densify_stop_step);
    v("grad_threshold", c.grad_threshold);
    v("scale_split_threshold", c.scale_split_threshold);
    v("opacity_prune_threshold", c.opacity_prune_threshold);
    v("max_splats", c.max_splats);
    v("random_background", c.random_background);
    v("background", c.background);
    v("init_count", c.init_count);
    v("init_box", c.init_box);
    v("sh_degree", c.sh_degree);
    v("report_interval", c.report_interval);
    v("seed", c.seed);
}

template <class V>
void fields(NetConfig& c, V&& v) {
    v("depths_down", c.depths_down);
    v("dims_down", c.dims_down);
    v("depths_up", c.depths_up);
    v("dims_up", c.dims_up);
    v("pool_strides", c.pool_strides);
    v("feature_dim", c.feature_dim);
    v("grid_resolution", c.grid_resolution);
    v("window", c.window);
    v("num_heads", c.num_heads);
    v("head_hidden", c.head_hidden);
    v("head_layers", c.head_layers);
    v("mlp_ratio", c.mlp_ratio);
    v("position_scale", c.position_scale);
    v("position_unit_range", c.position_unit_range);
    v("residual", c.residual);
    v("seed", c.seed);
}

template <class V>
void fields(TrainConfig& c, V&& v) {
    v("steps", c.steps);
    v("views_per_step", c.views_per_step);
    v("ood_fraction", c.ood_fraction);
    v("lr", c.lr);
    v("grad_accumulation", c.grad_accumulation);
    v("splat_cap", c.splat_cap);
    v("perceptual_weight", c.perceptual_weight);
    v("checkpoint_interval", c.checkpoint_interval);
    v("log_interval", c.log_interval);
    v("snapshot_interval", c.snapshot_interval);
    v("background", c.background);
    v("seed", c.seed);
}

template <class V>
void fields(ScenesConfig& c, V&& v) {
    v("train_count", c.train_count);
    v("eval_count", c.eval_count);
    v("splat_budget", c.splat_budget);
    v("sh_degree", c.sh_degree);
    v("max_radius", c.max_radius);
}

template <class V>
void fields(SweepConfig& c, V&& v) {
    v("elevations", c.elevations);
    v("azimuths", c.azimuths);
}

template <class V>
void fields(RunConfig& c, V&& v) {
    v("seed", c.seed);
    v("deterministic", c.deterministic);
    v("jobs", c.jobs);
    v("out", c.out);
    v("scenes", c.scenes);
    v("trajectory", c.trajectory);
    v("fit", c.fit);
    v("net", c.net);
    v("train", c.train);
    v("sweep", c.sweep);
}

template <class T>
concept Described = requires(T& t) { fields(t, [](const char*, auto&) {}); };

template <class T>
json encode(const T& value);

struct Encoder {
    json& out;
    template <class T>
    void operator()(const char* key, T& value) const {
        out[key] = encode(value);
    }
};

template <class T>
json encode(const T& value) {
    if constexpr (Described<T>) {
        json j = json::object();
        fields(const_cast<T&>(value), Encoder{j});
        return j;
    } else if constexpr (std::is_same_v<T, Vec3>) {
        return json::array({value.x(), value.y(), value.z()});
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
        return value.string();
    } else {
        return value;
    }
}

template <class T>
void decode(const json& j, T& value, const std::string& where);

struct Decoder {
    const json& in;
    const std::string& where;
    std::set<std::string>& seen;
    template <class T>
    void operator()(const char* key, T& value) const {
        auto it = in.find(key);
        if (it == in.end()) return;
        seen.insert(key);
        decode(*it, value, where.empty() ? std::string(key) : where + "." + key);
    }
};

template <class T>
void decode(const json& j, T& value, const std::string& where) {
    auto fail = [&](const std::string& what) { throw ConfigError("config key '" + where + "': " + what); };
    if constexpr (Described<T>) {
        if (!j.is_object()) fail("expected a table");
        std::set<std::string> seen;
        fields(value, Decoder{j, where, seen});
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!seen.count(it.key())) {
                throw ConfigError("unknown config key '" + (where.empty() ? it.key() : where + "." + it.key()) + "'");
            }
        }
    } else if constexpr (std::is_same_v<T, Vec3>) {
        if (!j.is_array() || j.size() != 3) fail("expected an array of 3 numbers");
        for (int i = 0; i < 3; ++i) {
            if (!j[i].is_number()) fail("expected numbers");
            value[i] = j[i].get<double>();
        }
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
        if (!j.is_string()) fail("expected a string");
        value = j.get<std::string>();
    } else if constexpr (std::is_same_v<T, bool>) {
        if (!j.is_boolean()) fail("expected a boolean");
        value = j.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
        if (!j.is_number_integer()) fail("expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
            if (j.is_number_unsigned() || j.get<std::int64_t>() >= 0) {
                value = j.get<T>();
            } else {
                fail("expected a non-negative integer");
            }
        } else {
            value = j.get<T>();
        }
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!j.is_number()) fail("expected a number");
        value = j.get<T>();
    } else {
        // std::vector<int> / std::vector<double>
        if (!j.is_array()) fail("expected an array");
        T out;
        for (std::size_t i = 0; i < j.size(); ++i) {
            typename T::value_type x{};
            decode(j[i], x, where + "[" + std::to_string(i) + "]");
            out.push_back(x);
        }
        value = std::move(out);
    }
}

json toml_to_json(const toml::node& node) {
    if (const auto* t = node.as_table()) {
        json j = json::object();
        for (const auto& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
        return j;
    }
    if (const auto* a = node.as_array()) {
        json j = json::array();
        for (const auto& v : *a) j.push_back(toml_to_json(v));
        return j;
    }
    if (const auto* v = node.as_integer()) return v->get();
    if (const auto* v = node.as_floating_point()) return v->get();
    if (const auto* v = node.as_boolean()) return v->get();
    if (const auto* v = node.as_string()) return v->get();
    throw ConfigError("unsupported TOML value (dates and times are not config values)");
}

}  // namespace

json to_json(const TrajectoryConfig& c) { return encode(c); }
json to_json(const FitConfig& c) { return encode(c); }
json to_json(const NetConfig& c) { return encode(c); }
json to_json(const TrainConfig& c) { return encode(c); }

json to_json(const RunConfig& c) {
    json j = encode(c);
    j["preset"] = c.preset;
    return j;
}

void apply_json(TrajectoryConfig& c, const json& j) { decode(j, c, "trajectory"); }
void apply_json(FitConfig& c, const json& j) { decode(j, c, "fit"); }
void apply_json(NetConfig& c, const json& j) { decode(j, c, "net"); }
void apply_json(TrainConfig& c, const json& j) { decode(j, c, "train"); }

void apply_json(RunConfig& c, const json& j) {
    json body = j;
    if (body.is_object()) body.erase("preset");
    decode(body, c, "");
}

void RunConfig::set_seed(std::uint64_t s) {
    seed = s;
    fit.seed = s;
    net.seed = s;
    train.seed = s;
}

void RunConfig::validate() const {
    if (preset != "desk" && preset != "paper") throw ConfigError("preset must be desk or paper");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    if (scenes.train_count < 0 || scenes.eval_count < 0 || scenes.splat_budget < 1) {
        throw ConfigError("scenes: counts must be non-negative and the budget positive");
    }
    if (sweep.elevations.empty() || sweep.azimuths < 1) throw ConfigError("sweep: needs elevations and azimuths >= 1");
    try {
        trajectory.validate();
        fit.validate();
        net.validate();
        train.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

RunConfig RunConfig::desk() {
    RunConfig c;
    c.preset = "desk";
    c.fit = FitConfig::desk();
    c.net = NetConfig::desk();
    c.train = TrainConfig::desk();
    return c;
}

RunConfig RunConfig::paper() {
    RunConfig c;
    c.preset = "paper";
    c.scenes.train_count = 33000;
    c.scenes.eval_count = 20;
    c.scenes.splat_budget = 100000;
    c.trajectory.intrinsics = Intrinsics{256, 256, 256.0};
    c.fit = FitConfig::paper();
    // Curation and test scenes stop fitting early at 10k steps.
    c.fit.iterations = 10000;
    c.net = NetConfig::paper();
    c.train = TrainConfig::paper();
    return c;
}

RunConfig RunConfig::preset_named(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

CurateConfig RunConfig::curate_config() const {
    CurateConfig c;
    c.trajectory = trajectory;
    c.fit = fit;
    c.background = fit.background;
    c.jobs = deterministic ? 1 : jobs;
    return c;
}

RunConfig parse_run_config(const std::string& toml_text, const std::string& preset) {
    RunConfig cfg = RunConfig::preset_named(preset);
    toml::table root;
    try {
        root = toml::parse(toml_text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "TOML parse error: " << e.description() << " at line " << e.source().begin.line;
        throw ConfigError(msg.str());
    }
    const json j = toml_to_json(root);
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() != "paper" && it.key() != "desk") {
            throw ConfigError("unknown top-level config key '" + it.key() + "' (expected paper.* or desk.*)");
        }
    }
    if (j.contains("paper")) apply_json(cfg, j["paper"]);
    if (preset == "desk" && j.contains("desk")) apply_json(cfg, j["desk"]);
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::string& preset) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_run_config(text.str(), preset);
}

}  // namespace splatlab
