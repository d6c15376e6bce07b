#include "splatlab/eval.hpp"

#include "splatlab/metrics.hpp"
#include "splatlab/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace splatlab {

namespace fs = std::filesystem;

std::vector<MetricRow> evaluate_cloud(const ScenePair& pair, const std::string& method, const SplatCloud& cloud,
                                      const Vec3& background) {
    std::vector<MetricRow> rows;
    for (std::size_t i = 0; i < pair.views.size(); ++i) {
        const SceneView& v = pair.views[i];
        const ImageBuffer img = render_tiled(v.camera, cloud, background);
        rows.push_back({pair.id, method, v.tag, static_cast<int>(i), psnr(img, v.image), ssim(img, v.image)});
    }
    return rows;
}

namespace {

std::string num(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fixed(const std::optional<double>& v, int digits) {
    if (!v) return "n/a";
    if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*f", digits, *v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

void write_file(const fs::path& path, const std::string& text, bool append = false) {
    std::ofstream out(path, append ? std::ios::binary | std::ios::app : std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

}  // namespace

void save_metric_rows(const fs::path& path, const std::vector<MetricRow>& rows) {
    std::string text = "scene,method,tag,view,psnr,ssim\n";
    for (const auto& r : rows) {
        text += r.scene + "," + r.method + "," + to_string(r.tag) + "," + std::to_string(r.view) + "," + num(r.psnr) + "," +
                num(r.ssim) + "\n";
    }
    write_file(path, text);
}

std::vector<MetricRow> load_metric_rows(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "scene,method,tag,view,psnr,ssim") throw std::runtime_error(path.string() + ": not a metrics file");
    std::vector<MetricRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto c = split_csv(line);
        if (c.size() != 6) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
        rows.push_back({c[0], c[1], view_tag_from_string(c[2]), std::stoi(c[3]), std::strtod(c[4].c_str(), nullptr),
                        std::strtod(c[5].c_str(), nullptr)});
    }
    return rows;
}

std::vector<Camera> sweep_cameras(double elevation_deg, int azimuths, const TrajectoryConfig& traj) {
    std::vector<Camera> cams;
    for (int j = 0; j < azimuths; ++j) {
        const double az = traj.ood_azimuth_offset + 360.0 * j / azimuths;
        cams.push_back(orbit_camera(elevation_deg, az, traj.radius, traj.intrinsics));
    }
    return cams;
}

std::vector<SweepPoint> elevation_sweep(const SplatCloud& gt, const SplatCloud& fitted, const SplatFormer<float>* net,
                                        const std::vector<double>& elevations, const TrajectoryConfig& traj, int azimuths,
                                        const Vec3& background) {
    std::optional<SplatCloud> refined;
    if (net) refined = refine(fitted, *net);
    std::vector<SweepPoint> curve;
    for (double el : elevations) {
        SweepPoint p;
        p.elevation = el;
        double a = 0.0, b = 0.0;
        const auto cams = sweep_cameras(el, azimuths, traj);
        for (const Camera& c : cams) {
            const ImageBuffer target = render_tiled(c, gt, background);
            a += psnr(render_tiled(c, fitted, background), target);
            if (refined) b += psnr(render_tiled(c, *refined, background), target);
        }
        p.psnr_3dgs = a / cams.size();
        if (refined) p.psnr_refined = b / cams.size();
        curve.push_back(p);
    }
    return curve;
}

bool non_increasing_beyond(const std::vector<SweepPoint>& curve, double from_deg) {
    const SweepPoint* prev = nullptr;
    for (const auto& p : curve) {
        if (p.elevation < from_deg) continue;
        if (prev && p.psnr_3dgs > prev->psnr_3dgs) return false;
        prev = &p;
    }
    return true;
}

void save_sweep(const fs::path& path, const std::string& scene, const std::vector<SweepPoint>& curve, bool append) {
    std::string text;
    if (!append || !fs::exists(path)) text = "scene,elevation,psnr_3dgs,psnr_refined\n";
    for (const auto& p : curve) {
        text += scene + "," + num(p.elevation) + "," + num(p.psnr_3dgs) + "," + (p.psnr_refined ? num(*p.psnr_refined) : "n/a") + "\n";
    }
    write_file(path, text, append);
}

std::vector<ReportLine> summarize(const std::vector<MetricRow>& rows) {
    struct Acc {
        double psnr = 0.0, ssim = 0.0;
        int n = 0;
    };
    std::map<std::string, std::map<ViewTag, Acc>> acc;
    std::map<std::string, std::set<std::string>> scenes;
    for (const auto& r : rows) {
        Acc& a = acc[r.method][r.tag];
        a.psnr += r.psnr;
        a.ssim += r.ssim;
        ++a.n;
        scenes[r.method].insert(r.scene);
    }
    std::vector<ReportLine> lines;
    for (const auto& [method, by_tag] : acc) {
        ReportLine l;
        l.method = method;
        l.scenes = static_cast<int>(scenes[method].size());
        auto mean = [&](ViewTag t, std::optional<double>& psnr_out, std::optional<double>& ssim_out) {
            auto it = by_tag.find(t);
            if (it == by_tag.end()) return;
            psnr_out = it->second.psnr / it->second.n;
            ssim_out = it->second.ssim / it->second.n;
        };
        mean(ViewTag::ood, l.ood_psnr, l.ood_ssim);
        mean(ViewTag::input, l.input_psnr, l.input_ssim);
        mean(ViewTag::heldout, l.heldout_psnr, l.heldout_ssim);
        lines.push_back(l);
    }
    return lines;
}

namespace {

const std::vector<std::string> kColumns{"method",      "ood_psnr",     "ood_ssim",     "input_psnr", "input_ssim",
                                        "heldout_psnr", "heldout_ssim", "lpips",        "scenes"};

std::vector<std::string> cells(const ReportLine& l, int digits) {
    return {l.method,
            fixed(l.ood_psnr, digits),
            fixed(l.ood_ssim, digits),
            fixed(l.input_psnr, digits),
            fixed(l.input_ssim, digits),
            fixed(l.heldout_psnr, digits),
            fixed(l.heldout_ssim, digits),
            "n/a",
            std::to_string(l.scenes)};
}

}  // namespace

std::string report_csv(const std::vector<ReportLine>& lines) {
    std::string out;
    for (std::size_t i = 0; i < kColumns.size(); ++i) out += (i ? "," : "") + kColumns[i];
    out += "\n";
    for (const auto& l : lines) {
        const auto c = cells(l, 6);
        for (std::size_t i = 0; i < c.size(); ++i) out += (i ? "," : "") + c[i];
        out += "\n";
    }
    return out;
}

std::string report_text(const std::vector<ReportLine>& lines) {
    std::vector<std::vector<std::string>> table{kColumns};
    for (const auto& l : lines) table.push_back(cells(l, 4));
    std::vector<std::size_t> width(kColumns.size(), 0);
    for (const auto& row : table) {
        for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    }
    std::string out;
    for (const auto& row : table) {
        std::string line;
        for (std::size_t i = 0; i < row.size(); ++i) {
            const std::string pad(width[i] - row[i].size(), ' ');
            if (i) line += "  ";
            line += i == 0 ? row[i] + pad : pad + row[i];  // numbers right-aligned
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + "\n";
    }
    return out;
}

void write_report(const fs::path& dir, const std::vector<MetricRow>& rows) {
    fs::create_directories(dir);
    const auto lines = summarize(rows);
    write_file(dir / "report.csv", report_csv(lines));
    write_file(dir / "report.txt", report_text(lines));
}

}  // namespace splatlab
