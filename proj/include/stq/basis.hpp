#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace stq {

// Compactly supported Wendland kernel, zero outside [0,1], value in [0,1].
inline double wendland(double d) {
    if (d < 0.0) throw std::domain_error("wendland: negative distance");
    if (d > 1.0) return 0.0;
    const double om = 1.0 - d;
    const double om2 = om * om;
    const double om6 = om2 * om2 * om2;
    return om6 / 3.0 * (35.0 * d * d + 18.0 * d + 3.0);
}

// Gaussian temporal kernel at scale kappa.
inline double gaussian_bump(double t, double anchor, double kappa) {
    const double u = (t - anchor) / kappa;
    return std::exp(-0.5 * u * u);
}

// Affine map of raw coordinates/times onto the unit cube; stored with the
// model so prediction queries rescale identically.
struct Rescale {
    double s1_min = 0.0, s1_max = 1.0;
    double s2_min = 0.0, s2_max = 1.0;
    double t_min = 0.0, t_max = 1.0;

    static double map1(double v, double lo, double hi) {
        return hi > lo ? (v - lo) / (hi - lo) : 0.5;
    }
    double map_s1(double v) const { return map1(v, s1_min, s1_max); }
    double map_s2(double v) const { return map1(v, s2_min, s2_max); }
    double map_t(double v) const { return map1(v, t_min, t_max); }
};

struct SpatialResolution {
    int g = 0;                                      // grid is g x g
    double theta = 0.0;                             // bandwidth, 2.5 * spacing
    std::vector<std::pair<double, double>> anchors; // row-major over the grid
};

struct TemporalResolution {
    int h = 0;
    double kappa = 0.0;          // adjacent anchor spacing
    std::vector<double> anchors; // strictly increasing, equispaced
};

struct SpatialAnchorSet {
    std::vector<SpatialResolution> resolutions;
    std::size_t total_features() const {
        std::size_t n = 0;
        for (const auto& r : resolutions) n += r.anchors.size();
        return n;
    }
};

struct TemporalAnchorSet {
    std::vector<TemporalResolution> resolutions;
    std::size_t total_features() const {
        std::size_t n = 0;
        for (const auto& r : resolutions) n += r.anchors.size();
        return n;
    }
};

// Corner-inclusive square grids on the rescaled unit domain. Each count must
// be a perfect square >= 4; theta follows the 2.5x adjacent-spacing rule.
inline SpatialAnchorSet make_spatial_anchors(const std::vector<int>& counts) {
    if (counts.empty()) throw std::invalid_argument("make_spatial_anchors: no resolutions");
    SpatialAnchorSet set;
    for (int count : counts) {
        if (count < 4) throw std::invalid_argument("spatial resolution count must be >= 4");
        const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(count))));
        if (g * g != count)
            throw std::invalid_argument("spatial resolution count " + std::to_string(count) +
                                        " is not a perfect square");
        SpatialResolution res;
        res.g = g;
        const double spacing = 1.0 / static_cast<double>(g - 1);
        res.theta = 2.5 * spacing;
        res.anchors.reserve(static_cast<std::size_t>(count));
        for (int i = 0; i < g; ++i)
            for (int j = 0; j < g; ++j)
                res.anchors.emplace_back(j * spacing, i * spacing);
        set.resolutions.push_back(std::move(res));
    }
    return set;
}

// Equispaced anchors on [0,1] per resolution; kappa is the adjacent spacing.
inline TemporalAnchorSet make_temporal_anchors(const std::vector<int>& counts) {
    if (counts.empty()) throw std::invalid_argument("make_temporal_anchors: no resolutions");
    TemporalAnchorSet set;
    for (int count : counts) {
        if (count < 2) throw std::invalid_argument("temporal resolution count must be >= 2");
        TemporalResolution res;
        res.h = count;
        res.kappa = 1.0 / static_cast<double>(count - 1);
        res.anchors.reserve(static_cast<std::size_t>(count));
        for (int j = 0; j < count; ++j) res.anchors.push_back(j * res.kappa);
        set.resolutions.push_back(std::move(res));
    }
    return set;
}

inline std::vector<double> temporal_basis(double t, const TemporalAnchorSet& temporal) {
    std::vector<double> out;
    out.reserve(temporal.total_features());
    for (const auto& res : temporal.resolutions)
        for (double v : res.anchors) out.push_back(gaussian_bump(t, v, res.kappa));
    return out;
}

struct EmbeddingConfig {
    SpatialAnchorSet spatial;
    TemporalAnchorSet temporal;
    Rescale rescale;
    std::size_t n_covariates = 0;

    std::size_t dimension() const {
        return spatial.total_features() + temporal.total_features() + n_covariates;
    }

    // Queries more than 5% of the domain range outside training bounds are
    // still evaluated but flagged.
    std::optional<std::string> extrapolation_warning(double s1, double s2, double t) const {
        const double u1 = rescale.map_s1(s1);
        const double u2 = rescale.map_s2(s2);
        const double ut = rescale.map_t(t);
        const double slack = 0.05;
        if (u1 < -slack || u1 > 1.0 + slack || u2 < -slack || u2 > 1.0 + slack ||
            ut < -slack || ut > 1.0 + slack) {
            return "query (" + std::to_string(s1) + "," + std::to_string(s2) + "," +
                   std::to_string(t) + ") lies far outside the training domain";
        }
        return std::nullopt;
    }
};

// Stacked embedding: spatial resolutions coarse-to-fine, then temporal, then
// covariates. Length Q = sum G_r + sum H_r (+ covariates).
inline std::vector<double> embed(double s1, double s2, double t, const EmbeddingConfig& cfg,
                                 const std::vector<double>& covariates = {}) {
    if (covariates.size() != cfg.n_covariates)
        throw std::invalid_argument("embed: covariate length " + std::to_string(covariates.size()) +
                                    " does not match configured " +
                                    std::to_string(cfg.n_covariates));
    const double u1 = cfg.rescale.map_s1(s1);
    const double u2 = cfg.rescale.map_s2(s2);
    const double ut = cfg.rescale.map_t(t);

    std::vector<double> out;
    out.reserve(cfg.dimension());
    for (const auto& res : cfg.spatial.resolutions) {
        for (const auto& [ax, ay] : res.anchors) {
            const double dx = u1 - ax, dy = u2 - ay;
            const double d = std::sqrt(dx * dx + dy * dy) / res.theta;
            out.push_back(d > 1.0 ? 0.0 : wendland(d));
        }
    }
    for (const auto& res : cfg.temporal.resolutions)
        for (double v : res.anchors) out.push_back(gaussian_bump(ut, v, res.kappa));
    out.insert(out.end(), covariates.begin(), covariates.end());
    return out;
}

inline nlohmann::json embedding_to_json(const EmbeddingConfig& cfg) {
    nlohmann::json j;
    j["spatial"] = nlohmann::json::array();
    for (const auto& r : cfg.spatial.resolutions)
        j["spatial"].push_back({{"g", r.g}, {"theta", r.theta}});
    j["temporal"] = nlohmann::json::array();
    for (const auto& r : cfg.temporal.resolutions)
        j["temporal"].push_back({{"h", r.h}, {"kappa", r.kappa}});
    j["rescale"] = {{"s1_min", cfg.rescale.s1_min}, {"s1_max", cfg.rescale.s1_max},
                    {"s2_min", cfg.rescale.s2_min}, {"s2_max", cfg.rescale.s2_max},
                    {"t_min", cfg.rescale.t_min},   {"t_max", cfg.rescale.t_max}};
    j["n_covariates"] = cfg.n_covariates;
    return j;
}

inline EmbeddingConfig embedding_from_json(const nlohmann::json& j) {
    EmbeddingConfig cfg;
    std::vector<int> gs, hs;
    for (const auto& r : j.at("spatial")) gs.push_back(r.at("g").get<int>() * r.at("g").get<int>());
    for (const auto& r : j.at("temporal")) hs.push_back(r.at("h").get<int>());
    cfg.spatial = make_spatial_anchors(gs);
    cfg.temporal = make_temporal_anchors(hs);
    const auto& rs = j.at("rescale");
    cfg.rescale = {rs.at("s1_min"), rs.at("s1_max"), rs.at("s2_min"),
                   rs.at("s2_max"), rs.at("t_min"),  rs.at("t_max")};
    cfg.n_covariates = j.at("n_covariates").get<std::size_t>();
    return cfg;
}

}  // namespace stq
