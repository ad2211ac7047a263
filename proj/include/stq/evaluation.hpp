#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "stq/dataset.hpp"

namespace stq {

struct FoldReport {
    double mspe = 0.0;
    double mpiw = 0.0;
    double coverage = 0.0;
    std::size_t n_test = 0;
};

struct EvalReport {
    double mspe = 0.0;
    double mspe_se = 0.0;   // per-point SE of squared errors
    double mpiw = 0.0;
    double mpiw_se = 0.0;
    double coverage = 0.0;  // in [0,1]
    std::size_t n_test = 0;
    std::vector<FoldReport> folds;
};

// Mean squared prediction error with the standard error of the per-point
// squared errors.
inline std::pair<double, double> mspe(const std::vector<double>& pred,
                                      const std::vector<double>& truth) {
    if (pred.empty() || pred.size() != truth.size())
        throw std::domain_error("mspe: inputs must be nonempty and equal length");
    const auto n = static_cast<double>(pred.size());
    std::vector<double> sq(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - truth[i];
        sq[i] = e * e;
    }
    const double mean = std::accumulate(sq.begin(), sq.end(), 0.0) / n;
    if (pred.size() == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double v : sq) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    return {mean, sd / std::sqrt(n)};
}

// Mean interval width and empirical coverage of a (lo, hi) band.
inline std::pair<double, double> mpiw_cov(const std::vector<double>& lo,
                                          const std::vector<double>& hi,
                                          const std::vector<double>& truth) {
    if (lo.empty() || lo.size() != hi.size() || lo.size() != truth.size())
        throw std::domain_error("mpiw_cov: inputs must be nonempty and equal length");
    double width = 0.0;
    std::size_t covered = 0;
    for (std::size_t i = 0; i < lo.size(); ++i) {
        if (lo[i] > hi[i])
            throw std::logic_error("crossing interval at index " + std::to_string(i));
        width += hi[i] - lo[i];
        if (lo[i] <= truth[i] && truth[i] <= hi[i]) ++covered;
    }
    const auto n = static_cast<double>(lo.size());
    return {width / n, static_cast<double>(covered) / n};
}

// Disjoint folds covering the dataset, deterministic per seed.
inline std::vector<std::pair<SpaceTimeDataset, SpaceTimeDataset>> kfold(
    const SpaceTimeDataset& ds, int k, std::uint64_t seed) {
    if (k < 2) throw std::domain_error("kfold: k must be >= 2");
    if (static_cast<std::size_t>(k) > ds.size())
        throw std::domain_error("kfold: k exceeds dataset size");
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<int> fold_of(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        fold_of[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));

    std::vector<std::pair<SpaceTimeDataset, SpaceTimeDataset>> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) {
        std::vector<Observation> train, test;
        for (std::size_t i = 0; i < ds.size(); ++i)
            (fold_of[i] == f ? test : train).push_back(ds.rows()[i]);
        out.emplace_back(SpaceTimeDataset(std::move(train)), SpaceTimeDataset(std::move(test)));
    }
    return out;
}

// Inverse-distance-weighted mean over the k nearest space-time neighbors.
// Time enters the distance scaled by time_scale; an exact match wins.
inline double idw_predict(const SpaceTimeDataset& train, double s1, double s2, double t,
                          double power = 2.0, int k_neighbors = 10, double time_scale = 1.0) {
    if (train.empty()) throw std::domain_error("idw_predict: empty training set");
    struct Cand {
        double d2;
        double z;
    };
    std::vector<Cand> cands;
    cands.reserve(train.size());
    for (const auto& r : train.rows()) {
        const double dx = r.s1 - s1, dy = r.s2 - s2, dt = (r.t - t) * time_scale;
        const double d2 = dx * dx + dy * dy + dt * dt;
        if (d2 == 0.0) return r.z;
        cands.push_back({d2, r.z});
    }
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(k_neighbors),
                                                cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k), cands.end(),
                      [](const Cand& a, const Cand& b) { return a.d2 < b.d2; });
    double wsum = 0.0, zsum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double w = std::pow(cands[i].d2, -power / 2.0);
        wsum += w;
        zsum += w * cands[i].z;
    }
    return zsum / wsum;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json j{{"mspe", r.mspe},     {"mspe_se", r.mspe_se}, {"mpiw", r.mpiw},
                     {"mpiw_se", r.mpiw_se}, {"coverage", r.coverage}, {"n_test", r.n_test}};
    j["folds"] = nlohmann::json::array();
    for (const auto& f : r.folds)
        j["folds"].push_back({{"mspe", f.mspe},
                              {"mpiw", f.mpiw},
                              {"coverage", f.coverage},
                              {"n_test", f.n_test}});
    return j;
}

// One-row CSV for table aggregation.
inline void report_to_csv(const EvalReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report CSV: " + path);
    out.precision(17);
    out << "mspe,mspe_se,mpiw,mpiw_se,coverage,n_test\n";
    out << r.mspe << ',' << r.mspe_se << ',' << r.mpiw << ',' << r.mpiw_se << ',' << r.coverage
        << ',' << r.n_test << '\n';
}

}  // namespace stq
