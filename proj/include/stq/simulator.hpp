#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "stq/dataset.hpp"

namespace stq {

// Matern correlation in the sqrt(2*nu)-scaled parameterization: closed forms
// for nu in {1/2, 3/2, 5/2}, Bessel evaluation otherwise.
inline double matern_correlation(double d, double nu) {
    if (nu <= 0.0) throw std::domain_error("matern: nu must be positive");
    if (d < 0.0) throw std::domain_error("matern: negative distance");
    if (d == 0.0) return 1.0;
    if (nu == 0.5) return std::exp(-d);
    if (nu == 1.5) {
        const double u = std::sqrt(3.0) * d;
        return (1.0 + u) * std::exp(-u);
    }
    if (nu == 2.5) {
        const double u = std::sqrt(5.0) * d;
        return (1.0 + u + u * u / 3.0) * std::exp(-u);
    }
    const double u = std::sqrt(2.0 * nu) * d;
    const double c = std::pow(2.0, 1.0 - nu) / std::tgamma(nu);
    return c * std::pow(u, nu) * std::cyl_bessel_k(nu, u);
}

struct SimulationSpec {
    double sigma2 = 1.0;
    double nu = 1.5;
    double alpha = 0.5;   // temporal smoothness, in (0,1]
    double a_s = 0.2;     // spatial range
    double a_t = 1.0;     // temporal range
    double beta = 0.5;    // space-time interaction, in (0,1]
    double nugget_var = 0.0;
    bool nonstationary_mean = false;
    int n_locations = 100;
    int n_times = 50;
    std::uint64_t seed = 0;
    std::size_t cholesky_cap = 5000;
    bool paper_time_axis = false;  // times 1..n_times instead of equispaced in [0,1]

    void validate() const {
        if (sigma2 <= 0.0) throw std::invalid_argument("sigma2 must be positive");
        if (nu <= 0.0) throw std::invalid_argument("nu must be positive");
        if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must be in (0,1]");
        if (a_s <= 0.0 || a_t <= 0.0) throw std::invalid_argument("range parameters must be positive");
        if (!(beta > 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must be in (0,1]");
        if (nugget_var < 0.0) throw std::invalid_argument("nugget variance must be nonnegative");
        if (n_locations < 1 || n_times < 1) throw std::invalid_argument("need >= 1 location and time");
        const std::size_t nk = static_cast<std::size_t>(n_locations) *
                               static_cast<std::size_t>(n_times);
        if (nk > cholesky_cap)
            throw std::invalid_argument("NK=" + std::to_string(nk) +
                                        " exceeds exact-Cholesky cap of " +
                                        std::to_string(cholesky_cap));
    }
};

// Nonseparable space-time covariance: temporal decay scales both the
// variance and the effective spatial distance.
inline double st_covariance(double h, double v, const SimulationSpec& spec) {
    const double decay = spec.a_t * std::pow(std::abs(v), 2.0 * spec.alpha) + 1.0;
    const double d = (h / spec.a_s) / std::pow(decay, spec.beta / 2.0);
    return spec.sigma2 / decay * matern_correlation(d, spec.nu);
}

inline double nonstationary_mean(double t) {
    const double u = t / 1000.0 - 0.9;
    return 2.0 * std::sin(15.0 * u) * std::cos(-37.0 * u * u * u * u) + u / 2.0;
}

struct SimPoint {
    double s1, s2, t;
};

namespace detail {

inline Eigen::MatrixXd build_covariance(const std::vector<SimPoint>& pts,
                                        const SimulationSpec& spec) {
    const auto n = static_cast<Eigen::Index>(pts.size());
    Eigen::MatrixXd C(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i; j < n; ++j) {
            const double dx = pts[i].s1 - pts[j].s1;
            const double dy = pts[i].s2 - pts[j].s2;
            const double h = std::sqrt(dx * dx + dy * dy);
            const double v = pts[i].t - pts[j].t;
            C(i, j) = C(j, i) = st_covariance(h, v, spec);
        }
    }
    return C;
}

// Jitter schedule: start 1e-10*sigma2, escalate x10 up to 1e-6*sigma2.
inline Eigen::MatrixXd cholesky_with_jitter(Eigen::MatrixXd C, double sigma2) {
    double jitter = 1e-10 * sigma2;
    const double cap = 1e-6 * sigma2;
    Eigen::LLT<Eigen::MatrixXd> llt(C);
    while (llt.info() != Eigen::Success) {
        if (jitter > cap)
            throw std::runtime_error(
                "covariance matrix not positive definite after jitter escalation to " +
                std::to_string(jitter));
        C.diagonal().array() += jitter;
        llt.compute(C);
        jitter *= 10.0;
    }
    return llt.matrixL();
}

}  // namespace detail

// Sample a Gaussian field at the given space-time points, with optional
// nonstationary mean and nugget noise. Deterministic per seed.
inline SpaceTimeDataset simulate_at(const SimulationSpec& spec, const std::vector<SimPoint>& pts) {
    spec.validate();
    if (pts.size() > spec.cholesky_cap)
        throw std::invalid_argument("point count exceeds exact-Cholesky cap");

    const Eigen::MatrixXd L =
        detail::cholesky_with_jitter(detail::build_covariance(pts, spec), spec.sigma2);

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> standard(0.0, 1.0);
    Eigen::VectorXd white(static_cast<Eigen::Index>(pts.size()));
    for (Eigen::Index i = 0; i < white.size(); ++i) white[i] = standard(rng);
    Eigen::VectorXd field = L * white;

    std::vector<Observation> rows;
    rows.reserve(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        Observation o;
        o.s1 = pts[i].s1;
        o.s2 = pts[i].s2;
        o.t = pts[i].t;
        o.z = field[static_cast<Eigen::Index>(i)];
        if (spec.nonstationary_mean) o.z += nonstationary_mean(o.t);
        if (spec.nugget_var > 0.0) o.z += std::sqrt(spec.nugget_var) * standard(rng);
        rows.push_back(o);
    }
    return SpaceTimeDataset(std::move(rows));
}

// Default layout: uniform-random stations in [0,1]^2, times equispaced in
// [0,1] (or 1..n_times in paper_time_axis mode).
inline SpaceTimeDataset simulate(const SimulationSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed ^ 0xa5a5a5a5a5a5a5a5ULL);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<std::pair<double, double>> stations;
    stations.reserve(static_cast<std::size_t>(spec.n_locations));
    for (int i = 0; i < spec.n_locations; ++i) stations.emplace_back(unif(rng), unif(rng));

    std::vector<SimPoint> pts;
    pts.reserve(static_cast<std::size_t>(spec.n_locations) * static_cast<std::size_t>(spec.n_times));
    for (int k = 0; k < spec.n_times; ++k) {
        double t;
        if (spec.paper_time_axis)
            t = static_cast<double>(k + 1);
        else
            t = spec.n_times > 1 ? static_cast<double>(k) / static_cast<double>(spec.n_times - 1)
                                 : 0.0;
        for (const auto& [x, y] : stations) pts.push_back({x, y, t});
    }
    return simulate_at(spec, pts);
}

// Competition-style missing-data scenarios:
//   1 - whole stations held out, 2 - random cells held out,
//   3 - the final 10 time slices held out.
inline std::pair<SpaceTimeDataset, SpaceTimeDataset> make_scenario(const SpaceTimeDataset& ds,
                                                                   int scenario,
                                                                   double holdout_fraction,
                                                                   std::uint64_t seed) {
    if (ds.empty()) throw std::domain_error("make_scenario: empty dataset");
    std::vector<Observation> train, test;
    std::mt19937_64 rng(seed);

    if (scenario == 1) {
        if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
            throw std::domain_error("holdout fraction must be in (0,1)");
        auto stations = ds.stations();
        std::vector<std::size_t> order(stations.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        const auto n_out = static_cast<std::size_t>(
            std::lround(holdout_fraction * static_cast<double>(stations.size())));
        std::unordered_set<std::string> held;
        for (std::size_t i = 0; i < n_out; ++i) {
            const auto& [x, y] = stations[order[i]];
            held.insert(SpaceTimeDataset::station_key(x, y));
        }
        for (const auto& r : ds.rows())
            (held.count(SpaceTimeDataset::station_key(r.s1, r.s2)) ? test : train).push_back(r);
    } else if (scenario == 2) {
        if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
            throw std::domain_error("holdout fraction must be in (0,1)");
        std::vector<std::size_t> order(ds.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        const auto n_out = static_cast<std::size_t>(
            std::lround(holdout_fraction * static_cast<double>(ds.size())));
        std::vector<bool> held(ds.size(), false);
        for (std::size_t i = 0; i < n_out; ++i) held[order[i]] = true;
        for (std::size_t i = 0; i < ds.size(); ++i)
            (held[i] ? test : train).push_back(ds.rows()[i]);
    } else if (scenario == 3) {
        auto times = ds.distinct_times();
        const std::size_t n_hold = std::min<std::size_t>(10, times.size() - 1);
        std::unordered_set<double> held(times.end() - static_cast<std::ptrdiff_t>(n_hold),
                                        times.end());
        for (const auto& r : ds.rows()) (held.count(r.t) ? test : train).push_back(r);
    } else {
        throw std::invalid_argument("scenario must be 1, 2 or 3");
    }

    if (train.empty()) throw std::domain_error("holdout leaves an empty training set");
    return {SpaceTimeDataset(std::move(train)), SpaceTimeDataset(std::move(test))};
}

inline nlohmann::json spec_to_json(const SimulationSpec& s) {
    return {{"sigma2", s.sigma2},
            {"nu", s.nu},
            {"alpha", s.alpha},
            {"a_s", s.a_s},
            {"a_t", s.a_t},
            {"beta", s.beta},
            {"nugget_var", s.nugget_var},
            {"nonstationary_mean", s.nonstationary_mean},
            {"n_locations", s.n_locations},
            {"n_times", s.n_times},
            {"seed", s.seed},
            {"cholesky_cap", s.cholesky_cap},
            {"paper_time_axis", s.paper_time_axis}};
}

inline SimulationSpec spec_from_json(const nlohmann::json& j) {
    SimulationSpec s;
    s.sigma2 = j.value("sigma2", s.sigma2);
    s.nu = j.value("nu", s.nu);
    s.alpha = j.value("alpha", s.alpha);
    s.a_s = j.value("a_s", s.a_s);
    s.a_t = j.value("a_t", s.a_t);
    s.beta = j.value("beta", s.beta);
    s.nugget_var = j.value("nugget_var", s.nugget_var);
    s.nonstationary_mean = j.value("nonstationary_mean", s.nonstationary_mean);
    s.n_locations = j.value("n_locations", s.n_locations);
    s.n_times = j.value("n_times", s.n_times);
    s.seed = j.value("seed", s.seed);
    s.cholesky_cap = j.value("cholesky_cap", s.cholesky_cap);
    s.paper_time_axis = j.value("paper_time_axis", s.paper_time_axis);
    return s;
}

}  // namespace stq
