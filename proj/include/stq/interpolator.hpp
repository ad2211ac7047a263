#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "stq/basis.hpp"
#include "stq/dataset.hpp"
#include "stq/errors.hpp"
#include "stq/nn.hpp"
#include "stq/quantile.hpp"

namespace stq {

struct InterpolatorConfig {
    std::vector<int> spatial_counts{25, 81, 144};
    std::vector<int> temporal_counts{10, 15, 45};
    std::vector<int> layer_sizes{100, 100, 100, 100, 100, 100, 100, 100, 50, 50, 50, 50, 1};
    std::vector<double> taus{0.05, 0.5, 0.95};
    TrainConfig train;
    double lambda_override = 0.0;  // 0 means use sigma_range/2
    bool mse_point_head = false;   // squared loss for the point head instead of tau=0.5
};

struct InterpolatorModel {
    EmbeddingConfig embedding;
    DenseNet median_net;
    std::map<double, DenseNet> quantile_nets;  // tau != 0.5
    double lambda = 0.0;
    double sigma_range = 0.0;
    double z_mean = 0.0;
    double z_std = 1.0;
    std::uint64_t seed = 0;
    std::map<double, double> final_risk;  // tau -> training check-loss risk
    std::vector<std::string> warnings;
};

namespace detail {

inline Eigen::MatrixXd embed_all(const SpaceTimeDataset& ds, const EmbeddingConfig& cfg) {
    const auto n = static_cast<Eigen::Index>(ds.size());
    Eigen::MatrixXd X(static_cast<Eigen::Index>(cfg.dimension()), n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = ds.rows()[static_cast<std::size_t>(i)];
        auto phi = embed(r.s1, r.s2, r.t, cfg, r.covariates);
        X.col(i) = Eigen::Map<const Eigen::VectorXd>(phi.data(),
                                                     static_cast<Eigen::Index>(phi.size()));
    }
    return X;
}

enum class LossKind { Median, Quantile, Squared };

// Minibatch SGD with early stopping on a validation split. `f_const` is the
// per-point median prediction (original scale) used by the psi transform for
// non-median heads; `targets` are in the scale the loss expects.
inline double train_net(DenseNet& net, const Eigen::MatrixXd& X, const Eigen::VectorXd& targets,
                        const Eigen::VectorXd& f_const, double tau, double lambda, LossKind kind,
                        const TrainConfig& cfg) {
    cfg.validate();
    const Eigen::Index n = X.cols();

    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    const Eigen::Index n_val =
        std::min<Eigen::Index>(n - 1, static_cast<Eigen::Index>(cfg.validation_fraction *
                                                                static_cast<double>(n)));
    const Eigen::Index n_train = n - n_val;
    std::vector<Eigen::Index> train_idx(order.begin(), order.begin() + n_train);
    std::vector<Eigen::Index> val_idx(order.begin() + n_train, order.end());

    auto batch_loss_and_grad = [&](const std::vector<Eigen::Index>& idx, bool want_grad,
                                   Gradients* out_grad) {
        Eigen::MatrixXd xb(X.rows(), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t c = 0; c < idx.size(); ++c) xb.col(static_cast<Eigen::Index>(c)) = X.col(idx[c]);
        ForwardCache cache = forward(net, xb);
        const double inv_b = 1.0 / static_cast<double>(idx.size());
        Eigen::MatrixXd grad(1, static_cast<Eigen::Index>(idx.size()));
        double loss = 0.0;
        for (std::size_t c = 0; c < idx.size(); ++c) {
            const auto ci = static_cast<Eigen::Index>(c);
            const double raw = cache.output(0, ci);
            double v, dv;  // residual and d loss / d raw output
            if (kind == LossKind::Squared) {
                v = raw - targets[idx[c]];
                loss += v * v;
                dv = 2.0 * v;
            } else if (kind == LossKind::Median) {
                v = targets[idx[c]] - raw;
                loss += check_loss(v, tau);
                dv = -check_loss_grad(v, tau);
            } else {
                const double pred = psi(tau, raw, f_const[idx[c]], lambda);
                v = targets[idx[c]] - pred;
                loss += check_loss(v, tau);
                dv = -check_loss_grad(v, tau) * psi_grad(tau, raw, lambda);
            }
            grad(0, ci) = dv * inv_b;
        }
        if (want_grad) *out_grad = backward(net, cache, grad);
        return loss * inv_b;
    };

    DenseNet best = net;
    double best_val = std::numeric_limits<double>::infinity();
    int stale = 0;
    double last_train_loss = 0.0;

    Gradients velocity;
    const bool use_momentum = cfg.momentum > 0.0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        double epoch_loss = 0.0;
        int batches = 0;
        for (Eigen::Index start = 0; start < n_train; start += cfg.batch_size) {
            const Eigen::Index stop = std::min<Eigen::Index>(start + cfg.batch_size, n_train);
            std::vector<Eigen::Index> batch(train_idx.begin() + start, train_idx.begin() + stop);
            Gradients g;
            const double loss = batch_loss_and_grad(batch, true, &g);
            if (!std::isfinite(loss)) throw TrainingDiverged(epoch, tau);
            if (use_momentum) {
                if (velocity.dW.empty()) {
                    velocity = g;
                } else {
                    for (std::size_t l = 0; l < g.dW.size(); ++l) {
                        velocity.dW[l] = cfg.momentum * velocity.dW[l] + g.dW[l];
                        velocity.db[l] = cfg.momentum * velocity.db[l] + g.db[l];
                    }
                }
                g = velocity;
            }
            sgd_step(net, g, cfg);
            epoch_loss += loss;
            ++batches;
        }
        last_train_loss = epoch_loss / std::max(1, batches);

        if (n_val > 0) {
            const double val_loss = batch_loss_and_grad(val_idx, false, nullptr);
            if (!std::isfinite(val_loss)) throw TrainingDiverged(epoch, tau);
            if (val_loss < best_val - 1e-12) {
                best_val = val_loss;
                best = net;
                stale = 0;
            } else if (++stale > cfg.patience) {
                net = best;
                break;
            }
        }
    }
    if (n_val > 0 && best_val < std::numeric_limits<double>::infinity()) net = best;
    return last_train_loss;
}

}  // namespace detail

inline Rescale fit_rescale(const SpaceTimeDataset& ds) {
    Rescale r;
    bool first = true;
    for (const auto& o : ds.rows()) {
        if (first) {
            r.s1_min = r.s1_max = o.s1;
            r.s2_min = r.s2_max = o.s2;
            r.t_min = r.t_max = o.t;
            first = false;
        } else {
            r.s1_min = std::min(r.s1_min, o.s1);
            r.s1_max = std::max(r.s1_max, o.s1);
            r.s2_min = std::min(r.s2_min, o.s2);
            r.s2_max = std::max(r.s2_max, o.s2);
            r.t_min = std::min(r.t_min, o.t);
            r.t_max = std::max(r.t_max, o.t);
        }
    }
    return r;
}

inline InterpolatorModel fit_interpolator(const SpaceTimeDataset& ds,
                                          const InterpolatorConfig& cfg) {
    if (ds.empty()) throw std::invalid_argument("fit_interpolator: empty dataset");
    if (std::find(cfg.taus.begin(), cfg.taus.end(), 0.5) == cfg.taus.end())
        throw std::invalid_argument("fit_interpolator: tau list must contain 0.5");
    for (double tau : cfg.taus) require_tau(tau);

    InterpolatorModel model;
    model.seed = cfg.train.seed;
    model.embedding.rescale = fit_rescale(ds);
    model.embedding.n_covariates = ds.n_covariates();
    if (model.embedding.rescale.t_min == model.embedding.rescale.t_max)
        model.warnings.push_back("single time stamp: temporal anchors collapse to one resolution");
    if (ds.stations().size() < 2)
        model.warnings.push_back("single station: spatial anchors collapse to one resolution");
    model.embedding.spatial = make_spatial_anchors(cfg.spatial_counts);
    model.embedding.temporal = make_temporal_anchors(cfg.temporal_counts);

    model.sigma_range = ds.z_range();
    model.lambda = cfg.lambda_override > 0.0 ? cfg.lambda_override
                                             : std::max(model.sigma_range / 2.0, 1e-12);
    model.z_mean = ds.mean_z();
    model.z_std = ds.std_z() > 0.0 ? ds.std_z() : 1.0;

    const Eigen::MatrixXd X = detail::embed_all(ds, model.embedding);
    const auto n = static_cast<Eigen::Index>(ds.size());
    Eigen::VectorXd z(n), z_std(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        z[i] = ds.rows()[static_cast<std::size_t>(i)].z;
        z_std[i] = (z[i] - model.z_mean) / model.z_std;
    }

    // Point head first (standardized targets), then each tau through psi with
    // the frozen per-point median on the original scale.
    model.median_net = make_dense_net(X.rows(), cfg.layer_sizes, cfg.train.seed);
    const auto kind = cfg.mse_point_head ? detail::LossKind::Squared : detail::LossKind::Median;
    const double med_risk = detail::train_net(model.median_net, X, z_std, Eigen::VectorXd(), 0.5,
                                              model.lambda, kind, cfg.train);
    model.final_risk[0.5] = med_risk;

    Eigen::VectorXd f_const(n);
    {
        ForwardCache c = forward(model.median_net, X);
        for (Eigen::Index i = 0; i < n; ++i)
            f_const[i] = model.z_mean + model.z_std * c.output(0, i);
    }

    int tau_counter = 1;
    for (double tau : cfg.taus) {
        if (tau == 0.5) continue;
        TrainConfig tcfg = cfg.train;
        tcfg.seed = cfg.train.seed + 7919ULL * static_cast<std::uint64_t>(tau_counter++);
        DenseNet qnet = make_dense_net(X.rows(), cfg.layer_sizes, tcfg.seed);
        const double risk = detail::train_net(qnet, X, z, f_const, tau, model.lambda,
                                              detail::LossKind::Quantile, tcfg);
        model.final_risk[tau] = risk;
        model.quantile_nets.emplace(tau, std::move(qnet));
    }
    return model;
}

inline double predict(const InterpolatorModel& model, double s1, double s2, double t,
                      double tau = 0.5, const std::vector<double>& covariates = {}) {
    require_tau(tau);
    auto phi = embed(s1, s2, t, model.embedding, covariates);
    Eigen::VectorXd x =
        Eigen::Map<const Eigen::VectorXd>(phi.data(), static_cast<Eigen::Index>(phi.size()));
    const double median_raw = forward(model.median_net, x).output(0, 0);
    const double median = model.z_mean + model.z_std * median_raw;
    if (tau == 0.5) return median;
    auto it = model.quantile_nets.find(tau);
    if (it == model.quantile_nets.end()) throw MissingQuantile(tau);
    const double raw = forward(it->second, x).output(0, 0);
    return psi(tau, raw, median, model.lambda);
}

inline std::pair<double, double> interval(const InterpolatorModel& model, double s1, double s2,
                                          double t, double alpha,
                                          const std::vector<double>& covariates = {}) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("alpha must be in (0,1)");
    const double lo = predict(model, s1, s2, t, alpha / 2.0, covariates);
    const double hi = predict(model, s1, s2, t, 1.0 - alpha / 2.0, covariates);
    return {lo, hi};
}

inline std::vector<double> interpolate_series(const InterpolatorModel& model, double s1, double s2,
                                              const std::vector<double>& times) {
    std::vector<double> out;
    out.reserve(times.size());
    for (double t : times) out.push_back(predict(model, s1, s2, t, 0.5));
    return out;
}

// --- persistence: directory with embedding + per-tau checkpoints + manifest ---

inline void save_interpolator(const InterpolatorModel& model, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto dump = [&](const std::string& name, const nlohmann::json& j) {
        std::ofstream out(fs::path(dir) / name);
        if (!out) throw std::runtime_error("cannot write " + name + " in " + dir);
        out << j.dump(2);
    };
    dump("embedding.json", embedding_to_json(model.embedding));
    dump("net_median.json", net_to_json(model.median_net));

    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["lambda"] = model.lambda;
    manifest["sigma_range"] = model.sigma_range;
    manifest["z_mean"] = model.z_mean;
    manifest["z_std"] = model.z_std;
    manifest["seed"] = model.seed;
    manifest["quantiles"] = nlohmann::json::array();
    int k = 0;
    for (const auto& [tau, net] : model.quantile_nets) {
        const std::string file = "net_tau_" + std::to_string(k) + ".json";
        dump(file, net_to_json(net));
        manifest["quantiles"].push_back({{"tau", tau}, {"file", file}});
        ++k;
    }
    nlohmann::json risks = nlohmann::json::object();
    for (const auto& [tau, risk] : model.final_risk) risks[std::to_string(tau)] = risk;
    manifest["final_risk"] = risks;
    manifest["warnings"] = model.warnings;
    dump("manifest.json", manifest);
}

inline InterpolatorModel load_interpolator(const std::string& dir) {
    namespace fs = std::filesystem;
    auto slurp = [&](const std::string& name) {
        std::ifstream in(fs::path(dir) / name);
        if (!in) throw std::runtime_error("model file not found: " + (fs::path(dir) / name).string());
        return nlohmann::json::parse(in);
    };
    InterpolatorModel model;
    model.embedding = embedding_from_json(slurp("embedding.json"));
    model.median_net = net_from_json(slurp("net_median.json"));
    const auto manifest = slurp("manifest.json");
    model.lambda = manifest.at("lambda").get<double>();
    model.sigma_range = manifest.at("sigma_range").get<double>();
    model.z_mean = manifest.at("z_mean").get<double>();
    model.z_std = manifest.at("z_std").get<double>();
    model.seed = manifest.at("seed").get<std::uint64_t>();
    for (const auto& q : manifest.at("quantiles")) {
        model.quantile_nets.emplace(q.at("tau").get<double>(),
                                    net_from_json(slurp(q.at("file").get<std::string>())));
    }
    for (const auto& w : manifest.at("warnings")) model.warnings.push_back(w.get<std::string>());
    return model;
}

}  // namespace stq
