#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "stq/errors.hpp"
#include "stq/nn.hpp"
#include "stq/quantile.hpp"

namespace stq {

// One recurrent cell; gate matrices act on the concatenation [m_prev, x].
struct LstmCellParams {
    Eigen::MatrixXd Wa, Wb, Wc, Wo;  // hidden x (hidden + input)
    Eigen::VectorXd ba, bb, bc, bo;

    Eigen::Index hidden() const { return Wa.rows(); }
    Eigen::Index input() const { return Wa.cols() - Wa.rows(); }
};

inline LstmCellParams make_lstm_cell(Eigen::Index hidden, Eigen::Index input,
                                     std::uint64_t seed) {
    LstmCellParams p;
    const Eigen::Index cols = hidden + input;
    p.Wa = init_weights(hidden, cols, seed + 1);
    p.Wb = init_weights(hidden, cols, seed + 2);
    p.Wc = init_weights(hidden, cols, seed + 3);
    p.Wo = init_weights(hidden, cols, seed + 4);
    // the gate on C_prev starts biased open so early cell state survives
    p.ba = Eigen::VectorXd::Ones(hidden);
    p.bb = Eigen::VectorXd::Zero(hidden);
    p.bc = Eigen::VectorXd::Zero(hidden);
    p.bo = Eigen::VectorXd::Zero(hidden);
    return p;
}

struct LstmStepCache {
    Eigen::VectorXd u;  // [m_prev, x]
    Eigen::VectorXd a, b, c, o, C, C_prev, tanh_C, m;
};

// C_t = a (.) C_prev + b (.) tanh-candidate; m_t = o (.) tanh(C_t).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> lstm_cell(const Eigen::VectorXd& x,
                                                             const Eigen::VectorXd& m_prev,
                                                             const Eigen::VectorXd& C_prev,
                                                             const LstmCellParams& p,
                                                             LstmStepCache* cache = nullptr) {
    if (x.size() != p.input() || m_prev.size() != p.hidden() || C_prev.size() != p.hidden())
        throw std::invalid_argument("lstm_cell: state/input shape mismatch");
    Eigen::VectorXd u(p.hidden() + p.input());
    u << m_prev, x;
    auto sig = [](const Eigen::VectorXd& v) {
        return ((-v.array()).exp() + 1.0).inverse().matrix().eval();
    };
    const Eigen::VectorXd a = sig(p.Wa * u + p.ba);
    const Eigen::VectorXd b = sig(p.Wb * u + p.bb);
    const Eigen::VectorXd c = (p.Wc * u + p.bc).array().tanh().matrix();
    const Eigen::VectorXd o = sig(p.Wo * u + p.bo);
    const Eigen::VectorXd C = a.cwiseProduct(C_prev) + b.cwiseProduct(c);
    const Eigen::VectorXd tC = C.array().tanh().matrix();
    const Eigen::VectorXd m = o.cwiseProduct(tC);
    if (cache) *cache = {u, a, b, c, o, C, C_prev, tC, m};
    return {m, C};
}

struct LstmNetwork {
    std::vector<LstmCellParams> cells;  // P stacked layers
    Eigen::RowVectorXd W_head;          // 1 x hidden of last layer
    double b_head = 0.0;
};

inline LstmNetwork make_lstm_network(int layers, Eigen::Index hidden, Eigen::Index input,
                                     std::uint64_t seed) {
    if (layers < 1) throw std::invalid_argument("need at least one LSTM layer");
    LstmNetwork net;
    Eigen::Index in = input;
    for (int i = 0; i < layers; ++i) {
        net.cells.push_back(make_lstm_cell(hidden, in, seed + 1000ULL * (i + 1)));
        in = hidden;
    }
    net.W_head = init_weights(1, hidden, seed + 77).row(0);
    net.b_head = 0.0;
    return net;
}

struct LstmWindowCache {
    // caches[layer][step]
    std::vector<std::vector<LstmStepCache>> steps;
    Eigen::VectorXd final_m;
};

// Run one window through the stack; states start at zero per window.
inline double lstm_window_forward(const LstmNetwork& net,
                                  const std::vector<Eigen::VectorXd>& window,
                                  LstmWindowCache* cache = nullptr) {
    if (window.empty()) throw std::invalid_argument("empty window");
    const std::size_t P = net.cells.size();
    if (cache) cache->steps.assign(P, {});
    std::vector<Eigen::VectorXd> m(P), C(P);
    for (std::size_t l = 0; l < P; ++l) {
        m[l] = Eigen::VectorXd::Zero(net.cells[l].hidden());
        C[l] = Eigen::VectorXd::Zero(net.cells[l].hidden());
    }
    for (const auto& x : window) {
        Eigen::VectorXd input = x;
        for (std::size_t l = 0; l < P; ++l) {
            LstmStepCache sc;
            auto [mm, cc] = lstm_cell(input, m[l], C[l], net.cells[l], cache ? &sc : nullptr);
            if (cache) cache->steps[l].push_back(std::move(sc));
            m[l] = mm;
            C[l] = cc;
            input = m[l];
        }
    }
    if (cache) cache->final_m = m[P - 1];
    return net.W_head.dot(m[P - 1]) + net.b_head;
}

struct LstmGradients {
    std::vector<LstmCellParams> cells;  // same shapes, holding gradients
    Eigen::RowVectorXd dW_head;
    double db_head = 0.0;
};

inline LstmGradients zero_lstm_gradients(const LstmNetwork& net) {
    LstmGradients g;
    for (const auto& c : net.cells) {
        LstmCellParams z;
        z.Wa = Eigen::MatrixXd::Zero(c.Wa.rows(), c.Wa.cols());
        z.Wb = z.Wa;
        z.Wc = z.Wa;
        z.Wo = z.Wa;
        z.ba = Eigen::VectorXd::Zero(c.ba.size());
        z.bb = z.ba;
        z.bc = z.ba;
        z.bo = z.ba;
        g.cells.push_back(std::move(z));
    }
    g.dW_head = Eigen::RowVectorXd::Zero(net.W_head.size());
    g.db_head = 0.0;
    return g;
}

// Backpropagation through the unrolled window; accumulates into `g`.
inline void lstm_window_backward(const LstmNetwork& net, const LstmWindowCache& cache,
                                 double d_output, LstmGradients& g) {
    const std::size_t P = net.cells.size();
    if (cache.steps.size() != P || cache.steps[0].empty())
        throw std::invalid_argument("lstm backward: cache does not match network");
    const std::size_t T = cache.steps[0].size();

    g.dW_head += d_output * cache.final_m.transpose();
    g.db_head += d_output;

    // dm[l][t] accumulated lazily: grad wrt m of layer l at step t
    std::vector<std::vector<Eigen::VectorXd>> dm(P);
    for (std::size_t l = 0; l < P; ++l)
        dm[l].assign(T, Eigen::VectorXd::Zero(net.cells[l].hidden()));
    dm[P - 1][T - 1] = d_output * net.W_head.transpose();

    // process layers top-down so dx contributions land on the layer below
    for (std::size_t l = P; l-- > 0;) {
        Eigen::VectorXd dC_next = Eigen::VectorXd::Zero(net.cells[l].hidden());
        for (std::size_t t = T; t-- > 0;) {
            const auto& sc = cache.steps[l][t];
            const auto& p = net.cells[l];
            Eigen::VectorXd dmv = dm[l][t];

            const Eigen::VectorXd d_o = dmv.cwiseProduct(sc.tanh_C);
            Eigen::VectorXd dC = dC_next +
                dmv.cwiseProduct(sc.o).cwiseProduct(
                    (1.0 - sc.tanh_C.array().square()).matrix());
            const Eigen::VectorXd d_a = dC.cwiseProduct(sc.C_prev);
            const Eigen::VectorXd d_b = dC.cwiseProduct(sc.c);
            const Eigen::VectorXd d_c = dC.cwiseProduct(sc.b);
            dC_next = dC.cwiseProduct(sc.a);

            const Eigen::VectorXd dza = d_a.cwiseProduct(sc.a).cwiseProduct(
                (1.0 - sc.a.array()).matrix());
            const Eigen::VectorXd dzb = d_b.cwiseProduct(sc.b).cwiseProduct(
                (1.0 - sc.b.array()).matrix());
            const Eigen::VectorXd dzc =
                d_c.cwiseProduct((1.0 - sc.c.array().square()).matrix());
            const Eigen::VectorXd dzo = d_o.cwiseProduct(sc.o).cwiseProduct(
                (1.0 - sc.o.array()).matrix());

            auto& gc = g.cells[l];
            gc.Wa += dza * sc.u.transpose();
            gc.Wb += dzb * sc.u.transpose();
            gc.Wc += dzc * sc.u.transpose();
            gc.Wo += dzo * sc.u.transpose();
            gc.ba += dza;
            gc.bb += dzb;
            gc.bc += dzc;
            gc.bo += dzo;

            const Eigen::VectorXd du = p.Wa.transpose() * dza + p.Wb.transpose() * dzb +
                                       p.Wc.transpose() * dzc + p.Wo.transpose() * dzo;
            if (t > 0) dm[l][t - 1] += du.head(p.hidden());
            if (l > 0) dm[l - 1][t] += du.tail(p.input());
        }
    }
}

inline void lstm_sgd_step(LstmNetwork& net, const LstmGradients& g, double lr) {
    for (std::size_t l = 0; l < net.cells.size(); ++l) {
        auto& c = net.cells[l];
        const auto& gc = g.cells[l];
        c.Wa -= lr * gc.Wa;
        c.Wb -= lr * gc.Wb;
        c.Wc -= lr * gc.Wc;
        c.Wo -= lr * gc.Wo;
        c.ba -= lr * gc.ba;
        c.bb -= lr * gc.bb;
        c.bc -= lr * gc.bc;
        c.bo -= lr * gc.bo;
    }
    net.W_head -= lr * g.dW_head;
    net.b_head -= lr * g.db_head;
}

// --- windowing ---

struct Window {
    std::vector<double> inputs;  // length j, chronological
    double target = 0.0;
};

inline std::vector<Window> make_windows(const std::vector<double>& series, int j) {
    if (j < 1) throw std::domain_error("window length must be positive");
    if (static_cast<int>(series.size()) <= j)
        throw std::domain_error("series of length " + std::to_string(series.size()) +
                                " too short for window length " + std::to_string(j));
    std::vector<Window> out;
    out.reserve(series.size() - static_cast<std::size_t>(j));
    for (std::size_t k = static_cast<std::size_t>(j); k < series.size(); ++k) {
        Window w;
        w.inputs.assign(series.begin() + static_cast<std::ptrdiff_t>(k) - j,
                        series.begin() + static_cast<std::ptrdiff_t>(k));
        w.target = series[k];
        out.push_back(std::move(w));
    }
    return out;
}

// --- quantile LSTM forecaster ---

struct QlstmConfig {
    int layers = 1;    // P
    int hidden = 50;
    int window = 12;   // j
    std::vector<double> taus{0.05, 0.5, 0.95};
    double learning_rate = 0.01;
    int epochs = 150;
    int batch_size = 16;
    std::uint64_t seed = 0;
    double lambda_override = 0.0;
};

struct QlstmModel {
    std::map<double, LstmNetwork> nets;  // per-tau network, 0.5 is the point head
    int window = 12;
    double lambda = 0.0;
    double series_mean = 0.0;
    double series_std = 1.0;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<Eigen::VectorXd> scalar_window(const std::vector<double>& vals) {
    std::vector<Eigen::VectorXd> out;
    out.reserve(vals.size());
    for (double v : vals) {
        Eigen::VectorXd x(1);
        x[0] = v;
        out.push_back(std::move(x));
    }
    return out;
}

// Train one per-tau network on the prepared windows. Median trains on the
// standardized targets; other taus train through psi on the original scale.
inline void train_lstm_net(LstmNetwork& net, const std::vector<Window>& windows,
                           const std::vector<double>& f_const, double tau, double lambda,
                           bool through_psi, const QlstmConfig& cfg) {
    std::mt19937_64 rng(cfg.seed ^ (0xc0ffee ^ static_cast<std::uint64_t>(tau * 1e6)));
    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), 0);
    const int batch = std::max(1, std::min<int>(cfg.batch_size,
                                                static_cast<int>(windows.size())));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(batch)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(batch));
            LstmGradients g = zero_lstm_gradients(net);
            const double inv_b = 1.0 / static_cast<double>(stop - start);
            for (std::size_t k = start; k < stop; ++k) {
                const auto& w = windows[order[k]];
                LstmWindowCache cache;
                const double raw = lstm_window_forward(net, scalar_window(w.inputs), &cache);
                double dv;
                if (through_psi) {
                    const double pred = psi(tau, raw, f_const[order[k]], lambda);
                    dv = -check_loss_grad(w.target - pred, tau) * psi_grad(tau, raw, lambda);
                } else {
                    dv = -check_loss_grad(w.target - raw, tau);
                }
                if (!std::isfinite(dv)) throw TrainingDiverged(epoch, tau);
                lstm_window_backward(net, cache, dv * inv_b, g);
            }
            lstm_sgd_step(net, g, cfg.learning_rate);
        }
    }
}

}  // namespace detail

inline QlstmModel fit_qlstm(const std::vector<double>& series, const QlstmConfig& cfg) {
    if (std::find(cfg.taus.begin(), cfg.taus.end(), 0.5) == cfg.taus.end())
        throw std::invalid_argument("fit_qlstm: tau list must contain 0.5");
    for (double v : series)
        if (!std::isfinite(v)) throw std::invalid_argument("fit_qlstm: non-finite series value");

    QlstmModel model;
    model.window = cfg.window;
    model.seed = cfg.seed;
    const double mean = std::accumulate(series.begin(), series.end(), 0.0) /
                        static_cast<double>(series.size());
    double ss = 0.0;
    for (double v : series) ss += (v - mean) * (v - mean);
    const double sd = series.size() > 1 ? std::sqrt(ss / static_cast<double>(series.size() - 1))
                                        : 0.0;
    model.series_mean = mean;
    model.series_std = sd > 0.0 ? sd : 1.0;
    const double range = *std::max_element(series.begin(), series.end()) -
                         *std::min_element(series.begin(), series.end());
    model.lambda = cfg.lambda_override > 0.0 ? cfg.lambda_override : std::max(range / 2.0, 1e-12);

    std::vector<double> std_series;
    std_series.reserve(series.size());
    for (double v : series) std_series.push_back((v - model.series_mean) / model.series_std);

    const auto std_windows = make_windows(std_series, cfg.window);

    LstmNetwork median = make_lstm_network(cfg.layers, cfg.hidden, 1, cfg.seed);
    detail::train_lstm_net(median, std_windows, {}, 0.5, model.lambda, false, cfg);

    // per-window median forecasts on the original scale anchor the psi bands
    std::vector<double> f_const;
    f_const.reserve(std_windows.size());
    auto orig_windows = make_windows(series, cfg.window);
    for (std::size_t i = 0; i < std_windows.size(); ++i) {
        const double raw = lstm_window_forward(median, detail::scalar_window(std_windows[i].inputs));
        f_const.push_back(model.series_mean + model.series_std * raw);
        orig_windows[i].inputs = std_windows[i].inputs;  // inputs standardized, target original
    }

    int counter = 1;
    for (double tau : cfg.taus) {
        if (tau == 0.5) continue;
        QlstmConfig qcfg = cfg;
        qcfg.seed = cfg.seed + 104729ULL * static_cast<std::uint64_t>(counter++);
        LstmNetwork net = make_lstm_network(qcfg.layers, qcfg.hidden, 1, qcfg.seed);
        detail::train_lstm_net(net, orig_windows, f_const, tau, model.lambda, true, qcfg);
        model.nets.emplace(tau, std::move(net));
    }
    model.nets.emplace(0.5, std::move(median));
    return model;
}

// Recursive multi-step forecast: the median forecast feeds back into the
// window; quantile heads are evaluated on the same window at each step.
inline std::map<double, std::vector<double>> forecast(const QlstmModel& model,
                                                      const std::vector<double>& series, int u) {
    if (u <= 0) throw std::domain_error("forecast horizon must be positive");
    if (static_cast<int>(series.size()) < model.window)
        throw std::domain_error("series shorter than the model window");
    const auto med_it = model.nets.find(0.5);
    if (med_it == model.nets.end()) throw MissingQuantile(0.5);

    std::vector<double> window;
    for (auto it = series.end() - model.window; it != series.end(); ++it)
        window.push_back((*it - model.series_mean) / model.series_std);

    std::map<double, std::vector<double>> out;
    for (const auto& [tau, net] : model.nets) out[tau] = {};

    for (int step = 0; step < u; ++step) {
        const auto xw = detail::scalar_window(window);
        const double med_raw = lstm_window_forward(med_it->second, xw);
        const double med = model.series_mean + model.series_std * med_raw;
        for (const auto& [tau, net] : model.nets) {
            if (tau == 0.5) {
                out[tau].push_back(med);
            } else {
                const double raw = lstm_window_forward(net, xw);
                out[tau].push_back(psi(tau, raw, med, model.lambda));
            }
        }
        window.erase(window.begin());
        window.push_back(med_raw);
    }
    return out;
}

}  // namespace stq
