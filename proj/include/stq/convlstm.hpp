#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "stq/errors.hpp"
#include "stq/interpolator.hpp"
#include "stq/lstm.hpp"
#include "stq/quantile.hpp"

namespace stq {

using ChannelStack = std::vector<Eigen::MatrixXd>;

// --- plain valid cross-correlation (3x3 kernels, no padding) ---

struct ConvFilterBank {
    // kernels[out_channel][in_channel] is a 3x3 kernel
    std::vector<std::vector<Eigen::Matrix3d>> kernels;
    Eigen::VectorXd bias;  // per out channel

    std::size_t out_channels() const { return kernels.size(); }
    std::size_t in_channels() const { return kernels.empty() ? 0 : kernels[0].size(); }
};

inline ConvFilterBank make_filter_bank(std::size_t out_ch, std::size_t in_ch,
                                       std::uint64_t seed) {
    ConvFilterBank bank;
    bank.kernels.resize(out_ch);
    const double fan_in = static_cast<double>(in_ch) * 9.0;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& per_in : bank.kernels) {
        per_in.resize(in_ch);
        for (auto& k : per_in)
            for (int p = 0; p < 3; ++p)
                for (int q = 0; q < 3; ++q) k(p, q) = dist(rng);
    }
    bank.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out_ch));
    return bank;
}

// r x r input with a 3x3 kernel yields (r-2) x (r-2) output.
inline ChannelStack conv_forward(const ChannelStack& input, const ConvFilterBank& bank) {
    if (input.empty() || input.size() != bank.in_channels())
        throw std::invalid_argument("conv_forward: channel count mismatch");
    const Eigen::Index H = input[0].rows(), W = input[0].cols();
    if (H < 3 || W < 3) throw std::invalid_argument("conv_forward: input smaller than kernel");
    ChannelStack out(bank.out_channels());
    for (std::size_t oc = 0; oc < bank.out_channels(); ++oc) {
        Eigen::MatrixXd m = Eigen::MatrixXd::Constant(H - 2, W - 2, bank.bias[static_cast<Eigen::Index>(oc)]);
        for (std::size_t ic = 0; ic < input.size(); ++ic) {
            const auto& k = bank.kernels[oc][ic];
            const auto& x = input[ic];
            for (Eigen::Index i = 0; i < H - 2; ++i)
                for (Eigen::Index j = 0; j < W - 2; ++j)
                    m(i, j) += (x.block<3, 3>(i, j).array() * k.array()).sum();
        }
        out[oc] = std::move(m);
    }
    return out;
}

// Gradient of conv_forward: given d_out, accumulate kernel/bias grads and
// return d_input.
inline ChannelStack conv_backward(const ChannelStack& input, const ConvFilterBank& bank,
                                  const ChannelStack& d_out, ConvFilterBank& grad) {
    const Eigen::Index H = input[0].rows(), W = input[0].cols();
    ChannelStack d_in(input.size());
    for (std::size_t ic = 0; ic < input.size(); ++ic)
        d_in[ic] = Eigen::MatrixXd::Zero(H, W);
    for (std::size_t oc = 0; oc < bank.out_channels(); ++oc) {
        const auto& g = d_out[oc];
        grad.bias[static_cast<Eigen::Index>(oc)] += g.sum();
        for (std::size_t ic = 0; ic < input.size(); ++ic) {
            const auto& k = bank.kernels[oc][ic];
            auto& dk = grad.kernels[oc][ic];
            const auto& x = input[ic];
            for (Eigen::Index i = 0; i < g.rows(); ++i) {
                for (Eigen::Index j = 0; j < g.cols(); ++j) {
                    const double gij = g(i, j);
                    dk += gij * x.block<3, 3>(i, j);
                    d_in[ic].block<3, 3>(i, j) += gij * k;
                }
            }
        }
    }
    return d_in;
}

namespace detail {

inline Eigen::MatrixXd zero_pad1(const Eigen::MatrixXd& m) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(m.rows() + 2, m.cols() + 2);
    p.block(1, 1, m.rows(), m.cols()) = m;
    return p;
}

inline ChannelStack zero_pad1(const ChannelStack& s) {
    ChannelStack out;
    out.reserve(s.size());
    for (const auto& m : s) out.push_back(zero_pad1(m));
    return out;
}

inline ChannelStack crop1(const ChannelStack& s) {
    ChannelStack out;
    out.reserve(s.size());
    for (const auto& m : s) out.push_back(m.block(1, 1, m.rows() - 2, m.cols() - 2));
    return out;
}

}  // namespace detail

// --- convolution-gated recurrent cell ---
// Input-to-state convolutions are valid (r -> r-2); state-to-state
// convolutions are zero-padded so state maps keep their size per layer.

struct ConvGate {
    ConvFilterBank input_conv;  // over frame channels, valid
    ConvFilterBank state_conv;  // over hidden channels, same-padded
};

struct ConvLstmCellParams {
    ConvGate a, b, c, o;
    std::size_t in_channels() const { return a.input_conv.in_channels(); }
    std::size_t hidden_channels() const { return a.input_conv.out_channels(); }
};

inline ConvLstmCellParams make_convlstm_cell(std::size_t hidden_ch, std::size_t in_ch,
                                             std::uint64_t seed) {
    auto gate = [&](std::uint64_t salt) {
        ConvGate g;
        g.input_conv = make_filter_bank(hidden_ch, in_ch, seed + salt);
        g.state_conv = make_filter_bank(hidden_ch, hidden_ch, seed + salt + 500);
        return g;
    };
    ConvLstmCellParams p;
    p.a = gate(1);
    p.b = gate(2);
    p.c = gate(3);
    p.o = gate(4);
    // keep the C_prev gate open initially, as in the vector cell
    p.a.input_conv.bias.setOnes();
    return p;
}

struct ConvStepCache {
    ChannelStack x, padded_m_prev, C_prev;
    ChannelStack a, b, c, o, C, tanh_C, m;
};

inline std::pair<ChannelStack, ChannelStack> convlstm_cell(const ChannelStack& frame,
                                                           const ChannelStack& m_prev,
                                                           const ChannelStack& C_prev,
                                                           const ConvLstmCellParams& p,
                                                           ConvStepCache* cache = nullptr) {
    if (frame.size() != p.in_channels() || m_prev.size() != p.hidden_channels())
        throw std::invalid_argument("convlstm_cell: channel mismatch");
    const ChannelStack padded_m = detail::zero_pad1(m_prev);

    auto gate_pre = [&](const ConvGate& g) {
        ChannelStack zx = conv_forward(frame, g.input_conv);
        ChannelStack zm = conv_forward(padded_m, g.state_conv);
        if (zx[0].rows() != zm[0].rows() || zx[0].cols() != zm[0].cols())
            throw std::invalid_argument("convlstm_cell: state spatial size mismatch");
        for (std::size_t ch = 0; ch < zx.size(); ++ch) zx[ch] += zm[ch];
        return zx;
    };
    auto map_sigmoid = [](ChannelStack z) {
        for (auto& m : z) m = ((-m.array()).exp() + 1.0).inverse().matrix();
        return z;
    };
    auto map_tanh = [](ChannelStack z) {
        for (auto& m : z) m = m.array().tanh().matrix();
        return z;
    };

    const ChannelStack a = map_sigmoid(gate_pre(p.a));
    const ChannelStack b = map_sigmoid(gate_pre(p.b));
    const ChannelStack c = map_tanh(gate_pre(p.c));
    const ChannelStack o = map_sigmoid(gate_pre(p.o));

    ChannelStack C(a.size()), tC(a.size()), m(a.size());
    for (std::size_t ch = 0; ch < a.size(); ++ch) {
        C[ch] = a[ch].cwiseProduct(C_prev[ch]) + b[ch].cwiseProduct(c[ch]);
        tC[ch] = C[ch].array().tanh().matrix();
        m[ch] = o[ch].cwiseProduct(tC[ch]);
    }
    if (cache) *cache = {frame, padded_m, C_prev, a, b, c, o, C, tC, m};
    return {m, C};
}

struct ConvLstmNetwork {
    std::vector<ConvLstmCellParams> cells;
    Eigen::RowVectorXd W_head;  // over flattened final m channels
    double b_head = 0.0;
    Eigen::Index state_rows = 0, state_cols = 0;  // of the last layer's state
};

inline ConvLstmNetwork make_convlstm_network(int layers, std::size_t hidden_ch, Eigen::Index r,
                                             std::uint64_t seed) {
    if (r < 3 || r % 2 == 0) throw std::invalid_argument("frame size r must be odd and >= 3");
    ConvLstmNetwork net;
    std::size_t in_ch = 1;
    Eigen::Index size = r;
    for (int i = 0; i < layers; ++i) {
        if (size < 3)
            throw std::invalid_argument("spatial extent exhausted: cannot stack layer " +
                                        std::to_string(i + 1));
        net.cells.push_back(make_convlstm_cell(hidden_ch, in_ch, seed + 9000ULL * (i + 1)));
        in_ch = hidden_ch;
        size -= 2;
    }
    net.state_rows = net.state_cols = size;
    const Eigen::Index flat = static_cast<Eigen::Index>(hidden_ch) * size * size;
    net.W_head = init_weights(1, flat, seed + 31).row(0);
    net.b_head = 0.0;
    return net;
}

struct ConvWindowCache {
    std::vector<std::vector<ConvStepCache>> steps;  // [layer][time]
    ChannelStack final_m;
};

inline Eigen::VectorXd flatten_stack(const ChannelStack& s) {
    Eigen::Index n = 0;
    for (const auto& m : s) n += m.size();
    Eigen::VectorXd v(n);
    Eigen::Index off = 0;
    for (const auto& m : s) {
        v.segment(off, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
        off += m.size();
    }
    return v;
}

inline double convlstm_window_forward(const ConvLstmNetwork& net,
                                      const std::vector<Eigen::MatrixXd>& frames,
                                      ConvWindowCache* cache = nullptr) {
    if (frames.empty()) throw std::invalid_argument("empty frame window");
    const std::size_t P = net.cells.size();
    if (cache) cache->steps.assign(P, {});

    // per-layer state geometry: layer l state is (r - 2(l+1)) square
    std::vector<ChannelStack> m(P), C(P);
    Eigen::Index size = frames[0].rows() - 2;
    for (std::size_t l = 0; l < P; ++l) {
        const std::size_t hc = net.cells[l].hidden_channels();
        m[l].assign(hc, Eigen::MatrixXd::Zero(size, size));
        C[l].assign(hc, Eigen::MatrixXd::Zero(size, size));
        size -= 2;
    }

    for (const auto& frame : frames) {
        ChannelStack input{frame};
        for (std::size_t l = 0; l < P; ++l) {
            ConvStepCache sc;
            auto [mm, cc] = convlstm_cell(input, m[l], C[l], net.cells[l],
                                          cache ? &sc : nullptr);
            if (cache) cache->steps[l].push_back(std::move(sc));
            m[l] = mm;
            C[l] = cc;
            input = m[l];
        }
    }
    if (cache) cache->final_m = m[P - 1];
    return net.W_head.dot(flatten_stack(m[P - 1])) + net.b_head;
}

struct ConvLstmGradients {
    std::vector<ConvLstmCellParams> cells;
    Eigen::RowVectorXd dW_head;
    double db_head = 0.0;
};

inline ConvFilterBank zero_like(const ConvFilterBank& b) {
    ConvFilterBank z = b;
    for (auto& per_in : z.kernels)
        for (auto& k : per_in) k.setZero();
    z.bias.setZero();
    return z;
}

inline ConvLstmGradients zero_convlstm_gradients(const ConvLstmNetwork& net) {
    ConvLstmGradients g;
    for (const auto& cell : net.cells) {
        ConvLstmCellParams z;
        auto zg = [](const ConvGate& gate) {
            return ConvGate{zero_like(gate.input_conv), zero_like(gate.state_conv)};
        };
        z.a = zg(cell.a);
        z.b = zg(cell.b);
        z.c = zg(cell.c);
        z.o = zg(cell.o);
        g.cells.push_back(std::move(z));
    }
    g.dW_head = Eigen::RowVectorXd::Zero(net.W_head.size());
    g.db_head = 0.0;
    return g;
}

inline void convlstm_window_backward(const ConvLstmNetwork& net, const ConvWindowCache& cache,
                                     double d_output, ConvLstmGradients& g) {
    const std::size_t P = net.cells.size();
    if (cache.steps.size() != P || cache.steps[0].empty())
        throw std::invalid_argument("convlstm backward: cache does not match network");
    const std::size_t T = cache.steps[0].size();

    const Eigen::VectorXd flat_final = flatten_stack(cache.final_m);
    g.dW_head += d_output * flat_final.transpose();
    g.db_head += d_output;

    auto zero_stack_like = [](const ChannelStack& s) {
        ChannelStack z;
        z.reserve(s.size());
        for (const auto& m : s) z.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
        return z;
    };

    std::vector<std::vector<ChannelStack>> dm(P);
    for (std::size_t l = 0; l < P; ++l) {
        dm[l].resize(T);
        for (std::size_t t = 0; t < T; ++t)
            dm[l][t] = zero_stack_like(cache.steps[l][t].m);
    }
    {  // unflatten head gradient into the last state
        Eigen::VectorXd dflat = d_output * net.W_head.transpose();
        Eigen::Index off = 0;
        for (auto& mmat : dm[P - 1][T - 1]) {
            mmat = Eigen::Map<const Eigen::MatrixXd>(dflat.data() + off, mmat.rows(),
                                                     mmat.cols());
            off += mmat.size();
        }
    }

    for (std::size_t l = P; l-- > 0;) {
        ChannelStack dC_next = zero_stack_like(cache.steps[l][0].C);
        for (std::size_t t = T; t-- > 0;) {
            const auto& sc = cache.steps[l][t];
            const auto& p = net.cells[l];
            auto& gp = g.cells[l];
            const std::size_t HC = sc.a.size();

            ChannelStack d_o(HC), dC(HC), d_a(HC), d_b(HC), d_c(HC);
            for (std::size_t ch = 0; ch < HC; ++ch) {
                d_o[ch] = dm[l][t][ch].cwiseProduct(sc.tanh_C[ch]);
                dC[ch] = dC_next[ch] +
                         dm[l][t][ch].cwiseProduct(sc.o[ch]).cwiseProduct(
                             (1.0 - sc.tanh_C[ch].array().square()).matrix());
                d_a[ch] = dC[ch].cwiseProduct(sc.C_prev[ch]);
                d_b[ch] = dC[ch].cwiseProduct(sc.c[ch]);
                d_c[ch] = dC[ch].cwiseProduct(sc.b[ch]);
                dC_next[ch] = dC[ch].cwiseProduct(sc.a[ch]);
            }

            ChannelStack dza(HC), dzb(HC), dzc(HC), dzo(HC);
            for (std::size_t ch = 0; ch < HC; ++ch) {
                dza[ch] = d_a[ch].cwiseProduct(sc.a[ch]).cwiseProduct(
                    (1.0 - sc.a[ch].array()).matrix());
                dzb[ch] = d_b[ch].cwiseProduct(sc.b[ch]).cwiseProduct(
                    (1.0 - sc.b[ch].array()).matrix());
                dzc[ch] = d_c[ch].cwiseProduct((1.0 - sc.c[ch].array().square()).matrix());
                dzo[ch] = d_o[ch].cwiseProduct(sc.o[ch]).cwiseProduct(
                    (1.0 - sc.o[ch].array()).matrix());
            }

            ChannelStack d_x = zero_stack_like(sc.x);
            ChannelStack d_padded_m = zero_stack_like(sc.padded_m_prev);
            auto run_gate = [&](const ConvGate& gate, ConvGate& ggate, const ChannelStack& dz) {
                ChannelStack dx_part = conv_backward(sc.x, gate.input_conv, dz, ggate.input_conv);
                ChannelStack dpm_part =
                    conv_backward(sc.padded_m_prev, gate.state_conv, dz, ggate.state_conv);
                for (std::size_t ch = 0; ch < d_x.size(); ++ch) d_x[ch] += dx_part[ch];
                for (std::size_t ch = 0; ch < d_padded_m.size(); ++ch)
                    d_padded_m[ch] += dpm_part[ch];
            };
            run_gate(p.a, gp.a, dza);
            run_gate(p.b, gp.b, dzb);
            run_gate(p.c, gp.c, dzc);
            run_gate(p.o, gp.o, dzo);

            const ChannelStack d_m_prev = detail::crop1(d_padded_m);
            if (t > 0)
                for (std::size_t ch = 0; ch < d_m_prev.size(); ++ch)
                    dm[l][t - 1][ch] += d_m_prev[ch];
            if (l > 0)
                for (std::size_t ch = 0; ch < d_x.size(); ++ch) dm[l - 1][t][ch] += d_x[ch];
        }
    }
}

inline void apply_bank(ConvFilterBank& w, const ConvFilterBank& g, double lr) {
    for (std::size_t oc = 0; oc < w.kernels.size(); ++oc)
        for (std::size_t ic = 0; ic < w.kernels[oc].size(); ++ic)
            w.kernels[oc][ic] -= lr * g.kernels[oc][ic];
    w.bias -= lr * g.bias;
}

inline void convlstm_sgd_step(ConvLstmNetwork& net, const ConvLstmGradients& g, double lr) {
    for (std::size_t l = 0; l < net.cells.size(); ++l) {
        auto step_gate = [&](ConvGate& w, const ConvGate& gg) {
            apply_bank(w.input_conv, gg.input_conv, lr);
            apply_bank(w.state_conv, gg.state_conv, lr);
        };
        step_gate(net.cells[l].a, g.cells[l].a);
        step_gate(net.cells[l].b, g.cells[l].b);
        step_gate(net.cells[l].c, g.cells[l].c);
        step_gate(net.cells[l].o, g.cells[l].o);
    }
    net.W_head -= lr * g.dW_head;
    net.b_head -= lr * g.db_head;
}

// --- neighborhood gridding ---

struct NeighborhoodSeries {
    std::vector<Eigen::MatrixXd> frames;  // time-ordered r x r median interpolations
    double s1 = 0.0, s2 = 0.0;            // center location
    double delta = 0.0;                   // lattice spacing
    std::vector<std::string> warnings;
};

// Regular r x r lattice of interpolator queries centered at s0, spacing delta.
inline NeighborhoodSeries grid_neighborhood(const InterpolatorModel& model, double s1, double s2,
                                            const std::vector<double>& times, int r,
                                            double delta) {
    if (r < 3 || r % 2 == 0) throw std::invalid_argument("neighborhood size r must be odd >= 3");
    if (delta <= 0.0) throw std::invalid_argument("lattice spacing must be positive");
    NeighborhoodSeries out;
    out.s1 = s1;
    out.s2 = s2;
    out.delta = delta;
    const int half = r / 2;
    bool warned = false;
    for (double t : times) {
        Eigen::MatrixXd frame(r, r);
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < r; ++j) {
                const double x = s1 + (j - half) * delta;
                const double y = s2 + (i - half) * delta;
                if (!warned) {
                    if (auto w = model.embedding.extrapolation_warning(x, y, t)) {
                        out.warnings.push_back(*w);
                        warned = true;
                    }
                }
                frame(i, j) = predict(model, x, y, t, 0.5);
            }
        }
        out.frames.push_back(std::move(frame));
    }
    return out;
}

// Median nearest-station spacing, the default lattice spacing.
inline double median_nearest_station_distance(const SpaceTimeDataset& ds) {
    auto stations = ds.stations();
    if (stations.size() < 2) throw std::domain_error("need at least two stations");
    std::vector<double> nearest;
    nearest.reserve(stations.size());
    for (std::size_t i = 0; i < stations.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < stations.size(); ++j) {
            if (i == j) continue;
            const double dx = stations[i].first - stations[j].first;
            const double dy = stations[i].second - stations[j].second;
            best = std::min(best, std::sqrt(dx * dx + dy * dy));
        }
        nearest.push_back(best);
    }
    std::nth_element(nearest.begin(), nearest.begin() + nearest.size() / 2, nearest.end());
    return nearest[nearest.size() / 2];
}

// --- quantile ConvLSTM forecaster ---

struct QconvlstmConfig {
    int layers = 1;  // P
    std::size_t filters = 16;
    int window = 12;
    std::vector<double> taus{0.05, 0.5, 0.95};
    double learning_rate = 0.01;
    int epochs = 100;
    int batch_size = 8;
    std::uint64_t seed = 0;
    double lambda_override = 0.0;
};

struct QconvlstmModel {
    std::map<double, ConvLstmNetwork> nets;
    int window = 12;
    int r = 0;
    double lambda = 0.0;
    double frame_mean = 0.0;
    double frame_std = 1.0;
    std::uint64_t seed = 0;
};

namespace detail {

struct FrameWindow {
    std::vector<Eigen::MatrixXd> frames;  // standardized, length j
    double target = 0.0;                  // center-cell value (scale depends on head)
};

inline void train_convlstm_net(ConvLstmNetwork& net, const std::vector<FrameWindow>& windows,
                               const std::vector<double>& f_const, double tau, double lambda,
                               bool through_psi, const QconvlstmConfig& cfg) {
    std::mt19937_64 rng(cfg.seed ^ (0xfeedULL + static_cast<std::uint64_t>(tau * 1e6)));
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
            ConvLstmGradients g = zero_convlstm_gradients(net);
            const double inv_b = 1.0 / static_cast<double>(stop - start);
            for (std::size_t k = start; k < stop; ++k) {
                const auto& w = windows[order[k]];
                ConvWindowCache cache;
                const double raw = convlstm_window_forward(net, w.frames, &cache);
                double dv;
                if (through_psi) {
                    const double pred = psi(tau, raw, f_const[order[k]], lambda);
                    dv = -check_loss_grad(w.target - pred, tau) * psi_grad(tau, raw, lambda);
                } else {
                    dv = -check_loss_grad(w.target - raw, tau);
                }
                if (!std::isfinite(dv)) throw TrainingDiverged(epoch, tau);
                convlstm_window_backward(net, cache, dv * inv_b, g);
            }
            convlstm_sgd_step(net, g, cfg.learning_rate);
        }
    }
}

}  // namespace detail

inline QconvlstmModel fit_qconvlstm(const NeighborhoodSeries& neigh, const QconvlstmConfig& cfg) {
    if (std::find(cfg.taus.begin(), cfg.taus.end(), 0.5) == cfg.taus.end())
        throw std::invalid_argument("fit_qconvlstm: tau list must contain 0.5");
    if (static_cast<int>(neigh.frames.size()) < cfg.window + 1)
        throw std::domain_error("need at least window+1 frames");

    QconvlstmModel model;
    model.window = cfg.window;
    model.r = static_cast<int>(neigh.frames[0].rows());
    model.seed = cfg.seed;

    double sum = 0.0, count = 0.0;
    double lo = neigh.frames[0](0, 0), hi = lo;
    for (const auto& f : neigh.frames) {
        sum += f.sum();
        count += static_cast<double>(f.size());
        lo = std::min(lo, f.minCoeff());
        hi = std::max(hi, f.maxCoeff());
    }
    model.frame_mean = sum / count;
    double ss = 0.0;
    for (const auto& f : neigh.frames) ss += (f.array() - model.frame_mean).square().sum();
    model.frame_std = count > 1 ? std::sqrt(ss / (count - 1.0)) : 1.0;
    if (model.frame_std <= 0.0) model.frame_std = 1.0;
    model.lambda = cfg.lambda_override > 0.0 ? cfg.lambda_override : std::max((hi - lo) / 2.0, 1e-12);

    std::vector<Eigen::MatrixXd> std_frames;
    std_frames.reserve(neigh.frames.size());
    for (const auto& f : neigh.frames)
        std_frames.push_back(((f.array() - model.frame_mean) / model.frame_std).matrix());

    const int center = model.r / 2;
    const std::size_t K = std_frames.size();
    std::vector<detail::FrameWindow> std_windows, orig_windows;
    for (std::size_t k = static_cast<std::size_t>(cfg.window); k < K; ++k) {
        detail::FrameWindow w;
        w.frames.assign(std_frames.begin() + static_cast<std::ptrdiff_t>(k) - cfg.window,
                        std_frames.begin() + static_cast<std::ptrdiff_t>(k));
        w.target = std_frames[k](center, center);
        std_windows.push_back(w);
        w.target = neigh.frames[k](center, center);
        orig_windows.push_back(std::move(w));
    }

    ConvLstmNetwork median = make_convlstm_network(cfg.layers, cfg.filters, model.r, cfg.seed);
    detail::train_convlstm_net(median, std_windows, {}, 0.5, model.lambda, false, cfg);

    std::vector<double> f_const;
    f_const.reserve(std_windows.size());
    for (const auto& w : std_windows) {
        const double raw = convlstm_window_forward(median, w.frames);
        f_const.push_back(model.frame_mean + model.frame_std * raw);
    }

    int counter = 1;
    for (double tau : cfg.taus) {
        if (tau == 0.5) continue;
        QconvlstmConfig qcfg = cfg;
        qcfg.seed = cfg.seed + 130363ULL * static_cast<std::uint64_t>(counter++);
        ConvLstmNetwork net = make_convlstm_network(qcfg.layers, qcfg.filters, model.r, qcfg.seed);
        detail::train_convlstm_net(net, orig_windows, f_const, tau, model.lambda, true, qcfg);
        model.nets.emplace(tau, std::move(net));
    }
    model.nets.emplace(0.5, std::move(median));
    return model;
}

// Recursive forecast for the center cell. Beyond the observed frames the
// window advances by persistence: the last frame is reused with its center
// replaced by the fed-back median forecast.
inline std::map<double, std::vector<double>> forecast_conv(const QconvlstmModel& model,
                                                           const NeighborhoodSeries& neigh,
                                                           int u) {
    if (u <= 0) throw std::domain_error("forecast horizon must be positive");
    if (static_cast<int>(neigh.frames.size()) < model.window)
        throw std::domain_error("not enough frames for the model window");
    const auto med_it = model.nets.find(0.5);
    if (med_it == model.nets.end()) throw MissingQuantile(0.5);

    const int center = model.r / 2;
    std::vector<Eigen::MatrixXd> window;
    for (auto it = neigh.frames.end() - model.window; it != neigh.frames.end(); ++it)
        window.push_back(((it->array() - model.frame_mean) / model.frame_std).matrix());

    std::map<double, std::vector<double>> out;
    for (const auto& [tau, net] : model.nets) out[tau] = {};

    for (int step = 0; step < u; ++step) {
        const double med_raw = convlstm_window_forward(med_it->second, window);
        const double med = model.frame_mean + model.frame_std * med_raw;
        for (const auto& [tau, net] : model.nets) {
            if (tau == 0.5) {
                out[tau].push_back(med);
            } else {
                const double raw = convlstm_window_forward(net, window);
                out[tau].push_back(psi(tau, raw, med, model.lambda));
            }
        }
        Eigen::MatrixXd next = window.back();
        next(center, center) = med_raw;
        window.erase(window.begin());
        window.push_back(std::move(next));
    }
    return out;
}

}  // namespace stq
