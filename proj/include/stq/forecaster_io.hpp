#pragma once

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "stq/convlstm.hpp"
#include "stq/lstm.hpp"
#include "stq/nn.hpp"

namespace stq {

inline nlohmann::json lstm_network_to_json(const LstmNetwork& net) {
    nlohmann::json j;
    j["cells"] = nlohmann::json::array();
    for (const auto& c : net.cells) {
        nlohmann::json cj;
        cj["Wa"] = matrix_to_json(c.Wa);
        cj["Wb"] = matrix_to_json(c.Wb);
        cj["Wc"] = matrix_to_json(c.Wc);
        cj["Wo"] = matrix_to_json(c.Wo);
        cj["ba"] = matrix_to_json(c.ba);
        cj["bb"] = matrix_to_json(c.bb);
        cj["bc"] = matrix_to_json(c.bc);
        cj["bo"] = matrix_to_json(c.bo);
        j["cells"].push_back(std::move(cj));
    }
    j["W_head"] = matrix_to_json(net.W_head.transpose());
    j["b_head"] = net.b_head;
    return j;
}

inline LstmNetwork lstm_network_from_json(const nlohmann::json& j) {
    LstmNetwork net;
    for (const auto& cj : j.at("cells")) {
        LstmCellParams c;
        c.Wa = matrix_from_json(cj.at("Wa"));
        c.Wb = matrix_from_json(cj.at("Wb"));
        c.Wc = matrix_from_json(cj.at("Wc"));
        c.Wo = matrix_from_json(cj.at("Wo"));
        c.ba = matrix_from_json(cj.at("ba")).col(0);
        c.bb = matrix_from_json(cj.at("bb")).col(0);
        c.bc = matrix_from_json(cj.at("bc")).col(0);
        c.bo = matrix_from_json(cj.at("bo")).col(0);
        net.cells.push_back(std::move(c));
    }
    net.W_head = matrix_from_json(j.at("W_head")).col(0).transpose();
    net.b_head = j.at("b_head").get<double>();
    return net;
}

inline nlohmann::json qlstm_to_json(const QlstmModel& m) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["window"] = m.window;
    j["lambda"] = m.lambda;
    j["series_mean"] = m.series_mean;
    j["series_std"] = m.series_std;
    j["seed"] = m.seed;
    j["nets"] = nlohmann::json::array();
    for (const auto& [tau, net] : m.nets)
        j["nets"].push_back({{"tau", tau}, {"net", lstm_network_to_json(net)}});
    return j;
}

inline QlstmModel qlstm_from_json(const nlohmann::json& j) {
    QlstmModel m;
    m.window = j.at("window").get<int>();
    m.lambda = j.at("lambda").get<double>();
    m.series_mean = j.at("series_mean").get<double>();
    m.series_std = j.at("series_std").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& nj : j.at("nets"))
        m.nets.emplace(nj.at("tau").get<double>(), lstm_network_from_json(nj.at("net")));
    return m;
}

inline nlohmann::json filter_bank_to_json(const ConvFilterBank& b) {
    nlohmann::json j;
    j["kernels"] = nlohmann::json::array();
    for (const auto& per_in : b.kernels) {
        nlohmann::json row = nlohmann::json::array();
        for (const auto& k : per_in) row.push_back(matrix_to_json(k));
        j["kernels"].push_back(std::move(row));
    }
    j["bias"] = matrix_to_json(b.bias);
    return j;
}

inline ConvFilterBank filter_bank_from_json(const nlohmann::json& j) {
    ConvFilterBank b;
    for (const auto& row : j.at("kernels")) {
        std::vector<Eigen::Matrix3d> per_in;
        for (const auto& kj : row) per_in.push_back(matrix_from_json(kj));
        b.kernels.push_back(std::move(per_in));
    }
    b.bias = matrix_from_json(j.at("bias")).col(0);
    return b;
}

inline nlohmann::json qconvlstm_to_json(const QconvlstmModel& m) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["window"] = m.window;
    j["r"] = m.r;
    j["lambda"] = m.lambda;
    j["frame_mean"] = m.frame_mean;
    j["frame_std"] = m.frame_std;
    j["seed"] = m.seed;
    j["nets"] = nlohmann::json::array();
    for (const auto& [tau, net] : m.nets) {
        nlohmann::json nj;
        nj["tau"] = tau;
        nj["cells"] = nlohmann::json::array();
        for (const auto& c : net.cells) {
            nlohmann::json cj;
            cj["a_in"] = filter_bank_to_json(c.a.input_conv);
            cj["a_st"] = filter_bank_to_json(c.a.state_conv);
            cj["b_in"] = filter_bank_to_json(c.b.input_conv);
            cj["b_st"] = filter_bank_to_json(c.b.state_conv);
            cj["c_in"] = filter_bank_to_json(c.c.input_conv);
            cj["c_st"] = filter_bank_to_json(c.c.state_conv);
            cj["o_in"] = filter_bank_to_json(c.o.input_conv);
            cj["o_st"] = filter_bank_to_json(c.o.state_conv);
            nj["cells"].push_back(std::move(cj));
        }
        nj["W_head"] = matrix_to_json(net.W_head.transpose());
        nj["b_head"] = net.b_head;
        nj["state_rows"] = net.state_rows;
        nj["state_cols"] = net.state_cols;
        j["nets"].push_back(std::move(nj));
    }
    return j;
}

inline QconvlstmModel qconvlstm_from_json(const nlohmann::json& j) {
    QconvlstmModel m;
    m.window = j.at("window").get<int>();
    m.r = j.at("r").get<int>();
    m.lambda = j.at("lambda").get<double>();
    m.frame_mean = j.at("frame_mean").get<double>();
    m.frame_std = j.at("frame_std").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& nj : j.at("nets")) {
        ConvLstmNetwork net;
        for (const auto& cj : nj.at("cells")) {
            ConvLstmCellParams c;
            c.a = {filter_bank_from_json(cj.at("a_in")), filter_bank_from_json(cj.at("a_st"))};
            c.b = {filter_bank_from_json(cj.at("b_in")), filter_bank_from_json(cj.at("b_st"))};
            c.c = {filter_bank_from_json(cj.at("c_in")), filter_bank_from_json(cj.at("c_st"))};
            c.o = {filter_bank_from_json(cj.at("o_in")), filter_bank_from_json(cj.at("o_st"))};
            net.cells.push_back(std::move(c));
        }
        net.W_head = matrix_from_json(nj.at("W_head")).col(0).transpose();
        net.b_head = nj.at("b_head").get<double>();
        net.state_rows = nj.at("state_rows").get<Eigen::Index>();
        net.state_cols = nj.at("state_cols").get<Eigen::Index>();
        m.nets.emplace(nj.at("tau").get<double>(), std::move(net));
    }
    return m;
}

}  // namespace stq
