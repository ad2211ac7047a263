#include "doctest.h"
#include "stq/nn.hpp"
#include "stq/quantile.hpp"

#include <random>

using namespace stq;

namespace {

// scalar loss of a net under squared error, for finite differencing
double net_loss(const DenseNet& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    const Eigen::MatrixXd out = forward(net, x).output;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < out.cols(); ++i) {
        const double e = out(0, i) - y[i];
        loss += e * e;
    }
    return loss / static_cast<double>(out.cols());
}

DenseNet random_net(const std::vector<int>& sizes, Eigen::Index in, std::uint64_t seed,
                    const std::vector<Activation>& acts) {
    DenseNet net = make_dense_net(in, sizes, seed);
    for (std::size_t l = 0; l < net.layers.size(); ++l) net.layers[l].act = acts[l];
    // random biases so relu kinks move off zero
    std::mt19937_64 rng(seed + 42);
    std::normal_distribution<double> dist(0.0, 0.3);
    for (auto& layer : net.layers)
        for (Eigen::Index i = 0; i < layer.b.size(); ++i) layer.b[i] = dist(rng);
    return net;
}

}  // namespace

TEST_CASE("forward basics") {
    DenseNet net;
    DenseLayer l;
    l.W = Eigen::MatrixXd::Identity(3, 3);
    l.b = Eigen::VectorXd::Zero(3);
    l.act = Activation::Identity;
    net.layers.push_back(l);
    Eigen::VectorXd x(3);
    x << 1.0, -2.0, 0.5;
    CHECK(forward(net, x).output.col(0).isApprox(x));

    Eigen::MatrixXd z(1, 2);
    z << -1.0, 2.0;
    Eigen::MatrixXd r = apply_activation(Activation::Relu, z);
    CHECK(r(0, 0) == 0.0);
    CHECK(r(0, 1) == 2.0);
    Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 1);
    CHECK(apply_activation(Activation::Sigmoid, zero)(0, 0) == doctest::Approx(0.5));
    CHECK(apply_activation(Activation::Tanh, zero)(0, 0) == doctest::Approx(0.0));

    Eigen::VectorXd bad(2);
    CHECK_THROWS_AS(forward(net, bad), std::invalid_argument);
}

TEST_CASE("backward matches central finite differences") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> dist(0.0, 1.0);
    const std::vector<std::vector<Activation>> act_sets = {
        {Activation::Relu, Activation::Identity},
        {Activation::Tanh, Activation::Identity},
        {Activation::Sigmoid, Activation::Tanh, Activation::Identity},
    };
    int checked = 0;
    for (std::size_t cfg = 0; cfg < act_sets.size(); ++cfg) {
        const auto& acts = act_sets[cfg];
        std::vector<int> sizes;
        for (std::size_t i = 0; i + 1 < acts.size(); ++i) sizes.push_back(4);
        sizes.push_back(1);
        DenseNet net = random_net(sizes, 3, 100 + cfg, acts);

        Eigen::MatrixXd x(3, 5);
        Eigen::VectorXd y(5);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = dist(rng);
        for (Eigen::Index i = 0; i < 5; ++i) y[i] = dist(rng);

        ForwardCache cache = forward(net, x);
        Eigen::MatrixXd og(1, 5);
        for (Eigen::Index i = 0; i < 5; ++i)
            og(0, i) = 2.0 * (cache.output(0, i) - y[i]) / 5.0;
        Gradients g = backward(net, cache, og);

        const double eps = 1e-5;
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            auto& W = net.layers[l].W;
            for (Eigen::Index i = 0; i < W.rows(); ++i) {
                for (Eigen::Index j = 0; j < W.cols(); ++j) {
                    const double orig = W(i, j);
                    W(i, j) = orig + eps;
                    const double up = net_loss(net, x, y);
                    W(i, j) = orig - eps;
                    const double dn = net_loss(net, x, y);
                    W(i, j) = orig;
                    const double num = (up - dn) / (2.0 * eps);
                    const double ana = g.dW[l](i, j);
                    const double scale = std::max({std::abs(num), std::abs(ana), 1e-6});
                    CHECK(std::abs(num - ana) / scale < 1e-4);
                    ++checked;
                }
            }
            auto& b = net.layers[l].b;
            for (Eigen::Index i = 0; i < b.size(); ++i) {
                const double orig = b[i];
                b[i] = orig + eps;
                const double up = net_loss(net, x, y);
                b[i] = orig - eps;
                const double dn = net_loss(net, x, y);
                b[i] = orig;
                const double num = (up - dn) / (2.0 * eps);
                const double scale = std::max({std::abs(num), std::abs(g.db[l][i]), 1e-6});
                CHECK(std::abs(num - g.db[l][i]) / scale < 1e-4);
            }
        }
    }
    CHECK(checked > 50);
}

TEST_CASE("zero output gradient gives zero parameter gradients") {
    DenseNet net = make_dense_net(4, {5, 1}, 9);
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 3);
    ForwardCache cache = forward(net, x);
    Gradients g = backward(net, cache, Eigen::MatrixXd::Zero(1, 3));
    for (const auto& dW : g.dW) CHECK(dW.norm() == 0.0);
    for (const auto& db : g.db) CHECK(db.norm() == 0.0);
}

TEST_CASE("single linear layer closed-form gradient") {
    DenseNet net;
    DenseLayer l;
    l.W = Eigen::MatrixXd::Random(1, 3);
    l.b = Eigen::VectorXd::Random(1);
    l.act = Activation::Identity;
    net.layers.push_back(l);

    Eigen::VectorXd x = Eigen::VectorXd::Random(3);
    const double y = 0.7;
    ForwardCache cache = forward(net, x);
    const double pred = cache.output(0, 0);
    Eigen::MatrixXd og(1, 1);
    og(0, 0) = 2.0 * (pred - y);
    Gradients g = backward(net, cache, og);
    Eigen::MatrixXd expect = 2.0 * (pred - y) * x.transpose();
    CHECK(g.dW[0].isApprox(expect, 1e-12));
    CHECK(g.db[0][0] == doctest::Approx(2.0 * (pred - y)));
}

TEST_CASE("sgd step arithmetic") {
    DenseNet net;
    DenseLayer l;
    l.W = Eigen::MatrixXd::Constant(1, 1, 1.0);
    l.b = Eigen::VectorXd::Zero(1);
    l.act = Activation::Identity;
    net.layers.push_back(l);

    Gradients g;
    g.dW = {Eigen::MatrixXd::Constant(1, 1, 2.0)};
    g.db = {Eigen::VectorXd::Zero(1)};

    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    sgd_step(net, g, cfg);
    CHECK(net.layers[0].W(0, 0) == doctest::Approx(0.8));

    // lr=0 leaves the net untouched (validated lr must be > 0, so emulate
    // by zero gradient)
    DenseNet before = net;
    Gradients zg;
    zg.dW = {Eigen::MatrixXd::Zero(1, 1)};
    zg.db = {Eigen::VectorXd::Zero(1)};
    sgd_step(net, zg, cfg);
    CHECK(net.layers[0].W(0, 0) == before.layers[0].W(0, 0));
}

TEST_CASE("l2 decay shrinks weights geometrically with zero data gradient") {
    DenseNet net;
    DenseLayer l;
    l.W = Eigen::MatrixXd::Constant(1, 1, 1.0);
    l.b = Eigen::VectorXd::Zero(1);
    l.act = Activation::Identity;
    net.layers.push_back(l);

    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.l2 = 0.5;
    cfg.l1l2_layers = {0};
    Gradients zg;
    zg.dW = {Eigen::MatrixXd::Zero(1, 1)};
    zg.db = {Eigen::VectorXd::Zero(1)};

    double prev = 1.0;
    for (int i = 0; i < 10; ++i) {
        sgd_step(net, zg, cfg);
        const double cur = net.layers[0].W(0, 0);
        CHECK(cur == doctest::Approx(prev * 0.9));  // w <- w - 0.1*2*0.5*w
        prev = cur;
    }
}

TEST_CASE("init_weights determinism and scale") {
    auto a = init_weights(10, 10, 123);
    auto b = init_weights(10, 10, 123);
    CHECK(a == b);
    auto c = init_weights(10, 10, 124);
    CHECK(a != c);

    // CLT bound: mean of 10^4 N(0, sigma^2) samples within 5 sigma/sqrt(n)
    auto big = init_weights(100, 100, 5);
    const double sigma = std::sqrt(2.0 / 100.0);
    CHECK(std::abs(big.mean()) < 5.0 * sigma / 100.0);
    const double sd = std::sqrt(big.array().square().mean());
    CHECK(sd == doctest::Approx(sigma).epsilon(0.05));
}

TEST_CASE("checkpoint round trip") {
    DenseNet net = make_dense_net(4, {6, 3, 1}, 77);
    auto j = net_to_json(net);
    DenseNet back = net_from_json(j);
    REQUIRE(back.layers.size() == net.layers.size());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        CHECK(back.layers[l].W == net.layers[l].W);
        CHECK(back.layers[l].b == net.layers[l].b);
        CHECK(back.layers[l].act == net.layers[l].act);
    }
}

TEST_CASE("training drives down loss on a solvable toy problem") {
    // linear target y = 2*x1 - x2 + 0.5
    std::mt19937_64 rng(31);
    std::normal_distribution<double> dist(0.0, 1.0);
    const int n = 256;
    Eigen::MatrixXd x(2, n);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        x(0, i) = dist(rng);
        x(1, i) = dist(rng);
        y[i] = 2.0 * x(0, i) - x(1, i) + 0.5;
    }
    DenseNet net = make_dense_net(2, {8, 1}, 3);

    auto sq_loss = [&]() {
        const Eigen::MatrixXd out = forward(net, x).output;
        return (out.row(0).transpose() - y).squaredNorm() / n;
    };
    const double initial = sq_loss();

    TrainConfig cfg;
    cfg.learning_rate = 0.02;
    for (int epoch = 0; epoch < 200; ++epoch) {
        ForwardCache cache = forward(net, x);
        Eigen::MatrixXd og(1, n);
        for (int i = 0; i < n; ++i) og(0, i) = 2.0 * (cache.output(0, i) - y[i]) / n;
        sgd_step(net, backward(net, cache, og), cfg);
    }
    CHECK(sq_loss() < 0.1 * initial);
}
