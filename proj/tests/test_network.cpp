#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ltlab/grad_check.hpp"
#include "ltlab/losses.hpp"
#include "ltlab/network.hpp"

using namespace ltlab;

namespace {

double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-6});
}

// Straight-line reimplementation of the MLP train-mode forward pass, written
// without any of the layer plumbing.
Matrix naive_mlp_logits(Network& net, const Matrix& x) {
    Matrix h = x;
    for (const MlpBlock& block : net.mlp_blocks) {
        const std::size_t n = h.rows();
        const std::size_t out = block.linear.out_dim();
        Matrix z(n, out);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t o = 0; o < out; ++o) {
                double s = block.linear.bias.empty() ? 0.0 : block.linear.bias[o];
                for (std::size_t j = 0; j < h.cols(); ++j)
                    s += h(i, j) * block.linear.weight(o, j);
                z(i, o) = s;
            }
        for (std::size_t o = 0; o < out; ++o) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += z(i, o);
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                var += (z(i, o) - mean) * (z(i, o) - mean);
            var /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double xh = (z(i, o) - mean) / std::sqrt(var + block.bn.eps);
                double v = block.bn.gamma[o] * xh + block.bn.beta[o];
                z(i, o) = v > 0.0 ? v : 0.0;
            }
        }
        h = z;
    }
    Matrix logits(h.rows(), net.head.out_dim());
    for (std::size_t i = 0; i < h.rows(); ++i)
        for (std::size_t o = 0; o < net.head.out_dim(); ++o) {
            double s = net.head.bias.empty() ? 0.0 : net.head.bias[o];
            for (std::size_t j = 0; j < h.cols(); ++j)
                s += h(i, j) * net.head.weight(o, j);
            logits(i, o) = s;
        }
    return logits;
}

NetSpec small_spec(Arch arch, std::size_t blocks) {
    NetSpec spec;
    spec.input_dim = 5;
    spec.width = 6;
    spec.blocks = blocks;
    spec.classes = 3;
    spec.arch = arch;
    return spec;
}

// Max relative error between the analytic gradients of CE(+WD+FR) and
// central finite differences over every parameter.
double max_gradcheck_error(Network& net, const Matrix& x, const std::vector<int>& y,
                           BnMode mode, double lambda, double zeta) {
    ForwardResult fwd = forward(net, x, mode);
    LossResult loss = ce_loss(fwd.logits, y);
    Matrix extra;
    const Matrix* extra_ptr = nullptr;
    if (zeta > 0.0) {
        FrResult fr = fr_penalty(fwd.features, zeta);
        extra = std::move(fr.dfeatures);
        extra_ptr = &extra;
    }
    Gradients grads = backward(net, fwd.cache, loss.dlogits, extra_ptr);
    auto params = net.params();
    if (lambda > 0.0) wd_penalty(params, lambda, WdSubset::All, &grads.by_param);

    auto objective = [&]() {
        ForwardResult f = forward(net, x, mode);
        double v = ce_loss(f.logits, y).value;
        if (zeta > 0.0) v += fr_penalty(f.features, zeta).value;
        if (lambda > 0.0) v += wd_penalty(net.params(), lambda, WdSubset::All, nullptr);
        return v;
    };

    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t i = 0; i < params[p].data->size(); ++i) {
            double& entry = (*params[p].data)[i];
            const double orig = entry;
            entry = orig + h;
            const double fp = objective();
            entry = orig - h;
            const double fm = objective();
            entry = orig;
            const double fd = (fp - fm) / (2.0 * h);
            worst = std::max(worst, rel_err(grads.by_param[p][i], fd));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("identity zero-block network passes input through") {
    NetSpec spec;
    spec.input_dim = 3;
    spec.width = 3;
    spec.blocks = 0;
    spec.classes = 3;
    RngStream rng(1);
    Network net = init_network(spec, rng);
    net.head.weight = Matrix::identity(3);

    RngStream data_rng(2);
    Matrix x = sample_gaussian(data_rng, 4, 3, 0.0, 1.0);
    ForwardResult fwd = forward(net, x, BnMode::Eval);
    CHECK(fwd.logits == x);
    CHECK(fwd.features == x);
}

TEST_CASE("gamma = 0 collapses features to a constant row") {
    RngStream rng(3);
    Network net = init_network(small_spec(Arch::Mlp, 2), rng);
    for (MlpBlock& block : net.mlp_blocks)
        block.bn.gamma.assign(block.bn.gamma.size(), 0.0);

    RngStream data_rng(4);
    Matrix x = sample_gaussian(data_rng, 5, 5, 0.0, 1.0);
    ForwardResult fwd = forward(net, x, BnMode::Train);
    for (std::size_t i = 1; i < fwd.features.rows(); ++i)
        for (std::size_t j = 0; j < fwd.features.cols(); ++j)
            CHECK(fwd.features(i, j) == fwd.features(0, j));
    for (std::size_t i = 1; i < fwd.logits.rows(); ++i)
        for (std::size_t j = 0; j < fwd.logits.cols(); ++j)
            CHECK(fwd.logits(i, j) == fwd.logits(0, j));
}

TEST_CASE("forward matches an independent straight-line reimplementation") {
    RngStream rng(42);
    Network net = init_network(small_spec(Arch::Mlp, 2), rng);
    RngStream data_rng(43);
    Matrix x = sample_gaussian(data_rng, 6, 5, 0.0, 1.0);

    const Matrix naive = naive_mlp_logits(net, x);
    ForwardResult fwd = forward(net, x, BnMode::Train);
    REQUIRE(naive.rows() == fwd.logits.rows());
    for (std::size_t i = 0; i < naive.size(); ++i)
        CHECK(fwd.logits.raw()[i] ==
              doctest::Approx(naive.raw()[i]).epsilon(1e-12));
}

TEST_CASE("backward with zero dlogits returns zero gradients") {
    RngStream rng(5);
    Network net = init_network(small_spec(Arch::Mlp, 1), rng);
    RngStream data_rng(6);
    Matrix x = sample_gaussian(data_rng, 4, 5, 0.0, 1.0);
    ForwardResult fwd = forward(net, x, BnMode::Train);
    Gradients grads = backward(net, fwd.cache, Matrix(4, 3, 0.0));
    for (const auto& g : grads.by_param)
        for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("single linear layer CE gradient matches the closed form") {
    NetSpec spec;
    spec.input_dim = 4;
    spec.width = 4;
    spec.blocks = 0;
    spec.classes = 3;
    RngStream rng(7);
    Network net = init_network(spec, rng);
    RngStream data_rng(8);
    Matrix x = sample_gaussian(data_rng, 5, 4, 0.0, 1.0);
    std::vector<int> y = {0, 1, 2, 1, 0};

    ForwardResult fwd = forward(net, x, BnMode::Eval);
    LossResult loss = ce_loss(fwd.logits, y);
    Gradients grads = backward(net, fwd.cache, loss.dlogits);

    // (softmax - onehot)^T X / N, assembled in plain loops.
    const std::size_t n = 5, c = 3, d = 4;
    Matrix expected(c, d);
    for (std::size_t i = 0; i < n; ++i) {
        double denom = 0.0;
        std::vector<double> p(c);
        double max_logit = fwd.logits(i, 0);
        for (std::size_t j = 1; j < c; ++j)
            max_logit = std::max(max_logit, fwd.logits(i, j));
        for (std::size_t j = 0; j < c; ++j) {
            p[j] = std::exp(fwd.logits(i, j) - max_logit);
            denom += p[j];
        }
        for (std::size_t j = 0; j < c; ++j) {
            const double dz =
                (p[j] / denom - (static_cast<std::size_t>(y[i]) == j ? 1 : 0)) /
                static_cast<double>(n);
            for (std::size_t k = 0; k < d; ++k) expected(j, k) += dz * x(i, k);
        }
    }
    // Head weight is the last parameter.
    const auto& head_grad = grads.by_param.back();
    for (std::size_t i = 0; i < expected.size(); ++i)
        CHECK(head_grad[i] == doctest::Approx(expected.raw()[i]).epsilon(1e-12));
}

TEST_CASE("gradient check: MLP2, train and eval BN modes") {
    RngStream rng(11);
    Network net = init_network(small_spec(Arch::Mlp, 2), rng);
    RngStream data_rng(12);
    Matrix x = sample_gaussian(data_rng, 6, 5, 0.0, 1.0);
    std::vector<int> y = {0, 1, 2, 1, 0, 2};

    CHECK(max_gradcheck_error(net, x, y, BnMode::Train, 0.0, 0.0) < 1e-4);
    // Eval mode: run one train pass first so running stats are non-trivial.
    forward(net, x, BnMode::Train);
    CHECK(max_gradcheck_error(net, x, y, BnMode::Eval, 0.0, 0.0) < 1e-4);
}

TEST_CASE("gradient check: residual net with WD and FR terms, both BN modes") {
    RngStream rng(13);
    Network net = init_network(small_spec(Arch::Residual, 1), rng);
    RngStream data_rng(14);
    Matrix x = sample_gaussian(data_rng, 6, 5, 0.0, 1.0);
    std::vector<int> y = {2, 1, 0, 1, 2, 0};

    CHECK(max_gradcheck_error(net, x, y, BnMode::Train, 0.01, 0.05) < 1e-4);
    forward(net, x, BnMode::Train);  // make running stats non-trivial
    CHECK(max_gradcheck_error(net, x, y, BnMode::Eval, 0.01, 0.05) < 1e-4);
}

TEST_CASE("eval forward is batch-size independent") {
    RngStream rng(15);
    Network net = init_network(small_spec(Arch::Mlp, 2), rng);
    RngStream data_rng(16);
    Matrix x = sample_gaussian(data_rng, 8, 5, 0.0, 1.0);
    forward(net, x, BnMode::Train);  // populate running stats

    const Matrix all_features = eval_features(net, x);
    // The same sample alone in a batch yields identical features.
    for (std::size_t i = 0; i < 8; ++i) {
        Matrix single(1, 5);
        for (std::size_t j = 0; j < 5; ++j) single(0, j) = x(i, j);
        const Matrix f = eval_features(net, single);
        for (std::size_t j = 0; j < all_features.cols(); ++j)
            CHECK(f(0, j) == doctest::Approx(all_features(i, j)).epsilon(1e-12));
    }
}

TEST_CASE("residual block with zero inner path reproduces its input") {
    RngStream rng(17);
    Network net = init_network(small_spec(Arch::Residual, 1), rng);
    ResidualBlock& block = net.residual_blocks[0];
    for (double& v : block.linear2.weight.raw()) v = 0.0;
    block.linear2.bias.assign(block.linear2.bias.size(), 0.0);

    RngStream data_rng(18);
    Matrix x = sample_gaussian(data_rng, 4, 5, 0.0, 1.0);
    // Entry-block output is the residual stack input; with the second inner
    // linear zeroed, bn2 emits beta = 0 and the skip path carries it.
    const std::size_t entry_end = 4;  // sub-layers of the entry block
    const Matrix entry_out = extract_intermediate(net, x, entry_end, BnMode::Eval);
    const Matrix features = eval_features(net, x);
    REQUIRE(entry_out.rows() == features.rows());
    for (std::size_t i = 0; i < entry_out.size(); ++i)
        CHECK(features.raw()[i] == entry_out.raw()[i]);
}

TEST_CASE("extract_intermediate endpoints and BN normalization stats") {
    RngStream rng(19);
    Network net = init_network(small_spec(Arch::Mlp, 2), rng);
    RngStream data_rng(20);
    Matrix x = sample_gaussian(data_rng, 16, 5, 0.0, 1.0);

    CHECK(extract_intermediate(net, x, 0, BnMode::Eval) == x);

    forward(net, x, BnMode::Train);
    const Matrix last =
        extract_intermediate(net, x, sub_layer_count(net), BnMode::Eval);
    CHECK(last == eval_features(net, x));

    // BN-normalize output in train mode: column mean 0, variance 1.
    const Matrix normalized = extract_intermediate(net, x, 2, BnMode::Train);
    for (std::size_t j = 0; j < normalized.cols(); ++j) {
        double mean = 0.0, var = 0.0;
        for (std::size_t i = 0; i < normalized.rows(); ++i) mean += normalized(i, j);
        mean /= static_cast<double>(normalized.rows());
        for (std::size_t i = 0; i < normalized.rows(); ++i)
            var += (normalized(i, j) - mean) * (normalized(i, j) - mean);
        var /= static_cast<double>(normalized.rows());
        CHECK(std::fabs(mean) < 1e-9);
        CHECK(std::fabs(var - 1.0) < 1e-3);  // eps skews variance slightly
    }

    CHECK_THROWS_AS(extract_intermediate(net, x, 99, BnMode::Eval), DimensionError);
    CHECK(sub_layer_names(net).size() == sub_layer_count(net) + 1);
}

TEST_CASE("init: distribution, determinism, gamma ones") {
    NetSpec spec;
    spec.input_dim = 100;
    spec.width = 100;
    spec.blocks = 1;
    spec.classes = 10;
    RngStream a(21), b(21);
    Network n1 = init_network(spec, a);
    Network n2 = init_network(spec, b);
    CHECK(n1.mlp_blocks[0].linear.weight == n2.mlp_blocks[0].linear.weight);
    CHECK(n1.head.weight == n2.head.weight);

    for (double g : n1.mlp_blocks[0].bn.gamma) CHECK(g == 1.0);
    for (double bta : n1.mlp_blocks[0].bn.beta) CHECK(bta == 0.0);
    for (double bias : n1.mlp_blocks[0].linear.bias) CHECK(bias == 0.0);

    // Uniform(-1/sqrt(fan_in), +) sample mean within 4 sigma / sqrt(n).
    const double bound = 1.0 / std::sqrt(100.0);
    double sum = 0.0;
    const auto& w = n1.mlp_blocks[0].linear.weight.raw();
    for (double v : w) {
        CHECK(std::fabs(v) <= bound);
        sum += v;
    }
    const double mean = sum / static_cast<double>(w.size());
    const double sigma = 2.0 * bound / std::sqrt(12.0);
    CHECK(std::fabs(mean) < 4.0 * sigma / std::sqrt(static_cast<double>(w.size())));
}

TEST_CASE("stale cache and batch-size-1 guards") {
    RngStream rng(23);
    Network net = init_network(small_spec(Arch::Mlp, 1), rng);
    RngStream data_rng(24);
    Matrix x = sample_gaussian(data_rng, 4, 5, 0.0, 1.0);

    ForwardResult old = forward(net, x, BnMode::Train);
    forward(net, x, BnMode::Train);  // running stats moved on
    CHECK_THROWS_AS(backward(net, old.cache, Matrix(4, 3, 0.0)), DimensionError);

    Matrix one(1, 5, 0.5);
    CHECK_THROWS_AS(forward(net, one, BnMode::Train), DimensionError);
    CHECK_NOTHROW(forward(net, one, BnMode::Eval));
}

TEST_CASE("checkpoint round trip preserves parameters and behavior") {
    const auto dir = std::filesystem::temp_directory_path() / "ltlab_net_test";
    std::filesystem::create_directories(dir);

    RngStream rng(25);
    Network net = init_network(small_spec(Arch::Residual, 2), rng);
    RngStream data_rng(26);
    Matrix x = sample_gaussian(data_rng, 6, 5, 0.0, 1.0);
    forward(net, x, BnMode::Train);  // non-trivial running stats
    net.mlp_blocks[0].bn.fix_gamma(0.05);

    save_checkpoint((dir / "net").string(), net);
    Network back = load_checkpoint((dir / "net").string());
    CHECK(back.spec.blocks == net.spec.blocks);
    CHECK(back.mlp_blocks[0].bn.gamma == net.mlp_blocks[0].bn.gamma);
    CHECK(back.mlp_blocks[0].bn.gamma_fixed == net.mlp_blocks[0].bn.gamma_fixed);
    CHECK(back.residual_blocks[1].linear2.weight ==
          net.residual_blocks[1].linear2.weight);
    CHECK(back.residual_blocks[0].bn1.running_var ==
          net.residual_blocks[0].bn1.running_var);
    CHECK(eval_logits(back, x) == eval_logits(net, x));
}
