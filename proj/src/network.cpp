#include "ltlab/network.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "ltlab/matrix_io.hpp"

namespace ltlab {

void BatchNormLayer::fix_gamma(double value) {
    gamma.assign(gamma.size(), value);
    gamma_fixed = value;
    gamma_trainable = false;
}

namespace {

Matrix linear_forward(const LinearLayer& layer, const Matrix& x) {
    Matrix y = matmul(x, layer.weight.transposed());
    if (layer.has_bias()) {
        for (std::size_t i = 0; i < y.rows(); ++i)
            for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += layer.bias[j];
    }
    return y;
}

/// Train mode: batch statistics (biased variance for normalization,
/// unbiased for the running update). Eval mode: running statistics.
Matrix bn_forward(BatchNormLayer& bn, const Matrix& x, BnMode mode, BnCache& cache,
                  bool update_running) {
    const std::size_t n = x.rows(), d = x.cols();
    cache.inv_std.resize(d);
    cache.x_hat = Matrix(n, d);
    Matrix y(n, d);
    if (mode == BnMode::Train) {
        if (n < 2) {
            throw DimensionError("batch norm: train mode needs batch size >= 2");
        }
        for (std::size_t j = 0; j < d; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += x(i, j);
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double c = x(i, j) - mean;
                var += c * c;
            }
            var /= static_cast<double>(n);
            const double inv_std = 1.0 / std::sqrt(var + bn.eps);
            cache.inv_std[j] = inv_std;
            for (std::size_t i = 0; i < n; ++i) {
                const double xh = (x(i, j) - mean) * inv_std;
                cache.x_hat(i, j) = xh;
                y(i, j) = bn.gamma[j] * xh + bn.beta[j];
            }
            if (update_running) {
                const double unbiased =
                    var * static_cast<double>(n) / static_cast<double>(n - 1);
                bn.running_mean[j] =
                    (1.0 - bn.momentum) * bn.running_mean[j] + bn.momentum * mean;
                bn.running_var[j] =
                    (1.0 - bn.momentum) * bn.running_var[j] + bn.momentum * unbiased;
            }
        }
    } else {
        for (std::size_t j = 0; j < d; ++j) {
            const double inv_std = 1.0 / std::sqrt(bn.running_var[j] + bn.eps);
            cache.inv_std[j] = inv_std;
            for (std::size_t i = 0; i < n; ++i) {
                const double xh = (x(i, j) - bn.running_mean[j]) * inv_std;
                cache.x_hat(i, j) = xh;
                y(i, j) = bn.gamma[j] * xh + bn.beta[j];
            }
        }
    }
    return y;
}

Matrix relu(const Matrix& x) {
    Matrix y = x;
    for (double& v : y.raw())
        if (v < 0.0) v = 0.0;
    return y;
}

/// dL/dx of y = relu(x) given dL/dy; the subgradient at 0 is 0.
Matrix relu_backward(const Matrix& pre, const Matrix& dy) {
    Matrix dx = dy;
    for (std::size_t i = 0; i < pre.size(); ++i)
        if (pre.raw()[i] <= 0.0) dx.raw()[i] = 0.0;
    return dx;
}

struct BnGrads {
    std::vector<double> dgamma;
    std::vector<double> dbeta;
    Matrix dx;
};

BnGrads bn_backward(const BatchNormLayer& bn, const BnCache& cache, const Matrix& dy,
                    BnMode mode) {
    const std::size_t n = dy.rows(), d = dy.cols();
    BnGrads g;
    g.dgamma.assign(d, 0.0);
    g.dbeta.assign(d, 0.0);
    g.dx = Matrix(n, d);
    for (std::size_t j = 0; j < d; ++j) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sum_dy += dy(i, j);
            sum_dy_xhat += dy(i, j) * cache.x_hat(i, j);
        }
        g.dbeta[j] = sum_dy;
        g.dgamma[j] = sum_dy_xhat;
        if (mode == BnMode::Train) {
            // Full batch-statistic term.
            const double scale = bn.gamma[j] * cache.inv_std[j] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                g.dx(i, j) = scale * (static_cast<double>(n) * dy(i, j) - sum_dy -
                                      cache.x_hat(i, j) * sum_dy_xhat);
            }
        } else {
            // Running statistics are constants.
            const double scale = bn.gamma[j] * cache.inv_std[j];
            for (std::size_t i = 0; i < n; ++i) g.dx(i, j) = scale * dy(i, j);
        }
    }
    return g;
}

struct LinearGrads {
    Matrix dweight;
    std::vector<double> dbias;
    Matrix dx;
};

LinearGrads linear_backward(const LinearLayer& layer, const Matrix& input,
                            const Matrix& dy) {
    LinearGrads g;
    g.dweight = matmul(dy.transposed(), input);
    if (layer.has_bias()) {
        g.dbias.assign(layer.bias.size(), 0.0);
        for (std::size_t i = 0; i < dy.rows(); ++i)
            for (std::size_t j = 0; j < dy.cols(); ++j) g.dbias[j] += dy(i, j);
    }
    g.dx = matmul(dy, layer.weight);
    return g;
}

LinearLayer make_linear(std::size_t out, std::size_t in, bool with_bias,
                        RngStream& rng) {
    LinearLayer layer;
    layer.weight = Matrix(out, in);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : layer.weight.raw()) v = rng.uniform(-bound, bound);
    if (with_bias) layer.bias.assign(out, 0.0);
    return layer;
}

BatchNormLayer make_bn(std::size_t dim) {
    BatchNormLayer bn;
    bn.gamma.assign(dim, 1.0);
    bn.beta.assign(dim, 0.0);
    bn.running_mean.assign(dim, 0.0);
    bn.running_var.assign(dim, 1.0);
    return bn;
}

}  // namespace

std::vector<ParamView> Network::params() {
    std::vector<ParamView> out;
    auto add_linear = [&](LinearLayer& l, const std::string& name, bool is_head) {
        out.push_back({name + ".weight", ParamKind::LinearWeight, &l.weight.raw(),
                       l.trainable, is_head});
        if (l.has_bias()) {
            out.push_back(
                {name + ".bias", ParamKind::LinearBias, &l.bias, l.trainable, is_head});
        }
    };
    auto add_bn = [&](BatchNormLayer& bn, const std::string& name) {
        out.push_back(
            {name + ".gamma", ParamKind::BnGamma, &bn.gamma, bn.gamma_trainable, false});
        out.push_back(
            {name + ".beta", ParamKind::BnBeta, &bn.beta, bn.beta_trainable, false});
    };
    for (std::size_t b = 0; b < mlp_blocks.size(); ++b) {
        const std::string prefix = "block" + std::to_string(b);
        add_linear(mlp_blocks[b].linear, prefix + ".linear", false);
        add_bn(mlp_blocks[b].bn, prefix + ".bn");
    }
    for (std::size_t b = 0; b < residual_blocks.size(); ++b) {
        const std::string prefix = "res" + std::to_string(b);
        add_linear(residual_blocks[b].linear1, prefix + ".linear1", false);
        add_bn(residual_blocks[b].bn1, prefix + ".bn1");
        add_linear(residual_blocks[b].linear2, prefix + ".linear2", false);
        add_bn(residual_blocks[b].bn2, prefix + ".bn2");
    }
    add_linear(head, "head", true);
    return out;
}

Network init_network(const NetSpec& spec, RngStream& rng) {
    if (spec.input_dim == 0 || spec.classes == 0) {
        throw DimensionError("init_network: zero dimension");
    }
    if (spec.blocks > 0 && spec.width == 0) {
        throw DimensionError("init_network: zero width");
    }
    Network net;
    net.spec = spec;
    if (spec.arch == Arch::Mlp) {
        std::size_t in = spec.input_dim;
        for (std::size_t b = 0; b < spec.blocks; ++b) {
            MlpBlock block;
            block.linear = make_linear(spec.width, in, true, rng);
            block.bn = make_bn(spec.width);
            net.mlp_blocks.push_back(std::move(block));
            in = spec.width;
        }
    } else {
        if (spec.blocks > 0) {
            // Entry MLP block feeds the residual stack.
            MlpBlock entry;
            entry.linear = make_linear(spec.width, spec.input_dim, true, rng);
            entry.bn = make_bn(spec.width);
            net.mlp_blocks.push_back(std::move(entry));
            for (std::size_t b = 0; b < spec.blocks; ++b) {
                ResidualBlock block;
                block.linear1 = make_linear(spec.width, spec.width, true, rng);
                block.bn1 = make_bn(spec.width);
                block.linear2 = make_linear(spec.width, spec.width, true, rng);
                block.bn2 = make_bn(spec.width);
                net.residual_blocks.push_back(std::move(block));
            }
        }
    }
    net.head = make_linear(spec.classes, net.feature_dim(), spec.head_bias, rng);
    return net;
}

ForwardResult forward(Network& net, const Matrix& x, BnMode mode) {
    if (x.cols() != net.spec.input_dim) {
        throw DimensionError("forward: input dim mismatch");
    }
    const bool update_running = (mode == BnMode::Train);
    if (update_running) net.bump_version();

    ForwardResult result;
    ForwardCache& cache = result.cache;
    cache.mode = mode;
    Matrix h = x;
    for (MlpBlock& block : net.mlp_blocks) {
        BlockCache bc;
        bc.linear_input = h;
        h = linear_forward(block.linear, h);
        h = bn_forward(block.bn, h, mode, bc.bn, update_running);
        bc.relu_input = h;
        h = relu(h);
        cache.blocks.push_back(std::move(bc));
    }
    for (ResidualBlock& block : net.residual_blocks) {
        ResBlockCache rc;
        rc.block_input = h;
        Matrix t = linear_forward(block.linear1, h);
        t = bn_forward(block.bn1, t, mode, rc.bn1, update_running);
        rc.relu1_input = t;
        t = relu(t);
        rc.linear2_input = t;
        t = linear_forward(block.linear2, t);
        t = bn_forward(block.bn2, t, mode, rc.bn2, update_running);
        t += h;  // skip connection
        rc.relu2_input = t;
        h = relu(t);
        cache.res_blocks.push_back(std::move(rc));
    }
    cache.features = h;
    cache.version = net.version();
    result.features = h;
    result.logits = head_logits(net.head, h);
    return result;
}

Matrix eval_features(const Network& net, const Matrix& x) {
    // Eval mode never mutates, so the const_cast is safe.
    Network& mutable_net = const_cast<Network&>(net);
    return forward(mutable_net, x, BnMode::Eval).features;
}

Matrix eval_logits(const Network& net, const Matrix& x) {
    Network& mutable_net = const_cast<Network&>(net);
    return forward(mutable_net, x, BnMode::Eval).logits;
}

Matrix head_logits(const LinearLayer& head, const Matrix& features) {
    return linear_forward(head, features);
}

HeadGradients head_backward(const LinearLayer& head, const Matrix& features,
                            const Matrix& dlogits) {
    LinearGrads g = linear_backward(head, features, dlogits);
    return {std::move(g.dweight), std::move(g.dbias), std::move(g.dx)};
}

Gradients backward(const Network& net, const ForwardCache& cache,
                   const Matrix& dlogits, const Matrix* extra_dfeatures) {
    if (cache.version != net.version()) {
        throw DimensionError("backward: stale forward cache");
    }
    if (dlogits.rows() != cache.features.rows() ||
        dlogits.cols() != net.head.out_dim()) {
        throw DimensionError("backward: dlogits shape mismatch");
    }

    Gradients grads;
    LinearGrads head_g = linear_backward(net.head, cache.features, dlogits);
    Matrix d = std::move(head_g.dx);
    if (extra_dfeatures != nullptr) d += *extra_dfeatures;
    grads.dfeatures = d;

    // Walk the blocks in reverse, collecting per-layer grads; the parameter
    // ordering of Network::params() is re-assembled at the end.
    std::vector<LinearGrads> mlp_linear(cache.blocks.size());
    std::vector<BnGrads> mlp_bn(cache.blocks.size());
    std::vector<LinearGrads> res_linear1(cache.res_blocks.size()),
        res_linear2(cache.res_blocks.size());
    std::vector<BnGrads> res_bn1(cache.res_blocks.size()),
        res_bn2(cache.res_blocks.size());

    for (std::size_t b = cache.res_blocks.size(); b-- > 0;) {
        const ResidualBlock& block = net.residual_blocks[b];
        const ResBlockCache& rc = cache.res_blocks[b];
        d = relu_backward(rc.relu2_input, d);
        Matrix d_skip = d;  // gradient through the identity path
        res_bn2[b] = bn_backward(block.bn2, rc.bn2, d, cache.mode);
        res_linear2[b] = linear_backward(block.linear2, rc.linear2_input, res_bn2[b].dx);
        Matrix d_inner = relu_backward(rc.relu1_input, res_linear2[b].dx);
        res_bn1[b] = bn_backward(block.bn1, rc.bn1, d_inner, cache.mode);
        res_linear1[b] = linear_backward(block.linear1, rc.block_input, res_bn1[b].dx);
        d = res_linear1[b].dx;
        d += d_skip;
    }
    for (std::size_t b = cache.blocks.size(); b-- > 0;) {
        const MlpBlock& block = net.mlp_blocks[b];
        const BlockCache& bc = cache.blocks[b];
        d = relu_backward(bc.relu_input, d);
        mlp_bn[b] = bn_backward(block.bn, bc.bn, d, cache.mode);
        mlp_linear[b] = linear_backward(block.linear, bc.linear_input, mlp_bn[b].dx);
        d = mlp_linear[b].dx;
    }
    grads.dinput = d;

    auto push_linear = [&](LinearGrads& g, bool has_bias) {
        grads.by_param.push_back(std::move(g.dweight.raw()));
        if (has_bias) grads.by_param.push_back(std::move(g.dbias));
    };
    auto push_bn = [&](BnGrads& g) {
        grads.by_param.push_back(std::move(g.dgamma));
        grads.by_param.push_back(std::move(g.dbeta));
    };
    for (std::size_t b = 0; b < cache.blocks.size(); ++b) {
        push_linear(mlp_linear[b], net.mlp_blocks[b].linear.has_bias());
        push_bn(mlp_bn[b]);
    }
    for (std::size_t b = 0; b < cache.res_blocks.size(); ++b) {
        push_linear(res_linear1[b], net.residual_blocks[b].linear1.has_bias());
        push_bn(res_bn1[b]);
        push_linear(res_linear2[b], net.residual_blocks[b].linear2.has_bias());
        push_bn(res_bn2[b]);
    }
    push_linear(head_g, net.head.has_bias());
    return grads;
}

namespace {

/// One sub-layer step shared by the intermediate-activation walker.
/// Returns outputs after: linear, BN-normalize, BN-affine, ReLU, skip-add.
struct SubLayerWalker {
    const Network& net;
    BnMode mode;
    std::vector<std::string> names;
    std::vector<Matrix> outputs;  // filled when recording
    bool record = false;
    Matrix current;

    void step(const std::string& name, Matrix next) {
        current = std::move(next);
        names.push_back(name);
        if (record) outputs.push_back(current);
    }

    Matrix bn_normalize(const BatchNormLayer& bn, const Matrix& x) const {
        const std::size_t n = x.rows(), d = x.cols();
        Matrix y(n, d);
        for (std::size_t j = 0; j < d; ++j) {
            double mean, var;
            if (mode == BnMode::Train) {
                if (n < 2)
                    throw DimensionError("batch norm: train mode needs batch size >= 2");
                mean = 0.0;
                for (std::size_t i = 0; i < n; ++i) mean += x(i, j);
                mean /= static_cast<double>(n);
                var = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double c = x(i, j) - mean;
                    var += c * c;
                }
                var /= static_cast<double>(n);
            } else {
                mean = bn.running_mean[j];
                var = bn.running_var[j];
            }
            const double inv_std = 1.0 / std::sqrt(var + bn.eps);
            for (std::size_t i = 0; i < n; ++i) y(i, j) = (x(i, j) - mean) * inv_std;
        }
        return y;
    }

    Matrix bn_affine(const BatchNormLayer& bn, const Matrix& x_hat) const {
        Matrix y = x_hat;
        for (std::size_t i = 0; i < y.rows(); ++i)
            for (std::size_t j = 0; j < y.cols(); ++j)
                y(i, j) = bn.gamma[j] * y(i, j) + bn.beta[j];
        return y;
    }

    void walk(const Matrix& x) {
        current = x;
        names.push_back("input");
        if (record) outputs.push_back(current);
        for (std::size_t b = 0; b < net.mlp_blocks.size(); ++b) {
            const MlpBlock& block = net.mlp_blocks[b];
            const std::string p = "block" + std::to_string(b);
            step(p + ".linear", linear_forward(block.linear, current));
            step(p + ".bn_normalize", bn_normalize(block.bn, current));
            step(p + ".bn_affine", bn_affine(block.bn, current));
            step(p + ".relu", relu(current));
        }
        for (std::size_t b = 0; b < net.residual_blocks.size(); ++b) {
            const ResidualBlock& block = net.residual_blocks[b];
            const std::string p = "res" + std::to_string(b);
            Matrix skip = current;
            step(p + ".linear1", linear_forward(block.linear1, current));
            step(p + ".bn1_normalize", bn_normalize(block.bn1, current));
            step(p + ".bn1_affine", bn_affine(block.bn1, current));
            step(p + ".relu1", relu(current));
            step(p + ".linear2", linear_forward(block.linear2, current));
            step(p + ".bn2_normalize", bn_normalize(block.bn2, current));
            step(p + ".bn2_affine", bn_affine(block.bn2, current));
            step(p + ".skip_add", current + skip);
            step(p + ".relu2", relu(current));
        }
    }
};

}  // namespace

std::size_t sub_layer_count(const Network& net) {
    return net.mlp_blocks.size() * 4 + net.residual_blocks.size() * 9;
}

std::vector<std::string> sub_layer_names(const Network& net) {
    SubLayerWalker walker{net, BnMode::Eval, {}, {}, false, {}};
    walker.walk(Matrix(2, net.spec.input_dim));
    return walker.names;
}

Matrix extract_intermediate(const Network& net, const Matrix& x,
                            std::size_t layer_index, BnMode mode) {
    if (layer_index > sub_layer_count(net)) {
        throw DimensionError("extract_intermediate: layer index " +
                             std::to_string(layer_index) + " out of range [0," +
                             std::to_string(sub_layer_count(net)) + "]");
    }
    SubLayerWalker walker{net, mode, {}, {}, true, {}};
    walker.walk(x);
    return walker.outputs[layer_index];
}

namespace {

Matrix vec_as_matrix(const std::vector<double>& v) {
    return Matrix(1, v.size(), v);
}

std::vector<double> matrix_as_vec(const Matrix& m) { return m.raw(); }

}  // namespace

void save_checkpoint(const std::filesystem::path& stem, const Network& net) {
    Network& mutable_net = const_cast<Network&>(net);
    nlohmann::json manifest;
    manifest["format"] = "ltlab-checkpoint-v1";
    manifest["arch"] = net.spec.arch == Arch::Mlp ? "mlp" : "residual";
    manifest["input_dim"] = net.spec.input_dim;
    manifest["width"] = net.spec.width;
    manifest["blocks"] = net.spec.blocks;
    manifest["classes"] = net.spec.classes;
    manifest["head_bias"] = net.spec.head_bias;

    std::ofstream bin(stem.string() + ".ckpt.bin", std::ios::binary);
    if (!bin) throw Error("cannot open " + stem.string() + ".ckpt.bin");
    nlohmann::json records = nlohmann::json::array();

    auto write_record = [&](const std::string& name, const Matrix& m) {
        records.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
        write_matrix(bin, m);
    };
    auto write_linear = [&](const LinearLayer& l, const std::string& name) {
        write_record(name + ".weight", l.weight);
        if (l.has_bias()) write_record(name + ".bias", vec_as_matrix(l.bias));
    };
    auto write_bn = [&](const BatchNormLayer& bn, const std::string& name) {
        write_record(name + ".gamma", vec_as_matrix(bn.gamma));
        write_record(name + ".beta", vec_as_matrix(bn.beta));
        write_record(name + ".running_mean", vec_as_matrix(bn.running_mean));
        write_record(name + ".running_var", vec_as_matrix(bn.running_var));
        if (bn.gamma_fixed) {
            manifest["bn_fixed_gamma"][name] = *bn.gamma_fixed;
        }
    };
    for (std::size_t b = 0; b < net.mlp_blocks.size(); ++b) {
        write_linear(mutable_net.mlp_blocks[b].linear, "block" + std::to_string(b) + ".linear");
        write_bn(mutable_net.mlp_blocks[b].bn, "block" + std::to_string(b) + ".bn");
    }
    for (std::size_t b = 0; b < net.residual_blocks.size(); ++b) {
        const std::string p = "res" + std::to_string(b);
        write_linear(mutable_net.residual_blocks[b].linear1, p + ".linear1");
        write_bn(mutable_net.residual_blocks[b].bn1, p + ".bn1");
        write_linear(mutable_net.residual_blocks[b].linear2, p + ".linear2");
        write_bn(mutable_net.residual_blocks[b].bn2, p + ".bn2");
    }
    write_linear(net.head, "head");
    manifest["records"] = records;

    std::ofstream mf(stem.string() + ".ckpt.json");
    if (!mf) throw Error("cannot open " + stem.string() + ".ckpt.json");
    mf << manifest.dump(2) << "\n";
}

Network load_checkpoint(const std::filesystem::path& stem) {
    std::ifstream mf(stem.string() + ".ckpt.json");
    if (!mf) throw Error("cannot open " + stem.string() + ".ckpt.json");
    nlohmann::json manifest = nlohmann::json::parse(mf);
    if (manifest.value("format", "") != "ltlab-checkpoint-v1") {
        throw FormatError("unknown checkpoint format", 0);
    }
    NetSpec spec;
    spec.arch = manifest.at("arch") == "mlp" ? Arch::Mlp : Arch::Residual;
    spec.input_dim = manifest.at("input_dim").get<std::size_t>();
    spec.width = manifest.at("width").get<std::size_t>();
    spec.blocks = manifest.at("blocks").get<std::size_t>();
    spec.classes = manifest.at("classes").get<std::size_t>();
    spec.head_bias = manifest.at("head_bias").get<bool>();

    RngStream dummy(0);
    Network net = init_network(spec, dummy);

    std::ifstream bin(stem.string() + ".ckpt.bin", std::ios::binary);
    if (!bin) throw Error("cannot open " + stem.string() + ".ckpt.bin");
    auto read_linear = [&](LinearLayer& l) {
        l.weight = read_matrix(bin);
        if (l.has_bias()) l.bias = matrix_as_vec(read_matrix(bin));
    };
    auto read_bn = [&](BatchNormLayer& bn, const std::string& name) {
        bn.gamma = matrix_as_vec(read_matrix(bin));
        bn.beta = matrix_as_vec(read_matrix(bin));
        bn.running_mean = matrix_as_vec(read_matrix(bin));
        bn.running_var = matrix_as_vec(read_matrix(bin));
        if (manifest.contains("bn_fixed_gamma") &&
            manifest["bn_fixed_gamma"].contains(name)) {
            bn.gamma_fixed = manifest["bn_fixed_gamma"][name].get<double>();
            bn.gamma_trainable = false;
        }
    };
    for (std::size_t b = 0; b < net.mlp_blocks.size(); ++b) {
        read_linear(net.mlp_blocks[b].linear);
        read_bn(net.mlp_blocks[b].bn, "block" + std::to_string(b) + ".bn");
    }
    for (std::size_t b = 0; b < net.residual_blocks.size(); ++b) {
        const std::string p = "res" + std::to_string(b);
        read_linear(net.residual_blocks[b].linear1);
        read_bn(net.residual_blocks[b].bn1, p + ".bn1");
        read_linear(net.residual_blocks[b].linear2);
        read_bn(net.residual_blocks[b].bn2, p + ".bn2");
    }
    read_linear(net.head);
    return net;
}

}  // namespace ltlab
