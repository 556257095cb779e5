#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ltlab/matrix.hpp"
#include "ltlab/rng.hpp"

namespace ltlab {

struct LinearLayer {
    Matrix weight;             ///< out x in
    std::vector<double> bias;  ///< empty when the layer has no bias
    bool trainable = true;

    bool has_bias() const { return !bias.empty(); }
    std::size_t out_dim() const { return weight.rows(); }
    std::size_t in_dim() const { return weight.cols(); }
};

struct BatchNormLayer {
    std::vector<double> gamma;
    std::vector<double> beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double eps = 1e-5;
    double momentum = 0.1;
    bool gamma_trainable = true;
    bool beta_trainable = true;
    std::optional<double> gamma_fixed;  ///< set => all gamma equal, not trainable

    std::size_t dim() const { return gamma.size(); }
    void fix_gamma(double value);
};

struct MlpBlock {
    LinearLayer linear;
    BatchNormLayer bn;
    // followed by ReLU
};

/// linear1 -> bn1 -> ReLU -> linear2 -> bn2, skip-add input, ReLU.
struct ResidualBlock {
    LinearLayer linear1;
    BatchNormLayer bn1;
    LinearLayer linear2;
    BatchNormLayer bn2;
};

enum class Arch { Mlp, Residual };

struct NetSpec {
    std::size_t input_dim = 1;
    std::size_t width = 1024;  ///< block width = feature dimension
    std::size_t blocks = 1;    ///< block count (residual blocks exclude the entry block)
    std::size_t classes = 2;
    Arch arch = Arch::Mlp;
    bool head_bias = false;
};

enum class BnMode { Train, Eval };

enum class ParamKind { LinearWeight, LinearBias, BnGamma, BnBeta };

struct ParamView {
    std::string name;
    ParamKind kind;
    std::vector<double>* data;
    bool trainable;
    bool is_head;
};

struct BnCache {
    Matrix x_hat;
    std::vector<double> inv_std;
};

struct BlockCache {
    Matrix linear_input;
    BnCache bn;
    Matrix relu_input;  ///< BN output (pre-activation)
};

struct ResBlockCache {
    Matrix block_input;
    BnCache bn1;
    Matrix relu1_input;
    Matrix linear2_input;
    BnCache bn2;
    Matrix relu2_input;  ///< bn2 output + skip
};

struct ForwardCache {
    BnMode mode = BnMode::Train;
    std::uint64_t version = 0;  ///< network version this cache belongs to
    std::vector<BlockCache> blocks;
    std::vector<ResBlockCache> res_blocks;
    Matrix features;
};

struct ForwardResult {
    Matrix features;  ///< N x d extractor output
    Matrix logits;    ///< N x C
    ForwardCache cache;
};

/// Gradients aligned with Network::params() order, plus the feature and
/// input gradients of the scalar loss.
struct Gradients {
    std::vector<std::vector<double>> by_param;
    Matrix dfeatures;
    Matrix dinput;
};

class Network {
public:
    NetSpec spec;
    std::vector<MlpBlock> mlp_blocks;          ///< Mlp: all blocks; Residual: entry block
    std::vector<ResidualBlock> residual_blocks;
    LinearLayer head;

    std::size_t feature_dim() const {
        return spec.blocks == 0 ? spec.input_dim : spec.width;
    }

    /// All parameters in a stable order (blocks first, head last).
    std::vector<ParamView> params();

    /// Monotonic counter bumped whenever parameters or running statistics
    /// change; caches created under an older version are stale.
    std::uint64_t version() const { return version_; }
    void bump_version() { ++version_; }

    friend ForwardResult forward(Network& net, const Matrix& x, BnMode mode);

private:
    std::uint64_t version_ = 0;
};

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases,
/// gamma = 1, beta = 0.
Network init_network(const NetSpec& spec, RngStream& rng);

/// Train mode uses batch statistics (batch size >= 2 required) and updates
/// running statistics; eval mode is a pure function of the parameters.
ForwardResult forward(Network& net, const Matrix& x, BnMode mode);

/// Eval-mode forward without touching the network.
Matrix eval_features(const Network& net, const Matrix& x);
Matrix eval_logits(const Network& net, const Matrix& x);

/// Exact reverse-mode gradients for the cached forward pass. `dlogits` is
/// the gradient of the scalar loss at the logits; `extra_dfeatures`, when
/// given, is added to the feature gradient before the extractor backward
/// (used for penalties applied directly to features). Throws on a stale
/// cache.
Gradients backward(const Network& net, const ForwardCache& cache,
                   const Matrix& dlogits, const Matrix* extra_dfeatures = nullptr);

/// Head-only reverse mode for a fixed feature matrix: returns (dW, dbias,
/// dfeatures) of the scalar loss with logits = features * W^T + b.
struct HeadGradients {
    Matrix dweight;
    std::vector<double> dbias;
    Matrix dfeatures;
};
HeadGradients head_backward(const LinearLayer& head, const Matrix& features,
                            const Matrix& dlogits);

Matrix head_logits(const LinearLayer& head, const Matrix& features);

/// Number of individually addressable sub-layers (linear / BN-normalize /
/// BN-affine / ReLU / skip-add) in the extractor.
std::size_t sub_layer_count(const Network& net);
std::vector<std::string> sub_layer_names(const Network& net);

/// Activations after sub-layer `layer_index` (0 = the input itself).
/// Train mode uses batch statistics but does not update running stats.
Matrix extract_intermediate(const Network& net, const Matrix& x,
                            std::size_t layer_index, BnMode mode);

/// Checkpoint: <stem>.ckpt.bin holds ordered matrix records,
/// <stem>.ckpt.json the manifest (spec, record names, flags).
void save_checkpoint(const std::filesystem::path& stem, const Network& net);
Network load_checkpoint(const std::filesystem::path& stem);

}  // namespace ltlab
