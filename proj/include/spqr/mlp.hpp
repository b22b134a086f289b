// Minimal fully-connected networks with exact reverse-mode gradients and a
// bias-corrected adaptive-moment optimizer. Batches are row-major: x is
// |B| x in_dim, layer weights are out x in, outputs |B| x out_dim. Hidden
// layers use relu or tanh, the output layer is identity.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace spqr {

enum class Activation { relu, tanh };

struct MlpParams {
    std::vector<int> layer_sizes; // input, hidden..., output
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
    Activation activation = Activation::relu;
};

// Glorot-uniform weights, zero biases, deterministic per seed.
MlpParams mlp_init(const std::vector<int>& layer_sizes, Activation activation,
                   std::uint64_t seed);

struct MlpCache {
    std::vector<Eigen::MatrixXd> inputs;   // input to each affine layer
    std::vector<Eigen::MatrixXd> pre_acts; // affine outputs before activation
};

Eigen::MatrixXd mlp_forward(const MlpParams& params, const Eigen::MatrixXd& x,
                            MlpCache* cache = nullptr);

struct MlpGrads {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
};

MlpGrads mlp_zero_grads(const MlpParams& params);
void mlp_accumulate(MlpGrads& into, const MlpGrads& grads);

// Exact reverse-mode gradients; the relu subgradient at 0 is 0. Pass
// dL_dinput to also receive the gradient with respect to the batch input.
MlpGrads mlp_backward(const MlpParams& params, const MlpCache& cache,
                      const Eigen::MatrixXd& dL_doutput,
                      Eigen::MatrixXd* dL_dinput = nullptr);

struct AdamState {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    std::vector<Eigen::MatrixXd> m_w, v_w;
    std::vector<Eigen::VectorXd> m_b, v_b;
};

AdamState adam_init(const MlpParams& params, double lr);

// Standard bias-corrected update. Throws std::runtime_error on non-finite
// gradient entries so trainers can abort with diagnostics.
void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state);

// Checkpoint I/O: one JSON object per network with layer sizes, activation
// name, and row-major weight/bias arrays.
void save_mlp_json(const std::filesystem::path& path, const MlpParams& params);
MlpParams load_mlp_json(const std::filesystem::path& path);

} // namespace spqr
