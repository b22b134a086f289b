#include "spqr/mlp.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "spqr/rng.hpp"

namespace spqr {

namespace {

Eigen::MatrixXd apply_activation(const Eigen::MatrixXd& z, Activation act) {
    if (act == Activation::relu)
        return z.cwiseMax(0.0);
    return z.array().tanh().matrix();
}

Eigen::MatrixXd activation_derivative(const Eigen::MatrixXd& z, Activation act) {
    if (act == Activation::relu)
        return (z.array() > 0.0).cast<double>().matrix();
    return (1.0 - z.array().tanh().square()).matrix();
}

} // namespace

MlpParams mlp_init(const std::vector<int>& layer_sizes, Activation activation,
                   std::uint64_t seed) {
    if (layer_sizes.size() < 2)
        throw std::invalid_argument("mlp_init: need at least input and output layers");
    for (int s : layer_sizes)
        if (s < 1)
            throw std::invalid_argument("mlp_init: zero-width layer");
    MlpParams params;
    params.layer_sizes = layer_sizes;
    params.activation = activation;
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        const int fan_in = layer_sizes[l];
        const int fan_out = layer_sizes[l + 1];
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        Eigen::MatrixXd w(fan_out, fan_in);
        for (int r = 0; r < fan_out; ++r)
            for (int c = 0; c < fan_in; ++c)
                w(r, c) = bound * (2.0 * rng.uniform() - 1.0);
        params.weights.push_back(std::move(w));
        params.biases.push_back(Eigen::VectorXd::Zero(fan_out));
    }
    return params;
}

Eigen::MatrixXd mlp_forward(const MlpParams& params, const Eigen::MatrixXd& x,
                            MlpCache* cache) {
    if (x.cols() != params.layer_sizes.front())
        throw std::invalid_argument("mlp_forward: input width mismatch");
    if (cache) {
        cache->inputs.clear();
        cache->pre_acts.clear();
    }
    Eigen::MatrixXd h = x;
    const std::size_t n_layers = params.weights.size();
    for (std::size_t l = 0; l < n_layers; ++l) {
        if (cache)
            cache->inputs.push_back(h);
        Eigen::MatrixXd z =
            (h * params.weights[l].transpose()).rowwise() + params.biases[l].transpose();
        if (cache)
            cache->pre_acts.push_back(z);
        h = (l + 1 < n_layers) ? apply_activation(z, params.activation) : std::move(z);
    }
    return h;
}

MlpGrads mlp_zero_grads(const MlpParams& params) {
    MlpGrads grads;
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        grads.weights.push_back(Eigen::MatrixXd::Zero(params.weights[l].rows(),
                                                      params.weights[l].cols()));
        grads.biases.push_back(Eigen::VectorXd::Zero(params.biases[l].size()));
    }
    return grads;
}

void mlp_accumulate(MlpGrads& into, const MlpGrads& grads) {
    for (std::size_t l = 0; l < into.weights.size(); ++l) {
        into.weights[l] += grads.weights[l];
        into.biases[l] += grads.biases[l];
    }
}

MlpGrads mlp_backward(const MlpParams& params, const MlpCache& cache,
                      const Eigen::MatrixXd& dL_doutput, Eigen::MatrixXd* dL_dinput) {
    const std::size_t n_layers = params.weights.size();
    if (cache.inputs.size() != n_layers || cache.pre_acts.size() != n_layers)
        throw std::invalid_argument("mlp_backward: cache does not match network");
    if (dL_doutput.cols() != params.layer_sizes.back())
        throw std::invalid_argument("mlp_backward: output gradient width mismatch");

    MlpGrads grads = mlp_zero_grads(params);
    Eigen::MatrixXd delta = dL_doutput; // gradient w.r.t. layer pre-activation
    for (std::size_t li = n_layers; li-- > 0;) {
        if (li + 1 < n_layers)
            delta = delta.cwiseProduct(activation_derivative(cache.pre_acts[li], params.activation));
        grads.weights[li] = delta.transpose() * cache.inputs[li];
        grads.biases[li] = delta.colwise().sum().transpose();
        if (li > 0 || dL_dinput)
            delta = (delta * params.weights[li]).eval();
    }
    if (dL_dinput)
        *dL_dinput = delta;
    return grads;
}

AdamState adam_init(const MlpParams& params, double lr) {
    AdamState state;
    state.lr = lr;
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        state.m_w.push_back(Eigen::MatrixXd::Zero(params.weights[l].rows(),
                                                  params.weights[l].cols()));
        state.v_w.push_back(Eigen::MatrixXd::Zero(params.weights[l].rows(),
                                                  params.weights[l].cols()));
        state.m_b.push_back(Eigen::VectorXd::Zero(params.biases[l].size()));
        state.v_b.push_back(Eigen::VectorXd::Zero(params.biases[l].size()));
    }
    return state;
}

void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state) {
    for (std::size_t l = 0; l < params.weights.size(); ++l)
        if (!grads.weights[l].allFinite() || !grads.biases[l].allFinite())
            throw std::runtime_error("adam_step: non-finite gradient");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        state.m_w[l] = state.beta1 * state.m_w[l] + (1.0 - state.beta1) * grads.weights[l];
        state.v_w[l] = state.beta2 * state.v_w[l] +
                       (1.0 - state.beta2) * grads.weights[l].cwiseProduct(grads.weights[l]);
        params.weights[l] -=
            (state.lr * (state.m_w[l] / bc1).array() /
             ((state.v_w[l] / bc2).array().sqrt() + state.eps))
                .matrix();

        state.m_b[l] = state.beta1 * state.m_b[l] + (1.0 - state.beta1) * grads.biases[l];
        state.v_b[l] = state.beta2 * state.v_b[l] +
                       (1.0 - state.beta2) * grads.biases[l].cwiseProduct(grads.biases[l]);
        params.biases[l] -=
            (state.lr * (state.m_b[l] / bc1).array() /
             ((state.v_b[l] / bc2).array().sqrt() + state.eps))
                .matrix();
    }
}

void save_mlp_json(const std::filesystem::path& path, const MlpParams& params) {
    nlohmann::json doc;
    doc["layer_sizes"] = params.layer_sizes;
    doc["activation"] = params.activation == Activation::relu ? "relu" : "tanh";
    nlohmann::json weights = nlohmann::json::array();
    nlohmann::json biases = nlohmann::json::array();
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        std::vector<double> w;
        w.reserve(static_cast<std::size_t>(params.weights[l].size()));
        for (Eigen::Index r = 0; r < params.weights[l].rows(); ++r)
            for (Eigen::Index c = 0; c < params.weights[l].cols(); ++c)
                w.push_back(params.weights[l](r, c));
        weights.push_back(w);
        biases.push_back(std::vector<double>(params.biases[l].data(),
                                             params.biases[l].data() + params.biases[l].size()));
    }
    doc["weights"] = std::move(weights);
    doc["biases"] = std::move(biases);
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("save_mlp_json: cannot open " + path.string());
    out << doc.dump(2) << "\n";
}

MlpParams load_mlp_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("load_mlp_json: cannot open " + path.string());
    nlohmann::json doc = nlohmann::json::parse(in);
    MlpParams params;
    params.layer_sizes = doc.at("layer_sizes").get<std::vector<int>>();
    const std::string act = doc.at("activation").get<std::string>();
    if (act == "relu")
        params.activation = Activation::relu;
    else if (act == "tanh")
        params.activation = Activation::tanh;
    else
        throw std::runtime_error("load_mlp_json: unknown activation " + act);
    const auto& weights = doc.at("weights");
    const auto& biases = doc.at("biases");
    for (std::size_t l = 0; l + 1 < params.layer_sizes.size(); ++l) {
        const int rows = params.layer_sizes[l + 1];
        const int cols = params.layer_sizes[l];
        const auto w = weights.at(l).get<std::vector<double>>();
        if (static_cast<int>(w.size()) != rows * cols)
            throw std::runtime_error("load_mlp_json: weight shape mismatch");
        Eigen::MatrixXd wm(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
                wm(r, c) = w[static_cast<std::size_t>(r) * cols + c];
        params.weights.push_back(std::move(wm));
        const auto b = biases.at(l).get<std::vector<double>>();
        if (static_cast<int>(b.size()) != rows)
            throw std::runtime_error("load_mlp_json: bias shape mismatch");
        params.biases.push_back(Eigen::Map<const Eigen::VectorXd>(b.data(), rows));
    }
    return params;
}

} // namespace spqr
