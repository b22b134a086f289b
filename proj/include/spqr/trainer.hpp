// Online/offline ensemble Q-learning loop: environment interaction (or a
// fixed dataset), utd critic updates plus one policy update per step, polyak
// target tracking, scheduled regularizer gain, and periodic evaluation rows.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spqr/diagnostics.hpp"
#include "spqr/ensemble.hpp"
#include "spqr/gridworld.hpp"

namespace spqr {

struct RunMetrics {
    long step = 0;
    double avg_return = 0.0;
    double q_mean = 0.0;
    double q_std = 0.0;
    double bias_mean = 0.0;
    double bias_std = 0.0;
    double spike_count = 0.0;
    double chi2_accept_ratio = 0.0;
    double mean_abs_corr = 0.0;
    double loss_q = 0.0;
    double loss_spqr = 0.0;
    double beta = 0.0;
};

// Raised when a non-finite loss or gradient aborts training.
struct NumericalFailure : std::runtime_error {
    NumericalFailure(std::string what, long at_step)
        : std::runtime_error(std::move(what)), step(at_step) {}
    long step = 0;
};

struct TrainResult {
    std::vector<RunMetrics> metrics;
    QEnsemble ensemble;
    SoftPolicy policy;
};

TrainResult train(const TrainConfig& config, const GridWorld& world,
                  const Dataset* dataset_or_null);

// `step,avg_return,q_mean,q_std,bias_mean,bias_std,spike_count,
//  chi2_accept_ratio,mean_abs_corr,loss_q,loss_spqr,beta`
std::string metrics_csv(const std::vector<RunMetrics>& metrics);

// Writes member/target/policy checkpoints plus a manifest listing them.
void save_checkpoints(const std::filesystem::path& dir, const QEnsemble& ensemble,
                      const SoftPolicy& policy);

struct LoadedCheckpoints {
    QEnsemble ensemble;
    SoftPolicy policy;
};

LoadedCheckpoints load_checkpoints(const std::filesystem::path& manifest_path);

// Greedy action selection from the policy head.
GridPolicy greedy_from_policy(const MlpParams& net, const GridWorld& world);

} // namespace spqr
