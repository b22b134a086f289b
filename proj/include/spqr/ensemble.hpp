// Ensemble Q-learning building blocks: pluggable Bellman-target and
// evaluation rules over N critics, entropy-regularized targets, the spectral
// independence regularizer wired into the critic update, a Gini-coefficient
// baseline regularizer, polyak-averaged target networks, and gain schedules.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spqr/gridworld.hpp"
#include "spqr/mlp.hpp"
#include "spqr/spqr_loss.hpp"

namespace spqr {

enum class TargetRule { mean, min, redq_min_subset };
enum class EvalRule { mean, min };
enum class BetaScheduleKind { constant, linear_decay, exp_decay };
enum class Regularizer { none, spqr, gini };

struct TrainConfig {
    double gamma = 0.99;
    double alpha = 0.2;           // entropy temperature
    int n_ensemble = 10;
    TargetRule target_rule = TargetRule::min;
    EvalRule eval_rule = EvalRule::min;
    int subset_m = 2;             // REDQ subset size
    double beta0 = 0.0;           // initial regularizer gain
    BetaScheduleKind beta_schedule = BetaScheduleKind::constant;
    long beta_end_step = 0;       // 0 -> total_steps
    double beta_decay_rate = 0.1; // exp schedule: gain at end_step is rate*beta0
    int utd = 1;                  // critic updates per environment step
    double tau = 0.995;           // polyak
    int batch_size = 64;
    double lr_q = 3e-4;
    double lr_pi = 3e-4;
    long total_steps = 5000;
    std::uint64_t seed = 0;
    Regularizer regularizer = Regularizer::none;
    bool offline = false;

    int hidden_width = 32;
    int hidden_depth = 2;
    Activation activation = Activation::relu;

    double rho = 0.5;       // soft semicircle weight
    double eps_soft = 0.01; // soft semicircle floor
    double sigma_floor = 1e-6;
    // Backward treatment of the Q-matrix normalization statistics inside the
    // critic update. The exact derivative (full) keeps the regularizer's
    // dose-response monotone in beta; freezing the statistics (stopped) drops
    // chain terms that happen to cancel common-mode pressure and makes strong
    // gains overshoot.
    NormalizationGrad spqr_norm_grad = NormalizationGrad::full;

    long eval_interval = 250;
    int eval_episodes = 50;
    int diag_samples = 256; // rows for spectral/correlation diagnostics
    int diag_bins = 5;      // bins for the independence tests
    int diag_rollouts = 16; // Monte-Carlo rollouts per bias estimate
    int diag_pairs = 16;    // (s, a) pairs scored for bias
};

struct QEnsemble {
    std::vector<MlpParams> members;
    std::vector<MlpParams> targets;
    std::vector<AdamState> adam;
};

QEnsemble make_ensemble(const TrainConfig& config);

struct SoftPolicy {
    MlpParams net;
    AdamState adam;
};

SoftPolicy make_policy(const TrainConfig& config);

// Bellman-target aggregation over the ensemble.
double ens_tar(TargetRule rule, const Eigen::VectorXd& qvals, int subset_m,
               std::uint64_t subset_seed);

// Evaluation-side aggregation (no subsets).
double ens_eval(EvalRule rule, const Eigen::VectorXd& qvals);

// y = r + (1 - done) * gamma * (tar_q - alpha * logpi_next)
double bellman_target(double r, bool done, double gamma, double alpha, double tar_q,
                      double logpi_next);

double beta_value(const TrainConfig& config, long step);

struct GiniOut {
    double loss = 0.0;
    Eigen::VectorXd grad;
};

// Normalized mean absolute difference; scale-invariant, zero at full
// collapse. Used with a negative gain to reward ensemble spread.
GiniOut gini_regularizer(const Eigen::VectorXd& qvals);

void polyak_update(QEnsemble& ensemble, double tau);

struct Batch {
    Eigen::MatrixXd states;      // |B| x 2
    Eigen::VectorXi actions;     // |B|
    Eigen::VectorXd rewards;     // |B|
    Eigen::MatrixXd next_states; // |B| x 2
    Eigen::VectorXd dones;       // |B| in {0, 1}
    std::vector<int> s_cells;
    std::vector<int> s2_cells;
};

Batch make_batch(const GridWorld& world, const std::vector<Transition>& transitions,
                 const std::vector<int>& indices);

// Member Q-values at explicit (state, action) rows: |B| x N.
Eigen::MatrixXd ensemble_q_at(const std::vector<MlpParams>& nets,
                              const Eigen::MatrixXd& states,
                              const Eigen::VectorXi& actions);

// Policy head: logits, probabilities and log-probabilities per batch row.
struct PolicyEval {
    Eigen::MatrixXd logits;
    Eigen::MatrixXd probs;
    Eigen::MatrixXd logp;
};

PolicyEval policy_eval(const MlpParams& net, const Eigen::MatrixXd& states);

struct CriticStats {
    double loss_q = 0.0;   // mean squared Bellman error over members
    double loss_reg = 0.0; // regularizer value (0 when inactive)
    double beta = 0.0;
};

// One critic step for every member against the shared target. update_seed
// derives the next-action, subset, and permutation streams.
CriticStats critic_update(QEnsemble& ensemble, const Batch& batch, const SoftPolicy& policy,
                          const TrainConfig& config, long step, std::uint64_t update_seed);

// Exact-expectation policy objective over the discrete action set;
// returns the loss before the step.
double actor_update(SoftPolicy& policy, const QEnsemble& ensemble, const Batch& batch,
                    const TrainConfig& config);

} // namespace spqr
