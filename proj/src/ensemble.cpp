#include "spqr/ensemble.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "spqr/rng.hpp"
#include "spqr/spqr_loss.hpp"

namespace spqr {

namespace {
constexpr std::uint64_t kTagMember = 0x4d454d;
constexpr std::uint64_t kTagPolicy = 0x504f4c;
constexpr std::uint64_t kTagNextAction = 0xa1;
constexpr std::uint64_t kTagSubset = 0xa2;
constexpr std::uint64_t kTagPerm = 0xa3;
} // namespace

QEnsemble make_ensemble(const TrainConfig& config) {
    // N = 1 is the single-critic sanity path; the spectral regularizer needs
    // at least a 2x2 matrix and therefore N >= 3.
    if (config.n_ensemble < 1)
        throw std::invalid_argument("make_ensemble: need at least 1 member");
    if (config.regularizer == Regularizer::spqr && config.n_ensemble < 3)
        throw std::invalid_argument("make_ensemble: spectral regularizer needs N >= 3");
    std::vector<int> sizes{2};
    for (int l = 0; l < config.hidden_depth; ++l)
        sizes.push_back(config.hidden_width);
    sizes.push_back(grid_num_actions);

    QEnsemble ens;
    for (int i = 0; i < config.n_ensemble; ++i) {
        MlpParams net = mlp_init(sizes, config.activation,
                                 derive_seed(config.seed, kTagMember, i));
        ens.targets.push_back(net);
        ens.adam.push_back(adam_init(net, config.lr_q));
        ens.members.push_back(std::move(net));
    }
    return ens;
}

SoftPolicy make_policy(const TrainConfig& config) {
    std::vector<int> sizes{2};
    for (int l = 0; l < config.hidden_depth; ++l)
        sizes.push_back(config.hidden_width);
    sizes.push_back(grid_num_actions);
    SoftPolicy policy;
    policy.net = mlp_init(sizes, config.activation, derive_seed(config.seed, kTagPolicy));
    policy.adam = adam_init(policy.net, config.lr_pi);
    return policy;
}

double ens_tar(TargetRule rule, const Eigen::VectorXd& qvals, int subset_m,
               std::uint64_t subset_seed) {
    const int n = static_cast<int>(qvals.size());
    if (n < 1)
        throw std::invalid_argument("ens_tar: empty ensemble");
    switch (rule) {
    case TargetRule::mean:
        return qvals.mean();
    case TargetRule::min:
        return qvals.minCoeff();
    case TargetRule::redq_min_subset: {
        if (subset_m < 1 || subset_m > n)
            throw std::invalid_argument("ens_tar: invalid subset size");
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(subset_seed);
        // Partial Fisher-Yates: the first subset_m slots form the subset.
        for (int i = 0; i < subset_m; ++i) {
            const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
            std::swap(idx[i], idx[j]);
        }
        double best = qvals[idx[0]];
        for (int i = 1; i < subset_m; ++i)
            best = std::min(best, qvals[idx[i]]);
        return best;
    }
    }
    throw std::invalid_argument("ens_tar: unknown rule");
}

double ens_eval(EvalRule rule, const Eigen::VectorXd& qvals) {
    if (qvals.size() < 1)
        throw std::invalid_argument("ens_eval: empty ensemble");
    return rule == EvalRule::mean ? qvals.mean() : qvals.minCoeff();
}

double bellman_target(double r, bool done, double gamma, double alpha, double tar_q,
                      double logpi_next) {
    return r + (done ? 0.0 : 1.0) * gamma * (tar_q - alpha * logpi_next);
}

double beta_value(const TrainConfig& config, long step) {
    const long end = config.beta_end_step > 0 ? config.beta_end_step : config.total_steps;
    switch (config.beta_schedule) {
    case BetaScheduleKind::constant:
        return config.beta0;
    case BetaScheduleKind::linear_decay: {
        if (end <= 0)
            return config.beta0;
        const double frac = static_cast<double>(step) / static_cast<double>(end);
        return config.beta0 * std::max(0.0, 1.0 - frac);
    }
    case BetaScheduleKind::exp_decay: {
        if (end <= 0)
            return config.beta0;
        const double frac = static_cast<double>(step) / static_cast<double>(end);
        return config.beta0 * std::pow(config.beta_decay_rate, frac);
    }
    }
    return config.beta0;
}

GiniOut gini_regularizer(const Eigen::VectorXd& qvals) {
    const int n = static_cast<int>(qvals.size());
    if (n < 2)
        throw std::invalid_argument("gini_regularizer: need at least 2 values");
    const double denom_stat = qvals.cwiseAbs().mean() + 1e-8;
    const double scale = 2.0 * n * n * denom_stat;
    double dispersion = 0.0;
    GiniOut out;
    out.grad = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double diff = qvals[i] - qvals[j];
            dispersion += std::abs(diff);
            if (diff > 0.0)
                out.grad[i] += 2.0; // i > j contributions from both (i,j) and (j,i)
            else if (diff < 0.0)
                out.grad[i] -= 2.0;
        }
    }
    out.loss = dispersion / scale;
    out.grad /= scale;
    return out;
}

void polyak_update(QEnsemble& ensemble, double tau) {
    if (!(tau > 0.0) || tau > 1.0)
        throw std::invalid_argument("polyak_update: tau must lie in (0, 1]");
    for (std::size_t i = 0; i < ensemble.members.size(); ++i) {
        for (std::size_t l = 0; l < ensemble.members[i].weights.size(); ++l) {
            ensemble.targets[i].weights[l] =
                tau * ensemble.targets[i].weights[l] + (1.0 - tau) * ensemble.members[i].weights[l];
            ensemble.targets[i].biases[l] =
                tau * ensemble.targets[i].biases[l] + (1.0 - tau) * ensemble.members[i].biases[l];
        }
    }
}

Batch make_batch(const GridWorld& world, const std::vector<Transition>& transitions,
                 const std::vector<int>& indices) {
    const int b = static_cast<int>(indices.size());
    Batch batch;
    batch.states.resize(b, 2);
    batch.actions.resize(b);
    batch.rewards.resize(b);
    batch.next_states.resize(b, 2);
    batch.dones.resize(b);
    batch.s_cells.resize(b);
    batch.s2_cells.resize(b);
    for (int j = 0; j < b; ++j) {
        const Transition& tr = transitions[indices[j]];
        batch.states.row(j) = cell_features(world, tr.s_cell).transpose();
        batch.actions[j] = tr.a;
        batch.rewards[j] = tr.r;
        batch.next_states.row(j) = cell_features(world, tr.s2_cell).transpose();
        batch.dones[j] = tr.done ? 1.0 : 0.0;
        batch.s_cells[j] = tr.s_cell;
        batch.s2_cells[j] = tr.s2_cell;
    }
    return batch;
}

Eigen::MatrixXd ensemble_q_at(const std::vector<MlpParams>& nets,
                              const Eigen::MatrixXd& states,
                              const Eigen::VectorXi& actions) {
    const Eigen::Index b = states.rows();
    Eigen::MatrixXd out(b, static_cast<Eigen::Index>(nets.size()));
    for (std::size_t i = 0; i < nets.size(); ++i) {
        const Eigen::MatrixXd all = mlp_forward(nets[i], states);
        for (Eigen::Index j = 0; j < b; ++j)
            out(j, static_cast<Eigen::Index>(i)) = all(j, actions[j]);
    }
    return out;
}

PolicyEval policy_eval(const MlpParams& net, const Eigen::MatrixXd& states) {
    PolicyEval ev;
    ev.logits = mlp_forward(net, states);
    const Eigen::VectorXd row_max = ev.logits.rowwise().maxCoeff();
    const Eigen::MatrixXd shifted = ev.logits.colwise() - row_max;
    const Eigen::VectorXd log_z = shifted.array().exp().rowwise().sum().log().matrix();
    ev.logp = shifted.colwise() - log_z;
    ev.probs = ev.logp.array().exp().matrix();
    return ev;
}

CriticStats critic_update(QEnsemble& ensemble, const Batch& batch, const SoftPolicy& policy,
                          const TrainConfig& config, long step, std::uint64_t update_seed) {
    const int b = static_cast<int>(batch.states.rows());
    const int n = static_cast<int>(ensemble.members.size());
    if (b < 1)
        throw std::invalid_argument("critic_update: empty batch");

    // Next actions a' ~ pi(.|s') shared by the Bellman target and the
    // regularizer input.
    const PolicyEval next_pi = policy_eval(policy.net, batch.next_states);
    Eigen::VectorXi next_actions(b);
    Eigen::VectorXd logpi_next(b);
    for (int j = 0; j < b; ++j) {
        Rng rng(derive_seed(update_seed, kTagNextAction, j));
        const double u = rng.uniform();
        double acc = 0.0;
        int pick = grid_num_actions - 1;
        for (int a = 0; a < grid_num_actions; ++a) {
            acc += next_pi.probs(j, a);
            if (u < acc) {
                pick = a;
                break;
            }
        }
        next_actions[j] = pick;
        logpi_next[j] = next_pi.logp(j, pick);
    }

    // Shared Bellman target from the target networks.
    const Eigen::MatrixXd tar_q = ensemble_q_at(ensemble.targets, batch.next_states, next_actions);
    Eigen::VectorXd y(b);
    for (int j = 0; j < b; ++j) {
        const double agg = ens_tar(config.target_rule, tar_q.row(j).transpose(), config.subset_m,
                                   derive_seed(update_seed, kTagSubset, j));
        y[j] = bellman_target(batch.rewards[j], batch.dones[j] > 0.5, config.gamma, config.alpha,
                              agg, logpi_next[j]);
    }

    CriticStats stats;
    stats.beta = beta_value(config, step);
    const bool reg_active = config.regularizer != Regularizer::none && stats.beta != 0.0;

    // Regularizer over current-network values at (s', a').
    Eigen::MatrixXd reg_grads;
    if (reg_active) {
        const Eigen::MatrixXd qmat = ensemble_q_at(ensemble.members, batch.next_states, next_actions);
        if (config.regularizer == Regularizer::spqr) {
            const SpqrBatchOut reg = spqr_loss_batch(qmat, config.rho, config.eps_soft,
                                                     derive_seed(update_seed, kTagPerm),
                                                     config.sigma_floor,
                                                     config.spqr_norm_grad);
            stats.loss_reg = reg.loss;
            reg_grads = reg.grads;
        } else {
            reg_grads = Eigen::MatrixXd::Zero(b, n);
            const double inv_b = 1.0 / static_cast<double>(b);
            for (int j = 0; j < b; ++j) {
                const GiniOut g = gini_regularizer(qmat.row(j).transpose());
                stats.loss_reg += inv_b * g.loss;
                reg_grads.row(j) = inv_b * g.grad.transpose();
            }
        }
    }

    const double inv_b = 1.0 / static_cast<double>(b);
    for (int i = 0; i < n; ++i) {
        MlpCache cache;
        const Eigen::MatrixXd q_all = mlp_forward(ensemble.members[i], batch.states, &cache);
        Eigen::MatrixXd dout = Eigen::MatrixXd::Zero(b, grid_num_actions);
        double mse = 0.0;
        for (int j = 0; j < b; ++j) {
            const double diff = q_all(j, batch.actions[j]) - y[j];
            mse += inv_b * diff * diff;
            dout(j, batch.actions[j]) = 2.0 * inv_b * diff;
        }
        stats.loss_q += mse / static_cast<double>(n);
        MlpGrads grads = mlp_backward(ensemble.members[i], cache, dout);

        if (reg_active) {
            MlpCache reg_cache;
            const Eigen::MatrixXd q_next =
                mlp_forward(ensemble.members[i], batch.next_states, &reg_cache);
            (void)q_next;
            Eigen::MatrixXd dout_reg = Eigen::MatrixXd::Zero(b, grid_num_actions);
            for (int j = 0; j < b; ++j)
                dout_reg(j, next_actions[j]) = stats.beta * reg_grads(j, i);
            mlp_accumulate(grads, mlp_backward(ensemble.members[i], reg_cache, dout_reg));
        }

        adam_step(ensemble.members[i], grads, ensemble.adam[i]);
    }
    return stats;
}

double actor_update(SoftPolicy& policy, const QEnsemble& ensemble, const Batch& batch,
                    const TrainConfig& config) {
    const int b = static_cast<int>(batch.states.rows());
    const int n = static_cast<int>(ensemble.members.size());

    // Ensemble evaluation for every action at once.
    std::vector<Eigen::MatrixXd> member_q;
    member_q.reserve(n);
    for (int i = 0; i < n; ++i)
        member_q.push_back(mlp_forward(ensemble.members[i], batch.states));
    Eigen::MatrixXd evals(b, grid_num_actions);
    Eigen::VectorXd stack(n);
    for (int j = 0; j < b; ++j) {
        for (int a = 0; a < grid_num_actions; ++a) {
            for (int i = 0; i < n; ++i)
                stack[i] = member_q[i](j, a);
            evals(j, a) = ens_eval(config.eval_rule, stack);
        }
    }

    MlpCache cache;
    const Eigen::MatrixXd logits = mlp_forward(policy.net, batch.states, &cache);
    (void)logits;
    const PolicyEval pi = policy_eval(policy.net, batch.states);

    // loss = (1/B) sum_j sum_a pi(a|s_j) (alpha log pi(a|s_j) - E(s_j, a));
    // the exact logit gradient is pi_b (f_b - sum_a pi_a f_a) with
    // f = alpha log pi - E.
    const double inv_b = 1.0 / static_cast<double>(b);
    double loss = 0.0;
    Eigen::MatrixXd dlogits(b, grid_num_actions);
    for (int j = 0; j < b; ++j) {
        double mean_f = 0.0;
        for (int a = 0; a < grid_num_actions; ++a) {
            const double f = config.alpha * pi.logp(j, a) - evals(j, a);
            mean_f += pi.probs(j, a) * f;
        }
        loss += inv_b * mean_f;
        for (int a = 0; a < grid_num_actions; ++a) {
            const double f = config.alpha * pi.logp(j, a) - evals(j, a);
            dlogits(j, a) = inv_b * pi.probs(j, a) * (f - mean_f);
        }
    }

    MlpGrads grads = mlp_backward(policy.net, cache, dlogits);
    adam_step(policy.net, grads, policy.adam);
    return loss;
}

} // namespace spqr
