#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "spqr/ensemble.hpp"
#include "spqr/gridworld.hpp"
#include "spqr/rng.hpp"
#include "spqr/trainer.hpp"

using namespace spqr;

namespace {

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.n_ensemble = 5;
    cfg.hidden_width = 16;
    cfg.hidden_depth = 2;
    cfg.batch_size = 32;
    cfg.total_steps = 200;
    cfg.eval_interval = 100;
    cfg.eval_episodes = 8;
    cfg.diag_samples = 32;
    cfg.diag_rollouts = 2;
    cfg.diag_pairs = 4;
    cfg.alpha = 0.05;
    return cfg;
}

} // namespace

TEST_CASE("ens_tar rules") {
    Eigen::VectorXd q(3);
    q << 1.0, 2.0, 0.5;
    CHECK(ens_tar(TargetRule::min, q, 0, 0) == 0.5);

    Eigen::VectorXd r(3);
    r << 1.0, 2.0, 3.0;
    CHECK(ens_tar(TargetRule::mean, r, 0, 0) == doctest::Approx(2.0));

    // Find a seed whose 2-subset is {0, 2}: min(5, 3) = 3.
    Eigen::VectorXd s(3);
    s << 5.0, 1.0, 3.0;
    bool found = false;
    for (std::uint64_t seed = 0; seed < 64 && !found; ++seed) {
        const double v = ens_tar(TargetRule::redq_min_subset, s, 2, seed);
        if (v == 3.0)
            found = true;
    }
    CHECK(found);

    // Full-size subset reduces to the plain minimum.
    CHECK(ens_tar(TargetRule::redq_min_subset, s, 3, 9) == 1.0);
    CHECK_THROWS(ens_tar(TargetRule::redq_min_subset, s, 4, 0));
    CHECK_THROWS(ens_tar(TargetRule::redq_min_subset, s, 0, 0));
}

TEST_CASE("ens_eval rules") {
    Eigen::VectorXd q(2);
    q << 0.0, 2.0;
    CHECK(ens_eval(EvalRule::mean, q) == doctest::Approx(1.0));
    CHECK(ens_eval(EvalRule::min, q) == 0.0);
    Eigen::VectorXd single(1);
    single << 0.7;
    CHECK(ens_eval(EvalRule::mean, single) == 0.7);
    CHECK(ens_eval(EvalRule::min, single) == 0.7);

    // min rule never exceeds the mean rule on the same values.
    Rng rng(4);
    for (int t = 0; t < 50; ++t) {
        Eigen::VectorXd v(6);
        for (int i = 0; i < 6; ++i)
            v[i] = rng.normal();
        CHECK(ens_eval(EvalRule::min, v) <= ens_eval(EvalRule::mean, v));
        CHECK(ens_tar(TargetRule::min, v, 0, 0) <= ens_tar(TargetRule::mean, v, 0, 0));
    }
}

TEST_CASE("bellman_target") {
    CHECK(bellman_target(0.7, true, 0.99, 0.2, 123.0, -1.0) == 0.7);
    CHECK(bellman_target(1.0, false, 0.99, 0.0, 10.0, -0.5) == doctest::Approx(10.9));
    CHECK(bellman_target(1.0, false, 0.99, 0.7, 10.0, 0.0) ==
          bellman_target(1.0, false, 0.99, 0.0, 10.0, 0.0));
}

TEST_CASE("beta schedules") {
    TrainConfig cfg;
    cfg.beta0 = 2.0;
    cfg.total_steps = 1000;

    cfg.beta_schedule = BetaScheduleKind::constant;
    CHECK(beta_value(cfg, 0) == 2.0);
    CHECK(beta_value(cfg, 999) == 2.0);

    cfg.beta_schedule = BetaScheduleKind::linear_decay;
    CHECK(beta_value(cfg, 0) == 2.0);
    CHECK(beta_value(cfg, 500) == doctest::Approx(1.0));
    CHECK(beta_value(cfg, 1000) == 0.0);
    CHECK(beta_value(cfg, 5000) == 0.0);

    cfg.beta_schedule = BetaScheduleKind::exp_decay;
    cfg.beta_decay_rate = 0.1;
    CHECK(beta_value(cfg, 0) == 2.0);
    CHECK(beta_value(cfg, 1000) == doctest::Approx(0.2));
}

TEST_CASE("gini_regularizer") {
    Eigen::VectorXd equal = Eigen::VectorXd::Constant(6, 3.0);
    const GiniOut zero = gini_regularizer(equal);
    CHECK(zero.loss == 0.0);
    CHECK(zero.grad.cwiseAbs().maxCoeff() == 0.0);

    Eigen::VectorXd pair(2);
    pair << 0.0, 1.0;
    CHECK(gini_regularizer(pair).loss == doctest::Approx(0.5).epsilon(1e-8));

    Rng rng(8);
    Eigen::VectorXd q(7);
    for (int i = 0; i < 7; ++i)
        q[i] = rng.normal();
    const double base = gini_regularizer(q).loss;
    CHECK(gini_regularizer((2.0 * q).eval()).loss == doctest::Approx(base).epsilon(1e-6));

    // The subgradient spreads the values apart when followed uphill (this is
    // the direction a negative gain descends).
    const GiniOut g = gini_regularizer(q);
    const Eigen::VectorXd stepped = q + 1e-4 * g.grad;
    const auto dispersion = [](const Eigen::VectorXd& v) {
        double sum = 0.0;
        for (int i = 0; i < v.size(); ++i)
            for (int j = 0; j < v.size(); ++j)
                sum += std::abs(v[i] - v[j]);
        return sum;
    };
    CHECK(dispersion(stepped) > dispersion(q));
}

TEST_CASE("polyak_update") {
    TrainConfig cfg = small_config();
    QEnsemble ens = make_ensemble(cfg);
    const Eigen::MatrixXd member0 = ens.members[0].weights[0];
    // Desynchronize targets.
    for (auto& w : ens.targets[0].weights)
        w.array() += 1.0;
    const Eigen::MatrixXd target_before = ens.targets[0].weights[0];

    polyak_update(ens, 1.0);
    CHECK(ens.targets[0].weights[0] == target_before);

    polyak_update(ens, 0.5);
    CHECK((ens.targets[0].weights[0] - 0.5 * (target_before + member0)).cwiseAbs().maxCoeff() <
          1e-15);

    QEnsemble copy = make_ensemble(cfg);
    for (auto& w : copy.targets[0].weights)
        w.array() += 1.0;
    const double initial_gap =
        (copy.targets[0].weights[0] - copy.members[0].weights[0]).cwiseAbs().maxCoeff();
    for (int t = 0; t < 1000; ++t)
        polyak_update(copy, 0.995);
    const double final_gap =
        (copy.targets[0].weights[0] - copy.members[0].weights[0]).cwiseAbs().maxCoeff();
    CHECK(final_gap / initial_gap == doctest::Approx(std::pow(0.995, 1000)).epsilon(1e-6));

    polyak_update(copy, 2.2e-16); // tau -> 0 limit: targets copy members
    CHECK((copy.targets[0].weights[0] - copy.members[0].weights[0]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS(polyak_update(copy, 0.0));
}

TEST_CASE("critic_update smoke test with the spectral regularizer") {
    const GridWorld world = make_open_grid(5, 5, 4, 4, 0.1, 0.99);
    TrainConfig cfg = small_config();
    cfg.n_ensemble = 10;
    cfg.regularizer = Regularizer::spqr;
    cfg.beta0 = 0.5;
    QEnsemble ens = make_ensemble(cfg);
    SoftPolicy policy = make_policy(cfg);

    const Dataset ds = generate_dataset(world, Provenance::random, 500, 3);
    std::vector<int> idx;
    for (int i = 0; i < cfg.batch_size; ++i)
        idx.push_back(i);
    const Batch batch = make_batch(world, ds.transitions, idx);

    const CriticStats stats = critic_update(ens, batch, policy, cfg, 0, 42);
    CHECK(std::isfinite(stats.loss_q));
    CHECK(std::isfinite(stats.loss_reg));
    CHECK(stats.beta == 0.5);
    CHECK(stats.loss_reg != 0.0);
}

TEST_CASE("collapsed ensembles hit the collapse path without disturbing the MSE") {
    const GridWorld world = make_open_grid(5, 5, 4, 4, 0.1, 0.99);
    TrainConfig cfg = small_config();
    cfg.regularizer = Regularizer::spqr;
    cfg.beta0 = 1.0;
    cfg.n_ensemble = 10;
    QEnsemble ens = make_ensemble(cfg);
    // Make every member identical: the per-row Q-matrix collapses.
    for (int i = 1; i < cfg.n_ensemble; ++i)
        ens.members[i] = ens.members[0];
    SoftPolicy policy = make_policy(cfg);

    const Dataset ds = generate_dataset(world, Provenance::random, 200, 5);
    std::vector<int> idx(cfg.batch_size);
    std::iota(idx.begin(), idx.end(), 0);
    const Batch batch = make_batch(world, ds.transitions, idx);

    const CriticStats stats = critic_update(ens, batch, policy, cfg, 0, 7);
    // D = 4 collapse value: log(pi / (D rho)).
    CHECK(stats.loss_reg ==
          doctest::Approx(std::log((1.0 / 4.0) * M_PI / 0.5)).epsilon(1e-12));
    CHECK(std::isfinite(stats.loss_q));
}

TEST_CASE("actor_update fitting oracles") {
    const GridWorld world = make_open_grid(3, 3, 2, 2, 0.0, 0.99);
    TrainConfig cfg = small_config();
    cfg.n_ensemble = 2;
    cfg.lr_pi = 0.05;

    // Fixed ensemble; states are the four corners of the feature square.
    QEnsemble ens = make_ensemble(cfg);
    Batch batch;
    batch.states.resize(4, 2);
    batch.states << 0, 0, 0, 1, 1, 0, 1, 1;
    batch.actions.setZero(4);
    batch.rewards.setZero(4);
    batch.next_states = batch.states;
    batch.dones.setZero(4);

    SUBCASE("vanishing temperature concentrates on the argmax") {
        cfg.alpha = 1e-4;
        // Fixed per-action ensemble values with clear gaps; action 2 is best.
        for (int i = 0; i < cfg.n_ensemble; ++i) {
            ens.members[i].weights.back().setZero();
            ens.members[i].biases.back() << 0.5, -0.5, 1.5, 0.0;
        }
        SoftPolicy policy = make_policy(cfg);
        for (int t = 0; t < 200; ++t)
            actor_update(policy, ens, batch, cfg);
        const PolicyEval pi = policy_eval(policy.net, batch.states);
        for (int j = 0; j < 4; ++j)
            CHECK(pi.probs(j, 2) > 0.9);
    }

    SUBCASE("uniform ensemble values keep the uniform policy stationary") {
        cfg.alpha = 0.3;
        // Zero out the last layer: all actions score identically.
        for (int i = 0; i < cfg.n_ensemble; ++i) {
            ens.members[i].weights.back().setZero();
            ens.members[i].biases.back().setZero();
        }
        SoftPolicy policy = make_policy(cfg);
        policy.net.weights.back().setZero();
        policy.net.biases.back().setZero(); // exactly uniform logits
        MlpCache cache;
        mlp_forward(policy.net, batch.states, &cache);
        // One update must not move the (uniform) policy: gradient ~ 0.
        SoftPolicy before = policy;
        actor_update(policy, ens, batch, cfg);
        const PolicyEval pi = policy_eval(policy.net, batch.states);
        for (int j = 0; j < 4; ++j)
            for (int a = 0; a < grid_num_actions; ++a)
                CHECK(pi.probs(j, a) == doctest::Approx(0.25).epsilon(1e-6));
    }

    SUBCASE("large temperature drives the policy to maximum entropy") {
        cfg.alpha = 100.0;
        SoftPolicy policy = make_policy(cfg);
        for (int t = 0; t < 500; ++t)
            actor_update(policy, ens, batch, cfg);
        const PolicyEval pi = policy_eval(policy.net, batch.states);
        for (int j = 0; j < 4; ++j) {
            double entropy = 0.0;
            for (int a = 0; a < grid_num_actions; ++a)
                entropy -= pi.probs(j, a) * pi.logp(j, a);
            CHECK(std::abs(entropy - std::log(4.0)) < 0.01);
        }
    }
}

TEST_CASE("policy softmax is normalized") {
    TrainConfig cfg = small_config();
    const SoftPolicy policy = make_policy(cfg);
    Rng rng(5);
    Eigen::MatrixXd states(6, 2);
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 2; ++c)
            states(r, c) = rng.uniform();
    const PolicyEval pi = policy_eval(policy.net, states);
    for (int j = 0; j < 6; ++j)
        CHECK(std::abs(pi.probs.row(j).sum() - 1.0) < 1e-9);
}

TEST_CASE("train with zero steps returns an empty series") {
    const GridWorld world = make_open_grid(5, 5, 4, 4, 0.1, 0.99);
    TrainConfig cfg = small_config();
    cfg.total_steps = 0;
    const TrainResult result = train(cfg, world, nullptr);
    CHECK(result.metrics.empty());
}

TEST_CASE("train is deterministic per seed") {
    const GridWorld world = make_open_grid(5, 5, 4, 4, 0.1, 0.99);
    TrainConfig cfg = small_config();
    cfg.total_steps = 150;
    cfg.eval_interval = 50;
    const TrainResult a = train(cfg, world, nullptr);
    const TrainResult b = train(cfg, world, nullptr);
    CHECK(metrics_csv(a.metrics) == metrics_csv(b.metrics));
    CHECK(!a.metrics.empty());
    for (std::size_t l = 0; l < a.policy.net.weights.size(); ++l)
        CHECK(a.policy.net.weights[l] == b.policy.net.weights[l]);

    TrainConfig other = cfg;
    other.seed = 99;
    const TrainResult c = train(other, world, nullptr);
    CHECK(metrics_csv(a.metrics) != metrics_csv(c.metrics));
}

TEST_CASE("zero regularizer gain reproduces the baseline bit-for-bit") {
    const GridWorld world = make_open_grid(5, 5, 4, 4, 0.1, 0.99);
    TrainConfig base = small_config();
    base.total_steps = 120;
    base.eval_interval = 40;
    base.regularizer = Regularizer::none;

    TrainConfig reg = base;
    reg.regularizer = Regularizer::spqr;
    reg.n_ensemble = base.n_ensemble;
    reg.beta0 = 0.0;

    const TrainResult a = train(base, world, nullptr);
    const TrainResult b = train(reg, world, nullptr);
    CHECK(metrics_csv(a.metrics) == metrics_csv(b.metrics));
    for (int i = 0; i < base.n_ensemble; ++i)
        for (std::size_t l = 0; l < a.ensemble.members[i].weights.size(); ++l)
            CHECK(a.ensemble.members[i].weights[l] == b.ensemble.members[i].weights[l]);
}

TEST_CASE("single-critic sanity path under mean rules") {
    const GridWorld world = make_open_grid(5, 5, 4, 4, 0.1, 0.95);
    TrainConfig cfg = small_config();
    cfg.gamma = 0.95;
    cfg.n_ensemble = 1;
    cfg.target_rule = TargetRule::mean;
    cfg.eval_rule = EvalRule::mean;
    cfg.total_steps = 150;
    cfg.eval_interval = 75;
    const TrainResult a = train(cfg, world, nullptr);
    const TrainResult b = train(cfg, world, nullptr);
    REQUIRE(!a.metrics.empty());
    for (const RunMetrics& m : a.metrics) {
        CHECK(std::isfinite(m.loss_q));
        CHECK(std::isfinite(m.q_mean));
    }
    CHECK(metrics_csv(a.metrics) == metrics_csv(b.metrics));

    // The spectral regularizer cannot run on ensembles below N = 3.
    TrainConfig bad = cfg;
    bad.n_ensemble = 2;
    bad.regularizer = Regularizer::spqr;
    CHECK_THROWS(make_ensemble(bad));
}

TEST_CASE("offline training requires a dataset") {
    const GridWorld world = make_open_grid(5, 5, 4, 4, 0.1, 0.99);
    TrainConfig cfg = small_config();
    cfg.offline = true;
    CHECK_THROWS(train(cfg, world, nullptr));
}

TEST_CASE("online training approaches the value-iteration optimum") {
    // alpha is kept small relative to the terminal reward: an entropy-bonus
    // stream above the goal value makes the soft-optimal policy avoid
    // terminating at all.
    const GridWorld world = make_open_grid(5, 5, 4, 4, 0.1, 0.95);
    const Eigen::MatrixXd q_star = value_iteration(to_mdp(world));
    const double optimum = optimal_start_value(world, q_star);

    TrainConfig cfg;
    cfg.gamma = 0.95;
    cfg.n_ensemble = 5;
    cfg.target_rule = TargetRule::min;
    cfg.eval_rule = EvalRule::min;
    cfg.hidden_width = 32;
    cfg.hidden_depth = 2;
    cfg.batch_size = 64;
    cfg.total_steps = 20000;
    cfg.eval_interval = 20000;
    cfg.eval_episodes = 400;
    cfg.diag_samples = 0; // skip spectral diagnostics in this long run
    cfg.diag_rollouts = 0;
    cfg.alpha = 0.01;
    cfg.lr_q = 1e-3;
    cfg.lr_pi = 1e-3;

    const TrainResult result = train(cfg, world, nullptr);
    REQUIRE(!result.metrics.empty());
    const double final_return = result.metrics.back().avg_return;
    CHECK(final_return >= 0.95 * optimum);
    CHECK(final_return <= 1.05 * optimum);
}
