#include "spqr/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "spqr/io.hpp"
#include "spqr/rng.hpp"

namespace spqr {

namespace {

constexpr std::uint64_t kTagEnv = 0xE7;
constexpr std::uint64_t kTagBatch = 0xBA;
constexpr std::uint64_t kTagUpdate = 0x0D;
constexpr std::uint64_t kTagActor = 0xAC;
constexpr std::uint64_t kTagEval = 0xE1a;
constexpr std::uint64_t kTagDiag = 0xD1a;

std::vector<int> sample_indices(int count, int upper, Rng& rng) {
    std::vector<int> idx(count);
    for (int i = 0; i < count; ++i)
        idx[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(upper)));
    return idx;
}

RunMetrics evaluate(const TrainConfig& config, const GridWorld& world,
                    const std::vector<Transition>& source, const QEnsemble& ensemble,
                    const SoftPolicy& policy, long step, const CriticStats& last_stats) {
    RunMetrics row;
    row.step = step;
    row.beta = beta_value(config, step);
    row.loss_q = last_stats.loss_q;
    row.loss_spqr = last_stats.loss_reg;

    const GridPolicy greedy = greedy_from_policy(policy.net, world);
    row.avg_return = policy_return(world, greedy, config.eval_episodes,
                                   derive_seed(config.seed, kTagEval, step));

    // Diagnostic rows: (s, a) pairs sampled from the data source.
    Rng diag_rng(derive_seed(config.seed, kTagDiag, step));
    const int rows = std::min<int>(config.diag_samples, static_cast<int>(source.size()));
    if (rows < 2)
        return row;
    Eigen::MatrixXd states(rows, 2);
    Eigen::VectorXi actions(rows);
    std::vector<std::pair<int, int>> pairs(rows);
    for (int j = 0; j < rows; ++j) {
        const Transition& tr = source[diag_rng.below(source.size())];
        states.row(j) = cell_features(world, tr.s_cell).transpose();
        actions[j] = tr.a;
        pairs[j] = {tr.s_cell, tr.a};
    }
    const Eigen::MatrixXd q_table = ensemble_q_at(ensemble.members, states, actions);

    Eigen::VectorXd evals(rows);
    Eigen::VectorXd stds(rows);
    for (int j = 0; j < rows; ++j) {
        const Eigen::VectorXd qrow = q_table.row(j).transpose();
        evals[j] = ens_eval(config.eval_rule, qrow);
        const double mean = qrow.mean();
        stds[j] = std::sqrt((qrow.array() - mean).square().sum() / qrow.size());
    }
    row.q_mean = evals.mean();
    row.q_std = stds.mean();

    if (ensemble.members.size() >= 3) {
        const SpikeHistogram hist =
            spike_histogram_values(q_table, config.rho, config.eps_soft, 16, 0);
        row.spike_count = static_cast<double>(hist.total_spikes);
    }

    const int n = static_cast<int>(ensemble.members.size());
    int accepted = 0, tested = 0;
    for (int i = 0; i < n; ++i) {
        const std::vector<double> xi(q_table.col(i).data(), q_table.col(i).data() + rows);
        for (int j = i + 1; j < n; ++j) {
            const std::vector<double> xj(q_table.col(j).data(), q_table.col(j).data() + rows);
            const TestReport report = chi2_independence(xi, xj, config.diag_bins, 0.025);
            ++tested;
            if (report.accept)
                ++accepted;
        }
    }
    row.chi2_accept_ratio = tested > 0 ? static_cast<double>(accepted) / tested : 0.0;

    const PearsonResult corr = pearson_matrix(q_table);
    row.mean_abs_corr = std::isnan(corr.mean_abs_offdiag) ? 1.0 : corr.mean_abs_offdiag;

    if (config.diag_pairs > 0 && config.diag_rollouts > 0) {
        std::vector<std::pair<int, int>> bias_pairs;
        for (int j = 0; j < std::min<int>(config.diag_pairs, rows); ++j)
            bias_pairs.push_back(pairs[j]);
        const BiasStats bias =
            bias_stats(ensemble, world, greedy, config.eval_rule, bias_pairs,
                       config.diag_rollouts, derive_seed(config.seed, kTagDiag, step, 1));
        row.bias_mean = bias.mean_norm_bias;
        row.bias_std = bias.std_norm_bias;
    }
    return row;
}

} // namespace

GridPolicy greedy_from_policy(const MlpParams& net, const GridWorld& world) {
    return [net, &world](int cell, Rng&) {
        Eigen::MatrixXd state(1, 2);
        state.row(0) = cell_features(world, cell).transpose();
        const Eigen::MatrixXd logits = mlp_forward(net, state);
        Eigen::Index best = 0;
        logits.row(0).maxCoeff(&best);
        return static_cast<int>(best);
    };
}

TrainResult train(const TrainConfig& config, const GridWorld& world,
                  const Dataset* dataset_or_null) {
    if (config.offline && dataset_or_null == nullptr)
        throw std::invalid_argument("train: offline mode requires a dataset");
    if (config.utd < 1)
        throw std::invalid_argument("train: utd must be >= 1");

    TrainResult result;
    result.ensemble = make_ensemble(config);
    result.policy = make_policy(config);

    std::vector<Transition> buffer;
    const std::vector<Transition>* source = &buffer;
    if (config.offline)
        source = &dataset_or_null->transitions;

    Rng env_rng(derive_seed(config.seed, kTagEnv));
    int cell = world.start_cells.empty() ? 0 : world.start_cells[env_rng.below(world.start_cells.size())];

    CriticStats last_stats;
    for (long step = 0; step < config.total_steps; ++step) {
        if (!config.offline) {
            // Act with the current stochastic policy and append to the buffer.
            Eigen::MatrixXd state(1, 2);
            state.row(0) = cell_features(world, cell).transpose();
            const PolicyEval pi = policy_eval(result.policy.net, state);
            const double u = env_rng.uniform();
            double acc = 0.0;
            int action = grid_num_actions - 1;
            for (int a = 0; a < grid_num_actions; ++a) {
                acc += pi.probs(0, a);
                if (u < acc) {
                    action = a;
                    break;
                }
            }
            const Transition tr = grid_step(world, cell, action, env_rng);
            buffer.push_back(tr);
            cell = tr.done ? world.start_cells[env_rng.below(world.start_cells.size())]
                           : tr.s2_cell;
        }

        if (static_cast<int>(source->size()) >= config.batch_size) {
            try {
                for (int g = 0; g < config.utd; ++g) {
                    Rng batch_rng(derive_seed(config.seed, kTagBatch, step, g));
                    const Batch batch = make_batch(
                        world, *source,
                        sample_indices(config.batch_size, static_cast<int>(source->size()),
                                       batch_rng));
                    last_stats = critic_update(result.ensemble, batch, result.policy, config,
                                               step, derive_seed(config.seed, kTagUpdate, step, g));
                    polyak_update(result.ensemble, config.tau);
                }
                Rng actor_rng(derive_seed(config.seed, kTagActor, step));
                const Batch actor_batch = make_batch(
                    world, *source,
                    sample_indices(config.batch_size, static_cast<int>(source->size()),
                                   actor_rng));
                const double loss_pi =
                    actor_update(result.policy, result.ensemble, actor_batch, config);
                if (!std::isfinite(loss_pi) || !std::isfinite(last_stats.loss_q))
                    throw std::runtime_error("non-finite loss");
            } catch (const std::runtime_error& err) {
                throw NumericalFailure(err.what(), step);
            }
        }

        const bool at_interval =
            config.eval_interval > 0 && (step + 1) % config.eval_interval == 0;
        if (at_interval || step + 1 == config.total_steps) {
            if (!source->empty())
                result.metrics.push_back(evaluate(config, world, *source, result.ensemble,
                                                  result.policy, step + 1, last_stats));
        }
    }
    return result;
}

std::string metrics_csv(const std::vector<RunMetrics>& metrics) {
    std::ostringstream out;
    out << "step,avg_return,q_mean,q_std,bias_mean,bias_std,spike_count,"
           "chi2_accept_ratio,mean_abs_corr,loss_q,loss_spqr,beta\n";
    for (const RunMetrics& m : metrics) {
        out << m.step << "," << format_g17(m.avg_return) << "," << format_g17(m.q_mean) << ","
            << format_g17(m.q_std) << "," << format_g17(m.bias_mean) << ","
            << format_g17(m.bias_std) << "," << format_g17(m.spike_count) << ","
            << format_g17(m.chi2_accept_ratio) << "," << format_g17(m.mean_abs_corr) << ","
            << format_g17(m.loss_q) << "," << format_g17(m.loss_spqr) << ","
            << format_g17(m.beta) << "\n";
    }
    return out.str();
}

void save_checkpoints(const std::filesystem::path& dir, const QEnsemble& ensemble,
                      const SoftPolicy& policy) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["n_ensemble"] = ensemble.members.size();
    std::vector<std::string> member_files, target_files;
    for (std::size_t i = 0; i < ensemble.members.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "member_%02zu.json", i);
        save_mlp_json(dir / name, ensemble.members[i]);
        member_files.push_back(name);
        std::snprintf(name, sizeof(name), "target_%02zu.json", i);
        save_mlp_json(dir / name, ensemble.targets[i]);
        target_files.push_back(name);
    }
    save_mlp_json(dir / "policy.json", policy.net);
    manifest["members"] = member_files;
    manifest["targets"] = target_files;
    manifest["policy"] = "policy.json";
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

LoadedCheckpoints load_checkpoints(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in)
        throw std::runtime_error("load_checkpoints: cannot open " + manifest_path.string());
    nlohmann::json manifest = nlohmann::json::parse(in);
    const std::filesystem::path dir = manifest_path.parent_path();
    LoadedCheckpoints out;
    for (const auto& name : manifest.at("members"))
        out.ensemble.members.push_back(load_mlp_json(dir / name.get<std::string>()));
    for (const auto& name : manifest.at("targets"))
        out.ensemble.targets.push_back(load_mlp_json(dir / name.get<std::string>()));
    out.policy.net = load_mlp_json(dir / manifest.at("policy").get<std::string>());
    if (out.ensemble.members.size() != out.ensemble.targets.size())
        throw std::runtime_error("load_checkpoints: member/target count mismatch");
    for (std::size_t i = 1; i < out.ensemble.members.size(); ++i)
        if (out.ensemble.members[i].layer_sizes != out.ensemble.members[0].layer_sizes)
            throw std::runtime_error("load_checkpoints: member shape mismatch");
    return out;
}

} // namespace spqr
