// Command-line experiment runner. Subcommands:
//   rmt-demo   spectral density of a scaled GOE sample vs the semicircle law
//   detect     weak-detection error curve of the KL test over a psi grid
//   train      online/offline ensemble Q-learning on a gridworld
//   analyze    diagnostics bundle over saved checkpoints
//   gradcheck  finite-difference validation of every analytic gradient
//
// Every command takes --config/--seed/--out, echoes its configuration and a
// tool version string into the output directory, and writes byte-identical
// primary CSV outputs for identical config + seed.
// Exit codes: 0 success, 1 config error, 2 numerical failure, 3 gradcheck failure.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "spqr/diagnostics.hpp"
#include "spqr/ensemble.hpp"
#include "spqr/gradcheck.hpp"
#include "spqr/gridworld.hpp"
#include "spqr/io.hpp"
#include "spqr/rng.hpp"
#include "spqr/spectral_core.hpp"
#include "spqr/spqr_loss.hpp"
#include "spqr/sym_eigen.hpp"
#include "spqr/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "spqr 0.1.0";

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check_keys(const json& doc, const std::set<std::string>& allowed,
                const std::string& context) {
    if (!doc.is_object())
        throw ConfigError(context + ": expected a JSON object");
    for (const auto& item : doc.items())
        if (!allowed.count(item.key()))
            throw ConfigError(context + ": unknown key '" + item.key() + "'");
}

json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file: " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& err) {
        throw ConfigError(std::string("config parse error: ") + err.what());
    }
}

void prepare_out_dir(const fs::path& out_dir, const std::optional<std::string>& config_path,
                     const json& effective) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir))
        throw ConfigError("cannot create output directory: " + out_dir.string());
    if (config_path) {
        std::ifstream in(*config_path, std::ios::binary);
        std::stringstream buf;
        buf << in.rdbuf();
        spqr::write_file_atomic(out_dir / "config.json", buf.str());
    } else {
        spqr::write_file_atomic(out_dir / "config.json", effective.dump(2) + "\n");
    }
    json info;
    info["tool_version"] = kToolVersion;
    spqr::write_file_atomic(out_dir / "run_info.json", info.dump(2) + "\n");
}

template <typename T>
T get_or(const json& doc, const std::string& key, T fallback) {
    if (doc.contains(key))
        return doc.at(key).get<T>();
    return fallback;
}

spqr::GridWorld world_from_json(const json& doc, double gamma) {
    check_keys(doc, {"width", "height", "goal", "p_slip", "living_cost", "walls"}, "world");
    const int width = get_or(doc, "width", 5);
    const int height = get_or(doc, "height", 5);
    std::pair<int, int> goal{width - 1, height - 1};
    if (doc.contains("goal")) {
        const auto g = doc.at("goal").get<std::vector<int>>();
        if (g.size() != 2)
            throw ConfigError("world.goal: expected [x, y]");
        goal = {g[0], g[1]};
    }
    spqr::GridWorld world =
        spqr::make_open_grid(width, height, goal.first, goal.second,
                             get_or(doc, "p_slip", 0.1), gamma, get_or(doc, "living_cost", 0.0));
    if (doc.contains("walls")) {
        for (const auto& w : doc.at("walls")) {
            const auto cell = w.get<std::vector<int>>();
            if (cell.size() != 2)
                throw ConfigError("world.walls: expected [x, y] entries");
            world.walls[world.cell(cell[0], cell[1])] = true;
        }
        world.start_cells.clear();
        for (int c = 0; c < world.n_cells(); ++c)
            if (!world.walls[c] && !world.goals[c])
                world.start_cells.push_back(c);
        spqr::validate_world(world);
    }
    return world;
}

spqr::TargetRule target_rule_from_name(const std::string& name) {
    if (name == "mean") return spqr::TargetRule::mean;
    if (name == "min") return spqr::TargetRule::min;
    if (name == "redq_min_subset") return spqr::TargetRule::redq_min_subset;
    throw ConfigError("unknown target_rule: " + name);
}

spqr::EvalRule eval_rule_from_name(const std::string& name) {
    if (name == "mean") return spqr::EvalRule::mean;
    if (name == "min") return spqr::EvalRule::min;
    throw ConfigError("unknown eval_rule: " + name);
}

spqr::BetaScheduleKind beta_schedule_from_name(const std::string& name) {
    if (name == "constant") return spqr::BetaScheduleKind::constant;
    if (name == "linear_decay") return spqr::BetaScheduleKind::linear_decay;
    if (name == "exp_decay") return spqr::BetaScheduleKind::exp_decay;
    throw ConfigError("unknown beta_schedule: " + name);
}

spqr::Regularizer regularizer_from_name(const std::string& name) {
    if (name == "none") return spqr::Regularizer::none;
    if (name == "spqr") return spqr::Regularizer::spqr;
    if (name == "gini") return spqr::Regularizer::gini;
    throw ConfigError("unknown regularizer: " + name);
}

spqr::TrainConfig train_config_from_json(const json& doc) {
    check_keys(doc,
               {"seed", "out_dir", "gamma", "alpha", "n_ensemble", "target_rule", "eval_rule",
                "subset_m", "beta0", "beta_schedule", "beta_end_step", "beta_decay_rate", "utd",
                "tau", "batch_size", "lr_q", "lr_pi", "total_steps", "regularizer", "offline",
                "hidden_width", "hidden_depth", "activation", "rho", "eps_soft", "sigma_floor",
                "eval_interval", "eval_episodes", "diag_samples", "diag_bins", "diag_rollouts",
                "diag_pairs", "world", "dataset"},
               "train config");
    spqr::TrainConfig cfg;
    cfg.gamma = get_or(doc, "gamma", cfg.gamma);
    cfg.alpha = get_or(doc, "alpha", cfg.alpha);
    cfg.n_ensemble = get_or(doc, "n_ensemble", cfg.n_ensemble);
    cfg.target_rule = target_rule_from_name(get_or<std::string>(doc, "target_rule", "min"));
    cfg.eval_rule = eval_rule_from_name(get_or<std::string>(doc, "eval_rule", "min"));
    cfg.subset_m = get_or(doc, "subset_m", cfg.subset_m);
    cfg.beta0 = get_or(doc, "beta0", cfg.beta0);
    cfg.beta_schedule =
        beta_schedule_from_name(get_or<std::string>(doc, "beta_schedule", "constant"));
    cfg.beta_end_step = get_or(doc, "beta_end_step", cfg.beta_end_step);
    cfg.beta_decay_rate = get_or(doc, "beta_decay_rate", cfg.beta_decay_rate);
    cfg.utd = get_or(doc, "utd", cfg.utd);
    cfg.tau = get_or(doc, "tau", cfg.tau);
    cfg.batch_size = get_or(doc, "batch_size", cfg.batch_size);
    cfg.lr_q = get_or(doc, "lr_q", cfg.lr_q);
    cfg.lr_pi = get_or(doc, "lr_pi", cfg.lr_pi);
    cfg.total_steps = get_or(doc, "total_steps", cfg.total_steps);
    cfg.seed = get_or(doc, "seed", cfg.seed);
    cfg.regularizer = regularizer_from_name(get_or<std::string>(doc, "regularizer", "none"));
    cfg.offline = get_or(doc, "offline", cfg.offline);
    cfg.hidden_width = get_or(doc, "hidden_width", cfg.hidden_width);
    cfg.hidden_depth = get_or(doc, "hidden_depth", cfg.hidden_depth);
    const std::string act = get_or<std::string>(doc, "activation", "relu");
    if (act == "relu")
        cfg.activation = spqr::Activation::relu;
    else if (act == "tanh")
        cfg.activation = spqr::Activation::tanh;
    else
        throw ConfigError("unknown activation: " + act);
    cfg.rho = get_or(doc, "rho", cfg.rho);
    cfg.eps_soft = get_or(doc, "eps_soft", cfg.eps_soft);
    cfg.sigma_floor = get_or(doc, "sigma_floor", cfg.sigma_floor);
    cfg.eval_interval = get_or(doc, "eval_interval", cfg.eval_interval);
    cfg.eval_episodes = get_or(doc, "eval_episodes", cfg.eval_episodes);
    cfg.diag_samples = get_or(doc, "diag_samples", cfg.diag_samples);
    cfg.diag_bins = get_or(doc, "diag_bins", cfg.diag_bins);
    cfg.diag_rollouts = get_or(doc, "diag_rollouts", cfg.diag_rollouts);
    cfg.diag_pairs = get_or(doc, "diag_pairs", cfg.diag_pairs);
    return cfg;
}

int cmd_rmt_demo(const json& doc, const std::optional<std::string>& config_path,
                 const fs::path& out_dir) {
    check_keys(doc, {"dim", "sigma", "seed", "out_dir"}, "rmt-demo config");
    const int dim = get_or(doc, "dim", 512);
    const double sigma = get_or(doc, "sigma", 1.0);
    const std::uint64_t seed = get_or<std::uint64_t>(doc, "seed", 0);
    if (dim < 1)
        throw ConfigError("rmt-demo: dim must be >= 1");
    if (!(sigma > 0.0))
        throw ConfigError("rmt-demo: sigma must be positive");
    prepare_out_dir(out_dir, config_path, doc);

    const spqr::SymMatrix x = spqr::sample_goe(dim, sigma, seed);
    const spqr::Spectrum spec = spqr::eigh(x.scaled(1.0 / std::sqrt(double(dim))));
    const spqr::SpectralDensity density = spqr::esd(spec);

    spqr::write_file_atomic(out_dir / "esd.csv",
                            spqr::csv_table({{"lambda", density.points}, {"mass", density.masses}}));

    Eigen::VectorXd curve_x(512), curve_y(512);
    for (int i = 0; i < 512; ++i) {
        curve_x[i] = -2.0 * sigma + 4.0 * sigma * i / 511.0;
        curve_y[i] = spqr::semicircle_pdf(curve_x[i], sigma);
    }
    spqr::write_file_atomic(out_dir / "semicircle.csv",
                            spqr::csv_table({{"lambda", curve_x}, {"density", curve_y}}));

    const double ks = spqr::ks_distance(spec, sigma);
    json ks_doc;
    ks_doc["ks_distance"] = ks;
    spqr::write_file_atomic(out_dir / "ks_distance.json", ks_doc.dump(2) + "\n");

    // Density-scaled histogram bars with the semicircle overlay.
    const int bins = std::max(8, std::min(64, dim / 8));
    const double lo = spec.eigenvalues.minCoeff();
    const double hi = spec.eigenvalues.maxCoeff() + 1e-12;
    const double width = (hi - lo) / bins;
    Eigen::VectorXd bin_left(bins), bin_right(bins), height = Eigen::VectorXd::Zero(bins);
    for (int k = 0; k < bins; ++k) {
        bin_left[k] = lo + k * width;
        bin_right[k] = bin_left[k] + width;
    }
    for (Eigen::Index i = 0; i < spec.eigenvalues.size(); ++i) {
        int k = static_cast<int>((spec.eigenvalues[i] - lo) / width);
        k = std::clamp(k, 0, bins - 1);
        height[k] += 1.0 / (dim * width);
    }
    spqr::write_file_atomic(out_dir / "esd.svg",
                            spqr::svg_histogram_with_curve(bin_left, bin_right, height, curve_x,
                                                           curve_y, "eigenvalue density"));
    std::cout << "rmt-demo: ks_distance=" << spqr::format_g17(ks) << "\n";
    return 0;
}

int cmd_detect(const json& doc, const std::optional<std::string>& config_path,
               const fs::path& out_dir) {
    check_keys(doc, {"seed", "psi_grid", "n_dim", "trials", "kl_threshold", "out_dir"},
               "detect config");
    Eigen::VectorXd psi_grid(5);
    psi_grid << 0.0, 0.3, 0.6, 0.8, 0.95;
    if (doc.contains("psi_grid")) {
        const auto grid = doc.at("psi_grid").get<std::vector<double>>();
        if (grid.empty())
            throw ConfigError("detect: psi_grid must be nonempty");
        psi_grid = Eigen::Map<const Eigen::VectorXd>(grid.data(), grid.size());
    }
    const int n_dim = get_or(doc, "n_dim", 64);
    const int trials = get_or(doc, "trials", 2000);
    const double threshold =
        get_or(doc, "kl_threshold", std::numeric_limits<double>::quiet_NaN());
    const std::uint64_t seed = get_or<std::uint64_t>(doc, "seed", 0);
    prepare_out_dir(out_dir, config_path, doc);

    const spqr::DetectionCurve curve =
        spqr::detection_experiment(psi_grid, n_dim, trials, threshold, seed);

    spqr::write_file_atomic(out_dir / "detection.csv",
                            spqr::csv_table({{"psi", curve.psi_grid},
                                             {"empirical_error", curve.empirical_error},
                                             {"erfc_reference", curve.erfc_reference}}));
    json summary;
    summary["kl_threshold"] = curve.kl_threshold;
    spqr::write_file_atomic(out_dir / "detection.json", summary.dump(2) + "\n");
    spqr::write_file_atomic(
        out_dir / "detection.svg",
        spqr::svg_line_plot({{curve.psi_grid, curve.empirical_error, "#1f77b4"},
                             {curve.psi_grid, curve.erfc_reference, "#d62728"}},
                            "detection error vs perturbation power"));
    std::cout << "detect: kl_threshold=" << spqr::format_g17(curve.kl_threshold) << "\n";
    return 0;
}

int cmd_train(const json& doc, const std::optional<std::string>& config_path,
              const fs::path& out_dir) {
    const spqr::TrainConfig cfg = train_config_from_json(doc);
    const spqr::GridWorld world =
        world_from_json(doc.contains("world") ? doc.at("world") : json::object(), cfg.gamma);

    std::optional<spqr::Dataset> dataset;
    if (doc.contains("dataset")) {
        const json& ds = doc.at("dataset");
        check_keys(ds, {"provenance", "size", "path"}, "dataset config");
        if (ds.contains("path")) {
            dataset = spqr::load_dataset_jsonl(ds.at("path").get<std::string>(), world);
        } else {
            dataset = spqr::generate_dataset(
                world, spqr::provenance_from_name(get_or<std::string>(ds, "provenance", "random")),
                get_or(ds, "size", 20000), spqr::derive_seed(cfg.seed, 0xD5));
        }
    }
    if (cfg.offline && !dataset)
        throw ConfigError("train: offline mode requires a dataset block");
    prepare_out_dir(out_dir, config_path, doc);

    try {
        const spqr::TrainResult result =
            spqr::train(cfg, world, dataset ? &*dataset : nullptr);
        spqr::write_file_atomic(out_dir / "metrics.csv", spqr::metrics_csv(result.metrics));
        spqr::save_checkpoints(out_dir / "checkpoints", result.ensemble, result.policy);
        std::cout << "train: wrote " << result.metrics.size() << " metric rows\n";
        return 0;
    } catch (const spqr::NumericalFailure& err) {
        json diag;
        diag["error"] = err.what();
        diag["step"] = err.step;
        spqr::write_file_atomic(out_dir / "diagnostic.json", diag.dump(2) + "\n");
        std::cerr << "train: numerical failure at step " << err.step << ": " << err.what()
                  << "\n";
        return 2;
    }
}

int cmd_analyze(const json& doc, const std::optional<std::string>& config_path,
                const fs::path& out_dir) {
    check_keys(doc,
               {"seed", "manifest", "world", "gamma", "eval_rule", "dataset_path",
                "diag_samples", "diag_bins", "uniform_bins", "diag_rollouts", "diag_pairs",
                "rho", "eps_soft", "out_dir"},
               "analyze config");
    if (!doc.contains("manifest"))
        throw ConfigError("analyze: missing 'manifest'");
    const double gamma = get_or(doc, "gamma", 0.99);
    const spqr::GridWorld world =
        world_from_json(doc.contains("world") ? doc.at("world") : json::object(), gamma);
    const std::uint64_t seed = get_or<std::uint64_t>(doc, "seed", 0);
    const spqr::EvalRule rule = eval_rule_from_name(get_or<std::string>(doc, "eval_rule", "min"));
    const int diag_samples = get_or(doc, "diag_samples", 256);
    const int diag_bins = get_or(doc, "diag_bins", 5);
    const int uniform_bins = get_or(doc, "uniform_bins", 2);
    const int diag_rollouts = get_or(doc, "diag_rollouts", 64);
    const int diag_pairs = get_or(doc, "diag_pairs", 16);
    const double rho = get_or(doc, "rho", 0.5);
    const double eps_soft = get_or(doc, "eps_soft", 0.01);

    const spqr::LoadedCheckpoints loaded =
        spqr::load_checkpoints(doc.at("manifest").get<std::string>());
    prepare_out_dir(out_dir, config_path, doc);

    // Evaluation rows: dataset samples when given, the full state-action grid
    // otherwise.
    std::vector<std::pair<int, int>> pairs;
    if (doc.contains("dataset_path")) {
        const spqr::Dataset ds =
            spqr::load_dataset_jsonl(doc.at("dataset_path").get<std::string>(), world);
        spqr::Rng rng(spqr::derive_seed(seed, 0xA11));
        const int rows = std::min<int>(diag_samples, static_cast<int>(ds.transitions.size()));
        for (int j = 0; j < rows; ++j) {
            const spqr::Transition& tr = ds.transitions[rng.below(ds.transitions.size())];
            pairs.emplace_back(tr.s_cell, tr.a);
        }
    } else {
        for (int c = 0; c < world.n_cells(); ++c) {
            if (world.walls[c])
                continue;
            for (int a = 0; a < spqr::grid_num_actions; ++a)
                pairs.emplace_back(c, a);
        }
    }

    const int rows = static_cast<int>(pairs.size());
    Eigen::MatrixXd states(rows, 2);
    Eigen::VectorXi actions(rows);
    for (int j = 0; j < rows; ++j) {
        states.row(j) = spqr::cell_features(world, pairs[j].first).transpose();
        actions[j] = pairs[j].second;
    }
    const Eigen::MatrixXd q_table =
        spqr::ensemble_q_at(loaded.ensemble.members, states, actions);
    const int n = static_cast<int>(q_table.cols());

    // Spike histogram over the ensemble rows.
    const spqr::SpikeHistogram hist =
        spqr::spike_histogram_values(q_table, rho, eps_soft, 16, 0);
    spqr::write_file_atomic(
        out_dir / "spike_histogram.csv",
        spqr::csv_table({{"bin_left", hist.bin_left},
                         {"bin_right", hist.bin_right},
                         {"count", hist.counts.cast<double>()}}));

    // Uniformity of member values per (s, a) row.
    long uniform_accept = 0;
    std::ostringstream uniform_csv;
    uniform_csv << "row,statistic,dof,p_value,alpha,accept\n";
    for (int j = 0; j < rows; ++j) {
        std::vector<double> sample(n);
        for (int i = 0; i < n; ++i)
            sample[i] = q_table(j, i);
        const spqr::TestReport rep = spqr::chi2_uniform(sample, uniform_bins, 0.025);
        uniform_csv << j << "," << spqr::format_g17(rep.statistic) << "," << rep.dof << ","
                    << spqr::format_g17(rep.p_value) << "," << spqr::format_g17(rep.alpha)
                    << "," << (rep.accept ? 1 : 0) << "\n";
        if (rep.accept)
            ++uniform_accept;
    }
    spqr::write_file_atomic(out_dir / "chi2_uniform.csv", uniform_csv.str());

    // Pairwise independence of members over the evaluation rows.
    long indep_accept = 0, indep_total = 0;
    std::ostringstream indep_csv;
    indep_csv << "member_i,member_j,statistic,dof,p_value,alpha,accept\n";
    for (int i = 0; i < n; ++i) {
        const std::vector<double> xi(q_table.col(i).data(), q_table.col(i).data() + rows);
        for (int j = i + 1; j < n; ++j) {
            const std::vector<double> xj(q_table.col(j).data(), q_table.col(j).data() + rows);
            const spqr::TestReport rep = spqr::chi2_independence(xi, xj, diag_bins, 0.025);
            indep_csv << i << "," << j << "," << spqr::format_g17(rep.statistic) << ","
                      << rep.dof << "," << spqr::format_g17(rep.p_value) << ","
                      << spqr::format_g17(rep.alpha) << "," << (rep.accept ? 1 : 0) << "\n";
            ++indep_total;
            if (rep.accept)
                ++indep_accept;
        }
    }
    spqr::write_file_atomic(out_dir / "chi2_independence.csv", indep_csv.str());

    const spqr::PearsonResult corr = spqr::pearson_matrix(q_table);
    std::ostringstream grid;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j)
            grid << (j ? "," : "") << spqr::format_g17(corr.corr(i, j));
        grid << "\n";
    }
    spqr::write_file_atomic(out_dir / "pearson.csv", grid.str());

    std::vector<std::pair<int, int>> bias_pairs;
    spqr::Rng bias_rng(spqr::derive_seed(seed, 0xB1a5));
    for (int k = 0; k < std::min<int>(diag_pairs, rows); ++k)
        bias_pairs.push_back(pairs[bias_rng.below(pairs.size())]);
    const spqr::GridPolicy greedy = spqr::greedy_from_policy(loaded.policy.net, world);
    const spqr::BiasStats bias =
        spqr::bias_stats(loaded.ensemble, world, greedy, rule, bias_pairs, diag_rollouts,
                         spqr::derive_seed(seed, 0xB1a5, 1));

    json bias_doc;
    bias_doc["mean_norm_bias"] = bias.mean_norm_bias;
    bias_doc["std_norm_bias"] = bias.std_norm_bias;
    bias_doc["mean_return"] = bias.mean_return;
    spqr::write_file_atomic(out_dir / "bias_stats.json", bias_doc.dump(2) + "\n");

    json summary;
    summary["rows"] = rows;
    summary["chi2_uniform_accept_ratio"] = static_cast<double>(uniform_accept) / rows;
    summary["chi2_independence_accept_ratio"] =
        indep_total > 0 ? static_cast<double>(indep_accept) / indep_total : 0.0;
    summary["total_spikes"] = hist.total_spikes;
    summary["mean_abs_corr"] = corr.mean_abs_offdiag;
    summary["mean_kl"] = hist.mean_kl;
    spqr::write_file_atomic(out_dir / "summary.json", summary.dump(2) + "\n");
    std::cout << "analyze: " << rows << " rows, accept(independence)="
              << summary["chi2_independence_accept_ratio"] << "\n";
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, const std::optional<std::string>& config_path,
                  const fs::path& out_dir) {
    json effective;
    effective["seed"] = seed;
    prepare_out_dir(out_dir, config_path, effective);
    const spqr::GradcheckReport report = spqr::run_gradcheck(seed);
    spqr::write_file_atomic(out_dir / "gradcheck.json", report.to_json());
    std::cout << report.to_json();
    return report.pass() ? 0 : 3;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"spectral independence regularization toolkit"};
    app.require_subcommand(1);

    std::string config_path_raw;
    std::string out_raw;
    std::uint64_t seed_flag = 0;
    bool seed_given = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path_raw, "JSON config file");
        cmd->add_option("--out", out_raw, "output directory");
        cmd->add_option("--seed", seed_flag, "seed override")->each([&](const std::string&) {
            seed_given = true;
        });
    };

    CLI::App* rmt = app.add_subcommand("rmt-demo", "scaled GOE spectrum vs the semicircle");
    int dim_flag = 512;
    double sigma_flag = 1.0;
    rmt->add_option("--dim", dim_flag, "matrix dimension");
    rmt->add_option("--sigma", sigma_flag, "entry scale");
    add_common(rmt);

    CLI::App* detect = app.add_subcommand("detect", "weak-detection error curve");
    add_common(detect);

    CLI::App* train = app.add_subcommand("train", "ensemble Q-learning run");
    add_common(train);

    CLI::App* analyze = app.add_subcommand("analyze", "diagnostics over checkpoints");
    add_common(analyze);

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient report");
    add_common(gradcheck);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        json doc = json::object();
        std::optional<std::string> config_path;
        if (!config_path_raw.empty()) {
            config_path = config_path_raw;
            doc = load_config_file(config_path_raw);
        }
        if (seed_given)
            doc["seed"] = seed_flag;

        fs::path out_dir;
        if (!out_raw.empty())
            out_dir = out_raw;
        else if (doc.contains("out_dir"))
            out_dir = doc.at("out_dir").get<std::string>();
        else
            out_dir = "out";

        if (rmt->parsed()) {
            if (rmt->count("--dim"))
                doc["dim"] = dim_flag;
            if (rmt->count("--sigma"))
                doc["sigma"] = sigma_flag;
            return cmd_rmt_demo(doc, config_path, out_dir);
        }
        if (detect->parsed())
            return cmd_detect(doc, config_path, out_dir);
        if (train->parsed())
            return cmd_train(doc, config_path, out_dir);
        if (analyze->parsed())
            return cmd_analyze(doc, config_path, out_dir);
        if (gradcheck->parsed())
            return cmd_gradcheck(get_or<std::uint64_t>(doc, "seed", 0), config_path, out_dir);
        return 1;
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 1;
    } catch (const json::exception& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 1;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    }
}
