#include "spqr/gridworld.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace spqr {

namespace {

// dx, dy per action: up, down, left, right.
constexpr int kDx[grid_num_actions] = {0, 0, -1, 1};
constexpr int kDy[grid_num_actions] = {-1, 1, 0, 0};

// Perpendicular action pairs used by the slip model.
constexpr int kPerp[grid_num_actions][2] = {{2, 3}, {2, 3}, {0, 1}, {0, 1}};

int move_from(const GridWorld& world, int cell, int action) {
    const int x = cell % world.width;
    const int y = cell / world.width;
    const int nx = x + kDx[action];
    const int ny = y + kDy[action];
    if (nx < 0 || nx >= world.width || ny < 0 || ny >= world.height)
        return cell;
    const int next = world.cell(nx, ny);
    if (world.walls[next])
        return cell;
    return next;
}

int default_horizon(double gamma) {
    if (gamma <= 0.0)
        return 1;
    return static_cast<int>(std::ceil(std::log(1e-4) / std::log(gamma)));
}

} // namespace

GridWorld make_open_grid(int width, int height, int goal_x, int goal_y, double p_slip,
                         double gamma, double living_cost) {
    if (width < 1 || height < 1)
        throw std::invalid_argument("make_open_grid: degenerate size");
    GridWorld world;
    world.width = width;
    world.height = height;
    world.walls.assign(static_cast<std::size_t>(width) * height, false);
    world.goals.assign(static_cast<std::size_t>(width) * height, false);
    world.goals[world.cell(goal_x, goal_y)] = true;
    world.p_slip = p_slip;
    world.gamma = gamma;
    world.living_cost = living_cost;
    for (int c = 0; c < world.n_cells(); ++c)
        if (!world.walls[c] && !world.goals[c])
            world.start_cells.push_back(c);
    validate_world(world);
    return world;
}

void validate_world(const GridWorld& world) {
    if (!(world.p_slip >= 0.0 && world.p_slip < 1.0))
        throw std::invalid_argument("world: p_slip must lie in [0, 1)");
    if (!(world.gamma >= 0.0 && world.gamma < 1.0))
        throw std::invalid_argument("world: gamma must lie in [0, 1)");
    // Goal reachability from every non-wall cell (reverse breadth-first
    // search over deterministic moves).
    std::vector<bool> reachable(world.n_cells(), false);
    std::vector<int> queue;
    for (int c = 0; c < world.n_cells(); ++c)
        if (world.goals[c] && !world.walls[c]) {
            reachable[c] = true;
            queue.push_back(c);
        }
    if (queue.empty())
        throw std::invalid_argument("world: no goal cell");
    while (!queue.empty()) {
        const int cell = queue.back();
        queue.pop_back();
        for (int a = 0; a < grid_num_actions; ++a) {
            // A neighbor that can move into `cell` becomes reachable.
            const int x = cell % world.width, y = cell / world.width;
            const int nx = x - kDx[a], ny = y - kDy[a];
            if (nx < 0 || nx >= world.width || ny < 0 || ny >= world.height)
                continue;
            const int from = world.cell(nx, ny);
            if (world.walls[from] || reachable[from])
                continue;
            reachable[from] = true;
            queue.push_back(from);
        }
    }
    for (int c = 0; c < world.n_cells(); ++c)
        if (!world.walls[c] && !reachable[c])
            throw std::invalid_argument("world: goal unreachable from some cell");
}

Eigen::Vector2d cell_features(const GridWorld& world, int cell) {
    const int x = cell % world.width;
    const int y = cell / world.width;
    const double dx = world.width > 1 ? world.width - 1.0 : 1.0;
    const double dy = world.height > 1 ? world.height - 1.0 : 1.0;
    return {static_cast<double>(x) / dx, static_cast<double>(y) / dy};
}

Transition grid_step(const GridWorld& world, int cell, int action, Rng& rng) {
    if (action < 0 || action >= grid_num_actions)
        throw std::invalid_argument("grid_step: invalid action");
    int actual = action;
    if (world.p_slip > 0.0 && rng.uniform() < world.p_slip)
        actual = kPerp[action][rng.below(2)];
    const int next = move_from(world, cell, actual);
    Transition tr;
    tr.s_cell = cell;
    tr.a = action;
    tr.s2_cell = next;
    tr.done = world.goals[next];
    tr.r = world.living_cost + (tr.done ? 1.0 : 0.0);
    return tr;
}

TabularMdp to_mdp(const GridWorld& world) {
    TabularMdp mdp;
    mdp.n_states = world.n_cells();
    mdp.n_actions = grid_num_actions;
    mdp.gamma = world.gamma;
    mdp.outcomes.assign(mdp.n_states, {});
    for (int s = 0; s < mdp.n_states; ++s) {
        mdp.outcomes[s].assign(grid_num_actions, {});
        for (int a = 0; a < grid_num_actions; ++a) {
            auto& list = mdp.outcomes[s][a];
            const auto add = [&](double prob, int actual) {
                const int next = move_from(world, s, actual);
                const bool done = world.goals[next];
                const double reward = world.living_cost + (done ? 1.0 : 0.0);
                for (auto& o : list) {
                    if (o.next == next && o.done == done && o.reward == reward) {
                        o.prob += prob;
                        return;
                    }
                }
                list.push_back({prob, next, reward, done});
            };
            add(1.0 - world.p_slip, a);
            if (world.p_slip > 0.0) {
                add(world.p_slip / 2.0, kPerp[a][0]);
                add(world.p_slip / 2.0, kPerp[a][1]);
            }
        }
    }
    return mdp;
}

Eigen::MatrixXd value_iteration(const TabularMdp& mdp, double tol, int max_iterations) {
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_actions);
    const auto backup = [&](const Eigen::MatrixXd& cur) {
        Eigen::MatrixXd next(mdp.n_states, mdp.n_actions);
        for (int s = 0; s < mdp.n_states; ++s) {
            for (int a = 0; a < mdp.n_actions; ++a) {
                double v = 0.0;
                for (const auto& o : mdp.outcomes[s][a]) {
                    double cont = 0.0;
                    if (!o.done)
                        cont = mdp.gamma * cur.row(o.next).maxCoeff();
                    v += o.prob * (o.reward + cont);
                }
                next(s, a) = v;
            }
        }
        return next;
    };
    for (int it = 0; it < max_iterations; ++it) {
        Eigen::MatrixXd next = backup(q);
        const double delta = (next - q).cwiseAbs().maxCoeff();
        q = std::move(next);
        if (delta < tol * (1.0 - mdp.gamma))
            break;
        if (it + 1 == max_iterations)
            throw std::runtime_error("value_iteration: no convergence (mis-specified world?)");
    }
    // Residual check against the stated contract.
    const double residual = (backup(q) - q).cwiseAbs().maxCoeff();
    if (residual >= tol)
        throw std::runtime_error("value_iteration: residual above tolerance");
    return q;
}

GridPolicy greedy_policy(const Eigen::MatrixXd& q_table) {
    return [q_table](int cell, Rng&) {
        Eigen::Index best = 0;
        q_table.row(cell).maxCoeff(&best);
        return static_cast<int>(best);
    };
}

GridPolicy epsilon_greedy_policy(const Eigen::MatrixXd& q_table, double epsilon) {
    return [q_table, epsilon](int cell, Rng& rng) {
        if (rng.uniform() < epsilon)
            return static_cast<int>(rng.below(grid_num_actions));
        Eigen::Index best = 0;
        q_table.row(cell).maxCoeff(&best);
        return static_cast<int>(best);
    };
}

GridPolicy uniform_random_policy() {
    return [](int, Rng& rng) { return static_cast<int>(rng.below(grid_num_actions)); };
}

std::string provenance_name(Provenance p) {
    switch (p) {
    case Provenance::random: return "random";
    case Provenance::medium: return "medium";
    case Provenance::expert: return "expert";
    case Provenance::replay: return "replay";
    }
    return "random";
}

Provenance provenance_from_name(const std::string& name) {
    if (name == "random") return Provenance::random;
    if (name == "medium") return Provenance::medium;
    if (name == "expert") return Provenance::expert;
    if (name == "replay") return Provenance::replay;
    throw std::invalid_argument("unknown provenance: " + name);
}

namespace {

int sample_start(const GridWorld& world, Rng& rng) {
    return world.start_cells[rng.below(world.start_cells.size())];
}

// Rolls transitions following `policy` until `size` transitions are collected.
void collect(const GridWorld& world, const GridPolicy& policy, int size, Rng& rng,
             std::vector<Transition>& out) {
    const int horizon = default_horizon(world.gamma);
    int cell = sample_start(world, rng);
    int steps_in_episode = 0;
    while (static_cast<int>(out.size()) < size) {
        const int a = policy(cell, rng);
        const Transition tr = grid_step(world, cell, a, rng);
        out.push_back(tr);
        ++steps_in_episode;
        if (tr.done || steps_in_episode >= horizon) {
            cell = sample_start(world, rng);
            steps_in_episode = 0;
        } else {
            cell = tr.s2_cell;
        }
    }
}

} // namespace

double policy_return(const GridWorld& world, const GridPolicy& policy, int episodes,
                     std::uint64_t seed, int horizon) {
    if (horizon <= 0)
        horizon = default_horizon(world.gamma);
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(e)));
        int cell = sample_start(world, rng);
        double discount = 1.0;
        for (int t = 0; t < horizon; ++t) {
            const int a = policy(cell, rng);
            const Transition tr = grid_step(world, cell, a, rng);
            total += discount * tr.r;
            discount *= world.gamma;
            if (tr.done)
                break;
            cell = tr.s2_cell;
        }
    }
    return total / episodes;
}

double optimal_start_value(const GridWorld& world, const Eigen::MatrixXd& q_star) {
    double v = 0.0;
    for (int cell : world.start_cells)
        v += q_star.row(cell).maxCoeff();
    return v / static_cast<double>(world.start_cells.size());
}

Dataset generate_dataset(const GridWorld& world, Provenance provenance, int size,
                         std::uint64_t seed) {
    if (size < 1)
        throw std::invalid_argument("generate_dataset: size must be >= 1");
    Dataset ds;
    ds.provenance = provenance;
    ds.seed = seed;
    Rng rng(derive_seed(seed, 0xDA7A));

    if (provenance == Provenance::random) {
        collect(world, uniform_random_policy(), size, rng, ds.transitions);
        return ds;
    }

    const Eigen::MatrixXd q_star = value_iteration(to_mdp(world));
    if (provenance == Provenance::expert) {
        ds.epsilon_used = 0.05;
        collect(world, epsilon_greedy_policy(q_star, ds.epsilon_used), size, rng,
                ds.transitions);
        return ds;
    }

    if (provenance == Provenance::medium) {
        // Tune epsilon so the behavior return lands near a third of the
        // expert's; the chosen value is recorded in the metadata.
        const double expert_return =
            policy_return(world, epsilon_greedy_policy(q_star, 0.05), 200,
                          derive_seed(seed, 0xE0));
        const double target = expert_return / 3.0;
        double best_eps = 0.5, best_gap = 1e300;
        for (double eps = 0.05; eps <= 0.951; eps += 0.05) {
            const double ret = policy_return(world, epsilon_greedy_policy(q_star, eps), 200,
                                             derive_seed(seed, 0xE1));
            const double gap = std::abs(ret - target);
            if (gap < best_gap) {
                best_gap = gap;
                best_eps = eps;
            }
        }
        ds.epsilon_used = best_eps;
        collect(world, epsilon_greedy_policy(q_star, best_eps), size, rng, ds.transitions);
        return ds;
    }

    // replay: concatenation over an epsilon ladder from 1.0 down to 0.05.
    const std::vector<double> ladder = {1.0, 0.75, 0.5, 0.25, 0.1, 0.05};
    const int chunk = std::max(1, size / static_cast<int>(ladder.size()));
    for (std::size_t k = 0; k < ladder.size(); ++k) {
        const int want = (k + 1 == ladder.size())
                             ? size - static_cast<int>(ds.transitions.size())
                             : chunk;
        if (want <= 0)
            break;
        std::vector<Transition> part;
        collect(world, epsilon_greedy_policy(q_star, ladder[k]), want, rng, part);
        ds.transitions.insert(ds.transitions.end(), part.begin(), part.end());
    }
    ds.epsilon_used = ladder.back();
    return ds;
}

double mc_return(const GridWorld& world, const GridPolicy& policy, int cell, int action,
                 int horizon, int n_rollouts, std::uint64_t seed) {
    if (horizon <= 0)
        horizon = default_horizon(world.gamma);
    double total = 0.0;
    for (int k = 0; k < n_rollouts; ++k) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k), 0x3C));
        double discount = 1.0;
        double ret = 0.0;
        int c = cell;
        int a = action;
        for (int t = 0; t < horizon; ++t) {
            const Transition tr = grid_step(world, c, a, rng);
            ret += discount * tr.r;
            discount *= world.gamma;
            if (tr.done)
                break;
            c = tr.s2_cell;
            a = policy(c, rng);
        }
        total += ret;
    }
    return total / n_rollouts;
}

void save_dataset_jsonl(const std::filesystem::path& path, const GridWorld& world,
                        const Dataset& dataset) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("save_dataset_jsonl: cannot open " + path.string());
    nlohmann::json header;
    header["provenance"] = provenance_name(dataset.provenance);
    header["seed"] = dataset.seed;
    header["epsilon_used"] = dataset.epsilon_used;
    header["size"] = dataset.transitions.size();
    out << header.dump() << "\n";
    for (const Transition& tr : dataset.transitions) {
        const Eigen::Vector2d s = cell_features(world, tr.s_cell);
        const Eigen::Vector2d s2 = cell_features(world, tr.s2_cell);
        nlohmann::json line;
        line["s"] = {s[0], s[1]};
        line["a"] = tr.a;
        line["r"] = tr.r;
        line["s2"] = {s2[0], s2[1]};
        line["done"] = tr.done;
        line["s_cell"] = tr.s_cell;
        line["s2_cell"] = tr.s2_cell;
        out << line.dump() << "\n";
    }
}

Dataset load_dataset_jsonl(const std::filesystem::path& path, const GridWorld&) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("load_dataset_jsonl: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error("load_dataset_jsonl: missing header");
    nlohmann::json header = nlohmann::json::parse(line);
    Dataset ds;
    ds.provenance = provenance_from_name(header.at("provenance").get<std::string>());
    ds.seed = header.at("seed").get<std::uint64_t>();
    ds.epsilon_used = header.at("epsilon_used").get<double>();
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        nlohmann::json doc = nlohmann::json::parse(line);
        Transition tr;
        tr.s_cell = doc.at("s_cell").get<int>();
        tr.a = doc.at("a").get<int>();
        tr.r = doc.at("r").get<double>();
        tr.s2_cell = doc.at("s2_cell").get<int>();
        tr.done = doc.at("done").get<bool>();
        ds.transitions.push_back(tr);
    }
    if (ds.transitions.empty())
        throw std::runtime_error("load_dataset_jsonl: empty dataset");
    return ds;
}

} // namespace spqr
