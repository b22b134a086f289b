// Deterministic toy MDPs: a slippery gridworld with exact value iteration,
// behavior-policy dataset generation, and Monte-Carlo return estimation.
//
// Cells index as y * width + x. Actions: 0 up, 1 down, 2 left, 3 right.
// With probability p_slip the move slips to one of the two perpendicular
// directions (uniformly). Walls and the boundary block (the agent stays).
// Entering a goal cell yields reward 1 and ends the episode; every step
// additionally pays living_cost.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spqr/rng.hpp"

namespace spqr {

inline constexpr int grid_num_actions = 4;

struct GridWorld {
    int width = 5;
    int height = 5;
    std::vector<bool> walls;       // size width * height
    std::vector<bool> goals;       // size width * height
    std::vector<int> start_cells;  // uniform start distribution
    double p_slip = 0.1;
    double gamma = 0.99;
    double living_cost = 0.0;

    int n_cells() const { return width * height; }
    int cell(int x, int y) const { return y * width + x; }
};

// Open width x height grid with a single goal, uniform starts over the
// remaining cells.
GridWorld make_open_grid(int width, int height, int goal_x, int goal_y,
                         double p_slip, double gamma, double living_cost = 0.0);

// Rejects worlds whose goal is unreachable from some non-wall cell or whose
// slip/discount parameters fall outside their ranges.
void validate_world(const GridWorld& world);

// Normalized cell coordinates in [0, 1]^2.
Eigen::Vector2d cell_features(const GridWorld& world, int cell);

struct Transition {
    int s_cell = 0;
    int a = 0;
    double r = 0.0;
    int s2_cell = 0;
    bool done = false;
};

Transition grid_step(const GridWorld& world, int cell, int action, Rng& rng);

// Generic finite MDP view used by the value-iteration oracle.
struct TabularMdp {
    struct Outcome {
        double prob;
        int next;
        double reward;
        bool done;
    };
    int n_states = 0;
    int n_actions = 0;
    double gamma = 0.0;
    std::vector<std::vector<std::vector<Outcome>>> outcomes; // [state][action]
};

TabularMdp to_mdp(const GridWorld& world);

// Optimal Q table (n_states x n_actions); iterates the Bellman optimality
// operator until the sup-norm residual drops below tol.
Eigen::MatrixXd value_iteration(const TabularMdp& mdp, double tol = 1e-10,
                                int max_iterations = 1000000);

using GridPolicy = std::function<int(int cell, Rng& rng)>;

GridPolicy greedy_policy(const Eigen::MatrixXd& q_table);
GridPolicy epsilon_greedy_policy(const Eigen::MatrixXd& q_table, double epsilon);
GridPolicy uniform_random_policy();

enum class Provenance { random, medium, expert, replay };

std::string provenance_name(Provenance p);
Provenance provenance_from_name(const std::string& name);

struct Dataset {
    std::vector<Transition> transitions;
    Provenance provenance = Provenance::random;
    std::uint64_t seed = 0;
    double epsilon_used = 0.0; // behavior-policy epsilon (medium/expert)
};

Dataset generate_dataset(const GridWorld& world, Provenance provenance, int size,
                         std::uint64_t seed);

// Average discounted return over n_rollouts rollouts that start with the
// forced pair (cell, action) and then follow the policy. horizon <= 0 picks
// the shortest horizon with gamma^horizon < 1e-4.
double mc_return(const GridWorld& world, const GridPolicy& policy, int cell, int action,
                 int horizon, int n_rollouts, std::uint64_t seed);

// Average discounted return of a policy from the start distribution.
double policy_return(const GridWorld& world, const GridPolicy& policy, int episodes,
                     std::uint64_t seed, int horizon = 0);

// Optimal expected discounted return from the start distribution.
double optimal_start_value(const GridWorld& world, const Eigen::MatrixXd& q_star);

// JSON-lines dataset file: a metadata header line followed by one transition
// per line.
void save_dataset_jsonl(const std::filesystem::path& path, const GridWorld& world,
                        const Dataset& dataset);
Dataset load_dataset_jsonl(const std::filesystem::path& path, const GridWorld& world);

} // namespace spqr
