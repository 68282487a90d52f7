#pragma once

#include "twochan/model.hpp"
#include "twochan/scheduler.hpp"
#include "twochan/sim.hpp"

#include <json.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace twochan {

/// The config file does not exist or cannot be read.
class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The config file is readable but malformed.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Model plus the experiment settings carried in the same file.
struct Experiment {
  SystemModel model;
  Envelope envelope;
  std::size_t max_vertices = 4096;
  /// Jacobian point for the linear conditions.
  Vec linearization_point;
  CandidateSet candidates;
  SimConfig sim;  // mode and rates are set per command
  std::vector<std::uint64_t> seeds;
  /// Everything above with defaults filled in; written to manifests.
  nlohmann::json resolved;
};

/// Model file fields: `type` ("linear" | "kinematic5dof" | "custom_linear"),
/// `A`, `B`, `C1`, `C2` (row-major nested arrays, [] for a channel without
/// outputs), `Q_diag`, `R_diag`, `Ts`, `envelope` ([lo, hi] per state, null
/// for an unbounded side), optional `variant` ("corrected" | "duplicated_row"),
/// `max_vertices`, `linearization_point`, `candidates` ({"lambda1": [...],
/// "lambda2": [...]} or {"pairs": [[l1, l2], ...]}) and `simulation`
/// ({duration, seeds, x0, x_hat0, P0_diag, truth_noise_scale, delta}).
Experiment parse_experiment(const nlohmann::json &j);
Experiment load_experiment(const std::string &path);

/// Reads a JSON config (comments allowed). Throws MissingInput or ConfigError.
nlohmann::json read_config_json(const std::string &path);
/// parse_experiment with json and range errors reported as ConfigError
/// prefixed by `origin`.
Experiment parse_experiment_from(const nlohmann::json &j, const std::string &origin);

/// Parses "0,0.1,0.2" or "0:0.1:1" (inclusive range) into rate values.
std::vector<double> parse_rate_list(const std::string &spec);

/// Parses a grid spec "v1;v2" (two rate lists, Cartesian product) or a
/// single list used for both channels.
CandidateSet parse_grid_spec(const std::string &spec);

/// Vertices for the requested analysis: the polytope of the envelope, or
/// the single Jacobian at the linearization point.
std::vector<Mat> analysis_vertices(const Experiment &e, bool polytopic);

}  // namespace twochan
