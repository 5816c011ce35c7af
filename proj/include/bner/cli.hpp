#pragma once

// Command-line front end: fit / predict / mse on CSV data, and the two
// simulation studies.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace bner {

enum class Command { fit, predict, mse, sim1, sim2 };

Command command_from_name(const std::string& name);
std::string command_name(Command c);

struct RunConfig {
    Command command = Command::fit;

    std::string data;        // unit-level sample CSV
    std::string aux;         // domain_id,pattern_id,N_dt
    std::string patterns;    // pattern_id,x1_*,x2_*
    std::string population;  // alternative to aux+patterns: population covariate listing
    std::string transform = "identity";
    std::vector<std::string> targets{"mean1", "mean2", "mean_of_ratios", "ratio_of_means"};
    int L = 200;
    int B = 400;
    std::uint64_t seed = 1;
    unsigned threads = 0;  // 0: available parallelism
    bool no_refit = false;
    std::string out = ".";

    // Simulation settings.
    int D = 50;
    int N_d = 200;
    std::vector<int> n_d{10, 25, 50, 100};
    int I = 200;
    std::vector<int> B_grid{50, 100, 200, 300, 400};
    /// Iterations of the Simulation 1 run that provides the reference MSEs for sim2.
    int reference_I = 200;
    bool quiet = false;

    /// Throws std::invalid_argument when the configuration cannot be run.
    void validate() const;
};

/// Parses `prog <command> [flags]`. A `--config FILE` of key=value lines may
/// set any flag; explicit flags take precedence. Returns false (after printing
/// to `out`) when only help was requested. Throws on invalid input.
bool parse_command_line(int argc, const char* const* argv, RunConfig& config, std::ostream& out);

/// Executes the command and writes its output files into config.out.
/// Progress messages go to `log`. Throws on failure.
void run(const RunConfig& config, std::ostream& log);

/// Machine-readable error object for an exception.
std::string error_json(const std::exception& e);

/// parse + run; on failure prints error_json to `err` and returns non-zero.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bner
