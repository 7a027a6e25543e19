// Batch experiment driver: takes a validated config, runs the named
// experiment, and writes CSV tables (and optional heatmaps) into the output
// directory. Artifacts are deterministic functions of the config and version;
// a failed run leaves its partial outputs plus a FAILED.txt marker and throws.

#ifndef CLOAKSIM_EXPERIMENTS_HPP
#define CLOAKSIM_EXPERIMENTS_HPP

#include <stdexcept>
#include <string>
#include <vector>

#include "cloaksim/config.hpp"

namespace cloaksim::experiments {

struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunArtifacts {
  std::vector<std::string> files;  // paths as written, in write order
};

RunArtifacts run(const config::Config& cfg);

}  // namespace cloaksim::experiments

#endif
