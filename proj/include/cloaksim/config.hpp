// Experiment configuration: a single JSON file with an in-file schema version.
// Parsing is strict -- unknown keys, malformed values, and geometry that fails
// device validation are all rejected with messages naming the file, the line,
// and the offending key. A parsed config carries the FNV-1a hash of its
// canonical (sorted-key, minified) form, stamped into every artifact so
// outputs can be traced back to the exact inputs.

#ifndef CLOAKSIM_CONFIG_HPP
#define CLOAKSIM_CONFIG_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cloaksim/media.hpp"
#include "cloaksim/spectral.hpp"

namespace cloaksim::config {

inline constexpr const char* kVersion = "0.1.0";

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Experiment {
  cloak_demo,
  delta_sweep,
  resonance_map,
  three_spheres,
  proof_pipeline,
  oracle_compare,
};
const char* experiment_name(Experiment e);

struct GridSize {
  int n_r = 128;
  int n_theta = 64;
};

struct HeatmapSpec {
  int pixels = 0;  // 0 disables heatmap output
  bool log_scale = true;
};

struct Config {
  int schema = 1;
  Experiment experiment = Experiment::cloak_demo;
  std::string output_dir;
  media::CloakSpec cloak;       // delta holds the first sweep entry
  spectral::RingSource source;  // empty for three-spheres
  std::vector<double> deltas;   // strictly positive, strictly descending
  int n_max = 16;
  GridSize grid;
  HeatmapSpec heatmap;
  unsigned seed = 7;
  int trials = 32;
  double alpha = 2.0 / 3.0;

  std::string canonical;   // sorted-key minified JSON actually validated
  std::uint64_t hash = 0;  // FNV-1a of canonical
};

// origin names the input in error messages (a path, or "config" for strings).
Config parse(const std::string& text, const std::string& origin = "config");
Config load(const std::string& path);

// A complete, runnable example exercising every key; parses cleanly.
std::string schema_text();

}  // namespace cloaksim::config

#endif
