// Command-line front end. Verbs:
//   run <config.json>       execute the configured experiment
//   validate <config.json>  parse and validate only
//   schema                  print a complete example config
// Exit codes: 0 ok, 2 config error, 3 solver error.
// CLOAKSIM_THREADS caps worker threads for solves and sweeps.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "cloaksim/config.hpp"
#include "cloaksim/experiments.hpp"

namespace {

int usage() {
  std::cerr << "usage: cloaksim run <config.json>\n"
               "       cloaksim validate <config.json>\n"
               "       cloaksim schema\n"
               "CLOAKSIM_THREADS caps worker threads.\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace cloaksim;
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    if (args.size() == 1 && args[0] == "schema") {
      std::cout << config::schema_text();
      return 0;
    }
    if (args.size() == 2 && (args[0] == "run" || args[0] == "validate")) {
      config::Config cfg = config::load(args[1]);
      char hash[24];
      std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(cfg.hash));
      if (args[0] == "validate") {
        std::cout << "ok: " << config::experiment_name(cfg.experiment) << " (schema "
                  << cfg.schema << ", config-hash " << hash << ")\n";
        return 0;
      }
      experiments::RunArtifacts art = experiments::run(cfg);
      for (const std::string& f : art.files) std::cout << "wrote " << f << "\n";
      return 0;
    }
    return usage();
  } catch (const config::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const experiments::SolverError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 3;
  }
}
